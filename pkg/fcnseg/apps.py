from django.apps import AppConfig


class FcnsegConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'fcnseg'
