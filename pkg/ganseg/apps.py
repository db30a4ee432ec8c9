from django.apps import AppConfig


class GansegConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ganseg'
