from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import ExperimentRunViewSet

router = DefaultRouter()
router.register(r'runs', ExperimentRunViewSet)

urlpatterns = [
    path('', include(router.urls)),
]
