"""
URL configuration for evacanalytics project.

The pipeline itself runs through management commands; HTTP exposes the
fitted fragility curve for evaluation and evacuee prediction.
"""
from django.urls import path, include

urlpatterns = [
    path('api/fragility/', include('api_service.fragility_urls')),
]
