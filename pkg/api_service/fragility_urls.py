from django.urls import path
from api_service import fragility_views

urlpatterns = [
    path('curve/', fragility_views.get_curve, name='fragility_curve'),
    path('predict/', fragility_views.predict, name='fragility_predict'),
]
