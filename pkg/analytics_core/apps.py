from django.apps import AppConfig


class AnalyticsCoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'analytics_core'
    verbose_name = 'Fragility and distance analytics'
