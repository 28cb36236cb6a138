from django.apps import AppConfig

class IncrementalAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'incremental_app'
    verbose_name = 'Clasificadores parciales incrementales'
