from django.apps import AppConfig


class DeeplimitConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'deeplimit'
    verbose_name = "Deep-limit experiments"
