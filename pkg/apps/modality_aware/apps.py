"""
App configuration for modality aware.
"""
from django.apps import AppConfig


class ModalityAwareConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.modality_aware'
    verbose_name = 'Modality-Aware Fusion'
