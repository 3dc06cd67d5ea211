"""
App configuration for modality shift.
"""
from django.apps import AppConfig


class ModalityShiftConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.modality_shift'
    verbose_name = 'Modality-Shift Fusion'
