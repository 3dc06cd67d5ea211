"""
App configuration for volumes.
"""
from django.apps import AppConfig


class VolumesConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.volumes'
    verbose_name = 'Volumes and Formats'
