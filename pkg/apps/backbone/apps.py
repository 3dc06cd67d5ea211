"""
App configuration for backbone.
"""
from django.apps import AppConfig


class BackboneConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.backbone'
    verbose_name = 'Shared-Encoder U-Net'
