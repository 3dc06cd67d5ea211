"""
App configuration for training runs and the command-line harness.
"""
from django.apps import AppConfig


class TrainingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.training'
    verbose_name = 'Training Harness'

    def ready(self):
        """Connect the progress signal receivers."""
        import apps.training.signals  # noqa: F401
