"""
Core app configuration: the dense-tensor engine.
"""

from django.apps import AppConfig


class CoreConfig(AppConfig):
    """Configuration for the tensor engine application."""

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.core'
    verbose_name = 'Tensor Engine'

    def ready(self) -> None:
        """
        Register the built-in primitives when the app is ready.
        """
        import apps.core.primitives  # noqa: F401
