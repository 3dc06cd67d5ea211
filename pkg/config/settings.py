"""
Django settings for the MASM segmentation project.

This file contains all the settings for the project.
Environment variables are read through python-decouple.
"""

from pathlib import Path

from decouple import Choices, config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config(
    'SECRET_KEY',
    default='masm-desk-only-no-secrets-are-served-by-this-project'
)

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition
LOCAL_APPS = [
    'apps.core',
    'apps.backbone',
    'apps.modality_aware',
    'apps.modality_shift',
    'apps.metrics',
    'apps.volumes',
    'apps.training',
]

INSTALLED_APPS = LOCAL_APPS

# Nothing is persisted in a database; volumes, checkpoints and reports are files.
DATABASES = {}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

USE_TZ = True
TIME_ZONE = "UTC"


# MASM runtime settings
LOG_LEVEL_NAMES = {
    'error': 'ERROR',
    'warn': 'WARNING',
    'info': 'INFO',
    'debug': 'DEBUG',
}

MASM_LOG_LEVEL = config(
    'MASM_LOG_LEVEL',
    default='info',
    cast=Choices(list(LOG_LEVEL_NAMES))
)

MASM = {
    'LOG_LEVEL': MASM_LOG_LEVEL,
    'EVAL_WORKERS': config('MASM_EVAL_WORKERS', default=2, cast=int),
    'CHECKPOINT_EVERY': config('MASM_CHECKPOINT_EVERY', default=100, cast=int),
    'DESK_CONFIG': BASE_DIR / 'config' / 'desk.conf',
    'GRADCHECK_TOLERANCE': 1e-3,
    'GRADCHECK_STEP': 1e-6,
}


# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'apps': {
            'handlers': ['console'],
            'level': LOG_LEVEL_NAMES[MASM_LOG_LEVEL],
            'propagate': False,
        },
    },
}
