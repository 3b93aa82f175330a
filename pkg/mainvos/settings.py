"""
Django settings for the mainvos project.

The project is a command-line research tool, not a web service: there is no
URL routing, no WSGI entry point and no database. Django provides the
settings layer, the management-command CLI and the test runner.

Process-level values are read from the environment with python-decouple.
Experiment parameters live in JSON config files validated by
``segmentation.serializers``.
"""

import os
from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Django refuses to start without a secret key; nothing here is signed.
SECRET_KEY = config("MAIN_VOS_SECRET_KEY", default="mainvos-local-only-not-secret")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "django.contrib.auth",
    "rest_framework",
    "segmentation",
]

DATABASES = {}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

USE_TZ = True

TIME_ZONE = "UTC"


# Multi-attention video segmentation

MAIN_VOS = {
    "DATA_ROOT": Path(config("MAIN_VOS_DATA_ROOT", default=str(BASE_DIR / "data"))),
    "OUTPUT_ROOT": Path(config("MAIN_VOS_OUTPUT_ROOT", default=str(BASE_DIR / "runs"))),
    "WORKERS": config("MAIN_VOS_WORKERS", default=os.cpu_count() or 1, cast=int),
    "DEVICE": config("MAIN_VOS_DEVICE", default="cpu"),
    "CONFIG_SCHEMA_VERSION": 1,
}


# Logging

LOG_LEVEL = config("MAIN_VOS_LOG_LEVEL", default="INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "segmentation": {
            "handlers": ["console"],
            "level": LOG_LEVEL,
            "propagate": False,
        },
    },
}


# Django REST Framework is used for its serializers only
REST_FRAMEWORK = {
    "DEFAULT_AUTHENTICATION_CLASSES": [],
    "DEFAULT_PERMISSION_CLASSES": [],
    "UNAUTHENTICATED_USER": None,
}
