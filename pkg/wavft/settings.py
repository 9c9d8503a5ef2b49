"""
Django settings for the wavft project.

The project is driven from the command line (manage.py subcommands in
core/management/commands); the database only backs the run registry and
the admin site used to browse it.

Environment variables (or a .env file next to manage.py) configure the
pieces that change between machines: output root, log level, registry
database and default preset.
"""

from pathlib import Path

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env(
    WAVFT_DEBUG=(bool, True),
    WAVFT_LOG_LEVEL=(str, "INFO"),
    WAVFT_DEFAULT_PRESET=(str, "desk"),
)
environ.Env.read_env(BASE_DIR / ".env")

# SECURITY WARNING: the admin site is meant for local browsing of runs only.
SECRET_KEY = env("WAVFT_SECRET_KEY", default="wavft-local-only-admin-key")

DEBUG = env("WAVFT_DEBUG")

ALLOWED_HOSTS = ["localhost", "127.0.0.1"]


# Application definition

INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",
    "core.apps.CoreConfig",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

ROOT_URLCONF = "wavft.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.debug",
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "wavft.wsgi.application"


# Run registry database
# Defaults to a local sqlite file; WAVFT_DATABASE_URL switches it.

DATABASES = {
    "default": env.db(
        "WAVFT_DATABASE_URL",
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
    )
}
DATABASES["default"].setdefault("OPTIONS", {})
if DATABASES["default"]["ENGINE"].endswith("sqlite3"):
    DATABASES["default"]["OPTIONS"]["timeout"] = 30

STATIC_URL = "static/"

# Default primary key field type
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# WavFT

# Root directory for corpora, features, checkpoints and reports when a
# command is not given --out.
WAVFT_OUTPUT_ROOT = Path(env("WAVFT_OUTPUT_ROOT", default=str(BASE_DIR / "runs")))

WAVFT_DEFAULT_PRESET = env("WAVFT_DEFAULT_PRESET")


# Logging

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
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
        "core": {
            "handlers": ["console"],
            "level": env("WAVFT_LOG_LEVEL"),
            "propagate": False,
        },
    },
}
