"""
Django settings for evacanalytics project.
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# ----------------------------------------------------------
# BASE SETUP
# ----------------------------------------------------------
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-evacanalytics-local-development-key')

DEBUG = os.environ.get('DJANGO_DEBUG', 'True').lower() == 'true'
ALLOWED_HOSTS = [h for h in os.environ.get('DJANGO_ALLOWED_HOSTS', '').split(',') if h]

# ----------------------------------------------------------
# APPLICATIONS
# ----------------------------------------------------------
INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'mobility',
    'analytics_core',
    'synth',
    'pipeline',
    'api_service',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'evacanalytics.urls'

WSGI_APPLICATION = 'evacanalytics.wsgi.application'

# ----------------------------------------------------------
# DATABASE (Django ORM)
# ----------------------------------------------------------
# The pipeline is file based; the database only backs Django's own machinery.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

# ----------------------------------------------------------
# REST FRAMEWORK
# ----------------------------------------------------------
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': ['rest_framework.renderers.JSONRenderer'],
    'DEFAULT_PARSER_CLASSES': ['rest_framework.parsers.JSONParser'],
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': ['rest_framework.permissions.AllowAny'],
    'UNAUTHENTICATED_USER': None,
}

# ----------------------------------------------------------
# EVACUATION PIPELINE DEFAULTS
# ----------------------------------------------------------
# Every key can be overridden with an EVAC_<KEY> environment variable; config
# files and command-line flags override these in turn (see pipeline.config).
EVACANALYTICS = {
    'OUTPUT_DIR': os.environ.get('EVAC_OUTPUT_DIR', 'out'),
    'EVENT_TIME': os.environ.get('EVAC_EVENT_TIME', '2016-04-16T01:25:00+09:00'),
    'TZ_OFFSET_S': int(os.environ.get('EVAC_TZ_OFFSET_S', 9 * 3600)),
    'R_M': float(os.environ.get('EVAC_R_M', 200.0)),
    'WINDOW_DAYS': int(os.environ.get('EVAC_WINDOW_DAYS', 7)),
    'BANDWIDTH_M': float(os.environ.get('EVAC_BANDWIDTH_M', 100.0)),
    'MIN_NIGHTS': int(os.environ.get('EVAC_MIN_NIGHTS', 5)),
    'HOME_WINDOW_DAYS': int(os.environ.get('EVAC_HOME_WINDOW_DAYS', 28)),
    'STAYPOINT_DIST_M': float(os.environ.get('EVAC_STAYPOINT_DIST_M', 200.0)),
    'STAYPOINT_MIN_DURATION_S': int(os.environ.get('EVAC_STAYPOINT_MIN_DURATION_S', 900)),
    'SAMPLE_RATE': float(os.environ.get('EVAC_SAMPLE_RATE', 0.01)),
    'CELL_SIZE_M': float(os.environ.get('EVAC_CELL_SIZE_M', 1000.0)),
    'WORKERS': int(os.environ.get('EVAC_WORKERS', 4)),
    'SEED': int(os.environ.get('EVAC_SEED', 42)),
}

# ----------------------------------------------------------
# LOGGING
# ----------------------------------------------------------
LOG_LEVEL = os.environ.get('EVAC_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        app: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for app in ('mobility', 'analytics_core', 'synth', 'pipeline', 'api_service')
    },
}

# ----------------------------------------------------------
# INTERNATIONALIZATION
# ----------------------------------------------------------
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
