"""
Django settings for the policy estimation project.

The project has no web surface: Django provides configuration, logging,
caching and the management-command runner for ``estimate``, ``simulate``
and ``truth``.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env(
    DEBUG=(bool, False),
    POLICY_EPS_T=(float, 0.01),
    POLICY_EPS_C=(float, 1e-3),
    POLICY_FOLDS=(int, 10),
    POLICY_DEFAULT_SEED=(int, 20240607),
    POLICY_TRUTH_SAMPLES=(int, 1_000_000),
    POLICY_THREADS=(int, -1),
    POLICY_TRUTH_CACHE_TIMEOUT=(int, 7 * 24 * 3600),
    POLICY_RECORD_TIMING=(bool, False),
)
environ.Env.read_env(BASE_DIR / '.env', overwrite=False)

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env('SECRET_KEY', default='django-insecure-policy-estimation-local-only')

DEBUG = env('DEBUG')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'policy',
]

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Estimation defaults (overridable per run through the JSON config)
POLICY = {
    'EPS_T': env('POLICY_EPS_T'),              # propensity truncation
    'EPS_C': env('POLICY_EPS_C'),              # cost-contrast floor
    'FOLDS': env('POLICY_FOLDS'),              # cross-fitting folds for xi
    'DEFAULT_SEED': env('POLICY_DEFAULT_SEED'),
    'TRUTH_SAMPLES': env('POLICY_TRUTH_SAMPLES'),
    'THREADS': env('POLICY_THREADS'),          # -1 = all cores
    'TRUTH_CACHE_TIMEOUT': env('POLICY_TRUTH_CACHE_TIMEOUT'),
    'RECORD_TIMING': env('POLICY_RECORD_TIMING'),
}

# Ground-truth memoisation; set CACHE_URL=filecache:///path to reuse across runs
CACHES = {
    'default': env.cache('CACHE_URL', default='locmemcache://policy-truth'),
}

# Create logs directory if it doesn't exist
logs_dir = BASE_DIR / 'logs'
if not os.path.exists(logs_dir):
    os.makedirs(logs_dir)

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': str(BASE_DIR / 'logs' / 'policy.log'),
            'formatter': 'verbose',
        },
        'console': {
            'level': 'DEBUG' if DEBUG else 'WARNING',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['file', 'console'],
            'level': 'INFO',
            'propagate': True,
        },
        'policy': {
            'handlers': ['file', 'console'],
            'level': 'DEBUG' if DEBUG else 'INFO',
            'propagate': False,
        },
    },
}

# Error tracking (optional)
SENTRY_DSN = env('SENTRY_DSN', default='')
if SENTRY_DSN:
    import sentry_sdk
    from sentry_sdk.integrations.django import DjangoIntegration

    sentry_sdk.init(dsn=SENTRY_DSN, integrations=[DjangoIntegration()], traces_sample_rate=0.0)
