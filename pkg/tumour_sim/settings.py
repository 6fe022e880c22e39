"""
Django settings for the tumour_sim project.

The project has no web surface: Django provides settings, logging
configuration, the ``manage.py sav`` management command and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'tumour-sim-local-only-key')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'simulator',
]

# No models: the simulator persists results only as CSV/VTK files.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'simulator': {
            'handlers': ['console'],
            'level': os.environ.get('SAV_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Simulator defaults

SAV_SIMULATOR = {
    # Linear solver used by the step system when a run config does not say
    'SOLVER_KIND': 'direct',
    'DIRECT_TOLERANCE': 1e-12,
    'ITERATIVE_TOLERANCE': 1e-10,
    'ITERATIVE_MAXITER': 2000,
    # Tolerances checked by ``manage.py sav check``
    'MASS_TOLERANCE': 1e-10,
    'ENERGY_TOLERANCE': 1e-10,
    'DISSIPATION_TOLERANCE': 1e-8,
    # Extra uniform refinements when integrating exact initial data for r^0
    'INITIAL_ENERGY_REFINEMENTS': 2,
    'SNAPSHOT_FORMAT': 'csv',
}
