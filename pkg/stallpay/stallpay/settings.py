"""
Django settings for the stallpay project.

stallpay has no web surface. Django provides the ORM for contract state,
the management commands for the scenario CLI and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


# Nothing is signed with this key; Django refuses to start without one.
SECRET_KEY = os.environ.get('STALLPAY_SECRET_KEY', 'stallpay-simulator-not-a-secret')

DEBUG = os.environ.get('STALLPAY_DEBUG', '') in ('1', 'true', 'yes')

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    # Django
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # rest framework
    'rest_framework',

    #
    'common.apps.CommonConfig',
    'ledger.apps.LedgerConfig',
    'sigchain.apps.SigchainConfig',
    'registry.apps.RegistryConfig',
    'providers.apps.ProvidersConfig',
    'payments.apps.PaymentsConfig',
    'simctl.apps.SimctlConfig',
]

MIDDLEWARE = []


# Database
# Every run lives in its own in-memory database unless STALLPAY_DB names a file.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('STALLPAY_DB', ':memory:'),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


#
#
#
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
        'console': {
            'level': 'WARNING',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'stallpay': {
            'level': 'DEBUG',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': os.environ.get('STALLPAY_LOG_FILE', '/tmp/stallpay.log'),
            'maxBytes': 2**24,
            'backupCount': 3,
            'formatter': 'verbose'
        },
    },

    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': True,
        },
        'stallpay': {
            'handlers': ['stallpay', 'console'],
            'level': os.environ.get('STALLPAY_LOG_LEVEL', 'DEBUG'),
            'propagate': False,
        },
    },
}

#
#
#

REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': (
        'rest_framework.renderers.JSONRenderer',
    ),
    'DEFAULT_PARSER_CLASSES': (
        'rest_framework.parsers.JSONParser',
    ),
    'UNICODE_JSON': True,
    'COMPACT_JSON': True,
}
