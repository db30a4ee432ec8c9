"""
Django settings for the iris_segmentation project.

Pipeline defaults live in the ``IRIS_SEGMENTATION`` dict at the bottom; each
key can be overridden with an ``IRIS_SEGMENTATION_<KEY>`` environment variable.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'django-insecure-iris-segmentation-development-key',
)

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get('DJANGO_DEBUG', 'true').lower() == 'true'

ALLOWED_HOSTS = ['*']


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'rest_framework',
    'django_filters',

    'drf_yasg',

    'corpus',
    'roi',
    'fcnseg',
    'ganseg',
    'evaluation',
    'pipeline',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'iris_segmentation.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'iris_segmentation.wsgi.application'


# Database
# https://docs.djangoproject.com/en/5.1/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('IRIS_SEGMENTATION_DB', BASE_DIR / 'db.sqlite3'),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Password validation
# https://docs.djangoproject.com/en/5.1/ref/settings/#auth-password-validators

AUTH_PASSWORD_VALIDATORS = [
    {
        'NAME': 'django.contrib.auth.password_validation.UserAttributeSimilarityValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.MinimumLengthValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.CommonPasswordValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.NumericPasswordValidator',
    },
]

REST_FRAMEWORK = {
    'DEFAULT_PAGINATION_CLASS': 'rest_framework.pagination.PageNumberPagination',
    'PAGE_SIZE': 100,
    'DEFAULT_FILTER_BACKENDS': ['django_filters.rest_framework.DjangoFilterBackend']
}


# Internationalization
# https://docs.djangoproject.com/en/5.1/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'
STATIC_ROOT = os.path.join(BASE_DIR, 'static')


# Logging

LOG_LEVEL = os.environ.get('IRIS_SEGMENTATION_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
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
        name: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for name in (
            'iris_segmentation',
            'corpus',
            'roi',
            'fcnseg',
            'ganseg',
            'evaluation',
            'pipeline',
        )
    },
}


# Iris segmentation pipeline

def _env(key, default, cast=str):
    value = os.environ.get(f'IRIS_SEGMENTATION_{key}')
    return default if value is None else cast(value)


IRIS_SEGMENTATION = {
    'DEVICE': _env('DEVICE', 'cpu'),
    'DETECTION_THRESHOLD': _env('DETECTION_THRESHOLD', 0.25, float),
    'ROI_PAD_FRACTION': _env('ROI_PAD_FRACTION', 0.10, float),
    'TRAIN_FRACTION': _env('TRAIN_FRACTION', 0.8, float),
    'MASK_THRESHOLD': _env('MASK_THRESHOLD', 128, int),
    'FCN_MULTIPLE': _env('FCN_MULTIPLE', 32, int),
    'GAN_INPUT_SIDE': _env('GAN_INPUT_SIDE', 256, int),
    'LOG_EVERY': _env('LOG_EVERY', 100, int),
    'CHECKPOINT_EVERY': _env('CHECKPOINT_EVERY', 1000, int),
    'DEFAULT_ALPHA': _env('DEFAULT_ALPHA', 0.05, float),
    'SLOW_TESTS': _env('SLOW_TESTS', '0') == '1',
}
