from pathlib import Path
import os
import sys

from dotenv import load_dotenv

# Build paths inside the project
BASE_DIR = Path(__file__).resolve().parent.parent

# Variables locales opcionales (.env en la raíz del proyecto)
load_dotenv(BASE_DIR / '.env')

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'dev-secret-key-change-this')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG_ENV = os.environ.get('DJANGO_DEBUG', 'False')
DEBUG = DEBUG_ENV.lower() in ('true', '1', 'yes', 'on')

# Para desarrollo local, forzar DEBUG=True si no está configurado
if not os.environ.get('DJANGO_DEBUG') and SECRET_KEY == 'dev-secret-key-change-this':
    DEBUG = True

ALLOWED_HOSTS = os.environ.get('DJANGO_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',')
if DEBUG:
    ALLOWED_HOSTS.extend(['testserver', '0.0.0.0'])

# ================================
# APLICACIONES MÍNIMAS
# ================================
INSTALLED_APPS = [
    'incremental_app',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
    'incremental_app.middleware.RequestLoggingMiddleware',
]

ROOT_URLCONF = 'clasificadores.urls'

WSGI_APPLICATION = 'clasificadores.wsgi.application'

# Sin base de datos: los resultados viven en archivos JSON/CSV
DATABASES = {}

# ================================
# CONFIGURACIÓN INTERNACIONAL
# ================================
LANGUAGE_CODE = 'es-es'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ================================
# APRENDIZAJE INCREMENTAL
# ================================
CONTINUAL_LEARNING = {
    'REPORTS_ROOT': Path(os.environ.get('CIL_REPORTS_ROOT', BASE_DIR / 'outputs')),
    'DEFAULT_LR': float(os.environ.get('CIL_DEFAULT_LR', 0.01)),
    'DEFAULT_BATCH_SIZE': int(os.environ.get('CIL_DEFAULT_BATCH_SIZE', 32)),
    'DEFAULT_MAX_EPOCHS': int(os.environ.get('CIL_DEFAULT_MAX_EPOCHS', 200)),
    'DEFAULT_STOP_PATIENCE': int(os.environ.get('CIL_DEFAULT_STOP_PATIENCE', 10)),
    'DEFAULT_LR_PATIENCE': int(os.environ.get('CIL_DEFAULT_LR_PATIENCE', 3)),
    'DEFAULT_HIDDEN_WIDTH': int(os.environ.get('CIL_DEFAULT_HIDDEN_WIDTH', 8)),
    # Receta BiC de las corridas; SessionConfig conserva 100 pasos a 0.001
    'DEFAULT_BIC_EPOCHS': int(os.environ.get('CIL_DEFAULT_BIC_EPOCHS', 1000)),
    'DEFAULT_BIC_LR': float(os.environ.get('CIL_DEFAULT_BIC_LR', 0.01)),
    'GRID_WORKERS': int(os.environ.get('CIL_GRID_WORKERS', 1)),
    'SLOW_REQUEST_SECONDS': 5,
    'LOG_LEVEL': os.environ.get('CIL_LOG_LEVEL', 'INFO' if DEBUG else 'WARNING').upper(),
}

# ================================
# LOGGING
# ================================
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
            'stream': sys.stderr,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'ERROR' if not DEBUG else 'WARNING',
            'propagate': False,
        },
        'incremental_app': {
            'handlers': ['console'],
            'level': CONTINUAL_LEARNING['LOG_LEVEL'],
            'propagate': False,
        },
    },
}

# ================================
# CONFIGURACIÓN DE SEGURIDAD
# ================================
if not DEBUG:
    SECURE_CONTENT_TYPE_NOSNIFF = True
    X_FRAME_OPTIONS = 'DENY'
    SECURE_PROXY_SSL_HEADER = ('HTTP_X_FORWARDED_PROTO', 'https')
    SECURE_SSL_REDIRECT = os.environ.get('DJANGO_SSL_REDIRECT', 'True').lower() in ('true', '1', 'yes', 'on')
else:
    SECURE_SSL_REDIRECT = False
    X_FRAME_OPTIONS = 'SAMEORIGIN'
