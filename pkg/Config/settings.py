"""
Django settings for the bearing benchmark project.

The project has no database tables and no HTTP surface: Django provides the
app registry, the management-command CLI, settings and logging. Every pipeline
tunable lives in BENCHMARK_CONFIG below.
"""

from pathlib import Path
import os
from dotenv import load_dotenv
load_dotenv()
env_path = Path('.')/'.env'
load_dotenv(dotenv_path=env_path)
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('SECRET_KEY', 'bench-local-only-key')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'core',
    'ingest',
    'synthgen',
    'features',
    'labeling',
    'splits',
    'classifiers',
    'metrics',
    'runner',
]

MIDDLEWARE = []

# Nothing is persisted in a database; intermediates are files.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
}


LOG_DIR = BASE_DIR / 'logs'
LOG_DIR.mkdir(exist_ok=True)

BENCH_APP_LOGGERS = [
    'core', 'ingest', 'synthgen', 'features', 'labeling',
    'splits', 'classifiers', 'metrics', 'runner',
]

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOG_DIR / 'bench.log',
            'maxBytes': 1024 * 1024 * 15,  # 15MB
            'backupCount': 10,
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        **{
            name: {
                'handlers': ['console', 'file'],
                'level': os.getenv('BENCH_LOG_LEVEL', 'INFO'),
                'propagate': False,
            }
            for name in BENCH_APP_LOGGERS
        },
    },
}

# Benchmark Settings
BENCHMARK_CONFIG = {
    'SCHEMA_VERSION': 1,
    'CODE_VERSION': '1.0.0',

    # Output root for relative experiment output directories
    'OUTPUT_ROOT': os.getenv('BENCH_OUTPUT_ROOT', str(BASE_DIR / 'bench_output')),
    # Worker threads for loading, featurizing, fitting and grid cells
    'THREADS': int(os.getenv('BENCH_THREADS', '4')),

    # Ingest
    'LAYOUT_SAMPLING_RATES': {
        'femto_like': 25600.0,
        'xjtu_like': 25600.0,
        'cwru_normal': 48000.0,
    },
    # Layouts whose acquisitions are fixed-length snapshots
    'FIXED_LENGTH_LAYOUTS': ['femto_like', 'xjtu_like'],
    'CSV_FLOAT_FORMAT': '%.17g',
    'FIR_TAPS': 127,
    'FIR_CUTOFF_RATIO': 0.8,  # of the new Nyquist
    'FIR_WINDOW': 'hamming',

    # Synthetic generator
    'SYNTH_CARRIER_HZ': {
        'none': 3000.0,
        'inner_race': 3000.0,
        'outer_race': 2200.0,
        'ball': 3800.0,
        'cage': 1500.0,
        'compound': 2600.0,
    },
    'SYNTH_IMPULSE_DECAY_PER_S': 600.0,
    'SYNTH_SHAFT_AMPLITUDE_G': 0.5,
    'SYNTH_JITTER_FRACTION': 0.01,
    'SYNTH_COMPOUND_SECOND_RATIO': 0.4,

    # Windowing and features
    'WINDOW_LENGTH': 2048,
    'WINDOW_OVERLAP': 0.25,
    'STFT_SUB_LEN': 256,
    'STFT_SUB_OVERLAP': 0.5,
    'SHAPIRO_SUBSAMPLE': 512,
    'SHAPIRO_SEED': 0,
    'KL_BINS': 32,
    'KL_SMOOTHING': 1e-9,
    'PEAK_PROMINENCE_STD': 0.5,
    'CONSTANT_STD_EPS': 1e-12,

    # Labeling
    'THRESHOLD_G': 10.0,
    'PCA_COMPONENTS': 2,
    'KMEANS_CLUSTERS': 4,
    'KMEANS_RESTARTS': 10,
    'KMEANS_MAX_ITER': 300,
    'KMEANS_TOL': 1e-6,
    'ENRICHMENT_THRESHOLD': 0.75,
    'FORCE_FINAL_CLUSTER': True,

    # Splits
    'RANDOM_SPLIT_FRACTIONS': (0.8, 0.1, 0.1),

    # Classifiers
    'CLASSIFIER_DEFAULTS': {
        'dummy_stratified': {},
        'gaussian_nb': {'var_smoothing': 1e-9},
        'logistic_regression': {'C': 1.0, 'max_iter': 1000, 'tol': 1e-5},
        'svm_rbf': {'C': 1.0, 'gamma': 'scale', 'tol': 1e-4,
                    'max_iter': 200000, 'max_train': 20000,
                    'cache_rows': 2000},
        'random_forest': {'n_trees': 100, 'max_depth': None, 'min_leaf': 1,
                          'max_features': 'sqrt'},
        'mlp': {'hidden': [256, 128], 'batch_size': 256, 'learning_rate': 1e-3,
                'max_epochs': 200, 'patience': 10,
                'bn_momentum': 0.9, 'bn_eps': 1e-5},
    },
    'CLASS_WEIGHTING_DEFAULTS': {
        'svm_rbf': 'balanced',
        'logistic_regression': 'balanced',
    },
    'MODEL_FORMAT_VERSION': 1,

    # Metrics and reports
    'POSITIVE_CLASS': 'failure',
    'NORMAL_CLASS': 'normal',
    'LEAKAGE_FLAG_DELTA': 0.0,
}
