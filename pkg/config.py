import os
from dotenv import load_dotenv

# Cargar variables de entorno
load_dotenv()


def registry_uri(output_root):
    """
    Construir la URI del registro de corridas

    Si se define FIELDLAB_DATABASE_URL se usa tal cual; si se definen las
    variables DB_* se arma una URI MySQL (PyMySQL); en otro caso se usa un
    archivo SQLite dentro del directorio de salida.

    Args:
        output_root (str): Directorio raíz de artefactos

    Returns:
        str: URI de conexión para SQLAlchemy
    """
    explicit = os.environ.get('FIELDLAB_DATABASE_URL')
    if explicit:
        return explicit

    db_host = os.environ.get('DB_HOST')
    if db_host:
        db_port = os.environ.get('DB_PORT') or '3306'
        db_user = os.environ.get('DB_USER') or 'fieldlab'
        db_password = os.environ.get('DB_PASSWORD') or ''
        db_name = os.environ.get('DB_NAME') or 'fieldlab'
        return f'mysql+pymysql://{db_user}:{db_password}@{db_host}:{db_port}/{db_name}'

    return 'sqlite:///' + os.path.abspath(os.path.join(output_root, 'registry.db'))


class Config:
    """Configuración base del laboratorio"""

    # Directorio raíz de artefactos (se puede sobrescribir con --output-dir)
    OUTPUT_ROOT = os.environ.get('FIELDLAB_OUTPUT_ROOT') or 'runs'

    # Registro de corridas
    SQLALCHEMY_DATABASE_URI = registry_uri(OUTPUT_ROOT)
    SQLALCHEMY_TRACK_MODIFICATIONS = False
    REGISTRY_AUTO_CREATE = True

    # Logging
    LOG_LEVEL = os.environ.get('FIELDLAB_LOG_LEVEL') or 'INFO'

    # Paralelismo por defecto de los ensambles
    DEFAULT_THREADS = int(os.environ.get('FIELDLAB_THREADS') or 1)

    # Tolerancias numéricas
    DEFINITENESS_TOL = float(os.environ.get('FIELDLAB_DEFINITENESS_TOL') or 1e-8)
    RANK_TOL = float(os.environ.get('FIELDLAB_RANK_TOL') or 1e-10)
    MEMBERSHIP_TOL = float(os.environ.get('FIELDLAB_MEMBERSHIP_TOL') or 1e-6)

    # Parámetros por defecto de certificados y medidas de ocupación
    DEFAULT_DELTA = float(os.environ.get('FIELDLAB_DELTA') or 0.5)
    BURN_IN_FRACTION = float(os.environ.get('FIELDLAB_BURN_IN') or 0.1)
    A2_MAX_LEVELS = int(os.environ.get('FIELDLAB_A2_LEVELS') or 8)
    ESTIMATION_TRIALS = int(os.environ.get('FIELDLAB_TRIALS') or 256)


class DevelopmentConfig(Config):
    """Configuración para desarrollo"""
    DEBUG = True
    DEVELOPMENT = True


class ProductionConfig(Config):
    """Configuración para producción"""
    DEBUG = False
    DEVELOPMENT = False
    # En producción el esquema se gestiona con `manage.py db upgrade`
    REGISTRY_AUTO_CREATE = False
    LOG_LEVEL = os.environ.get('FIELDLAB_LOG_LEVEL') or 'WARNING'


class TestingConfig(Config):
    """Configuración para la suite de pruebas"""
    TESTING = True
    SQLALCHEMY_DATABASE_URI = 'sqlite://'
    LOG_LEVEL = 'DEBUG'


# Configuración por defecto
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
