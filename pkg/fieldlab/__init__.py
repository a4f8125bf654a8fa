import os

from flask import Flask

from config import config
from fieldlab.extensions import db, init_app

__version__ = '0.4.0'


def create_app(config_name='default'):
    """Factory function para crear la aplicación del laboratorio"""

    # Crear instancia de Flask
    app = Flask(__name__)

    # Cargar configuración
    app.config.from_object(config[config_name])

    # Inicializar extensiones y logging
    init_app(app)

    # Importar modelos para que Alembic los detecte
    from fieldlab.models import CertificateRecord, RunRecord  # noqa: F401

    # Registrar blueprints de comandos
    from fieldlab.commands.lab import lab_bp
    from fieldlab.commands.registry import registry_bp

    app.register_blueprint(lab_bp)
    app.register_blueprint(registry_bp)

    # Directorio de artefactos
    os.makedirs(app.config['OUTPUT_ROOT'], exist_ok=True)

    if app.config.get('REGISTRY_AUTO_CREATE'):
        with app.app_context():
            db.create_all()

    return app
