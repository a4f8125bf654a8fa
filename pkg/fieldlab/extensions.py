import logging

from flask.logging import default_handler
from flask_migrate import Migrate
from flask_sqlalchemy import SQLAlchemy

# Inicializar extensiones
db = SQLAlchemy()
migrate = Migrate()

LOG_FORMAT = '%(asctime)s %(levelname)s [%(name)s] %(message)s'


def init_logging(app):
    """
    Configurar el logger de la aplicación

    Los módulos numéricos usan logging.getLogger(__name__) bajo el paquete
    `fieldlab`, que coincide con el logger de la aplicación.
    """
    level = getattr(logging, str(app.config.get('LOG_LEVEL', 'INFO')).upper(), logging.INFO)
    app.logger.setLevel(level)
    # La salida de los comandos es JSON en stdout; el log va sólo por nuestro handler
    app.logger.removeHandler(default_handler)
    if not any(getattr(h, '_fieldlab', False) for h in app.logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._fieldlab = True
        app.logger.addHandler(handler)


def init_app(app):
    """Inicializar las extensiones con la aplicación Flask"""
    db.init_app(app)
    migrate.init_app(app, db)
    init_logging(app)
