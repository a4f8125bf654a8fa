import os

from flask.cli import FlaskGroup

from fieldlab import create_app


def make_app():
    """Crear la aplicación según FIELDLAB_ENV (o FLASK_ENV)"""
    return create_app(os.getenv('FIELDLAB_ENV') or os.getenv('FLASK_ENV') or 'development')


# Sin los comandos por defecto de Flask: `run` es el del laboratorio
cli = FlaskGroup(create_app=make_app, add_default_commands=False)

if __name__ == '__main__':
    cli()
