"""Entorno de Alembic para el registro de corridas.

Usa el motor y los metadatos de `fieldlab.extensions.db` a través de
Flask-Migrate (`python manage.py db upgrade`).
"""
import logging
from logging.config import fileConfig

from flask import current_app

from alembic import context

config = context.config

# Logging según alembic.ini
fileConfig(config.config_file_name)
logger = logging.getLogger('alembic.env')


def get_engine():
    # Flask-SQLAlchemy >= 3 expone el motor como atributo
    return current_app.extensions['migrate'].db.engine


def get_engine_url():
    return get_engine().url.render_as_string(hide_password=False).replace('%', '%%')


config.set_main_option('sqlalchemy.url', get_engine_url())
target_db = current_app.extensions['migrate'].db


def get_metadata():
    # Importar los modelos registra las tablas runs y certificates
    import fieldlab.models  # noqa: F401
    return target_db.metadata


def run_migrations_offline():
    """Generar el SQL sin conexión (`db upgrade --sql`)"""
    context.configure(
        url=config.get_main_option('sqlalchemy.url'),
        target_metadata=get_metadata(),
        literal_binds=True,
        render_as_batch=True,
    )

    with context.begin_transaction():
        context.run_migrations()


def run_migrations_online():
    """Aplicar las migraciones sobre el registro configurado"""

    def process_revision_directives(context, revision, directives):
        # Sin cambios de esquema no se genera una revisión vacía
        if getattr(config.cmd_opts, 'autogenerate', False):
            script = directives[0]
            if script.upgrade_ops.is_empty():
                directives[:] = []
                logger.info('Sin cambios en el esquema del registro.')

    conf_args = dict(current_app.extensions['migrate'].configure_args)
    conf_args.setdefault('process_revision_directives', process_revision_directives)
    # SQLite (registro por defecto) necesita modo batch para alterar tablas
    conf_args.setdefault('render_as_batch', True)

    with get_engine().connect() as connection:
        context.configure(connection=connection, target_metadata=get_metadata(), **conf_args)

        with context.begin_transaction():
            context.run_migrations()


if context.is_offline_mode():
    run_migrations_offline()
else:
    run_migrations_online()
