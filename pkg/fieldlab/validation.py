import os
import re
import traceback
from functools import wraps

import click
from flask import current_app

from fieldlab.artifacts import dumps
from fieldlab.errors import FieldLabError

UUID_PATTERN = re.compile(r'^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$')


def is_valid_config_path(path: str) -> tuple[bool, str]:
    """
    Validar la ruta de una configuración o manifiesto

    Args:
        path (str): Ruta recibida por la línea de comandos

    Returns:
        tuple[bool, str]: (es_válida, mensaje_error)
    """
    if not path:
        return False, "Se requiere la ruta de la configuración"

    if not os.path.isfile(path):
        return False, f"No existe el archivo de configuración: {path}"

    if not path.lower().endswith('.json'):
        return False, "La configuración debe ser un archivo .json"

    return True, "Ruta válida"


def is_valid_threads(threads) -> tuple[bool, str]:
    """Validar el número de hilos (None = valor por defecto)"""
    if threads is None:
        return True, "Valor por defecto"

    if threads < 1:
        return False, "--threads debe ser al menos 1"

    return True, "Hilos válidos"


def is_valid_uuid(value: str) -> tuple[bool, str]:
    """Validar el identificador de una corrida"""
    if not value or not UUID_PATTERN.match(value.lower()):
        return False, f"Identificador de corrida inválido: {value}"

    return True, "UUID válido"


def handle_lab_errors(f):
    """
    Decorador para comandos del laboratorio

    Convierte el entero devuelto por el comando en el código de salida y
    traduce los errores: FieldLabError → 1 con mensaje y contexto en JSON,
    cualquier otra excepción → 1 con la traza en el log.

    Usage:
        @lab_bp.cli.command('run')
        @handle_lab_errors
        def run(config_path):
            return 0
    """

    @wraps(f)
    def decorated(*args, **kwargs):
        try:
            code = f(*args, **kwargs)
        except FieldLabError as e:
            current_app.logger.error(f"Error en {f.__name__}: {e.message}")
            click.echo(dumps(e.to_dict()), err=True)
            code = 1
        except click.exceptions.Exit:
            raise
        except Exception as e:
            current_app.logger.error(f"Error inesperado en {f.__name__}: {str(e)}\n{traceback.format_exc()}")
            click.echo(dumps({'error': type(e).__name__, 'message': str(e)}), err=True)
            code = 1
        if code:
            raise click.exceptions.Exit(code)
        return code

    return decorated
