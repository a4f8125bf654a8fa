"""Escritura de artefactos: CSV, JSON, NPY y el manifiesto de la corrida."""
import hashlib
import json
import logging
import math
import os
import platform
from datetime import datetime, timezone

import numpy as np
from werkzeug.utils import secure_filename

from fieldlab.errors import FieldLabError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
FLOAT_FORMAT = '%.17g'


def to_jsonable(value):
    """
    Convertir resultados numéricos a tipos JSON

    ±∞ y NaN se escriben como cadenas ("inf", "-inf", "nan"); JSON estricto no los admite.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if value is None or isinstance(value, str):
        return value
    if hasattr(value, 'to_dict'):
        return to_jsonable(value.to_dict())
    return str(value)


def dumps(data):
    return json.dumps(to_jsonable(data), ensure_ascii=False, indent=2, allow_nan=False)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """
    Escritor de artefactos de una corrida

    Todos los archivos quedan dentro de `output_dir` con nombres saneados y
    se listan en el manifiesto con su sha256.

    Args:
        output_dir (str): Directorio de la corrida (se crea si no existe)
    """

    def __init__(self, output_dir):
        self.output_dir = os.path.abspath(output_dir)
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            raise FieldLabError(f"Error al crear el directorio de salida: {str(e)}", key='output_dir')
        self.files = []

    def path(self, name):
        filename = secure_filename(name)
        if not filename:
            raise FieldLabError(f"Nombre de artefacto inválido: {name!r}", name=name)
        return os.path.join(self.output_dir, filename)

    def _register(self, path, kind):
        self.files.append({'name': os.path.basename(path), 'kind': kind})
        logger.debug(f"Artefacto escrito: {path}")
        return path

    def write_csv(self, name, rows, header):
        """CSV UTF-8 con cabecera y flotantes con 17 dígitos significativos"""
        path = self.path(name)
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.size and rows.shape[1] != len(header):
            raise FieldLabError(
                f"El CSV {name} tiene {rows.shape[1]} columnas y la cabecera {len(header)}", name=name
            )
        np.savetxt(path, rows.reshape(-1, len(header)), fmt=FLOAT_FORMAT, delimiter=',',
                   header=','.join(header), comments='', encoding='utf-8')
        return self._register(path, 'csv')

    def write_json(self, name, data):
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(dumps(data))
            handle.write('\n')
        return self._register(path, 'json')

    def write_npy(self, name, array):
        path = self.path(name)
        np.save(path, np.asarray(array))
        return self._register(path, 'npy')

    def write_manifest(self, resolved_config, experiment, version, started_at, elapsed, exit_code, extra=None):
        """
        Escribir el manifiesto con la configuración resuelta y los hashes

        Re-ejecutar `run manifest.json` reproduce los artefactos numéricos.
        """
        files = [
            dict(entry, sha256=_sha256(os.path.join(self.output_dir, entry['name'])))
            for entry in self.files
        ]
        manifest = {
            'experiment': experiment,
            'fieldlab_version': version,
            'numpy_version': np.__version__,
            'python_version': platform.python_version(),
            'started_at': started_at.astimezone(timezone.utc).isoformat(),
            'written_at': datetime.now(timezone.utc).isoformat(),
            'elapsed_seconds': elapsed,
            'exit_code': exit_code,
            'resolved_config': resolved_config,
            'files': files,
        }
        if extra:
            manifest.update(extra)
        path = self.path(MANIFEST_NAME)
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(dumps(manifest))
            handle.write('\n')
        logger.info(f"Manifiesto escrito en {path}")
        return path
