import json

import numpy as np
import pytest

from config import TestingConfig
from fieldlab import create_app
from fieldlab.core.activation import Activation
from fieldlab.core.kernel import KernelSpec, assemble
from fieldlab.core.space import Field, Grid, Weight
from fieldlab.extensions import db


@pytest.fixture
def app(tmp_path, monkeypatch):
    """Aplicación de pruebas con registro SQLite en memoria"""
    monkeypatch.setattr(TestingConfig, 'OUTPUT_ROOT', str(tmp_path / 'runs'))
    app = create_app('testing')
    with app.app_context():
        db.create_all()
        yield app
        db.session.remove()
        db.drop_all()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def unit_grid():
    """Malla de 101 nodos en [0, 1]"""
    return Grid.uniform([(0.0, 1.0)], 101)


@pytest.fixture
def unit_weight(unit_grid):
    return Weight.const(unit_grid)


@pytest.fixture
def constant_kernel(unit_grid):
    """Núcleo de rango uno w ≡ 1"""
    return assemble(KernelSpec('constant', {'c': 1.0}), unit_grid)


@pytest.fixture
def logistic():
    return Activation('logistic')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_field(unit_grid, rng):
    def build(scale=1.0):
        return Field(unit_grid, scale * rng.standard_normal(unit_grid.size))
    return build


@pytest.fixture
def write_config(tmp_path):
    """Escribir un diccionario como configuración JSON y devolver la ruta"""
    def write(data, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return write
