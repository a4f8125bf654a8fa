"""Configuración de corridas: lectura estricta de JSON y construcción de los objetos numéricos."""
import copy
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from fieldlab.core.activation import Activation
from fieldlab.core.dynamics import SCHEMES, FieldModel, SimConfig
from fieldlab.core.ergodicity import ASSUMPTIONS
from fieldlab.core.kernel import KernelSpec, assemble, operator_norm, read_kernel_table, scaled
from fieldlab.core.noise import additive_noise, mollified_noise, pointwise_noise
from fieldlab.core.particle import ParticleConfig
from fieldlab.core.space import Field, Grid, Weight, cosine_modes
from fieldlab.errors import ConfigurationError, FieldLabError, MissingMetricError

EXPERIMENTS = ('simulate', 'certify', 'spectrum', 'invariant', 'couple', 'particle', 'compare')

# Secciones obligatorias / opcionales por experimento
SECTIONS = {
    'simulate': (('space', 'activation', 'dynamics'), ('kernel', 'noise')),
    'certify': (('space', 'activation', 'dynamics'), ('kernel', 'noise')),
    'spectrum': (('space', 'kernel'), ()),
    'invariant': (('space', 'kernel', 'activation', 'dynamics'), ('noise',)),
    'couple': (('space', 'activation', 'dynamics'), ('kernel', 'noise')),
    'particle': (('particle',), ()),
    'compare': (('particle',), ('dynamics',)),
}

TOP_KEYS = {'space', 'kernel', 'activation', 'noise', 'dynamics', 'particle', 'experiment', 'output_dir', 'seed', 'threads'}

SECTION_KEYS = {
    'space': {'bounds', 'points', 'truncated', 'weight'},
    'weight': {'type', 'value', 'exponent', 'center', 'file'},
    'kernel': {'variant', 'params', 'scale', 'shift', 'file', 'target_norm'},
    'activation': {'variant', 'scale', 'value', 'file', 'declared_lip'},
    'noise': {'variant', 'sigma', 'basis', 'file', 'map', 'population'},
    'dynamics': {'alpha', 'T', 'dt', 'scheme', 'n_paths', 'record_stride', 'chunk_size', 'initial'},
    'initial': {'type', 'value', 'mode', 'amplitude', 'offset', 'file'},
    'particle': {'populations', 'w_tilde', 'alpha', 'activation', 'T', 'dt_report', 'initial', 'rate_cap', 'safety'},
}

EXPERIMENT_KEYS = {
    'simulate': {'p_list', 'save_paths', 'convergence', 'ref_ratio', 'continuity'},
    'certify': {'delta', 'c_delta', 'gate', 'trials', 'occupation_horizon', 'burn_in'},
    'spectrum': {'count', 'cover_radius', 'cover_eps'},
    'invariant': {'delta', 'trials', 'horizons', 'burn_in', 'r_factors'},
    'couple': {'partner', 'delta', 'trials'},
    'particle': {'n_runs'},
    'compare': {'n_runs', 'points_per_box', 'ladder', 'dt', 'bootstrap'},
}

DEFAULT_GATE = ('ergodicity',)


def _check_keys(section, allowed, prefix):
    if not isinstance(section, dict):
        raise ConfigurationError(f"La sección {prefix} debe ser un objeto", key=prefix)
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(
            f"Clave desconocida en la configuración: {prefix}.{unknown[0]}",
            key=f'{prefix}.{unknown[0]}', allowed=', '.join(sorted(allowed)),
        )


def _require(section, name, prefix):
    if name not in section:
        raise ConfigurationError(f"Falta la clave {prefix}.{name}", key=f'{prefix}.{name}')
    return section[name]


def _resolve_path(value, base_dir, key):
    path = Path(value)
    if not path.is_absolute():
        path = (base_dir / path).resolve()
    if not path.exists():
        raise ConfigurationError(f"No existe el archivo referenciado: {path}", key=key)
    return str(path)


def _resolve_files(data, base_dir):
    # Las rutas se guardan absolutas para que el manifiesto sea re-ejecutable
    for section, key in (('kernel', 'kernel.file'), ('activation', 'activation.file'), ('noise', 'noise.file')):
        block = data.get(section)
        if isinstance(block, dict) and 'file' in block:
            block['file'] = _resolve_path(block['file'], base_dir, key)
    weight = data.get('space', {}).get('weight')
    if isinstance(weight, dict) and 'file' in weight:
        weight['file'] = _resolve_path(weight['file'], base_dir, 'space.weight.file')
    initial = data.get('dynamics', {}).get('initial')
    if isinstance(initial, dict) and 'file' in initial:
        initial['file'] = _resolve_path(initial['file'], base_dir, 'dynamics.initial.file')
    partner = data.get('experiment', {}).get('partner')
    if isinstance(partner, dict) and 'file' in partner:
        partner['file'] = _resolve_path(partner['file'], base_dir, 'experiment.partner.file')


def validate_structure(data):
    """
    Validar claves y secciones de una configuración ya decodificada

    Returns:
        tuple[bool, str]: (es_válida, mensaje)
    """
    try:
        _validate(data)
    except ConfigurationError as e:
        return False, e.message
    return True, "Configuración válida"


def _validate(data):
    _check_keys(data, TOP_KEYS, 'config')
    experiment = _require(data, 'experiment', 'config')
    if not isinstance(experiment, dict):
        raise ConfigurationError("La sección experiment debe ser un objeto", key='experiment')
    kind = _require(experiment, 'type', 'experiment')
    if kind not in EXPERIMENTS:
        raise ConfigurationError(
            f"Experimento desconocido: {kind}", key='experiment.type', allowed=', '.join(EXPERIMENTS)
        )
    _check_keys(experiment, {'type'} | EXPERIMENT_KEYS[kind], 'experiment')
    required, optional = SECTIONS[kind]
    for name in required:
        _require(data, name, 'config')
    sections = {'space', 'kernel', 'activation', 'noise', 'dynamics', 'particle'}
    for name in sections & set(data):
        if name not in required and name not in optional:
            raise ConfigurationError(
                f"La sección {name} no se usa en el experimento {kind}", key=name
            )
        _check_keys(data[name], SECTION_KEYS[name], name)
    if isinstance(data.get('space', {}).get('weight'), dict):
        _check_keys(data['space']['weight'], SECTION_KEYS['weight'], 'space.weight')
    if isinstance(data.get('dynamics', {}).get('initial'), dict):
        _check_keys(data['dynamics']['initial'], SECTION_KEYS['initial'], 'dynamics.initial')
    if isinstance(experiment.get('partner'), dict):
        _check_keys(experiment['partner'], SECTION_KEYS['initial'], 'experiment.partner')
    if isinstance(data.get('particle', {}).get('activation'), dict):
        _check_keys(data['particle']['activation'], SECTION_KEYS['activation'], 'particle.activation')
    if isinstance(data.get('noise', {}).get('map'), dict):
        _check_keys(data['noise']['map'], SECTION_KEYS['activation'], 'noise.map')
    gate = experiment.get('gate', DEFAULT_GATE)
    if not isinstance(gate, (list, tuple)) or not set(gate) <= set(ASSUMPTIONS):
        raise ConfigurationError(
            f"gate debe ser una lista de {', '.join(ASSUMPTIONS)}", key='experiment.gate'
        )
    seed = data.get('seed', 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError("seed debe ser un entero no negativo", key='seed')


def parse_text(text, source='<config>'):
    """
    Decodificar JSON reportando línea y columna en caso de error

    Raises:
        ConfigurationError: Si el texto no es JSON válido
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"Error al leer {source}: {e.msg} (línea {e.lineno}, columna {e.colno})",
            line=e.lineno, column=e.colno,
        )


@dataclass(frozen=True)
class RunConfig:
    """Configuración validada de una corrida"""
    data: dict
    source: str = '<config>'

    @classmethod
    def load(cls, path):
        """
        Leer una configuración o un manifiesto (se usa su `resolved_config`)

        Raises:
            ConfigurationError: Si el archivo no existe, no es JSON o tiene claves desconocidas
        """
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigurationError(f"Error al leer la configuración: {str(e)}", key='config')
        data = parse_text(text, path.name)
        if isinstance(data, dict) and 'resolved_config' in data:
            data = data['resolved_config']
        return cls.from_dict(data, base_dir=path.parent.resolve(), source=str(path))

    @classmethod
    def from_dict(cls, data, base_dir='.', source='<config>'):
        data = copy.deepcopy(data)
        _validate(data)
        _resolve_files(data, Path(base_dir))
        return cls(data, source)

    @property
    def experiment(self):
        return self.data['experiment']['type']

    @property
    def options(self):
        return {k: v for k, v in self.data['experiment'].items() if k != 'type'}

    @property
    def seed(self):
        return int(self.data.get('seed', 0))

    @property
    def output_dir(self):
        return self.data.get('output_dir')

    @property
    def threads(self):
        return self.data.get('threads')

    @property
    def gate(self):
        return tuple(self.options.get('gate', DEFAULT_GATE))

    def section(self, name):
        return self.data.get(name)

    def with_overrides(self, seed=None, output_dir=None, threads=None):
        """Aplicar las banderas --seed, --output-dir y --threads"""
        data = copy.deepcopy(self.data)
        if seed is not None:
            data['seed'] = int(seed)
        if output_dir is not None:
            data['output_dir'] = str(output_dir)
        if threads is not None:
            data['threads'] = int(threads)
        return replace(self, data=data)

    def resolved(self):
        return copy.deepcopy(self.data)

    @property
    def config_hash(self):
        # Hash de la configuración numérica; salida e hilos no cambian los resultados
        numeric = {k: v for k, v in self.data.items() if k not in ('output_dir', 'threads')}
        canonical = json.dumps(numeric, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# --- constructores

def build_grid(section):
    bounds = _require(section, 'bounds', 'space')
    points = _require(section, 'points', 'space')
    try:
        return Grid.uniform(bounds, points, truncated=bool(section.get('truncated', False)))
    except (TypeError, ValueError) as e:
        if isinstance(e, FieldLabError):
            raise
        raise ConfigurationError(f"Error al construir la malla: {str(e)}", key='space.bounds')


def build_weight(grid, section):
    section = section or {'type': 'const'}
    kind = section.get('type', 'const')
    if kind == 'const':
        return Weight.const(grid, float(section.get('value', 1.0)))
    if kind == 'abs_pow':
        return Weight.abs_pow(grid, float(_require(section, 'exponent', 'space.weight')), section.get('center'))
    if kind == 'table':
        values = _load_array(_require(section, 'file', 'space.weight'), 'space.weight.file')
        return Weight.table(grid, values.ravel())
    raise ConfigurationError(f"Tipo de peso desconocido: {kind}", key='space.weight.type')


def _load_array(path, key):
    try:
        if str(path).endswith('.npy'):
            return np.load(path)
        return np.loadtxt(path, delimiter=',', skiprows=1, ndmin=1)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Error al leer {path}: {str(e)}", key=key)


def build_kernel(grid, weight, section):
    """
    Ensamblar el núcleo; con `target_norm` se reescala a ‖K‖ prescrita
    """
    if section is None:
        return None
    variant = _require(section, 'variant', 'kernel')
    params = dict(section.get('params', {}))
    if variant == 'table':
        params['values'] = read_kernel_table(_require(section, 'file', 'kernel'), grid)
    spec = KernelSpec(variant, params, scale=section.get('scale', 1.0), shift=tuple(section.get('shift', ())))
    kernel = assemble(spec, grid)
    target = section.get('target_norm')
    if target is not None:
        current = operator_norm(kernel, weight).value
        if current == 0:
            raise ConfigurationError("No se puede reescalar un núcleo nulo", key='kernel.target_norm')
        kernel = scaled(kernel, float(target) / current)
    return kernel


def build_activation(section, prefix='activation'):
    variant = _require(section, 'variant', prefix)
    scale = section.get('scale', 1.0)
    if variant == 'custom':
        return Activation.from_csv(
            _require(section, 'file', prefix), _require(section, 'declared_lip', prefix), scale
        )
    return Activation(variant, scale=scale, value=section.get('value'))


def build_noise(weight, kernel, activation, section, metric=None):
    if section is None:
        return None
    variant = _require(section, 'variant', 'noise')
    if variant == 'additive':
        basis = section.get('basis', 'cosine')
        table = _load_array(section['file'], 'noise.file') if basis == 'table' else None
        if basis == 'eigen' and metric is None:
            raise MissingMetricError("La base 'eigen' requiere un núcleo con parte simétrica definida")
        return additive_noise(weight, _require(section, 'sigma', 'noise'), basis, metric=metric, table=table)
    if variant == 'pointwise':
        return pointwise_noise(weight, build_activation(_require(section, 'map', 'noise'), 'noise.map'))
    if variant == 'kernel_mollified':
        if kernel is None:
            raise ConfigurationError("El ruido molificado requiere la sección kernel", key='noise.variant')
        return mollified_noise(kernel, weight, activation, _require(section, 'population', 'noise'))
    raise ConfigurationError(f"Ruido desconocido: {variant}", key='noise.variant')


def build_sim_config(section, seed, threads=1):
    scheme = section.get('scheme', 'exponential_euler')
    if scheme not in SCHEMES:
        raise ConfigurationError(f"Esquema desconocido: {scheme}", key='dynamics.scheme')
    return SimConfig(
        alpha=float(_require(section, 'alpha', 'dynamics')),
        T=float(_require(section, 'T', 'dynamics')),
        dt=float(_require(section, 'dt', 'dynamics')),
        scheme=scheme,
        n_paths=int(section.get('n_paths', 1)),
        seed=seed,
        record_stride=int(section.get('record_stride', 1)),
        threads=int(threads or 1),
        chunk_size=int(section.get('chunk_size', 64)),
    )


def build_initial(grid, weight, section, metric=None, key='dynamics.initial'):
    """
    Estado inicial: constante, modo coseno, autocampo de la métrica o tabla
    """
    section = section or {'type': 'constant', 'value': 0.0}
    kind = section.get('type', 'constant')
    if kind == 'constant':
        return Field.constant(grid, float(section.get('value', 0.0)))
    if kind == 'cosine':
        mode = int(section.get('mode', 0))
        shape = cosine_modes(grid, weight, mode + 1)[:, mode]
        values = float(section.get('amplitude', 1.0)) * shape + float(section.get('offset', 0.0))
        return Field(grid, values)
    if kind == 'eigen':
        if metric is None:
            raise MissingMetricError("El estado inicial 'eigen' requiere una métrica no local", key=key)
        mode = int(section.get('mode', 0))
        if mode >= metric.rank:
            raise ConfigurationError(f"H₁ tiene rango {metric.rank}", key=f'{key}.mode')
        return Field(grid, float(section.get('amplitude', 1.0)) * metric.eigenvectors[:, mode])
    if kind == 'table':
        values = _load_array(_require(section, 'file', key), f'{key}.file')
        return Field(grid, values.ravel())
    raise ConfigurationError(f"Estado inicial desconocido: {kind}", key=f'{key}.type')


def build_model(weight, activation, kernel, noise):
    return FieldModel(weight, activation, kernel, noise)


def build_particle_config(section, seed, dynamics=None):
    activation = build_activation(_require(section, 'activation', 'particle'), 'particle.activation')
    alpha = section.get('alpha', dynamics.get('alpha') if dynamics else None)
    if alpha is None:
        raise ConfigurationError("Falta la clave particle.alpha", key='particle.alpha')
    cap = section.get('rate_cap')
    return ParticleConfig(
        populations=tuple(_require(section, 'populations', 'particle')),
        w_tilde=np.asarray(_require(section, 'w_tilde', 'particle'), dtype=float),
        alpha=float(alpha),
        activation=activation,
        T=float(_require(section, 'T', 'particle')),
        dt_report=float(_require(section, 'dt_report', 'particle')),
        initial=tuple(section['initial']) if isinstance(section.get('initial'), list)
        else section.get('initial', {'law': 'constant', 'value': 0.0}),
        seed=seed,
        rate_cap=None if cap is None else float(cap),
        safety=float(section.get('safety', 2.0)),
    )


def finite_or_none(value):
    """Convertir ±∞ / NaN a None para columnas numéricas del registro"""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None
