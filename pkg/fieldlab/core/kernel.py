"""Catálogo de núcleos, ensamblaje del operador discreto, normas y definitud."""
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import eigvalsh, svdvals
from scipy.signal import fftconvolve
from scipy.sparse.linalg import svds

from fieldlab.core.space import (
    DEFAULT_A2_LEVELS,
    Field,
    check_same_grid,
    estimate_a2_constant,
    kappa_value,
    lambda_value,
    majorant_l1,
)
from fieldlab.errors import (
    BoundViolationError,
    BoundWarning,
    DegenerateWeightError,
    FieldLabError,
    GridMismatchError,
    KernelConstraintError,
)

logger = logging.getLogger(__name__)

CATALOGUE = (
    'gaussian', 'exp_sqrt', 'rational', 'sinc_product', 'cosine_sum',
    'mexican_hat', 'mexican_hat2', 'mexican_hat3', 'damped_trig', 'wizard_hat',
)
VARIANTS = CATALOGUE + ('constant', 'table', 'custom_convolution')

# Parámetros admitidos por variante: (requeridos, opcionales con valor por defecto)
PARAMETERS = {
    'gaussian': ((), {'M': 1.0}),
    'exp_sqrt': ((), {'M': 1.0}),
    'rational': ((), {'M': 1.0}),
    'sinc_product': ((), {}),
    'cosine_sum': (('a', 'm'), {}),
    'mexican_hat': ((), {}),
    'mexican_hat2': (('A', 's'), {}),
    'mexican_hat3': (('Gamma', 'gamma1', 'gamma2'), {}),
    'damped_trig': (('b',), {}),
    'wizard_hat': ((), {}),
    'constant': (('c',), {}),
    'table': (('values',), {}),
    'custom_convolution': (('offsets', 'values'), {}),
}

# Constante de la cota maximal usada para K_ρ (óptima en d = 1)
DEFAULT_MAXIMAL_CONSTANT = 1.0 + math.sqrt(2.0)
FAST_PATH_MIN_NODES = 1024
ASSEMBLY_BLOCK_ROWS = 256
# Tolerancia relativa para aceptar M semidefinida
M_EIGEN_TOL = 1e-12


def _validate_params(variant, params):
    if variant not in VARIANTS:
        raise KernelConstraintError(
            f"Variante de núcleo desconocida: {variant}", variant=variant, allowed=', '.join(VARIANTS)
        )
    required, optional = PARAMETERS[variant]
    unknown = set(params) - set(required) - set(optional)
    if unknown:
        raise KernelConstraintError(
            f"Parámetros desconocidos para {variant}: {', '.join(sorted(unknown))}",
            variant=variant, key=sorted(unknown)[0],
        )
    missing = [name for name in required if name not in params]
    if missing:
        raise KernelConstraintError(
            f"Faltan parámetros para {variant}: {', '.join(missing)}", variant=variant, key=missing[0]
        )
    resolved = dict(optional)
    resolved.update(params)

    if variant == 'mexican_hat2':
        a, s = float(resolved['A']), float(resolved['s'])
        if not a > 0 or not (math.sqrt(2) <= s <= math.sqrt(2) / a):
            raise KernelConstraintError(
                f"mexican_hat2 requiere √2 ≤ s ≤ √2/A (A={a}, s={s})", variant=variant, key='s'
            )
    elif variant == 'mexican_hat3':
        big, g1, g2 = (float(resolved[k]) for k in ('Gamma', 'gamma1', 'gamma2'))
        if not g1 > g2 > 0:
            raise KernelConstraintError(
                f"mexican_hat3 requiere γ₁ > γ₂ > 0 (γ₁={g1}, γ₂={g2})", variant=variant, key='gamma1'
            )
        if not 0 < big <= g2 / g1:
            raise KernelConstraintError(
                f"mexican_hat3 requiere 0 < Γ ≤ γ₂/γ₁ (Γ={big}, γ₂/γ₁={g2 / g1})",
                variant=variant, key='Gamma',
            )
    elif variant == 'cosine_sum':
        a = np.asarray(resolved['a'], dtype=float)
        m = np.asarray(resolved['m'], dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if a.ndim != 1 or len(a) != len(m) or len(a) == 0:
            raise KernelConstraintError("cosine_sum requiere listas a y m de igual longitud", variant=variant, key='a')
        if np.any(a < 0) or not math.isclose(float(a.sum()), 1.0, rel_tol=0, abs_tol=1e-12):
            raise KernelConstraintError(
                "cosine_sum requiere aᵢ ≥ 0 y Σaᵢ = 1", variant=variant, key='a', total=float(a.sum())
            )
        for i in range(len(m)):
            for j in range(i + 1, len(m)):
                if np.array_equal(m[i], m[j]) or np.array_equal(m[i], -m[j]):
                    raise KernelConstraintError(
                        f"cosine_sum requiere mᵢ ≠ ±mⱼ (índices {i} y {j})", variant=variant, key='m'
                    )
        resolved['a'], resolved['m'] = a, m
    elif variant == 'damped_trig':
        if not float(resolved['b']) > 0:
            raise KernelConstraintError("damped_trig requiere b > 0", variant=variant, key='b')
    elif variant == 'custom_convolution':
        offsets = np.asarray(resolved['offsets'], dtype=float)
        values = np.asarray(resolved['values'], dtype=float)
        if offsets.ndim != 1 or offsets.shape != values.shape or offsets.size < 2:
            raise KernelConstraintError(
                "custom_convolution requiere listas offsets y values de igual longitud (≥ 2)",
                variant=variant, key='offsets',
            )
        if offsets[0] < 0 or np.any(np.diff(offsets) <= 0):
            raise KernelConstraintError(
                "custom_convolution requiere radios crecientes desde r ≥ 0", variant=variant, key='offsets'
            )
        if not np.all(np.isfinite(values)):
            raise KernelConstraintError("perfil con valores no finitos", variant=variant, key='values')
        resolved['offsets'], resolved['values'] = offsets, values
    elif variant == 'table':
        resolved['values'] = np.asarray(resolved['values'], dtype=float)

    if variant in ('gaussian', 'exp_sqrt', 'rational'):
        matrix = np.asarray(resolved['M'], dtype=float)
        if matrix.ndim == 0:
            if not matrix >= 0:
                raise KernelConstraintError(f"{variant} requiere M ≥ 0", variant=variant, key='M')
        elif matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or not np.allclose(matrix, matrix.T):
            raise KernelConstraintError(f"{variant} requiere M simétrica", variant=variant, key='M')
        elif np.linalg.eigvalsh(matrix).min() < -M_EIGEN_TOL * max(1.0, float(np.abs(matrix).max())):
            raise KernelConstraintError(f"{variant} requiere M semidefinida positiva", variant=variant, key='M')
        resolved['M'] = matrix
    return resolved


def _quadratic_form(x, matrix):
    if matrix.ndim == 0:
        return float(matrix) * np.sum(x * x, axis=1)
    return np.einsum('ij,jk,ik->i', x, matrix, x)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """
    Especificación de un núcleo w(x, y) = scale · J(x − y − shift)

    Args:
        variant: Nombre de la variante del catálogo
        params: Parámetros de la variante
        scale: Multiplicador real
        shift: Traslación s (tupla vacía = sin traslación)
    """
    variant: str
    params: dict = field(default_factory=dict)
    scale: float = 1.0
    shift: tuple = ()

    def __post_init__(self):
        resolved = _validate_params(self.variant, dict(self.params or {}))
        object.__setattr__(self, 'params', resolved)
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'shift', tuple(float(s) for s in (self.shift or ())))
        if not math.isfinite(self.scale):
            raise KernelConstraintError("scale debe ser finito", key='scale')
        if self.variant == 'table' and any(self.shift):
            raise KernelConstraintError("Un núcleo tabulado no admite shift", key='shift')

    @property
    def shift_invariant(self):
        return self.variant != 'table'

    def check_dimension(self, dimension):
        if self.shift and len(self.shift) != dimension:
            raise GridMismatchError(
                f"shift tiene {len(self.shift)} componentes y la malla dimensión {dimension}",
                key='shift',
            )
        matrix = self.params.get('M')
        if matrix is not None and matrix.ndim == 2 and matrix.shape[0] != dimension:
            raise GridMismatchError(f"M debe ser {dimension}×{dimension}", key='M')
        if self.variant == 'cosine_sum' and self.params['m'].shape[1] not in (1, dimension):
            raise GridMismatchError(f"Los vectores mᵢ deben tener dimensión {dimension}", key='m')
        if dimension == 1:
            return
        # Perfiles radiales: las cotas de parámetros dependen de la dimensión
        if self.variant == 'damped_trig':
            raise KernelConstraintError(
                f"damped_trig sólo está definido en dimensión 1 (d={dimension})", variant='damped_trig', key='d'
            )
        if self.variant == 'mexican_hat2':
            a, s = float(self.params['A']), float(self.params['s'])
            upper = math.sqrt(2) * a ** (-1.0 / dimension)
            if s > upper:
                raise KernelConstraintError(
                    f"mexican_hat2 en dimensión {dimension} requiere s ≤ √2·A^(-1/d) = {upper:.6g} (s={s})",
                    variant='mexican_hat2', key='s',
                )
        if self.variant == 'mexican_hat3':
            big = float(self.params['Gamma'])
            upper = (float(self.params['gamma2']) / float(self.params['gamma1'])) ** dimension
            if big > upper:
                raise KernelConstraintError(
                    f"mexican_hat3 en dimensión {dimension} requiere Γ ≤ (γ₂/γ₁)^d = {upper:.6g} (Γ={big})",
                    variant='mexican_hat3', key='Gamma',
                )

    def profile(self, offsets):
        """
        Evaluar scale · J(z − shift) para desplazamientos z

        Args:
            offsets: Arreglo (M, d) de desplazamientos x − y

        Returns:
            np.ndarray: Valores (M,)
        """
        if self.variant == 'table':
            raise KernelConstraintError("Un núcleo tabulado no tiene perfil de convolución")
        x = np.atleast_2d(np.asarray(offsets, dtype=float))
        if self.shift:
            x = x - np.asarray(self.shift)
        p = self.params
        v = self.variant
        if x.shape[1] == 1:
            r = np.abs(x[:, 0])
        else:
            r = np.sqrt(np.sum(x * x, axis=1))

        if v == 'gaussian':
            values = np.exp(-0.5 * _quadratic_form(x, p['M']))
        elif v == 'exp_sqrt':
            values = np.exp(-np.sqrt(_quadratic_form(x, p['M'])))
        elif v == 'rational':
            values = 1.0 / (1.0 + 0.5 * _quadratic_form(x, p['M']))
        elif v == 'sinc_product':
            # np.sinc es sin(πt)/(πt)
            values = np.prod(np.sinc(x / np.pi), axis=1)
        elif v == 'cosine_sum':
            m = p['m']
            if m.shape[1] == 1 and x.shape[1] > 1:
                m = np.repeat(m, x.shape[1], axis=1)
            values = np.cos(x @ m.T) @ p['a']
        elif v == 'mexican_hat':
            # (d − r²)e^{−r²/2} = −Δ e^{−r²/2}, semidefinida en toda dimensión
            r2 = r * r
            values = (x.shape[1] - r2) * np.exp(-0.5 * r2)
        elif v == 'mexican_hat2':
            r2 = r * r
            a, s = float(p['A']), float(p['s'])
            values = np.exp(-0.5 * r2) - a * np.exp(-r2 / (s * s))
        elif v == 'mexican_hat3':
            values = (
                np.exp(-float(p['gamma1']) * r)
                - float(p['Gamma']) * np.exp(-float(p['gamma2']) * r)
            )
        elif v == 'damped_trig':
            b = float(p['b'])
            values = np.exp(-b * r) * (b * np.sin(r) + np.cos(r))
        elif v == 'wizard_hat':
            values = 0.25 * (x.shape[1] - r) * np.exp(-r)
        elif v == 'constant':
            values = np.full(x.shape[0], float(p['c']))
        else:
            values = np.interp(r, p['offsets'], p['values'], right=0.0)
        return self.scale * values

    def to_dict(self):
        params = {
            k: (v.tolist() if isinstance(v, np.ndarray) and k != 'values' else v)
            for k, v in self.params.items()
        }
        if self.variant == 'table':
            params = {'values': f'<tabla {self.params["values"].shape}>'}
        elif 'values' in params:
            params['values'] = self.params['values'].tolist()
        return {
            'variant': self.variant,
            'params': params,
            'scale': self.scale,
            'shift': list(self.shift),
            'shift_invariant': self.shift_invariant,
        }


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """Realización densa del operador (Ku)ᵢ = Σⱼ Wᵢⱼ uⱼ qⱼ"""
    grid: object
    matrix: np.ndarray
    convolutional: bool = False
    spec: KernelSpec | None = None
    factor: float = 1.0

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        n = self.grid.size
        if matrix.shape != (n, n):
            raise GridMismatchError(
                f"La matriz del núcleo es {matrix.shape} y la malla tiene {n} nodos",
                expected=n, received=str(matrix.shape),
            )
        if not np.all(np.isfinite(matrix)):
            raise KernelConstraintError("La matriz del núcleo contiene valores no finitos")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'convolutional', bool(self.convolutional and self.spec is not None))

    @property
    def grid_id(self):
        return self.grid.grid_id

    @property
    def quad(self):
        return self.grid.quadrature

    def profile(self, offsets):
        return self.factor * self.spec.profile(offsets)

    @cached_property
    def _lattice(self):
        # Núcleo sobre la red de desplazamientos −(n−1)h … (n−1)h por eje
        axes = [
            np.arange(-(n - 1), n) * h for n, h in zip(self.grid.shape, self.grid.spacing)
        ]
        mesh = np.meshgrid(*axes, indexing='ij')
        offsets = np.stack([m.ravel() for m in mesh], axis=1)
        return self.profile(offsets).reshape(tuple(len(a) for a in axes))

    def use_fast_path(self, method='auto'):
        if method == 'dense':
            return False
        if method == 'fft':
            if not self.convolutional:
                raise KernelConstraintError("El camino rápido requiere un núcleo de convolución")
            return True
        return self.convolutional and self.grid.size >= FAST_PATH_MIN_NODES

    def apply_values(self, values, method='auto'):
        """Aplicar K a un arreglo (…, N) de campos"""
        weighted = np.asarray(values, dtype=float) * self.quad
        if not self.use_fast_path(method):
            return weighted @ self.matrix.T
        shape = weighted.shape[:-1] + tuple(self.grid.shape)
        lattice = self._lattice.reshape((1,) * (len(shape) - self.grid.dimension) + self._lattice.shape)
        axes = tuple(range(len(shape) - self.grid.dimension, len(shape)))
        # Convolución lineal (sin periodicidad); 'valid' recorta exactamente a la malla
        result = fftconvolve(lattice, weighted.reshape(shape), mode='valid', axes=axes)
        return result.reshape(weighted.shape)

    def __repr__(self):
        variant = self.spec.variant if self.spec else 'matrix'
        return f'<KernelOperator {variant} grid={self.grid_id} conv={self.convolutional}>'


def _verify_shift_invariance(op, pairs=64):
    grid = op.grid
    shape = grid.shape
    rng = np.random.default_rng(0)
    rows = [rng.integers(0, n - 1, size=pairs) for n in shape]
    cols = [rng.integers(0, n - 1, size=pairs) for n in shape]
    i = np.ravel_multi_index(rows, shape)
    j = np.ravel_multi_index(cols, shape)
    # Desplazar ambos índices un nodo en el primer eje conserva xᵢ − xⱼ
    step = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    diff = np.abs(op.matrix[i, j] - op.matrix[i + step, j + step])
    tolerance = 1e-9 * max(1.0, float(np.abs(op.matrix).max()))
    if diff.max() > tolerance:
        raise KernelConstraintError(
            "El núcleo declarado de convolución no es invariante por traslación",
            max_deviation=float(diff.max()),
        )


def assemble(spec, grid, block_rows=ASSEMBLY_BLOCK_ROWS):
    """
    Ensamblar la matriz Wᵢⱼ = w(xᵢ, xⱼ) por bloques de filas

    Args:
        spec: KernelSpec validada
        grid: Malla

    Returns:
        KernelOperator: Operador con la bandera de convolución según la especificación

    Raises:
        GridMismatchError: Si la tabla o los parámetros no coinciden con la malla
    """
    if spec.variant == 'table':
        values = spec.params['values']
        if values.shape != (grid.size, grid.size):
            raise GridMismatchError(
                f"La tabla del núcleo es {values.shape} y la malla tiene {grid.size} nodos",
                expected=grid.size,
            )
        return KernelOperator(grid, spec.scale * values, convolutional=False, spec=spec)

    spec.check_dimension(grid.dimension)
    nodes = grid.nodes
    n, d = nodes.shape
    matrix = np.empty((n, n))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        offsets = nodes[start:stop, None, :] - nodes[None, :, :]
        matrix[start:stop] = spec.profile(offsets.reshape(-1, d)).reshape(stop - start, n)
    op = KernelOperator(grid, matrix, convolutional=True, spec=spec)
    _verify_shift_invariance(op)
    logger.debug(
        f"Núcleo {spec.variant} ensamblado: {n}×{n}, camino rápido={op.use_fast_path()}"
    )
    return op


def apply(K, u, method='auto'):
    """
    Aplicar el operador de núcleo a un campo (cuadratura de Lebesgue, independiente de ρ)

    Raises:
        GridMismatchError: Si el campo no está sobre la malla del núcleo
    """
    check_same_grid(K, u)
    return Field(K.grid, K.apply_values(u.values, method=method))


def scaled(K, c):
    """Devolver c·K conservando la especificación"""
    return KernelOperator(K.grid, float(c) * K.matrix, K.convolutional, K.spec, K.factor * float(c))


def read_kernel_table(path, grid):
    """
    Leer un núcleo tabulado desde archivo

    Formatos: CSV de tripletas (i, j, value) con cabecera, o matriz densa cuya
    primera línea es la cabecera `n d h`.

    Returns:
        np.ndarray: Matriz (N, N)
    """
    path = Path(path)
    try:
        if path.suffix.lower() == '.csv':
            triples = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
            matrix = np.zeros((grid.size, grid.size))
            rows = triples[:, 0].astype(int)
            cols = triples[:, 1].astype(int)
            if rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= grid.size:
                raise GridMismatchError(f"Índices fuera de la malla en {path.name}", key='kernel.file')
            matrix[rows, cols] = triples[:, 2]
            return matrix
        with path.open(encoding='utf-8') as handle:
            header = handle.readline().replace(',', ' ').split()
            matrix = np.loadtxt(handle, ndmin=2)
    except OSError as e:
        raise FieldLabError(f"Error al leer la tabla del núcleo: {str(e)}", key='kernel.file')
    n, d, h = int(header[0]), int(header[1]), float(header[2])
    if n != grid.size or d != grid.dimension or not math.isclose(h, grid.spacing[0], rel_tol=1e-9):
        raise GridMismatchError(
            f"La cabecera (n={n}, d={d}, h={h}) no coincide con la malla", key='kernel.file'
        )
    if matrix.shape != (n, n):
        raise GridMismatchError(f"La tabla densa debe ser {n}×{n}", key='kernel.file')
    return matrix


@dataclass(frozen=True)
class OperatorNorm:
    """Norma discreta ‖K‖_{L(H)} con las cotas analíticas aplicables"""
    value: float
    method: str
    bounds: dict = field(default_factory=dict)
    holds: dict = field(default_factory=dict)
    rigorous: tuple = ()

    def __float__(self):
        return self.value

    def to_dict(self):
        return {
            'value': self.value,
            'method': self.method,
            'bounds': dict(self.bounds),
            'holds': dict(self.holds),
            'rigorous': list(self.rigorous),
        }


def _largest_singular_value(matrix, method):
    if not np.any(matrix):
        return 0.0
    if method == 'svd' or min(matrix.shape) <= 2:
        return float(svdvals(matrix)[0])
    start = np.ones(min(matrix.shape)) / math.sqrt(min(matrix.shape))
    value = svds(matrix, k=1, tol=1e-14, v0=start, return_singular_vectors=False)
    return float(value[0])


def operator_norm(K, w, method='svd', maximal_constant=None, a2_levels=DEFAULT_A2_LEVELS, tol=1e-8):
    """
    Norma de operador de K en (H, ‖·‖_ρ)

    Es el mayor valor singular de R A R⁻¹ con A = W·diag(q), R = diag(√(ρq)),
    restringido al soporte de ρ. Se reportan además √κ (ρ ≡ 1),
    K_{Λ,ρ} = (Λ‖ρ⁻¹‖_{L¹})^{1/2} (ρ > 0) y K_ρ (núcleo de convolución con ρ > 0).
    √κ y K_{Λ,ρ} son cotas rigurosas del operador discreto; K_ρ depende de la
    constante maximal y se trata como heurística.

    Args:
        K: Operador de núcleo
        w: Peso
        method: 'svd' (denso) o 'power' (ARPACK)
        maximal_constant: Constante de la cota maximal para K_ρ
        a2_levels: Refinamientos diádicos para la cota A₂
        tol: Tolerancia relativa al comparar contra las cotas

    Returns:
        OperatorNorm: Valor, cotas y banderas de cumplimiento

    Raises:
        DegenerateWeightError: Si ρ ≡ 0
        BoundViolationError: Si una cota rigurosa falla
    """
    check_same_grid(K, w)
    if method not in ('svd', 'power'):
        raise FieldLabError(f"Método de norma desconocido: {method}", method=method)
    support = w.values > 0
    if not support.any():
        raise DegenerateWeightError("Peso idénticamente nulo: el espacio H es trivial")
    q = K.quad[support]
    r = np.sqrt(w.rho_q[support])
    coefficient = K.matrix[np.ix_(support, support)] * q[None, :]
    similar = r[:, None] * coefficient / r[None, :]
    value = _largest_singular_value(similar, method)

    bounds, rigorous = {}, []
    if w.is_unit:
        bounds['sqrt_kappa'] = math.sqrt(kappa_value(K))
        rigorous.append('sqrt_kappa')
    if w.positive:
        bounds['K_Lambda_rho'] = math.sqrt(lambda_value(K, w) * w.inverse_mass)
        rigorous.append('K_Lambda_rho')
        if K.convolutional:
            constant = DEFAULT_MAXIMAL_CONSTANT if maximal_constant is None else float(maximal_constant)
            a2 = estimate_a2_constant(w, K.grid, a2_levels)
            bounds['K_rho'] = constant * a2 * majorant_l1(K, K.grid.diameter)

    holds = {}
    for name, bound in bounds.items():
        holds[name] = value <= bound * (1 + tol) + tol
        if holds[name]:
            continue
        if name in rigorous:
            raise BoundViolationError(
                f"La norma {value:.10g} excede la cota {name} = {bound:.10g}",
                bound=name, value=value, limit=bound,
            )
        message = f"La norma {value:.10g} excede la cota heurística {name} = {bound:.10g}"
        logger.warning(message)
        warnings.warn(message, BoundWarning, stacklevel=2)
    return OperatorNorm(value=value, method=method, bounds=bounds, holds=holds, rigorous=tuple(rigorous))


@dataclass(frozen=True, eq=False)
class SymDecomposition:
    """Partes simétrica Ŵ y antisimétrica W̌ con el veredicto de definitud"""
    grid: object
    weight: object
    sym: np.ndarray
    antisym: np.ndarray
    definiteness: str
    lambda_min: float
    lambda_max: float
    tolerance: float
    rank: int

    @property
    def is_symmetric(self):
        return not np.any(self.antisym)

    @property
    def sign(self):
        return {'non_negative': 1, 'non_positive': -1}.get(self.definiteness)

    def form_matrix(self):
        s = np.sqrt(self.weight.rho_q)
        return s[:, None] * self.sym * s[None, :]

    def to_dict(self):
        return {
            'definiteness': self.definiteness,
            'lambda_min': self.lambda_min,
            'lambda_max': self.lambda_max,
            'tolerance': self.tolerance,
            'rank': self.rank,
            'symmetric': self.is_symmetric,
            'antisymmetric_max': float(np.abs(self.antisym).max()),
            # Con ρ variable los autovalores son los del operador ponderado, no los de K̂
            'weight_constant': self.weight.is_constant,
        }


def decompose(K, w, tol=1e-8, rank_tol=1e-10):
    """
    Separar Ŵ = (W + Wᵀ)/2 y W̌ = W − Ŵ y clasificar la forma cuadrática

    El veredicto sale de los autovalores de G = Dρ^{1/2} Ŵ Dρ^{1/2} con
    Dρ = diag(ρq). Una forma nula se reporta como non_negative de rango 0.

    Returns:
        SymDecomposition: Partes, veredicto y autovalores extremos
    """
    check_same_grid(K, w)
    sym = 0.5 * (K.matrix + K.matrix.T)
    antisym = K.matrix - sym
    s = np.sqrt(w.rho_q)
    eigenvalues = eigvalsh(s[:, None] * sym * s[None, :])
    lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    top = float(np.abs(eigenvalues).max())
    rank = int(np.count_nonzero(np.abs(eigenvalues) > rank_tol * top)) if top > 0 else 0

    if lam_min >= -tol * max(1.0, lam_max):
        verdict = 'non_negative'
    elif lam_max <= tol * max(1.0, abs(lam_min)):
        verdict = 'non_positive'
    else:
        verdict = 'indefinite'
    logger.info(
        f"Definitud {verdict}: λ_min={lam_min:.6g} λ_max={lam_max:.6g} rango={rank} (tol={tol:g})"
    )
    sym.setflags(write=False)
    antisym.setflags(write=False)
    return SymDecomposition(
        grid=K.grid, weight=w, sym=sym, antisym=antisym, definiteness=verdict,
        lambda_min=lam_min, lambda_max=lam_max, tolerance=tol, rank=rank,
    )
