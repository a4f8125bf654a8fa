"""Espacios de funciones discretizados con peso: mallas, cuadratura y pesos.

Toda constante discreta (productos internos, masas, κ, Λ) usa la regla
trapezoidal compuesta: los nodos de frontera llevan peso h/2 por eje.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import qr, solve_triangular

from fieldlab.errors import (
    DegenerateWeightError,
    FieldLabError,
    GridMismatchError,
    ModeCountError,
)

logger = logging.getLogger(__name__)

DEFAULT_A2_LEVELS = 8


def _readonly(values):
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Grid:
    """
    Malla uniforme de la caja U = ∏ [aₖ, bₖ] con n ≥ 2 puntos por eje

    Args:
        bounds: Intervalo cerrado por eje
        points_per_axis: Número de nodos por eje
        truncated: True cuando la caja trunca ℝᵈ (casos (ii)/(iii))
    """
    bounds: tuple
    points_per_axis: tuple
    truncated: bool = False

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        points = tuple(int(n) for n in self.points_per_axis)
        if len(bounds) not in (1, 2):
            raise GridMismatchError(
                f"Solo se admiten dimensiones 1 o 2 (se recibió d={len(bounds)})",
                dimension=len(bounds),
            )
        if len(points) != len(bounds):
            raise GridMismatchError(
                "points_per_axis y bounds deben tener la misma longitud",
                bounds=len(bounds), points=len(points),
            )
        for axis, ((a, b), n) in enumerate(zip(bounds, points)):
            if not (math.isfinite(a) and math.isfinite(b)) or not b > a:
                raise GridMismatchError(
                    f"Intervalo inválido en el eje {axis}: [{a}, {b}]", axis=axis
                )
            if n < 2:
                raise GridMismatchError(
                    f"Se requieren al menos 2 puntos en el eje {axis}", axis=axis, points=n
                )
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'points_per_axis', points)
        object.__setattr__(self, 'truncated', bool(self.truncated))

    @classmethod
    def uniform(cls, bounds, points, truncated=False):
        """Construir una malla con el mismo número de puntos en todos los ejes si `points` es entero"""
        bounds = tuple(tuple(b) for b in bounds)
        if isinstance(points, (int, np.integer)):
            points = (int(points),) * len(bounds)
        return cls(bounds=bounds, points_per_axis=tuple(points), truncated=truncated)

    @property
    def dimension(self):
        return len(self.bounds)

    @property
    def shape(self):
        return self.points_per_axis

    @property
    def size(self):
        return int(np.prod(self.points_per_axis))

    @cached_property
    def spacing(self):
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.bounds, self.points_per_axis))

    @cached_property
    def axes(self):
        return tuple(
            _readonly(np.linspace(a, b, n)) for (a, b), n in zip(self.bounds, self.points_per_axis)
        )

    @cached_property
    def nodes(self):
        # Orden lexicográfico: el primer eje varía más lento
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return _readonly(np.stack([m.ravel() for m in mesh], axis=1))

    @cached_property
    def quadrature(self):
        weights = []
        for h, n in zip(self.spacing, self.points_per_axis):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2
            weights.append(w)
        q = weights[0]
        for w in weights[1:]:
            q = np.multiply.outer(q, w)
        return _readonly(np.ascontiguousarray(q).ravel())

    @property
    def diameter(self):
        return math.sqrt(sum((b - a) ** 2 for a, b in self.bounds))

    @property
    def truncation_radius(self):
        if not self.truncated:
            return None
        return max(max(abs(a), abs(b)) for a, b in self.bounds)

    @cached_property
    def grid_id(self):
        digest = hashlib.sha1(repr((self.bounds, self.points_per_axis)).encode()).hexdigest()
        return digest[:12]

    def to_dict(self):
        """Convertir la malla a diccionario"""
        return {
            'grid_id': self.grid_id,
            'dimension': self.dimension,
            'bounds': [list(b) for b in self.bounds],
            'points_per_axis': list(self.points_per_axis),
            'spacing': list(self.spacing),
            'nodes': self.size,
            'truncated': self.truncated,
            'truncation_radius': self.truncation_radius,
        }

    def __repr__(self):
        return f'<Grid d={self.dimension} n={self.points_per_axis} {self.bounds}>'


def check_same_grid(*items):
    """
    Verificar que todos los objetos viven sobre la misma malla

    Raises:
        GridMismatchError: Si alguna malla difiere
    """
    grids = [item.grid if hasattr(item, 'grid') else item for item in items]
    reference = grids[0]
    for other in grids[1:]:
        if other != reference:
            raise GridMismatchError(
                "Los objetos están definidos sobre mallas distintas",
                expected=reference.grid_id, received=other.grid_id,
            )
    return reference


@dataclass(frozen=True, eq=False)
class Weight:
    """Función peso ρ ≥ 0 muestreada en los nodos; define H = L²(U, ρ)"""
    grid: Grid
    values: np.ndarray
    label: str = 'table'

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.size:
            raise GridMismatchError(
                f"El peso tiene {values.size} valores y la malla {self.grid.size} nodos",
                expected=self.grid.size, received=values.size,
            )
        if not np.all(np.isfinite(values)):
            raise DegenerateWeightError("El peso contiene valores no finitos")
        if np.any(values < 0):
            raise DegenerateWeightError("El peso debe ser no negativo", minimum=float(values.min()))
        object.__setattr__(self, 'values', _readonly(values))

    @classmethod
    def const(cls, grid, value=1.0):
        return cls(grid, np.full(grid.size, float(value)), label=f'const({value})')

    @classmethod
    def abs_pow(cls, grid, exponent, center=None):
        """ρ(x) = |x − c|^a con la norma euclídea"""
        center = np.zeros(grid.dimension) if center is None else np.asarray(center, dtype=float)
        radius = np.linalg.norm(grid.nodes - center, axis=1)
        with np.errstate(divide='ignore'):
            values = radius ** float(exponent)
        if not np.all(np.isfinite(values)):
            raise DegenerateWeightError(
                f"abs_pow con exponente {exponent} no es finito en el centro; desplace la malla",
                exponent=exponent,
            )
        return cls(grid, values, label=f'abs_pow({exponent})')

    @classmethod
    def table(cls, grid, values):
        return cls(grid, values, label='table')

    @cached_property
    def rho_q(self):
        return _readonly(self.values * self.grid.quadrature)

    @cached_property
    def mass(self):
        return float(np.sum(self.rho_q))

    @property
    def positive(self):
        return bool(np.all(self.values > 0))

    @property
    def is_constant(self):
        return bool(np.all(self.values == self.values[0]))

    @cached_property
    def inverse_mass(self):
        if not self.positive:
            return None
        return float(np.sum(self.grid.quadrature / self.values))

    @property
    def is_unit(self):
        return bool(np.all(self.values == 1.0))

    def to_dict(self):
        return {
            'label': self.label,
            'mass': self.mass,
            'inverse_mass': self.inverse_mass,
            'min': float(self.values.min()),
            'max': float(self.values.max()),
        }


@dataclass(frozen=True, eq=False)
class Field:
    """Campo real sobre los nodos de una malla (unidades de voltaje)"""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.size:
            raise GridMismatchError(
                f"El campo tiene {values.size} valores y la malla {self.grid.size} nodos",
                expected=self.grid.size, received=values.size,
            )
        if not np.all(np.isfinite(values)):
            raise FieldLabError("El campo contiene valores no finitos")
        object.__setattr__(self, 'values', _readonly(values))

    @property
    def grid_id(self):
        return self.grid.grid_id

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.size, float(value)))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def from_function(cls, grid, function):
        """Evaluar `function(x₁[, x₂])` en los nodos"""
        coords = [grid.nodes[:, k] for k in range(grid.dimension)]
        return cls(grid, np.broadcast_to(function(*coords), (grid.size,)))

    def __add__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return Field(self.grid, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f'<Field grid={self.grid_id} n={self.values.size}>'


def inner_product(u, v, w):
    """
    Producto interno ⟨u, v⟩ = Σᵢ uᵢ vᵢ ρᵢ qᵢ

    Raises:
        GridMismatchError: Si u, v y w no comparten malla
    """
    check_same_grid(u, v, w)
    return float(np.dot(u.values * v.values, w.rho_q))


def weighted_norm(u, w):
    """Norma ‖u‖ = ⟨u, u⟩^{1/2}"""
    check_same_grid(u, w)
    return math.sqrt(max(float(np.dot(u.values * u.values, w.rho_q)), 0.0))


def norms(values, w):
    """Normas ponderadas a lo largo del último eje de un arreglo (…, N)"""
    return np.sqrt(np.maximum((values * values) @ w.rho_q, 0.0))


def cosine_modes(grid, w, m):
    """
    Campos coseno ρ-ortonormales (ortogonalizados con QR ponderado)

    Args:
        grid: Malla
        w: Peso
        m: Número de modos

    Returns:
        np.ndarray: Matriz (N, m), una columna por modo

    Raises:
        ModeCountError: Si m no es compatible con la malla
    """
    check_same_grid(grid, w)
    if m < 1 or m > grid.size:
        raise ModeCountError(f"Se pidieron {m} modos para {grid.size} nodos", modes=m)
    if grid.dimension == 1:
        index_pairs = [(k,) for k in range(m)]
    else:
        limit = int(math.ceil(math.sqrt(2 * m))) + 1
        pairs = [(i, j) for i in range(limit) for j in range(limit)]
        index_pairs = sorted(pairs, key=lambda p: (p[0] + p[1], p[0]))[:m]
    raw = np.ones((grid.size, m))
    for col, ks in enumerate(index_pairs):
        for axis, k in enumerate(ks):
            a, b = grid.bounds[axis]
            raw[:, col] *= np.cos(k * np.pi * (grid.nodes[:, axis] - a) / (b - a))
    scaled = np.sqrt(w.rho_q)[:, None] * raw
    _, r = qr(scaled, mode='economic')
    if np.any(np.abs(np.diag(r)) <= 1e-12 * np.abs(r).max()):
        raise ModeCountError("Los modos coseno son linealmente dependientes en el soporte de ρ", modes=m)
    modes = solve_triangular(r, raw.T, trans='T', lower=False).T
    return modes * np.sign(np.diag(r))[None, :]


def _cell_values(array):
    if array.ndim == 1:
        return (array[:-1] + array[1:]) / 2
    return (array[:-1, :-1] + array[1:, :-1] + array[:-1, 1:] + array[1:, 1:]) / 4


def _box_averages(cells, sides):
    table = np.zeros(tuple(s + 1 for s in cells.shape))
    if cells.ndim == 1:
        table[1:] = np.cumsum(cells)
        (s,) = sides
        return (table[s:] - table[:-s]) / s
    table[1:, 1:] = np.cumsum(np.cumsum(cells, axis=0), axis=1)
    s0, s1 = sides
    sums = table[s0:, s1:] - table[:-s0, s1:] - table[s0:, :-s1] + table[:-s0, :-s1]
    return sums / (s0 * s1)


def estimate_a2_constant(w, grid, max_levels=DEFAULT_A2_LEVELS):
    """
    Cota inferior de la constante de Muckenhoupt [ρ]_{A₂}

    Recorre las subcajas diádicas de la caja (hasta `max_levels` refinamientos)
    con todas sus traslaciones alineadas a la malla y devuelve el máximo de
    (promedio ρ)(promedio ρ⁻¹). Los promedios de celda usan los vértices.

    Args:
        w: Peso estrictamente positivo
        grid: Malla de w
        max_levels: Número de refinamientos diádicos (≥ 1)

    Returns:
        float: Cota inferior de [ρ]_{A₂}; igual a 1.0 para pesos constantes

    Raises:
        DegenerateWeightError: Si algún ρᵢ = 0
    """
    check_same_grid(grid, w)
    if max_levels < 1:
        raise FieldLabError("max_levels debe ser ≥ 1", max_levels=max_levels)
    if np.any(w.values == 0):
        raise DegenerateWeightError(
            "El peso se anula en algún nodo; [ρ]_{A₂} no está definido",
            zero_nodes=int(np.count_nonzero(w.values == 0)),
        )
    # A₂ es invariante por escala: normalizar deja los pesos constantes en 1.0 exacto
    rho = (w.values / w.values.max()).reshape(grid.shape)
    cells_rho = _cell_values(rho)
    cells_inv = _cell_values(1.0 / rho)
    best = 0.0
    seen = set()
    for level in range(max_levels + 1):
        sides = tuple(max(1, (n - 1) // 2 ** level) for n in grid.shape)
        if sides in seen:
            continue
        seen.add(sides)
        products = _box_averages(cells_rho, sides) * _box_averages(cells_inv, sides)
        best = max(best, float(products.max()))
    return best


def majorant_l1(kernel, radius, samples=4097, directions=16):
    """
    Norma L¹ del mayorante radialmente decreciente J₀ de un núcleo de convolución

    J₀(r) = sup_{|x| ≥ r} |J(x)| se evalúa hasta `radius` (el diámetro de la
    caja basta: el operador discreto no ve desplazamientos mayores).

    Returns:
        float | None: ‖J₀‖_{L¹} truncada o None si el núcleo no tiene perfil
    """
    if not getattr(kernel, 'convolutional', False):
        return None
    d = kernel.grid.dimension
    r = np.linspace(0.0, radius, samples)
    if d == 1:
        offsets = np.concatenate([r, -r])[:, None]
        values = np.abs(kernel.profile(offsets)).reshape(2, samples).max(axis=0)
    else:
        angles = np.linspace(0.0, 2 * np.pi, directions, endpoint=False)
        offsets = np.stack([np.outer(np.cos(angles), r), np.outer(np.sin(angles), r)], axis=-1)
        values = np.abs(kernel.profile(offsets.reshape(-1, 2))).reshape(directions, samples).max(axis=0)
    envelope = np.maximum.accumulate(values[::-1])[::-1]
    if d == 1:
        return float(2.0 * trapezoid(envelope, r))
    return float(2.0 * np.pi * trapezoid(r * envelope, r))


@dataclass(frozen=True)
class CaseReport:
    """Diagnóstico de los casos (i)/(ii)/(iii) sobre los datos discretizados"""
    case_i: bool
    case_ii: bool
    case_iii: bool
    reasons: dict = field(default_factory=dict)
    kappa: float = 0.0
    Lambda: float = 0.0
    mass: float = 0.0
    inverse_mass: float | None = None
    a2_lower_bound: float | None = None
    majorant_l1: float | None = None
    truncation_radius: float | None = None

    def to_dict(self):
        return {
            'case_i': self.case_i,
            'case_ii': self.case_ii,
            'case_iii': self.case_iii,
            'reasons': {k: list(v) for k, v in self.reasons.items()},
            'kappa': self.kappa,
            'Lambda': self.Lambda,
            'rho_l1': self.mass,
            'rho_inverse_l1': self.inverse_mass,
            'a2_lower_bound': self.a2_lower_bound,
            'majorant_l1': self.majorant_l1,
            'truncation_radius': self.truncation_radius,
        }


def kappa_value(kernel):
    """κ = ΣᵢΣⱼ wᵢⱼ² qᵢ qⱼ"""
    q = kernel.grid.quadrature
    return float(q @ (kernel.matrix ** 2) @ q)


def lambda_value(kernel, w):
    """Λ = Σᵢ maxⱼ |wᵢⱼ|² ρᵢ qᵢ"""
    return float(np.max(kernel.matrix ** 2, axis=1) @ w.rho_q)


def case_diagnostics(grid, w, kernel, a2_levels=DEFAULT_A2_LEVELS):
    """
    Reportar qué casos de la hipótesis sobre espacios se cumplen

    Nunca lanza por condiciones insatisfechas: las marca en `reasons`.

    Args:
        grid: Malla
        w: Peso
        kernel: Operador de núcleo ensamblado sobre la malla

    Returns:
        CaseReport: Casos satisfechos y constantes κ, Λ, masas y cota A₂
    """
    check_same_grid(grid, w, kernel)
    kappa = kappa_value(kernel)
    big_lambda = lambda_value(kernel, w)
    mass = w.mass
    inverse_mass = w.inverse_mass
    positive = w.positive

    a2 = estimate_a2_constant(w, grid, a2_levels) if positive else None
    majorant = majorant_l1(kernel, grid.diameter) if kernel.convolutional else None

    reasons = {'case_i': [], 'case_ii': [], 'case_iii': []}
    if grid.truncated:
        reasons['case_i'].append('la caja trunca ℝᵈ (dominio no acotado)')
    if not w.is_unit:
        reasons['case_i'].append('ρ no es idénticamente 1')
    if not math.isfinite(kappa):
        reasons['case_i'].append('κ no es finito')

    if not grid.truncated:
        reasons['case_ii'].append('el dominio es acotado (caso (ii) requiere U = ℝᵈ)')
    if not kernel.convolutional:
        reasons['case_ii'].append('el núcleo no es de convolución')
    if not positive:
        reasons['case_ii'].append('ρ se anula en algún nodo')
    if not math.isfinite(mass):
        reasons['case_ii'].append('‖ρ‖_{L¹} no es finita')
    if a2 is None or not math.isfinite(a2):
        reasons['case_ii'].append('[ρ]_{A₂} no disponible')
    if majorant is None or not math.isfinite(majorant):
        reasons['case_ii'].append('mayorante radial sin norma L¹ finita')

    if not positive:
        reasons['case_iii'].append('ρ > 0 c.t.p. falla')
    if inverse_mass is None or not math.isfinite(inverse_mass):
        reasons['case_iii'].append('‖ρ⁻¹‖_{L¹} no disponible')
    if not math.isfinite(big_lambda):
        reasons['case_iii'].append('Λ no es finito')

    report = CaseReport(
        case_i=not reasons['case_i'],
        case_ii=not reasons['case_ii'],
        case_iii=not reasons['case_iii'],
        reasons=reasons,
        kappa=kappa,
        Lambda=big_lambda,
        mass=mass,
        inverse_mass=inverse_mass,
        a2_lower_bound=a2,
        majorant_l1=majorant,
        truncation_radius=grid.truncation_radius,
    )
    logger.debug(
        f"Casos: (i)={report.case_i} (ii)={report.case_ii} (iii)={report.case_iii} κ={kappa:.6g}"
    )
    return report
