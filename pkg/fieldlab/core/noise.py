"""Coeficientes de ruido B: H → L₂(V, H) sobre un truncamiento finito de modos.

Variantes:
    additive          B(u)ξ = Σₖ σₖ ξₖ φₖ
    pointwise         B(u)ξ = b(u) ⊙ ξ, con modos nodales (V = ℝᴺ)
    kernel_mollified  B(u)ξ = K(√f(u) ⊙ ξ/√q)/√N, modos de ruido blanco δⱼ/√qⱼ
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import nnls

from fieldlab.core.activation import lipschitz_data, root_activation
from fieldlab.core.kernel import operator_norm
from fieldlab.core.space import Field, check_same_grid, cosine_modes, norms
from fieldlab.errors import (
    BoundViolationError,
    ConfigurationError,
    MissingMetricError,
    ModeCountError,
)

logger = logging.getLogger(__name__)

VARIANTS = ('additive', 'pointwise', 'kernel_mollified')
BASES = ('cosine', 'constant', 'eigen', 'table')
AUDIT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class NoiseModel:
    variant: str
    weight: object
    m_modes: int
    sigma: np.ndarray | None = None
    modes: np.ndarray | None = None
    scalar_map: object = None
    kernel: object = None
    root: object = None
    population: float | None = None
    basis: str = 'node'

    @property
    def grid(self):
        return self.weight.grid

    @property
    def is_additive(self):
        return self.variant == 'additive'

    def _check_modes(self, xi):
        if np.shape(xi)[-1] != self.m_modes:
            raise ModeCountError(
                f"Se esperaban {self.m_modes} coeficientes de modo y llegaron {np.shape(xi)[-1]}",
                expected=self.m_modes, received=int(np.shape(xi)[-1]),
            )

    def apply_values(self, values, xi):
        """B(u)ξ para lotes: values (…, N) y xi (…, m) compatibles por broadcasting"""
        self._check_modes(xi)
        if self.variant == 'additive':
            return (xi * self.sigma) @ self.modes.T
        if self.variant == 'pointwise':
            return self.scalar_map(values) * xi
        amplitude = self.root(values) * xi / self._sqrt_q
        return self.kernel.apply_values(amplitude) / math.sqrt(self.population)

    def hs_sq_values(self, values):
        """‖B(u)‖²_{L₂(V,H)} para un lote (…, N)"""
        if self.variant == 'additive':
            return np.broadcast_to(self._additive_hs_sq, np.shape(values)[:-1]).copy()
        if self.variant == 'pointwise':
            b = self.scalar_map(values)
            return (b * b) @ self.weight.rho_q
        g = self.root(values)
        return (g * g) @ self._mollified_column_weights / self.population

    def hs_diff_sq_values(self, values, others):
        """‖B(u) − B(v)‖²_{L₂(V,H)} para lotes emparejados"""
        if self.variant == 'additive':
            return np.zeros(np.shape(values)[:-1])
        if self.variant == 'pointwise':
            diff = self.scalar_map(values) - self.scalar_map(others)
            return (diff * diff) @ self.weight.rho_q
        diff = self.root(values) - self.root(others)
        return (diff * diff) @ self._mollified_column_weights / self.population

    def column_matrix(self, values):
        """Columnas B(u)vₖ como matriz (N, m) para un único campo"""
        if self.variant == 'additive':
            return self.modes * self.sigma[None, :]
        if self.variant == 'pointwise':
            return np.diag(self.scalar_map(values))
        amplitude = self.root(values) * self._sqrt_q / math.sqrt(self.population)
        return self.kernel.matrix * amplitude[None, :]

    @cached_property
    def _sqrt_q(self):
        return np.sqrt(self.grid.quadrature)

    @cached_property
    def _column_norms_sq(self):
        # ‖w(·, yⱼ)‖²_ρ por columna
        return (self.kernel.matrix ** 2).T @ self.weight.rho_q

    @property
    def _mollified_column_weights(self):
        return self.grid.quadrature * self._column_norms_sq

    @property
    def _additive_hs_sq(self):
        return float(np.sum(self.sigma ** 2 * norms(self.modes.T, self.weight) ** 2))

    def describe(self):
        data = {'variant': self.variant, 'm_modes': self.m_modes, 'basis': self.basis}
        if self.variant == 'additive':
            data['sigma'] = self.sigma.tolist()
        elif self.variant == 'pointwise':
            data['map'] = self.scalar_map.to_dict()
        else:
            data['population'] = self.population
            data['root'] = self.root.to_dict()
        return data


def additive_noise(weight, sigma, basis='cosine', metric=None, table=None):
    """
    Ruido aditivo con coeficientes σₖ sobre una base de modos

    Args:
        sigma: Coeficientes por modo (su longitud fija m)
        basis: 'cosine', 'constant', 'eigen' (autocampos de la métrica) o 'table'
        metric: Requerida para basis='eigen'
        table: Matriz (N, m) para basis='table'
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    m = sigma.size
    grid = weight.grid
    if basis == 'cosine':
        modes = cosine_modes(grid, weight, m)
    elif basis == 'constant':
        if m != 1:
            raise ModeCountError("La base constante tiene un único modo", modes=m)
        modes = np.ones((grid.size, 1))
    elif basis == 'eigen':
        if metric is None:
            raise MissingMetricError("La base 'eigen' requiere una métrica no local")
        if m > metric.rank:
            raise ModeCountError(f"Se pidieron {m} modos y H₁ tiene rango {metric.rank}", modes=m)
        modes = np.array(metric.eigenvectors[:, :m])
    elif basis == 'table':
        modes = np.asarray(table, dtype=float)
        if modes.ndim == 1:
            modes = modes[:, None]
        if modes.shape != (grid.size, m):
            raise ModeCountError(
                f"La tabla de modos es {modes.shape}; se esperaba ({grid.size}, {m})", modes=m
            )
    else:
        raise ConfigurationError(f"Base de modos desconocida: {basis}", key='noise.basis')
    modes.setflags(write=False)
    sigma.setflags(write=False)
    logger.debug(f"Ruido aditivo: {m} modos, base {basis}")
    return NoiseModel('additive', weight, m, sigma=sigma, modes=modes, basis=basis)


def pointwise_noise(weight, scalar_map):
    """Ruido multiplicativo nodal B(u)ξ = b(u) ⊙ ξ con m = N"""
    return NoiseModel('pointwise', weight, weight.grid.size, scalar_map=scalar_map, basis='node')


def mollified_noise(kernel, weight, activation, population):
    """
    Ruido molificado por el núcleo con escala 1/√N

    Raises:
        IneligibleActivationError: Si √f no es Lipschitz certificable
    """
    check_same_grid(kernel, weight)
    if not population > 0:
        raise ConfigurationError("La escala de población N debe ser positiva", key='noise.population')
    root = root_activation(activation)
    return NoiseModel(
        'kernel_mollified', weight, weight.grid.size, kernel=kernel, root=root,
        population=float(population), basis='white_node',
    )


def apply_noise(B, u, xi):
    """
    Campo B(u)ξ

    Raises:
        ModeCountError: Si len(xi) ≠ m_modes
    """
    check_same_grid(B, u)
    xi = np.asarray(xi, dtype=float)
    return Field(u.grid, B.apply_values(u.values, xi))


def hs_norm(B, u):
    """Norma de Hilbert–Schmidt ‖B(u)‖_{L₂(V,H)}"""
    check_same_grid(B, u)
    return math.sqrt(max(float(B.hs_sq_values(u.values)), 0.0))


@dataclass(frozen=True)
class NoiseConstants:
    C_B: float
    B0: float
    C_B_tilde: float | None = None
    C_B_tilde2: float | None = None
    h1_supported: bool | None = None
    fit_residual: float | None = None
    sampled_ratio_max: float = 0.0
    operator_norm_bound: float | None = None
    h1_lipschitz_sq: float | None = None
    provenance: dict = field(default_factory=dict)
    m_modes: int = 0
    basis: str = ''

    @classmethod
    def zero(cls):
        """Constantes de B = 0"""
        return cls(
            C_B=0.0, B0=0.0, C_B_tilde=0.0, C_B_tilde2=0.0, h1_supported=True,
            fit_residual=0.0, h1_lipschitz_sq=0.0,
            provenance={'C_B': 'exact', 'B0': 'exact', 'C_B_tilde': 'exact', 'C_B_tilde2': 'exact'},
        )

    def to_dict(self):
        return {
            'C_B': self.C_B,
            'B0': self.B0,
            'C_B_tilde': self.C_B_tilde,
            'C_B_tilde2': self.C_B_tilde2,
            'h1_supported': self.h1_supported,
            'fit_residual': self.fit_residual,
            'sampled_ratio_max': self.sampled_ratio_max,
            'operator_norm_bound': self.operator_norm_bound,
            'h1_lipschitz_sq': self.h1_lipschitz_sq,
            'provenance': dict(self.provenance),
            'm_modes': self.m_modes,
            'basis': self.basis,
        }


def _random_pairs(rng, size, trials):
    amplitude = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=(trials, 1)))
    base = rng.standard_normal((trials, size)) * amplitude
    spread = np.exp(rng.uniform(np.log(1e-3), np.log(1.0), size=(trials, 1)))
    return base, base + spread * amplitude * rng.standard_normal((trials, size))


def _lipschitz_constant(B):
    if B.variant == 'additive':
        return 0.0, None
    if B.variant == 'pointwise':
        lip, _ = lipschitz_data(B.scalar_map)
        return lip, None
    lip, _ = lipschitz_data(B.root)
    column_norms = np.sqrt(B._column_norms_sq)
    rho = B.weight.values
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(column_norms > 0, column_norms / np.sqrt(rho), 0.0)
    theta = float(np.max(ratios))
    k_norm = operator_norm(B.kernel, B.weight).value
    scale = 1.0 / math.sqrt(B.population)
    return scale * theta * lip, scale * k_norm * lip


def _h1_squared(metric, columns):
    rho_q = metric.weight.rho_q
    coefficients = metric.eigenvectors.T @ (rho_q[:, None] * columns)
    outside = columns - metric.eigenvectors @ coefficients
    leak = math.sqrt(float(np.sum((outside ** 2) * rho_q[:, None])))
    total = math.sqrt(float(np.sum((columns ** 2) * rho_q[:, None])))
    if leak > metric.membership_tol * total:
        return math.inf
    return float(np.sum(coefficients ** 2 / metric.eigenvalues[:, None]))


def _h1_samples(metric, rng, trials):
    radius = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), size=trials))
    radius[0] = 0.0
    coefficients = rng.standard_normal((trials, metric.rank))
    coefficients /= np.linalg.norm(coefficients, axis=1, keepdims=True)
    # ‖u‖₁ = radius exactamente
    fields = (coefficients * np.sqrt(metric.eigenvalues) * radius[:, None]) @ metric.eigenvectors.T
    return fields, radius


def estimate_constants(B, metric=None, trials=256, seed=0, require_h1=False):
    """
    Constantes C_B, ‖B(0)‖ y, con métrica, la envolvente afín en H₁

    C_B es exacta (aditivo, puntual) o la cota discreta analítica (molificado),
    auditada con `trials` pares aleatorios. C̃_B, C̃̃_B ajustan por mínimos
    cuadrados no negativos ‖B(u)‖²_{L₂(V,H₁)} ≈ C̃_B‖u‖₁² + C̃̃_B sobre campos
    aleatorios de H₁ y se desplazan hacia arriba hasta cubrir todas las
    muestras; para ruido aditivo son exactas.

    Args:
        B: Modelo de ruido
        metric: Métrica no local o None
        trials: Número de pares/muestras
        seed: Semilla del generador aislado
        require_h1: Exigir las constantes en H₁

    Returns:
        NoiseConstants: Constantes con su procedencia

    Raises:
        MissingMetricError: Si require_h1 y no hay métrica
        BoundViolationError: Si la auditoría muestral excede C_B
    """
    if trials < 1:
        raise ConfigurationError("trials debe ser ≥ 1", key='experiment.trials')
    if require_h1 and metric is None:
        raise MissingMetricError("Se pidieron constantes en H₁ sin métrica no local")
    rng = np.random.default_rng(seed)
    c_b, operator_bound = _lipschitz_constant(B)
    b0 = math.sqrt(max(float(B.hs_sq_values(np.zeros(B.grid.size))), 0.0))

    u, v = _random_pairs(rng, B.grid.size, trials)
    ratios = np.sqrt(B.hs_diff_sq_values(u, v)) / norms(u - v, B.weight)
    sampled = float(np.max(ratios)) if ratios.size else 0.0
    if sampled > c_b + AUDIT_TOL:
        raise BoundViolationError(
            f"Cociente muestral {sampled:.10g} excede C_B = {c_b:.10g}",
            variant=B.variant, sampled=sampled, C_B=c_b,
        )
    provenance = {
        'C_B': 'exact' if B.variant != 'kernel_mollified' else 'analytic_bound',
        'B0': 'exact',
    }

    c_tilde = c_tilde2 = fit_residual = h1_lip = None
    supported = None
    if metric is not None:
        check_same_grid(B, metric)
        if B.variant == 'additive':
            c_tilde = 0.0
            c_tilde2 = _h1_squared(metric, B.column_matrix(None))
            supported = math.isfinite(c_tilde2)
            fit_residual = 0.0
            h1_lip = 0.0
            provenance.update(C_B_tilde='exact', C_B_tilde2='exact')
        else:
            samples, radius = _h1_samples(metric, rng, trials)
            energies = np.array([_h1_squared(metric, B.column_matrix(s)) for s in samples])
            supported = bool(np.all(np.isfinite(energies)))
            if supported:
                design = np.column_stack([radius ** 2, np.ones_like(radius)])
                (slope, intercept), _ = nnls(design, energies)
                residuals = energies - design @ np.array([slope, intercept])
                fit_residual = float(np.abs(residuals).max())
                c_tilde = float(slope)
                c_tilde2 = float(intercept + max(0.0, residuals.max()))
                h1_lip = _h1_lipschitz(B, metric, rng, trials)
            else:
                c_tilde = c_tilde2 = h1_lip = math.inf
                logger.warning("B(u)vₖ sale de H₁: C̃_B y C̃̃_B son infinitas")
            provenance.update(C_B_tilde='estimated', C_B_tilde2='estimated')
        logger.info(
            f"Constantes de ruido {B.variant}: C_B={c_b:.6g} B0={b0:.6g} "
            f"C̃_B={c_tilde} C̃̃_B={c_tilde2}"
        )
    return NoiseConstants(
        C_B=c_b, B0=b0, C_B_tilde=c_tilde, C_B_tilde2=c_tilde2, h1_supported=supported,
        fit_residual=fit_residual, sampled_ratio_max=sampled, operator_norm_bound=operator_bound,
        h1_lipschitz_sq=h1_lip, provenance=provenance, m_modes=B.m_modes, basis=B.basis,
    )


def _h1_lipschitz(B, metric, rng, trials):
    # max ‖B(u) − B(v)‖²_{L₂(V,H₁)} / ‖u − v‖₁² sobre pares de H₁
    first, _ = _h1_samples(metric, rng, trials)
    second, _ = _h1_samples(metric, rng, trials)
    best = 0.0
    for u, v in zip(first, second):
        distance = metric.h1_energy_values(u - v)
        if distance <= 0:
            continue
        value = _h1_squared(metric, B.column_matrix(u) - B.column_matrix(v))
        best = max(best, value / float(distance))
    return best
