"""Subespacio no local H₁ = ker(±K̂)^⊥ con la norma ‖(±K̂)^{−1/2}·‖."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, svdvals

from fieldlab.core.space import Field, check_same_grid, norms
from fieldlab.errors import (
    DefinitenessError,
    FieldLabError,
    SubspaceMembershipError,
    TrivialSubspaceError,
)

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-10
DEFAULT_MEMBERSHIP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class NonlocalMetric:
    """
    Autopares positivos de ±K̂ en H

    Args:
        sign: +1 si K̂ es no negativo, −1 si es no positivo
        eigenvalues: λ₁ ≥ λ₂ ≥ … > 0
        eigenvectors: Matriz (N, r) de campos ρ-ortonormales
        rank_tol: Corte relativo usado al retener modos
        membership_tol: Tolerancia relativa de pertenencia a H₁
    """
    grid: object
    weight: object
    sign: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank_tol: float = DEFAULT_RANK_TOL
    membership_tol: float = DEFAULT_MEMBERSHIP_TOL

    @property
    def rank(self):
        return int(self.eigenvalues.size)

    @property
    def sqrt_norm(self):
        return math.sqrt(float(self.eigenvalues[0]))

    @property
    def sqrt_pinv_norm(self):
        return 1.0 / math.sqrt(float(self.eigenvalues[-1]))

    def coefficients_values(self, values):
        """Coeficientes ⟨u, eᵢ⟩_ρ de un arreglo (…, N)"""
        return (values * self.weight.rho_q) @ self.eigenvectors

    def project_values(self, values):
        return self.coefficients_values(values) @ self.eigenvectors.T

    def residual_values(self, values):
        """Norma del residuo ‖u − Π₁u‖ y norma ‖u‖ para cada campo"""
        return norms(values - self.project_values(values), self.weight), norms(values, self.weight)

    def h1_energy_values(self, values):
        """‖u‖₁² para un arreglo (…, N), sin verificar pertenencia"""
        coefficients = self.coefficients_values(values)
        return (coefficients * coefficients) @ (1.0 / self.eigenvalues)

    def check_membership(self, values, time=None):
        residual, norm = self.residual_values(np.atleast_2d(values))
        relative = np.where(norm > 0, residual / np.where(norm > 0, norm, 1.0), residual)
        worst = int(np.argmax(relative))
        if relative[worst] > self.membership_tol:
            raise SubspaceMembershipError(
                f"El campo no pertenece a H₁: residuo {residual[worst]:.3e} "
                f"(relativo {relative[worst]:.3e} > {self.membership_tol:g})",
                residual=float(residual[worst]), relative=float(relative[worst]), time=time,
            )
        return float(relative.max())

    def to_dict(self):
        return {
            'sign': self.sign,
            'rank': self.rank,
            'rank_tol': self.rank_tol,
            'lambda_max': float(self.eigenvalues[0]),
            'lambda_min_retained': float(self.eigenvalues[-1]),
            'sqrt_norm': self.sqrt_norm,
            'sqrt_pinv_norm': self.sqrt_pinv_norm,
        }


def _orient(vectors, rho_q):
    # Convención de signo: ⟨e, 1⟩_ρ ≥ 0; si es nulo, primera entrada relevante positiva
    sums = rho_q @ vectors
    for k in range(vectors.shape[1]):
        column = vectors[:, k]
        scale = np.abs(column).max()
        if abs(sums[k]) > 1e-12 * scale * max(rho_q.sum(), 1e-300):
            flip = sums[k] < 0
        else:
            first = np.flatnonzero(np.abs(column) > 1e-8 * scale)
            flip = first.size > 0 and column[first[0]] < 0
        if flip:
            vectors[:, k] = -column
    return vectors


def build_metric(dec, w, rank_tol=DEFAULT_RANK_TOL, membership_tol=DEFAULT_MEMBERSHIP_TOL):
    """
    Construir H₁ a partir del problema espectral de G = Dρ^{1/2} Ŵ Dρ^{1/2}

    Args:
        dec: Descomposición con veredicto non_negative o non_positive
        w: Peso
        rank_tol: Se retienen los modos con λ > rank_tol·λ_max

    Returns:
        NonlocalMetric: Autopares retenidos con campos ρ-ortonormales

    Raises:
        DefinitenessError: Si la forma es indefinida
        TrivialSubspaceError: Si no queda ningún modo (H₁ = {0})
    """
    check_same_grid(dec, w)
    if dec.definiteness == 'indefinite':
        raise DefinitenessError(
            "La parte simétrica del núcleo es indefinida; H₁ no está definido",
            lambda_min=dec.lambda_min, lambda_max=dec.lambda_max,
        )
    sign = dec.sign
    s = np.sqrt(w.rho_q)
    values, vectors = eigh(sign * dec.form_matrix())
    values, vectors = values[::-1], vectors[:, ::-1]
    top = float(values[0])
    if not top > 0:
        raise TrivialSubspaceError("La forma simétrica es nula: H₁ = {0}", lambda_max=top)
    keep = values > rank_tol * top
    values, vectors = values[keep], vectors[:, keep]

    support = s > 0
    fields = np.zeros_like(vectors)
    fields[support] = vectors[support] / s[support, None]
    if not support.all():
        # Extensión natural a los nodos con ρ = 0: e = (±Ŵ)(ρq e)/λ
        fields[~support] = (
            sign * dec.sym[~support][:, support] @ (w.rho_q[support, None] * fields[support])
        ) / values[None, :]
    fields = _orient(fields, w.rho_q)
    values.setflags(write=False)
    fields.setflags(write=False)
    logger.info(
        f"H₁ construido: rango {values.size} (corte {rank_tol:g}·λ_max), "
        f"λ₁={values[0]:.6g}, λ_r={values[-1]:.6g}"
    )
    return NonlocalMetric(
        grid=dec.grid, weight=w, sign=sign, eigenvalues=values, eigenvectors=fields,
        rank_tol=rank_tol, membership_tol=membership_tol,
    )


def h1_norm(m, u):
    """
    Norma no local ‖u‖₁ = (Σᵢ ⟨u, eᵢ⟩²/λᵢ)^{1/2}

    Raises:
        SubspaceMembershipError: Si ‖u − Π₁u‖ > tol·‖u‖
    """
    check_same_grid(m, u)
    m.check_membership(u.values)
    return math.sqrt(max(float(m.h1_energy_values(u.values)), 0.0))


def sqrt_apply(m, u, power):
    """
    Acción espectral de (±K̂)^{±1/2}

    Args:
        power: 0.5 o −0.5; la potencia negativa exige u ∈ H₁
    """
    check_same_grid(m, u)
    if power not in (0.5, -0.5):
        raise FieldLabError(f"Potencia no soportada: {power}", power=power)
    if power < 0:
        m.check_membership(u.values)
    coefficients = m.coefficients_values(u.values)
    factors = np.sqrt(m.eigenvalues) if power > 0 else 1.0 / np.sqrt(m.eigenvalues)
    return Field(m.grid, m.eigenvectors @ (factors * coefficients))


def project(m, u):
    """Proyección Π₁u y norma del residuo ‖u − Π₁u‖"""
    check_same_grid(m, u)
    projected = m.project_values(u.values)
    residual = float(norms(u.values - projected, m.weight))
    return Field(m.grid, projected), residual


def compact_ball_cover(m, R, eps):
    """
    Número de modos r(ε) con √(Σ_{i>r} λᵢ)·R ≤ ε

    Es la dimensión de una ε-red de la bola {‖u‖₁ ≤ R} dentro de H.
    """
    if not R > 0 or not eps > 0:
        raise FieldLabError("Se requiere R > 0 y eps > 0", R=R, eps=eps)
    tails = np.concatenate([np.cumsum(m.eigenvalues[::-1])[::-1], [0.0]])
    radii = np.sqrt(tails) * R
    return int(np.argmax(radii <= eps))


def antisymmetric_bound(dec, m, tol=1e-8):
    """
    Constante C_Ǩ = ‖(±K̂)⁺ Ǩ‖_{L(H)}

    Ǩ actúa con cuadratura de Lebesgue, (±K̂)⁺ es la pseudo-inversa espectral
    sobre H₁. Si la imagen de Ǩ sale de H₁ más allá de `tol` (relativo) la
    constante es infinita.

    Returns:
        float: C_Ǩ (0.0 si W̌ = 0, inf si Ǩ no mapea en H₁)
    """
    check_same_grid(dec, m)
    if not np.any(dec.antisym):
        return 0.0
    w = m.weight
    support = w.values > 0
    r = np.sqrt(w.rho_q[support])

    def restricted_norm(matrix):
        block = matrix[np.ix_(support, support)]
        return float(svdvals(r[:, None] * block / r[None, :])[0])

    operator = dec.antisym * dec.grid.quadrature[None, :]
    coefficients = m.eigenvectors.T @ (w.rho_q[:, None] * operator)
    outside = operator - m.eigenvectors @ coefficients
    scale = restricted_norm(operator)
    leak = restricted_norm(outside)
    if leak > tol * scale:
        logger.warning(f"Ǩ sale de H₁ (fuga relativa {leak / scale:.3e}): C_Ǩ = ∞")
        return math.inf
    return restricted_norm(m.eigenvectors @ (coefficients / m.eigenvalues[:, None]))


def spectrum_table(m):
    """Tabla (índice, autovalor) con índices desde 1"""
    return np.column_stack([np.arange(1, m.rank + 1), m.eigenvalues])
