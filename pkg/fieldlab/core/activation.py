"""Funciones de activación y su operador de Nemytskii F(u)(x) = f(u(x))."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from fieldlab.core.space import Field, norms
from fieldlab.errors import (
    ConfigurationError,
    DeclaredConstantError,
    FieldLabError,
    IneligibleActivationError,
    NotLipschitzError,
)

logger = logging.getLogger(__name__)

# variante: (Lip, f(0), monótona, acotada, sup|f|) antes de aplicar `scale`
CATALOGUE = {
    'relu': (1.0, 0.0, True, False, math.inf),
    'logistic': (0.25, 0.5, True, True, 1.0),
    'tanh': (1.0, 0.0, True, True, 1.0),
    'heaviside': (math.inf, 1.0, True, True, 1.0),
    'sqrt_logistic': (1.0 / (3.0 * math.sqrt(3.0)), math.sqrt(0.5), True, True, 1.0),
    'identity': (1.0, 0.0, True, False, math.inf),
}
VARIANTS = tuple(CATALOGUE) + ('constant', 'custom')
AUDIT_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Activation:
    """
    Activación escalar f = scale · base

    Args:
        variant: Variante del catálogo, 'constant' o 'custom'
        scale: Multiplicador real
        value: Valor c de la variante constante
        samples: Pares (x, f(x)) de la variante custom, interpolada linealmente
        declared_lip: Lip(f) declarada para custom (antes de `scale`)
    """
    variant: str
    scale: float = 1.0
    value: float | None = None
    samples: tuple | None = None
    declared_lip: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"Activación desconocida: {self.variant}", key='activation.variant',
                allowed=', '.join(VARIANTS),
            )
        object.__setattr__(self, 'scale', float(self.scale))
        if self.variant == 'constant':
            if self.value is None or not math.isfinite(float(self.value)):
                raise ConfigurationError("La activación constante requiere value finito", key='activation.value')
            object.__setattr__(self, 'value', float(self.value))
        if self.variant == 'custom':
            if self.samples is None or self.declared_lip is None:
                raise ConfigurationError(
                    "La activación custom requiere muestras y declared_lip", key='activation.declared_lip'
                )
            x, y = (np.array(a, dtype=float) for a in self.samples)
            if x.ndim != 1 or x.shape != y.shape or x.size < 2:
                raise ConfigurationError("Muestras custom inválidas", key='activation.samples')
            if np.any(np.diff(x) <= 0) or not np.all(np.isfinite(y)):
                raise ConfigurationError(
                    "Las abscisas custom deben ser estrictamente crecientes y los valores finitos",
                    key='activation.samples',
                )
            x.setflags(write=False)
            y.setflags(write=False)
            object.__setattr__(self, 'samples', (x, y))
            object.__setattr__(self, 'declared_lip', float(self.declared_lip))

    @classmethod
    def from_csv(cls, path, declared_lip, scale=1.0):
        """Leer una activación custom de un CSV de dos columnas (x, f(x)) con cabecera"""
        try:
            table = np.loadtxt(Path(path), delimiter=',', skiprows=1, ndmin=2)
        except (OSError, ValueError) as e:
            raise ConfigurationError(f"Error al leer la activación: {str(e)}", key='activation.file')
        return cls('custom', scale=scale, samples=(table[:, 0], table[:, 1]), declared_lip=declared_lip)

    def _base(self, x):
        v = self.variant
        if v == 'relu':
            return np.maximum(x, 0.0)
        if v == 'logistic':
            return expit(x)
        if v == 'tanh':
            return np.tanh(x)
        if v == 'heaviside':
            return np.heaviside(x, 1.0)
        if v == 'sqrt_logistic':
            return np.sqrt(expit(x))
        if v == 'identity':
            return np.asarray(x, dtype=float) + 0.0
        if v == 'constant':
            return np.full(np.shape(x), self.value)
        return np.interp(x, *self.samples)

    def __call__(self, x):
        array = np.asarray(x, dtype=float)
        result = self.scale * self._base(array)
        return float(result) if array.ndim == 0 else result

    @property
    def certificate_eligible(self):
        return self.variant != 'heaviside'

    @property
    def lip(self):
        if self.variant == 'constant':
            return 0.0
        if self.variant == 'custom':
            return abs(self.scale) * self.declared_lip
        base = CATALOGUE[self.variant][0]
        return math.inf if math.isinf(base) else abs(self.scale) * base

    @property
    def f0(self):
        return self(0.0)

    @property
    def monotone(self):
        if self.variant == 'constant':
            return True
        if self.variant == 'custom':
            slopes = np.diff(self.samples[1])
            return bool(np.all(slopes * self.scale >= 0))
        return self.scale >= 0

    @property
    def bounded(self):
        if self.variant in ('constant', 'custom'):
            return True
        return self.scale == 0 or CATALOGUE[self.variant][3]

    @property
    def sup(self):
        """sup |f| sobre ℝ (inf si no es acotada)"""
        if self.variant == 'constant':
            return abs(self.scale * self.value)
        if self.variant == 'custom':
            return abs(self.scale) * float(np.abs(self.samples[1]).max())
        if self.scale == 0:
            return 0.0
        return abs(self.scale) * CATALOGUE[self.variant][4]

    def to_dict(self):
        data = {
            'variant': self.variant,
            'scale': self.scale,
            'lip': self.lip,
            'f0': self.f0,
            'monotone': self.monotone,
            'certificate_eligible': self.certificate_eligible,
        }
        if self.variant == 'constant':
            data['value'] = self.value
        if self.variant == 'custom':
            data['declared_lip'] = self.declared_lip
            data['samples'] = int(self.samples[0].size)
        return data

    def __repr__(self):
        return f'<Activation {self.variant} scale={self.scale}>'


def evaluate(a, x):
    """Evaluar la fórmula exacta del catálogo"""
    return a(x)


def lipschitz_data(a):
    """
    Par certificado (Lip(f), f(0))

    Para variantes custom se audita la Lip declarada con las pendientes de
    muestras consecutivas (exactas para la interpolación lineal).

    Raises:
        NotLipschitzError: Para heaviside
        DeclaredConstantError: Si alguna pendiente excede la Lip declarada
    """
    if not a.certificate_eligible:
        raise NotLipschitzError(f"La activación {a.variant} no es Lipschitz", variant=a.variant)
    if a.variant == 'custom':
        x, y = a.samples
        slopes = np.abs(np.diff(y) / np.diff(x))
        worst = int(np.argmax(slopes))
        if slopes[worst] > a.declared_lip * (1 + AUDIT_SLACK) + AUDIT_SLACK:
            raise DeclaredConstantError(
                f"Pendiente {slopes[worst]:.10g} entre x={x[worst]:g} y x={x[worst + 1]:g} "
                f"excede la Lip declarada {a.declared_lip:g}",
                x_left=float(x[worst]), x_right=float(x[worst + 1]),
                slope=float(slopes[worst]), declared=a.declared_lip,
            )
        logger.debug(f"Auditoría custom superada: pendiente máxima {slopes[worst]:.6g}")
    return a.lip, a.f0


def nemytskii(a, u):
    """Aplicación punto a punto F(u)ᵢ = f(uᵢ)"""
    return Field(u.grid, a(u.values))


def root_activation(a):
    """
    Raíz √f con datos de Lipschitz certificables (ruido molificado)

    logistic(scale s) → sqrt_logistic(scale √s); constant(c) → constant(√c);
    custom → raíces de las muestras con Lip auditada.

    Raises:
        IneligibleActivationError: Si √f no es Lipschitz o f toma valores negativos
    """
    if a.variant == 'logistic' and a.scale >= 0:
        return Activation('sqrt_logistic', scale=math.sqrt(a.scale))
    if a.variant == 'constant':
        level = a.scale * a.value
        if level < 0:
            raise IneligibleActivationError("√f requiere f ≥ 0", variant=a.variant)
        return Activation('constant', value=math.sqrt(level))
    if a.variant == 'custom':
        x, y = a.samples
        level = a.scale * y
        if np.any(level < 0):
            raise IneligibleActivationError("√f requiere f ≥ 0 en todas las muestras", variant=a.variant)
        root = np.sqrt(level)
        slopes = np.abs(np.diff(root) / np.diff(x))
        return Activation('custom', samples=(x, root), declared_lip=float(slopes.max()))
    raise IneligibleActivationError(
        f"√f no tiene Lipschitz certificable para la variante {a.variant}", variant=a.variant
    )


def lipschitz_audit(a, fields, partners, weight):
    """Máximo cociente ‖F(u) − F(v)‖/‖u − v‖ sobre pares de campos (…, N)"""
    if fields.shape != partners.shape:
        raise FieldLabError("Los lotes de campos deben tener la misma forma")
    numerator = norms(a(fields) - a(partners), weight)
    denominator = norms(fields - partners, weight)
    valid = denominator > 0
    return float(np.max(numerator[valid] / denominator[valid])) if valid.any() else 0.0
