"""Jerarquía de errores del laboratorio.

Todos los errores de dominio derivan de ``FieldLabError``, que a su vez es un
``ValueError``: el código que ya atrapaba ``ValueError`` sigue funcionando.
"""


class FieldLabError(ValueError):
    """
    Error base del laboratorio

    Args:
        message (str): Mensaje legible
        **context: Datos de diagnóstico (clave de configuración, residuos, tiempos...)
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self):
        """Convertir el error a diccionario para los reportes"""
        return {
            'error': type(self).__name__,
            'message': self.message,
            'context': {k: _plain(v) for k, v in self.context.items()},
        }


def _plain(value):
    # Los diagnósticos pueden traer escalares de numpy
    if hasattr(value, 'item') and callable(value.item):
        try:
            return value.item()
        except (ValueError, TypeError):
            return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class GridMismatchError(FieldLabError):
    """Objetos definidos sobre mallas distintas o de tamaño incompatible"""


class DegenerateWeightError(FieldLabError):
    """Peso nulo donde se requiere ρ > 0"""


class KernelConstraintError(FieldLabError):
    """Parámetros de núcleo fuera del catálogo permitido"""


class DefinitenessError(FieldLabError):
    """Parte simétrica indefinida donde se requiere signo"""


class TrivialSubspaceError(FieldLabError):
    """El subespacio no local H₁ es trivial"""


class SubspaceMembershipError(FieldLabError):
    """Un campo no pertenece a H₁ dentro de la tolerancia"""

    @property
    def residual(self):
        return self.context.get('residual')


class NotLipschitzError(FieldLabError):
    """Activación sin constante de Lipschitz finita"""


class DeclaredConstantError(FieldLabError):
    """Una constante declarada no pasa la auditoría muestral"""


class IneligibleActivationError(FieldLabError):
    """Activación excluida de los certificados"""


class ModeCountError(FieldLabError):
    """Número de modos incompatible con el modelo de ruido"""


class MissingMetricError(FieldLabError):
    """Se pidieron constantes en H₁ sin métrica no local"""


class BlowUpError(FieldLabError):
    """Estado no finito durante la integración; conserva la trayectoria parcial"""

    def __init__(self, message, trajectory=None, **context):
        super().__init__(message, **context)
        self.trajectory = trajectory

    @property
    def time(self):
        return self.context.get('time')


class BoundViolationError(FieldLabError):
    """Una cota teórica falla frente al cálculo numérico"""

    def __init__(self, message, report=None, **context):
        super().__init__(message, **context)
        self.report = report


class CertificateError(FieldLabError):
    """Precondición de certificado no satisfecha"""


class ConfigurationError(FieldLabError):
    """Configuración de corrida inválida"""

    @property
    def key(self):
        return self.context.get('key')


class AlignmentError(FieldLabError):
    """Poblaciones y malla de la EDPE no están alineadas"""


class MomentGrowthWarning(UserWarning):
    """Crecimiento de momentos más rápido que el ajuste exponencial"""


class BoundWarning(UserWarning):
    """Cota heurística (no rigurosa) violada"""
