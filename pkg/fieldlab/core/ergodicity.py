"""Certificados de invariancia, ergodicidad y caso monótono; acoplamientos y medidas de ocupación."""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import linregress

from fieldlab.core.activation import lipschitz_data
from fieldlab.core.dynamics import EnsembleIntegrator, mean_and_stderr
from fieldlab.core.kernel import decompose, operator_norm
from fieldlab.core.noise import NoiseConstants, estimate_constants
from fieldlab.core.nonlocal_metric import antisymmetric_bound, build_metric
from fieldlab.core.space import check_same_grid, cosine_modes, norms
from fieldlab.errors import (
    BoundViolationError,
    CertificateError,
    ConfigurationError,
    FieldLabError,
    IneligibleActivationError,
    TrivialSubspaceError,
)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
ASSUMPTIONS = ('invariance', 'ergodicity', 'monotone')
DICTIONARY_VERSION = 'fm-features-v1'
DEFAULT_FEATURES = 8
DEFAULT_BURN_IN = 0.1
DEFAULT_R_FACTORS = (2.0, 4.0, 8.0, 16.0)


@dataclass(frozen=True)
class Certificate:
    """Supuesto evaluado con sus constantes, margen y veredicto"""
    assumption: str
    constants: dict
    margin: float | None
    verdict: str
    provenance: dict = field(default_factory=dict)
    empirical_flags: tuple = ()
    notes: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == 'pass'

    @property
    def applicable(self):
        return self.verdict != 'inapplicable'

    def to_dict(self):
        return {
            'assumption': self.assumption,
            'verdict': self.verdict,
            'margin': self.margin,
            'constants': dict(self.constants),
            'provenance': dict(self.provenance),
            'empirical_flags': list(self.empirical_flags),
            'notes': list(self.notes),
            'metadata': dict(self.metadata),
        }


def _verdict(margin):
    if margin is None or math.isnan(margin):
        return -math.inf, 'fail'
    return margin, 'pass' if margin > 0 else 'fail'


def _product(*factors):
    # 0·∞ = 0: un término nulo anula la contribución aunque otra constante sea infinita
    if any(f == 0 for f in factors):
        return 0.0
    return math.prod(factors)


def _inapplicable(assumption, reason, constants, provenance, metadata):
    logger.info(f"Certificado {assumption} no aplicable: {reason}")
    return Certificate(
        assumption=assumption, constants=constants, margin=None, verdict='inapplicable',
        provenance=provenance, notes=(reason,), metadata=metadata,
    )


def certify(
    model,
    alpha,
    delta=0.5,
    decomposition=None,
    metric=None,
    noise_constants=None,
    c_delta=None,
    trials=256,
    seed=0,
    definiteness_tol=1e-8,
    rank_tol=1e-10,
):
    """
    Evaluar los certificados de invariancia, ergodicidad y caso monótono

    Ergodicidad: λ̃ = 2√2‖K‖Lip(f) + C_B*, λ = 2‖K‖Lip(f) + C_B*, margen 2α − λ̃,
    con C_B* = max(C_B, 2C_B²). Segundo momento: Ĉ = C̃/γ̃ con
    C̃ = 2√2‖K‖C(δ)f(0)²‖ρ‖_{L¹} + c‖B(0)‖² y γ̃ = 2α − λ̃ − δ.
    Invariancia: β = √2(1+C_Ǩ)‖(±K̂)^{−1/2}‖²(Lip(f) + |f(0)|‖ρ‖^{1/2}) + C̃_B,
    margen γ(δ) = 2α − β − (9/δ)C̃̃_B. Monótono: margen 2α − C̃_B.

    Args:
        model: FieldModel con peso, activación, núcleo y ruido
        alpha: Tasa de decaimiento
        delta: δ ∈ (0, 1)
        decomposition: Descomposición precalculada (opcional)
        metric: Métrica no local precalculada (opcional)
        noise_constants: Constantes de ruido precalculadas (opcional)
        c_delta: C(δ); por defecto max(1, ‖K‖/(√2δ))

    Returns:
        dict: Certificados por supuesto ('invariance', 'ergodicity', 'monotone')

    Raises:
        IneligibleActivationError: Si la activación no admite certificados
        CertificateError: Si α ≤ 0 o δ ∉ (0, 1)
    """
    if not alpha > 0:
        raise CertificateError("α debe ser positivo", alpha=alpha)
    if not 0 < delta < 1:
        raise CertificateError("δ debe estar en (0, 1)", delta=delta)
    activation = model.activation
    if not activation.certificate_eligible:
        raise IneligibleActivationError(
            f"La activación {activation.variant} está excluida de los certificados",
            variant=activation.variant,
        )
    lip, f0 = lipschitz_data(activation)
    weight = model.weight
    mass = weight.mass
    kernel = model.kernel

    metadata = {'grid': weight.grid.to_dict(), 'truncation_radius': weight.grid.truncation_radius}
    if kernel is None:
        k_norm = 0.0
    else:
        norm_report = operator_norm(kernel, weight)
        k_norm = norm_report.value
        metadata['norm_bounds'] = norm_report.to_dict()
        if decomposition is None:
            decomposition = decompose(kernel, weight, tol=definiteness_tol)
        metadata['definiteness'] = decomposition.to_dict()
        if metric is None and decomposition.definiteness != 'indefinite':
            try:
                metric = build_metric(decomposition, weight, rank_tol=rank_tol)
            except TrivialSubspaceError:
                metric = None

    if noise_constants is None:
        if model.noise is None:
            noise_constants = NoiseConstants.zero()
        else:
            noise_constants = estimate_constants(model.noise, metric, trials=trials, seed=seed)
    metadata['noise'] = noise_constants.to_dict()
    if metric is not None:
        metadata['retained_rank'] = metric.rank
        metadata['rank_tol'] = metric.rank_tol

    c_b = noise_constants.C_B
    b0 = noise_constants.B0
    base = {
        'alpha': float(alpha), 'K_norm': k_norm, 'lip_f': lip, 'f0': f0, 'rho_l1': mass,
        'C_B': c_b, 'B0': b0, 'delta': float(delta),
    }
    provenance = {
        'K_norm': 'exact', 'lip_f': 'exact' if activation.variant != 'custom' else 'audited',
        'f0': 'exact', 'rho_l1': 'exact',
    }
    provenance.update(noise_constants.provenance)

    certificates = {}

    # --- invariancia
    inv_constants = dict(base)
    inv_constants.update(C_B_tilde=noise_constants.C_B_tilde, C_B_tilde2=noise_constants.C_B_tilde2)
    if kernel is None:
        certificates['invariance'] = _inapplicable(
            'invariance', 'modelo sin núcleo', inv_constants, provenance, metadata
        )
    elif decomposition.definiteness == 'indefinite':
        certificates['invariance'] = _inapplicable(
            'invariance', 'parte simétrica indefinida', inv_constants, provenance, metadata
        )
    elif metric is None:
        certificates['invariance'] = _inapplicable(
            'invariance', 'H₁ trivial', inv_constants, provenance, metadata
        )
    else:
        c_check = antisymmetric_bound(decomposition, metric)
        pinv_sq = 1.0 / float(metric.eigenvalues[-1])
        c_tilde = noise_constants.C_B_tilde
        c_tilde2 = noise_constants.C_B_tilde2
        growth = lip + abs(f0) * math.sqrt(mass)
        beta = _product(SQRT2 * (1.0 + c_check), pinv_sq, growth) + c_tilde
        gamma = 2 * alpha - beta - _product(9.0 / delta, c_tilde2)
        eta = SQRT2 * abs(f0) * math.sqrt(mass) + c_tilde2
        eta_delta = SQRT2 * abs(f0) * math.sqrt(mass) + _product(1.0 + 9.0 / delta, c_tilde2)
        inv_constants.update(
            C_check=c_check, pinv_sqrt_norm_sq=pinv_sq, beta=beta, gamma_delta=gamma,
            eta=eta, eta_delta=eta_delta,
        )
        margin, verdict = _verdict(gamma)
        flags = tuple(k for k in ('C_B_tilde', 'C_B_tilde2') if provenance.get(k) == 'estimated')
        certificates['invariance'] = Certificate(
            'invariance', inv_constants, margin, verdict,
            provenance=dict(provenance, C_check='exact', pinv_sqrt_norm_sq='restricted_rank'),
            empirical_flags=flags,
            notes=(f"‖(±K̂)^{{-1/2}}‖² restringida a H₁ de rango {metric.rank}",),
            metadata=metadata,
        )

    # --- ergodicidad
    noise_rate = max(c_b, 2 * c_b * c_b)
    lam_tilde = 2 * SQRT2 * k_norm * lip + noise_rate
    lam = 2 * k_norm * lip + noise_rate
    c_delta_value = float(c_delta) if c_delta is not None else max(1.0, k_norm / (SQRT2 * delta))
    b0_coefficient = 1.0 if c_b == 0 else 1.0 + 1.0 / (noise_rate / (c_b * c_b) - 1.0)
    c_tilde_moment = 2 * SQRT2 * k_norm * c_delta_value * f0 * f0 * mass + b0_coefficient * b0 * b0
    gamma_tilde = 2 * alpha - lam_tilde - delta
    c_hat = c_tilde_moment / gamma_tilde if gamma_tilde > 0 else math.inf
    erg_constants = dict(base)
    erg_constants.update(
        noise_rate=noise_rate, lambda_tilde=lam_tilde, **{'lambda': lam},
        C_delta=c_delta_value, C_tilde=c_tilde_moment, gamma_tilde=gamma_tilde, C_hat=c_hat,
    )
    margin, verdict = _verdict(2 * alpha - lam_tilde)
    flags = ('C_B',) if provenance.get('C_B') == 'estimated' else ()
    certificates['ergodicity'] = Certificate(
        'ergodicity', erg_constants, margin, verdict, provenance=dict(provenance),
        empirical_flags=flags, metadata=metadata,
    )

    # --- caso monótono
    mono_constants = dict(base)
    mono_constants.update(C_B_tilde=noise_constants.C_B_tilde)
    applicable = (
        kernel is not None and activation.monotone and decomposition.definiteness == 'non_positive'
        and decomposition.is_symmetric and metric is not None
    )
    if not applicable:
        certificates['monotone'] = _inapplicable(
            'monotone', 'requiere f monótona, K̂ no positivo y w simétrico',
            mono_constants, provenance, metadata,
        )
    else:
        margin, verdict = _verdict(2 * alpha - noise_constants.C_B_tilde)
        mono_constants.update(contraction_rate=2 * alpha - noise_constants.C_B_tilde)
        flags = ('C_B_tilde',) if provenance.get('C_B_tilde') == 'estimated' else ()
        certificates['monotone'] = Certificate(
            'monotone', mono_constants, margin, verdict, provenance=dict(provenance),
            empirical_flags=flags, metadata=metadata,
        )

    for cert in certificates.values():
        logger.info(f"Certificado {cert.assumption}: {cert.verdict} (margen {cert.margin})")
    return certificates


def mixing_bound(cert, v_norm_sq, lip_phi, t):
    """
    Cota de mezcla exponencial

    Con ergodicidad: |P_tφ(v) − ∫φ dμ| ≤ 2Lip(φ)(‖v‖² + Ĉ)e^{−(2α−λ)t}.
    Con el certificado monótono, `v_norm_sq` es ‖v − z‖₁² y la cota es
    |P_tφ(v) − P_tφ(z)| ≤ Lip₁(φ)‖v − z‖₁e^{−(2α−C̃_B)t/2}.

    Raises:
        CertificateError: Si el certificado no fue aprobado
    """
    if not cert.passed or cert.assumption not in ('ergodicity', 'monotone'):
        raise CertificateError("La cota de mezcla requiere un certificado aprobado de ergodicidad o monótono")
    t = np.asarray(t, dtype=float)
    if cert.assumption == 'monotone':
        return lip_phi * math.sqrt(v_norm_sq) * np.exp(-0.5 * cert.constants['contraction_rate'] * t)
    rate = 2 * cert.constants['alpha'] - cert.constants['lambda']
    return 2.0 * lip_phi * (v_norm_sq + cert.constants['C_hat']) * np.exp(-rate * t)


@dataclass(frozen=True, eq=False)
class CouplingReport:
    times: np.ndarray
    mean_sq_dist: np.ndarray
    stderr: np.ndarray
    fitted_rate: float
    fit_stderr: float
    bound_rate: float | None
    envelope_ok: bool | None = None
    rate_ok: bool | None = None
    h1_mean_sq_dist: np.ndarray | None = None
    h1_stderr: np.ndarray | None = None
    h1_fitted_rate: float | None = None
    h1_fit_stderr: float | None = None
    monotone_rate: float | None = None
    h1_rate_ok: bool | None = None
    h1_non_increasing: bool | None = None
    n_paths: int = 0

    @property
    def envelope(self):
        if self.bound_rate is None:
            return None
        return self.mean_sq_dist[0] * np.exp(self.bound_rate * self.times)

    def check(self):
        """Lanzar BoundViolationError si alguna comprobación falló"""
        failures = [
            name for name in ('envelope_ok', 'rate_ok', 'h1_rate_ok', 'h1_non_increasing')
            if getattr(self, name) is False
        ]
        if failures:
            raise BoundViolationError(
                f"El acoplamiento viola: {', '.join(failures)}", report=self, failures=', '.join(failures)
            )
        return self

    def to_rows(self):
        columns = [self.times, self.mean_sq_dist, self.stderr]
        envelope = self.envelope
        columns.append(envelope if envelope is not None else np.full(self.times.size, np.nan))
        if self.h1_mean_sq_dist is not None:
            columns += [self.h1_mean_sq_dist, self.h1_stderr]
        return np.column_stack(columns)

    def describe(self):
        return {
            'fitted_rate': self.fitted_rate, 'fit_stderr': self.fit_stderr,
            'bound_rate': self.bound_rate, 'envelope_ok': self.envelope_ok, 'rate_ok': self.rate_ok,
            'h1_fitted_rate': self.h1_fitted_rate, 'h1_fit_stderr': self.h1_fit_stderr,
            'monotone_rate': self.monotone_rate, 'h1_rate_ok': self.h1_rate_ok,
            'h1_non_increasing': self.h1_non_increasing, 'n_paths': self.n_paths,
        }


def _log_fit(times, values):
    valid = np.isfinite(values) & (values > 0)
    if np.count_nonzero(valid) < 2:
        return math.nan, math.nan
    if np.count_nonzero(valid) == 2:
        fit = linregress(times[valid], np.log(values[valid]))
        return float(fit.slope), 0.0
    fit = linregress(times[valid], np.log(values[valid]))
    return float(fit.slope), float(fit.stderr)


def couple(v, z, cfg, model, certificate=None, metric=None, monotone_certificate=None):
    """
    Acoplamiento síncrono de dos soluciones con los mismos incrementos

    Args:
        v, z: Estados iniciales distintos
        cfg: Parámetros de integración (n_paths pares)
        model: FieldModel
        certificate: Certificado de ergodicidad para la envolvente e^{(λ−2α)t}
        metric: Métrica para las distancias en H₁ (opcional)
        monotone_certificate: Certificado monótono para la tasa en H₁

    Returns:
        CouplingReport: Curvas, ajustes y banderas de comprobación
    """
    check_same_grid(v, z, model.weight)
    if np.array_equal(v.values, z.values):
        raise ConfigurationError("Los estados acoplados deben ser distintos", key='experiment.partner')
    weight = model.weight

    def reducer(state):
        difference = state[:, 0, :] - state[:, 1, :]
        columns = [(difference * difference) @ weight.rho_q]
        if metric is not None:
            columns.append(metric.h1_energy_values(difference))
        return np.stack(columns, axis=1)

    result = EnsembleIntegrator(model, cfg).run(np.stack([v.values, z.values]), reducer)
    summary = result.values[result.finite_mask]
    times = result.times
    distance = v.values - z.values
    mean, se = mean_and_stderr(summary[:, :, 0])
    mean[0] = float(norms(distance, weight) ** 2)
    se[0] = 0.0
    rate, rate_se = _log_fit(times, mean)

    bound_rate = envelope_ok = rate_ok = None
    if certificate is not None and certificate.applicable:
        bound_rate = certificate.constants['lambda'] - 2 * certificate.constants['alpha']
        if certificate.passed:
            tolerance = 3 * (rate_se if math.isfinite(rate_se) else 0.0) + 1e-9
            envelope = mean[0] * np.exp(bound_rate * times)
            envelope_ok = bool(np.all(mean - 3 * se <= envelope * (1 + tolerance)))
            rate_ok = bool(rate <= bound_rate + tolerance) if math.isfinite(rate) else True

    h1_mean = h1_se = h1_rate = h1_rate_se = monotone_rate = h1_ok = non_increasing = None
    if metric is not None:
        h1_mean, h1_se = mean_and_stderr(summary[:, :, 1])
        h1_mean[0] = float(metric.h1_energy_values(distance))
        h1_se[0] = 0.0
        h1_rate, h1_rate_se = _log_fit(times, h1_mean)
        increments = np.diff(h1_mean)
        joint_se = np.sqrt(h1_se[1:] ** 2 + h1_se[:-1] ** 2)
        non_increasing = bool(np.all(increments <= 3 * joint_se + 1e-12 * max(1.0, h1_mean[0])))
        if monotone_certificate is not None and monotone_certificate.passed:
            monotone_rate = -monotone_certificate.constants['contraction_rate']
            tolerance = 3 * (h1_rate_se if math.isfinite(h1_rate_se) else 0.0) + 1e-9
            h1_ok = bool(h1_rate <= monotone_rate + tolerance) if math.isfinite(h1_rate) else True

    report = CouplingReport(
        times=times, mean_sq_dist=mean, stderr=se, fitted_rate=rate, fit_stderr=rate_se,
        bound_rate=bound_rate, envelope_ok=envelope_ok, rate_ok=rate_ok,
        h1_mean_sq_dist=h1_mean, h1_stderr=h1_se, h1_fitted_rate=h1_rate, h1_fit_stderr=h1_rate_se,
        monotone_rate=monotone_rate, h1_rate_ok=h1_ok, h1_non_increasing=non_increasing,
        n_paths=int(summary.shape[0]),
    )
    logger.info(f"Acoplamiento: tasa ajustada {rate:.4g} ± {rate_se:.2g}, cota {bound_rate}")
    return report


@dataclass(frozen=True, eq=False)
class FeatureDictionary:
    """
    Diccionario fijo de observables Lipschitz acotados

    φₖ(u) = tanh(⟨u, gₖ⟩_ρ) con sondas gₖ ρ-ortonormales y
    φ_*(u) = tanh(‖u‖²/(1 + ‖u‖)); todos con ‖φ‖_{Lip_b} ≤ 1.
    """
    weight: object
    features: np.ndarray
    version: str = DICTIONARY_VERSION

    @property
    def grid(self):
        return self.weight.grid

    def evaluate(self, samples):
        samples = np.atleast_2d(samples)
        projections = np.tanh((samples * self.weight.rho_q) @ self.features)
        size = norms(samples, self.weight)
        radial = np.tanh(size * size / (1.0 + size))
        return np.column_stack([projections, radial])

    def describe(self):
        return {
            'version': self.version,
            'features': int(self.features.shape[1]),
            'feature_family': 'cosine, ρ-ortonormal',
            'observables': ['tanh(<u,g_k>)', 'tanh(|u|^2/(1+|u|))'],
            'norm': 'max(sup, Lip)',
        }


def default_dictionary(weight, n_features=DEFAULT_FEATURES):
    return FeatureDictionary(weight, cosine_modes(weight.grid, weight, min(n_features, weight.grid.size)))


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    """Medida empírica (1/T)∫P_t(v,·)dt con pesos uniformes sobre las instantáneas"""
    weight: object
    samples: np.ndarray
    weights: np.ndarray
    T: float
    origin: object
    burn_in: float = 0.0
    times: np.ndarray | None = None

    @property
    def grid(self):
        return self.weight.grid

    def mean_of(self, dictionary):
        return self.weights @ dictionary.evaluate(self.samples)

    def second_moment(self, batches=20):
        """∫‖u‖² con error estándar por medias de lotes"""
        values = norms(self.samples, self.weight) ** 2
        estimate = float(self.weights @ values)
        count = min(batches, values.size)
        if count < 2:
            return estimate, 0.0
        means = np.array([chunk.mean() for chunk in np.array_split(values, count)])
        return estimate, float(means.std(ddof=1) / math.sqrt(count))

    def describe(self):
        return {'T': self.T, 'samples': int(self.samples.shape[0]), 'burn_in': self.burn_in}


def occupation_measure(weight, samples, T, origin, burn_in=0.0, times=None):
    samples = np.atleast_2d(samples)
    count = samples.shape[0]
    if count == 0:
        raise FieldLabError("La medida de ocupación no tiene muestras", T=T)
    return OccupationMeasure(weight, samples, np.full(count, 1.0 / count), float(T), origin, burn_in, times)


def fm_distance(A, B, dictionary=None):
    """
    Distancia tipo Fortet–Mourier restringida al diccionario

    Es max_φ |E_A φ − E_B φ|, una cota inferior de la distancia completa.

    Raises:
        GridMismatchError: Si las medidas viven en mallas distintas
    """
    check_same_grid(A, B)
    if A is B:
        return 0.0
    dictionary = dictionary or default_dictionary(A.weight)
    return float(np.max(np.abs(A.mean_of(dictionary) - B.mean_of(dictionary))))


@dataclass(frozen=True, eq=False)
class KBReport:
    horizons: tuple
    measures: list
    distances: tuple
    cauchy: bool
    tightness: list
    dictionary: dict
    burn_in: float

    def occupation_rows(self):
        rows = []
        for k, (horizon, measure) in enumerate(zip(self.horizons, self.measures)):
            moment, se = measure.second_moment()
            distance = self.distances[k] if k < len(self.distances) else np.nan
            rows.append([horizon, measure.samples.shape[0], moment, se, distance])
        return np.array(rows)

    def tightness_rows(self):
        return np.array([
            [t['T'], t['R'], t['empirical_mass'], t['bound'], t['horizon_bound']] for t in self.tightness
        ])

    def describe(self):
        return {
            'horizons': list(self.horizons), 'distances': list(self.distances),
            'cauchy': self.cauchy, 'burn_in': self.burn_in, 'dictionary': self.dictionary,
            'tightness_ok': all(t['holds'] for t in self.tightness),
        }


def krylov_bogoliubov(
    v,
    cfg,
    model,
    horizons,
    metric=None,
    certificate=None,
    burn_in=DEFAULT_BURN_IN,
    dictionary=None,
    r_factors=DEFAULT_R_FACTORS,
):
    """
    Medidas de ocupación en horizontes crecientes y diagnósticos de convergencia

    Se integra hasta el mayor horizonte y cada horizonte T usa las instantáneas
    en [burn_in·T, T]. Con métrica y certificado de invariancia se reporta la
    masa empírica de {γ(δ)‖u‖₁² ≤ R} frente a la cota 1 − (‖v‖₁² + η_δ)/R
    (`bound`) y frente a la cota por horizonte 1 − (‖v‖₁²/T + η_δ)/R
    (`horizon_bound`). `holds` se decide con la segunda, válida para todo T y
    más fina que la primera cuando T ≥ 1.

    Raises:
        ConfigurationError: Si los horizontes no son crecientes
        SubspaceMembershipError: Si v ∉ H₁ y se pide el diagnóstico de tensión
    """
    check_same_grid(v, model.weight)
    horizons = tuple(float(h) for h in horizons)
    if not horizons or horizons[0] <= 0 or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigurationError("Los horizontes deben ser positivos y crecientes", key='experiment.horizons')
    if not 0 <= burn_in < 1:
        raise ConfigurationError("burn_in debe estar en [0, 1)", key='experiment.burn_in')
    tightness_requested = metric is not None and certificate is not None and certificate.passed
    if tightness_requested:
        metric.check_membership(v.values)

    run = replace(cfg, T=horizons[-1])
    result = EnsembleIntegrator(model, run).run(v.values[None, :])
    states = result.values[result.finite_mask][:, :, 0, :]
    times = result.times
    dictionary = dictionary or default_dictionary(model.weight)
    eps = 1e-9 * horizons[-1]

    measures = []
    for horizon in horizons:
        window = (times >= burn_in * horizon - eps) & (times <= horizon + eps)
        samples = states[:, window].reshape(-1, states.shape[-1])
        measures.append(occupation_measure(model.weight, samples, horizon, v, burn_in, times[window]))
    distances = tuple(fm_distance(a, b, dictionary) for a, b in zip(measures, measures[1:]))
    cauchy = all(b <= a + 1e-12 for a, b in zip(distances, distances[1:]))

    tightness = []
    if tightness_requested:
        gamma = certificate.constants['gamma_delta']
        eta = certificate.constants['eta_delta']
        start = float(metric.h1_energy_values(v.values))
        energies = metric.h1_energy_values(states)
        scale = start + eta
        for horizon in horizons:
            window = times <= horizon + eps
            values = gamma * energies[:, window].ravel()
            for factor in r_factors:
                radius = factor * max(scale, 1e-12)
                mass = float(np.mean(values <= radius))
                bound = 1.0 - (start + eta) / radius
                horizon_bound = 1.0 - (start / horizon + eta) / radius
                tightness.append({
                    'T': horizon, 'R': radius, 'empirical_mass': mass, 'bound': bound,
                    'horizon_bound': horizon_bound,
                    'holds': mass >= horizon_bound - 3 * math.sqrt(max(mass * (1 - mass), 1e-12) / values.size),
                })
    report = KBReport(
        horizons=horizons, measures=measures, distances=distances, cauchy=cauchy,
        tightness=tightness, dictionary=dictionary.describe(), burn_in=burn_in,
    )
    logger.info(f"Krylov–Bogoliubov: distancias {['%.3g' % d for d in distances]} (Cauchy={cauchy})")
    return report


@dataclass(frozen=True)
class SecondMomentReport:
    empirical: float
    stderr: float
    bound: float
    holds: bool

    def describe(self):
        return {'empirical': self.empirical, 'stderr': self.stderr, 'C_hat': self.bound, 'holds': self.holds}


def second_moment_bound(cert, occupation):
    """
    Comparar ∫‖u‖² de la medida de ocupación con Ĉ = C̃/γ̃

    Raises:
        CertificateError: Si el certificado de ergodicidad no fue aprobado
        BoundViolationError: Si el momento empírico excede Ĉ + 3 SE
    """
    if cert.assumption != 'ergodicity' or not cert.passed:
        raise CertificateError("La cota de segundo momento requiere ergodicidad aprobada")
    bound = cert.constants['C_hat']
    empirical, se = occupation.second_moment()
    holds = empirical <= bound + 3 * se + 1e-12 * max(1.0, bound)
    report = SecondMomentReport(empirical, se, bound, bool(holds))
    if not holds:
        raise BoundViolationError(
            f"Segundo momento {empirical:.6g} ± {se:.2g} excede Ĉ = {bound:.6g}",
            report=report, empirical=empirical, bound=bound,
        )
    return report


@dataclass(frozen=True, eq=False)
class ContinuityReport:
    times: np.ndarray
    mean_sq_increment: np.ndarray
    stderr: np.ndarray
    exponent: float
    exponent_stderr: float
    prefactor: float

    def to_rows(self):
        return np.column_stack([self.times, self.mean_sq_increment, self.stderr])

    def describe(self):
        return {'exponent': self.exponent, 'exponent_stderr': self.exponent_stderr, 'prefactor': self.prefactor}


def stochastic_continuity(v, cfg, model):
    """
    Regresión de E‖u(t, v) − v‖² para t pequeño

    Ajusta E‖u(t) − v‖² ≈ c·tᵏ en escala log-log: k ≈ 1 con ruido, k ≈ 2 sin ruido
    (salvo en puntos de equilibrio, donde la curva es nula).
    """
    check_same_grid(v, model.weight)
    weight = model.weight

    def reducer(state):
        difference = state[:, 0, :] - v.values
        return (difference * difference) @ weight.rho_q

    result = EnsembleIntegrator(model, cfg).run(v.values[None, :], reducer)
    mean, se = mean_and_stderr(result.values[result.finite_mask])
    times = result.times
    valid = (times > 0) & (mean > 0)
    if np.count_nonzero(valid) >= 2:
        fit = linregress(np.log(times[valid]), np.log(mean[valid]))
        exponent, exponent_se, prefactor = float(fit.slope), float(fit.stderr), float(np.exp(fit.intercept))
    else:
        exponent, exponent_se, prefactor = math.nan, math.nan, 0.0
    return ContinuityReport(times, mean, se, exponent, exponent_se, prefactor)
