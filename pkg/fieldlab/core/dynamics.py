"""Integración temporal de la EDPE discretizada en forma mild y ensambles de trayectorias.

Cada trayectoria k usa su propio generador derivado de (semilla maestra, k),
así que los resultados no dependen del orden de ejecución ni del número de
hilos. Los incrementos de ruido se sortean por bloques fijos de pasos.
"""
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import repeat

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import linregress

from fieldlab.core.space import Field, check_same_grid, norms
from fieldlab.errors import (
    BlowUpError,
    ConfigurationError,
    FieldLabError,
    ModeCountError,
    MomentGrowthWarning,
    SubspaceMembershipError,
)

logger = logging.getLogger(__name__)

SCHEMES = ('exponential_euler', 'euler_maruyama')
NOISE_BLOCK = 256
# Holgura relativa al decidir si T/dt es entero
STEP_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    """
    Parámetros de integración

    Args:
        alpha: Tasa de decaimiento α > 0
        T: Horizonte
        dt: Paso, 0 < dt ≤ T; si T/dt no es entero el último paso es parcial
        scheme: 'exponential_euler' o 'euler_maruyama'
        n_paths: Tamaño del ensamble
        seed: Semilla maestra
        record_stride: Pasos entre instantáneas
        threads: Hilos del ensamble
        chunk_size: Trayectorias por unidad de trabajo
    """
    alpha: float
    T: float
    dt: float
    scheme: str = 'exponential_euler'
    n_paths: int = 1
    seed: int = 0
    record_stride: int = 1
    threads: int = 1
    chunk_size: int = 64

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("alpha debe ser positivo", key='dynamics.alpha')
        if not 0 < self.dt <= self.T or not math.isfinite(self.T):
            raise ConfigurationError("Se requiere 0 < dt ≤ T", key='dynamics.dt')
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"Esquema desconocido: {self.scheme}", key='dynamics.scheme')
        for name in ('n_paths', 'record_stride', 'threads', 'chunk_size'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} debe ser ≥ 1", key=f'dynamics.{name}')

    @property
    def n_steps(self):
        return max(1, math.ceil(self.T / self.dt - STEP_TOL))

    @property
    def last_dt(self):
        """Longitud del último paso: T − (n−1)·dt, igual a dt cuando T/dt es entero"""
        rest = self.T - (self.n_steps - 1) * self.dt
        return self.dt if abs(rest - self.dt) <= STEP_TOL * self.dt else rest

    def step_time(self, k):
        """Instante tras k pasos; el último cae exactamente en T"""
        return self.T if k >= self.n_steps else k * self.dt

    @property
    def snapshot_steps(self):
        steps = list(range(0, self.n_steps + 1, self.record_stride))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return np.array(steps)

    @property
    def times(self):
        times = self.snapshot_steps * self.dt
        times[-1] = self.T
        return times

    def to_dict(self):
        return {
            'alpha': self.alpha, 'T': self.T, 'dt': self.dt, 'scheme': self.scheme,
            'n_paths': self.n_paths, 'seed': self.seed, 'record_stride': self.record_stride,
            'threads': self.threads, 'chunk_size': self.chunk_size, 'n_steps': self.n_steps,
            'last_dt': self.last_dt,
        }


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Modelo du = −αu dt + K F(u) dt + B(u) dW sin α (α vive en SimConfig)"""
    weight: object
    activation: object
    kernel: object = None
    noise: object = None

    def __post_init__(self):
        items = [self.weight] + [x for x in (self.kernel, self.noise) if x is not None]
        check_same_grid(*items)

    @property
    def grid(self):
        return self.weight.grid

    @property
    def m_modes(self):
        return self.noise.m_modes if self.noise is not None else 0

    def drift_values(self, values):
        if self.kernel is None:
            return np.zeros_like(values)
        return self.kernel.apply_values(self.activation(values))

    def diffusion_values(self, values, increments):
        if self.noise is None:
            return 0.0
        return self.noise.apply_values(values, increments)


def path_generator(seed, path_index):
    """Generador independiente de la trayectoria k derivado de (semilla, k)"""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(path_index),)))


@dataclass(frozen=True, eq=False)
class PathResults:
    times: np.ndarray
    values: np.ndarray
    blowup_times: np.ndarray
    path_indices: np.ndarray

    @property
    def finite_mask(self):
        return np.isnan(self.blowup_times)

    @property
    def blow_up_fraction(self):
        return float(np.mean(~self.finite_mask)) if self.blowup_times.size else 0.0


def _exponential_factors(alpha, dt):
    z = -alpha * dt
    return math.exp(z), (math.expm1(z) / z if z != 0 else 1.0)

class EnsembleIntegrator:
    """
    Motor de ensambles por bloques de trayectorias

    Cada bloque integra P trayectorias × R réplicas; las réplicas de una misma
    trayectoria comparten incrementos (acoplamiento síncrono). Un `reducer`
    resume el estado (P, R, N) en cada instantánea; sin reducer se guardan
    los estados completos.
    """

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.decay, self.phi1 = _exponential_factors(cfg.alpha, cfg.dt)
        self.last_decay, self.last_phi1 = _exponential_factors(cfg.alpha, cfg.last_dt)
        self.sqrt_dt = math.sqrt(cfg.dt)
        self.sqrt_last_dt = math.sqrt(cfg.last_dt)

    def step_values(self, values, increments, final=False):
        """
        Un paso del esquema sobre un lote (…, N) con incrementos dW (…, m)

        Con final=True el paso tiene longitud cfg.last_dt.
        """
        cfg = self.cfg
        if final:
            dt, decay, phi1 = cfg.last_dt, self.last_decay, self.last_phi1
        else:
            dt, decay, phi1 = cfg.dt, self.decay, self.phi1
        drift = self.model.drift_values(values)
        diffusion = self.model.diffusion_values(values, increments) if increments is not None else 0.0
        if cfg.scheme == 'exponential_euler':
            return decay * values + (phi1 * dt) * drift + decay * diffusion
        return values + dt * (drift - cfg.alpha * values) + diffusion

    def run(self, initial, reducer=None, path_indices=None):
        initial = np.atleast_2d(np.asarray(initial, dtype=float))
        if initial.shape[-1] != self.model.grid.size:
            raise FieldLabError("El estado inicial no coincide con la malla")
        paths = np.arange(self.cfg.n_paths) if path_indices is None else np.asarray(path_indices)
        size = self.cfg.chunk_size
        chunks = [paths[i:i + size] for i in range(0, len(paths), size)]
        args = (chunks, repeat(initial), repeat(reducer))
        if self.cfg.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                parts = list(pool.map(self._run_chunk, *args))
        else:
            parts = list(map(self._run_chunk, *args))
        values = np.concatenate([p[0] for p in parts], axis=0)
        blowups = np.concatenate([p[1] for p in parts])
        result = PathResults(self.cfg.times, values, blowups, paths)
        if result.blow_up_fraction > 0:
            logger.warning(f"Fracción de trayectorias con explosión: {result.blow_up_fraction:.3f}")
        return result

    def _run_chunk(self, paths, initial, reducer):
        cfg = self.cfg
        m = self.model.m_modes
        n_paths = len(paths)
        state = np.broadcast_to(initial, (n_paths,) + initial.shape).copy()
        generators = [path_generator(cfg.seed, k) for k in paths]
        snapshots = cfg.snapshot_steps
        blowups = np.full(n_paths, np.nan)
        alive = np.ones(n_paths, dtype=bool)

        def summarize(values):
            return values.copy() if reducer is None else np.asarray(reducer(values))

        first = summarize(state)
        output = np.empty((n_paths, len(snapshots)) + first.shape[1:])
        output[:, 0] = first
        position = 1
        block = None
        for n in range(cfg.n_steps):
            final = n == cfg.n_steps - 1
            increments = None
            if m:
                offset = n % NOISE_BLOCK
                if offset == 0:
                    length = min(NOISE_BLOCK, cfg.n_steps - n)
                    block = np.stack([g.standard_normal((length, m)) for g in generators], axis=1)
                scale = self.sqrt_last_dt if final else self.sqrt_dt
                increments = (scale * block[offset])[:, None, :]
            with np.errstate(all='ignore'):
                state = self.step_values(state, increments, final)
            broken = alive & ~np.isfinite(state).all(axis=(1, 2))
            if broken.any():
                t = cfg.step_time(n + 1)
                blowups[broken] = t
                alive &= ~broken
                state[broken] = np.nan
                logger.warning(f"Explosión en t={t:.6g} para trayectorias {paths[broken].tolist()}")
            if position < len(snapshots) and n + 1 == snapshots[position]:
                output[:, position] = summarize(state)
                position += 1
        return output, blowups


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: object
    times: np.ndarray
    states: np.ndarray
    seed: int = 0
    path_index: int = 0

    def field(self, index):
        return Field(self.grid, self.states[index])

    @property
    def final(self):
        return self.field(-1)

    def to_rows(self):
        return np.column_stack([self.times, self.states])

    def describe(self):
        return {
            'grid': self.grid.to_dict(),
            'seed': self.seed,
            'path_index': self.path_index,
            'snapshots': int(self.times.size),
            'T': float(self.times[-1]),
        }


def step(u, cfg, model, xi, t=0.0):
    """
    Un paso del esquema desde el instante t

    Raises:
        ModeCountError: Si len(xi) ≠ m_modes
        BlowUpError: Si el estado resultante no es finito
    """
    check_same_grid(u, model.weight)
    xi = np.asarray(xi, dtype=float)
    if xi.size != model.m_modes:
        raise ModeCountError(
            f"Se esperaban {model.m_modes} coeficientes y llegaron {xi.size}",
            expected=model.m_modes, received=int(xi.size),
        )
    integrator = EnsembleIntegrator(model, cfg)
    increments = integrator.sqrt_dt * xi if model.m_modes else None
    with np.errstate(all='ignore'):
        values = integrator.step_values(u.values, increments)
    if not np.all(np.isfinite(values)):
        raise BlowUpError(f"Estado no finito en t={t + cfg.dt:.6g}", time=t + cfg.dt)
    return Field(u.grid, values)


def simulate(u0, cfg, model, path_index=0):
    """
    Trayectoria individual, determinista dada (semilla, índice de trayectoria)

    Raises:
        BlowUpError: Con la trayectoria parcial hasta la última instantánea finita
    """
    check_same_grid(u0, model.weight)
    integrator = EnsembleIntegrator(model, replace(cfg, n_paths=1, threads=1))
    result = integrator.run(u0.values[None, :], path_indices=[path_index])
    states = result.values[0, :, 0, :]
    if not result.finite_mask[0]:
        finite = np.isfinite(states).all(axis=1)
        last = int(np.flatnonzero(finite)[-1])
        partial = Trajectory(u0.grid, result.times[:last + 1], states[:last + 1], cfg.seed, path_index)
        raise BlowUpError(
            f"Explosión en t={result.blowup_times[0]:.6g}",
            trajectory=partial, time=float(result.blowup_times[0]),
            last_finite_time=float(result.times[last]),
        )
    return Trajectory(u0.grid, result.times, states, cfg.seed, path_index)


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    times: np.ndarray
    p_list: tuple
    estimates: np.ndarray
    stderr: np.ndarray
    n_paths: int
    blow_up_fraction: float = 0.0
    sup_h1_energy: np.ndarray | None = None
    growth_warning: bool = False

    def to_rows(self):
        rows = []
        for k, p in enumerate(self.p_list):
            rows.append(np.column_stack([
                self.times, np.full(self.times.size, p), self.estimates[k], self.stderr[k],
            ]))
        return np.vstack(rows)

    def describe(self):
        return {
            'p_list': list(self.p_list),
            'n_paths': self.n_paths,
            'blow_up_fraction': self.blow_up_fraction,
            'growth_warning': self.growth_warning,
        }


def mean_and_stderr(samples):
    """Media y error estándar por columna sobre el eje de trayectorias"""
    count = samples.shape[0]
    mean = samples.mean(axis=0)
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(count)


def _grows_too_fast(times, estimate, stderr):
    valid = (times > 0) & (estimate > 0)
    half = valid & (times <= times[-1] / 2)
    if np.count_nonzero(half) < 3:
        return False
    fit = linregress(times[half], np.log(estimate[half]))
    late = valid & (times > times[-1] / 2)
    envelope = np.exp(
        fit.intercept + 3 * fit.intercept_stderr + (fit.slope + 3 * fit.stderr) * times[late]
    )
    return bool(np.any(estimate[late] - 3 * stderr[late] > envelope))


def ensemble_moments(u0, cfg, model, p_list=(2,), metric=None):
    """
    Estimaciones de Monte Carlo de E‖u(t)‖ᵖ con errores estándar

    Con métrica se agrega la estimación corrida de E sup_{s≤t} ‖u(s)‖₁². Si el
    crecimiento en la segunda mitad supera el ajuste exponencial de la primera
    se emite MomentGrowthWarning.
    """
    check_same_grid(u0, model.weight)
    p_list = tuple(float(p) for p in p_list)
    if any(p < 2 for p in p_list):
        raise ConfigurationError("Los momentos requieren p ≥ 2", key='experiment.p_list')
    weight = model.weight

    def reducer(state):
        current = state[:, 0, :]
        columns = [norms(current, weight)]
        if metric is not None:
            columns.append(metric.h1_energy_values(current))
        return np.stack(columns, axis=1)

    result = EnsembleIntegrator(model, cfg).run(u0.values[None, :], reducer)
    alive = result.finite_mask
    summary = result.values[alive]
    estimates, errors = [], []
    for p in p_list:
        mean, se = mean_and_stderr(summary[:, :, 0] ** p)
        estimates.append(mean)
        errors.append(se)
    estimates, errors = np.array(estimates), np.array(errors)
    sup_energy = None
    if metric is not None:
        sup_energy = np.maximum.accumulate(summary[:, :, 1], axis=1).mean(axis=0)

    flagged = _grows_too_fast(result.times, estimates[0], errors[0]) if summary.shape[0] else False
    if flagged:
        message = "Los momentos crecen más rápido que el ajuste exponencial"
        logger.warning(message)
        warnings.warn(message, MomentGrowthWarning, stacklevel=2)
    return EnsembleStats(
        times=result.times, p_list=p_list, estimates=estimates, stderr=errors,
        n_paths=int(summary.shape[0]), blow_up_fraction=result.blow_up_fraction,
        sup_h1_energy=sup_energy, growth_warning=flagged,
    )


@dataclass(frozen=True, eq=False)
class EnergySamples:
    """Energías ‖u(t)‖₁² por trayectoria (P, S) y el residuo máximo fuera de H₁"""
    times: np.ndarray
    energy: np.ndarray
    initial_energy: float
    residual_max: float


def energy_ensemble(u0, cfg, model, metric):
    """
    Energías en H₁ del ensamble sin almacenar estados

    Raises:
        SubspaceMembershipError: Si algún estado se aleja de H₁ más que la tolerancia
    """
    check_same_grid(u0, model.weight, metric)
    metric.check_membership(u0.values)

    def reducer(state):
        current = state[:, 0, :]
        residual, norm = metric.residual_values(current)
        relative = np.where(norm > 0, residual / np.where(norm > 0, norm, 1.0), residual)
        return np.stack([metric.h1_energy_values(current), relative], axis=1)

    result = EnsembleIntegrator(model, cfg).run(u0.values[None, :], reducer)
    summary = result.values[result.finite_mask]
    drift = summary[:, :, 1]
    worst = float(drift.max()) if drift.size else 0.0
    if worst > metric.membership_tol:
        index = np.unravel_index(int(np.argmax(drift)), drift.shape)
        raise SubspaceMembershipError(
            f"Los estados salen de H₁ (deriva relativa {worst:.3e})",
            residual=worst, time=float(result.times[index[1]]),
        )
    return EnergySamples(
        times=result.times, energy=summary[:, :, 0],
        initial_energy=float(metric.h1_energy_values(u0.values)), residual_max=worst,
    )


def energy_from_trajectories(trajectories, metric):
    """EnergySamples a partir de trayectorias almacenadas"""
    energies = []
    for trajectory in trajectories:
        metric.check_membership(trajectory.states)
        energies.append(metric.h1_energy_values(trajectory.states))
    first = trajectories[0]
    return EnergySamples(
        times=first.times, energy=np.array(energies),
        initial_energy=float(metric.h1_energy_values(first.states[0])), residual_max=0.0,
    )


@dataclass(frozen=True, eq=False)
class EnergyReport:
    times: np.ndarray
    lhs: np.ndarray
    lhs_stderr: np.ndarray
    rhs: np.ndarray
    violations: np.ndarray
    integrated_lhs: np.ndarray
    integrated_stderr: np.ndarray
    integrated_rhs: np.ndarray
    integrated_violations: np.ndarray
    constants: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        return not self.violations.any() and not self.integrated_violations.any()

    def to_rows(self):
        return np.column_stack([
            self.times, self.lhs, self.lhs_stderr, self.rhs, self.margin,
            self.integrated_lhs, self.integrated_stderr, self.integrated_rhs,
        ])

    def describe(self):
        return {
            'passed': self.passed,
            'violations': int(self.violations.sum()),
            'integrated_violations': int(self.integrated_violations.sum()),
            'min_margin': float(self.margin.min()),
            'constants': dict(self.constants),
        }


def _constant(constants, name):
    source = getattr(constants, 'constants', constants)
    try:
        return float(source[name])
    except KeyError:
        raise FieldLabError(f"Falta la constante {name} para el monitor de energía", key=name)


def h1_energy_monitor(samples, metric, constants):
    """
    Auditoría de la estimación de energía en H₁

    Lado izquierdo por trayectoria: (1−δ) sup_{s≤t}‖u(s)‖₁² + γ(δ)∫₀ᵗ‖u(s)‖₁² ds,
    contra ‖u₀‖₁² + η_δ t. También se audita, instante a instante, la forma
    E‖u(t)‖₁² + (2α−β)∫₀ᵗ E‖u(s)‖₁² ds ≤ ‖u₀‖₁² + η t.
    Hay violación cuando el lado izquierdo menos 3 errores estándar supera al derecho.

    Args:
        samples: EnergySamples o lista de Trajectory
        metric: Métrica no local
        constants: Certificado de invariancia o diccionario con
            beta, gamma_delta, eta, eta_delta, delta, alpha

    Returns:
        EnergyReport: Lados de ambas desigualdades por instante
    """
    if not isinstance(samples, EnergySamples):
        samples = energy_from_trajectories(list(samples), metric)
    delta = _constant(constants, 'delta')
    gamma = _constant(constants, 'gamma_delta')
    beta = _constant(constants, 'beta')
    alpha = _constant(constants, 'alpha')
    eta = _constant(constants, 'eta')
    eta_delta = _constant(constants, 'eta_delta')
    times = samples.times
    energy = samples.energy
    running_sup = np.maximum.accumulate(energy, axis=1)
    integral = cumulative_trapezoid(energy, times, axis=1, initial=0.0)

    lhs, lhs_se = mean_and_stderr((1 - delta) * running_sup + gamma * integral)
    rhs = samples.initial_energy + eta_delta * times
    slack = 1e-12 * np.maximum(1.0, np.abs(rhs))
    violations = lhs - 3 * lhs_se > rhs + slack

    integrated_lhs, integrated_se = mean_and_stderr(energy + (2 * alpha - beta) * integral)
    integrated_rhs = samples.initial_energy + eta * times
    integrated_violations = integrated_lhs - 3 * integrated_se > integrated_rhs + slack
    if violations.any() or integrated_violations.any():
        logger.error(
            f"Estimación de energía violada en {int(violations.sum())} instantes "
            f"(forma integrada: {int(integrated_violations.sum())})"
        )
    return EnergyReport(
        times=times, lhs=lhs, lhs_stderr=lhs_se, rhs=rhs, violations=violations,
        integrated_lhs=integrated_lhs, integrated_stderr=integrated_se, integrated_rhs=integrated_rhs,
        integrated_violations=integrated_violations,
        constants={'delta': delta, 'gamma_delta': gamma, 'beta': beta, 'eta': eta, 'eta_delta': eta_delta},
    )


@dataclass(frozen=True)
class ConvergenceReport:
    dts: tuple
    errors: tuple
    order: float
    order_stderr: float
    reference_dt: float

    def to_rows(self):
        return np.column_stack([self.dts, self.errors])

    def describe(self):
        return {
            'dts': list(self.dts), 'errors': list(self.errors), 'order': self.order,
            'order_stderr': self.order_stderr, 'reference_dt': self.reference_dt,
        }


def strong_convergence(u0, cfg, model, dts, ref_ratio=64):
    """
    Orden fuerte de Euler–Maruyama contra una referencia exponencial fina

    Todas las resoluciones comparten los incrementos brownianos finos de paso
    min(dts)/ref_ratio; cada dt los agrega. El error es
    (E‖u_dt(T) − u_ref(T)‖²)^{1/2} y el orden es la pendiente log-log.
    """
    check_same_grid(u0, model.weight)
    dts = tuple(sorted((float(d) for d in dts), reverse=True))
    if len(dts) < 2:
        raise ConfigurationError("Se requieren al menos dos pasos", key='experiment.dts')
    fine = dts[-1] / ref_ratio
    ratios = [int(round(d / fine)) for d in dts]
    if any(abs(r * fine - d) > 1e-9 * d for r, d in zip(ratios, dts)):
        raise ConfigurationError("Cada dt debe ser múltiplo del paso de referencia", key='experiment.dts')
    # Las resoluciones se comparan en el mismo instante final
    if any(abs(round(cfg.T / d) * d - cfg.T) > STEP_TOL * cfg.T for d in dts):
        raise ConfigurationError("Cada dt debe dividir el horizonte T", key='experiment.dts')
    reference = EnsembleIntegrator(model, replace(cfg, dt=fine, scheme='exponential_euler'))
    coarse = [EnsembleIntegrator(model, replace(cfg, dt=d, scheme='euler_maruyama')) for d in dts]
    m = model.m_modes
    paths = cfg.n_paths
    generators = [path_generator(cfg.seed, k) for k in range(paths)]
    state_ref = np.broadcast_to(u0.values, (paths, u0.grid.size)).copy()
    states = [state_ref.copy() for _ in dts]
    accumulated = [np.zeros((paths, m)) for _ in dts]
    n_fine = reference.cfg.n_steps
    sqrt_fine = math.sqrt(fine)
    block = None
    for n in range(n_fine):
        increments = None
        if m:
            offset = n % NOISE_BLOCK
            if offset == 0:
                length = min(NOISE_BLOCK, n_fine - n)
                block = np.stack([g.standard_normal((length, m)) for g in generators], axis=1)
            increments = sqrt_fine * block[offset]
        state_ref = reference.step_values(state_ref, increments)
        for k, ratio in enumerate(ratios):
            if m:
                accumulated[k] += increments
            if (n + 1) % ratio == 0:
                states[k] = coarse[k].step_values(states[k], accumulated[k] if m else None)
                accumulated[k][:] = 0.0
    errors = tuple(
        float(np.sqrt(np.mean(norms(s - state_ref, model.weight) ** 2))) for s in states
    )
    fit = linregress(np.log(dts), np.log(errors))
    logger.info(f"Orden fuerte observado {fit.slope:.3f} ± {fit.stderr:.3f}")
    return ConvergenceReport(dts, errors, float(fit.slope), float(fit.stderr), fine)
