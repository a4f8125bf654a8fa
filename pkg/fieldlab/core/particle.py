"""Sistema de partículas con saltos de Poisson por poblaciones y su comparación con la EDPE de campo medio."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fieldlab.core.dynamics import EnsembleIntegrator, FieldModel, SimConfig, mean_and_stderr
from fieldlab.core.kernel import KernelSpec, assemble
from fieldlab.core.noise import mollified_noise
from fieldlab.core.space import Field, Grid, Weight
from fieldlab.errors import AlignmentError, ConfigurationError

logger = logging.getLogger(__name__)

INITIAL_LAWS = ('constant', 'uniform', 'gaussian')
DRAW_BLOCK = 4096
REBASE_EXPONENT = 20.0
PARTICLE_STREAM = 7
DEFAULT_LADDER = (500, 2000, 8000)


def _check_law(law, index):
    key = f'particle.initial[{index}]'
    kind = law.get('law', 'constant')
    expected = {'constant': {'value'}, 'uniform': {'low', 'high'}, 'gaussian': {'mean', 'std'}}
    if kind not in expected:
        raise ConfigurationError(f"Ley inicial desconocida: {kind}", key=key, allowed=', '.join(INITIAL_LAWS))
    given = set(law) - {'law'}
    if given != expected[kind]:
        raise ConfigurationError(
            f"La ley {kind} requiere exactamente {', '.join(sorted(expected[kind]))}", key=key
        )
    if kind == 'uniform' and not law['low'] <= law['high']:
        raise ConfigurationError("La ley uniforme requiere low ≤ high", key=key)
    if kind == 'gaussian' and not law['std'] >= 0:
        raise ConfigurationError("La ley gaussiana requiere std ≥ 0", key=key)
    return dict(law, law=kind)


def law_mean(law):
    if law['law'] == 'constant':
        return float(law['value'])
    if law['law'] == 'uniform':
        return 0.5 * (law['low'] + law['high'])
    return float(law['mean'])


def _draw_initial(rng, law, size):
    if law['law'] == 'constant':
        return np.full(size, float(law['value']))
    if law['law'] == 'uniform':
        return rng.uniform(law['low'], law['high'], size)
    return rng.normal(law['mean'], law['std'], size)


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    """
    Configuración del sistema de N neuronas en P poblaciones

    Args:
        populations: Tamaños N_k (uno por población)
        w_tilde: Matriz P×P de conectividad w̃(k, l)
        alpha: Tasa de decaimiento
        activation: Función de tasa f
        T: Horizonte
        dt_report: Intervalo entre reportes (T/dt_report entero)
        initial: Leyes iniciales ν₀ᵏ (una por población o una compartida)
        seed: Semilla maestra
        rate_cap: Cota fija de la tasa; obligatoria si f no es acotada ni monótona
        safety: Factor de la cota automática f(safety · máx X)
    """
    populations: tuple
    w_tilde: np.ndarray
    alpha: float
    activation: object
    T: float
    dt_report: float
    initial: tuple = ({'law': 'constant', 'value': 0.0},)
    seed: int = 0
    rate_cap: float | None = None
    safety: float = 2.0

    def __post_init__(self):
        sizes = tuple(int(n) for n in np.atleast_1d(self.populations))
        if not sizes or min(sizes) < 1:
            raise ConfigurationError("Cada población requiere N_k ≥ 1", key='particle.populations')
        object.__setattr__(self, 'populations', sizes)
        matrix = np.atleast_2d(np.asarray(self.w_tilde, dtype=float))
        if matrix.shape != (len(sizes), len(sizes)) or not np.all(np.isfinite(matrix)):
            raise ConfigurationError(
                f"w_tilde debe ser una matriz finita {len(sizes)}×{len(sizes)}", key='particle.w_tilde'
            )
        matrix.setflags(write=False)
        object.__setattr__(self, 'w_tilde', matrix)
        if not self.alpha > 0:
            raise ConfigurationError("alpha debe ser positivo", key='particle.alpha')
        if not 0 < self.dt_report <= self.T:
            raise ConfigurationError("Se requiere 0 < dt_report ≤ T", key='particle.dt_report')
        reports = round(self.T / self.dt_report)
        if abs(reports * self.dt_report - self.T) > 1e-9 * self.T:
            raise ConfigurationError("T/dt_report debe ser entero", key='particle.dt_report')
        laws = [self.initial] if isinstance(self.initial, dict) else list(self.initial)
        if len(laws) == 1:
            laws = laws * len(sizes)
        if len(laws) != len(sizes):
            raise ConfigurationError("Se requiere una ley inicial por población", key='particle.initial')
        object.__setattr__(self, 'initial', tuple(_check_law(law, k) for k, law in enumerate(laws)))
        if self.rate_cap is not None and not self.rate_cap > 0:
            raise ConfigurationError("rate_cap debe ser positivo", key='particle.rate_cap')
        if not self.safety >= 1:
            raise ConfigurationError("safety debe ser ≥ 1", key='particle.safety')
        a = self.activation
        if self.rate_cap is None and not a.bounded and not a.monotone:
            raise ConfigurationError(
                f"La tasa {a.variant} no es acotada ni monótona: se requiere rate_cap",
                key='particle.rate_cap',
            )

    @property
    def P(self):
        return len(self.populations)

    @property
    def N(self):
        return sum(self.populations)

    @property
    def report_times(self):
        return np.arange(round(self.T / self.dt_report) + 1) * self.dt_report

    def with_population(self, total):
        """Misma configuración con N repartido por igual entre las poblaciones"""
        if total % self.P:
            raise ConfigurationError(f"N = {total} no es divisible entre {self.P} poblaciones", key='particle.N')
        return ParticleConfig(
            (total // self.P,) * self.P, self.w_tilde, self.alpha, self.activation, self.T,
            self.dt_report, self.initial, self.seed, self.rate_cap, self.safety,
        )

    def to_dict(self):
        return {
            'populations': list(self.populations),
            'w_tilde': self.w_tilde.tolist(),
            'alpha': self.alpha,
            'activation': self.activation.to_dict(),
            'T': self.T,
            'dt_report': self.dt_report,
            'initial': [dict(law) for law in self.initial],
            'seed': self.seed,
            'rate_cap': self.rate_cap,
            'safety': self.safety,
        }


@dataclass(frozen=True, eq=False)
class PopulationPath:
    """Estadísticos por población en los tiempos de reporte y bitácora de eventos"""
    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    jumps: np.ndarray
    event_times: np.ndarray
    event_populations: np.ndarray
    candidates: int = 0
    cap_refreshes: int = 0
    clipped: int = 0
    metadata: dict = field(default_factory=dict)

    def to_rows(self):
        """Filas (time, pop, mean, var, jumps) en formato largo"""
        n_times, n_pops = self.means.shape
        return np.column_stack([
            np.repeat(self.times, n_pops),
            np.tile(np.arange(n_pops), n_times),
            self.means.ravel(),
            self.variances.ravel(),
            self.jumps.ravel(),
        ])

    def describe(self):
        return {
            'events': int(self.event_times.size),
            'candidates': self.candidates,
            'acceptance': self.event_times.size / self.candidates if self.candidates else 0.0,
            'cap_refreshes': self.cap_refreshes,
            'clipped': self.clipped,
            **self.metadata,
        }


def particle_generator(seed, run_index):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(PARTICLE_STREAM, int(run_index))))


class ThinningSimulator:
    """
    Simulación exacta por adelgazamiento de Poisson

    El potencial de la neurona i en la población k se guarda como
    Xᵢ(t) = e^{−α(t − t_ref)}(Zᵢ + S_k): un salto aceptado sólo actualiza
    los P acumuladores S_k, y el decaimiento entre eventos es exacto.
    """

    def __init__(self, cfg, run_index=0):
        self.cfg = cfg
        self.rng = particle_generator(cfg.seed, run_index)
        self.sizes = np.array(cfg.populations)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.pop_of = np.repeat(np.arange(cfg.P), self.sizes)
        self.z = np.concatenate([
            _draw_initial(self.rng, law, n) for law, n in zip(cfg.initial, cfg.populations)
        ])
        self.shift = np.zeros(cfg.P)
        self.t_ref = 0.0
        # columna l: salto w̃(k, l)/N_l recibido por la población k
        self.jump_sizes = cfg.w_tilde / self.sizes[None, :]
        self._summarize()

    def _summarize(self):
        self.z_mean = np.bincount(self.pop_of, self.z, minlength=self.cfg.P) / self.sizes
        centred = self.z - self.z_mean[self.pop_of]
        self.z_var = np.bincount(self.pop_of, centred * centred, minlength=self.cfg.P) / self.sizes
        self.z_max = np.maximum.reduceat(self.z, self.starts)

    def _decay(self, t):
        return math.exp(-self.cfg.alpha * (t - self.t_ref))

    def _rebase(self, t):
        self.z = self._decay(t) * (self.z + self.shift[self.pop_of])
        self.shift[:] = 0.0
        self.t_ref = t
        self._summarize()

    def potential(self, i, t):
        return self._decay(t) * (self.z[i] + self.shift[self.pop_of[i]])

    def potentials(self, t):
        return self._decay(t) * (self.z + self.shift[self.pop_of])

    def max_potential(self, t):
        return self._decay(t) * float(np.max(self.z_max + self.shift))

    def population_stats(self, t):
        decay = self._decay(t)
        return decay * (self.z_mean + self.shift), decay * decay * self.z_var

    def rate_cap(self, t):
        """Cota f̄ y potencial máximo para el que sigue siendo válida"""
        cfg = self.cfg
        a = cfg.activation
        if cfg.rate_cap is not None:
            return cfg.rate_cap, math.inf
        if a.bounded:
            return max(a.sup, 0.0), math.inf
        # f monótona: mientras máx X ≤ x_valid, f(X) ≤ f(x_valid)
        x_valid = max(cfg.safety * self.max_potential(t), 0.0)
        return max(a(x_valid), 0.0), x_valid

    def _draws(self):
        n = self.cfg.N
        while True:
            gaps = self.rng.standard_exponential(DRAW_BLOCK).tolist()
            neurons = self.rng.integers(0, n, DRAW_BLOCK).tolist()
            uniforms = self.rng.random(DRAW_BLOCK).tolist()
            yield from zip(gaps, neurons, uniforms)

    def run(self):
        cfg = self.cfg
        f = cfg.activation
        times = cfg.report_times
        means = np.empty((times.size, cfg.P))
        variances = np.empty((times.size, cfg.P))
        jumps = np.zeros((times.size, cfg.P), dtype=int)
        counts = np.zeros(cfg.P, dtype=int)
        event_times, event_pops = [], []
        candidates = refreshes = clipped = 0
        record = 0

        def flush(until):
            nonlocal record
            while record < times.size and times[record] <= until:
                means[record], variances[record] = self.population_stats(times[record])
                jumps[record] = counts
                record += 1

        t = 0.0
        cap, x_valid = self.rate_cap(t)
        draws = self._draws()
        total = cfg.N
        while cap > 0:
            gap, i, u = next(draws)
            tau = t + gap / (total * cap)
            if tau > cfg.T:
                break
            flush(np.nextafter(tau, -math.inf))
            t = tau
            candidates += 1
            if cfg.alpha * (t - self.t_ref) > REBASE_EXPONENT:
                self._rebase(t)
            rate = f(self.potential(i, t))
            if rate < 0:
                rate = 0.0
                clipped += 1
            elif rate > cap:
                rate = cap
                clipped += 1
            if u * cap >= rate:
                continue
            pop = self.pop_of[i]
            self.shift += self.jump_sizes[:, pop] / self._decay(t)
            counts[pop] += 1
            event_times.append(t)
            event_pops.append(pop)
            if self.max_potential(t) > x_valid:
                cap, x_valid = self.rate_cap(t)
                refreshes += 1
                logger.debug(f"Cota de tasa renovada en t={t:.6g}: f̄={cap:.6g}")
        flush(math.inf)
        if clipped:
            logger.warning(f"Tasas recortadas en {clipped} candidatos")
        return PopulationPath(
            times=times, means=means, variances=variances, jumps=jumps,
            event_times=np.array(event_times), event_populations=np.array(event_pops, dtype=int),
            candidates=candidates, cap_refreshes=refreshes, clipped=clipped,
            metadata={'N': cfg.N, 'P': cfg.P},
        )


def simulate_particles(cfg, run_index=0):
    """
    Simular el sistema de partículas por adelgazamiento

    Args:
        cfg: ParticleConfig
        run_index: Índice de la corrida independiente (deriva su generador de la semilla)

    Returns:
        PopulationPath: Medias, varianzas y saltos acumulados por población
    """
    path = ThinningSimulator(cfg, run_index).run()
    logger.info(
        f"Partículas N={cfg.N}, P={cfg.P}: {path.event_times.size} saltos de {path.candidates} candidatos, "
        f"{path.cap_refreshes} renovaciones de cota"
    )
    return path


@dataclass(frozen=True, eq=False)
class MeanFieldModel:
    """EDPE de campo medio sobre [0, 1] con cajas de ancho 1/P alineadas con las poblaciones"""
    model: FieldModel
    initial: Field
    boxes: np.ndarray
    populations: int
    population_size: int

    @property
    def grid(self):
        return self.model.grid

    def box_averages(self, values):
        """Promedios por caja (…, N) → (…, P) con la cuadratura de la malla"""
        q = self.grid.quadrature
        masses = np.bincount(self.boxes, q, minlength=self.populations)
        one_hot = np.eye(self.populations)[self.boxes]
        return (values * q) @ one_hot / masses


def population_field_model(cfg, points_per_box=8):
    """
    Construir la EDPE alineada con un ParticleConfig

    El núcleo es constante por cajas y normalizado por la masa discreta de
    cada caja, de modo que ∫_{caja l} w(x, y) dy = w̃(k, l) exactamente para x
    en la caja k. El ruido es el molificado con escala N.
    """
    if points_per_box < 1:
        raise ConfigurationError("points_per_box debe ser ≥ 1", key='experiment.points_per_box')
    P = cfg.P
    grid = Grid.uniform([(0.0, 1.0)], P * points_per_box + 1)
    weight = Weight.const(grid)
    boxes = np.minimum(np.arange(grid.size) // points_per_box, P - 1)
    masses = np.bincount(boxes, grid.quadrature, minlength=P)
    matrix = cfg.w_tilde[np.ix_(boxes, boxes)] / masses[boxes][None, :]
    kernel = assemble(KernelSpec('table', {'values': matrix}), grid)
    noise = mollified_noise(kernel, weight, cfg.activation, cfg.N)
    model = FieldModel(weight, cfg.activation, kernel, noise)
    initial = Field(grid, np.array([law_mean(law) for law in cfg.initial])[boxes])
    return MeanFieldModel(model, initial, boxes, P, cfg.N)


def _check_alignment(cfg, sde):
    grid = sde.grid
    if sde.populations != cfg.P:
        raise AlignmentError(
            f"La EDPE tiene {sde.populations} cajas y el sistema {cfg.P} poblaciones",
            boxes=sde.populations, populations=cfg.P,
        )
    if grid.dimension != 1 or tuple(grid.bounds[0]) != (0.0, 1.0):
        raise AlignmentError("La EDPE de campo medio debe vivir en [0, 1]", bounds=str(grid.bounds))
    one_hot = np.eye(cfg.P)[sde.boxes]
    box_integrals = (sde.model.kernel.matrix * grid.quadrature) @ one_hot
    expected = cfg.w_tilde[sde.boxes]
    scale = max(1.0, float(np.abs(cfg.w_tilde).max()))
    if not np.allclose(box_integrals, expected, rtol=0.0, atol=1e-9 * scale):
        raise AlignmentError(
            "El núcleo de la EDPE no reproduce w̃ sobre las cajas",
            max_deviation=float(np.abs(box_integrals - expected).max()),
        )
    if sde.population_size != cfg.N:
        raise AlignmentError(
            f"Escala de ruido N={sde.population_size} distinta del tamaño del sistema {cfg.N}",
            noise_scale=sde.population_size, N=cfg.N,
        )


@dataclass(frozen=True, eq=False)
class MeanFieldReport:
    times: np.ndarray
    particle_mean: np.ndarray
    particle_se: np.ndarray
    field_mean: np.ndarray
    field_se: np.ndarray
    discrepancy: float
    confidence_interval: tuple
    within_joint_ci: bool
    n_runs: int
    N: int

    def to_rows(self):
        n_times, n_pops = self.particle_mean.shape
        return np.column_stack([
            np.repeat(self.times, n_pops),
            np.tile(np.arange(n_pops), n_times),
            self.particle_mean.ravel(),
            self.particle_se.ravel(),
            self.field_mean.ravel(),
            self.field_se.ravel(),
        ])

    def describe(self):
        return {
            'N': self.N, 'n_runs': self.n_runs, 'discrepancy': self.discrepancy,
            'ci_low': self.confidence_interval[0], 'ci_high': self.confidence_interval[1],
            'within_joint_ci': self.within_joint_ci,
        }


def _discrepancy(particle, field_values):
    return float(np.max(np.abs(particle.mean(axis=0) - field_values.mean(axis=0))))


def meanfield_compare(cfg, sde, n_runs, dt=None, threads=1, bootstrap=200, scheme='exponential_euler'):
    """
    Comparar las medias por población con los promedios por caja de la EDPE

    Args:
        cfg: ParticleConfig
        sde: MeanFieldModel construido con population_field_model
        n_runs: Corridas de partículas y trayectorias de la EDPE
        dt: Paso de la EDPE (por defecto dt_report/10)
        bootstrap: Réplicas para el intervalo de confianza de la discrepancia

    Returns:
        MeanFieldReport: Discrepancia máxima en el tiempo con IC bootstrap

    Raises:
        AlignmentError: Si poblaciones, cajas o tiempos no están alineados
    """
    _check_alignment(cfg, sde)
    dt = cfg.dt_report / 10 if dt is None else float(dt)
    stride = round(cfg.dt_report / dt)
    if stride < 1 or abs(stride * dt - cfg.dt_report) > 1e-9 * cfg.dt_report:
        raise AlignmentError("dt_report debe ser múltiplo de dt", dt=dt, dt_report=cfg.dt_report)
    sim = SimConfig(
        alpha=cfg.alpha, T=cfg.T, dt=dt, scheme=scheme, n_paths=n_runs, seed=cfg.seed,
        record_stride=stride, threads=threads,
    )
    if sim.times.size != cfg.report_times.size or not np.allclose(sim.times, cfg.report_times):
        raise AlignmentError("Los tiempos de reporte no coinciden con las instantáneas de la EDPE")

    runs = range(n_runs)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(lambda k: ThinningSimulator(cfg, k).run(), runs))
    else:
        paths = [ThinningSimulator(cfg, k).run() for k in runs]
    particle = np.stack([p.means for p in paths])

    result = EnsembleIntegrator(sde.model, sim).run(
        sde.initial.values[None, :], reducer=lambda state: sde.box_averages(state[:, 0, :])
    )
    field_values = result.values[result.finite_mask]

    p_mean, p_se = mean_and_stderr(particle)
    f_mean, f_se = mean_and_stderr(field_values)
    discrepancy = _discrepancy(particle, field_values)
    tolerance = 3 * np.sqrt(p_se ** 2 + f_se ** 2) + 1e-9
    within = bool(np.all(np.abs(p_mean - f_mean) <= tolerance))

    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(PARTICLE_STREAM + 1,)))
    replicates = np.array([
        _discrepancy(
            particle[rng.integers(0, particle.shape[0], particle.shape[0])],
            field_values[rng.integers(0, field_values.shape[0], field_values.shape[0])],
        )
        for _ in range(bootstrap)
    ])
    interval = tuple(float(x) for x in np.percentile(replicates, [2.5, 97.5])) if bootstrap else (discrepancy,) * 2
    logger.info(f"Campo medio N={cfg.N}: discrepancia {discrepancy:.4g} (IC {interval[0]:.3g}–{interval[1]:.3g})")
    return MeanFieldReport(
        times=cfg.report_times, particle_mean=p_mean, particle_se=p_se, field_mean=f_mean, field_se=f_se,
        discrepancy=discrepancy, confidence_interval=interval, within_joint_ci=within,
        n_runs=n_runs, N=cfg.N,
    )


def meanfield_ladder(cfg, sizes=DEFAULT_LADDER, n_runs=8, points_per_box=8, **options):
    """Discrepancias a lo largo de una escalera de N; la tendencia esperada es decreciente"""
    reports = []
    for total in sizes:
        scaled_cfg = cfg.with_population(total)
        sde = population_field_model(scaled_cfg, points_per_box)
        reports.append(meanfield_compare(scaled_cfg, sde, n_runs, **options))
    values = [r.discrepancy for r in reports]
    decreasing = all(b < a for a, b in zip(values, values[1:]))
    return reports, decreasing
