"""Orquestación de experimentos: construye el modelo, ejecuta y escribe los artefactos."""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from config import Config
from fieldlab.core.dynamics import ensemble_moments, energy_ensemble, h1_energy_monitor, simulate, strong_convergence
from fieldlab.core.ergodicity import (
    certify,
    couple,
    krylov_bogoliubov,
    second_moment_bound,
    stochastic_continuity,
)
from fieldlab.core.kernel import decompose, operator_norm
from fieldlab.core.nonlocal_metric import antisymmetric_bound, build_metric, compact_ball_cover, spectrum_table
from fieldlab.core.particle import meanfield_compare, meanfield_ladder, population_field_model, simulate_particles
from fieldlab.core.space import case_diagnostics, weighted_norm
from fieldlab.errors import BlowUpError, CertificateError, DefinitenessError, TrivialSubspaceError
from fieldlab.runconfig import (
    build_activation,
    build_grid,
    build_initial,
    build_kernel,
    build_model,
    build_noise,
    build_particle_config,
    build_sim_config,
    build_weight,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERTIFICATE_FAILED = 2

SETTING_KEYS = (
    'DEFINITENESS_TOL',
    'RANK_TOL',
    'MEMBERSHIP_TOL',
    'DEFAULT_DELTA',
    'BURN_IN_FRACTION',
    'A2_MAX_LEVELS',
    'ESTIMATION_TRIALS',
    'DEFAULT_THREADS',
)

# Los valores por defecto viven solo en config.Config
DEFAULT_SETTINGS = {key: getattr(Config, key) for key in SETTING_KEYS}


@dataclass
class ExperimentOutcome:
    """Resultado de un experimento: código de salida, resumen y certificados"""
    exit_code: int
    summary: dict = field(default_factory=dict)
    certificates: list = field(default_factory=list)


def settings_from(app_config):
    """Extraer de la configuración de Flask los valores que usa el núcleo numérico"""
    return {key: app_config.get(key, default) for key, default in DEFAULT_SETTINGS.items()}


class ModelBuilder:
    """
    Construcción perezosa de los objetos numéricos de una RunConfig

    Cada propiedad se construye una sola vez; las que no aplican valen None.
    """

    def __init__(self, run, settings=None):
        self.run = run
        self.settings = dict(DEFAULT_SETTINGS, **(settings or {}))

    @property
    def threads(self):
        return int(self.run.threads or self.settings['DEFAULT_THREADS'])

    @cached_property
    def grid(self):
        return build_grid(self.run.section('space'))

    @cached_property
    def weight(self):
        return build_weight(self.grid, self.run.section('space').get('weight'))

    @cached_property
    def kernel(self):
        return build_kernel(self.grid, self.weight, self.run.section('kernel'))

    @cached_property
    def decomposition(self):
        if self.kernel is None:
            return None
        return decompose(self.kernel, self.weight, tol=self.settings['DEFINITENESS_TOL'])

    @cached_property
    def metric(self):
        dec = self.decomposition
        if dec is None:
            return None
        try:
            return build_metric(
                dec, self.weight, rank_tol=self.settings['RANK_TOL'],
                membership_tol=self.settings['MEMBERSHIP_TOL'],
            )
        except (DefinitenessError, TrivialSubspaceError) as e:
            logger.info(f"Sin métrica no local: {e.message}")
            return None

    @cached_property
    def activation(self):
        return build_activation(self.run.section('activation'))

    @cached_property
    def noise(self):
        return build_noise(self.weight, self.kernel, self.activation, self.run.section('noise'), self.metric)

    @cached_property
    def model(self):
        return build_model(self.weight, self.activation, self.kernel, self.noise)

    @cached_property
    def sim(self):
        return build_sim_config(self.run.section('dynamics'), self.run.seed, self.threads)

    @cached_property
    def initial(self):
        return build_initial(self.grid, self.weight, self.run.section('dynamics').get('initial'), self.metric)

    @cached_property
    def particle(self):
        return build_particle_config(self.run.section('particle'), self.run.seed, self.run.section('dynamics'))

    def cases(self):
        if self.kernel is None:
            return None
        return case_diagnostics(self.grid, self.weight, self.kernel, self.settings['A2_MAX_LEVELS'])

    def certificates(self, delta=None, c_delta=None, trials=None):
        options = self.run.options
        return certify(
            self.model,
            self.sim.alpha,
            delta=options.get('delta', self.settings['DEFAULT_DELTA']) if delta is None else delta,
            decomposition=self.decomposition,
            metric=self.metric,
            c_delta=options.get('c_delta') if c_delta is None else c_delta,
            trials=int(options.get('trials', self.settings['ESTIMATION_TRIALS']) if trials is None else trials),
            seed=self.run.seed,
            definiteness_tol=self.settings['DEFINITENESS_TOL'],
            rank_tol=self.settings['RANK_TOL'],
        )


def _write_cases(builder, writer, summary):
    cases = builder.cases()
    if cases is not None:
        writer.write_json('cases.json', cases.to_dict())
        summary['cases'] = {k: v for k, v in cases.to_dict().items() if k.startswith('case_')}


def _write_certificates(certificates, writer):
    for name, cert in certificates.items():
        writer.write_json(f'certificate_{name}.json', cert.to_dict())
    writer.write_json('certificates.json', {name: c.to_dict() for name, c in certificates.items()})


def run_simulate(builder, writer):
    options = builder.run.options
    summary = {}
    _write_cases(builder, writer, summary)
    stats = ensemble_moments(
        builder.initial, builder.sim, builder.model, tuple(options.get('p_list', (2,))), builder.metric
    )
    writer.write_csv('moments.csv', stats.to_rows(), ['time', 'p', 'estimate', 'stderr'])
    summary['moments'] = stats.describe()

    saved = []
    for k in range(min(int(options.get('save_paths', 0)), builder.sim.n_paths)):
        try:
            trajectory = simulate(builder.initial, builder.sim, builder.model, path_index=k)
        except BlowUpError as e:
            logger.warning(f"Trayectoria {k}: {e.message}")
            trajectory = e.trajectory
            saved.append({'path': k, 'blow_up_time': e.time})
        else:
            saved.append({'path': k, 'blow_up_time': None})
        writer.write_npy(f'path_{k}.npy', trajectory.states)
    if saved:
        writer.write_npy('path_times.npy', builder.sim.times)
        summary['saved_paths'] = saved

    if options.get('convergence'):
        report = strong_convergence(
            builder.initial, builder.sim, builder.model, options['convergence'],
            ref_ratio=int(options.get('ref_ratio', 64)),
        )
        writer.write_csv('convergence.csv', report.to_rows(), ['dt', 'error'])
        summary['convergence'] = report.describe()

    if options.get('continuity'):
        report = stochastic_continuity(builder.initial, builder.sim, builder.model)
        writer.write_csv('continuity.csv', report.to_rows(), ['time', 'mean_sq_increment', 'stderr'])
        summary['continuity'] = report.describe()
    return ExperimentOutcome(EXIT_OK, summary)


def run_certify(builder, writer):
    options = builder.run.options
    summary = {}
    _write_cases(builder, writer, summary)
    certificates = builder.certificates()
    _write_certificates(certificates, writer)
    summary['certificates'] = {name: c.verdict for name, c in certificates.items()}

    ergodicity = certificates['ergodicity']
    horizon = options.get('occupation_horizon')
    if horizon is not None:
        if ergodicity.passed:
            kb = krylov_bogoliubov(
                builder.initial, builder.sim, builder.model, [float(horizon)],
                burn_in=float(options.get('burn_in', builder.settings['BURN_IN_FRACTION'])),
            )
            report = second_moment_bound(ergodicity, kb.measures[0])
            writer.write_json('second_moment.json', report.describe())
            summary['second_moment'] = report.describe()
        else:
            logger.info("Cota de segundo momento omitida: ergodicidad no certificada")

    failed = [name for name in builder.run.gate if not certificates[name].passed]
    if failed:
        logger.warning(f"Certificados fallidos en la compuerta: {', '.join(failed)}")
        summary['gate_failed'] = failed
        return ExperimentOutcome(EXIT_CERTIFICATE_FAILED, summary, list(certificates.values()))
    return ExperimentOutcome(EXIT_OK, summary, list(certificates.values()))


def run_spectrum(builder, writer):
    options = builder.run.options
    summary = {}
    _write_cases(builder, writer, summary)
    dec = builder.decomposition
    norm = operator_norm(builder.kernel, builder.weight)
    writer.write_json('norm.json', norm.to_dict())
    writer.write_json('definiteness.json', dec.to_dict())
    summary['definiteness'] = dec.definiteness
    summary['operator_norm'] = norm.value
    eigenvalues = np.linalg.eigvalsh(dec.form_matrix())[::-1]
    writer.write_csv(
        'form_spectrum.csv', np.column_stack([np.arange(1, eigenvalues.size + 1), eigenvalues]),
        ['index', 'eigenvalue'],
    )
    metric = builder.metric
    if metric is not None:
        count = int(options.get('count', metric.rank))
        writer.write_csv('spectrum.csv', spectrum_table(metric)[:count], ['index', 'eigenvalue'])
        writer.write_npy('eigenfields.npy', metric.eigenvectors[:, :count])
        writer.write_json('metric.json', metric.to_dict())
        summary['metric'] = metric.to_dict()
        summary['C_check'] = antisymmetric_bound(dec, metric)
        if 'cover_radius' in options and 'cover_eps' in options:
            summary['cover_modes'] = compact_ball_cover(metric, float(options['cover_radius']), float(options['cover_eps']))
    return ExperimentOutcome(EXIT_OK, summary)


def run_invariant(builder, writer):
    options = builder.run.options
    summary = {}
    metric = builder.metric
    certificates = builder.certificates()
    _write_certificates(certificates, writer)
    invariance = certificates['invariance']
    if not invariance.applicable:
        raise CertificateError(
            f"El experimento invariant requiere el certificado de invariancia: {invariance.notes[0]}",
            assumption='invariance',
        )
    samples = energy_ensemble(builder.initial, builder.sim, builder.model, metric)
    report = h1_energy_monitor(samples, metric, invariance)
    writer.write_csv(
        'energy.csv', report.to_rows(),
        ['time', 'lhs', 'lhs_stderr', 'rhs', 'margin', 'integrated_lhs', 'integrated_stderr', 'integrated_rhs'],
    )
    summary['energy'] = report.describe()
    summary['invariance'] = invariance.verdict

    horizons = options.get('horizons')
    if horizons:
        kwargs = {'burn_in': float(options.get('burn_in', builder.settings['BURN_IN_FRACTION']))}
        if 'r_factors' in options:
            kwargs['r_factors'] = tuple(options['r_factors'])
        kb = krylov_bogoliubov(
            builder.initial, builder.sim, builder.model, horizons, metric=metric,
            certificate=invariance, **kwargs,
        )
        writer.write_csv('occupation.csv', kb.occupation_rows(), ['T', 'samples', 'second_moment', 'stderr', 'fm_next'])
        if kb.tightness:
            writer.write_csv(
                'tightness.csv', kb.tightness_rows(), ['T', 'R', 'empirical_mass', 'bound', 'horizon_bound']
            )
        writer.write_json('krylov_bogoliubov.json', kb.describe())
        summary['krylov_bogoliubov'] = kb.describe()
    return ExperimentOutcome(EXIT_OK, summary, list(certificates.values()))


def run_couple(builder, writer):
    options = builder.run.options
    summary = {}
    partner = build_initial(
        builder.grid, builder.weight, options.get('partner'), builder.metric, key='experiment.partner'
    )
    certificates = builder.certificates()
    _write_certificates(certificates, writer)
    monotone = certificates['monotone']
    report = couple(
        builder.initial, partner, builder.sim, builder.model,
        certificate=certificates['ergodicity'], metric=builder.metric,
        monotone_certificate=monotone if monotone.applicable else None,
    )
    header = ['time', 'mean_sq_dist', 'stderr', 'envelope']
    if report.h1_mean_sq_dist is not None:
        header += ['h1_mean_sq_dist', 'h1_stderr']
    writer.write_csv('coupling.csv', report.to_rows(), header)
    writer.write_json('coupling.json', report.describe())
    summary['coupling'] = report.describe()
    return ExperimentOutcome(EXIT_OK, summary, list(certificates.values()))


def run_particle(builder, writer):
    cfg = builder.particle
    runs = int(builder.run.options.get('n_runs', 1))
    described = []
    for k in range(runs):
        path = simulate_particles(cfg, run_index=k)
        writer.write_csv(f'particles_{k}.csv', path.to_rows(), ['time', 'pop', 'mean', 'var', 'jumps'])
        if k == 0:
            writer.write_npy('events_0.npy', np.column_stack([path.event_times, path.event_populations]))
        described.append(path.describe())
    writer.write_json('particles.json', {'config': cfg.to_dict(), 'runs': described})
    return ExperimentOutcome(EXIT_OK, {'runs': described})


def run_compare(builder, writer):
    options = builder.run.options
    cfg = builder.particle
    runs = int(options.get('n_runs', 8))
    points = int(options.get('points_per_box', 8))
    kwargs = {'threads': builder.threads, 'bootstrap': int(options.get('bootstrap', 200))}
    if 'dt' in options:
        kwargs['dt'] = float(options['dt'])
    if options.get('ladder'):
        reports, decreasing = meanfield_ladder(cfg, tuple(options['ladder']), runs, points, **kwargs)
        rows = [[r.N, r.discrepancy, *r.confidence_interval] for r in reports]
        writer.write_csv('ladder.csv', rows, ['N', 'discrepancy', 'ci_low', 'ci_high'])
        summary = {'ladder': [r.describe() for r in reports], 'decreasing': decreasing}
    else:
        report = meanfield_compare(cfg, population_field_model(cfg, points), runs, **kwargs)
        writer.write_csv(
            'compare.csv', report.to_rows(),
            ['time', 'pop', 'particle_mean', 'particle_se', 'field_mean', 'field_se'],
        )
        summary = report.describe()
    writer.write_json('compare.json', summary)
    return ExperimentOutcome(EXIT_OK, summary)


EXPERIMENT_RUNNERS = {
    'simulate': run_simulate,
    'certify': run_certify,
    'spectrum': run_spectrum,
    'invariant': run_invariant,
    'couple': run_couple,
    'particle': run_particle,
    'compare': run_compare,
}


def run_experiment(run, writer, settings=None):
    """
    Ejecutar el experimento de una RunConfig

    Returns:
        ExperimentOutcome: 0 si terminó, 2 si un certificado de la compuerta falló
    """
    builder = ModelBuilder(run, settings)
    logger.info(f"Experimento {run.experiment} (semilla {run.seed}, hilos {builder.threads})")
    return EXPERIMENT_RUNNERS[run.experiment](builder, writer)


def validate_run(run, settings=None):
    """
    Validación sin simulación: restricciones, casos y vista previa de certificados

    Raises:
        FieldLabError: La primera restricción violada
    """
    builder = ModelBuilder(run, settings)
    report = {'status': 'ok', 'experiment': run.experiment, 'seed': run.seed}
    if run.experiment in ('particle', 'compare'):
        cfg = builder.particle
        report['particle'] = {'N': cfg.N, 'P': cfg.P, 'reports': int(cfg.report_times.size)}
        if run.experiment == 'compare':
            sde = population_field_model(cfg, int(run.options.get('points_per_box', 8)))
            report['grid'] = sde.grid.to_dict()
        return report

    report['grid'] = builder.grid.to_dict()
    report['weight'] = builder.weight.to_dict()
    if builder.kernel is not None:
        report['cases'] = builder.cases().to_dict()
        report['definiteness'] = builder.decomposition.definiteness
    if run.experiment == 'spectrum':
        return report
    report['activation'] = builder.activation.to_dict()
    if builder.noise is not None:
        report['noise'] = builder.noise.describe()
    report['dynamics'] = builder.sim.to_dict()
    report['initial_norm'] = weighted_norm(builder.initial, builder.weight)
    if run.experiment == 'couple':
        build_initial(builder.grid, builder.weight, run.options.get('partner'), builder.metric, key='experiment.partner')
    if run.experiment in ('certify', 'invariant', 'couple'):
        certificates = builder.certificates()
        report['certificates'] = {
            name: {'verdict': c.verdict, 'margin': c.margin} for name, c in certificates.items()
        }
    return report
