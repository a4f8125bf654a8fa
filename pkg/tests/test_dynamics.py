import math

import numpy as np
import pytest

from fieldlab.core.activation import Activation
from fieldlab.core.dynamics import (
    FieldModel,
    SimConfig,
    energy_ensemble,
    ensemble_moments,
    h1_energy_monitor,
    simulate,
    step,
    strong_convergence,
)
from fieldlab.core.ergodicity import certify
from fieldlab.core.kernel import KernelSpec, assemble, decompose, scaled
from fieldlab.core.noise import additive_noise
from fieldlab.core.nonlocal_metric import build_metric
from fieldlab.core.space import Field, Grid, Weight, cosine_modes
from fieldlab.errors import BlowUpError, ConfigurationError, ModeCountError

SIGMA = [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05]


def ou_model(weight):
    return FieldModel(weight, Activation('constant', value=0.0), None, additive_noise(weight, SIGMA))


def ou_initial(grid, weight):
    return Field(grid, cosine_modes(grid, weight, 2)[:, 1])


class TestSimConfig:
    def test_partial_last_step_reaches_horizon(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.3)
        assert cfg.n_steps == 4
        assert cfg.last_dt == pytest.approx(0.1)
        assert cfg.times[-1] == 1.0
        assert np.allclose(cfg.times, [0.0, 0.3, 0.6, 0.9, 1.0])
        model = FieldModel(unit_weight, Activation('constant', value=0.0))
        path = simulate(Field.constant(unit_grid, 1.0), cfg, model)
        # Euler exponencial es exacto para el decaimiento lineal: e^{−αT}
        assert np.allclose(path.final.values, math.exp(-1.0))

    def test_exact_multiple_keeps_full_steps(self):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1)
        assert cfg.n_steps == 10
        assert cfg.last_dt == 0.1

    def test_step_larger_than_horizon(self):
        with pytest.raises(ConfigurationError) as error:
            SimConfig(alpha=1.0, T=1.0, dt=1.5)
        assert error.value.key == 'dynamics.dt'

    def test_alpha_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            SimConfig(alpha=0.0, T=1.0, dt=0.1)

    def test_snapshot_times_include_horizon(self):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1, record_stride=3)
        assert cfg.times[-1] == pytest.approx(1.0)
        assert cfg.times[1] == pytest.approx(0.3)


class TestStep:
    def test_deterministic_decay(self, unit_grid, unit_weight):
        model = FieldModel(unit_weight, Activation('constant', value=0.0))
        cfg = SimConfig(alpha=2.0, T=1.0, dt=0.1)
        u = step(Field.constant(unit_grid, 1.0), cfg, model, [])
        assert np.allclose(u.values, math.exp(-0.2))

    def test_mode_count(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1)
        with pytest.raises(ModeCountError):
            step(Field.zeros(unit_grid), cfg, ou_model(unit_weight), np.zeros(3))

    def test_euler_maruyama_drift(self, unit_grid, unit_weight, constant_kernel):
        model = FieldModel(unit_weight, Activation('identity'), constant_kernel)
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1, scheme='euler_maruyama')
        u = step(Field.constant(unit_grid, 1.0), cfg, model, [])
        # u + dt(K u − αu) con Ku = 1
        assert np.allclose(u.values, 1.0)


class TestSimulate:
    def test_same_seed_same_path(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=0.5, dt=0.01, seed=42)
        model = ou_model(unit_weight)
        u0 = ou_initial(unit_grid, unit_weight)
        first = simulate(u0, cfg, model, path_index=3)
        second = simulate(u0, cfg, model, path_index=3)
        other = simulate(u0, cfg, model, path_index=4)
        assert np.array_equal(first.states, second.states)
        assert not np.array_equal(first.states, other.states)

    def test_blow_up_keeps_partial_trajectory(self, unit_grid, unit_weight):
        kernel = scaled(assemble(KernelSpec('constant', {'c': 1.0}), unit_grid), 1e6)
        model = FieldModel(unit_weight, Activation('identity'), kernel)
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.01)
        with pytest.raises(BlowUpError) as error:
            simulate(Field.constant(unit_grid, 1.0), cfg, model)
        partial = error.value.trajectory
        assert np.all(np.isfinite(partial.states))
        assert partial.times[-1] < error.value.time <= 1.0


class TestEnsembles:
    def test_thread_count_does_not_change_results(self, unit_grid, unit_weight):
        model = ou_model(unit_weight)
        u0 = ou_initial(unit_grid, unit_weight)
        serial = SimConfig(alpha=1.0, T=1.0, dt=0.05, n_paths=40, seed=9, chunk_size=8)
        parallel = SimConfig(alpha=1.0, T=1.0, dt=0.05, n_paths=40, seed=9, chunk_size=8, threads=4)
        a = ensemble_moments(u0, serial, model)
        b = ensemble_moments(u0, parallel, model)
        assert np.array_equal(a.estimates, b.estimates)

    def test_ou_second_moment_matches_scheme_closed_form(self, unit_grid, unit_weight):
        alpha, dt, T = 1.0, 0.02, 2.0
        cfg = SimConfig(alpha=alpha, T=T, dt=dt, n_paths=2000, seed=5, record_stride=25, chunk_size=500)
        stats = ensemble_moments(ou_initial(unit_grid, unit_weight), cfg, ou_model(unit_weight))
        t = stats.times
        decay = np.exp(-2 * alpha * t)
        per_step = math.exp(-2 * alpha * dt)
        total = sum(s * s for s in SIGMA)
        expected = decay + total * dt * per_step * (1 - decay) / (1 - per_step)
        assert np.all(np.abs(stats.estimates[0] - expected) <= 3 * stats.stderr[0] + 1e-12)

    def test_moments_require_p_at_least_two(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1)
        with pytest.raises(ConfigurationError):
            ensemble_moments(Field.zeros(unit_grid), cfg, ou_model(unit_weight), p_list=(1,))

    @pytest.mark.slow
    def test_ou_oracle_continuous_closed_form(self, unit_grid, unit_weight):
        alpha, T = 1.0, 5.0
        cfg = SimConfig(alpha=alpha, T=T, dt=0.005, n_paths=10000, seed=7, record_stride=1000, chunk_size=500)
        stats = ensemble_moments(ou_initial(unit_grid, unit_weight), cfg, ou_model(unit_weight))
        total = sum(s * s for s in SIGMA)
        expected = math.exp(-2 * alpha * T) + total * (1 - math.exp(-2 * alpha * T)) / (2 * alpha)
        assert abs(stats.estimates[0][-1] - expected) <= 3 * stats.stderr[0][-1]


def test_strong_order_of_euler_maruyama():
    grid = Grid.uniform([(0.0, 1.0)], 51)
    weight = Weight.const(grid)
    kernel = scaled(assemble(KernelSpec('gaussian', {'M': 20.0}), grid), 0.5)
    model = FieldModel(weight, Activation('logistic'), kernel, additive_noise(weight, [0.3, 0.2, 0.1]))
    cfg = SimConfig(alpha=1.0, T=1.0, dt=2 ** -4, n_paths=32, seed=2)
    u0 = Field(grid, 0.5 + cosine_modes(grid, weight, 2)[:, 1])
    report = strong_convergence(u0, cfg, model, [2 ** -k for k in range(4, 9)], ref_ratio=16)
    assert report.order >= 0.4
    assert list(report.errors) == sorted(report.errors, reverse=True)


@pytest.fixture
def relu_rank_one(unit_weight, constant_kernel):
    """Núcleo w ≡ 1, relu y ruido aditivo sobre el único autocampo"""
    metric = build_metric(decompose(constant_kernel, unit_weight), unit_weight)
    noise = additive_noise(unit_weight, [0.05], basis='eigen', metric=metric)
    model = FieldModel(unit_weight, Activation('relu'), constant_kernel, noise)
    invariance = certify(model, 1.0, delta=0.5, metric=metric)['invariance']
    return model, metric, invariance


def test_invariance_energy_estimate_holds(unit_grid, relu_rank_one):
    model, metric, invariance = relu_rank_one
    assert invariance.passed
    assert invariance.constants['beta'] == pytest.approx(math.sqrt(2.0))
    cfg = SimConfig(alpha=1.0, T=4.0, dt=0.01, n_paths=300, seed=4, record_stride=10)
    # relu inactiva: el campo decae a tasa 2α
    u0 = Field(unit_grid, -0.5 * metric.eigenvectors[:, 0])
    samples = energy_ensemble(u0, cfg, model, metric)
    report = h1_energy_monitor(samples, metric, invariance)
    assert report.passed
    assert samples.residual_max <= metric.membership_tol


def test_energy_monitor_flags_undamped_positive_state(unit_grid, relu_rank_one):
    model, metric, invariance = relu_rank_one
    cfg = SimConfig(alpha=1.0, T=4.0, dt=0.01, n_paths=300, seed=4, record_stride=10)
    # Con u = a·1, a > 0, la deriva −αu + KF(u) se anula y la energía no decae
    u0 = Field(unit_grid, 0.5 * metric.eigenvectors[:, 0])
    report = h1_energy_monitor(energy_ensemble(u0, cfg, model, metric), metric, invariance)
    assert not report.passed
    assert report.violations[-1]
