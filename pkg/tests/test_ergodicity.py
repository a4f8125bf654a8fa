import math
from dataclasses import replace

import numpy as np
import pytest

from fieldlab.core.activation import Activation
from fieldlab.core.dynamics import FieldModel, SimConfig
from fieldlab.core.ergodicity import (
    certify,
    couple,
    default_dictionary,
    fm_distance,
    krylov_bogoliubov,
    mixing_bound,
    occupation_measure,
    second_moment_bound,
    stochastic_continuity,
)
from fieldlab.core.kernel import KernelSpec, assemble, decompose, operator_norm, scaled
from fieldlab.core.noise import additive_noise, pointwise_noise
from fieldlab.core.nonlocal_metric import build_metric
from fieldlab.core.space import Field, Grid, Weight, cosine_modes
from fieldlab.errors import (
    CertificateError,
    ConfigurationError,
    GridMismatchError,
    IneligibleActivationError,
)

SIGMA = [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05]
PASS_MARGIN = 2.0 - (2 * math.sqrt(2.0) * 0.25 + 0.1)


@pytest.fixture
def tanh_noise(unit_weight):
    return pointwise_noise(unit_weight, Activation('tanh', scale=0.1))


@pytest.fixture
def gaussian_half(unit_grid, unit_weight):
    """Gaussiana escalada a ‖K‖ = 0.5"""
    kernel = assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid)
    return scaled(kernel, 0.5 / operator_norm(kernel, unit_weight).value)


def ou_model(weight):
    return FieldModel(weight, Activation('constant', value=0.0), None, additive_noise(weight, SIGMA))


class TestCertify:
    def test_ergodicity_margin_for_rank_one_logistic(self, unit_weight, constant_kernel, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, constant_kernel, tanh_noise)
        cert = certify(model, 1.0)['ergodicity']
        assert cert.passed
        assert cert.margin == pytest.approx(PASS_MARGIN, abs=1e-6)
        assert cert.constants['lambda'] == pytest.approx(0.5 + 0.1, abs=1e-6)
        assert cert.constants['noise_rate'] == pytest.approx(0.1)

    def test_small_alpha_fails(self, unit_weight, constant_kernel, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, constant_kernel, tanh_noise)
        cert = certify(model, 0.3)['ergodicity']
        assert cert.verdict == 'fail'
        assert cert.margin < 0

    def test_heaviside_is_ineligible(self, unit_weight, constant_kernel):
        model = FieldModel(unit_weight, Activation('heaviside'), constant_kernel)
        with pytest.raises(IneligibleActivationError):
            certify(model, 1.0)

    def test_invalid_delta(self, unit_weight, constant_kernel, logistic):
        with pytest.raises(CertificateError):
            certify(FieldModel(unit_weight, logistic, constant_kernel), 1.0, delta=1.0)

    def test_monotone_inhibition(self, unit_grid, unit_weight):
        kernel = scaled(assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid), -1.0)
        model = FieldModel(unit_weight, Activation('tanh'), kernel, additive_noise(unit_weight, [0.2, 0.1]))
        cert = certify(model, 0.75)['monotone']
        assert cert.passed
        assert cert.margin == pytest.approx(1.5)
        assert cert.constants['contraction_rate'] == pytest.approx(1.5)

    def test_monotone_requires_inhibitory_kernel(self, unit_weight, constant_kernel):
        model = FieldModel(unit_weight, Activation('tanh'), constant_kernel)
        assert certify(model, 1.0)['monotone'].verdict == 'inapplicable'

    def test_invariance_inapplicable_for_indefinite_kernel(self, unit_grid, unit_weight, logistic):
        cosine = assemble(KernelSpec('cosine_sum', {'a': [1.0], 'm': [math.pi]}), unit_grid)
        kernel = assemble(KernelSpec('table', {'values': cosine.matrix - 0.5}), unit_grid)
        certificates = certify(FieldModel(unit_weight, logistic, kernel), 2.0)
        assert certificates['invariance'].verdict == 'inapplicable'
        assert certificates['invariance'].margin is None
        assert certificates['ergodicity'].applicable

    def test_noise_free_model_without_kernel(self, unit_weight):
        certificates = certify(FieldModel(unit_weight, Activation('constant', value=0.0)), 1.0)
        assert certificates['ergodicity'].margin == pytest.approx(2.0)
        assert certificates['invariance'].notes == ('modelo sin núcleo',)

    def test_certificate_serializes(self, unit_weight, constant_kernel, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, constant_kernel, tanh_noise)
        data = certify(model, 1.0)['ergodicity'].to_dict()
        assert data['verdict'] == 'pass'
        assert data['provenance']['K_norm'] == 'exact'


class TestMixingBound:
    def test_requires_passed_certificate(self, unit_weight, constant_kernel, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, constant_kernel, tanh_noise)
        failed = certify(model, 0.3)['ergodicity']
        with pytest.raises(CertificateError):
            mixing_bound(failed, 1.0, 1.0, 1.0)

    def test_decays_at_certified_rate(self, unit_weight, constant_kernel, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, constant_kernel, tanh_noise)
        cert = certify(model, 1.0)['ergodicity']
        values = mixing_bound(cert, 1.0, 0.5, np.array([0.0, 1.0]))
        assert values[0] == pytest.approx(1.0 + cert.constants['C_hat'])
        rate = 2.0 - cert.constants['lambda']
        assert values[1] / values[0] == pytest.approx(math.exp(-rate))

    def test_monotone_pairwise_bound(self, unit_grid, unit_weight):
        kernel = scaled(assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid), -1.0)
        model = FieldModel(unit_weight, Activation('tanh'), kernel, additive_noise(unit_weight, [0.2]))
        cert = certify(model, 1.0)['monotone']
        values = mixing_bound(cert, 4.0, 1.0, np.array([0.0, 1.0]))
        assert values[0] == pytest.approx(2.0)
        assert values[1] == pytest.approx(2.0 * math.exp(-1.0))


class TestCouple:
    def test_contraction_within_envelope(self, unit_grid, unit_weight, gaussian_half, logistic, tanh_noise):
        model = FieldModel(unit_weight, logistic, gaussian_half, tanh_noise)
        cert = certify(model, 1.0)['ergodicity']
        assert cert.passed
        cfg = SimConfig(alpha=1.0, T=2.0, dt=0.01, n_paths=200, seed=11, record_stride=10)
        v = Field.constant(unit_grid, 1.0)
        z = Field(unit_grid, cosine_modes(unit_grid, unit_weight, 2)[:, 1])
        report = couple(v, z, cfg, model, certificate=cert)
        assert report.envelope_ok
        assert report.rate_ok
        assert report.fitted_rate < 0
        assert report.mean_sq_dist[-1] < report.mean_sq_dist[0]
        assert report.check() is report

    def test_equal_states_rejected(self, unit_grid, unit_weight, gaussian_half, logistic):
        model = FieldModel(unit_weight, logistic, gaussian_half)
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1, n_paths=2)
        v = Field.constant(unit_grid, 1.0)
        with pytest.raises(ConfigurationError):
            couple(v, Field.constant(unit_grid, 1.0), cfg, model)

    def test_without_certificate_only_fits(self, unit_grid, unit_weight, gaussian_half, logistic):
        model = FieldModel(unit_weight, logistic, gaussian_half)
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.05, n_paths=2)
        report = couple(Field.constant(unit_grid, 1.0), Field.zeros(unit_grid), cfg, model)
        assert report.bound_rate is None
        assert report.envelope is None
        assert report.envelope_ok is None


class TestOccupation:
    def test_distance_to_itself_is_zero(self, unit_grid, unit_weight, rng):
        measure = occupation_measure(unit_weight, rng.standard_normal((50, unit_grid.size)), 1.0, None)
        assert fm_distance(measure, measure) == 0.0

    def test_distance_separates_shifted_samples(self, unit_grid, unit_weight, rng):
        samples = rng.standard_normal((200, unit_grid.size))
        A = occupation_measure(unit_weight, samples, 1.0, None)
        B = occupation_measure(unit_weight, samples + 1.0, 1.0, None)
        assert 0.0 < fm_distance(A, B) <= 2.0

    def test_grid_mismatch(self, unit_weight, rng):
        other = Weight.const(Grid.uniform([(0.0, 1.0)], 51))
        A = occupation_measure(unit_weight, rng.standard_normal((5, 101)), 1.0, None)
        B = occupation_measure(other, rng.standard_normal((5, 51)), 1.0, None)
        with pytest.raises(GridMismatchError):
            fm_distance(A, B)

    def test_dictionary_is_bounded(self, unit_weight, rng):
        dictionary = default_dictionary(unit_weight)
        values = dictionary.evaluate(10.0 * rng.standard_normal((20, 101)))
        assert values.shape == (20, 9)
        assert np.all(np.abs(values) <= 1.0)


class TestKrylovBogoliubov:
    def test_distances_between_consecutive_horizons(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.01, n_paths=20, seed=3, record_stride=5)
        report = krylov_bogoliubov(Field.zeros(unit_grid), cfg, ou_model(unit_weight), [1.0, 2.0, 4.0])
        assert len(report.measures) == 3
        assert len(report.distances) == 2
        assert report.tightness == []
        assert report.occupation_rows().shape == (3, 5)

    def test_tightness_reports_both_bounds(self, unit_grid, unit_weight, constant_kernel):
        metric = build_metric(decompose(constant_kernel, unit_weight), unit_weight)
        noise = additive_noise(unit_weight, [0.05], basis='eigen', metric=metric)
        model = FieldModel(unit_weight, Activation('relu'), constant_kernel, noise)
        invariance = certify(model, 1.0, delta=0.5, metric=metric)['invariance']
        assert invariance.passed
        v = Field(unit_grid, -0.5 * metric.eigenvectors[:, 0])
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.01, n_paths=50, seed=6, record_stride=10)
        report = krylov_bogoliubov(v, cfg, model, [0.5, 2.0], metric=metric, certificate=invariance)
        start = float(metric.h1_energy_values(v.values))
        eta = invariance.constants['eta_delta']
        assert report.tightness
        for row in report.tightness:
            assert row['bound'] == pytest.approx(1 - (start + eta) / row['R'])
            assert row['horizon_bound'] == pytest.approx(1 - (start / row['T'] + eta) / row['R'])
            assert row['holds']
        assert report.tightness_rows().shape == (len(report.tightness), 5)

    def test_horizons_must_increase(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.1)
        with pytest.raises(ConfigurationError):
            krylov_bogoliubov(Field.zeros(unit_grid), cfg, ou_model(unit_weight), [2.0, 1.0])


class TestSecondMoment:
    def test_ou_occupation_below_bound(self, unit_grid, unit_weight):
        model = ou_model(unit_weight)
        cert = certify(model, 1.0)['ergodicity']
        # Ĉ = ‖B(0)‖²/(2α − δ)
        assert cert.constants['C_hat'] == pytest.approx(sum(s * s for s in SIGMA) / 1.5)
        cfg = SimConfig(alpha=1.0, T=1.0, dt=0.01, n_paths=40, seed=8, record_stride=10)
        kb = krylov_bogoliubov(Field.zeros(unit_grid), cfg, model, [2.0, 4.0])
        report = second_moment_bound(cert, kb.measures[-1])
        assert report.holds
        assert report.empirical < report.bound

    def test_requires_passed_certificate(self, unit_grid, unit_weight, rng):
        cert = replace(certify(ou_model(unit_weight), 1.0)['ergodicity'], verdict='fail')
        measure = occupation_measure(unit_weight, rng.standard_normal((5, unit_grid.size)), 1.0, None)
        with pytest.raises(CertificateError):
            second_moment_bound(cert, measure)


class TestStochasticContinuity:
    def test_diffusive_exponent(self, unit_grid, unit_weight):
        cfg = SimConfig(alpha=1.0, T=0.1, dt=0.001, n_paths=500, seed=5, record_stride=10)
        report = stochastic_continuity(Field.zeros(unit_grid), cfg, ou_model(unit_weight))
        assert report.exponent == pytest.approx(1.0, abs=0.1)

    def test_ballistic_exponent_without_noise(self, unit_grid, unit_weight):
        model = FieldModel(unit_weight, Activation('constant', value=1.0))
        cfg = SimConfig(alpha=1.0, T=0.1, dt=0.001, n_paths=2, record_stride=10)
        # u' = −u + 1 desde 0 con K = 0 y f ≡ 1: ‖u(t)‖² ≈ t²
        report = stochastic_continuity(Field.zeros(unit_grid), cfg, model)
        assert report.exponent == pytest.approx(2.0, abs=0.15)


@pytest.mark.slow
def test_coupling_at_acceptance_scale(unit_grid, unit_weight, gaussian_half, logistic, tanh_noise):
    model = FieldModel(unit_weight, logistic, gaussian_half, tanh_noise)
    cert = certify(model, 1.0)['ergodicity']
    cfg = SimConfig(alpha=1.0, T=10.0, dt=0.01, n_paths=1000, seed=17, record_stride=20, threads=4)
    v = Field.constant(unit_grid, 1.0)
    z = Field.constant(unit_grid, -1.0)
    report = couple(v, z, cfg, model, certificate=cert)
    assert report.envelope_ok
    assert report.rate_ok
