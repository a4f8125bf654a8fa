import math

import numpy as np
import pytest

from fieldlab.core.activation import Activation
from fieldlab.core.kernel import KernelSpec, assemble, decompose, operator_norm
from fieldlab.core.noise import (
    additive_noise,
    apply_noise,
    estimate_constants,
    hs_norm,
    mollified_noise,
    pointwise_noise,
)
from fieldlab.core.nonlocal_metric import build_metric
from fieldlab.core.space import Field
from fieldlab.errors import IneligibleActivationError, MissingMetricError, ModeCountError


@pytest.fixture
def rank_one_metric(unit_weight, constant_kernel):
    return build_metric(decompose(constant_kernel, unit_weight), unit_weight)


class TestAdditive:
    def test_hilbert_schmidt_norm(self, unit_grid, unit_weight):
        sigma = [0.5, 0.4, 0.3]
        B = additive_noise(unit_weight, sigma)
        # modos ρ-ortonormales: ‖B‖² = Σσₖ²
        assert hs_norm(B, Field.zeros(unit_grid)) ** 2 == pytest.approx(0.5)

    def test_mode_count_checked(self, unit_grid, unit_weight):
        B = additive_noise(unit_weight, [0.1, 0.2])
        with pytest.raises(ModeCountError):
            apply_noise(B, Field.zeros(unit_grid), np.ones(3))

    def test_constants_are_exact(self, unit_weight):
        constants = estimate_constants(additive_noise(unit_weight, [0.3, 0.4]))
        assert constants.C_B == 0.0
        assert constants.B0 == pytest.approx(0.5)
        assert constants.provenance['C_B'] == 'exact'

    def test_eigen_basis_requires_metric(self, unit_weight):
        with pytest.raises(MissingMetricError):
            additive_noise(unit_weight, [0.1], basis='eigen')

    def test_eigen_basis_is_h1_supported(self, unit_weight, rank_one_metric):
        B = additive_noise(unit_weight, [0.2], basis='eigen', metric=rank_one_metric)
        constants = estimate_constants(B, rank_one_metric)
        assert constants.h1_supported
        assert constants.C_B_tilde == 0.0
        assert constants.C_B_tilde2 == pytest.approx(0.04)

    def test_cosine_modes_leave_rank_one_subspace(self, unit_weight, rank_one_metric):
        B = additive_noise(unit_weight, [0.2, 0.1])
        constants = estimate_constants(B, rank_one_metric)
        assert not constants.h1_supported
        assert constants.C_B_tilde2 == math.inf

    def test_require_h1_without_metric(self, unit_weight):
        with pytest.raises(MissingMetricError):
            estimate_constants(additive_noise(unit_weight, [0.1]), require_h1=True)


class TestPointwise:
    def test_lipschitz_constant_of_map(self, unit_weight):
        B = pointwise_noise(unit_weight, Activation('tanh', scale=0.1))
        constants = estimate_constants(B, trials=1000, seed=3)
        assert constants.C_B == pytest.approx(0.1)
        assert constants.sampled_ratio_max <= 0.1 + 1e-8
        assert constants.B0 == 0.0

    def test_apply_is_pointwise_product(self, unit_grid, unit_weight):
        B = pointwise_noise(unit_weight, Activation('logistic'))
        u = Field.from_function(unit_grid, lambda x: x)
        xi = np.linspace(-1, 1, unit_grid.size)
        result = apply_noise(B, u, xi)
        assert np.allclose(result.values, Activation('logistic')(u.values) * xi)


class TestMollified:
    def test_scale_shrinks_with_population(self, unit_weight, constant_kernel):
        small = estimate_constants(mollified_noise(constant_kernel, unit_weight, Activation('logistic'), 100))
        large = estimate_constants(mollified_noise(constant_kernel, unit_weight, Activation('logistic'), 400))
        assert large.C_B == pytest.approx(small.C_B / 2)
        assert small.provenance['C_B'] == 'analytic_bound'

    def test_hilbert_schmidt_matches_columns(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid)
        B = mollified_noise(kernel, unit_weight, Activation('logistic'), 50)
        u = Field.from_function(unit_grid, lambda x: np.sin(3 * x))
        columns = B.column_matrix(u.values)
        direct = float(np.sum((columns ** 2) * unit_weight.rho_q[:, None]))
        assert hs_norm(B, u) ** 2 == pytest.approx(direct, rel=1e-10)
        assert B.m_modes == unit_grid.size

    def test_operator_bound_uses_kernel_norm(self, unit_grid, unit_weight, constant_kernel):
        B = mollified_noise(constant_kernel, unit_weight, Activation('logistic'), 25)
        constants = estimate_constants(B)
        expected = operator_norm(constant_kernel, unit_weight).value / 5 / (3 * math.sqrt(3))
        assert constants.operator_norm_bound == pytest.approx(expected)

    def test_tanh_rate_is_ineligible(self, unit_weight, constant_kernel):
        with pytest.raises(IneligibleActivationError):
            mollified_noise(constant_kernel, unit_weight, Activation('tanh'), 10)


@pytest.mark.parametrize('make', [
    lambda w, K: pointwise_noise(w, Activation('tanh', scale=0.3)),
    lambda w, K: pointwise_noise(w, Activation('logistic', scale=2.0)),
    lambda w, K: mollified_noise(K, w, Activation('logistic'), 30),
    lambda w, K: additive_noise(w, [0.1, 0.2, 0.3]),
])
def test_lipschitz_audit_across_catalogue(make, unit_weight, constant_kernel, rng):
    B = make(unit_weight, constant_kernel)
    constants = estimate_constants(B, trials=1000, seed=11)
    n = unit_weight.grid.size
    u = rng.standard_normal((200, n))
    v = u + 0.1 * rng.standard_normal((200, n))
    ratios = np.sqrt(B.hs_diff_sq_values(u, v)) / np.sqrt(((u - v) ** 2) @ unit_weight.rho_q)
    assert np.all(ratios <= constants.C_B + 1e-8)
