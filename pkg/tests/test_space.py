import math

import numpy as np
import pytest

from fieldlab.core.kernel import KernelSpec, assemble
from fieldlab.core.space import (
    Field,
    Grid,
    Weight,
    case_diagnostics,
    cosine_modes,
    estimate_a2_constant,
    inner_product,
    weighted_norm,
)
from fieldlab.errors import DegenerateWeightError, GridMismatchError, ModeCountError


class TestGrid:
    def test_trapezoid_weights(self, unit_grid):
        q = unit_grid.quadrature
        assert q[0] == pytest.approx(0.005)
        assert q[1] == pytest.approx(0.01)
        assert q.sum() == pytest.approx(1.0)

    def test_two_dimensional_quadrature_is_tensor_product(self):
        grid = Grid.uniform([(0.0, 1.0), (-1.0, 1.0)], (11, 21))
        assert grid.size == 231
        assert grid.quadrature.sum() == pytest.approx(2.0)

    def test_rejects_degenerate_interval(self):
        with pytest.raises(GridMismatchError):
            Grid.uniform([(1.0, 1.0)], 11)

    def test_rejects_three_dimensions(self):
        with pytest.raises(GridMismatchError):
            Grid.uniform([(0, 1)] * 3, 5)

    def test_equal_grids_share_identifier(self):
        a = Grid.uniform([(0.0, 1.0)], 33)
        b = Grid.uniform([[0, 1]], 33)
        assert a == b and a.grid_id == b.grid_id


class TestWeightedProducts:
    def test_norm_of_constant_field(self, unit_grid):
        w = Weight.const(unit_grid, 2.0)
        u = Field.constant(unit_grid, 3.0)
        # ‖u‖² = 9 · 2 · |U|
        assert weighted_norm(u, w) == pytest.approx(math.sqrt(18.0))

    def test_zero_weight_gives_zero_norm(self, unit_grid):
        w = Weight.const(unit_grid, 0.0)
        assert weighted_norm(Field.constant(unit_grid, 5.0), w) == 0.0

    def test_inner_product_of_identity(self, unit_grid, unit_weight):
        x = Field.from_function(unit_grid, lambda t: t)
        h = unit_grid.spacing[0]
        assert inner_product(x, x, unit_weight) == pytest.approx(1 / 3, abs=h * h)

    def test_norm_with_power_weight(self, unit_grid):
        w = Weight.abs_pow(unit_grid, 0.5)
        h = unit_grid.spacing[0]
        assert weighted_norm(Field.constant(unit_grid, 1.0), w) == pytest.approx(math.sqrt(2 / 3), abs=h)

    def test_cauchy_schwarz(self, unit_grid, rng):
        w = Weight.table(unit_grid, rng.uniform(0.1, 2.0, unit_grid.size))
        for _ in range(20):
            u = Field(unit_grid, rng.standard_normal(unit_grid.size))
            v = Field(unit_grid, rng.standard_normal(unit_grid.size))
            assert abs(inner_product(u, v, w)) <= weighted_norm(u, w) * weighted_norm(v, w) * (1 + 1e-12)

    def test_quadrature_is_second_order(self):
        sizes = [11, 21, 41, 81, 161]
        steps, errors = [], []
        for n in sizes:
            grid = Grid.uniform([(0.0, 1.0)], n)
            u = Field.from_function(grid, np.cos)
            steps.append(grid.spacing[0])
            errors.append(abs(inner_product(u, u, Weight.const(grid)) - (0.5 + math.sin(2.0) / 4)))
        order = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert order >= 1.8

    def test_mismatched_grids(self, unit_grid, unit_weight):
        other = Field.zeros(Grid.uniform([(0.0, 1.0)], 51))
        with pytest.raises(GridMismatchError):
            inner_product(other, other, unit_weight)

    def test_negative_weight_rejected(self, unit_grid):
        with pytest.raises(DegenerateWeightError):
            Weight.table(unit_grid, -np.ones(unit_grid.size))


class TestCosineModes:
    def test_modes_are_orthonormal(self):
        w = Weight.abs_pow(Grid.uniform([(0.5, 1.5)], 101), 0.5)
        modes = cosine_modes(w.grid, w, 6)
        gram = modes.T @ (w.rho_q[:, None] * modes)
        assert np.allclose(gram, np.eye(6), atol=1e-10)

    def test_too_many_modes(self, unit_grid, unit_weight):
        with pytest.raises(ModeCountError):
            cosine_modes(unit_grid, unit_weight, unit_grid.size + 1)


class TestMuckenhoupt:
    def test_constant_weight_is_exactly_one(self, unit_grid, unit_weight):
        assert estimate_a2_constant(unit_weight, unit_grid) == 1.0

    def test_power_weight_exceeds_one(self):
        grid = Grid.uniform([(-1.0, 1.0)], 200)
        w = Weight.abs_pow(grid, 0.5)
        assert estimate_a2_constant(w, grid) > 1.0

    def test_monotone_in_levels(self):
        grid = Grid.uniform([(-1.0, 1.0)], 200)
        w = Weight.abs_pow(grid, 0.5)
        values = [estimate_a2_constant(w, grid, levels) for levels in range(1, 8)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_zero_node_raises(self, unit_grid):
        values = np.ones(unit_grid.size)
        values[10] = 0.0
        with pytest.raises(DegenerateWeightError):
            estimate_a2_constant(Weight.table(unit_grid, values), unit_grid)


class TestCaseDiagnostics:
    def test_bounded_domain_with_unit_weight(self, unit_grid, unit_weight, constant_kernel):
        report = case_diagnostics(unit_grid, unit_weight, constant_kernel)
        assert report.case_i
        assert not report.case_ii
        assert report.case_iii
        # κ = ∫∫ 1 = 1 para w ≡ 1 en [0, 1]²
        assert report.kappa == pytest.approx(1.0)

    def test_truncated_convolution_satisfies_case_ii(self):
        grid = Grid.uniform([(-6.0, 6.0)], 121, truncated=True)
        w = Weight.const(grid)
        kernel = assemble(KernelSpec('gaussian'), grid)
        report = case_diagnostics(grid, w, kernel)
        assert report.case_ii
        assert not report.case_i
        assert report.majorant_l1 == pytest.approx(math.sqrt(2 * math.pi), rel=1e-3)

    def test_repeated_calls_are_identical(self):
        grid = Grid.uniform([(-6.0, 6.0)], 121, truncated=True)
        w = Weight.abs_pow(grid, 0.5, center=[0.35])
        kernel = assemble(KernelSpec('gaussian'), grid)
        before = w.values.copy()
        first = case_diagnostics(grid, w, kernel).to_dict()
        second = case_diagnostics(grid, w, kernel).to_dict()
        assert first == second
        assert np.array_equal(w.values, before)

    def test_reasons_are_reported_not_raised(self, unit_grid, constant_kernel):
        values = np.ones(unit_grid.size)
        values[0] = 0.0
        report = case_diagnostics(unit_grid, Weight.table(unit_grid, values), constant_kernel)
        assert not report.case_iii
        assert report.reasons['case_iii']
