import math

import numpy as np
import pytest

from fieldlab.core.kernel import (
    CATALOGUE,
    KernelSpec,
    apply,
    assemble,
    decompose,
    operator_norm,
    read_kernel_table,
    scaled,
)
from fieldlab.core.space import Field, Grid, Weight
from fieldlab.errors import BoundWarning, GridMismatchError, KernelConstraintError

# Parámetros válidos para cada variante del catálogo
CATALOGUE_PARAMS = {
    'gaussian': {},
    'exp_sqrt': {},
    'rational': {},
    'sinc_product': {},
    'cosine_sum': {'a': [0.5, 0.5], 'm': [1.0, 2.0]},
    'mexican_hat': {},
    'mexican_hat2': {'A': 0.5, 's': 2.0},
    'mexican_hat3': {'Gamma': 0.25, 'gamma1': 2.0, 'gamma2': 1.0},
    'damped_trig': {'b': 1.0},
    'wizard_hat': {},
}


class TestConstraints:
    def test_mexican_hat2_message(self):
        with pytest.raises(KernelConstraintError) as error:
            KernelSpec('mexican_hat2', {'A': 0.5, 's': 1.0})
        assert '√2 ≤ s ≤ √2/A' in error.value.message

    def test_mexican_hat3_ordering(self):
        with pytest.raises(KernelConstraintError):
            KernelSpec('mexican_hat3', {'Gamma': 0.5, 'gamma1': 1.0, 'gamma2': 2.0})

    def test_cosine_sum_weights_must_sum_to_one(self):
        with pytest.raises(KernelConstraintError):
            KernelSpec('cosine_sum', {'a': [0.5, 0.6], 'm': [1.0, 2.0]})

    def test_cosine_sum_distinct_frequencies(self):
        with pytest.raises(KernelConstraintError):
            KernelSpec('cosine_sum', {'a': [0.5, 0.5], 'm': [1.0, -1.0]})

    def test_unknown_parameter(self):
        with pytest.raises(KernelConstraintError) as error:
            KernelSpec('gaussian', {'sigma': 1.0})
        assert error.value.context['key'] == 'sigma'


class TestAssembly:
    def test_constant_kernel_applies_integral(self, unit_grid, constant_kernel):
        u = Field.from_function(unit_grid, lambda x: x)
        result = apply(constant_kernel, u)
        assert np.allclose(result.values, 0.5)

    def test_fft_matches_dense(self):
        grid = Grid.uniform([(-3.0, 3.0), (-3.0, 3.0)], 33)
        kernel = assemble(KernelSpec('mexican_hat'), grid)
        u = Field.from_function(grid, lambda x, y: np.exp(-x * x) * np.cos(y))
        dense = apply(kernel, u, method='dense').values
        fast = apply(kernel, u, method='fft').values
        assert np.allclose(dense, fast, atol=1e-10)

    def test_table_shape_checked(self, unit_grid):
        with pytest.raises(GridMismatchError):
            assemble(KernelSpec('table', {'values': np.ones((3, 3))}), unit_grid)

    def test_read_dense_table(self, tmp_path):
        grid = Grid.uniform([(0.0, 1.0)], 5)
        path = tmp_path / 'kernel.txt'
        matrix = np.arange(25.0).reshape(5, 5)
        lines = ['5 1 0.25'] + [' '.join(str(v) for v in row) for row in matrix]
        path.write_text('\n'.join(lines), encoding='utf-8')
        assert np.array_equal(read_kernel_table(path, grid), matrix)

    def test_read_table_with_wrong_header(self, tmp_path):
        grid = Grid.uniform([(0.0, 1.0)], 5)
        path = tmp_path / 'kernel.txt'
        path.write_text('6 1 0.2\n' + '\n'.join(['0 0 0 0 0 0'] * 6), encoding='utf-8')
        with pytest.raises(GridMismatchError):
            read_kernel_table(path, grid)


class TestOperatorNorm:
    def test_rank_one_norm(self, unit_grid, unit_weight, constant_kernel):
        norm = operator_norm(constant_kernel, unit_weight)
        assert norm.value == pytest.approx(1.0, rel=1e-12)
        assert norm.holds['sqrt_kappa']

    def test_power_method_agrees(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid)
        exact = operator_norm(kernel, unit_weight).value
        power = operator_norm(kernel, unit_weight, method='power').value
        assert power == pytest.approx(exact, rel=1e-8)

    def test_norm_is_homogeneous(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('gaussian', {'M': 20.0}), unit_grid)
        base = operator_norm(kernel, unit_weight).value
        assert operator_norm(scaled(kernel, -3.0), unit_weight).value == pytest.approx(3 * base)

    def test_zero_kernel(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('constant', {'c': 0.0}), unit_grid)
        assert operator_norm(kernel, unit_weight).value == 0.0

    def test_heuristic_bound_only_warns(self):
        grid = Grid.uniform([(-2.0, 2.0)], 81, truncated=True)
        w = Weight.const(grid)
        kernel = assemble(KernelSpec('gaussian'), grid)
        with pytest.warns(BoundWarning):
            norm = operator_norm(kernel, w, maximal_constant=1e-6)
        assert norm.holds['K_rho'] is False
        assert 'K_rho' not in norm.rigorous

    def test_weighted_norm_respects_lambda_bound(self):
        grid = Grid.uniform([(0.5, 2.0)], 121)
        w = Weight.abs_pow(grid, 1.0)
        kernel = assemble(KernelSpec('exp_sqrt'), grid)
        norm = operator_norm(kernel, w)
        assert norm.value <= norm.bounds['K_Lambda_rho'] * (1 + 1e-8)


class TestDefiniteness:
    @pytest.mark.parametrize('variant', CATALOGUE)
    def test_catalogue_is_positive_semidefinite(self, variant):
        grid = Grid.uniform([(-6.0, 6.0)], 257)
        w = Weight.const(grid)
        kernel = assemble(KernelSpec(variant, CATALOGUE_PARAMS[variant]), grid)
        dec = decompose(kernel, w)
        assert dec.lambda_min >= -1e-8 * dec.lambda_max
        assert dec.definiteness == 'non_negative'

    @pytest.mark.parametrize('variant', [v for v in CATALOGUE if v != 'damped_trig'])
    def test_catalogue_is_positive_semidefinite_in_2d(self, variant):
        grid = Grid.uniform([(-4.0, 4.0), (-4.0, 4.0)], 25)
        w = Weight.const(grid)
        kernel = assemble(KernelSpec(variant, CATALOGUE_PARAMS[variant]), grid)
        dec = decompose(kernel, w)
        assert dec.lambda_min >= -1e-8 * dec.lambda_max
        assert dec.definiteness == 'non_negative'

    def test_mexican_hat_profile_matches_1d_form(self):
        r = np.array([[0.0], [0.5], [2.0]])
        expected = (1 - r[:, 0] ** 2) * np.exp(-0.5 * r[:, 0] ** 2)
        assert np.allclose(KernelSpec('mexican_hat').profile(r), expected)

    def test_damped_trig_is_one_dimensional(self):
        grid = Grid.uniform([(-1.0, 1.0), (-1.0, 1.0)], 5)
        with pytest.raises(KernelConstraintError) as error:
            assemble(KernelSpec('damped_trig', {'b': 1.0}), grid)
        assert error.value.context['variant'] == 'damped_trig'

    def test_hat_constraints_tighten_with_dimension(self):
        grid = Grid.uniform([(-1.0, 1.0), (-1.0, 1.0)], 5)
        # Válidos en 1D, fuera de rango en 2D
        with pytest.raises(KernelConstraintError):
            assemble(KernelSpec('mexican_hat2', {'A': 0.5, 's': 2.5}), grid)
        with pytest.raises(KernelConstraintError):
            assemble(KernelSpec('mexican_hat3', {'Gamma': 0.4, 'gamma1': 2.0, 'gamma2': 1.0}), grid)

    def test_semidefinite_shape_matrix_accepted(self):
        grid = Grid.uniform([(-2.0, 2.0), (-2.0, 2.0)], 9)
        kernel = assemble(KernelSpec('gaussian', {'M': [[1.0, 0.0], [0.0, 0.0]]}), grid)
        assert decompose(kernel, Weight.const(grid)).definiteness == 'non_negative'
        with pytest.raises(KernelConstraintError):
            KernelSpec('gaussian', {'M': [[1.0, 0.0], [0.0, -0.5]]})

    def test_negative_gaussian_is_non_positive(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('gaussian', scale=-1.0), unit_grid)
        assert decompose(kernel, unit_weight).definiteness == 'non_positive'

    def test_zero_form_has_rank_zero(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('constant', {'c': 0.0}), unit_grid)
        dec = decompose(kernel, unit_weight)
        assert dec.definiteness == 'non_negative'
        assert dec.rank == 0

    def test_antisymmetric_part_of_shifted_kernel(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('gaussian', {'M': 10.0}, shift=(0.2,)), unit_grid)
        dec = decompose(kernel, unit_weight)
        assert not dec.is_symmetric
        assert np.allclose(dec.sym + dec.antisym, kernel.matrix)
        assert np.allclose(dec.antisym, -dec.antisym.T)

    def test_indefinite_kernel(self, unit_grid, unit_weight):
        kernel = assemble(KernelSpec('cosine_sum', {'a': [1.0], 'm': [math.pi]}), unit_grid)
        matrix = kernel.matrix - 0.5
        indefinite = assemble(KernelSpec('table', {'values': matrix}), unit_grid)
        assert decompose(indefinite, unit_weight).definiteness == 'indefinite'

    def test_report_flags_variable_weight(self, unit_grid, unit_weight, constant_kernel):
        assert decompose(constant_kernel, unit_weight).to_dict()['weight_constant'] is True
        variable = Weight.table(unit_grid, 1.0 + unit_grid.nodes[:, 0])
        assert decompose(constant_kernel, variable).to_dict()['weight_constant'] is False
