"""
Helmholtz filter, Heaviside projection and the continuation schedule
"""
import numpy as np
import pytest

from adaptopt.errors import InvalidArgumentError
from adaptopt.models.mesh import AdaptFlag, AdaptFlags, create_base_mesh, execute_adaptation
from adaptopt.models.regularization import (
    FilterParams, HelmholtzFilter, beta_schedule, eps_relax, eps_relax_derivative, heaviside_derivative,
    heaviside_project, helmholtz_filter, pde_length_scale, regularize
)


@pytest.fixture
def hanging_forest():
    forest = create_base_mesh(4, 4, 1.0, 1.0, max_level=2)
    return execute_adaptation(forest, AdaptFlags(forest, {(0, 1, 1): AdaptFlag.REFINE}))


def nodal_value_at(filt, x, y):
    coords = filt.layout.coords
    node = np.flatnonzero(np.isclose(coords[:, 0], x) & np.isclose(coords[:, 1], y))
    assert node.size == 1
    return filt.nodal(np.ones(filt.forest.n_active))[node[0]]


class TestHelmholtzFilter:
    def test_length_scale(self):
        assert pde_length_scale(0.2) == pytest.approx(0.2 / (2 * np.sqrt(3)), rel=1e-14)

    def test_uniform_field_is_preserved_without_robin_term(self, hanging_forest):
        filt = HelmholtzFilter(hanging_forest, radius=0.3, boundary_coeff=0.0)
        rho = np.full(hanging_forest.n_active, 0.37)
        np.testing.assert_allclose(filt.apply(rho), 0.37, atol=1e-10)

    def test_robin_boundary_value(self):
        forest = create_base_mesh(40, 40, 1.0, 1.0, max_level=0)
        filt = HelmholtzFilter(forest, radius=0.4, boundary_coeff=0.5)
        assert nodal_value_at(filt, 0.0, 0.5) == pytest.approx(2.0 / 3.0, abs=0.02)
        assert nodal_value_at(filt, 0.5, 0.5) > 0.95

    @pytest.mark.parametrize('scaling', ['length', 'absolute'])
    def test_edge_profile_matches_half_space_solution(self, scaling):
        forest = create_base_mesh(80, 80, 1.0, 1.0, max_level=0)
        filt = HelmholtzFilter(forest, radius=0.2, boundary_coeff=0.5, boundary_scaling=scaling)
        length = filt.length
        kappa = 0.5 * length if scaling == 'length' else 0.5
        assert filt.kappa == pytest.approx(kappa, rel=1e-14)

        coords = filt.layout.coords
        line = np.isclose(coords[:, 1], 0.5) & (coords[:, 0] <= 0.3)
        values = filt.nodal(np.ones(forest.n_active))[line]
        expected = 1.0 - kappa / (length + kappa) * np.exp(-coords[line, 0] / length)
        np.testing.assert_allclose(values, expected, atol=0.01)

    def test_unknown_boundary_scaling_is_rejected(self, hanging_forest):
        with pytest.raises(InvalidArgumentError):
            HelmholtzFilter(hanging_forest, radius=0.3, boundary_scaling='area')

    def test_robin_term_softens_boundary_cells(self):
        forest = create_base_mesh(20, 20, 1.0, 1.0, max_level=0)
        filtered = helmholtz_filter(np.ones(forest.n_active), 0.4, 0.5, forest)
        centroids = forest.geometry()[:, :2] + 0.5 * forest.geometry()[:, 2:]
        edge = centroids[:, 0] < 0.05
        assert np.all(filtered[edge] < 0.9)
        assert filtered.max() <= 1.0

    def test_single_solid_cell_peaks_in_place(self):
        forest = create_base_mesh(5, 5, 1.0, 1.0, max_level=0)
        centre = forest.active_index()[(0, 2, 2)]
        rho = np.zeros(forest.n_active)
        rho[centre] = 1.0
        filtered = HelmholtzFilter(forest, radius=0.3, boundary_coeff=0.0).apply(rho)
        assert int(np.argmax(filtered)) == centre
        assert 0.0 < filtered[centre] < 1.0

    def test_filter_is_self_adjoint_in_area_inner_product(self, hanging_forest):
        filt = HelmholtzFilter(hanging_forest, radius=0.3, boundary_coeff=0.5)
        rng = np.random.default_rng(11)
        a = rng.uniform(size=hanging_forest.n_active)
        b = rng.uniform(size=hanging_forest.n_active)
        areas = hanging_forest.areas()
        left = filt.apply(a, clamp=False) @ (areas * b)
        right = a @ (areas * filt.apply(b, clamp=False))
        assert left == pytest.approx(right, rel=1e-10)

    def test_adjoint_is_transpose_of_apply(self, hanging_forest):
        filt = HelmholtzFilter(hanging_forest, radius=0.3, boundary_coeff=0.5)
        rng = np.random.default_rng(2)
        a = rng.uniform(size=hanging_forest.n_active)
        v = rng.standard_normal(hanging_forest.n_active)
        assert v @ filt.apply(a, clamp=False) == pytest.approx(filt.adjoint(v) @ a, rel=1e-10)

    def test_rejects_non_positive_radius(self, hanging_forest):
        with pytest.raises(InvalidArgumentError):
            HelmholtzFilter(hanging_forest, radius=0.0)


class TestProjection:
    def test_reference_value(self):
        assert heaviside_project(0.75, beta=2.0, eta=0.5) == pytest.approx(0.803388, abs=1e-6)

    @pytest.mark.parametrize('beta', [1.0, 4.0, 16.0])
    def test_fixed_points(self, beta):
        np.testing.assert_allclose(heaviside_project([0.0, 0.5, 1.0], beta, 0.5), [0.0, 0.5, 1.0], atol=1e-14)

    def test_derivative_matches_finite_differences(self):
        x = np.linspace(0.05, 0.95, 7)
        h = 1e-6
        numeric = (heaviside_project(x + h, 8.0, 0.4) - heaviside_project(x - h, 8.0, 0.4)) / (2 * h)
        np.testing.assert_allclose(heaviside_derivative(x, 8.0, 0.4), numeric, rtol=1e-6)


class TestRelaxation:
    def test_values(self):
        assert eps_relax(0.5, 0.1) == pytest.approx(10.0 / 11.0, rel=1e-14)
        np.testing.assert_allclose(eps_relax([0.0, 1.0], 0.1), [0.0, 1.0])

    def test_monotone(self):
        values = eps_relax(np.linspace(0.0, 1.0, 21), 0.1)
        assert np.all(np.diff(values) > 0)

    def test_derivative_matches_finite_differences(self):
        x = np.linspace(0.1, 0.9, 5)
        h = 1e-7
        numeric = (eps_relax(x + h, 0.1) - eps_relax(x - h, 0.1)) / (2 * h)
        np.testing.assert_allclose(eps_relax_derivative(x, 0.1), numeric, rtol=1e-6)


class TestRegularizationChain:
    def test_fields_and_chain_rule(self, hanging_forest):
        filt = HelmholtzFilter(hanging_forest, radius=0.3, boundary_coeff=0.5)
        rng = np.random.default_rng(4)
        rho = rng.uniform(0.3, 0.7, hanging_forest.n_active)
        fields = regularize(rho, filt, beta=4.0)
        assert np.all((fields.rho_hat >= 0.0) & (fields.rho_hat <= 1.0))

        weights = rng.standard_normal(hanging_forest.n_active)
        analytic = fields.chain_to_rho(weights, filt)
        h = 1e-6
        for cell in (0, 5, hanging_forest.n_active - 1):
            step = np.zeros_like(rho)
            step[cell] = h
            plus = regularize(rho + step, filt, beta=4.0).rho_hat @ weights
            minus = regularize(rho - step, filt, beta=4.0).rho_hat @ weights
            assert analytic[cell] == pytest.approx((plus - minus) / (2 * h), rel=1e-5, abs=1e-10)


class TestContinuation:
    @pytest.mark.parametrize('iteration,expected', [(1, 1.0), (50, 1.0), (51, 2.0), (101, 4.0), (500, 16.0)])
    def test_beta_schedule(self, iteration, expected):
        assert beta_schedule(iteration, initial=1.0, maximum=16.0, interval=50) == expected


class TestFilterParams:
    def test_defaults(self):
        params = FilterParams()
        assert params.to_dict()['boundary_coeff'] == 0.5
        assert params.eta == 0.5 and params.epsilon == 0.1
        assert params.to_dict()['boundary_scaling'] == 'length'

    @pytest.mark.parametrize('kwargs', [{'radius': 0.0}, {'eta': 1.0}, {'epsilon': 0.0}, {'beta': -1.0},
                                        {'boundary_coeff': -0.1}, {'boundary_scaling': 'area'}])
    def test_invalid_values(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            FilterParams(**kwargs)
