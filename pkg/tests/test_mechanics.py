"""
Neo-Hookean kinematics and stress measures
"""
import numpy as np
import pytest

from adaptopt.errors import InvalidArgumentError, InvertedElementError
from adaptopt.models.mechanics import (
    Kinematics, MaterialParams, StressState, cauchy_stress, eshelby_stress, linear_energy, linear_stress,
    linear_tangent, material_tangent, piola_stress, strain_energy, von_mises, von_mises_gradient
)


@pytest.fixture
def material():
    return MaterialParams(lam=2.66, mu=0.71)


@pytest.fixture
def deformation():
    return np.array([[1.08, 0.17], [-0.06, 0.93]])


def central_difference(func, F, h=1e-6):
    """d func / dF by central differences, shape func(F).shape + (2, 2)"""
    base = np.asarray(func(F))
    grad = np.zeros(base.shape + (2, 2))
    for k in range(2):
        for L in range(2):
            dF = np.zeros((2, 2))
            dF[k, L] = h
            grad[..., k, L] = (np.asarray(func(F + dF)) - np.asarray(func(F - dF))) / (2 * h)
    return grad


class TestMaterialParams:
    def test_defaults_and_dict(self, material):
        assert material.to_dict() == {'lambda': 2.66, 'mu': 0.71}

    def test_rejects_non_positive_shear_modulus(self):
        with pytest.raises(InvalidArgumentError):
            MaterialParams(lam=1.0, mu=0.0)


class TestKinematics:
    def test_inverted_element_is_rejected(self):
        with pytest.raises(InvertedElementError):
            Kinematics(np.array([[1.0, 0.0], [0.0, -0.5]]))

    def test_non_finite_gradient_is_rejected(self):
        with pytest.raises(InvertedElementError):
            Kinematics(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_inverse_and_jacobian(self, deformation):
        k = Kinematics(deformation)
        assert k.J == pytest.approx(np.linalg.det(deformation), rel=1e-14)
        np.testing.assert_allclose(k.Finv @ deformation, np.eye(2), atol=1e-14)


class TestStresses:
    def test_reference_state_is_stress_free(self, material):
        F = np.eye(2)
        assert strain_energy(F, material) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(piola_stress(F, material), 0.0, atol=1e-15)
        np.testing.assert_allclose(eshelby_stress(F, material), 0.0, atol=1e-15)

    def test_piola_matches_energy_derivative(self, material, deformation):
        numeric = central_difference(lambda F: strain_energy(F, material), deformation)
        np.testing.assert_allclose(piola_stress(deformation, material), numeric, rtol=1e-6)

    def test_tangent_matches_piola_derivative(self, material, deformation):
        numeric = central_difference(lambda F: piola_stress(F, material), deformation)
        analytic = material_tangent(deformation, material)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-9)

    def test_tangent_has_major_symmetry(self, material, deformation):
        A = material_tangent(deformation, material)
        np.testing.assert_allclose(A, np.transpose(A, (2, 3, 0, 1)), atol=1e-13)

    def test_eshelby_trace_identity(self, material, deformation):
        W = strain_energy(deformation, material)
        P = piola_stress(deformation, material)
        Sigma = eshelby_stress(deformation, material)
        assert np.trace(Sigma) == pytest.approx(2 * W - np.sum(deformation * P), abs=1e-12)

    def test_cauchy_stress_is_symmetric_push_forward(self, material, deformation):
        sigma = cauchy_stress(deformation, material)
        P = piola_stress(deformation, material)
        J = np.linalg.det(deformation)
        np.testing.assert_allclose(sigma, sigma.T, atol=1e-14)
        np.testing.assert_allclose(sigma[:2, :2], P @ deformation.T / J, atol=1e-13)

    def test_stress_state_bundles_all_measures(self, material, deformation):
        stress = StressState(np.stack([deformation, np.eye(2)]), material)
        assert stress.sigma_vm.shape == (2,)
        np.testing.assert_allclose(stress.Sigma[0], eshelby_stress(deformation, material), atol=1e-14)
        assert stress.W0[1] == pytest.approx(0.0, abs=1e-15)


class TestVonMises:
    def test_pure_shear(self):
        s = 0.37
        sigma = np.zeros((3, 3))
        sigma[0, 1] = sigma[1, 0] = s
        assert von_mises(sigma) == pytest.approx(np.sqrt(3.0) * s, rel=1e-14)

    def test_hydrostatic_state_is_zero(self):
        assert von_mises(2.5 * np.eye(3)) == pytest.approx(0.0, abs=1e-14)

    def test_uniaxial_state(self):
        sigma = np.diag([1.2, 0.0, 0.0])
        assert von_mises(sigma) == pytest.approx(1.2, rel=1e-14)

    def test_gradient_matches_finite_differences(self, material, deformation):
        numeric = central_difference(lambda F: von_mises(cauchy_stress(F, material)), deformation)
        np.testing.assert_allclose(von_mises_gradient(deformation, material), numeric, rtol=1e-6, atol=1e-10)

    def test_gradient_vanishes_in_reference_state(self, material):
        np.testing.assert_allclose(von_mises_gradient(np.eye(2), material), 0.0)


class TestObjectivity:
    @pytest.mark.parametrize('angle', [0.3, 1.7, -2.4])
    def test_rotation_leaves_scalar_and_material_measures_unchanged(self, material, deformation, angle):
        Q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rotated = Q @ deformation
        assert strain_energy(rotated, material) == pytest.approx(strain_energy(deformation, material), rel=1e-12)
        assert von_mises(cauchy_stress(rotated, material)) == pytest.approx(
            von_mises(cauchy_stress(deformation, material)), rel=1e-12)
        np.testing.assert_allclose(eshelby_stress(rotated, material), eshelby_stress(deformation, material),
                                   atol=1e-12)

    def test_piola_stress_rotates_with_the_body(self, material, deformation):
        Q = np.array([[0.0, -1.0], [1.0, 0.0]])
        np.testing.assert_allclose(piola_stress(Q @ deformation, material), Q @ piola_stress(deformation, material),
                                   atol=1e-13)


class TestSmallStrain:
    def test_linear_tangent_matches_reference_tangent(self, material):
        np.testing.assert_allclose(linear_tangent(material), material_tangent(np.eye(2), material), atol=1e-14)

    def test_linear_stress_matches_energy_derivative(self, material):
        H = np.array([[0.02, -0.011], [0.007, -0.015]])
        numeric = central_difference(lambda G: linear_energy(G, material), H)
        np.testing.assert_allclose(linear_stress(H, material), numeric, rtol=1e-6, atol=1e-12)

    def test_rigid_rotation_rate_is_stress_free(self, material):
        W = np.array([[0.0, 0.03], [-0.03, 0.0]])
        assert linear_energy(W, material) == pytest.approx(0.0, abs=1e-16)
        np.testing.assert_allclose(linear_stress(W, material), 0.0, atol=1e-16)
