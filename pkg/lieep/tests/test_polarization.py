"""
Polarization Tests
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Ensure lieep directory is in path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import UnsupportedDegreeError, WindowError
from polarization import (
    ScalarPolynomial,
    corrupt_gradient,
    polarize_monomial,
    polarize_polynomial,
    probe_affine_parts,
    validate_polarization,
    zero_polarization,
)


def power(d):
    return (lambda y: float(np.sum(np.asarray(y) ** d)), lambda y: d * np.asarray(y) ** (d - 1))


class TestPolarizeMonomial:
    """Test polarize_monomial function"""

    @pytest.mark.parametrize("degree,window", [(2, 2), (3, 2), (4, 2), (5, 4), (6, 3)])
    def test_windows(self, degree, window):
        """Test window length per degree"""
        assert polarize_monomial(degree).window == window

    @pytest.mark.parametrize("degree", [2, 3, 4, 5, 6])
    def test_validator_passes(self, degree):
        """Test that each built-in monomial passes 1000 trials"""
        U, gradU = power(degree)
        report = validate_polarization(polarize_monomial(degree), U, gradU, trials=1000, seed=degree)
        assert report.passed, report.scaled

    @pytest.mark.parametrize("theta", [0.0, 0.25, 1.0])
    def test_quadratic_family(self, theta):
        """Test the one-parameter quadratic family"""
        U, gradU = power(2)
        report = validate_polarization(polarize_monomial(2, theta=theta), U, gradU, trials=200)
        assert report.passed, report.scaled

    def test_cubic_gradient_formula(self):
        """Test the cubic gradient against its formula"""
        # 2 * d/dw [y (y + w)/2 w] at w = (x + z)/2
        P = polarize_monomial(3)
        x, y, z = 0.3, -1.2, 0.8
        grad = P.gradient([np.array([x]), np.array([y]), np.array([z])])
        m = (x + z) / 2
        assert grad[0] == pytest.approx(2 * (y * m + y**2 / 2))

    def test_energy_at_equal_arguments(self):
        """Test U-bar(x, ..., x) = x^5"""
        P = polarize_monomial(5)
        assert P.energy([np.array([1.5])] * 4) == pytest.approx(1.5**5)

    @pytest.mark.parametrize("degree", [0, 1, 7])
    def test_unsupported_degree(self, degree):
        """Test that unsupported degrees are rejected"""
        with pytest.raises(UnsupportedDegreeError):
            polarize_monomial(degree)


class TestPolarizePolynomial:
    """Test polarize_polynomial function"""

    def test_truncated_cosine(self):
        """Test the truncated cosine on 1000 trials"""
        poly = ScalarPolynomial((1.0, 0.0, -0.5, 0.0, 1 / 24, 0.0, -1 / 720))
        P = polarize_polynomial(poly, dim=2)
        assert P.window == 3
        report = validate_polarization(P, poly.value, poly.gradient, trials=1000, seed=1)
        assert report.passed, report.scaled

    def test_low_degree_terms(self):
        """Test a polynomial with constant and linear terms"""
        poly = ScalarPolynomial((2.0, -1.0, 0.0, 0.5))
        P = polarize_polynomial(poly, window=3)
        report = validate_polarization(P, poly.value, poly.gradient, trials=200)
        assert report.passed, report.scaled

    def test_affine_parts_are_diagonal(self):
        """Test that G is diagonal for componentwise potentials"""
        poly = ScalarPolynomial((0.0, 0.0, 0.0, 1.0, 1.0))
        P = polarize_polynomial(poly, dim=3)
        rng = np.random.default_rng(5)
        window = list(rng.uniform(-1, 1, size=(2, 3)))
        G, g = P.affine_parts(window)
        assert np.count_nonzero(G - np.diag(np.diag(G))) == 0
        z = rng.uniform(-1, 1, size=3)
        np.testing.assert_allclose(G @ z + g, P.gradient(window + [z]), atol=1e-13)

    def test_window_too_small(self):
        """Test that a window too short for the degree is rejected"""
        with pytest.raises(WindowError):
            polarize_polynomial(ScalarPolynomial((0, 0, 0, 0, 0, 0, 1)), window=2)

    def test_degree_too_high(self):
        """Test that degree 7 is rejected"""
        with pytest.raises(UnsupportedDegreeError):
            polarize_polynomial(ScalarPolynomial((0, 0, 0, 0, 0, 0, 0, 1)))

    def test_non_finite_coefficients(self):
        """Test that NaN coefficients are rejected"""
        with pytest.raises(ValueError):
            ScalarPolynomial((1.0, float("nan")))

    def test_degree_ignores_trailing_zeros(self):
        """Test that trailing zero coefficients do not count"""
        assert ScalarPolynomial((1.0, 2.0, 0.0, 0.0)).degree == 1


class TestValidator:
    """Test validate_polarization function"""

    def test_corrupted_gradient_fails_identity(self):
        """Test that a corrupted gradient fails identity and consistency"""
        U, gradU = power(3)
        report = validate_polarization(corrupt_gradient(polarize_monomial(3), 1e-3), U, gradU, trials=50)
        assert not report.passed
        assert "identity" in report.failures
        assert "consistency" in report.failures

    def test_support_leak_fails(self):
        """Test that a gradient acting outside the declared support fails only the support check"""
        U, gradU = power(2)
        P = replace(polarize_monomial(2, dim=2), support=slice(0, 1))
        report = validate_polarization(P, U, gradU, trials=20)
        assert report.failures == ["support"]

    def test_deterministic_for_seed(self):
        """Test that the same seed gives the same residuals"""
        U, gradU = power(4)
        first = validate_polarization(polarize_monomial(4), U, gradU, trials=20, seed=9)
        second = validate_polarization(polarize_monomial(4), U, gradU, trials=20, seed=9)
        assert first.residuals == second.residuals


class TestHelpers:
    """Test generic constructions"""

    def test_zero_polarization(self):
        """Test the zero polarization"""
        P = zero_polarization(3, window=2)
        assert np.array_equal(P.gradient([np.ones(3)] * 3), np.zeros(3))
        G, g = P.affine_parts([np.ones(3)] * 2)
        assert not G.any() and not g.any()

    def test_probe_affine_parts(self):
        """Test probed affine parts of an affine gradient"""
        A = np.array([[1.0, 2.0], [3.0, 4.0]])

        def gradient(states):
            return A @ states[-1] + states[0]

        G, g = probe_affine_parts(gradient, 2)([np.array([0.5, -1.0])])
        np.testing.assert_allclose(G, A)
        np.testing.assert_allclose(g, [0.5, -1.0])

    def test_gradient_arity(self):
        """Test that a gradient with the wrong number of states is rejected"""
        with pytest.raises(WindowError):
            polarize_monomial(3).gradient([np.zeros(1)] * 2)
