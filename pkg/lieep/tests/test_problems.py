"""
Benchmark Problem Tests
"""
import math
import os
import sys

import numpy as np
import pytest

# Ensure lieep directory is in path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from diagnostics import max_energy_deviation, monotonicity_check
from errors import ParameterError
from integrators import StructureClass, integrate
from matfun import expm
from polarization import validate_polarization
from problems import (
    FpuParams,
    WindOscillatorParams,
    build,
    forward_difference,
    fpu_initial,
    fpu_kink_profile,
    fpu_system,
    pendulum_initial,
    pendulum_original_energy,
    pendulum_truncated,
    second_difference,
    wind_closed_form_exp,
    wind_initial,
    wind_oscillator,
)


class TestWindOscillator:
    """Test wind_oscillator function"""

    def test_conservative_structure(self):
        """Test J, class and window of the conservative wind"""
        system, P, _ = wind_oscillator(WindOscillatorParams(r=20.0, theta=math.pi / 2))
        assert np.array_equal(system.J, np.array([[0.0, -1.0], [1.0, 0.0]]))
        assert system.j_class is StructureClass.SKEW_SYMMETRIC
        assert P.window == 2

    def test_dissipative_structure(self):
        """Test the dissipative class below pi/2"""
        system, _, _ = wind_oscillator(WindOscillatorParams(r=20.0, theta=math.pi / 2 - 1e-4))
        assert system.j_class is StructureClass.NEGATIVE_SEMIDEFINITE

    def test_energy_at_initial_state(self):
        """Test H at the initial state"""
        conservative, _, _ = wind_oscillator(WindOscillatorParams(r=20.0, theta=math.pi / 2))
        assert conservative.energy(wind_initial()) == pytest.approx(10.0)
        # the x2^3/3 term only enters through cos(theta)
        damped, _, _ = wind_oscillator(WindOscillatorParams(r=20.0, theta=0.0))
        assert damped.energy(wind_initial()) == pytest.approx(10.0 + 1 / 6)

    def test_vector_field(self):
        """Test the vector field against the wind equations"""
        params = WindOscillatorParams(r=2.0, theta=math.pi / 3)
        system, _, _ = wind_oscillator(params)
        x1, x2 = 0.4, -0.7
        zeta, lam = params.zeta, params.detuning
        expected = [-zeta * x1 - lam * x2 + x1 * x2, lam * x1 - zeta * x2 + (x1**2 - x2**2) / 2]
        np.testing.assert_allclose(system.vector_field(np.array([x1, x2])), expected, atol=1e-14)

    @pytest.mark.parametrize("a", [0.0, 0.25, 0.5, 0.7, 1.0])
    @pytest.mark.parametrize("theta", [math.pi / 2, math.pi / 4])
    def test_polarization_validates(self, a, theta):
        """Test polarization validity for a grid of a and theta"""
        system, P, _ = wind_oscillator(WindOscillatorParams(r=20.0, theta=theta, a=a))
        report = validate_polarization(P, system.U, system.gradU, trials=300)
        assert report.passed, report.scaled

    def test_polarization_full_validation(self):
        """Test the default polarization on 1000 trials"""
        system, P, _ = wind_oscillator(WindOscillatorParams())
        assert validate_polarization(P, system.U, system.gradU, trials=1000).passed

    @pytest.mark.parametrize("theta", [math.pi / 2, math.pi / 2 - 1e-4, math.pi / 4])
    @pytest.mark.parametrize("r", [1.0, 20.0])
    @pytest.mark.parametrize("h", [1 / 10, 1 / 320])
    def test_closed_form_exponential(self, theta, r, h):
        """Test the closed-form exponential against expm"""
        params = WindOscillatorParams(r=r, theta=theta)
        system, _, closed_form = wind_oscillator(params)
        np.testing.assert_allclose(closed_form(2 * h), expm(2 * h * system.J @ system.M), atol=1e-12)
        np.testing.assert_allclose(wind_closed_form_exp(params, 2 * h), closed_form(2 * h))

    @pytest.mark.parametrize("kwargs", [{"r": -1.0}, {"theta": 2.0}, {"a": 1.5}])
    def test_invalid_parameters(self, kwargs):
        """Test rejection of invalid wind parameters"""
        with pytest.raises(ParameterError):
            WindOscillatorParams(**kwargs)


class TestFpu:
    """Test fpu_system and fpu_initial functions"""

    def test_difference_operators(self):
        """Test the difference operators"""
        params = FpuParams(N=6, L=3.0)
        D = second_difference(params)
        dx = params.dx
        expected = (np.diag(-2.0 * np.ones(5)) + np.diag(np.ones(4), 1) + np.diag(np.ones(4), -1)) / dx**2
        np.testing.assert_allclose(D, expected)
        u = np.arange(1.0, 6.0)
        w = forward_difference(params) @ u
        np.testing.assert_allclose(w, np.diff(np.concatenate([[0.0], u, [0.0]])) / dx)

    def test_structure_classes(self):
        """Test structure classes for conservative and damped chains"""
        conservative, P = fpu_system(FpuParams(N=8, L=8.0))
        assert conservative.j_class is StructureClass.SKEW_SYMMETRIC
        assert conservative.dim == 14 and P.dim == 14 and P.window == 2
        for beta, gamma in [(0.5, 0.0), (2.0, 0.0), (0.0, 0.005)]:
            damped, _ = fpu_system(FpuParams(N=8, L=8.0, beta=beta, gamma=gamma))
            assert damped.j_class is StructureClass.NEGATIVE_SEMIDEFINITE

    def test_linear_profile_gradient(self):
        """Test gradU on a linear displacement profile"""
        params = FpuParams(N=8, L=8.0)
        system, _ = fpu_system(params)
        n = params.interior
        y = np.concatenate([np.arange(1.0, n + 1), np.zeros(n)])
        grad = system.gradU(y)
        assert np.all(grad[: n - 1] == 0.0)
        assert grad[n - 1] == pytest.approx(params.eps / 2 * (1 - n**2))
        assert not grad[n:].any()

    def test_energy_matches_direct_sum(self):
        """Test H against a direct sum"""
        params = FpuParams(N=8, L=8.0, eps=0.75)
        system, _ = fpu_system(params)
        rng = np.random.default_rng(2)
        y = rng.uniform(-1, 1, size=14)
        u = np.concatenate([[0.0], y[:7], [0.0]])
        w = np.diff(u) / params.dx
        expected = 0.5 * np.sum(y[7:] ** 2) + 0.5 * np.sum(w**2) + np.sum(params.eps / 6 * w**3)
        assert system.energy(y) == pytest.approx(expected, rel=1e-13)

    def test_polarization_validates(self):
        """Test the FPU polarization on 500 trials"""
        system, P = fpu_system(FpuParams(N=8, L=8.0, beta=0.5))
        report = validate_polarization(P, system.U, system.gradU, trials=500, seed=4)
        assert report.passed, report.scaled
        assert report.residuals["identity"] <= 1e-11

    def test_affine_block_is_tridiagonal(self):
        """Test that G is D+^T diag(eps b/6) D+ on the displacement block and zero elsewhere"""
        params = FpuParams(N=12, L=6.0)
        _, P = fpu_system(params)
        w = list(np.random.default_rng(8).uniform(-1, 1, size=(2, 22)))
        G, _ = P.affine_parts(w)
        Dp = forward_difference(params).toarray()
        expected = Dp.T @ np.diag(params.eps / 6 * (Dp @ w[1][:11])) @ Dp
        np.testing.assert_allclose(G[:11, :11], expected, rtol=0, atol=1e-13)
        assert not G[11:].any() and not G[:, 11:].any()
        assert P.support == slice(0, 11)

    def test_too_few_nodes(self):
        """Test that N = 2 is rejected"""
        with pytest.raises(ParameterError):
            FpuParams(N=2)

    @pytest.mark.parametrize("kwargs", [{"beta": -0.1}, {"gamma": -1.0}, {"eps": 0.0}, {"p_exp": 2}])
    def test_invalid_parameters(self, kwargs):
        """Test rejection of invalid FPU parameters"""
        with pytest.raises(ParameterError):
            FpuParams(**kwargs)

    def test_initial_zero_alpha(self):
        """Test that alpha = 0 gives a zero state"""
        y0 = fpu_initial(alpha=0.0, N=128, L=128.0)
        assert y0.shape == (254,)
        assert not y0.any()

    def test_initial_far_from_kinks(self):
        """Test the initial profile away from the kinks"""
        alpha, j = 0.1, 64
        expected = 0.0
        for plus, minus in [(97, 96), (32, 33)]:
            expected += 5 * (
                math.log(1 + math.exp(2 * alpha * (j - plus))) - math.log(1 + math.exp(2 * alpha * (j - minus)))
            )
        assert fpu_initial(alpha, 128, 128.0)[j - 1] == pytest.approx(expected, abs=1e-13)

    def test_initial_velocity_matches_finite_difference(self):
        """Test the initial velocity against a finite difference"""
        alpha, delta = 0.1, 1e-5
        x = np.arange(1, 128, dtype=float)
        fd = (fpu_kink_profile(alpha, x, delta) - fpu_kink_profile(alpha, x, -delta)) / (2 * delta)
        np.testing.assert_allclose(fpu_initial(alpha, 128, 128.0)[127:], fd, atol=1e-8)

    def test_conservative_polarized_energy(self):
        """Test polarized energy conservation on a small chain"""
        system, P = fpu_system(FpuParams(N=16, L=16.0))
        traj = integrate("lieep", system, P, fpu_initial(0.1, 16, 16.0), 0.1, 10.0, channels=["polarized_energy"])
        energy = traj.channels["polarized_energy"]
        assert np.nanmax(energy) - np.nanmin(energy) <= 1e-9 * (1 + abs(energy[1]))

    @pytest.mark.parametrize("beta,gamma", [(0.5, 0.0), (2.0, 0.0), (0.0, 0.005)])
    def test_damped_polarized_energy_decreases(self, beta, gamma):
        """Test that damping never increases the polarized energy"""
        system, P = fpu_system(FpuParams(N=16, L=16.0, beta=beta, gamma=gamma))
        traj = integrate("lieep", system, P, fpu_initial(0.1, 16, 16.0), 0.1, 10.0, channels=["polarized_energy"])
        assert monotonicity_check(traj.channels["polarized_energy"], 1e-12)["violations"] == 0

    @pytest.mark.slow
    def test_conservative_polarized_energy_full_size(self):
        """Test polarized energy conservation on the full chain over T = 100"""
        system, P = fpu_system(FpuParams())
        traj = integrate("lieep", system, P, fpu_initial(), 0.025, 100.0, channels=["polarized_energy"])
        energy = traj.channels["polarized_energy"]
        assert np.nanmax(energy) - np.nanmin(energy) <= 1e-9 * (1 + abs(energy[1]))

    @pytest.mark.slow
    def test_conservative_polarized_energy_long_horizon(self):
        """Test that the full-size chain keeps its polarized energy to 1e-9 over T = 500"""
        system, P = fpu_system(FpuParams())
        traj = integrate("lieep", system, P, fpu_initial(), 0.025, 500.0, channels=["polarized_energy"])
        energy = traj.channels["polarized_energy"]
        assert traj.ok
        assert np.nanmax(energy) - np.nanmin(energy) <= 1e-9 * (1 + abs(energy[1]))

    @pytest.mark.slow
    @pytest.mark.parametrize("beta,gamma", [(0.5, 0.0), (2.0, 0.0), (0.0, 0.005)])
    def test_damped_polarized_energy_decreases_full_size(self, beta, gamma):
        """Test that the damped N = 128 chain never increases its polarized energy"""
        system, P = fpu_system(FpuParams(beta=beta, gamma=gamma))
        traj = integrate("lieep", system, P, fpu_initial(), 0.025, 100.0, channels=["polarized_energy"])
        assert traj.ok
        assert monotonicity_check(traj.channels["polarized_energy"], 1e-12)["violations"] == 0


class TestPendulum:
    """Test pendulum_truncated function"""

    def test_structure(self):
        """Test dimension, window, degree and M"""
        system, P = pendulum_truncated()
        assert system.dim == 2 and P.window == 3
        assert system.degree == 6
        assert np.array_equal(system.M, np.eye(2))

    def test_gradient_consistency(self):
        """Test the polarized gradient at equal arguments"""
        _, P = pendulum_truncated()
        q = 0.8
        grad = P.gradient([np.array([q, 0.3])] * 4)
        assert grad[0] == pytest.approx(q**5 / 120 - q**3 / 6)
        assert grad[1] == 0.0

    def test_initial_energies(self):
        """Test both initial energies"""
        system, _ = pendulum_truncated()
        y0 = pendulum_initial()
        assert system.energy(y0) == pytest.approx(0.5 + 0.125 - 0.5**4 / 24 + 0.5**6 / 720)
        assert pendulum_original_energy(y0) == pytest.approx(0.5 + 1 - math.cos(0.5))

    def test_polarization_validates(self):
        """Test the pendulum polarization on 500 trials"""
        system, P = pendulum_truncated()
        report = validate_polarization(P, system.U, system.gradU, trials=500, seed=6)
        assert report.passed, report.scaled
        assert report.residuals["identity"] <= 1e-11

    @pytest.mark.slow
    def test_long_run_energies(self):
        """Test polarized conservation and bounded original energy over T = 1000"""
        system, P = pendulum_truncated()
        traj = integrate(
            "lieep", system, P, pendulum_initial(), 1.0, 1000.0, channels=["polarized_energy", "original_energy"]
        )
        polarized = traj.channels["polarized_energy"]
        assert np.nanmax(polarized) - np.nanmin(polarized) <= 1e-10 * (1 + abs(polarized[2]))
        deviation = max_energy_deviation(traj.channels["original_energy"], head=100)
        assert deviation["overall"] <= 10 * deviation["head"]


class TestBuild:
    """Test build registry"""

    def test_wind_defaults(self):
        """Test wind defaults"""
        system, P, y0 = build("wind", {})
        assert system.name == "wind"
        np.testing.assert_array_equal(y0, [0.0, 1.0])

    def test_wind_initial_override(self):
        """Test the x0 override"""
        _, _, y0 = build("wind", {"x0": [0.5, 0.5]})
        np.testing.assert_array_equal(y0, [0.5, 0.5])

    def test_fpu(self):
        """Test the FPU build"""
        system, P, y0 = build("fpu", {"N": 8, "L": 8.0, "gamma": 0.005})
        assert system.dim == 14 and y0.shape == (14,)
        assert system.j_class is StructureClass.NEGATIVE_SEMIDEFINITE

    def test_pendulum(self):
        """Test the pendulum build"""
        _, P, y0 = build("pendulum", {"q0": 0.1})
        np.testing.assert_array_equal(y0, [0.1, 1.0])
        assert P.window == 3

    def test_unknown_problem(self):
        """Test that an unknown problem is rejected"""
        with pytest.raises(ParameterError):
            build("kepler", {})


class TestShippedPolarizations:
    """Test every shipped polarization on 1000 random tuples"""

    @pytest.mark.parametrize(
        "problem,params",
        [("wind", {}), ("wind", {"a": 0.0}), ("fpu", {"N": 8, "L": 8.0}), ("pendulum", {})],
    )
    def test_problem_polarization(self, problem, params):
        """Test that the problem's polarization passes every validator check"""
        system, P, _ = build(problem, params)
        report = validate_polarization(P, system.U, system.gradU, trials=1000, seed=21)
        assert report.passed, report.scaled
        if problem == "fpu":
            assert "support" in report.scaled
