"""
==============================================================================
Benchmark Problems Module (problems.py)
==============================================================================
Description: The three benchmark systems with structure matrices,
potentials, hand-derived polarizations and initial data

Main Features:
    - wind_oscillator: averaged wind-induced oscillator (2-D, window 2)
    - fpu_system / fpu_initial: damped alpha-FPU semi-discretization
      (homogeneous Dirichlet, interior nodes only, window 2)
    - pendulum_truncated: polynomial pendulum (degree 6, window 3)
    - build: registry used by the experiment harness

State layouts:
    wind:     (x1, x2)
    fpu:      (u_1, ..., u_{N-1}, v_1, ..., v_{N-1})
    pendulum: (q, p)
==============================================================================
"""

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.special import expit

from errors import ParameterError, WindowError
from integrators import SemilinearSystem, StructureClass
from polarization import PolarizedPotential, States, symmetric_polarization

logger = logging.getLogger(__name__)

ClosedFormExp = Callable[[float], np.ndarray]


# ==============================================================================
# Wind-Induced Oscillator
# ==============================================================================

@dataclass(frozen=True)
class WindOscillatorParams:
    """
    Attributes:
        r: magnitude, zeta = r cos(theta) is the damping, lambda = r sin(theta) the detuning
        theta: angle in [0, pi/2]; pi/2 is the conservative case
        a: polarization parameter in [0, 1]
    """

    r: float = 20.0
    theta: float = math.pi / 2
    a: float = 0.5

    def __post_init__(self):
        if not self.r >= 0:
            raise ParameterError(f"r must be >= 0, got {self.r}")
        if not 0.0 <= self.theta <= math.pi / 2:
            raise ParameterError(f"theta must lie in [0, pi/2], got {self.theta}")
        if not 0.0 <= self.a <= 1.0:
            raise ParameterError(f"a must lie in [0, 1], got {self.a}")

    @property
    def conservative(self) -> bool:
        return self.theta == math.pi / 2

    @property
    def cos_sin(self) -> Tuple[float, float]:
        if self.conservative:
            return 0.0, 1.0
        return math.cos(self.theta), math.sin(self.theta)

    @property
    def zeta(self) -> float:
        return self.r * self.cos_sin[0]

    @property
    def detuning(self) -> float:
        return self.r * self.cos_sin[1]


def wind_closed_form_exp(params: WindOscillatorParams, scale: float) -> np.ndarray:
    """exp(scale J M) = e^{-scale c r} [[cos(scale s r), -sin(scale s r)], [sin(scale s r), cos(scale s r)]]."""
    c, s = params.cos_sin
    decay = math.exp(-scale * c * params.r)
    angle = scale * s * params.r
    return decay * np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])


def wind_initial() -> np.ndarray:
    return np.array([0.0, 1.0])


def wind_oscillator(params: WindOscillatorParams) -> Tuple[SemilinearSystem, PolarizedPotential, ClosedFormExp]:
    """
    x1' = -zeta x1 - lambda x2 + x1 x2,  x2' = lambda x1 - zeta x2 + (x1^2 - x2^2)/2

    J = [[-c, -s], [s, -c]], M = r I and
    U = -s/2 (x1 x2^2 - x1^3/3) + c/2 (x2^3/3 - x1^2 x2).

    Returns:
        (system, window-2 polarization with parameter a, closed-form exp(scale J M))
    """
    c, s = params.cos_sin
    a = params.a
    J = np.array([[-c, -s], [s, -c]])
    M = params.r * np.eye(2)

    def U(x: np.ndarray) -> float:
        x1, x2 = x
        return -s / 2 * (x1 * x2**2 - x1**3 / 3) + c / 2 * (x2**3 / 3 - x1**2 * x2)

    def gradU(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        return np.array([
            -s / 2 * (x2**2 - x1**2) - c * x1 * x2,
            -s * x1 * x2 + c / 2 * (x2**2 - x1**2),
        ])

    def energy(states: List[np.ndarray]) -> float:
        (X1, X2), (Y1, Y2) = states
        sine_part = (
            a * (X1 + Y1) / 2 * X2 * Y2
            + (1 - a) * (X1 * Y2**2 + Y1 * X2**2) / 2
            - X1 * (X1 + Y1) / 2 * Y1 / 3
        )
        cosine_part = (
            X2 * (X2 + Y2) / 2 * Y2 / 3
            - a * X1 * Y1 * (X2 + Y2) / 2
            - (1 - a) * (X2 * Y1**2 + Y2 * X1**2) / 2
        )
        return -s / 2 * sine_part + c / 2 * cosine_part

    def partial_last(states: States) -> np.ndarray:
        (Y1, Y2), (W1, W2) = states
        d_sine = np.array([
            a * Y2 * W2 / 2 + (1 - a) * Y2**2 / 2 - (Y1**2 + 2 * Y1 * W1) / 6,
            a * (Y1 + W1) / 2 * Y2 + (1 - a) * Y1 * W2,
        ])
        d_cosine = np.array([
            -a * Y1 * (Y2 + W2) / 2 - (1 - a) * Y2 * W1,
            (Y2**2 + 2 * Y2 * W2) / 6 - a * Y1 * W1 / 2 - (1 - a) * Y1**2 / 2,
        ])
        return -s / 2 * d_sine + c / 2 * d_cosine

    j_class = StructureClass.SKEW_SYMMETRIC if params.conservative else StructureClass.NEGATIVE_SEMIDEFINITE
    system = SemilinearSystem(J=J, M=M, gradU=gradU, U=U, j_class=j_class, degree=3, name="wind")
    P = symmetric_polarization(energy, partial_last, window=2, dim=2, name=f"wind(a={a:g})")
    logger.debug(f"Wind oscillator: r={params.r}, theta={params.theta}, class={j_class.value}")
    return system, P, partial(wind_closed_form_exp, params)


# ==============================================================================
# Damped alpha-FPU
# ==============================================================================

@dataclass(frozen=True)
class FpuParams:
    """
    Attributes:
        N: number of grid intervals (N - 1 interior nodes)
        L: domain length
        beta: internal damping >= 0
        gamma: external damping >= 0
        m: mass parameter
        eps: nonlinearity coefficient > 0
        p_exp: polynomial exponent of the nonlinearity (only 1 is supported)
    """

    N: int = 128
    L: float = 128.0
    beta: float = 0.0
    gamma: float = 0.0
    m: float = 0.0
    eps: float = 0.75
    p_exp: int = 1

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ParameterError(f"FPU needs an integer N >= 3, got {self.N}")
        if not self.L > 0:
            raise ParameterError(f"L must be positive, got {self.L}")
        if self.beta < 0 or self.gamma < 0:
            raise ParameterError(f"Damping must be >= 0, got beta={self.beta}, gamma={self.gamma}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.p_exp != 1:
            raise ParameterError(f"Only p_exp = 1 is supported, got {self.p_exp}")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def interior(self) -> int:
        return int(self.N) - 1


def forward_difference(params: FpuParams) -> sparse.csr_matrix:
    """N x (N-1) map from interior u to w_j = (u_{j+1} - u_j)/dx, j = 0..N-1, with u_0 = u_N = 0."""
    n = params.interior
    return sparse.diags([1.0, -1.0], [0, -1], shape=(int(params.N), n), format="csr") / params.dx


def second_difference(params: FpuParams) -> np.ndarray:
    """Central second difference with homogeneous Dirichlet closure, -D+^T D+."""
    Dp = forward_difference(params)
    return -(Dp.T @ Dp).toarray()


def fpu_system(params: FpuParams) -> Tuple[SemilinearSystem, PolarizedPotential]:
    """
    Semi-discrete y' = Q (M y + grad U(y)) with

        Q = [[0, I], [-I, beta D - gamma I]],  M = [[m^2 I - D, 0], [0, I]],
        U(y) = sum_j eps/6 w_j^3.

    The window-2 polarization is U-bar = sum_j eps/6 w_j^n (w_j^n + w_j^{n+1})/2 w_j^{n+1}; its
    polarized discrete gradient acts on u only.
    """
    n = params.interior
    eps = params.eps
    Dp = forward_difference(params)
    D = second_difference(params)
    eye, zero = np.eye(n), np.zeros((n, n))
    Q = np.block([[zero, eye], [-eye, params.beta * D - params.gamma * eye]])
    M = np.block([[params.m**2 * eye - D, zero], [zero, eye]])

    def slopes(y: np.ndarray) -> np.ndarray:
        return Dp @ np.asarray(y)[:n]

    def lift(gu: np.ndarray) -> np.ndarray:
        return np.concatenate([gu, np.zeros(n)])

    def U(y: np.ndarray) -> float:
        return float(np.sum(eps / 6 * slopes(y) ** 3))

    def gradU(y: np.ndarray) -> np.ndarray:
        return lift(Dp.T @ (eps / 2 * slopes(y) ** 2))

    def energy(states: List[np.ndarray]) -> float:
        a, b = (slopes(y) for y in states)
        return float(np.sum(eps / 6 * a * (a + b) / 2 * b))

    def gradient(states: States) -> np.ndarray:
        a, b, c = (slopes(y) for y in states)
        return lift(Dp.T @ (eps / 6 * b * (a + b + c)))

    diagonal = np.arange(n)

    def affine_parts(states: States) -> Tuple[np.ndarray, np.ndarray]:
        a, b = (slopes(y) for y in states)
        # D+^T diag(c) D+ is tridiagonal: c_j + c_{j+1} on the diagonal, -c_{j+1} beside it
        c = eps / 6 * b / params.dx**2
        G = np.zeros((2 * n, 2 * n))
        G[diagonal, diagonal] = c[:-1] + c[1:]
        G[diagonal[:-1], diagonal[1:]] = -c[1:-1]
        G[diagonal[1:], diagonal[:-1]] = -c[1:-1]
        return G, lift(Dp.T @ (eps / 6 * b * (a + b)))

    conservative = params.beta == 0 and params.gamma == 0
    j_class = StructureClass.SKEW_SYMMETRIC if conservative else StructureClass.NEGATIVE_SEMIDEFINITE
    system = SemilinearSystem(J=Q, M=M, gradU=gradU, U=U, j_class=j_class, degree=3, name="fpu")

    def checked_energy(states: States) -> float:
        if len(states) != 2:
            raise WindowError(f"FPU polarization expects 2 states, got {len(states)}")
        return energy(list(states))

    P = PolarizedPotential(
        window=2,
        dim=2 * n,
        energy=checked_energy,
        gradient=gradient,
        affine_parts=affine_parts,
        name="fpu",
        support=slice(0, n),
    )
    logger.debug(f"FPU system: N={params.N}, beta={params.beta}, gamma={params.gamma}, class={j_class.value}")
    return system, P


def fpu_kink_profile(alpha: float, x: np.ndarray, t: float) -> np.ndarray:
    """Two-kink profile q(x, t); ln(1 + e^z) is evaluated as logaddexp(0, z)."""
    shift = t * math.sinh(alpha)

    def log_term(center: float) -> np.ndarray:
        return np.logaddexp(0.0, 2 * (alpha * (x - center) + shift))

    return 5 * (log_term(97) - log_term(96)) + 5 * (log_term(32) - log_term(33))


def fpu_kink_velocity(alpha: float, x: np.ndarray, t: float) -> np.ndarray:
    """Exact time derivative of fpu_kink_profile: d/dt ln(1 + e^{2z}) = 2 sinh(alpha) expit(2z)."""
    shift = t * math.sinh(alpha)

    def sigmoid(center: float) -> np.ndarray:
        return expit(2 * (alpha * (x - center) + shift))

    return 10 * math.sinh(alpha) * (sigmoid(97) - sigmoid(96) + sigmoid(32) - sigmoid(33))


def fpu_initial(alpha: float = 0.1, N: int = 128, L: float = 128.0) -> np.ndarray:
    """u_j(0) = q(x_j, 0), v_j(0) = dq/dt(x_j, 0) at the interior nodes x_j = j L / N."""
    x = np.arange(1, N) * (L / N)
    return np.concatenate([fpu_kink_profile(alpha, x, 0.0), fpu_kink_velocity(alpha, x, 0.0)])


# ==============================================================================
# Polynomial Pendulum
# ==============================================================================

@dataclass(frozen=True)
class PendulumParams:
    """The truncated Hamiltonian has no free parameters; only the initial data vary."""

    q0: float = 0.5
    p0: float = 1.0


def pendulum_original_energy(y: np.ndarray) -> float:
    """H = p^2/2 + 1 - cos q."""
    q, p = y
    return 0.5 * p**2 + 1.0 - math.cos(q)


def pendulum_initial(q0: float = 0.5, p0: float = 1.0) -> np.ndarray:
    return np.array([q0, p0])


def pendulum_truncated() -> Tuple[SemilinearSystem, PolarizedPotential]:
    """
    H = p^2/2 + q^2/2 - q^4/24 + q^6/720 with y = (q, p), canonical J and M = I.

    Window-3 polarization
        U-bar = -1/24 q_n q_{n+1} q_{n+2} (q_n + q_{n+1} + q_{n+2})/3 + 1/720 q_n^2 q_{n+1}^2 q_{n+2}^2
    with polarized discrete gradient (q-component)
        1/240 q_{n+1}^2 q_{n+2}^2 (q_n + q_{n+3}) - 1/24 q_{n+1} q_{n+2} (q_n + q_{n+1} + q_{n+2} + q_{n+3}).
    """
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    M = np.eye(2)

    def U(y: np.ndarray) -> float:
        q = y[0]
        return -(q**4) / 24 + q**6 / 720

    def gradU(y: np.ndarray) -> np.ndarray:
        q = y[0]
        return np.array([-(q**3) / 6 + q**5 / 120, 0.0])

    def energy(states: States) -> float:
        if len(states) != 3:
            raise WindowError(f"Pendulum polarization expects 3 states, got {len(states)}")
        q0, q1, q2 = (y[0] for y in states)
        return -q0 * q1 * q2 * (q0 + q1 + q2) / 3 / 24 + (q0 * q1 * q2) ** 2 / 720

    def gradient(states: States) -> np.ndarray:
        q0, q1, q2, q3 = (y[0] for y in states)
        return np.array([(q1 * q2) ** 2 * (q0 + q3) / 240 - q1 * q2 * (q0 + q1 + q2 + q3) / 24, 0.0])

    def affine_parts(states: States) -> Tuple[np.ndarray, np.ndarray]:
        q0, q1, q2 = (y[0] for y in states)
        G = np.zeros((2, 2))
        G[0, 0] = (q1 * q2) ** 2 / 240 - q1 * q2 / 24
        g = np.array([(q1 * q2) ** 2 * q0 / 240 - q1 * q2 * (q0 + q1 + q2) / 24, 0.0])
        return G, g

    system = SemilinearSystem(
        J=J,
        M=M,
        gradU=gradU,
        U=U,
        j_class=StructureClass.SKEW_SYMMETRIC,
        degree=6,
        name="pendulum",
        original_energy=pendulum_original_energy,
    )
    P = PolarizedPotential(
        window=3, dim=2, energy=energy, gradient=gradient, affine_parts=affine_parts, name="pendulum"
    )
    return system, P


# ==============================================================================
# Registry
# ==============================================================================

PROBLEMS = ("wind", "fpu", "pendulum")


def build(problem: str, params: Dict[str, Any]) -> Tuple[SemilinearSystem, PolarizedPotential, np.ndarray]:
    """
    Build (system, polarization, initial state) from flat parameters.

    Args:
        problem: "wind", "fpu" or "pendulum"
        params: problem keys (wind: r, theta, a, x0; fpu: N, L, beta, gamma,
            m, eps, alpha; pendulum: q0, p0); missing keys take the defaults

    Raises:
        ParameterError: unknown problem or invalid parameters
    """
    if problem == "wind":
        wind = WindOscillatorParams(
            r=params.get("r", 20.0), theta=params.get("theta", math.pi / 2), a=params.get("a", 0.5)
        )
        system, P, _ = wind_oscillator(wind)
        x0 = params.get("x0")
        return system, P, np.asarray(x0, dtype=float) if x0 is not None else wind_initial()
    if problem == "fpu":
        fpu = FpuParams(
            N=int(params.get("N", 128)),
            L=params.get("L", 128.0),
            beta=params.get("beta", 0.0),
            gamma=params.get("gamma", 0.0),
            m=params.get("m", 0.0),
            eps=params.get("eps", 0.75),
        )
        system, P = fpu_system(fpu)
        return system, P, fpu_initial(params.get("alpha", 0.1), int(fpu.N), fpu.L)
    if problem == "pendulum":
        system, P = pendulum_truncated()
        return system, P, pendulum_initial(params.get("q0", 0.5), params.get("p0", 1.0))
    raise ParameterError(f"Unknown problem '{problem}' (expected one of {', '.join(PROBLEMS)})")
