"""
==============================================================================
Polarization Module (polarization.py)
==============================================================================
Description: Quadratic polarizations of polynomial potentials and their
polarized discrete gradients

Main Features:
    - PolarizedPotential: p-window energy, (p+1)-argument gradient and the
      affine decomposition of the gradient in the newest state
    - symmetric_polarization: gradient of a permutation-free polarization
    - polarize_monomial / polarize_polynomial: built-in scalar polarizations
    - validate_polarization: randomized check of the defining identities

A permutation-free polarization that is quadratic in each argument has the
exact polarized discrete gradient

    grad(y_n, ..., y_{n+p}) = p * d_last U(y_{n+1}, ..., y_{n+p-1}, (y_n + y_{n+p}) / 2)

because U(y_{n+1..n+p}) - U(y_{n..n+p-1}) is the difference of one quadratic
function at y_{n+p} and at y_n. The gradient is affine in y_{n+p}, which is
what makes the scheme linearly implicit.
==============================================================================
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly

from errors import UnsupportedDegreeError, WindowError

logger = logging.getLogger(__name__)

States = Sequence[np.ndarray]
EnergyFn = Callable[[States], float]
GradientFn = Callable[[States], np.ndarray]
AffineFn = Callable[[States], Tuple[np.ndarray, np.ndarray]]

MAX_DEGREE = 6
VALIDATION_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PolarizedPotential:
    """
    A p-window polarization of U with its polarized discrete gradient.

    Attributes:
        window: number p of consecutive states the energy depends on
        dim: state dimension
        energy: U-bar(y_n, ..., y_{n+p-1}) -> float
        gradient: (y_n, ..., y_{n+p}) -> state vector
        affine_parts: (y_n, ..., y_{n+p-1}) -> (G, g) with
            gradient(..., z) = G @ z + g
        symmetric: energy invariant under all argument permutations
        name: label used in reports
        support: components the gradient lives on; G vanishes outside
            support x support and the gradient outside support. None means
            the whole state.
    """

    window: int
    dim: int
    energy: EnergyFn
    gradient: GradientFn
    affine_parts: AffineFn
    symmetric: bool = True
    name: str = "polarization"
    support: Optional[slice] = None


@dataclass(frozen=True)
class ScalarPolynomial:
    """U(x) = sum_k coefficients[k] * x^k, applied componentwise and summed."""

    coefficients: Tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs or not all(math.isfinite(c) for c in coeffs):
            raise ValueError("Polynomial coefficients must be a non-empty list of finite reals")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        nonzero = [k for k, c in enumerate(self.coefficients) if c != 0.0]
        return nonzero[-1] if nonzero else 0

    def value(self, y: np.ndarray) -> float:
        return float(np.sum(npoly.polyval(np.asarray(y, dtype=float), self.coefficients)))

    def gradient(self, y: np.ndarray) -> np.ndarray:
        deriv = npoly.polyder(self.coefficients) if len(self.coefficients) > 1 else [0.0]
        return npoly.polyval(np.asarray(y, dtype=float), deriv)


@dataclass
class ValidationReport:
    """
    Outcome of validate_polarization.

    residuals holds the max absolute residual per check, scaled the max of
    residual / (1 + magnitude of the terms); a check passes when its scaled
    residual is at most ``tolerance``.
    """

    name: str
    trials: int
    tolerance: float = VALIDATION_TOLERANCE
    residuals: Dict[str, float] = field(default_factory=dict)
    scaled: Dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> List[str]:
        return [check for check, value in self.scaled.items() if not value <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


# ==============================================================================
# Generic Constructions
# ==============================================================================

def _check_arity(states: States, expected: int, what: str) -> List[np.ndarray]:
    if len(states) != expected:
        raise WindowError(f"{what} expects {expected} states, got {len(states)}")
    return [np.asarray(s, dtype=float) for s in states]


def probe_affine_parts(gradient: GradientFn, dim: int) -> AffineFn:
    """
    Affine decomposition of a gradient that is affine in its last argument.

    g is the gradient at z = 0 and column j of G is gradient(..., e_j) - g.
    Costs dim + 1 gradient evaluations, fine for small systems.
    """

    def affine_parts(window: States) -> Tuple[np.ndarray, np.ndarray]:
        window = list(window)
        g = gradient(window + [np.zeros(dim)])
        G = np.empty((dim, dim))
        for j, e in enumerate(np.eye(dim)):
            G[:, j] = gradient(window + [e]) - g
        return G, g

    return affine_parts


def symmetric_polarization(
    energy: EnergyFn,
    partial_last: Callable[[States], np.ndarray],
    window: int,
    dim: int,
    name: str = "polarization",
    affine_parts: Optional[AffineFn] = None,
) -> PolarizedPotential:
    """
    Polarized potential from a permutation-free energy quadratic in each argument.

    Args:
        energy: U-bar on ``window`` states
        partial_last: gradient of U-bar with respect to its last argument
        window: p
        dim: state dimension
        name: label
        affine_parts: hand-derived decomposition; probed when omitted

    Returns:
        PolarizedPotential with the midpoint polarized discrete gradient
    """
    p = window

    def checked_energy(states: States) -> float:
        return float(energy(_check_arity(states, p, name)))

    def gradient(states: States) -> np.ndarray:
        ys = _check_arity(states, p + 1, f"{name} gradient")
        midpoint = 0.5 * (ys[0] + ys[p])
        return p * np.asarray(partial_last(ys[1:p] + [midpoint]), dtype=float)

    return PolarizedPotential(
        window=p,
        dim=dim,
        energy=checked_energy,
        gradient=gradient,
        affine_parts=affine_parts or probe_affine_parts(gradient, dim),
        symmetric=True,
        name=name,
    )


def zero_polarization(dim: int, window: int = 2) -> PolarizedPotential:
    """U = 0: the scheme reduces to the exact linear flow."""
    zeros = np.zeros(dim)
    return PolarizedPotential(
        window=window,
        dim=dim,
        energy=lambda states: 0.0,
        gradient=lambda states: zeros.copy(),
        affine_parts=lambda states: (np.zeros((dim, dim)), zeros.copy()),
        name="zero",
    )


def corrupt_gradient(P: PolarizedPotential, delta: float) -> PolarizedPotential:
    """Copy of P whose gradient (and affine offset) is shifted by ``delta``."""

    def gradient(states: States) -> np.ndarray:
        return P.gradient(states) + delta

    def affine_parts(states: States) -> Tuple[np.ndarray, np.ndarray]:
        G, g = P.affine_parts(states)
        return G, g + delta

    return PolarizedPotential(
        window=P.window,
        dim=P.dim,
        energy=P.energy,
        gradient=gradient,
        affine_parts=affine_parts,
        symmetric=P.symmetric,
        support=P.support,
        name=f"{P.name}+corrupted",
    )


# ==============================================================================
# Scalar Monomials
# ==============================================================================

@dataclass(frozen=True)
class _Monomial:
    """Permutation-free polarization of x^degree, elementwise on arrays."""

    degree: int
    window: int
    value: Callable[[List[np.ndarray]], np.ndarray]
    partial: Callable[[List[np.ndarray], int], np.ndarray]


def _others(args: List[np.ndarray], i: int) -> np.ndarray:
    return np.prod([a for j, a in enumerate(args) if j != i], axis=0)


def _monomial(degree: int, theta: float = 0.5) -> _Monomial:
    if degree == 0:
        return _Monomial(0, 1, lambda a: np.ones_like(a[0]), lambda a, i: np.zeros_like(a[0]))
    if degree == 1:
        return _Monomial(1, 1, lambda a: a[0], lambda a, i: np.ones_like(a[0]))
    if degree == 2:
        return _Monomial(
            2,
            2,
            lambda a: theta * (a[0] ** 2 + a[1] ** 2) / 2 + (1 - theta) * a[0] * a[1],
            lambda a, i: theta * a[i] + (1 - theta) * a[1 - i],
        )
    if degree == 3:
        return _Monomial(
            3,
            2,
            lambda a: a[0] * (a[0] + a[1]) / 2 * a[1],
            lambda a, i: a[i] * a[1 - i] + a[1 - i] ** 2 / 2,
        )
    if degree == 4:
        return _Monomial(4, 2, lambda a: a[0] ** 2 * a[1] ** 2, lambda a, i: 2 * a[i] * a[1 - i] ** 2)
    if degree == 5:
        return _Monomial(
            5,
            4,
            lambda a: np.prod(a, axis=0) * np.sum(a, axis=0) / 4,
            lambda a, i: _others(a, i) * (np.sum(a, axis=0) + a[i]) / 4,
        )
    if degree == 6:
        return _Monomial(6, 3, lambda a: np.prod(a, axis=0) ** 2, lambda a, i: 2 * a[i] * _others(a, i) ** 2)
    raise UnsupportedDegreeError(f"No built-in polarization for degree {degree} (supported: 0..{MAX_DEGREE})")


def _lifted_value(mono: _Monomial, args: List[np.ndarray]) -> np.ndarray:
    # average over all mono.window-subsets keeps the lift permutation free
    subsets = list(itertools.combinations(range(len(args)), mono.window))
    return sum(mono.value([args[i] for i in s]) for s in subsets) / len(subsets)


def _lifted_partial_last(mono: _Monomial, args: List[np.ndarray]) -> np.ndarray:
    p = len(args)
    total = np.zeros_like(args[0])
    count = 0
    for s in itertools.combinations(range(p), mono.window):
        count += 1
        if s[-1] == p - 1:
            total = total + mono.partial([args[i] for i in s], mono.window - 1)
    return total / count


def _scalar_polarization(
    terms: List[Tuple[float, _Monomial]], window: int, dim: int, name: str
) -> PolarizedPotential:
    def energy(args: List[np.ndarray]) -> float:
        return float(np.sum(sum(c * _lifted_value(m, args) for c, m in terms)))

    def partial_last(args: List[np.ndarray]) -> np.ndarray:
        total = np.zeros(dim)
        for c, m in terms:
            total = total + c * _lifted_partial_last(m, args)
        return total

    P = symmetric_polarization(energy, partial_last, window, dim, name=name)

    def affine_parts(states: States) -> Tuple[np.ndarray, np.ndarray]:
        # separable potential: G is diagonal
        states = list(states)
        g = P.gradient(states + [np.zeros(dim)])
        slope = P.gradient(states + [np.ones(dim)]) - g
        return np.diag(slope), g

    return replace(P, affine_parts=affine_parts)


def polarize_monomial(degree: int, theta: float = 0.5, dim: int = 1) -> PolarizedPotential:
    """
    Built-in polarization of x^degree for degree 2..6.

    x^2: theta (x^2 + y^2)/2 + (1 - theta) x y    (window 2)
    x^3: x (x + y)/2 y                            (window 2)
    x^4: x^2 y^2                                  (window 2)
    x^5: x y z w (x + y + z + w)/4                (window 4)
    x^6: x^2 y^2 z^2                              (window 3)

    Raises:
        UnsupportedDegreeError: degree outside 2..6
    """
    if degree not in range(2, MAX_DEGREE + 1):
        raise UnsupportedDegreeError(f"polarize_monomial supports degrees 2..{MAX_DEGREE}, got {degree}")
    mono = _monomial(degree, theta)
    return _scalar_polarization([(1.0, mono)], mono.window, dim, name=f"x^{degree}")


def polarize_polynomial(
    poly: ScalarPolynomial, window: Optional[int] = None, theta: float = 0.5, dim: int = 1
) -> PolarizedPotential:
    """
    Coefficient-weighted sum of monomial polarizations on a common window.

    Terms with a smaller window are averaged over all argument subsets of
    their size, so the sum stays permutation free.

    Args:
        poly: polynomial of degree <= 6
        window: common window; defaults to the largest term window (at least 2)
        theta: parameter of the quadratic polarization
        dim: state dimension (the potential acts componentwise)

    Raises:
        UnsupportedDegreeError: degree > 6
        WindowError: window smaller than a term's window
    """
    if poly.degree > MAX_DEGREE:
        raise UnsupportedDegreeError(f"Polynomial degree {poly.degree} exceeds {MAX_DEGREE}")
    terms = [(c, _monomial(k, theta)) for k, c in enumerate(poly.coefficients) if c != 0.0]
    needed = max([2] + [m.window for _, m in terms])
    if window is None:
        window = needed
    if window < needed:
        raise WindowError(f"Window {window} too small, polynomial needs at least {needed}")
    logger.debug(f"Polarizing degree-{poly.degree} polynomial on window {window}")
    return _scalar_polarization(terms, window, dim, name=f"poly{list(poly.coefficients)}")


# ==============================================================================
# Validator
# ==============================================================================

def _inf(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def validate_polarization(
    P: PolarizedPotential,
    U: Callable[[np.ndarray], float],
    gradU: Callable[[np.ndarray], np.ndarray],
    trials: int = 1000,
    seed: int = 0,
    bound: float = 2.0,
) -> ValidationReport:
    """
    Check the polarized discrete gradient identities on random tuples.

    Checks:
        identity: U-bar(shifted) - U-bar(window) = (1/p)(y_{n+p} - y_n)^T grad
        consistency: grad(x, ..., x) = grad U(x)
        energy_consistency: U-bar(x, ..., x) = U(x)
        affine: G z + g = grad(..., z)
        permutation: U-bar invariant under argument permutations (if symmetric)
        reversal: grad of the reversed tuple equals grad (if symmetric)
        support: G and grad vanish outside P.support (if declared)

    Args:
        P: polarization under test
        U, gradU: the potential and its gradient
        trials: number of random tuples, entries uniform in [-bound, bound]
        seed: RNG seed

    Returns:
        ValidationReport; failures are carried in the report, never raised
    """
    rng = np.random.default_rng(seed)
    p, dim = P.window, P.dim
    report = ValidationReport(name=P.name, trials=trials)
    checks = ["identity", "consistency", "energy_consistency", "affine"]
    if P.symmetric:
        checks += ["permutation", "reversal"]
    outside = None
    if P.support is not None:
        checks.append("support")
        outside = np.ones(dim, dtype=bool)
        outside[P.support] = False
    for check in checks:
        report.residuals[check] = 0.0
        report.scaled[check] = 0.0

    perms = list(itertools.permutations(range(p)))
    if len(perms) > 24:
        perms = [tuple(rng.permutation(p)) for _ in range(24)]

    def record(check: str, residual: float, magnitude: float) -> None:
        report.residuals[check] = max(report.residuals[check], residual)
        report.scaled[check] = max(report.scaled[check], residual / (1.0 + magnitude))

    for _ in range(trials):
        ys = list(rng.uniform(-bound, bound, size=(p + 1, dim)))
        grad = P.gradient(ys)

        new, old = P.energy(ys[1:]), P.energy(ys[:p])
        rhs = float(np.dot(ys[p] - ys[0], grad)) / p
        record("identity", abs((new - old) - rhs), abs(new) + abs(old) + abs(rhs))

        x = ys[0]
        exact = np.asarray(gradU(x), dtype=float)
        record("consistency", _inf(P.gradient([x] * (p + 1)) - exact), _inf(exact))
        u_exact = float(U(x))
        record("energy_consistency", abs(P.energy([x] * p) - u_exact), abs(u_exact))

        G, g = P.affine_parts(ys[:p])
        record("affine", _inf(G @ ys[p] + g - grad), _inf(grad) + _inf(G) * _inf(ys[p]) + _inf(g))
        if outside is not None:
            leak = max(_inf(G[outside]), _inf(G[:, outside]), _inf(grad[outside]))
            record("support", leak, _inf(G) + _inf(grad))

        if P.symmetric:
            for perm in perms:
                permuted = P.energy([ys[i] for i in perm])
                record("permutation", abs(permuted - old), abs(old))
            record("reversal", _inf(P.gradient(ys[::-1]) - grad), _inf(grad))

    if report.passed:
        logger.info(f"Polarization '{P.name}' passed {trials} trials")
    else:
        logger.warning(f"Polarization '{P.name}' failed checks: {report.failures}")
    return report
