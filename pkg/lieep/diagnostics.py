"""
==============================================================================
Diagnostics Module (diagnostics.py)
==============================================================================
Description: Energy functionals, error metrics, order estimation and
structural checks

Main Features:
    - polarized_energy: windowed energy 1/(2p) sum y^T M y + U-bar(window)
    - discrete_energy: H(y) = 1/2 y^T M y + U(y) (or a system's original energy)
    - global_error / align_reference: max-norm error against a reference run
    - observed_order: least-squares and pairwise convergence slopes
    - lemma_definiteness: exp(phJM)^T M exp(phJM) - M
    - symmetry_residual: forward step then reversed step with -h
    - monotonicity_check: Lyapunov non-increase test
==============================================================================
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np

from errors import AlignmentError, InsufficientDataError, WindowError
from matfun import as_square_matrix, exp_and_phi, expm
from polarization import PolarizedPotential

logger = logging.getLogger(__name__)


@dataclass
class OrderEstimate:
    """Fitted convergence slope plus the slope between each pair of neighbours."""

    slope: float
    pairwise: List[float] = field(default_factory=list)
    hs: List[float] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)


# ==============================================================================
# Energies
# ==============================================================================

def polarized_energy(P: PolarizedPotential, M: np.ndarray, w: Sequence[np.ndarray]) -> float:
    """
    Polarized energy of a step window.

    H-bar(y_n, ..., y_{n+p-1}) = 1/(2p) sum_i y_{n+i}^T M y_{n+i} + U-bar(y_n, ..., y_{n+p-1})

    Raises:
        WindowError: len(w) != P.window
    """
    p = P.window
    if len(w) != p:
        raise WindowError(f"Polarized energy needs {p} states, got {len(w)}")
    quadratic = sum(float(y @ M @ y) for y in w)
    return quadratic / (2 * p) + float(P.energy(list(w)))


def discrete_energy(sys, y: np.ndarray, original: bool = False) -> float:
    """
    H(y) = 1/2 y^T M y + U(y).

    With ``original=True`` and a system carrying ``original_energy`` (the
    pendulum's 1/2 p^2 + 1 - cos q) that functional is used instead.
    """
    if original and sys.original_energy is not None:
        return float(sys.original_energy(y))
    return sys.energy(np.asarray(y, dtype=float))


# ==============================================================================
# Errors and Orders
# ==============================================================================

def align_reference(ref, traj):
    """
    Reference states on the trajectory's time grid.

    The reference grid must contain every trajectory time (it refines it by
    an integer factor).

    Raises:
        AlignmentError: some trajectory time has no reference counterpart
    """
    from integrators import Trajectory

    if len(ref.times) == 0:
        raise AlignmentError("Reference trajectory is empty")
    idx = np.searchsorted(ref.times, traj.times)
    idx = np.clip(idx, 0, len(ref.times) - 1)
    left = np.clip(idx - 1, 0, len(ref.times) - 1)
    best = np.where(np.abs(ref.times[left] - traj.times) < np.abs(ref.times[idx] - traj.times), left, idx)
    scale = max(1.0, float(np.max(np.abs(traj.times)))) if len(traj.times) else 1.0
    if np.any(np.abs(ref.times[best] - traj.times) > 1e-9 * scale):
        raise AlignmentError("Reference grid does not contain the trajectory grid")
    return Trajectory(times=ref.times[best], states=ref.states[best], metadata=dict(ref.metadata))


def global_error(traj, ref) -> float:
    """
    max_n ||y_n - y(t_n)||_2 over identical grids.

    Raises:
        AlignmentError: grids differ
    """
    if len(traj.times) != len(ref.times) or not np.allclose(traj.times, ref.times, rtol=0, atol=1e-9):
        raise AlignmentError(f"Grid mismatch: {len(traj.times)} vs {len(ref.times)} points")
    diff = np.atleast_2d(traj.states) - np.atleast_2d(ref.states)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def observed_order(hs: Sequence[float], errs: Sequence[float]) -> OrderEstimate:
    """
    Slope of log(err) against log(h).

    Raises:
        InsufficientDataError: fewer than 2 points
        ValueError: non-positive errors or non-decreasing step sizes
    """
    hs = [float(h) for h in hs]
    errs = [float(e) for e in errs]
    if len(hs) < 2 or len(hs) != len(errs):
        raise InsufficientDataError(f"Need at least 2 (h, error) pairs, got {len(hs)} and {len(errs)}")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("Step sizes must be strictly decreasing")
    if any(not (e > 0 and math.isfinite(e)) for e in errs):
        raise ValueError("Errors must be positive and finite")

    log_h, log_e = np.log(hs), np.log(errs)
    slope = float(np.polyfit(log_h, log_e, 1)[0])
    pairwise = [float((log_e[i + 1] - log_e[i]) / (log_h[i + 1] - log_h[i])) for i in range(len(hs) - 1)]
    return OrderEstimate(slope=slope, pairwise=pairwise, hs=hs, errors=errs)


# ==============================================================================
# Structural Checks
# ==============================================================================

def lemma_definiteness(J, M, p: int, h: float) -> Dict[str, float]:
    """
    B = exp(phJM)^T M exp(phJM) - M.

    Zero for skew-symmetric J, negative semidefinite for negative
    semidefinite J.

    Returns:
        Dict:
            - norm_B: ||B||_inf
            - max_eig_sym_B: largest eigenvalue of the symmetrized B
    """
    J = as_square_matrix(J, "J")
    M = as_square_matrix(M, "M")
    E = expm(p * h * (J @ M))
    B = E.T @ M @ E - M
    B = 0.5 * (B + B.T)
    return {
        "norm_B": float(np.linalg.norm(B, np.inf)),
        "max_eig_sym_B": float(np.max(np.linalg.eigvalsh(B))),
    }


def symmetry_residual(sys, P: PolarizedPotential, w: Sequence[np.ndarray], h: float) -> float:
    """
    Step forward from w, then run the scheme with -h from the reversed window.

    Returns:
        float: ||recovered y_n - y_n||_inf
    """
    from integrators import lieep_step

    p = P.window
    forward = lieep_step(sys, P, w, h, exp_and_phi(sys.J, sys.M, p * h))
    reversed_window = [forward] + list(w[1:])[::-1]
    recovered = lieep_step(sys, P, reversed_window, -h, exp_and_phi(sys.J, sys.M, -p * h))
    return float(np.max(np.abs(recovered - np.asarray(w[0], dtype=float))))


def monotonicity_check(series: Sequence[float], tol: float) -> Dict[str, Any]:
    """
    Count increases series[n+1] - series[n] > tol * (1 + |series[0]|).

    NaN entries (undefined windows) are skipped.

    Returns:
        Dict:
            - violations: number of offending indices
            - max_increase: largest increase seen (may be negative)
    """
    values = np.asarray(series, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) < 2:
        return {"violations": 0, "max_increase": -math.inf}
    increases = np.diff(values)
    threshold = tol * (1.0 + abs(values[0]))
    return {
        "violations": int(np.count_nonzero(increases > threshold)),
        "max_increase": float(np.max(increases)),
    }


def max_energy_deviation(series: Sequence[float], head: int) -> Dict[str, float]:
    """
    Boundedness of a non-conserved energy: max |H_n - H_0| overall and over the first ``head`` steps.
    """
    values = np.asarray(series, dtype=float)
    values = values[np.isfinite(values)]
    deviation = np.abs(values - values[0])
    return {
        "overall": float(np.max(deviation)),
        "head": float(np.max(deviation[: head + 1])),
    }
