"""
==============================================================================
Matrix Function Kernel (matfun.py)
==============================================================================
Description: Dense matrix exponential and phi-function used by every
exponential scheme

Main Features:
    - expm: exp(A) by scaling-and-squaring with a degree-13 Pade core
    - phi1: phi(A) = (exp(A) - I) / A, valid for singular A
    - exp_and_phi: cached pair (exp(V), phi(V)) for V = scale * J * M

Dependencies:
    - numpy: dense arrays
    - scipy.linalg.expm: Pade scaling-and-squaring

phi is never formed as (exp(A) - I) A^-1. It is read off the exponential of
the block matrix [[A, I], [0, 0]], whose upper-right block is
sum_k A^k / (k+1)!, so a zero or singular A needs no special path.
==============================================================================
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg

from errors import InvalidInputError, MatrixOverflowError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatrixFunctionPair:
    """
    Cached (exp(V), phi(V)) for a fixed step size and window length.

    Attributes:
        expV: exp(V)
        phiV: phi(V)
        scale: the value p*h used to form V = scale * J * M
        V: the generator itself
        phiJ: phi(V) @ J, the product every step multiplies with
    """

    expV: np.ndarray
    phiV: np.ndarray
    scale: float
    V: np.ndarray
    phiJ: np.ndarray

    def identity_residual(self) -> float:
        """||exp(V) - I - V phi(V)||_inf, should be round-off small."""
        n = self.V.shape[0]
        return float(np.linalg.norm(self.expV - np.eye(n) - self.V @ self.phiV, np.inf))


def as_square_matrix(A, name: str = "A") -> np.ndarray:
    """
    Coerce input to a finite float square matrix.

    Raises:
        ShapeError: not a square 2-D array
        InvalidInputError: contains NaN or Inf
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def _checked_expm(A: np.ndarray, norm: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(A)
    if not np.all(np.isfinite(E)):
        raise MatrixOverflowError(norm)
    return E


def expm(A) -> np.ndarray:
    """
    Matrix exponential exp(A).

    Args:
        A: square matrix with finite entries

    Returns:
        np.ndarray: exp(A)

    Raises:
        InvalidInputError: non-finite input
        MatrixOverflowError: squaring phase overflowed
    """
    A = as_square_matrix(A)
    return _checked_expm(A, float(np.linalg.norm(A, np.inf)))


def _exp_phi_block(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = A.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = A
    block[:n, n:] = np.eye(n)
    E = _checked_expm(block, float(np.linalg.norm(A, np.inf)))
    return E[:n, :n].copy(), E[:n, n:].copy()


def phi1(A) -> np.ndarray:
    """
    phi(A) with phi(z) = (e^z - 1) / z, so that A phi(A) = exp(A) - I.

    Works for singular and zero A.
    """
    A = as_square_matrix(A)
    return _exp_phi_block(A)[1]


def exp_and_phi(J, M, scale: float) -> MatrixFunctionPair:
    """
    Build the (exp(V), phi(V)) pair for V = scale * J * M.

    scale is p*h for the p-step scheme; a negative scale is accepted so the
    reversed scheme (h -> -h) can be evaluated.

    Raises:
        ShapeError: J and M dimensions differ
        InvalidInputError: scale is zero or non-finite
    """
    J = as_square_matrix(J, "J")
    M = as_square_matrix(M, "M")
    if J.shape != M.shape:
        raise ShapeError(f"J is {J.shape} but M is {M.shape}")
    if not np.isfinite(scale) or scale == 0.0:
        raise InvalidInputError(f"scale must be finite and non-zero, got {scale}")

    V = scale * (J @ M)
    expV, phiV = _exp_phi_block(V)
    logger.debug(f"exp/phi pair built: dim={V.shape[0]}, scale={scale:.6g}")
    return MatrixFunctionPair(expV=expV, phiV=phiV, scale=float(scale), V=V, phiJ=phiV @ J)
