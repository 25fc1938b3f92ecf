"""Half-wavelength uniform linear array: steering vectors and beam gains."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# element spacing d = lambda/2  ->  phase step 2*pi*d/lambda = pi
PHASE_STEP = np.pi


@dataclass(frozen=True)
class SteeringVector:
    elements: np.ndarray
    n_antennas: int
    theta: float


def _check(theta, n):
    if int(n) != n or n < 1:
        raise ValueError(f"number of antennas must be a positive integer, got {n!r}")
    theta = np.asarray(theta, dtype=float)
    if not np.all((theta > 0.0) & (theta < np.pi)):
        raise ValueError(f"angle outside (0, pi): {theta}")


def steering(theta: float, n: int) -> SteeringVector:
    """a(theta) with element m equal to exp(-j*pi*m*cos(theta)) / sqrt(n)."""
    _check(theta, n)
    m = np.arange(n)
    elems = np.exp(-1j * PHASE_STEP * m * np.cos(theta)) / np.sqrt(n)
    return SteeringVector(elems, int(n), float(theta))


def steering_matrix(thetas, n: int) -> np.ndarray:
    """Columns are steering vectors for each angle, shape (n, len(thetas))."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    _check(thetas, n)
    m = np.arange(n)[:, None]
    return np.exp(-1j * PHASE_STEP * m * np.cos(thetas)[None, :]) / np.sqrt(n)


def steering_derivative(theta: float, n: int) -> np.ndarray:
    """Analytic d a(theta) / d theta."""
    _check(theta, n)
    m = np.arange(n)
    return (1j * PHASE_STEP * m * np.sin(theta)) * np.exp(-1j * PHASE_STEP * m * np.cos(theta)) / np.sqrt(n)


def beam_gain(theta: float, f) -> complex:
    """a^H(theta) f, the array response of beam f toward theta."""
    f = np.asarray(f)
    if f.ndim != 1 or f.size < 1:
        raise ValueError("beam must be a non-empty 1-D vector")
    a = steering(theta, f.size).elements
    return complex(np.vdot(a, f))


def orthogonality_defect(theta1: float, theta2: float, n: int) -> float:
    """|b^H(theta1) b(theta2)|, in [0, 1]; near 0 for well separated angles."""
    if theta1 == theta2:
        _check(theta1, n)
        return 1.0
    b1 = steering(theta1, n).elements
    b2 = steering(theta2, n).elements
    return float(min(abs(np.vdot(b1, b2)), 1.0))
