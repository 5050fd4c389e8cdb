"""Angle arithmetic, entropy, photon statistics and the polarization estimator.

Scalar functions take and return the small value types below. The ``*_array``
variants do the same work on numpy arrays and are what the simulators use.

Angles live on [0, 2*pi). Inside the protocol simulator they are also kept as
64-bit fixed-point "turns" (2**64 == 2*pi) so that adding and removing a
rotation is exact; see :func:`to_turns` and :func:`turns_to_radians`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from qkd3.rng import RngStream, sample_poisson, sample_poisson_nonzero

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi
QUARTER_TURN = np.uint64(1 << 62)
_TURN = float(1 << 64)

INCONCLUSIVE = -1


def wrap_angle(x: float) -> "PolarizationAngle":
    """Reduce ``x`` modulo 2*pi onto [0, 2*pi)."""
    return PolarizationAngle(x)


def _wrap(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"angle must be finite, got {x!r}")
    r = math.fmod(x, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if r >= TWO_PI:
        r = 0.0
    return r


def wrap_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("angles must be finite")
    r = np.mod(x, TWO_PI)
    return np.where(r >= TWO_PI, 0.0, r)


@dataclass(frozen=True, order=True)
class PolarizationAngle:
    """Linear-polarization direction in radians, always wrapped to [0, 2*pi)."""

    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _wrap(float(self.value)))

    def __add__(self, other) -> "PolarizationAngle":
        return PolarizationAngle(self.value + float(other))

    def __sub__(self, other) -> "PolarizationAngle":
        return PolarizationAngle(self.value - float(other))

    def __neg__(self) -> "PolarizationAngle":
        return PolarizationAngle(-self.value)

    def __float__(self) -> float:
        return self.value

    @property
    def quadrant(self) -> int:
        return min(int(self.value // HALF_PI), 3)


@dataclass(frozen=True)
class PhotonCounts:
    """Horizontal and vertical photon counts from a two-port analyzer."""

    n_h: int
    n_v: int

    def __post_init__(self) -> None:
        for name in ("n_h", "n_v"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def conclusive(self) -> bool:
        return self.n_h + self.n_v >= 1

    @property
    def total(self) -> int:
        return self.n_h + self.n_v


# -- fixed-point turns ---------------------------------------------------------

def to_turns(rad) -> np.ndarray:
    """Map radians to uint64 turns (rounding toward zero on the wrapped value)."""
    frac = np.mod(np.asarray(rad, dtype=np.float64) / TWO_PI, 1.0)
    frac = np.where(frac >= 1.0, 0.0, frac)
    return np.floor(frac * _TURN).astype(np.uint64)


def turns_to_radians(turns) -> np.ndarray:
    rad = np.asarray(turns, dtype=np.uint64).astype(np.float64) * (TWO_PI / _TURN)
    return np.where(rad >= TWO_PI, 0.0, rad)


# -- bit decisions and entropy -------------------------------------------------

def bit_error_condition(delta: float) -> bool:
    """True when an angle error ``delta`` flips a binary polarization decision.

    The alphabet {0, pi/2} is pi-periodic, so the test is cos(2*delta) < 0,
    i.e. ``delta`` mod pi strictly inside (pi/4, 3*pi/4). Exact ties count as
    correct.
    """
    if not math.isfinite(delta):
        raise ValueError("delta must be finite")
    return math.cos(2.0 * delta) < 0.0


def bit_error_array(delta) -> np.ndarray:
    return np.cos(2.0 * np.asarray(delta, dtype=np.float64)) < 0.0


def binary_entropy(p: float) -> float:
    """h(p) = -p log2 p - (1-p) log2 (1-p), with h(0) = h(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p!r}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def inverse_binary_entropy(y: float, tol: float = 1e-13) -> float:
    """The unique p in [0, 1/2] with binary_entropy(p) == y, by bisection."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"entropy must be in [0, 1], got {y!r}")
    if y == 0.0:
        return 0.0
    if y == 1.0:
        return 0.5
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- photon statistics ---------------------------------------------------------

def _check_mean(mean_n) -> None:
    if np.any(np.asarray(mean_n) < 0):
        raise ValueError("mean photon number must be non-negative")


def sample_photon_counts(phi, mean_n: float, rng: RngStream) -> PhotonCounts:
    """Analyzer counts for one phase-randomized coherent pulse."""
    _check_mean(mean_n)
    nh, nv = sample_counts_array(np.array([float(phi)]), np.array([mean_n], dtype=float), rng)
    return PhotonCounts(int(nh[0]), int(nv[0]))


def sample_counts_array(phi, mean_n, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Independent Poisson counts with means N cos^2(phi) and N sin^2(phi)."""
    phi = np.asarray(phi, dtype=np.float64)
    mean_n = np.broadcast_to(np.asarray(mean_n, dtype=np.float64), phi.shape)
    _check_mean(mean_n)
    c2 = np.cos(phi) ** 2
    lam = np.concatenate([mean_n * c2, mean_n * np.sin(phi) ** 2])
    n = sample_poisson(lam, rng)
    return n[: phi.size].reshape(phi.shape), n[phi.size :].reshape(phi.shape)


def sample_conclusive_counts_array(phi, mean_n, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Counts conditioned on at least one photon.

    The total is drawn from the zero-truncated Poisson law and split
    binomially between the ports, which has the same distribution as
    redrawing vacuum outcomes.
    """
    phi = np.asarray(phi, dtype=np.float64)
    mean_n = np.broadcast_to(np.asarray(mean_n, dtype=np.float64), phi.shape)
    total = sample_poisson_nonzero(mean_n, rng)
    c2 = np.clip(np.cos(phi) ** 2, 0.0, 1.0)
    nh = rng.binomial(total, c2)
    return nh, total - nh


def photon_count_pmf(counts: PhotonCounts, phi, mean_n: float) -> float:
    """Probability of ``counts`` given a conclusive detection.

    Poisson product e^-N (N cos^2 phi)^nh (N sin^2 phi)^nv / (nh! nv!) divided
    by the non-vacuum probability 1 - e^-N.
    """
    if mean_n <= 0:
        raise ValueError("mean photon number must be positive")
    if not counts.conclusive:
        raise ValueError("vacuum outcome carries no angle information")
    phi = float(phi)
    c2 = math.cos(phi) ** 2
    s2 = math.sin(phi) ** 2
    log_p = -mean_n - math.lgamma(counts.n_h + 1) - math.lgamma(counts.n_v + 1)
    for n, q in ((counts.n_h, c2), (counts.n_v, s2)):
        if n:
            if q <= 0.0:
                return 0.0
            log_p += n * math.log(mean_n * q)
    return math.exp(log_p) / -math.expm1(-mean_n)


# -- angle estimation ----------------------------------------------------------

def principal_estimate(n_h, n_v) -> np.ndarray:
    """arctan(sqrt(n_v / n_h)) on [0, pi/2]; n_h == 0 gives pi/2."""
    n_h = np.asarray(n_h, dtype=np.float64)
    n_v = np.asarray(n_v, dtype=np.float64)
    return np.arctan2(np.sqrt(n_v), np.sqrt(n_h))


def place_in_quadrant(base, quadrant) -> np.ndarray:
    """Map a principal estimate in [0, pi/2] into ``quadrant`` (0..3).

    Quadrants 1 and 3 mirror the estimate, since cos^2 and sin^2 only fix the
    angle up to reflection.
    """
    base = np.asarray(base, dtype=np.float64)
    q = np.asarray(quadrant)
    out = np.where(q == 0, base, 0.0)
    out = np.where(q == 1, math.pi - base, out)
    out = np.where(q == 2, math.pi + base, out)
    out = np.where(q == 3, TWO_PI - base, out)
    return np.where(out >= TWO_PI, 0.0, out)


def quadrant_of(angle) -> np.ndarray:
    return np.minimum(np.floor_divide(np.asarray(angle, dtype=np.float64), HALF_PI), 3).astype(np.int64)


def estimate_angle_array(n_h, n_v, true_angle) -> np.ndarray:
    """Vectorized :func:`estimate_angle`; vacuum pairs come back as NaN."""
    n_h = np.asarray(n_h)
    n_v = np.asarray(n_v)
    est = place_in_quadrant(principal_estimate(n_h, n_v), quadrant_of(wrap_array(true_angle)))
    return np.where(n_h + n_v > 0, est, np.nan)


def estimate_angle(counts: PhotonCounts, true_angle) -> PolarizationAngle:
    """Estimate a polarization angle from analyzer counts.

    Uses tan^2(phi) = n_v / n_h and places the result in the quadrant of
    ``true_angle`` (the estimator is granted the correct quadrant).
    """
    if not counts.conclusive:
        raise ValueError("vacuum outcome carries no angle information")
    est = estimate_angle_array(np.array([counts.n_h]), np.array([counts.n_v]), np.array([float(true_angle)]))
    return PolarizationAngle(float(est[0]))


def majority_bit_array(n_h, n_v) -> np.ndarray:
    """0 if more H photons, 1 if more V, :data:`INCONCLUSIVE` on a tie."""
    n_h = np.asarray(n_h)
    n_v = np.asarray(n_v)
    return np.where(n_h > n_v, 0, np.where(n_v > n_h, 1, INCONCLUSIVE)).astype(np.int64)
