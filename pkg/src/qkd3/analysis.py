"""Monte Carlo error probabilities, key-rate accounting and rate efficiency.

The three estimators share one driver. Trials are cut into fixed-size
chunks; chunk ``c`` always draws from the substream ``("chunk", c)`` of the
seed and reports an integer error count. Threads only decide which chunk
runs where, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from qkd3.core import (
    binary_entropy,
    bit_error_array,
    estimate_angle_array,
    inverse_binary_entropy,
    sample_conclusive_counts_array,
    sample_counts_array,
)
from qkd3.rng import RngStream

CHUNK_SIZE = 1 << 14
DEFAULT_TRIALS = 100_000
MIN_TRIALS = 1_000
Z_SCORE = 3.0


@dataclass(frozen=True)
class EstimateWithCI:
    p_hat: float
    trials: int
    ci_half_width: float
    seed: int
    errors: int = 0

    @classmethod
    def from_counts(cls, errors: int, trials: int, seed: int) -> "EstimateWithCI":
        p = errors / trials
        return cls(p, trials, Z_SCORE * math.sqrt(p * (1.0 - p) / trials), seed, errors)

    @property
    def sigma(self) -> float:
        return self.ci_half_width / Z_SCORE


@dataclass(frozen=True)
class KeyRateInputs:
    raw_rate: float
    mim_fraction: float
    eve_pe: float
    qber: float

    def __post_init__(self) -> None:
        if self.raw_rate < 0:
            raise ValueError("raw rate must be non-negative")
        if not 0.0 <= self.mim_fraction <= 1.0:
            raise ValueError("MIM fraction must be in [0, 1]")
        if not 0.0 <= self.eve_pe <= 1.0:
            raise ValueError("eve_pe must be a probability")
        if not 0.0 <= self.qber <= 0.5:
            raise ValueError("QBER must be in [0, 0.5]")


def _run_chunks(
    chunk_errors: Callable[[int, RngStream], int],
    trials: int,
    seed: int,
    threads: int,
) -> EstimateWithCI:
    if int(trials) != trials or trials < MIN_TRIALS:
        raise ValueError(f"trials must be an integer >= {MIN_TRIALS}, got {trials!r}")
    root = RngStream(seed)
    sizes = [min(CHUNK_SIZE, trials - s) for s in range(0, trials, CHUNK_SIZE)]

    def work(c: int) -> int:
        return chunk_errors(sizes[c], root.child("chunk", c))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(work, range(len(sizes))))
    else:
        counts = [work(c) for c in range(len(sizes))]
    return EstimateWithCI.from_counts(int(sum(counts)), int(trials), seed)


def _estimate(phi, mean_n, rng: RngStream) -> np.ndarray:
    nh, nv = sample_conclusive_counts_array(phi, mean_n, rng)
    return estimate_angle_array(nh, nv, phi)


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


def mc_pe_ir_pns(n1: float, n2: float, trials: int = DEFAULT_TRIALS, seed: int = 0, threads: int = 1) -> EstimateWithCI:
    """Eve's bit-error probability from two stage-angle estimates.

    Per trial: phi1, phi2 uniform on [0, 2*pi); conclusive counts with means
    ``n1`` and ``n2``; quadrant-corrected estimates; error when the implied
    theta_B estimate is off by more than pi/4 (mod pi).
    """
    _positive("n1", n1)
    _positive("n2", n2)

    def chunk(n: int, rng: RngStream) -> int:
        phi1 = rng.uniform_angle(n)
        phi2 = rng.uniform_angle(n)
        est1 = _estimate(phi1, n1, rng)
        est2 = _estimate(phi2, n2, rng)
        return int(np.count_nonzero(bit_error_array((est2 - est1) - (phi2 - phi1))))

    return _run_chunks(chunk, trials, seed, threads)


def _check_t(t: float, allow_one: bool = True) -> None:
    ok = 0.0 < t <= 1.0 if allow_one else 0.0 < t < 1.0
    if not ok:
        raise ValueError(f"transmittance out of range, got {t!r}")


def mc_pe_auth_norm(t: float, mean_n: float, trials: int = DEFAULT_TRIALS, seed: int = 0, threads: int = 1) -> EstimateWithCI:
    """Bob's authentication error without an attacker (he receives t*N)."""
    _check_t(t)
    _positive("mean_n", mean_n)
    tn = t * mean_n

    def chunk(n: int, rng: RngStream) -> int:
        phi1 = rng.uniform_angle(n)
        est = _estimate(phi1, tn, rng)
        return int(np.count_nonzero(bit_error_array(est - phi1)))

    return _run_chunks(chunk, trials, seed, threads)


def mc_pe_auth_mim(t: float, mean_n: float, trials: int = DEFAULT_TRIALS, seed: int = 0, threads: int = 1) -> EstimateWithCI:
    """Bob's authentication error when Eve sits in the middle.

    Eve estimates phi1 from (1 - t^2)N photons and resends at her estimate;
    Bob estimates that pulse from tN photons. If Eve's measurement is vacuum
    she resends at a uniformly random angle. Bob's vacuum outcomes are
    conditioned away as in the no-attack case.
    """
    _check_t(t, allow_one=False)
    _positive("mean_n", mean_n)
    eve_n = (1.0 - t * t) * mean_n
    tn = t * mean_n

    def chunk(n: int, rng: RngStream) -> int:
        phi1 = rng.uniform_angle(n)
        nh, nv = sample_counts_array(phi1, eve_n, rng)
        eve_est = estimate_angle_array(nh, nv, phi1)
        vacuum = np.isnan(eve_est)
        eve_est[vacuum] = rng.uniform_angle(int(vacuum.sum()))
        bob_est = _estimate(eve_est, tn, rng)
        return int(np.count_nonzero(bit_error_array(bob_est - phi1)))

    return _run_chunks(chunk, trials, seed, threads)


# -- key-rate accounting -------------------------------------------------------

def mutual_info_eve(pe: float) -> float:
    """Eve's information about the key, 1 - h(pe)."""
    if not 0.0 <= pe <= 0.5:
        raise ValueError(f"Eve's error probability must be in [0, 0.5], got {pe!r}")
    return 1.0 - binary_entropy(pe)


def key_rate(inputs: KeyRateInputs) -> float:
    """K = R [(1 - f) h(P_e) - h(Q)]; a non-positive value means abort."""
    return inputs.raw_rate * (
        (1.0 - inputs.mim_fraction) * binary_entropy(inputs.eve_pe) - binary_entropy(inputs.qber)
    )


def qber_threshold(f: float, eve_pe: float) -> float:
    """Largest QBER with a non-negative key rate at MIM fraction ``f``."""
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"MIM fraction must be in [0, 1], got {f!r}")
    if not 0.0 < eve_pe <= 0.5:
        raise ValueError(f"eve_pe must be in (0, 0.5], got {eve_pe!r}")
    if f == 1.0:
        return 0.0
    return inverse_binary_entropy((1.0 - f) * binary_entropy(eve_pe))


def mim_fraction(measured: float, norm: float, mim: float) -> float:
    """Fraction of pulses under MIM attack inferred from authentication errors."""
    if not mim > norm:
        raise ValueError(
            f"MIM and no-attack error probabilities are not separated (mim={mim!r}, norm={norm!r})"
        )
    return min(1.0, max(0.0, (measured - norm) / (mim - norm)))


# -- distance trade-off --------------------------------------------------------

def transmittance(length_km: float, alpha_db_per_km: float) -> float:
    """t(l) = 10^(-alpha l / 10)."""
    if length_km < 0:
        raise ValueError("length must be non-negative")
    if not alpha_db_per_km > 0:
        raise ValueError("attenuation must be positive")
    return 10.0 ** (-alpha_db_per_km * length_km / 10.0)


def rate_efficiency(mean_n: float, length_km: float, alpha: float, passes: int = 3) -> float:
    """Raw-rate ratio of the three-stage protocol to weak-coherent BB84 (N = 0.5).

    E = (1 - exp(-N t(passes * l))) / (1 - exp(-0.5 t(l))). ``passes=3`` counts
    all three traversals; ``passes=2`` reproduces the t(2l) variant.
    """
    if passes not in (2, 3):
        raise ValueError(f"passes must be 2 or 3, got {passes!r}")
    _positive("mean_n", mean_n)
    num = -math.expm1(-mean_n * transmittance(passes * length_km, alpha))
    den = -math.expm1(-0.5 * transmittance(length_km, alpha))
    return num / den


def advantage_distance(mean_n: float, alpha: float) -> float:
    """Distance up to which the three-stage protocol out-rates BB84: (5/alpha) log10(N/0.5)."""
    _positive("mean_n", mean_n)
    _positive("alpha", alpha)
    return max(0.0, 5.0 / alpha * math.log10(mean_n / 0.5))


def efficiency_crossing(mean_n: float, alpha: float, passes: int = 3, tol: float = 1e-9) -> float:
    """Length where rate_efficiency falls to 1, by bisection (0 if it never exceeds 1)."""
    def g(length: float) -> float:
        return rate_efficiency(mean_n, length, alpha, passes) - 1.0

    if g(0.0) <= 0.0:
        return 0.0
    lo, hi = 0.0, 10.0
    while g(hi) > 0.0:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
