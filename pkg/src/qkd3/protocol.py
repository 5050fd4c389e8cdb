"""Pulse-level simulation of the three-stage (double-lock) key exchange.

One session follows every pulse through the seven protocol steps:

1. Alice picks a bit X and a rotation theta_A and sends phi1 = theta_X + theta_A.
2. Bob either keeps the pulse for authentication or adds theta_B and returns it.
3. Alice either keeps it for authentication or removes theta_A and returns it.
4. Bob removes theta_B and measures in the {0, pi/2} basis.
5. Bob's measured pulses are sifted; everything else is discarded.
6. Retained pulses are checked against the revealed rotations, and a random
   sample of the sifted bits is disclosed to estimate the QBER.
7. Post-processing is only accounted for (see :mod:`qkd3.analysis`).

Rotations are applied in 64-bit fixed-point turns so that the legitimate
chain returns exactly to theta_X. Pulses are processed in fixed-size blocks,
each with its own random substream, which makes a session independent of
the number of worker threads.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from qkd3 import __version__
from qkd3.attacks import ChannelContext, EveLog, EveState, Flight, NoAttack
from qkd3.core import (
    INCONCLUSIVE,
    QUARTER_TURN,
    PhotonCounts,
    PolarizationAngle,
    bit_error_array,
    estimate_angle_array,
    majority_bit_array,
    sample_counts_array,
    to_turns,
    turns_to_radians,
)
from qkd3.rng import RngStream

BLOCK_SIZE = 8192
TRANSCRIPT_SCHEMA = "qkd3.transcript"
TRANSCRIPT_VERSION = 1

RETAINED_BY_BOB = 0
RETAINED_BY_ALICE = 1
COMPLETED = 2
FATE_NAMES = ("retained_by_bob", "retained_by_alice", "completed")

NOT_MEASURED = -2


class InsufficientAuthenticationData(ValueError):
    """Neither side retained a conclusive pulse for authentication."""


@dataclass(frozen=True)
class SessionConfig:
    mean_n: float
    transmittance: float = 1.0
    n_pulses: int = 10_000
    p_auth_bob: float = 0.1
    p_auth_alice: float = 0.1
    misalignment_sigma: float = 0.0
    qber_sample_fraction: float = 0.1
    seed: int = 0
    # step 5 abandons the key below this raw rate; 0 disables the check
    min_raw_rate: float = 0.0

    def __post_init__(self) -> None:
        if not (self.mean_n > 0 and math.isfinite(self.mean_n)):
            raise ValueError(f"mean_n must be positive, got {self.mean_n!r}")
        if not 0.0 < self.transmittance <= 1.0:
            raise ValueError(f"transmittance must be in (0, 1], got {self.transmittance!r}")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError(f"n_pulses must be a positive integer, got {self.n_pulses!r}")
        for name in ("p_auth_bob", "p_auth_alice", "qber_sample_fraction", "min_raw_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")
        if not (self.misalignment_sigma >= 0 and math.isfinite(self.misalignment_sigma)):
            raise ValueError(f"misalignment_sigma must be >= 0, got {self.misalignment_sigma!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class PulseRecord:
    bit: int
    theta_x: PolarizationAngle
    theta_a: PolarizationAngle
    theta_b: PolarizationAngle
    stage_angles: tuple[PolarizationAngle, PolarizationAngle, PolarizationAngle]
    fate: str
    bob_counts: Optional[PhotonCounts]
    bob_bit: Optional[int | str]
    auth_estimate: Optional[PolarizationAngle]
    eve: Optional[EveState] = None


@dataclass
class PulseTable:
    """Column store behind a transcript; angles are uint64 turns."""

    bit: np.ndarray
    theta_a: np.ndarray
    theta_b: np.ndarray
    fate: np.ndarray
    bob_h: np.ndarray
    bob_v: np.ndarray
    bob_bit: np.ndarray
    auth_h: np.ndarray
    auth_v: np.ndarray
    auth_estimate: np.ndarray
    eve: EveLog

    @property
    def theta_x(self) -> np.ndarray:
        return self.bit.astype(np.uint64) * QUARTER_TURN

    @property
    def phi1(self) -> np.ndarray:
        return self.theta_x + self.theta_a

    @property
    def phi2(self) -> np.ndarray:
        return self.phi1 + self.theta_b

    @property
    def phi3(self) -> np.ndarray:
        return self.theta_x + self.theta_b

    def __len__(self) -> int:
        return self.bit.size

    @classmethod
    def concatenate(cls, parts: list["PulseTable"]) -> "PulseTable":
        cols = {
            name: np.concatenate([getattr(p, name) for p in parts])
            for name in ("bit", "theta_a", "theta_b", "fate", "bob_h", "bob_v", "bob_bit",
                         "auth_h", "auth_v", "auth_estimate")
        }
        return cls(**cols, eve=EveLog.concatenate([p.eve for p in parts]))

    def radians(self) -> dict[str, np.ndarray]:
        """Every angle column converted to radians in one pass."""
        return {
            "theta_x": turns_to_radians(self.theta_x),
            "theta_a": turns_to_radians(self.theta_a),
            "theta_b": turns_to_radians(self.theta_b),
            "phi1": turns_to_radians(self.phi1),
            "phi2": turns_to_radians(self.phi2),
            "phi3": turns_to_radians(self.phi3),
        }

    def records(self) -> list[PulseRecord]:
        rad = {k: [PolarizationAngle(x) for x in v.tolist()] for k, v in self.radians().items()}
        fate = self.fate.tolist()
        bh, bv, bb = self.bob_h.tolist(), self.bob_v.tolist(), self.bob_bit.tolist()
        out = []
        for i, (bit, est) in enumerate(zip(self.bit.tolist(), self.auth_estimate.tolist())):
            done = fate[i] == COMPLETED
            out.append(PulseRecord(
                bit=bit,
                theta_x=rad["theta_x"][i],
                theta_a=rad["theta_a"][i],
                theta_b=rad["theta_b"][i],
                stage_angles=(rad["phi1"][i], rad["phi2"][i], rad["phi3"][i]),
                fate=FATE_NAMES[fate[i]],
                bob_counts=PhotonCounts(bh[i], bv[i]) if done else None,
                bob_bit=("inconclusive" if bb[i] == INCONCLUSIVE else bb[i]) if done else None,
                auth_estimate=None if math.isnan(est) else PolarizationAngle(est),
            ))
        return out

    def record(self, i: int, with_eve: bool = False) -> PulseRecord:
        def ang(turns) -> PolarizationAngle:
            return PolarizationAngle(float(turns_to_radians(turns)))

        fate = int(self.fate[i])
        bob_counts = None
        bob_bit: Optional[int | str] = None
        if fate == COMPLETED:
            bob_counts = PhotonCounts(int(self.bob_h[i]), int(self.bob_v[i]))
            b = int(self.bob_bit[i])
            bob_bit = "inconclusive" if b == INCONCLUSIVE else b
        est = self.auth_estimate[i]
        return PulseRecord(
            bit=int(self.bit[i]),
            theta_x=ang(self.theta_x[i]),
            theta_a=ang(self.theta_a[i]),
            theta_b=ang(self.theta_b[i]),
            stage_angles=(ang(self.phi1[i]), ang(self.phi2[i]), ang(self.phi3[i])),
            fate=FATE_NAMES[fate],
            bob_counts=bob_counts,
            bob_bit=bob_bit,
            auth_estimate=None if math.isnan(est) else PolarizationAngle(float(est)),
            eve=self.eve.state(i) if with_eve else None,
        )


def measure_bit(counts: PhotonCounts) -> int | str:
    """Majority vote between the analyzer ports; ties (and vacuum) are inconclusive."""
    b = int(majority_bit_array(counts.n_h, counts.n_v))
    return "inconclusive" if b == INCONCLUSIVE else b


def _simulate_block(cfg: SessionConfig, attack, n: int, rng: RngStream) -> PulseTable:
    t = cfg.transmittance
    ctx = ChannelContext(t, rng.child("channel"))
    eve = EveLog.empty(n)

    bit = rng.generator.integers(0, 2, n).astype(np.int8)
    theta_a = rng.turns(n)
    theta_b = rng.turns(n)
    bob_keeps = rng.random(n) < cfg.p_auth_bob
    alice_keeps = rng.random(n) < cfg.p_auth_alice
    misalign = rng.normal(cfg.misalignment_sigma, n) if cfg.misalignment_sigma > 0 else np.zeros(n)

    fate = np.full(n, COMPLETED, dtype=np.int8)
    auth_h = np.full(n, NOT_MEASURED, dtype=np.int64)
    auth_v = np.full(n, NOT_MEASURED, dtype=np.int64)
    auth_est = np.full(n, np.nan)
    bob_h = np.full(n, NOT_MEASURED, dtype=np.int64)
    bob_v = np.full(n, NOT_MEASURED, dtype=np.int64)
    bob_bit = np.full(n, NOT_MEASURED, dtype=np.int8)

    def retain(flight: Flight, who: int) -> None:
        # quadrant of the estimate is taken from the incident pulse
        rad = turns_to_radians(flight.angle)
        nh, nv = sample_counts_array(rad, flight.mean, rng)
        fate[flight.idx] = who
        auth_h[flight.idx] = nh
        auth_v[flight.idx] = nv
        auth_est[flight.idx] = estimate_angle_array(nh, nv, rad)

    theta_x = bit.astype(np.uint64) * QUARTER_TURN
    all_idx = np.arange(n)
    flight = Flight(all_idx, theta_x + theta_a, np.full(n, cfg.mean_n))

    # step 1 -> 2
    flight = attack.step(1, flight, eve, ctx)
    keep = bob_keeps[flight.idx]
    retain(_subset(flight, keep), RETAINED_BY_BOB)
    flight = _subset(flight, ~keep)
    flight = flight.replace(angle=flight.angle + theta_b[flight.idx])

    # step 2 -> 3
    flight = attack.step(2, flight, eve, ctx)
    keep = alice_keeps[flight.idx]
    retain(_subset(flight, keep), RETAINED_BY_ALICE)
    flight = _subset(flight, ~keep)
    flight = flight.replace(angle=flight.angle - theta_a[flight.idx])

    # step 3 -> 4
    flight = attack.step(3, flight, eve, ctx)
    final = flight.angle - theta_b[flight.idx]
    rad = turns_to_radians(final)
    if cfg.misalignment_sigma > 0:
        rad = rad + misalign[flight.idx]
    nh, nv = sample_counts_array(rad, flight.mean, rng)
    bob_h[flight.idx] = nh
    bob_v[flight.idx] = nv
    bob_bit[flight.idx] = majority_bit_array(nh, nv)

    return PulseTable(
        bit=bit, theta_a=theta_a, theta_b=theta_b, fate=fate,
        bob_h=bob_h, bob_v=bob_v, bob_bit=bob_bit,
        auth_h=auth_h, auth_v=auth_v, auth_estimate=auth_est, eve=eve,
    )


def _subset(flight: Flight, mask: np.ndarray) -> Flight:
    return Flight(flight.idx[mask], flight.angle[mask], flight.mean[mask])


def disclose_sample(sifted: np.ndarray, fraction: float, rng: RngStream) -> np.ndarray:
    """Sorted indices of ceil(fraction * |sifted|) sifted bits chosen uniformly."""
    k = math.ceil(fraction * sifted.size)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.generator.choice(sifted, size=k, replace=False))


@dataclass(frozen=True)
class Transcript:
    config: SessionConfig
    attack: dict
    table: PulseTable = field(repr=False)
    sifted_bits: np.ndarray = field(repr=False)
    disclosed: np.ndarray = field(repr=False)
    key: np.ndarray = field(repr=False)
    qber_estimate: Optional[float]
    auth_error_rate_bob: Optional[float]
    auth_error_rate_alice: Optional[float]
    raw_rate: float

    @cached_property
    def pulses(self) -> list[PulseRecord]:
        return self.table.records()

    @property
    def abandoned(self) -> bool:
        return self.raw_rate < self.config.min_raw_rate

    def fate_counts(self) -> dict[str, int]:
        counts = np.bincount(self.table.fate, minlength=3)
        return {name: int(c) for name, c in zip(FATE_NAMES, counts)}

    def summary(self) -> dict:
        return {
            "n_pulses": self.config.n_pulses,
            "fates": self.fate_counts(),
            "sifted": int(self.sifted_bits.size),
            "disclosed": int(self.disclosed.size),
            "key_bits": int(self.key.size),
            "raw_rate": self.raw_rate,
            "qber_estimate": self.qber_estimate,
            "auth_error_rate_bob": self.auth_error_rate_bob,
            "auth_error_rate_alice": self.auth_error_rate_alice,
            "abandoned": self.abandoned,
        }

    def to_dict(self, include_pulses: bool = False) -> dict:
        doc = {
            "schema": TRANSCRIPT_SCHEMA,
            "version": TRANSCRIPT_VERSION,
            "tool_version": __version__,
            "config": asdict(self.config),
            "attack": self.attack,
            "summary": self.summary(),
        }
        if include_pulses:
            doc["pulses"] = _pulse_dicts(self.table)
        return doc

    def to_json(self, include_pulses: bool = False) -> str:
        return json.dumps(self.to_dict(include_pulses), indent=2, allow_nan=False)


def _pulse_dicts(table: PulseTable) -> list[dict]:
    rad = {k: v.tolist() for k, v in table.radians().items()}
    fate = table.fate.tolist()
    bh, bv, bb = table.bob_h.tolist(), table.bob_v.tolist(), table.bob_bit.tolist()
    est = table.auth_estimate.tolist()
    out = []
    for i, bit in enumerate(table.bit.tolist()):
        done = fate[i] == COMPLETED
        out.append({
            "bit": bit,
            "theta_x": rad["theta_x"][i],
            "theta_a": rad["theta_a"][i],
            "theta_b": rad["theta_b"][i],
            "stage_angles": [rad["phi1"][i], rad["phi2"][i], rad["phi3"][i]],
            "fate": FATE_NAMES[fate[i]],
            "bob_counts": [bh[i], bv[i]] if done else None,
            "bob_bit": ("inconclusive" if bb[i] == INCONCLUSIVE else bb[i]) if done else None,
            "auth_estimate": None if math.isnan(est[i]) else est[i],
        })
    return out


def load_transcript_summary(path) -> dict:
    """Read a serialized transcript and check its schema tag."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != TRANSCRIPT_SCHEMA or doc.get("version") != TRANSCRIPT_VERSION:
        raise ValueError(f"{path}: not a version-{TRANSCRIPT_VERSION} transcript")
    return doc


def _auth_rate(table: PulseTable, who: int) -> Optional[float]:
    mask = (table.fate == who) & ~np.isnan(table.auth_estimate)
    if not mask.any():
        return None
    truth = table.phi1 if who == RETAINED_BY_BOB else table.phi2
    delta = table.auth_estimate[mask] - turns_to_radians(truth[mask])
    return float(np.count_nonzero(bit_error_array(delta)) / mask.sum())


def authenticate(transcript: Transcript) -> tuple[Optional[float], Optional[float]]:
    """Error rates of Bob's and Alice's retained-pulse estimates.

    Each estimate is compared with the angle revealed at step 6 (phi1 for
    Bob, phi2 for Alice). Pulses whose retention measurement saw no photon
    carry no information and are left out. A side with nothing to compare
    gets ``None``.
    """
    return _authenticate_table(transcript.table)


def _authenticate_table(table: PulseTable):
    bob = _auth_rate(table, RETAINED_BY_BOB)
    alice = _auth_rate(table, RETAINED_BY_ALICE)
    if bob is None and alice is None:
        raise InsufficientAuthenticationData("no conclusive retained pulses on either side")
    return bob, alice


def _sifted(table: PulseTable) -> np.ndarray:
    return np.flatnonzero((table.fate == COMPLETED) & (table.bob_bit >= 0))


def estimate_qber(transcript: Transcript, rng: RngStream) -> float:
    """Disclose a random sample of sifted bits and return their error rate."""
    sifted = transcript.sifted_bits
    if sifted.size == 0:
        raise ValueError("no sifted bits to estimate the QBER from")
    shown = disclose_sample(sifted, transcript.config.qber_sample_fraction, rng)
    if shown.size == 0:
        raise ValueError("qber_sample_fraction discloses no bits")
    return _error_rate(transcript.table, shown)


def _error_rate(table: PulseTable, idx: np.ndarray) -> float:
    return float(np.count_nonzero(table.bob_bit[idx] != table.bit[idx]) / idx.size)


def run_session(
    config: SessionConfig,
    attack=None,
    rng: Optional[RngStream] = None,
    threads: int = 1,
) -> Transcript:
    """Simulate ``config.n_pulses`` pulses of the protocol under ``attack``."""
    attack = NoAttack() if attack is None else attack
    rng = RngStream(config.seed) if rng is None else rng
    sizes = [min(BLOCK_SIZE, config.n_pulses - start) for start in range(0, config.n_pulses, BLOCK_SIZE)]

    def work(b: int) -> PulseTable:
        return _simulate_block(config, attack, sizes[b], rng.child("block", b))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(b) for b in range(len(sizes))]
    table = PulseTable.concatenate(parts)

    sifted = _sifted(table)
    disclosed = disclose_sample(sifted, config.qber_sample_fraction, rng.child("qber"))
    key = np.setdiff1d(sifted, disclosed, assume_unique=True)
    qber = _error_rate(table, disclosed) if disclosed.size else None
    try:
        bob_rate, alice_rate = _authenticate_table(table)
    except InsufficientAuthenticationData:
        bob_rate = alice_rate = None
    return Transcript(
        config=config,
        attack=attack.describe(),
        table=table,
        sifted_bits=sifted,
        disclosed=disclosed,
        key=key,
        qber_estimate=qber,
        auth_error_rate_bob=bob_rate,
        auth_error_rate_alice=alice_rate,
        raw_rate=key.size / config.n_pulses,
    )
