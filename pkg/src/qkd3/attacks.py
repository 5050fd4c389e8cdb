"""Eavesdropper strategies as per-traversal hooks for the protocol simulator.

Each attack exposes ``step(stage, flight, eve, ctx)``. The simulator calls it
once per channel traversal (stage 1: Alice to Bob, stage 2: Bob to Alice,
stage 3: Alice to Bob) with the pulses in flight at the sender's output, and
gets back the pulses that reach the receiver. Pulses are phase-randomized
coherent states, so a pulse is fully described by its polarization angle and
its Poisson mean.

Attack objects only hold parameters. Everything Eve learns during a session
lives in an :class:`EveLog`, one row per pulse.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from qkd3.core import (
    INCONCLUSIVE,
    PhotonCounts,
    PolarizationAngle,
    estimate_angle_array,
    majority_bit_array,
    sample_counts_array,
    to_turns,
    turns_to_radians,
    wrap_array,
)
from qkd3.rng import RngStream

NOT_MEASURED = -2


class AttackKind(str, enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept_resend"
    PHOTON_NUMBER_SPLITTING = "photon_number_splitting"
    MAN_IN_THE_MIDDLE = "man_in_the_middle"


@dataclass
class Flight:
    """Pulses crossing the channel: block indices, angles in turns, Poisson means."""

    idx: np.ndarray
    angle: np.ndarray
    mean: np.ndarray

    def replace(self, angle=None, mean=None) -> "Flight":
        return Flight(
            self.idx,
            self.angle if angle is None else angle,
            self.mean if mean is None else mean,
        )


@dataclass
class ChannelContext:
    transmittance: float
    rng: RngStream


@dataclass(frozen=True)
class EveState:
    """What Eve learned about one pulse."""

    counts_stage1: Optional[PhotonCounts]
    counts_stage2: Optional[PhotonCounts]
    counts_stage3: Optional[PhotonCounts]
    phi1_hat: Optional[PolarizationAngle]
    phi2_hat: Optional[PolarizationAngle]
    theta_b_hat: Optional[PolarizationAngle]
    eve_bit: Optional[int]


def _counts_or_none(h, v) -> Optional[PhotonCounts]:
    if h < 0:
        return None
    return PhotonCounts(int(h), int(v))


def _angle_or_none(x) -> Optional[PolarizationAngle]:
    return None if math.isnan(x) else PolarizationAngle(float(x))


@dataclass
class EveLog:
    """Columnar record of Eve's measurements; -2 marks 'not measured', NaN 'no estimate'.

    ``own_angle`` and ``sent_angle`` are only used by the man-in-the-middle
    attack: the rotation Eve applies when impersonating Bob, and the angle of
    the fresh pulse she sent Bob at stage 1.
    """

    counts_h: np.ndarray
    counts_v: np.ndarray
    phi1_hat: np.ndarray
    phi2_hat: np.ndarray
    theta_b_hat: np.ndarray
    eve_bit: np.ndarray
    own_angle: np.ndarray
    sent_angle: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "EveLog":
        return cls(
            counts_h=np.full((3, n), NOT_MEASURED, dtype=np.int64),
            counts_v=np.full((3, n), NOT_MEASURED, dtype=np.int64),
            phi1_hat=np.full(n, np.nan),
            phi2_hat=np.full(n, np.nan),
            theta_b_hat=np.full(n, np.nan),
            eve_bit=np.full(n, NOT_MEASURED, dtype=np.int64),
            own_angle=np.full(n, np.nan),
            sent_angle=np.full(n, np.nan),
        )

    @classmethod
    def concatenate(cls, logs: list["EveLog"]) -> "EveLog":
        return cls(
            counts_h=np.concatenate([g.counts_h for g in logs], axis=1),
            counts_v=np.concatenate([g.counts_v for g in logs], axis=1),
            phi1_hat=np.concatenate([g.phi1_hat for g in logs]),
            phi2_hat=np.concatenate([g.phi2_hat for g in logs]),
            theta_b_hat=np.concatenate([g.theta_b_hat for g in logs]),
            eve_bit=np.concatenate([g.eve_bit for g in logs]),
            own_angle=np.concatenate([g.own_angle for g in logs]),
            sent_angle=np.concatenate([g.sent_angle for g in logs]),
        )

    def record_counts(self, stage: int, idx, n_h, n_v) -> None:
        self.counts_h[stage - 1, idx] = n_h
        self.counts_v[stage - 1, idx] = n_v

    def state(self, i: int) -> EveState:
        return EveState(
            counts_stage1=_counts_or_none(self.counts_h[0, i], self.counts_v[0, i]),
            counts_stage2=_counts_or_none(self.counts_h[1, i], self.counts_v[1, i]),
            counts_stage3=_counts_or_none(self.counts_h[2, i], self.counts_v[2, i]),
            phi1_hat=_angle_or_none(self.phi1_hat[i]),
            phi2_hat=_angle_or_none(self.phi2_hat[i]),
            theta_b_hat=_angle_or_none(self.theta_b_hat[i]),
            eve_bit=None if self.eve_bit[i] == NOT_MEASURED else int(self.eve_bit[i]),
        )


def tap_pulse(pulse_mean, fraction: float, rng: RngStream | None = None):
    """Split a coherent pulse on a beam splitter.

    Returns ``(eve_mean, forwarded_mean)``. Splitting a phase-randomized
    coherent state thins its Poisson mean exactly, so no randomness is needed;
    ``rng`` is accepted for interface symmetry with the other hooks.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"tap fraction must be in [0, 1], got {fraction!r}")
    pulse_mean = np.asarray(pulse_mean, dtype=np.float64)
    eve_mean = fraction * pulse_mean
    return eve_mean, pulse_mean - eve_mean


def _theta_b_from(phi1_hat, phi2_hat) -> np.ndarray:
    both = ~(np.isnan(phi1_hat) | np.isnan(phi2_hat))
    out = np.full(phi1_hat.shape, np.nan)
    out[both] = wrap_array(phi2_hat[both] - phi1_hat[both])
    return out


def eve_bit_decision_array(theta_b_hat, n_h, n_v) -> np.ndarray:
    """Majority vote on counts taken in a basis rotated by ``theta_b_hat``."""
    bits = majority_bit_array(n_h, n_v)
    return np.where(np.isnan(theta_b_hat), INCONCLUSIVE, bits)


def eve_bit_decision(eve_state: EveState, stage3_counts: PhotonCounts) -> int:
    """Eve's guess of X from stage-3 counts measured in her rotated basis.

    ``stage3_counts`` must come from an analyzer rotated by
    ``eve_state.theta_b_hat`` (see :func:`measure_rotated`). Missing estimates
    give :data:`~qkd3.core.INCONCLUSIVE`.
    """
    if eve_state.phi1_hat is None or eve_state.theta_b_hat is None:
        return INCONCLUSIVE
    return int(majority_bit_array(stage3_counts.n_h, stage3_counts.n_v))


def measure_rotated(stage3_angle, theta_b_hat, mean_n: float, rng: RngStream) -> PhotonCounts:
    """Counts of a stage-3 pulse on an analyzer rotated by ``theta_b_hat``."""
    nh, nv = sample_counts_array(np.array([float(stage3_angle) - float(theta_b_hat)]), mean_n, rng)
    return PhotonCounts(int(nh[0]), int(nv[0]))


def _measure(stage: int, flight: Flight, eve_mean, eve: EveLog, rng: RngStream):
    rad = turns_to_radians(flight.angle)
    nh, nv = sample_counts_array(rad, eve_mean, rng)
    eve.record_counts(stage, flight.idx, nh, nv)
    return rad, nh, nv


def _random_where_nan(angle_rad, rng: RngStream) -> np.ndarray:
    fill = rng.uniform_angle(angle_rad.shape)
    return np.where(np.isnan(angle_rad), fill, angle_rad)


class _EstimatingAttack:
    """Shared stage logic for IR and PNS: estimate stages 1-2, decide at stage 3."""

    def _observe(self, stage: int, flight: Flight, eve_mean, eve: EveLog, rng: RngStream) -> None:
        idx = flight.idx
        if stage == 3:
            # the analyzer is rotated by theta_b_hat, so it sees angle - theta_b_hat
            theta_b_hat = eve.theta_b_hat[idx]
            rad = turns_to_radians(flight.angle) - np.nan_to_num(theta_b_hat)
            nh, nv = sample_counts_array(rad, eve_mean, rng)
            eve.record_counts(3, idx, nh, nv)
            eve.eve_bit[idx] = eve_bit_decision_array(theta_b_hat, nh, nv)
            return
        rad, nh, nv = _measure(stage, flight, eve_mean, eve, rng)
        est = estimate_angle_array(nh, nv, rad)
        if stage == 1:
            eve.phi1_hat[idx] = est
        else:
            eve.phi2_hat[idx] = est
            eve.theta_b_hat[idx] = _theta_b_from(eve.phi1_hat[idx], est)


@dataclass(frozen=True)
class NoAttack:
    kind: AttackKind = field(default=AttackKind.NONE, init=False)

    def step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        return flight.replace(mean=flight.mean * ctx.transmittance)

    def describe(self) -> dict:
        return {"kind": self.kind.value}


@dataclass(frozen=True)
class InterceptResend(_EstimatingAttack):
    """Eve absorbs every pulse at the sender's output and resends one.

    ``mode='idealized'`` resends at the original angle (Eve's best case used
    in the error-probability analysis); ``mode='operational'`` resends at her
    estimate, which also disturbs Bob's bits. The resent mean is what the
    receiver expects after channel loss. Eve therefore sees N at stage 1 and
    t*N at stage 2.
    """

    mode: str = "idealized"
    kind: AttackKind = field(default=AttackKind.INTERCEPT_RESEND, init=False)

    def __post_init__(self) -> None:
        if self.mode not in ("idealized", "operational"):
            raise ValueError(f"unknown intercept-resend mode {self.mode!r}")

    def step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        return self.ir_attack_step(stage, flight, eve, ctx)

    def ir_attack_step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        if stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {stage!r}")
        self._observe(stage, flight, flight.mean, eve, ctx.rng)
        forwarded_mean = flight.mean * ctx.transmittance
        if self.mode == "idealized":
            return flight.replace(mean=forwarded_mean)
        if stage == 3:
            bits = eve.eve_bit[flight.idx]
            guess = np.where(bits == INCONCLUSIVE, ctx.rng.generator.integers(0, 2, bits.size), bits)
            angle = _random_where_nan(eve.theta_b_hat[flight.idx], ctx.rng) + guess * (0.5 * math.pi)
        else:
            est = eve.phi1_hat if stage == 1 else eve.phi2_hat
            angle = _random_where_nan(est[flight.idx], ctx.rng)
        return Flight(flight.idx, to_turns(angle), forwarded_mean)

    def describe(self) -> dict:
        return {"kind": self.kind.value, "mode": self.mode}


@dataclass(frozen=True)
class PhotonNumberSplitting(_EstimatingAttack):
    """Eve taps a fraction of every pulse and forwards the rest losslessly.

    The default tap fraction 1 - t hides the attack inside the channel loss:
    Eve sees (1-t)N at stage 1 and (1-t)tN at stage 2, and the receiver gets
    exactly the mean it expects.
    """

    tap_fraction: Optional[float] = None
    kind: AttackKind = field(default=AttackKind.PHOTON_NUMBER_SPLITTING, init=False)

    def __post_init__(self) -> None:
        if self.tap_fraction is not None and not 0.0 <= self.tap_fraction <= 1.0:
            raise ValueError(f"tap fraction must be in [0, 1], got {self.tap_fraction!r}")

    def fraction(self, transmittance: float) -> float:
        return 1.0 - transmittance if self.tap_fraction is None else self.tap_fraction

    def step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        eve_mean, forwarded = tap_pulse(flight.mean, self.fraction(ctx.transmittance))
        self._observe(stage, flight, eve_mean, eve, ctx.rng)
        return flight.replace(mean=forwarded)

    def describe(self) -> dict:
        return {"kind": self.kind.value, "tap_fraction": self.tap_fraction}


@dataclass(frozen=True)
class ManInTheMiddle:
    """Eve impersonates Bob towards Alice and Alice towards Bob.

    Stage 1: Eve spends (1-t^2)N of Alice's pulse on an estimate of phi1 and
    sends Bob a fresh pulse of mean tN at that estimate. Stage 2: from Bob's
    reply she spends t(1-t^2)N on an estimate of theta_B, and sends Alice a
    fresh pulse of mean t^2 N rotated by an angle of her own. Stage 3: she
    reads X from Alice's reply in her own basis and sends Bob a fresh pulse
    of mean t^3 N encoding that bit under her theta_B estimate.

    Vacuum estimates fall back to a uniformly random angle.
    """

    kind: AttackKind = field(default=AttackKind.MAN_IN_THE_MIDDLE, init=False)

    def step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        return self.mim_attack_step(stage, flight, eve, ctx)

    def mim_attack_step(self, stage: int, flight: Flight, eve: EveLog, ctx: ChannelContext) -> Flight:
        t = ctx.transmittance
        rng = ctx.rng
        budget = 1.0 - t * t
        idx = flight.idx
        if stage == 1:
            eve_mean, _ = tap_pulse(flight.mean, budget)
            rad, nh, nv = _measure(1, flight, eve_mean, eve, rng)
            est = estimate_angle_array(nh, nv, rad)
            eve.phi1_hat[idx] = est
            sent = _random_where_nan(est, rng)
            eve.sent_angle[idx] = sent
            return Flight(idx, to_turns(sent), flight.mean * t)
        if stage == 2:
            # Bob's reply is at sent_angle + theta_B
            eve_mean, _ = tap_pulse(flight.mean, budget)
            rad, nh, nv = _measure(2, flight, eve_mean, eve, rng)
            est = estimate_angle_array(nh, nv, rad)
            eve.phi2_hat[idx] = est
            eve.theta_b_hat[idx] = _theta_b_from(eve.sent_angle[idx], est)
            own = rng.uniform_angle(idx.size)
            eve.own_angle[idx] = own
            return Flight(idx, to_turns(eve.sent_angle[idx] + own), flight.mean * t)
        if stage == 3:
            # Alice's reply: theta_X + (phi1_hat - phi1) + own; read it in Eve's own basis
            rad = turns_to_radians(flight.angle)
            nh, nv = sample_counts_array(rad - eve.own_angle[idx], flight.mean, rng)
            eve.record_counts(3, idx, nh, nv)
            bits = majority_bit_array(nh, nv)
            eve.eve_bit[idx] = bits
            guess = np.where(bits == INCONCLUSIVE, rng.generator.integers(0, 2, idx.size), bits)
            theta_b = _random_where_nan(eve.theta_b_hat[idx], rng)
            return Flight(idx, to_turns(guess * (0.5 * math.pi) + theta_b), flight.mean * t)
        raise ValueError(f"stage must be 1, 2 or 3, got {stage!r}")

    def describe(self) -> dict:
        return {"kind": self.kind.value}
