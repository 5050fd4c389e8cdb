import math

import numpy as np
import pytest

from qkd3.analysis import mc_pe_auth_mim, mc_pe_ir_pns
from qkd3.attacks import (
    AttackKind,
    ChannelContext,
    EveLog,
    EveState,
    Flight,
    InterceptResend,
    ManInTheMiddle,
    NoAttack,
    PhotonNumberSplitting,
    eve_bit_decision,
    measure_rotated,
    tap_pulse,
)
from qkd3.core import INCONCLUSIVE, PhotonCounts, PolarizationAngle, bit_error_array, turns_to_radians
from qkd3.protocol import COMPLETED, SessionConfig, run_session
from qkd3.rng import RngStream


def basis_error(tr):
    """Eve's theta_B error rate over completed pulses where she has an estimate."""
    tb = tr.table
    hat = tb.eve.theta_b_hat
    m = (tb.fate == COMPLETED) & ~np.isnan(hat)
    err = bit_error_array(hat[m] - turns_to_radians(tb.theta_b[m]))
    return err.mean(), m.sum()


def eve_bit_error(tr):
    tb = tr.table
    m = (tb.fate == COMPLETED) & (tb.eve.eve_bit >= 0)
    return np.mean(tb.eve.eve_bit[m] != tb.bit[m])


def session(attack, n=1.0, t=1.0, pulses=40_000, seed=0, **kw):
    return run_session(SessionConfig(mean_n=n, transmittance=t, n_pulses=pulses, seed=seed, **kw), attack)


def test_tap_pulse_conserves_mean():
    eve, fwd = tap_pulse(np.array([2.0, 4.0]), 0.25)
    assert np.allclose(eve, [0.5, 1.0]) and np.allclose(eve + fwd, [2.0, 4.0])
    with pytest.raises(ValueError):
        tap_pulse(1.0, 1.5)


def test_attack_kinds():
    assert NoAttack().describe() == {"kind": "none"}
    assert InterceptResend("operational").describe() == {"kind": "intercept_resend", "mode": "operational"}
    assert PhotonNumberSplitting().kind is AttackKind.PHOTON_NUMBER_SPLITTING
    assert ManInTheMiddle().describe()["kind"] == "man_in_the_middle"
    with pytest.raises(ValueError):
        InterceptResend("sloppy")
    with pytest.raises(ValueError):
        PhotonNumberSplitting(tap_fraction=2.0)


def test_pns_default_fraction_tracks_loss():
    assert PhotonNumberSplitting().fraction(0.7) == pytest.approx(0.3)
    assert PhotonNumberSplitting(0.1).fraction(0.7) == 0.1


@pytest.mark.parametrize("attack", [InterceptResend(), ManInTheMiddle()])
def test_bad_stage_rejected(attack):
    f = Flight(np.arange(2), np.zeros(2, dtype=np.uint64), np.ones(2))
    with pytest.raises(ValueError):
        attack.step(4, f, EveLog.empty(2), ChannelContext(0.5, RngStream(0)))


def test_eve_bit_decision():
    st = EveState(None, None, None, PolarizationAngle(0.1), PolarizationAngle(0.4), PolarizationAngle(0.3), None)
    assert eve_bit_decision(st, PhotonCounts(3, 1)) == 0
    assert eve_bit_decision(st, PhotonCounts(0, 2)) == 1
    assert eve_bit_decision(st, PhotonCounts(1, 1)) == INCONCLUSIVE
    blind = EveState(None, None, None, None, None, None, None)
    assert eve_bit_decision(blind, PhotonCounts(3, 0)) == INCONCLUSIVE


def test_measure_rotated_undoes_rotation():
    rng = RngStream(2)
    # a V pulse (X = 1) under theta_B = 1.0 reads as V once rotated back
    c = measure_rotated(math.pi / 2 + 1.0, 1.0, 200.0, rng)
    assert c.n_v > 150 and c.n_h < 5


def test_eve_log_state_round_trip():
    tr = session(InterceptResend(), n=5.0, pulses=500)
    st = tr.table.eve.state(3)
    assert st.counts_stage1 is not None and st.phi1_hat is not None


@pytest.mark.parametrize("n,t", [(10.0, 1.0), (3.0, 0.5)])
def test_ir_basis_error_matches_estimator(n, t):
    tr = session(InterceptResend(), n=n, t=t, pulses=200_000, seed=1, p_auth_bob=0.0, p_auth_alice=0.0)
    p, m = basis_error(tr)
    ref = mc_pe_ir_pns(n, t * n, 200_000, 2)
    assert abs(p - ref.p_hat) <= 3 * math.hypot(math.sqrt(p * (1 - p) / m), ref.sigma)


def test_ir_realized_bit_error_includes_stage3_noise():
    # the bit guess adds majority-vote noise on top of the theta_B error
    tr = session(InterceptResend(), n=10.0, pulses=100_000, seed=4)
    p, _ = basis_error(tr)
    assert eve_bit_error(tr) >= p


def test_idealized_ir_is_invisible_to_bob():
    tr = session(InterceptResend(), n=3.0, t=0.5, seed=2)
    assert tr.qber_estimate == 0.0


def test_operational_ir_causes_errors():
    tr = session(InterceptResend("operational"), n=3.0, t=1.0, seed=2)
    assert tr.qber_estimate > 0.05


def test_pns_budgets_and_invisibility():
    n, t = 4.0, 0.5
    tr = session(PhotonNumberSplitting(), n=n, t=t, pulses=100_000, seed=3, p_auth_bob=0.0, p_auth_alice=0.0)
    assert tr.qber_estimate == 0.0
    clean = session(NoAttack(), n=n, t=t, pulses=100_000, seed=3, p_auth_bob=0.0, p_auth_alice=0.0)
    # Bob's detection statistics are those of the lossy channel
    assert abs(tr.sifted_bits.size - clean.sifted_bits.size) < 5 * math.sqrt(clean.sifted_bits.size)
    p, m = basis_error(tr)
    ref = mc_pe_ir_pns((1 - t) * n, (1 - t) * t * n, 100_000, 5)
    assert abs(p - ref.p_hat) <= 3 * math.hypot(math.sqrt(p * (1 - p) / m), ref.sigma)


def test_mim_raises_bob_authentication_error():
    tr = session(ManInTheMiddle(), n=1.0, t=0.25, pulses=200_000, seed=6, p_auth_bob=0.5)
    ref = mc_pe_auth_mim(0.25, 1.0, 200_000, 7)
    sd = math.sqrt(ref.p_hat * (1 - ref.p_hat) / (0.5 * 200_000 * (1 - math.exp(-0.25))))
    assert abs(tr.auth_error_rate_bob - ref.p_hat) <= 3 * math.hypot(sd, ref.sigma)


def test_mim_corrupts_key():
    tr = session(ManInTheMiddle(), n=2.0, t=0.5, pulses=50_000, seed=8)
    assert tr.qber_estimate > 0.05


@pytest.mark.parametrize("attack", [InterceptResend(), PhotonNumberSplitting(), ManInTheMiddle()])
def test_theta_b_estimate_identity(attack):
    tr = session(attack, n=3.0, t=0.5, pulses=300, seed=9)
    for i in range(300):
        st = tr.table.eve.state(i)
        if st.theta_b_hat is None:
            continue
        ref = st.phi1_hat
        if isinstance(attack, ManInTheMiddle):
            # Eve compares Bob's reply with the angle she sent him
            ref = PolarizationAngle(float(tr.table.eve.sent_angle[i]))
        assert (st.phi2_hat - ref).value == pytest.approx(st.theta_b_hat.value, abs=1e-12)


def test_mim_without_budget_learns_nothing():
    tr = session(ManInTheMiddle(), n=1.0, t=0.999, pulses=100_000, seed=10)
    tb = tr.table
    m = tb.eve.eve_bit >= 0
    agree = np.mean(tb.eve.eve_bit[m] == tb.bit[m])
    assert abs(agree - 0.5) <= 3 * math.sqrt(0.25 / m.sum())
