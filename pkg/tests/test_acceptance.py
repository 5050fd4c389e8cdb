"""Acceptance suite: one PASS/FAIL line per criterion, printed in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py``; the lines appear under
"acceptance criteria" at the end of the report.
"""
import math
import time

import mpmath as mp
import numpy as np
import pytest

from qkd3.analysis import (
    advantage_distance,
    efficiency_crossing,
    mc_pe_auth_mim,
    mc_pe_auth_norm,
    mc_pe_ir_pns,
    mim_fraction,
)
from qkd3.attacks import InterceptResend, ManInTheMiddle, PhotonNumberSplitting
from qkd3.protocol import SessionConfig, run_session
from qkd3.specfun import bessel_i0, i0_minus_l0, pe_auth_norm_analytic, struve_l0

TRIALS = 100_000
LIMIT = 0.5 - 1.0 / math.pi
# lossless IR at N = 10: 10^6 trials, seed 1
IR_N10_TRIALS, IR_N10_SEED, IR_N10_ERRORS = 1_000_000, 1, 6480


def joint3(a, b):
    return 3.0 * math.hypot(a.sigma, b.sigma)


def test_1_closed_form_oracle(acceptance):
    start = time.perf_counter()
    worst = 0.0
    ok = True
    for t in (0.25, 0.5, 1.0):
        for n in (0.5, 1, 2, 4, 8):
            est = mc_pe_auth_norm(t, n, TRIALS, seed=0)
            gap = abs(est.p_hat - pe_auth_norm_analytic(t, n))
            worst = max(worst, gap / est.sigma)
            ok &= gap <= est.ci_half_width
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    assert acceptance("1", ok, f"15 grid points, worst |MC - closed form| = {worst:.2f} sigma, {elapsed:.1f} s")


def test_2_small_n_limits(acceptance):
    analytic = pe_auth_norm_analytic(1.0, 1e-4)
    mim = mc_pe_auth_mim(0.1, 1e-3, TRIALS, seed=0)
    ok = abs(analytic - LIMIT) <= 1e-3 and abs(mim.p_hat - 0.5) <= mim.ci_half_width
    assert acceptance("2", ok, f"norm(tN=1e-4) = {analytic:.6f} vs {LIMIT:.6f}; mim(0.1, 1e-3) = {mim.p_hat:.5f} +- {mim.ci_half_width:.5f}")


def test_3_large_n_decay(acceptance):
    analytic = pe_auth_norm_analytic(1.0, 64)
    mim = mc_pe_auth_mim(0.5, 64, TRIALS, seed=0)
    ok = analytic < 0.005 and mim.p_hat < 0.01 + mim.ci_half_width
    assert acceptance("3", ok, f"norm(1, 64) = {analytic:.3g}; mim(0.5, 64) = {mim.p_hat:.3g}")


def test_4_mim_norm_gap(acceptance):
    parts, ok = [], True
    for n in (0.5, 1, 2, 3):
        mim = mc_pe_auth_mim(0.1, n, TRIALS, seed=0)
        norm = mc_pe_auth_norm(0.1, n, TRIALS, seed=1)
        gap = mim.p_hat - norm.p_hat
        ok &= gap > 0.02 and gap > joint3(mim, norm)
        parts.append(f"N={n}: {gap:.4f} (3s={joint3(mim, norm):.4f})")
    assert acceptance("4", ok, "; ".join(parts))


@pytest.mark.xfail(strict=True, reason="19.4591 is not the value of the stated formula; see test_5b")
def test_5_advantage_distance_as_stated(acceptance):
    d = advantage_distance(3, 0.2)
    root = efficiency_crossing(3, 0.2, passes=3)
    ok = abs(d - 19.4591) <= 1e-3 and abs(root - d) <= 1e-6
    assert acceptance("5", ok, f"advantage_distance(3, 0.2) = {d:.7f} (stated 19.4591 +- 1e-3), E=1 root {root:.7f}")


def test_5b_advantage_distance_exact(acceptance):
    d = advantage_distance(3, 0.2)
    exact = 25.0 * math.log10(6.0)
    root = efficiency_crossing(3, 0.2, passes=3)
    ok = abs(d - exact) <= 1e-12 and abs(root - d) <= 1e-6
    assert acceptance("5b", ok, f"25 log10(6) = {exact:.7f}, formula {d:.7f}, E=1 root {root:.7f}")


def test_6_eve_error_monotone(acceptance):
    grid = [1, 2, 5, 10, 20]
    est = [mc_pe_ir_pns(n, n, TRIALS, seed=5) for n in grid]
    ok = all(a.p_hat - b.p_hat > joint3(a, b) for a, b in zip(est, est[1:]))
    n10 = est[grid.index(10)]
    ok &= n10.p_hat >= 10 * n10.sigma
    frozen = mc_pe_ir_pns(10, 10, IR_N10_TRIALS, IR_N10_SEED, threads=4)
    ok &= frozen.errors == IR_N10_ERRORS
    values = ", ".join(f"{e.p_hat:.4g}" for e in est)
    assert acceptance("6", ok, f"P_e(N,N) over {grid} = [{values}]; N=10 at {n10.p_hat / n10.sigma:.0f} sigma; "
                               f"10^6-trial value {frozen.p_hat}")


def test_7_protocol_end_to_end(acceptance):
    start = time.perf_counter()
    n, t, pb, pa = 4.0, 0.5, 0.1, 0.1
    tr = run_session(SessionConfig(mean_n=n, transmittance=t, n_pulses=100_000, p_auth_bob=pb, p_auth_alice=pa, seed=7))
    sift = tr.sifted_bits.size / 1e5
    want_sift = (1 - pb) * (1 - pa) * -math.expm1(-t**3 * n)
    ok = tr.qber_estimate == 0.0
    ok &= abs(sift - want_sift) <= 3 * math.sqrt(want_sift * (1 - want_sift) / 1e5)
    tb = tr.table
    m_bob = int(((tb.fate == 0) & ~np.isnan(tb.auth_estimate)).sum())
    ref_bob = pe_auth_norm_analytic(t, n)
    ok &= abs(tr.auth_error_rate_bob - ref_bob) <= 3 * math.sqrt(ref_bob * (1 - ref_bob) / m_bob)

    # Bob keeps half the pulses so the inferred fraction has a few-percent spread
    mim_tr = run_session(SessionConfig(mean_n=1.0, transmittance=0.25, n_pulses=100_000, p_auth_bob=0.5, seed=7),
                         ManInTheMiddle())
    f = mim_fraction(mim_tr.auth_error_rate_bob, pe_auth_norm_analytic(0.25, 1.0),
                     mc_pe_auth_mim(0.25, 1.0, 1_000_000, seed=3).p_hat)
    ok &= 0.9 <= f <= 1.0
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert acceptance("7", ok, f"QBER {tr.qber_estimate}, sift {sift:.5f} vs {want_sift:.5f}, "
                               f"auth {tr.auth_error_rate_bob:.4f} vs {ref_bob:.4f}, MIM f = {f:.3f}, {elapsed:.1f} s")


def _series(x, odd):
    with mp.workdps(60):
        h = mp.mpf(x) / 2
        if odd:
            return sum(h ** (2 * k + 1) / mp.gamma(k + mp.mpf(3) / 2) ** 2 for k in range(30))
        return sum(h ** (2 * k) / mp.factorial(k) ** 2 for k in range(30))


def test_8_special_functions(acceptance):
    worst = 0.0
    for x in (0.1, 0.5, 1, 2, 5, 8, 10, 20):
        for got, want in ((bessel_i0(x).value, _series(x, False)), (struve_l0(x).value, _series(x, True))):
            worst = max(worst, abs(got - float(want)) / float(want))
    ok = worst <= 1e-8
    jump = 0.0
    for x in np.linspace(7.5, 8.5, 201):
        with mp.workdps(60):
            want = float(_series(x, False) - _series(x, True))
        jump = max(jump, abs(i0_minus_l0(x).value - want) / want)
    below, above = i0_minus_l0(8.0).value, i0_minus_l0(math.nextafter(8.0, 9.0)).value
    jump = max(jump, abs(above - below) / below)
    ok &= jump <= 1e-8
    assert acceptance("8", ok, f"worst series mismatch {worst:.1e}; I0-L0 on [7.5, 8.5] within {jump:.1e}")


def test_9_thread_determinism(acceptance):
    calls = {
        "ir_pns": lambda k: mc_pe_ir_pns(3.0, 1.5, 60_000, 11, k),
        "auth_norm": lambda k: mc_pe_auth_norm(0.5, 2.0, 60_000, 11, k),
        "auth_mim": lambda k: mc_pe_auth_mim(0.5, 2.0, 60_000, 11, k),
    }
    for name, attack in (("none", None), ("ir", InterceptResend("operational")),
                         ("pns", PhotonNumberSplitting()), ("mim", ManInTheMiddle())):
        cfg = SessionConfig(mean_n=2.0, transmittance=0.5, n_pulses=20_000, seed=11)
        calls[f"session_{name}"] = lambda k, cfg=cfg, attack=attack: run_session(cfg, attack, threads=k).to_json(True)
    bad = [name for name, fn in calls.items() if not fn(1) == fn(2) == fn(8)]
    assert acceptance("9", not bad, f"{len(calls)} computations compared at 1/2/8 threads; differing: {bad or 'none'}")
