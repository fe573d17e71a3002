import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fchoquard import regime as rg
from fchoquard.regime import ProblemParams


def test_critical_exponents_three_dim():
    ce = rg.critical_exponents(ProblemParams(3, 0.5, 2.0, 2.0))
    assert ce.p_star == pytest.approx(2.0)
    assert ce.p_upper == pytest.approx(2.5)
    assert ce.p_omega is None


def test_p_omega_at_two_s():
    ce = rg.critical_exponents(ProblemParams(3, 0.5, 2.0, 2.0, omega=1.0))
    assert ce.p_omega == pytest.approx(2.0)


def test_two_dim_bounds():
    ce = rg.critical_exponents(ProblemParams(2, 0.5, 1.0, 2.0))
    assert ce.p_lower == 1.5
    assert ce.p_upper == 3.0


@pytest.mark.parametrize("kw", [dict(dim=1, s=0.5), dict(dim=1, s=0.7), dict(alpha=3.0),
                                dict(alpha=0.0), dict(p=1.0), dict(s=1.0), dict(omega=1.5)])
def test_params_rejected(kw):
    base = dict(dim=3, s=0.5, alpha=2.0, p=2.0)
    base.update(kw)
    with pytest.raises(ValueError):
        ProblemParams(**base)


def test_classify_examples():
    v = rg.classify_regime(ProblemParams(3, 0.5, 2.0, 2.2), fast_decay=False)
    assert v.existence_path == "Q1" and not v.nonexistence
    v = rg.classify_regime(ProblemParams(3, 0.5, 2.0, 1.5), fast_decay=True)
    assert v.nonexistence and v.existence_path == "none"
    v = rg.classify_regime(ProblemParams(3, 0.5, 2.0, 1.9), fast_decay=True)
    assert not v.nonexistence and v.existence_path == "none"
    assert v.notes


def test_classify_q2_path():
    # alpha = 2.5: p_omega = 2.1667 < 2.2 < p_star = 2.25
    prm = ProblemParams(3, 0.5, 2.5, 2.2, omega=1.0)
    ce = rg.critical_exponents(prm)
    assert ce.p_omega < 2.2 < ce.p_star
    assert rg.classify_regime(prm, fast_decay=False).existence_path == "Q2"


def test_boundary_values_are_none():
    v = rg.classify_regime(ProblemParams(3, 0.5, 2.0, 2.0), fast_decay=False)
    assert v.existence_path == "none"
    assert "boundary" in v.notes


def test_iteration_case1_diverges():
    tr = rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.5), "case1", 1.5)
    assert tr.mu_sequence[:4] == (1.5, 0.0, -3.0, -9.0)
    assert tr.diverged
    assert tr.fixed_point == pytest.approx(3.0)


def test_iteration_case1_escapes_upward():
    tr = rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.9), "case1", 1.9)
    assert tr.mu_sequence[1] == pytest.approx(2.32)
    assert tr.mu_sequence[1] > 2.0
    assert not tr.diverged


def test_iteration_case2_arithmetic():
    prm = ProblemParams(3, 0.5, 1.0, 2.0)
    tr = rg.nonexistence_iteration(prm, "case2", 1.2, max_iters=10)
    d = np.diff(tr.mu_sequence)
    assert np.allclose(d, 3 - 1.0 - 1.0)


def test_iteration_cap_uses_affine_limit():
    # gain 2p - 1 close to one: the floor is not reached within the cap
    tr = rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.001), "case1", 1.99, 20)
    assert tr.mu_sequence[-1] > -1e6
    assert tr.diverged


def test_iteration_case2_converges():
    # p < 2: gain below one, the sequence settles at the fixed point
    prm = ProblemParams(3, 0.5, 1.0, 1.5)
    tr = rg.nonexistence_iteration(prm, "case2", 1.5, 200)
    assert not tr.diverged
    assert tr.mu_sequence[-1] == pytest.approx(tr.fixed_point)


def test_iteration_rejects_start():
    with pytest.raises(ValueError):
        rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.5), "case1", 2.5)
    with pytest.raises(ValueError):
        rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.5), "case3", 1.5)


def test_admissible_q1_example():
    pen = rg.admissible_penalization(ProblemParams(3, 0.5, 2.0, 2.2), "Q1")
    assert pen.mu == pytest.approx(1.9)
    assert pen.tau == pytest.approx(2.0 + 0.28 / 3)
    assert pen.theta == pytest.approx(2.0 + 0.56 / 3)
    assert pen.kappa == 0.25 and pen.nu == 1.0


def test_admissible_empty_interval():
    with pytest.raises(ValueError, match="empty interval"):
        rg.admissible_penalization(ProblemParams(3, 0.5, 2.0, 2.01), "Q1")


def test_admissible_q2_windows():
    prm = ProblemParams(2, 0.5, 1.0, 2.6, omega=1.0)
    pen = rg.admissible_penalization(prm, "Q2")
    assert 1.0 < pen.mu < 2.0 and rg.check_chain(pen, prm)
    prm = ProblemParams(2, 0.5, 1.0, 2.6, omega=0.5)
    pen = rg.admissible_penalization(prm, "Q2")
    assert 2.0 < pen.mu < 2.5 and rg.check_chain(pen, prm)


# ---------------------------------------------------------------- properties

def test_threshold_equivalence_upper_start():
    prm0 = ProblemParams(3, 0.5, 2.0, 2.0)
    thr = 1 + (0.5 + 1.0) / 2.0
    for p in np.linspace(1.001, 2.499, 100):
        prm = ProblemParams(3, 0.5, 2.0, float(p))
        tr = rg.nonexistence_iteration(prm, "case1", 2.0 - 1e-12, 200, -1e6)
        if abs(p - thr) > 1e-9:
            assert tr.diverged == (p < thr), p
    assert prm0.dim == 3


def test_midpoint_start_threshold_counterexample():
    # starting at the window midpoint the sequence diverges whenever the fixed
    # point exceeds the start, which already happens for p in (1.75, 2)
    tr = rg.nonexistence_iteration(ProblemParams(3, 0.5, 2.0, 1.9), "case1", 1.5)
    assert tr.diverged and 1.9 > 1.75


@given(st.floats(1.01, 3.0), st.floats(1.01, 1.99))
@settings(max_examples=300, deadline=None)
def test_divergence_matches_fixed_point(p, frac_mu):
    prm = ProblemParams(3, 0.5, 2.0, p)
    mu0 = frac_mu
    fp = (2.0 + 1.0) / (2 * p - 2)
    if abs(mu0 - fp) < 1e-6:
        return
    tr = rg.nonexistence_iteration(prm, "case1", mu0, 200, -1e6)
    assert tr.diverged == (mu0 < fp)
    seq = tr.mu_sequence
    for a, b in zip(seq, seq[1:]):
        assert b == pytest.approx(a * (2 * p - 1) - 2.0 - 1.0, rel=1e-12, abs=1e-9)


@given(st.floats(1.01, 3.0), st.floats(1.01, 1.99))
@settings(max_examples=200, deadline=None)
def test_case2_recursion(p, mu0):
    tr = rg.nonexistence_iteration(ProblemParams(3, 0.5, 1.0, p), "case2", mu0, 50)
    for a, b in zip(tr.mu_sequence, tr.mu_sequence[1:]):
        assert b == pytest.approx(a * (p - 1) + 3 - 1.0 - 1.0, rel=1e-12, abs=1e-9)


def test_p_omega_increases_with_omega():
    om = np.linspace(0.05, 1.0, 40)
    vals = [rg.critical_exponents(ProblemParams(3, 0.5, 2.0, 2.0, omega=float(w))).p_omega for w in om]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.xfail(strict=True, reason="p_omega = 1+(alpha+2s)/(N+2s-omega) grows with omega")
def test_p_omega_decreases_with_omega():
    om = np.linspace(0.05, 1.0, 40)
    vals = [rg.critical_exponents(ProblemParams(3, 0.5, 2.0, 2.0, omega=float(w))).p_omega for w in om]
    assert np.all(np.diff(vals) < 0)


def test_mutual_exclusion_random():
    rng = np.random.default_rng(7)
    count = 0
    while count < 10_000:
        N = int(rng.integers(1, 4))
        s = float(rng.uniform(0.01, min(0.99, N / 2 - 1e-3)))
        alpha = float(rng.uniform(1e-3, N - 1e-3))
        p = float(rng.uniform(1.001, 6.0))
        fast = bool(rng.integers(2))
        omega = None if fast or rng.random() < 0.5 else float(rng.uniform(1e-3, 2 * s))
        v = rg.classify_regime(ProblemParams(N, s, alpha, p, omega), fast)
        assert not (v.existence_path != "none" and v.nonexistence)
        count += 1


@given(st.integers(1, 3), st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(0.5, 0.99))
@settings(max_examples=300, deadline=None)
def test_admissible_chain_holds(N, s, a_frac, p_frac, f):
    if not N > 2 * s:
        return
    lo = max(N - 4 * s, 0.0)
    alpha = lo + (N - lo) * (0.02 + 0.96 * a_frac)
    prm0 = ProblemParams(N, s, alpha, 2.0)
    ce = rg.critical_exponents(prm0)
    p = ce.p_star + (ce.p_upper - ce.p_star) * p_frac
    if not (p >= 2 and p < ce.p_upper):
        return
    prm = ProblemParams(N, s, alpha, p)
    try:
        pen = rg.admissible_penalization(prm, "Q1", mu_fraction=f)
    except ValueError:
        return
    assert rg.check_chain(pen, prm)
    assert math.isclose(pen.kappa, 0.25)


def test_sweep_rows():
    rows = rg.sweep(ProblemParams(3, 0.5, 2.0, 2.0), [1.5, 1.9, 2.2], True)
    assert rows == [(1.5, "none", True), (1.9, "none", False), (2.2, "Q1", False)]
