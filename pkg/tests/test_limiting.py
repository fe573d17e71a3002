import math

import numpy as np
import pytest

from fchoquard import limiting as lim
from fchoquard import spectral as sp
from fchoquard.regime import ProblemParams
from fchoquard.spectral import Field, Grid
from helpers import fd_orders

P2 = ProblemParams(2, 0.5, 1.0, 2.0)
P22 = ProblemParams(2, 0.5, 1.0, 2.2)


def smooth_field(grid, rng, amp=0.1):
    r = grid.radius()
    return Field(grid, np.exp(-r * r / 2) * (1 + amp * sp.random_tapered_field(grid, rng).values))


def test_zero_field():
    g = Grid(2, 32, 4.0)
    z = Field(g, np.zeros(g.shape))
    assert lim.energy_limiting(z, 1.0, P2) == 0.0
    assert not np.any(lim.grad_limiting(z, 1.0, P2).values)


def test_rejects_lambda():
    g = Grid(2, 16, 4.0)
    with pytest.raises(ValueError):
        lim.energy_limiting(Field(g, np.ones(g.shape)), 0.0, P2)


def test_ray_structure(rng):
    g = Grid(2, 64, 6.0)
    u = smooth_field(g, rng)
    ne = lim.nehari_scale(u, 1.3, P22)
    for t in (0.5, 1.0, 2.0):
        e = lim.energy_limiting(Field(g, t * u.values), 1.3, P22)
        pred = t * t / 2 * ne.a_quad - t ** (2 * 2.2) / (2 * 2.2) * ne.b_nonlocal
        assert e == pytest.approx(pred, rel=1e-10)


def test_nehari_closed_forms():
    ne = lim.nehari_from_AB(2.0, 1.0, 2.0)
    assert ne.t_star == pytest.approx(math.sqrt(2))
    assert ne.value == pytest.approx(1.0)
    for p in (1.7, 2.0, 2.6):
        assert lim.nehari_from_AB(3.3, 3.3, p).t_star == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lim.nehari_from_AB(1.0, 0.0, 2.0)


def test_nehari_against_golden_section(rng):
    g = Grid(2, 64, 6.0)
    u = smooth_field(g, rng)
    ne = lim.nehari_scale(u, 1.0, P22)
    f = lambda t: lim.energy_from_AB(t * t * ne.a_quad, t ** 4.4 * ne.b_nonlocal, 2.2)
    t, val = lim.golden_section_max(f, 0.0, 4 * ne.t_star)
    assert val == pytest.approx(ne.value, rel=1e-8)
    # and along the actual ray of fields
    t2, val2 = lim.golden_section_max(lambda s: lim.energy_limiting(Field(g, s * u.values), 1.0, P22),
                                      0.0, 4 * ne.t_star, tol=1e-10)
    assert val2 == pytest.approx(ne.value, rel=1e-8)


def test_gradient_finite_differences(rng):
    g = Grid(2, 64, 6.0)
    u = smooth_field(g, rng)
    E = lambda v: lim.energy_limiting(Field(g, v), 1.0, P22)
    G = lim.grad_limiting(u, 1.0, P22)
    dirs = [sp.random_tapered_field(g, rng).values for _ in range(3)]
    orders = fd_orders(E, lambda phi: G.inner(phi), u.values, dirs)
    assert min(orders) >= 1.9


def test_ground_state_converges(ground_state_2d):
    params, st = ground_state_2d
    assert st.status == "converged" and st.grad_norm <= 1e-6
    u = st.field
    g = lim.grad_limiting(u, 1.0, params)
    # Nehari identity <grad, u> = 0 relative to the quadratic part
    assert abs(g.inner(u)) <= 1e-6 * st.nehari.a_quad
    assert st.energy == pytest.approx(lim.nehari_scale(u, 1.0, params).value, rel=1e-12)
    assert np.all(u.values >= 0)


def test_ground_state_tail(ground_state_2d):
    _, st = ground_state_2d
    assert abs(st.tail.exponent / -3.0 - 1) <= 0.10


def test_ground_state_single_peak(ground_state_2d):
    _, st = ground_state_2d
    v = st.field.values
    assert np.unravel_index(np.argmax(v), v.shape) == st.field.grid.origin_index()
    i0 = st.field.grid.origin_index()[0]
    for line in (v[i0, i0:], v[i0:, i0], v[i0, i0::-1], v[i0::-1, i0]):
        assert np.all(np.diff(line) <= 1e-12)


def test_energy_two_ways(ground_state_2d):
    params, st = ground_state_2d
    u = st.field
    ne = lim.nehari_scale(u, 1.0, params)
    g = lim.grad_limiting(u, 1.0, params)
    alt = 0.5 * g.inner(u) + (0.5 - 0.5 / params.p) * ne.b_nonlocal
    assert alt == pytest.approx(st.energy, rel=1e-6)


def test_initialization_robust(ground_state_2d):
    params, st = ground_state_2d
    for w in (0.5, 2.0):
        other = lim.ground_state_solve(1.0, params, config=lim.SolverConfig(eta0=0.5, init_width=w))
        assert other.energy == pytest.approx(st.energy, rel=1e-4)


def test_nonconvergence_reported():
    cfg = lim.SolverConfig(eta0=0.5, max_iter=3)
    with pytest.raises(lim.NonConvergence) as ei:
        lim.ground_state_solve(1.0, P2, grid=Grid(2, 64, 10.0), config=cfg)
    assert ei.value.state is not None and ei.value.state.history
    st = lim.ground_state_solve(1.0, P2, grid=Grid(2, 64, 10.0), config=cfg, strict=False)
    assert st.status == "max_iter"


def test_zero_start_collapse():
    g = Grid(2, 32, 5.0)
    with pytest.raises(lim.ZeroCollapse):
        lim.ground_state_solve(1.0, P2, grid=g, u0=Field(g, np.zeros(g.shape)))


def test_scaling_exponent_value():
    assert lim.scaling_exponent(P2) == pytest.approx(1.0)


def test_scaling_law():
    rep = lim.scaling_law_check([0.5, 1.0, 2.0], P2, config=lim.SolverConfig(eta0=0.5))
    i1, i2 = rep.lambdas.index(1.0), rep.lambdas.index(2.0)
    assert rep.ratios[i1] == 1.0
    assert rep.ratios[i2] == pytest.approx(2.0, rel=0.02)
    assert rep.increasing
    assert all(r < 1e-5 for r in rep.rescale_residuals)
    assert rep.ok


def test_rescaled_state_grid():
    g = Grid(2, 64, 8.0)
    u = Field(g, np.ones(g.shape))
    v = lim.rescale_ground_state(u, 4.0, P2)
    assert v.grid.half_width == pytest.approx(8.0 / 4)
    assert v.values[0, 0] == pytest.approx(4.0 ** (2 / 2))
