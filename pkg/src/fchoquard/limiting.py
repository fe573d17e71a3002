"""The autonomous limiting problem

    (-Delta)^s u + lam u = (I_alpha * |u|^p) |u|^{p-2} u

its energy, the closed-form Nehari ray, a ground-state solver and the energy
scaling law in lam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .comparison import TailFit, fit_tail_exponent
from .spectral import Field, Grid


class SolverError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class NonConvergence(SolverError):
    pass


class ZeroCollapse(SolverError):
    pass


@dataclass
class NehariResult:
    a_quad: float
    b_nonlocal: float
    t_star: float
    value: float


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 50000
    eta0: float = 0.1
    eta_max: float = 1.0
    precondition: bool = True
    init_width: float = 1.0
    record_every: int = 10
    method: str = "gradient"  # or "cg" (Polak-Ribiere, penalized solver only)


@dataclass
class LimitingState:
    field: Field
    lam: float
    energy: float
    grad_norm: float
    tail: TailFit | None
    status: str = "converged"
    iterations: int = 0
    history: list = field(default_factory=list)
    nehari: NehariResult | None = None

    def record(self):
        return dict(
            lam=self.lam, energy=self.energy, grad_norm=self.grad_norm,
            tail_exponent=None if self.tail is None else self.tail.exponent,
            iterations=self.iterations, status=self.status,
            grid=dict(dim=self.field.grid.dim, n=self.field.grid.points_per_axis,
                      L=self.field.grid.half_width),
        )


def default_grid(dim: int) -> Grid:
    if dim == 1:
        return Grid(1, 2 ** 14, 200.0)
    if dim == 2:
        return Grid(2, 256, 20.0)
    return Grid(3, 64, 10.0)


def _check(lam, params):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def _parts(u: Field, lam, params):
    """Pieces shared by energy and gradient: frlap u, I*|u|^p, A, B."""
    dv = u.grid.cell_volume
    v = u.values
    Lu = sp.frlap_apply(u, params.s).values
    up = np.abs(v) ** params.p
    conv = sp.riesz_apply(Field(u.grid, up), params.alpha).values
    A = float(np.sum(v * Lu) * dv + lam * np.sum(v * v) * dv)
    B = float(np.sum(conv * up) * dv)
    return Lu, conv, A, B


def energy_from_AB(A, B, p):
    return 0.5 * A - B / (2 * p)


def energy_limiting(u: Field, lam, params) -> float:
    _check(lam, params)
    _, _, A, B = _parts(u, lam, params)
    return energy_from_AB(A, B, params.p)


def grad_limiting(u: Field, lam, params) -> Field:
    _check(lam, params)
    Lu, conv, _, _ = _parts(u, lam, params)
    v = u.values
    return Field(u.grid, Lu + lam * v - conv * np.abs(v) ** (params.p - 2) * v)


def nehari_from_AB(A, B, p) -> NehariResult:
    if not B > 0:
        raise ValueError("nonlocal term vanishes; the ray has no maximum")
    t = (A / B) ** (1 / (2 * p - 2))
    val = (0.5 - 0.5 / p) * A ** (p / (p - 1)) * B ** (-1 / (p - 1))
    return NehariResult(A, B, t, val)


def nehari_scale(u: Field, lam, params) -> NehariResult:
    _check(lam, params)
    _, _, A, B = _parts(u, lam, params)
    return nehari_from_AB(A, B, params.p)


def golden_section_max(f, a, b, tol=1e-12, max_iter=500):
    """Maximizer of a unimodal f on [a, b]."""
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def gaussian(grid: Grid, width=1.0, center=None):
    r = grid.radius(center)
    return Field(grid, np.exp(-r ** 2 / (2 * width ** 2)))


def axis_profile(u: Field, center_index=None):
    """Samples along the positive first axis from the given cell (default: origin)."""
    g = u.grid
    idx = list(center_index or g.origin_index())
    i0 = idx[0]
    idx[0] = slice(i0, None)
    vals = u.values[tuple(idx)]
    r = g.spacing * np.arange(vals.size)
    return r, vals


def tail_fit(u: Field, window=None):
    g = u.grid
    window = window or (g.half_width / 4, g.half_width / 2)
    r, v = axis_profile(u)
    m = (r >= window[0]) & (r <= window[1])
    return fit_tail_exponent((r[m], v[m]), window)


def ground_state_solve(lam, params, grid: Grid | None = None, config: SolverConfig | None = None,
                       u0: Field | None = None, strict: bool = True) -> LimitingState:
    """Nehari-projected gradient flow with positive-part projection.

    Each step: u <- (u - eta P^{-1} grad)_+ followed by rescaling to t* u, where
    P = (-Delta)^s + lam when preconditioning is on (identity otherwise). The step
    is halved whenever the ray maximum (the energy after rescaling) increases.
    """
    _check(lam, params)
    cfg = config or SolverConfig()
    grid = grid or default_grid(params.dim)
    p, s = params.p, params.s
    u = u0.copy() if u0 is not None else gaussian(grid, cfg.init_width)
    if np.any(u.values < 0):
        u = Field(grid, np.maximum(u.values, 0.0))
    if cfg.precondition:
        pre = 1.0 / (grid.rwavenumber_norm() ** (2 * s) + lam)
    dv = grid.cell_volume

    def evaluate(v):
        f = Field(grid, v)
        Lu, conv, A, B = _parts(f, lam, params)
        if not B > 0:
            raise ZeroCollapse("field collapsed to zero", None)
        ne = nehari_from_AB(A, B, p)
        t = ne.t_star
        # rescale all pieces to the Nehari point t * v
        return t * v, t * Lu, t ** p * conv, ne

    v, Lu, conv, ne = evaluate(u.values)
    energy = ne.value
    eta = cfg.eta0
    history = []
    status = "max_iter"
    gnorm = math.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gr = Lu + lam * v - conv * np.abs(v) ** (p - 2) * v
        gnorm = float(np.max(np.abs(gr)) / np.max(np.abs(v)))
        if it % cfg.record_every == 1 or gnorm <= cfg.tol:
            history.append((it, energy, gnorm, eta))
        if gnorm <= cfg.tol:
            status = "converged"
            break
        d = sp.multiplier_apply(Field(grid, gr), lambda k: pre).values if cfg.precondition else gr
        while True:
            trial = np.maximum(v - eta * d, 0.0)
            if not np.any(trial > 0):
                eta *= 0.5
                if eta < 1e-14:
                    raise ZeroCollapse("projection removed the whole field")
                continue
            try:
                tv, tLu, tconv, tne = evaluate(trial)
            except ZeroCollapse:
                eta *= 0.5
                continue
            if tne.value <= energy * (1 + 1e-13) or eta < 1e-12:
                break
            eta *= 0.5
        v, Lu, conv, ne, energy = tv, tLu, tconv, tne, tne.value
        eta = min(eta * 1.25, cfg.eta_max)
        if not np.any(v > 0):
            raise ZeroCollapse("field collapsed to zero")

    fld = Field(grid, v)
    try:
        tail = tail_fit(fld)
    except ValueError:
        tail = None
    state = LimitingState(fld, float(lam), float(energy), gnorm, tail, status, it, history, ne)
    if status != "converged" and strict:
        raise NonConvergence(f"no convergence after {it} iterations (residual {gnorm:.3g})", state)
    return state


# ---------------------------------------------------------------- scaling law

def scaling_exponent(params) -> float:
    N, s, a, p = params.dim, params.s, params.alpha, params.p
    return (a + 2 * s) / (2 * s * (p - 1)) - (N - 2 * s) / (2 * s)


def rescale_ground_state(u: Field, lam, params) -> Field:
    """u_lam(x) = lam^{(alpha+2s)/(4s(p-1))} u(lam^{1/(2s)} x) on the matched grid."""
    s, a, p = params.s, params.alpha, params.p
    g = u.grid
    g2 = Grid(g.dim, g.points_per_axis, g.half_width / lam ** (1 / (2 * s)))
    return Field(g2, lam ** ((a + 2 * s) / (4 * s * (p - 1))) * u.values)


@dataclass
class ScalingReport:
    lambdas: list
    energies: list
    ratios: list
    predicted: list
    exponent: float
    max_rel_dev: float
    increasing: bool
    rescale_residuals: list
    ok: bool
    tol: float = 0.02
    states: list = field(default_factory=list, repr=False)


def scaling_law_check(lambda_list, params, grid=None, config=None, tol=0.02) -> ScalingReport:
    cfg = config or SolverConfig()
    lams = [float(x) for x in lambda_list]
    states = [ground_state_solve(l, params, grid, cfg) for l in lams]
    E = {l: st.energy for l, st in zip(lams, states)}
    if 1.0 in E:
        base, st1 = E[1.0], states[lams.index(1.0)]
    else:
        st1 = ground_state_solve(1.0, params, grid, cfg)
        base = st1.energy
    e = scaling_exponent(params)
    ratios = [E[l] / base for l in lams]
    pred = [l ** e for l in lams]
    dev = max(abs(r / q - 1) for r, q in zip(ratios, pred))
    order = np.argsort(lams)
    Es = np.array([E[lams[i]] for i in order])
    inc = bool(np.all(np.diff(Es) > 0))
    res = []
    for l in lams:
        ul = rescale_ground_state(st1.field, l, params)
        g = grad_limiting(ul, l, params)
        res.append(float(np.max(np.abs(g.values)) / np.max(np.abs(ul.values))))
    ok = dev <= tol and inc and all(r < 10 * cfg.tol for r in res)
    return ScalingReport(lams, [E[l] for l in lams], ratios, pred, e, dev, inc, res, ok, tol, states)
