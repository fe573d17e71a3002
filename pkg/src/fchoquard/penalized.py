"""Penalized semiclassical problem

    eps^{2s} (-Delta)^s u + V u = (p / eps^alpha) (I_alpha * G_eps(x, u)) g_eps(x, u)

with the truncated nonlinearity g_eps = t_+^{p-1} on Lambda and
min(t_+^{p-1}, P_eps) off Lambda, P_eps = eps^theta |x - c|^{-tau}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import spectral as sp
from .comparison import TailFit, fit_tail_exponent
from .limiting import (NonConvergence, SolverConfig, ZeroCollapse, golden_section_max,
                       ground_state_solve)
from .regime import PenalizationParams, ProblemParams, check_chain
from .spectral import Field, Grid

FAMILIES = ("compact_support", "algebraic", "bounded_positive")
RESCALE_BELOW = 0.02


def _cutoff(r, r1, r2):
    """C-infinity transition: 1 for r <= r1, 0 for r >= r2."""
    t = np.clip((np.asarray(r, dtype=float) - r1) / (r2 - r1), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1, np.exp(-1 / np.maximum(1 - t, 1e-300)), 0.0)
    return b / (a + b)


# ---------------------------------------------------------------- potentials

@dataclass(frozen=True)
class PotentialSpec:
    """V = core near Lambda, blended into the family's far behaviour.

    core(x) = v0 + curvature |x-a|^2 + skew (x_1 - a_1)^3 has a strict minimum
    v0 at a = min_point.  The blend runs over core_radius <= |x-c| <= outer_radius:
    to 0 (compact_support), to far_value (bounded_positive) or to
    far_value (1+core_radius^omega)/(1+|x-c|^omega) (algebraic).  The default
    far_value v0 + curvature core_radius^2 avoids a dip of V outside Lambda.
    """
    family: str = "compact_support"
    v0: float = 1.0
    lambda_center: tuple = (0.0, 0.0)
    lambda_radius: float = 0.6
    min_point: tuple = (0.1, 0.0)
    curvature: float = 2.0
    skew: float = 1.0
    core_radius: float = 0.75
    outer_radius: float = 1.0
    omega: float | None = None
    far_value: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")
        c = np.asarray(self.lambda_center, float)
        a = np.asarray(self.min_point, float)
        if c.shape != a.shape or c.ndim != 1:
            raise ValueError("lambda_center and min_point need the same dimension")
        off = float(np.linalg.norm(a - c))
        if not off < self.lambda_radius:
            raise ValueError("min_point must lie strictly inside Lambda")
        if not self.lambda_radius < self.core_radius < self.outer_radius:
            raise ValueError("need lambda_radius < core_radius < outer_radius")
        if not self.curvature > 0:
            raise ValueError("curvature must be positive")
        # keeps core >= v0 with equality only at a, on the whole blend region
        if abs(self.skew) * (off + self.outer_radius) >= self.curvature:
            raise ValueError("skew too large for a strict minimum")
        if self.family == "algebraic":
            if self.omega is None or not self.omega > 0:
                raise ValueError("algebraic family needs omega > 0")
        elif self.omega is not None:
            raise ValueError("omega only applies to the algebraic family")
        if self.far_value is None:
            object.__setattr__(self, "far_value", self.v0 + self.curvature * self.core_radius ** 2)
        if self.family != "compact_support" and not self.far_value > 0:
            raise ValueError("far_value must be positive")

    @property
    def dim(self):
        return len(self.lambda_center)

    def core(self, pts):
        d = np.asarray(pts, float) - np.asarray(self.min_point, float)
        return self.v0 + self.curvature * np.sum(d * d, axis=-1) + self.skew * d[..., 0] ** 3

    def evaluate(self, pts):
        pts = np.asarray(pts, float)
        r = np.linalg.norm(pts - np.asarray(self.lambda_center, float), axis=-1)
        w = _cutoff(r, self.core_radius, self.outer_radius)
        inner = np.where(w > 0, self.core(pts), 0.0)
        if self.family == "compact_support":
            far = 0.0
        elif self.family == "bounded_positive":
            far = self.far_value
        else:
            om = self.omega
            far = self.far_value * (1 + self.core_radius ** om) / (1 + r ** om)
        return w * inner + (1 - w) * far

    def on_grid(self, grid: Grid, frame_map=None):
        x = grid.coords()
        pts = np.stack(x, axis=-1)
        if frame_map is not None:
            pts = frame_map(pts)
        return self.evaluate(pts)

    def boundary_min(self, samples=4096):
        pts = _sphere_points(self.dim, samples) * self.lambda_radius + np.asarray(self.lambda_center)
        return float(np.min(self.evaluate(pts)))

    @property
    def barrier(self):
        return self.boundary_min() - self.v0

    def check_assumption(self, grid: Grid) -> dict:
        """Sampled check of the local-minimum assumption and of the family envelope."""
        V = self.on_grid(grid)
        r = grid.radius(self.lambda_center)
        inside = r <= self.lambda_radius
        vin = V[inside]
        idx = np.unravel_index(np.argmin(np.where(inside, V, np.inf)), grid.shape)
        xmin = np.array([ax[i] for ax, i in zip([grid.axis()] * grid.dim, idx)])
        strict = bool(np.linalg.norm(xmin - np.asarray(self.lambda_center)) < self.lambda_radius)
        bmin = self.boundary_min()
        out = dict(nonnegative=bool(np.all(V >= 0)), inf_lambda=float(vin.min()),
                   inf_interior=strict, boundary_min=bmin,
                   ok=bool(np.all(V >= 0) and strict and bmin > self.v0 and vin.min() >= self.v0 - 1e-12))
        if self.family == "algebraic":
            env = V * (1 + r ** self.omega)
            out["envelope_c"], out["envelope_C"] = float(env.min()), float(env.max())
            out["ok"] = out["ok"] and out["envelope_c"] > 0
        return out


def _sphere_points(N, m):
    if N == 1:
        return np.array([[-1.0], [1.0]])
    if N == 2:
        t = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    # Fibonacci sphere
    k = np.arange(m) + 0.5
    z = 1 - 2 * k / m
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


# ---------------------------------------------------------------- penalization

@dataclass(frozen=True)
class PenalizationSpec:
    params: PenalizationParams
    lambda_center: tuple = (0.0, 0.0)
    lambda_radius: float = 0.6

    @classmethod
    def for_potential(cls, pen: PenalizationParams, potential: PotentialSpec):
        return cls(pen, tuple(potential.lambda_center), potential.lambda_radius)

    def inside(self, pts):
        d = np.asarray(pts, float) - np.asarray(self.lambda_center, float)
        return np.linalg.norm(d, axis=-1) <= self.lambda_radius

    def field(self, pts, eps):
        """P_eps at the points (last axis = coordinates); zero on Lambda."""
        r = np.linalg.norm(np.asarray(pts, float) - np.asarray(self.lambda_center, float), axis=-1)
        with np.errstate(divide="ignore"):
            P = eps ** self.params.theta * r ** (-self.params.tau)
        return np.where(r <= self.lambda_radius, 0.0, P)

    def sup_norm(self, eps):
        return eps ** self.params.theta * self.lambda_radius ** (-self.params.tau)


def _g(t, inside, P, p):
    tp = np.maximum(t, 0.0) ** (p - 1)
    return np.where(inside, tp, np.minimum(tp, P))


def _G(t, inside, P, p):
    t = np.maximum(t, 0.0)
    full = t ** p / p
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = P ** (1 / (p - 1))
        cut = P ** (p / (p - 1)) / p + P * (t - tc)
    return np.where(inside | (t <= tc), full, cut)


def g_eps(x, t, spec: PenalizationSpec, eps, params: ProblemParams):
    x = np.asarray(x, float)
    return _g(np.asarray(t, float), spec.inside(x), spec.field(x, eps), params.p)


def G_eps(x, t, spec: PenalizationSpec, eps, params: ProblemParams):
    x = np.asarray(x, float)
    return _G(np.asarray(t, float), spec.inside(x), spec.field(x, eps), params.p)


# ---------------------------------------------------------------- the functional

class PenalizedProblem:
    """J_eps on a grid, in the physical frame or in y with x = a + eps y.

    Both frames use the same formulas with coefficients (c_op, c_nl) equal to
    (eps^{2s}, eps^{-alpha}) or (1, 1); the rescaled energy is multiplied by eps^N
    so that `energy` always returns the physical value J_eps(u).

    boundary="dirichlet" uses the spectral Dirichlet fractional Laplacian of the
    box (the torus has a zero mode, so there is no Hardy inequality on it and
    the penalization cannot control spread-out states); "periodic" uses the
    spectral operator of the torus.
    """

    def __init__(self, spec: PenalizationSpec, potential: PotentialSpec, eps, params: ProblemParams,
                 grid: Grid, frame="physical", boundary="periodic"):
        if boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {boundary!r}")
        self.boundary = boundary
        self.mask = sp.dirichlet_mask(grid) if boundary == "dirichlet" else np.ones(grid.shape, bool)
        if not eps > 0:
            raise ValueError("eps must be positive")
        if grid.dim != params.dim or potential.dim != params.dim:
            raise ValueError("dimension mismatch between grid, potential and params")
        self.spec, self.potential, self.eps, self.params, self.grid = spec, potential, eps, params, grid
        self.frame = frame
        pts = np.stack(grid.coords(), axis=-1)
        if frame == "physical":
            self.c_op, self.c_nl, self.escale = eps ** (2 * params.s), eps ** (-params.alpha), 1.0
            self.origin = np.zeros(params.dim)
            x = pts
        elif frame == "rescaled":
            self.c_op, self.c_nl, self.escale = 1.0, 1.0, eps ** params.dim
            self.origin = np.asarray(potential.min_point, float)
            x = self.origin + eps * pts
        else:
            raise ValueError(f"unknown frame {frame!r}")
        self.x = x
        self.V = potential.evaluate(x)
        self.inside = spec.inside(x)
        self.P = spec.field(x, eps)

    def apply_L(self, v):
        f = Field(self.grid, v)
        if self.boundary == "dirichlet":
            return sp.dirichlet_multiplier(f, self.params.s).values
        return sp.frlap_apply(f, self.params.s).values

    def precondition(self, r, shift):
        """(c_op (-Delta)^s + shift)^{-1} r."""
        g, s = self.grid, self.params.s
        if self.boundary == "dirichlet":
            inner = (slice(1, None),) * g.dim
            R = sfft.dstn(r[inner], type=1, norm="ortho", workers=sp._WORKERS)
            out = np.zeros(g.shape)
            out[inner] = sfft.idstn(R / (self.c_op * sp._dirichlet_symbol(g, s) + shift), type=1,
                                    norm="ortho", workers=sp._WORKERS)
            return out
        pre = 1.0 / (self.c_op * g.rwavenumber_norm() ** (2 * s) + shift)
        return sp.multiplier_apply(Field(g, r), lambda k: pre).values

    def parts(self, v, t=1.0):
        """(Lv, quadratic form of v, I*G(tv), G(tv), g(tv)); the quadratic form is unscaled by t."""
        g, p = self.grid, self.params.p
        dv = g.cell_volume
        Lv = self.apply_L(v)
        A = float((self.c_op * np.sum(v * Lv) + np.sum(self.V * v * v)) * dv)
        Gv = _G(t * v, self.inside, self.P, p)
        conv = sp.riesz_apply(Field(g, Gv), self.params.alpha).values
        return Lv, A, conv, Gv

    def energy_values(self, v):
        Lv, A, conv, Gv = self.parts(v)
        nl = float(np.sum(conv * Gv) * self.grid.cell_volume)
        return self.escale * (0.5 * A - 0.5 * self.c_nl * self.params.p * nl)

    def grad_values(self, v):
        Lv, A, conv, Gv = self.parts(v)
        gv = _g(v, self.inside, self.P, self.params.p)
        return (self.c_op * Lv + self.V * v - self.c_nl * self.params.p * conv * gv) * self.mask

    def untruncated_residual(self, v):
        p = self.params.p
        vp = np.maximum(v, 0.0) ** p
        Lv = self.apply_L(v)
        conv = sp.riesz_apply(Field(self.grid, vp), self.params.alpha).values
        r = self.c_op * Lv + self.V * v - self.c_nl * conv * np.maximum(v, 0.0) ** (p - 1)
        return r * self.mask

    def margins(self, v):
        """P_eps - u^{p-1} on the cells off Lambda."""
        off = ~self.inside
        return self.P[off] - np.maximum(v[off], 0.0) ** (self.params.p - 1)

    # ray t -> J(t v)
    def ray_value(self, v, t, A=None):
        if A is None:
            A = self.parts(v)[1]
        Gv = _G(t * v, self.inside, self.P, self.params.p)
        conv = sp.riesz_apply(Field(self.grid, Gv), self.params.alpha).values
        nl = float(np.sum(conv * Gv) * self.grid.cell_volume)
        return self.escale * (0.5 * t * t * A - 0.5 * self.c_nl * self.params.p * nl)

    def ray_max(self, v):
        """Maximize J along the ray through v; returns (t, value, fast)."""
        p = self.params.p
        dv = self.grid.cell_volume
        A = self.parts(v)[1]
        if not A > 0:
            raise ZeroCollapse("quadratic form vanished")
        vp = np.maximum(v, 0.0) ** p
        B = self.c_nl * float(np.sum(sp.riesz_apply(Field(self.grid, vp), self.params.alpha).values
                                     * vp) * dv)
        if not B > 0:
            raise ZeroCollapse("nonlocal term vanished")
        t = (A / B) ** (1 / (2 * p - 2))
        off = ~self.inside
        if np.all((t * np.maximum(v[off], 0)) ** (p - 1) <= self.P[off]):
            # truncation inactive on [0, t]: the homogeneous maximizer is exact
            val = self.escale * (0.5 - 0.5 / p) * A ** (p / (p - 1)) * B ** (-1 / (p - 1))
            return t, val, True
        T0 = max(2 * t, 1.0)
        while self.ray_value(v, T0, A) >= 0:
            T0 *= 2
            if T0 > 1e12:
                raise NonConvergence("ray energy stays nonnegative")
        tt, val = golden_section_max(lambda s: self.ray_value(v, s, A), 0.0, T0, tol=1e-9)
        return tt, val, False


def J_eps_energy(u: Field, spec, potential, eps, params, boundary="periodic") -> float:
    return PenalizedProblem(spec, potential, eps, params, u.grid, boundary=boundary).energy_values(u.values)


def J_eps_grad(u: Field, spec, potential, eps, params, boundary="periodic") -> Field:
    prob = PenalizedProblem(spec, potential, eps, params, u.grid, boundary=boundary)
    return Field(u.grid, prob.grad_values(u.values))


# ---------------------------------------------------------------- smallness condition

@dataclass
class P2Report:
    eps: float
    ratios: list
    max_ratio: float
    kappa: float
    ok: bool
    violations: list


def p2_ratio(u: Field, spec: PenalizationSpec, potential: PotentialSpec | None, eps, params) -> float:
    """(p/eps^alpha) <I_alpha*(P u), P u> / (eps^{2s}[u]^2 + int V u^2)."""
    g = u.grid
    pts = np.stack(g.coords(), axis=-1)
    Pu = spec.field(pts, eps) * u.values
    num = params.p * eps ** (-params.alpha) * Field(g, Pu).inner(sp.riesz_apply(Field(g, Pu), params.alpha))
    den = eps ** (2 * params.s) * sp.seminorm_hs(u, params.s)
    if potential is not None:
        den += float(np.sum(potential.evaluate(pts) * u.values ** 2) * g.cell_volume)
    return float(num / den)


def p2_trial_fields(grid: Grid, rng, count=20, inner=None, outer=0.9, kmax=None):
    """Random band-limited fields supported in an annulus around the origin.

    With inner beyond the support of V the potential term drops out and the
    ratio is governed by the Hardy-type bound alone.
    """
    L = grid.half_width
    r = grid.radius()
    inner = 0.0 if inner is None else inner
    w = _cutoff(r, outer * L - 0.1 * L, outer * L)
    if inner > 0:
        w = w * (1.0 - _cutoff(r, inner, inner + 0.1 * L))
    out = []
    for _ in range(count):
        out.append(sp.random_tapered_field(grid, rng, kmax=kmax, window=w))
    return out


def p2_condition_check(spec, potential, eps, params, trials) -> P2Report:
    ratios = [p2_ratio(u, spec, potential, eps, params) for u in trials]
    kap = spec.params.kappa
    bad = [(i, r) for i, r in enumerate(ratios) if not r <= kap]
    return P2Report(float(eps), ratios, float(max(ratios)), kap, not bad, bad)


def p2_slope(spec, potential, eps_ladder, params, trials):
    """Least-squares log-log slope of the maximal trial ratio over the ladder."""
    eps = np.asarray(eps_ladder, float)
    mx = np.array([max(p2_ratio(u, spec, potential, e, params) for u in trials) for e in eps])
    k = np.polyfit(np.log(eps), np.log(mx), 1)[0]
    return float(k), mx


# ---------------------------------------------------------------- solver

@dataclass
class PenalizedState:
    field: Field
    eps: float
    energy: float
    grad_norm: float
    max_point: tuple
    recovery_ok: bool
    margins: np.ndarray = field(repr=False)
    global_max_point: tuple = ()
    frame: str = "physical"
    residual_untruncated: float = math.nan
    iterations: int = 0
    status: str = "converged"
    limit_energy: float = math.nan
    limit_status: str = ""
    fast_rays: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def min_margin(self):
        return float(self.margins.min()) if self.margins.size else math.inf

    def record(self):
        return dict(eps=self.eps, energy=self.energy, grad_norm=self.grad_norm,
                    max_point=list(self.max_point), global_max_point=list(self.global_max_point),
                    recovery_ok=self.recovery_ok, min_margin=self.min_margin, frame=self.frame,
                    residual_untruncated=self.residual_untruncated, iterations=self.iterations,
                    status=self.status, limit_energy=self.limit_energy,
                    limit_status=self.limit_status)


def default_grid(dim: int) -> Grid:
    if dim == 1:
        return Grid(1, 4096, 2.0)
    if dim == 2:
        return Grid(2, 512, 2.0)
    return Grid(3, 96, 2.0)


def default_boundary(potential: PotentialSpec) -> str:
    """Dirichlet box when V vanishes somewhere (no coercivity on the torus), else periodic."""
    return "dirichlet" if potential.family == "compact_support" else "periodic"


def _spectral_shift(values, shift_cells):
    """Periodic translation by a (possibly fractional) number of cells per axis."""
    n = values.shape
    F = sfft.fftn(values)
    phase = 1.0
    for ax, (m, sh) in enumerate(zip(n, shift_cells)):
        k = sfft.fftfreq(m)
        shape = [1] * len(n)
        shape[ax] = m
        phase = phase * np.exp(-2j * np.pi * k * sh).reshape(shape)
    return np.real(sfft.ifftn(F * phase))


def _check_solve(spec, params, potential):
    if not check_chain(spec.params, params):
        raise ValueError("penalization parameters are not admissible")
    if not params.construction_ok:
        raise ValueError("alpha must exceed (N-4s)_+")
    N, s, a = params.dim, params.s, params.alpha
    if not 2 <= params.p < (N + a) / (N - 2 * s):
        raise ValueError("p must lie in [2, (N+alpha)/(N-2s))")
    if tuple(spec.lambda_center) != tuple(potential.lambda_center) or spec.lambda_radius != potential.lambda_radius:
        raise ValueError("penalization and potential must share Lambda")


def limit_ground_state(potential, params, grid: Grid, eps, frame, config=None):
    """Limiting ground state for lam = V_0 on the y-grid matched to `grid`."""
    if frame == "physical":
        gy = Grid(grid.dim, grid.points_per_axis, grid.half_width / eps)
    else:
        gy = grid
    cfg = SolverConfig(tol=1e-7, eta0=0.5, max_iter=2000)
    if config is not None:
        cfg = SolverConfig(tol=min(config.tol, 1e-7), eta0=config.eta0, max_iter=min(config.max_iter, 2000))
    return ground_state_solve(potential.v0, params, gy, cfg, strict=False)


def solve_penalized(spec: PenalizationSpec, potential: PotentialSpec, eps, params: ProblemParams,
                    config: SolverConfig | None = None, grid: Grid | None = None, frame=None,
                    strict=True, ground=None, boundary="auto") -> PenalizedState:
    """Mountain-pass solve: ray maximization plus preconditioned projected descent.

    The start is psi((x-a)/eps) with psi the limiting ground state for lam = V_0.
    """
    _check_solve(spec, params, potential)
    cfg = config or SolverConfig(tol=1e-6, eta0=0.5, method="cg")
    frame = frame or ("rescaled" if eps < RESCALE_BELOW else "physical")
    if grid is None:
        grid = default_grid(params.dim) if frame == "physical" else Grid(
            params.dim, 512 if params.dim == 2 else 64, 20.0)
    if boundary == "auto":
        boundary = default_boundary(potential)
    prob = PenalizedProblem(spec, potential, eps, params, grid, frame, boundary)
    gs = ground or limit_ground_state(potential, params, grid, eps, frame, cfg)
    psi = gs.field.values
    if frame == "physical":
        shift = np.asarray(potential.min_point, float) / grid.spacing
        psi = np.maximum(_spectral_shift(psi, shift), 0.0)
    v = psi * prob.mask

    t, energy, fast = prob.ray_max(v)
    v = t * v
    nfast = int(fast)
    eta = cfg.eta0
    status, gnorm, it = "max_iter", math.inf, 0
    history = []
    cg = cfg.method == "cg"
    dv = grid.cell_volume

    def step(v, d, eta):
        trial = np.maximum(v - eta * d, 0.0) * prob.mask
        try:
            tt, val, fast = prob.ray_max(trial)
        except ZeroCollapse:
            return None, math.inf, False, 0.0
        return tt * trial, val, fast, tt

    d_prev = z_prev = gr_prev = None
    gr = prob.grad_values(v)
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.max(np.abs(gr)) / np.max(np.abs(v)))
        if it % cfg.record_every == 1 or gnorm <= cfg.tol:
            history.append((it, energy, gnorm, eta))
        if gnorm <= cfg.tol:
            status = "converged"
            break
        z = prob.precondition(gr, potential.v0)
        d = z
        g_next = None
        if cg:
            if d_prev is not None:
                # Polak-Ribiere (nonnegative) on top of a secant line search
                beta = max(0.0, float(np.sum(gr * (z - z_prev)) / np.sum(gr_prev * z_prev)))
                d = z + beta * d_prev
                if not np.sum(gr * d) > 0:
                    d = z
            s0 = -float(np.sum(gr * d)) * dv
            w1, e1, f1, t1 = step(v, d, eta)
            if w1 is not None and e1 <= energy + 1e-13 * abs(energy):
                g1 = prob.grad_values(w1)
                s1 = -t1 * float(np.sum(g1 * d)) * dv
                eta2 = eta * s0 / (s0 - s1) if s0 - s1 < 0 else 4 * eta
                eta2 = min(max(eta2, 0.1 * eta), 10 * eta)
                w2, e2, f2, _ = step(v, d, eta2)
                if w2 is not None and e2 < e1:
                    v, energy, fast, eta = w2, e2, f2, eta2
                else:
                    v, energy, fast, g_next = w1, e1, f1, g1
                    eta = max(min(eta2, eta), 1e-12) if s1 > 0 else eta
                nfast += int(fast)
                d_prev, z_prev, gr_prev = d, z, gr
                gr = g_next if g_next is not None else prob.grad_values(v)
                continue
            d = z  # fall back to a damped gradient step
        while True:
            w, val, fast, _ = step(v, d, eta)
            if val <= energy + 1e-13 * abs(energy):
                break
            if eta < 1e-12:
                if w is None:
                    raise ZeroCollapse("projection removed the whole field")
                break
            eta *= 0.5
        v, energy = w, val
        d_prev, z_prev, gr_prev = d, z, gr
        nfast += int(fast)
        eta = min(eta * 1.25, cfg.eta_max) if not cg else eta
        if not np.any(v > 0):
            raise ZeroCollapse("field collapsed to zero")
        gr = prob.grad_values(v)

    fld = Field(grid, v)
    marg = prob.margins(v)
    inside = prob.inside
    imax = np.unravel_index(np.argmax(np.where(inside, v, -np.inf)), grid.shape)
    gmax = np.unravel_index(np.argmax(v), grid.shape)
    res = prob.untruncated_residual(v)
    state = PenalizedState(
        fld, float(eps), float(energy), gnorm, tuple(float(c) for c in prob.x[imax]),
        bool(marg.size == 0 or marg.min() >= 0), marg, tuple(float(c) for c in prob.x[gmax]),
        frame, float(np.max(np.abs(res)) / np.max(np.abs(v))), it, status,
        float(gs.energy), gs.status, nfast, history)
    if status != "converged" and strict:
        raise NonConvergence(f"penalized solve stalled after {it} iterations (residual {gnorm:.3g})",
                             state)
    return state


# ---------------------------------------------------------------- diagnostics

def radial_samples(state: PenalizedState, center=None, bins=None):
    """Bin-averaged |x - center| profile of the state (center defaults to x_eps)."""
    g = state.field.grid
    c = np.asarray(center if center is not None else state.max_point, float)
    x = np.stack(g.coords(), axis=-1)
    if state.frame == "rescaled":
        raise NotImplementedError("radial samples are taken on physical grids")
    r = np.linalg.norm(x - c, axis=-1).ravel()
    v = state.field.values.ravel()
    h = g.spacing
    edges = np.arange(0.0, g.half_width, h) if bins is None else np.asarray(bins)
    idx = np.digitize(r, edges)
    cnt = np.bincount(idx, minlength=edges.size + 1)
    tot = np.bincount(idx, weights=v, minlength=edges.size + 1)
    rr = np.bincount(idx, weights=r, minlength=edges.size + 1)
    ok = cnt > 0
    return rr[ok] / cnt[ok], tot[ok] / cnt[ok]


def envelope_fit(state: PenalizedState, potential: PotentialSpec, window=None) -> TailFit:
    """Tail exponent of the state on a window fully outside Lambda."""
    g = state.field.grid
    c = np.asarray(state.max_point)
    if window is None:
        lo = potential.lambda_radius + float(np.linalg.norm(c - np.asarray(potential.lambda_center)))
        hi = 0.9 * (g.half_width - float(np.max(np.abs(c))))
        window = (lo, hi)
    r, v = radial_samples(state)
    m = (r >= window[0]) & (r <= window[1])
    return fit_tail_exponent((r[m], v[m]), window)


def predicted_gamma(params: ProblemParams, path: str) -> float:
    N, s = params.dim, params.s
    if path == "Q1":
        return N - 2 * s
    return N + 2 * s - params.omega


@dataclass
class ConcentrationReport:
    eps_ladder: list
    v_at_max: list
    energy_ratio: list
    limit_target: float
    envelope_ok: bool
    max_points: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    gamma_predicted: float = math.nan
    boundary_distance: list = field(default_factory=list)
    monotone: bool = True
    final_gap_ok: bool = True
    states: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return dict(eps_ladder=self.eps_ladder, v_at_max=self.v_at_max, energy_ratio=self.energy_ratio,
                    limit_target=self.limit_target, envelope_ok=self.envelope_ok,
                    max_points=self.max_points, gammas=self.gammas, gamma_predicted=self.gamma_predicted,
                    boundary_distance=self.boundary_distance, monotone=self.monotone,
                    final_gap_ok=self.final_gap_ok,
                    recovery=[st.recovery_ok for st in self.states])


def concentration_scan(spec, potential, params, eps_ladder, config=None, grid=None,
                       gamma_tol=0.15) -> ConcentrationReport:
    eps = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps ladder must be strictly decreasing")
    states = [solve_penalized(spec, potential, e, params, config, grid) for e in eps]
    N = params.dim
    vmax = [float(potential.evaluate(np.asarray(st.max_point))) for st in states]
    ratio = [st.energy / e ** N for st, e in zip(states, eps)]
    c = np.asarray(potential.lambda_center)
    dist = [potential.lambda_radius - float(np.linalg.norm(np.asarray(st.max_point) - c)) for st in states]
    gam_pred = predicted_gamma(params, spec.params.path)
    gammas = []
    for st in states:
        try:
            gammas.append(-envelope_fit(st, potential).exponent if st.frame == "physical" else math.nan)
        except (ValueError, NotImplementedError):
            gammas.append(math.nan)
    g_last = gammas[-1]
    env_ok = bool(np.isfinite(g_last) and abs(g_last - gam_pred) <= gamma_tol * gam_pred)
    mono = all(b <= a + 1e-12 for a, b in zip(vmax, vmax[1:]))
    gap_ok = vmax[-1] - potential.v0 <= 0.1 * potential.barrier
    return ConcentrationReport(eps, vmax, ratio, states[-1].limit_energy, env_ok,
                               [list(st.max_point) for st in states], gammas, gam_pred, dist,
                               mono, bool(gap_ok), states)


@dataclass
class LowerEnvelopeReport:
    exponent: float
    window: tuple
    in_band: bool
    violation: bool
    fit: TailFit


def lower_envelope_check(state: PenalizedState, potential: PotentialSpec, params: ProblemParams,
                         window=None, tol=0.3) -> LowerEnvelopeReport:
    """Checks that the state does not decay faster than |x|^{-N}."""
    if potential.family != "algebraic" or abs(potential.omega - 2 * params.s) > 1e-12:
        raise ValueError("lower envelope check needs the algebraic family with omega = 2s")
    N, s, a = params.dim, params.s, params.alpha
    if not params.p > 1 + (a + 2 * s) / N:
        raise ValueError("need p > 1 + (alpha+2s)/N")
    fit = envelope_fit(state, potential, window)
    k = fit.exponent
    return LowerEnvelopeReport(k, fit.window, bool(-N - tol <= k <= -N + tol), bool(k < -N - tol), fit)
