"""Comparison profiles w_mu = (1 + r^2)^(-mu/2) and their asymptotics.

Sign and decay of (-Delta)^s w_mu in the five regimes, tail fitting, the
supersolution inequality outside the concentration region and the lower
bound for I_alpha * w_mu^p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import hyp2f1

from .spectral import RadialProfile, frlap_direct, sphere_area

REGIME_TOL = 1e-9


class AlgebraicProfile(RadialProfile):
    """w_mu(r) = (1 + r^2)^(-mu/2), declared tail r^(-mu)."""

    def __init__(self, mu: float):
        if not mu > 0:
            raise ValueError("mu must be positive")
        self.mu = float(mu)
        m = self.mu
        super().__init__(
            lambda r: (1.0 + r * r) ** (-m / 2), m, 1.0,
            d1=lambda r: -m * r * (1.0 + r * r) ** (-m / 2 - 1),
            d2=lambda r: (m * (m + 2) * r * r * (1.0 + r * r) ** (-m / 2 - 2)
                          - m * (1.0 + r * r) ** (-m / 2 - 1)),
        )

    @property
    def declared_tail(self):
        return -self.mu


@dataclass
class TailFit:
    exponent: float
    window: tuple
    residual: float
    sign: int
    constant: float = float("nan")
    n: int = 0

    def as_dict(self):
        return dict(exponent=self.exponent, window=list(self.window), residual=self.residual,
                    sign=self.sign, constant=self.constant, n=self.n)


def _samples(samples):
    a = np.asarray(samples, dtype=float)
    if a.ndim == 2 and a.shape[1] == 2:
        return a[:, 0], a[:, 1]
    r, v = samples
    return np.asarray(r, float), np.asarray(v, float)


def fit_tail_exponent(samples, window=None) -> TailFit:
    """Least-squares slope of log|v| against log r on the window."""
    r, v = _samples(samples)
    if window is not None:
        m = (r >= window[0]) & (r <= window[1])
        r, v = r[m], v[m]
    if r.size < 8:
        raise ValueError(f"need at least 8 radii in the window, got {r.size}")
    if np.any(v == 0) or not (np.all(v > 0) or np.all(v < 0)):
        raise ValueError("values change sign (or vanish) inside the window")
    x, y = np.log(r), np.log(np.abs(v))
    A = np.vstack([x, np.ones_like(x)]).T
    (k, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.max(np.abs(y - (k * x + c))))
    return TailFit(float(k), (float(r.min()), float(r.max())), res, int(np.sign(v[0])),
                   float(np.sign(v[0]) * np.exp(c)), int(r.size))


def fit_log_tail(samples, window=None, guess=None) -> tuple:
    """Fit v ~ r^k (a + b log r) with k free (variable projection).

    Returns (TailFit with exponent k, a, b).
    """
    r, v = _samples(samples)
    if window is not None:
        m = (r >= window[0]) & (r <= window[1])
        r, v = r[m], v[m]
    if r.size < 8:
        raise ValueError(f"need at least 8 radii in the window, got {r.size}")
    if not (np.all(v > 0) or np.all(v < 0)):
        raise ValueError("values change sign inside the window")
    L = np.log(r)
    A = np.vstack([np.ones_like(L), L]).T

    def resid(k):
        w = v * r ** (-k)
        coef, *_ = np.linalg.lstsq(A, w, rcond=None)
        return np.max(np.abs(A @ coef - w) / np.abs(w)), coef

    g = guess if guess is not None else fit_tail_exponent((r, v)).exponent
    # the objective is multimodal (a pure power with small b competes), scan first
    ks = np.linspace(g - 1.5, g + 1.5, 301)
    k0 = ks[int(np.argmin([resid(k)[0] for k in ks]))]
    sol = optimize.minimize_scalar(lambda k: resid(k)[0], bounds=(k0 - 0.01, k0 + 0.01),
                                   method="bounded", options={"xatol": 1e-12})
    k = float(sol.x)
    res, (a, b) = resid(k)
    return TailFit(k, (float(r.min()), float(r.max())), float(res), int(np.sign(v[0])),
                   float(b), int(r.size)), float(a), float(b)


def prop_tb_regime(mu, N, s, tol=REGIME_TOL):
    crit = N - 2 * s
    if abs(mu - crit) <= tol:
        return "bubble"
    if mu < crit:
        return "positive"
    if abs(mu - N) <= tol:
        return "negative_log"
    return "negative_power" if mu < N else "negative_fast"


def expected_exponent(mu, N, s):
    reg = prop_tb_regime(mu, N, s)
    if reg in ("positive", "negative_power"):
        return -(mu + 2 * s)
    return -(N + 2 * s)


@dataclass
class ProfileReport:
    mu: float
    regime: str
    sign: int
    expected_sign: int
    fit: TailFit | None
    expected_exponent: float
    ok: bool
    ratio_variation: float = float("nan")
    radii: list = field(default_factory=list)
    values: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def frlap_profile_values(mu, s, N, radii, tol=1e-5):
    prof = AlgebraicProfile(mu)
    vals, errs = [], []
    for r in radii:
        v, e = frlap_direct(prof, s, float(r), N, tol=tol)
        vals.append(v)
        errs.append(e)
    return np.array(vals), np.array(errs)


def verify_prop_tb(mu: float, params, radii=None, window=(20.0, 80.0), slope_tol=0.05,
                   ratio_tol=1e-3, n_radii=12) -> ProfileReport:
    """Evaluate (-Delta)^s w_mu on radii and check sign and decay for its regime."""
    N, s = params.dim, params.s
    if not mu > 0:
        raise ValueError("mu must be positive")
    if radii is None:
        radii = np.geomspace(window[0], window[1], n_radii)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 2):
        raise ValueError("radii must be at least 2")
    vals, errs = frlap_profile_values(mu, s, N, radii)
    reg = prop_tb_regime(mu, N, s)
    exp_sign = 1 if reg in ("positive", "bubble") else -1
    sign = int(np.sign(vals[0])) if np.all(np.sign(vals) == np.sign(vals[0])) else 0
    expo = expected_exponent(mu, N, s)
    rep = ProfileReport(mu, reg, sign, exp_sign, None, expo, False,
                        radii=radii.tolist(), values=vals.tolist(), errors=errs.tolist())
    if reg == "bubble":
        w = (1 + radii ** 2) ** (-mu / 2)
        ratio = vals / w ** ((N + 2 * s) / (N - 2 * s))
        rep.ratio_variation = float(np.max(ratio) / np.min(ratio) - 1)
        rep.ok = sign == exp_sign and rep.ratio_variation <= ratio_tol
        return rep
    win = (radii.min(), radii.max())
    if reg == "negative_log":
        rep.fit, a, b = fit_log_tail((radii, vals), win, guess=expo)
        ok_shape = b < 0
    else:
        rep.fit = fit_tail_exponent((radii, vals), win)
        ok_shape = True
    rep.ok = bool(sign == exp_sign and ok_shape and abs(rep.fit.exponent - expo) <= slope_tol)
    return rep


# ---------------------------------------------------------------- supersolution

@dataclass
class SupersolutionReport:
    ok: bool
    admissible: bool
    reduction_ok: bool
    min_margin: float
    violations: list
    radii: list
    lhs: list
    rhs: list
    margins: list
    lam: float
    case: str

    def rows(self):
        return list(zip(self.radii, self.lhs, self.rhs, self.margins))


def majorant_F(r, eps, pen, N, alpha):
    th, tau, mu = pen.theta, pen.tau, pen.mu
    d = th - tau
    return (eps ** (2 * d) * r ** (-(mu + 2 * tau - alpha))
            + (eps ** (2 * d) + eps ** d) * np.log(r + math.e) * r ** (-(N - alpha + tau)))


def bound_G(r, eps, pen, params):
    N, s, mu = params.dim, params.s, pen.mu
    if mu < N - 2 * s:
        return r ** (-(mu + 2 * s)), "case1"
    om = params.omega
    if om is None:
        raise ValueError("mu above N-2s needs a potential decay rate omega")
    if mu < N and abs(om - 2 * s) < 1e-12:
        return eps ** (-2 * s) * r ** (-(mu + 2 * s)), "case2"
    if N < mu < N + 2 * s - om:
        return eps ** (-om) * r ** (-(mu + om)), "case3"
    raise ValueError(f"mu={mu} does not match an admissible decay case")


def check_supersolution_wmu(pen, params, potential, eps: float, radii, lam=None,
                            direction=None) -> SupersolutionReport:
    """Two-sided evaluation of the supersolution inequality in the rescaled frame.

    left  = (-Delta)^s w_mu(y) + V(x0 + eps y) w_mu(y) / 2
    right = F^eps(y), the closed-form majorant (unit constants)
    Points y must map outside the concentration region. x0 is the potential's
    minimum point when a potential is given, else the origin.
    """
    N, s, alpha = params.dim, params.s, params.alpha
    radii = np.asarray(radii, dtype=float)
    d = pen.theta - pen.tau
    lam = eps ** d if lam is None else lam
    admissible = d > 0
    e = np.zeros(N)
    e[0] = 1.0
    if direction is not None:
        e = np.asarray(direction, float) / np.linalg.norm(direction)
    if potential is not None:
        x0 = np.asarray(potential.min_point, float)
        c, R = np.asarray(potential.lambda_center, float), potential.lambda_radius
        pts = x0[None, :] + eps * radii[:, None] * e[None, :]
        inside = np.linalg.norm(pts - c, axis=1) <= R
        if np.any(inside):
            raise ValueError(f"radii {radii[inside][:3]} lie inside the rescaled region")
        Vv = potential.evaluate(pts)
    else:
        Vv = np.zeros_like(radii)
    w = (1 + radii ** 2) ** (-pen.mu / 2)
    fl, _ = frlap_profile_values(pen.mu, s, N, radii)
    lhs = fl + 0.5 * Vv * w
    rhs = majorant_F(radii, eps, pen, N, alpha)
    G, case = bound_G(radii, eps, pen, params)
    reduction_ok = bool(admissible and np.all(rhs <= lam * G))
    margins = (lhs - rhs) / np.abs(lhs)
    viol = [float(r) for r, m in zip(radii, margins) if not m > 0]
    return SupersolutionReport(
        ok=bool(admissible and not viol), admissible=bool(admissible), reduction_ok=reduction_ok,
        min_margin=float(np.min(margins)), violations=viol, radii=radii.tolist(),
        lhs=lhs.tolist(), rhs=rhs.tolist(), margins=margins.tolist(), lam=float(lam), case=case)


# ---------------------------------------------------------------- Choquard term

def _angular_kernel(N, alpha, r, rho):
    """Integral of |x - rho w|^{alpha-N} over the unit sphere, |x| = r."""
    if N == 1:
        return abs(r - rho) ** (alpha - 1) + (r + rho) ** (alpha - 1)
    if N == 2:
        b = (N - alpha) / 2
        M, m = max(r, rho), min(r, rho)
        return 2 * math.pi * M ** (-2 * b) * hyp2f1(b, b, 1.0, (m / M) ** 2)
    if N == 3:
        if abs(alpha - 1) < 1e-12:
            return 2 * math.pi / (r * rho) * math.log((r + rho) / abs(r - rho))
        return (2 * math.pi / (r * rho) * ((r + rho) ** (alpha - 1) - abs(r - rho) ** (alpha - 1))
                / (alpha - 1))
    raise ValueError("dimension must be 1, 2 or 3")


def riesz_radial(f, N, alpha, r, decay, rel=1e-10):
    """(I_alpha * f)(r) for radial f(rho) ~ rho^(-decay), decay > alpha."""
    g = lambda rho: f(rho) * rho ** (N - 1) * _angular_kernel(N, alpha, r, rho)
    R = 1e4 * max(r, 1.0)
    bps = sorted({0.0, 1.0, r * 0.5, r, 2 * r, R} | {4.0 ** k for k in range(1, 40) if 4.0 ** k < R})
    tot = 0.0
    for a, b in zip(bps[:-1], bps[1:]):
        v, _ = integrate.quad(g, a, b, limit=200, epsabs=0.0, epsrel=rel)
        tot += v
    # beyond R: f ~ rho^-decay, kernel ~ |S| rho^(alpha-N)
    tot += sphere_area(N) * f(R) * R ** decay * R ** (alpha - decay) / (decay - alpha)
    return tot


@dataclass
class LowerBoundReport:
    ok: bool
    fit: TailFit
    expected_exponent: float
    radii: list
    values: list


def choquard_lower_bound_check(mu: float, params, radii, p=None, tol=0.05) -> LowerBoundReport:
    """Tail of I_alpha * w_mu^p against -min(N - alpha, mu p - alpha)."""
    N, alpha = params.dim, params.alpha
    p = params.p if p is None else p
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 2):
        raise ValueError("radii must be at least 2")
    if not mu * p > alpha:
        raise ValueError("mu p <= alpha: the convolution diverges")
    f = lambda rho: (1.0 + rho * rho) ** (-mu * p / 2)
    vals = np.array([riesz_radial(f, N, alpha, r, mu * p) for r in radii])
    fit = fit_tail_exponent((radii, vals))
    expo = -min(N - alpha, mu * p - alpha)
    ok = bool(abs(fit.exponent - expo) <= tol and fit.constant > 0)
    return LowerBoundReport(ok, fit, expo, radii.tolist(), vals.tolist())
