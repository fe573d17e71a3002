"""Closed-form analysis of the parameter space.

Critical exponents, the two existence paths, the exponent iterations that
drive the nonexistence argument and the choice of penalization parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

TOL = 1e-12


@dataclass(frozen=True)
class ProblemParams:
    dim: int
    s: float
    alpha: float
    p: float
    omega: float | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if not self.dim > 2 * self.s:
            raise ValueError(f"need N > 2s, got N={self.dim}, s={self.s}")
        if not 0.0 < self.alpha < self.dim:
            raise ValueError(f"alpha must lie in (0, N), got {self.alpha}")
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.omega is not None and not 0.0 < self.omega <= 2 * self.s + TOL:
            raise ValueError(f"omega must lie in (0, 2s], got {self.omega}")

    @property
    def construction_ok(self) -> bool:
        """alpha > (N - 4s)_+ , needed by both existence paths."""
        return self.alpha > max(self.dim - 4 * self.s, 0.0) + TOL


@dataclass(frozen=True)
class CriticalExponents:
    p_lower: float
    p_upper: float
    p_star: float
    p_omega: float | None = None


@dataclass(frozen=True)
class ExponentTrace:
    case_tag: str
    mu_sequence: tuple
    diverged: bool
    fixed_point: float


@dataclass(frozen=True)
class RegimeVerdict:
    existence_path: str
    nonexistence: bool
    trace: ExponentTrace | None = None
    notes: str = ""


@dataclass(frozen=True)
class PenalizationParams:
    mu: float
    tau: float
    theta: float
    kappa: float = 0.25
    nu: float = 1.0
    path: str = "Q1"
    lower: float = field(default=float("nan"), compare=False)


def critical_exponents(params: ProblemParams) -> CriticalExponents:
    N, s, a = params.dim, params.s, params.alpha
    p_omega = None
    if params.omega is not None:
        p_omega = 1.0 + (a + 2 * s) / (N + 2 * s - params.omega)
    return CriticalExponents(
        p_lower=(N + a) / N,
        p_upper=(N + a) / (N - 2 * s),
        p_star=1.0 + max(s + a / 2, a) / (N - 2 * s),
        p_omega=p_omega,
    )


def nonexistence_union(params: ProblemParams):
    """The two p-intervals (a, b) on which fast decay of V rules out solutions.

    The first is open, the second half-open [2, b).
    """
    N, s, a = params.dim, params.s, params.alpha
    return (1.0, 1.0 + (s + a / 2) / (N - 2 * s)), (2.0, 1.0 + a / (N - 2 * s))


def _strict(lo, x, hi):
    # lo < x < hi with the boundary tolerance; returns (inside, on_boundary)
    on = abs(x - lo) <= TOL or abs(x - hi) <= TOL
    return (lo + TOL < x < hi - TOL), on


def classify_regime(params: ProblemParams, fast_decay: bool) -> RegimeVerdict:
    if fast_decay and params.omega is not None:
        raise ValueError("fast_decay is incompatible with a prescribed decay rate omega")
    ce = critical_exponents(params)
    p = params.p
    notes = []

    # [2, p_upper): closed at 2, open at p_upper
    in_band = p >= 2.0 - TOL and p < ce.p_upper - TOL
    if abs(p - ce.p_upper) <= TOL:
        notes.append("p equals the upper critical exponent")
    if not params.construction_ok:
        notes.append("alpha <= (N-4s)_+: existence constructions unavailable")

    path = "none"
    if in_band and params.construction_ok:
        if p > ce.p_star + TOL:
            path = "Q1"
        elif abs(p - ce.p_star) <= TOL:
            notes.append("p equals p_star (boundary)")
        if path == "none" and ce.p_omega is not None:
            if p > ce.p_omega + TOL:
                path = "Q2"
            elif abs(p - ce.p_omega) <= TOL:
                notes.append("p equals p_omega (boundary)")

    nonexist = False
    if fast_decay:
        (a1, b1), (a2, b2) = nonexistence_union(params)
        inside1, on1 = _strict(a1, p, b1)
        inside2 = p >= a2 - TOL and p < b2 - TOL
        on2 = abs(p - b2) <= TOL
        nonexist = inside1 or inside2
        if on1 or on2:
            notes.append("p on the edge of the nonexistence range")

    if path == "none" and not nonexist:
        notes.append("no existence path and no nonexistence result apply")
    return RegimeVerdict(path, nonexist, None, "; ".join(notes))


def _fixed_point(params: ProblemParams, case_tag: str) -> float:
    N, s, a, p = params.dim, params.s, params.alpha, params.p
    if case_tag == "case1":
        return (a + 2 * s) / (2 * p - 2)
    step = N - a - 2 * s
    if abs(p - 2.0) <= TOL:
        # arithmetic progression: every start lies below an infinite fixed point
        # when the step is negative, none when it is positive
        if step < 0:
            return math.inf
        return -math.inf if step > 0 else math.nan
    return step / (2.0 - p)


def nonexistence_iteration(params: ProblemParams, case_tag: str, mu_start: float,
                           max_iters: int = 200, floor: float = -1e6) -> ExponentTrace:
    """Iterate the lower-bound exponents used in the nonexistence argument.

    case1: mu -> mu (2p - 1) - alpha - 2s
    case2: mu -> mu (p - 1) + N - alpha - 2s
    """
    N, s, a, p = params.dim, params.s, params.alpha, params.p
    if case_tag not in ("case1", "case2"):
        raise ValueError(f"unknown case tag {case_tag!r}")
    lo, hi = (N - 2 * s) / 2, N - 2 * s
    if not lo < mu_start < hi:
        raise ValueError(f"mu_start={mu_start} outside window ({lo}, {hi})")
    if case_tag == "case1":
        gain, shift = 2 * p - 1, -a - 2 * s
    else:
        gain, shift = p - 1, N - a - 2 * s

    seq = [float(mu_start)]
    diverged = False
    ceiling = -floor
    for _ in range(max_iters):
        mu = seq[-1]
        if mu < floor:
            diverged = True
            break
        if mu > ceiling:
            break
        seq.append(mu * gain + shift)
    else:
        # cap reached: the affine map decides the limit exactly
        mu = seq[-1]
        if gain > 1 + TOL:
            diverged = mu < shift / (1 - gain)
        elif abs(gain - 1) <= TOL:
            diverged = shift < 0
    return ExponentTrace(case_tag, tuple(seq), diverged, _fixed_point(params, case_tag))


def mu_window(params: ProblemParams, path: str):
    N, s = params.dim, params.s
    if path == "Q1":
        return (N - 2 * s) / 2, N - 2 * s
    if path != "Q2":
        raise ValueError(f"unknown path {path!r}")
    if params.omega is None:
        raise ValueError("path Q2 needs omega")
    if abs(params.omega - 2 * s) <= TOL:
        return N - 2 * s, float(N)
    return float(N), N + 2 * s - params.omega


def admissible_penalization(params: ProblemParams, path: str, mu_fraction: float = 0.95,
                            kappa: float = 0.25, nu: float = 1.0) -> PenalizationParams:
    s, a, p = params.s, params.alpha, params.p
    lo_mu, hi_mu = mu_window(params, path)
    mu = mu_fraction * hi_mu
    if not lo_mu < mu < hi_mu:
        raise ValueError(f"mu={mu} from fraction {mu_fraction} leaves window ({lo_mu}, {hi_mu})")
    lower = max(s + a / 2, a) if path == "Q1" else a + 2 * s
    upper = mu * (p - 1)
    if not upper > lower + TOL:
        raise ValueError(f"empty interval for (tau, theta): ({lower:.6g}, {upper:.6g})")
    if not 0.0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    width = upper - lower
    pen = PenalizationParams(mu=mu, tau=lower + width / 3, theta=lower + 2 * width / 3,
                             kappa=kappa, nu=nu, path=path, lower=lower)
    assert check_chain(pen, params), pen
    return pen


def check_chain(pen: PenalizationParams, params: ProblemParams) -> bool:
    """Re-check the ordering lower < tau < theta < mu (p - 1) and the mu window."""
    s, a, p = params.s, params.alpha, params.p
    lower = max(s + a / 2, a) if pen.path == "Q1" else a + 2 * s
    lo_mu, hi_mu = mu_window(params, pen.path)
    return (lower < pen.tau < pen.theta < pen.mu * (p - 1)
            and lo_mu < pen.mu < hi_mu and 0 < pen.kappa < 0.5 and pen.nu > 0)


def sweep(params: ProblemParams, p_values, fast_decay: bool):
    rows = []
    for p in p_values:
        q = ProblemParams(params.dim, params.s, params.alpha, float(p), params.omega)
        v = classify_regime(q, fast_decay)
        rows.append((float(p), v.existence_path, v.nonexistence))
    return rows
