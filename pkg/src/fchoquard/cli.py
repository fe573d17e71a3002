"""Command-line experiments: flat key=value configs in, JSON/CSV/field dumps out.

    fchoquard SUBCOMMAND [--config PATH] [--out DIR] [--seed N] [--threads N]
                         [--tolerance-scale F]

Exit codes: 0 all asserted checks pass, 1 a check failed, 2 config error,
3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
from scipy.integrate import IntegrationWarning

from . import __version__
from . import comparison as cmp
from . import fieldio
from . import limiting as lim
from . import penalized as pz
from . import regime as rg
from . import spectral as sp

SUBCOMMANDS = ("regime", "frlap-verify", "ground-state", "semiclassical", "decay-fit", "inequalities")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONV = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config schema

def _float(x):
    return float(x)


def _int(x):
    v = float(x)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _floats(x):
    return [float(t) for t in x.replace(",", " ").split()]


def _opt_float(x):
    return None if x.strip().lower() in ("none", "") else float(x)


def _bool(x):
    t = x.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _str(x):
    return x.strip()


def _positive(v):
    return np.all(np.asarray(v, float) > 0)


def _pow2(v):
    return v >= 2 and v & (v - 1) == 0


SCHEMA = {
    # problem
    "dim": (_int, lambda v: v in (1, 2, 3), "1, 2 or 3"),
    "s": (_float, lambda v: 0 < v < 1, "in (0, 1)"),
    "alpha": (_float, _positive, "positive"),
    "p": (_float, lambda v: v > 1, "greater than 1"),
    "omega": (_opt_float, lambda v: v is None or v > 0, "positive or none"),
    # semiclassical
    "eps_ladder": (_floats, lambda v: len(v) > 0 and _positive(v), "positive list"),
    "potential.family": (_str, lambda v: v in pz.FAMILIES, "one of " + ", ".join(pz.FAMILIES)),
    "potential.v0": (_float, _positive, "positive"),
    "potential.min_point": (_floats, lambda v: len(v) > 0, "coordinates"),
    "potential.curvature": (_float, _positive, "positive"),
    "potential.skew": (_float, lambda v: math.isfinite(v), "finite"),
    "potential.core_radius": (_float, _positive, "positive"),
    "potential.outer_radius": (_float, _positive, "positive"),
    "lambda.center": (_floats, lambda v: len(v) > 0, "coordinates"),
    "lambda.radius": (_float, _positive, "positive"),
    "pen.mu_fraction": (_float, lambda v: 0 < v < 1, "in (0, 1)"),
    "pen.path": (_str, lambda v: v in ("Q1", "Q2"), "Q1 or Q2"),
    "solver.tol": (_float, _positive, "positive"),
    "solver.max_iter": (_int, lambda v: v > 0, "positive"),
    "solver.eta0": (_float, _positive, "positive"),
    "grid.n": (_int, _pow2, "a power of two"),
    "grid.L": (_float, _positive, "positive"),
    # regime
    "sweep.p_min": (_float, lambda v: v > 1, "greater than 1"),
    "sweep.p_max": (_float, lambda v: v > 1, "greater than 1"),
    "sweep.count": (_int, lambda v: v >= 2, "at least 2"),
    "fast_decay": (_bool, lambda v: True, "boolean"),
    # frlap-verify
    "frlap.mu": (_floats, lambda v: len(v) > 0 and _positive(v), "positive list"),
    "frlap.window": (_floats, lambda v: len(v) == 2 and 2 <= v[0] < v[1], "two radii >= 2"),
    "frlap.n_radii": (_int, lambda v: v >= 8, "at least 8"),
    # ground-state
    "lambdas": (_floats, lambda v: len(v) > 0 and _positive(v), "positive list"),
    # decay-fit
    "fit.field": (_str, lambda v: len(v) > 0, "a path"),
    "fit.window": (_floats, lambda v: len(v) == 2 and 0 < v[0] < v[1], "two radii"),
    "fit.expected": (_opt_float, lambda v: True, "a number or none"),
    "fit.tol": (_float, _positive, "positive"),
    # inequalities
    "trials": (_int, lambda v: v > 0, "positive"),
}

DEFAULTS = {
    "regime": {"dim": 3, "s": 0.5, "alpha": 2.0, "p": 2.0, "sweep.p_min": 1.01, "sweep.p_max": 2.99,
               "sweep.count": 100, "fast_decay": True},
    "frlap-verify": {"dim": 2, "s": 0.5, "alpha": 1.0, "p": 2.0, "frlap.window": [2.0, 20.0],
                     "frlap.n_radii": 12},
    "ground-state": {"dim": 2, "s": 0.5, "alpha": 1.0, "p": 2.0, "lambdas": [1.0, 2.0],
                     "grid.n": 256, "grid.L": 20.0, "solver.tol": 1e-6, "solver.max_iter": 50000,
                     "solver.eta0": 0.5},
    "semiclassical": {"dim": 2, "s": 0.5, "alpha": 1.0, "p": 2.2, "eps_ladder": [0.2, 0.1, 0.05],
                      "potential.family": "compact_support", "potential.v0": 1.0,
                      "lambda.radius": 0.6, "pen.mu_fraction": 0.95, "solver.tol": 1e-6,
                      "solver.max_iter": 5000, "solver.eta0": 0.5, "grid.n": 512, "grid.L": 2.0},
    "decay-fit": {"dim": 2, "s": 0.5, "alpha": 1.0, "p": 2.0, "fit.tol": 0.1},
    "inequalities": {"dim": 2, "s": 0.5, "alpha": 1.0, "p": 2.0, "trials": 100, "grid.n": 128,
                     "grid.L": 8.0},
}


def parse_config(text: str) -> dict:
    """Flat `key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        conv, check, what = SCHEMA[key]
        try:
            v = conv(val)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from None
        if not check(v):
            raise ConfigError(f"{key!r} must be {what}, got {val!r}")
        if key in out:
            raise ConfigError(f"duplicate config key {key!r}")
        out[key] = v
    return out


def resolve(subcommand: str, given: dict) -> dict:
    cfg = dict(DEFAULTS[subcommand])
    cfg.update(given)
    try:
        params = problem_params(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    for key in ("potential.min_point", "lambda.center"):
        if key in cfg and len(cfg[key]) != params.dim:
            raise ConfigError(f"{key!r} needs {params.dim} coordinates")
    if subcommand == "regime" and not cfg["sweep.p_min"] < cfg["sweep.p_max"]:
        raise ConfigError("'sweep.p_min' must be below 'sweep.p_max'")
    if subcommand == "semiclassical":
        lad = cfg["eps_ladder"]
        if any(b >= a for a, b in zip(lad, lad[1:])):
            raise ConfigError("'eps_ladder' must be strictly decreasing")
    if subcommand == "decay-fit" and "fit.field" not in cfg:
        raise ConfigError("decay-fit needs 'fit.field'")
    return cfg


def problem_params(cfg) -> rg.ProblemParams:
    return rg.ProblemParams(cfg["dim"], cfg["s"], cfg["alpha"], cfg["p"], cfg.get("omega"))


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={json.dumps(cfg[k])}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- report helpers

class Report:
    def __init__(self, subcommand, cfg, seed, tol_scale):
        self.header = dict(version=__version__, subcommand=subcommand, normalization=sp.NORMALIZATION,
                           config_hash=config_hash(cfg), seed=seed, tolerance_scale=tol_scale)
        self.cfg = cfg
        self.checks = []
        self.results = {}

    def check(self, name, paper_ref, passed, asserted=True, **values):
        self.checks.append(dict(name=name, paper_ref=paper_ref, passed=bool(passed),
                                asserted=bool(asserted), **_jsonable(values)))

    @property
    def failed(self):
        return any(c["asserted"] and not c["passed"] for c in self.checks)

    def as_dict(self):
        return dict(header=self.header, config=_jsonable(self.cfg), checks=self.checks,
                    results=_jsonable(self.results))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def next_run_dir(out: Path, subcommand: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    k = 1
    while (out / f"{subcommand}-{k:03d}").exists():
        k += 1
    d = out / f"{subcommand}-{k:03d}"
    d.mkdir()
    return d


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


# ---------------------------------------------------------------- subcommands

def run_regime(cfg, rep: Report, run_dir: Path, rng, scale):
    params = problem_params(cfg)
    fast = cfg["fast_decay"]
    verdict = rg.classify_regime(params, fast)
    ps = np.linspace(cfg["sweep.p_min"], cfg["sweep.p_max"], cfg["sweep.count"])
    base = rg.ProblemParams(params.dim, params.s, params.alpha, 2.0, params.omega)
    rows = rg.sweep(base, ps, fast)
    _write_csv(run_dir / "sweep.csv", ("p", "existence_path", "nonexistence"),
               [(p, path, int(ne)) for p, path, ne in rows])
    ce = rg.critical_exponents(params)
    # region labels along increasing p: 0 nonexistence, 1 gap, 2 existence,
    # 3 at or beyond the upper critical exponent
    labels = [0 if ne else (2 if path != "none" else (3 if p >= ce.p_upper - rg.TOL else 1))
              for p, path, ne in rows]
    ordered = all(b >= a for a, b in zip(labels, labels[1:]))
    rep.results.update(verdict=dict(existence_path=verdict.existence_path,
                                    nonexistence=verdict.nonexistence, notes=verdict.notes),
                       critical=dict(p_lower=ce.p_lower, p_upper=ce.p_upper, p_star=ce.p_star,
                                     p_omega=ce.p_omega),
                       counts=dict(nonexistence=labels.count(0), gap=labels.count(1),
                                   existence=labels.count(2), supercritical=labels.count(3)))
    rep.check("regime-structure", "existence/nonexistence classification by exponent ranges",
              ordered, regions=sorted(set(labels)))


def run_frlap_verify(cfg, rep: Report, run_dir: Path, rng, scale):
    params = problem_params(cfg)
    N, s = params.dim, params.s
    mus = cfg.get("frlap.mu", [N - 2 * s])
    win = tuple(cfg["frlap.window"])
    for mu in mus:
        r = cmp.verify_prop_tb(mu, params, window=win, n_radii=cfg["frlap.n_radii"],
                               slope_tol=0.05 * scale, ratio_tol=1e-3 * scale)
        _write_csv(run_dir / f"frlap_mu{mu:g}.csv", ("radius", "value", "error"),
                   zip(r.radii, r.values, r.errors))
        vals = dict(mu=mu, regime=r.regime, sign=r.sign, expected_sign=r.expected_sign,
                    expected_exponent=r.expected_exponent)
        if r.regime == "bubble":
            vals["ratio_variation"] = r.ratio_variation
        if r.fit is not None:
            vals["fitted_exponent"] = r.fit.exponent
        rep.check(f"profile-mu{mu:g}", "fractional Laplacian of (1+|x|^2)^(-mu/2): sign and decay",
                  r.ok, **vals)


def _solver_config(cfg, method="gradient"):
    return lim.SolverConfig(tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                            eta0=cfg["solver.eta0"], method=method)


def run_ground_state(cfg, rep: Report, run_dir: Path, rng, scale):
    params = problem_params(cfg)
    grid = sp.Grid(params.dim, cfg["grid.n"], cfg["grid.L"])
    sc = _solver_config(cfg)
    lams = cfg["lambdas"]
    if len(lams) >= 2:
        srep = lim.scaling_law_check(lams, params, grid, sc, tol=0.02 * scale)
        states = srep.states
        rep.results["scaling"] = dict(lambdas=srep.lambdas, energies=srep.energies, ratios=srep.ratios,
                                      predicted=srep.predicted, exponent=srep.exponent,
                                      max_rel_dev=srep.max_rel_dev,
                                      rescale_residuals=srep.rescale_residuals)
        rep.check("scaling-law", "energy scaling of the limiting problem in lambda", srep.ok,
                  max_rel_dev=srep.max_rel_dev, increasing=srep.increasing)
    else:
        states = [lim.ground_state_solve(lams[0], params, grid, sc)]
    rep.results["states"] = [st.record() for st in states]
    N, s = params.dim, params.s
    for st in states:
        fieldio.write_field(run_dir / f"ground_lambda{st.lam:g}.fcq", st.field)
        r, v = lim.axis_profile(st.field)
        fieldio.write_radial_csv(run_dir / f"ground_lambda{st.lam:g}_profile.csv", r, v)
    first = states[0]
    if first.tail is not None:
        dev = abs(first.tail.exponent + N + 2 * s) / (N + 2 * s)
        rep.check("ground-state-tail", "algebraic decay |x|^-(N+2s) of ground states",
                  dev <= 0.1 * scale, exponent=first.tail.exponent, window=first.tail.window)
    else:
        rep.check("ground-state-tail", "algebraic decay |x|^-(N+2s) of ground states", False,
                  note="tail window had a sign change")


def _potential(cfg, params):
    N = params.dim
    kw = dict(family=cfg["potential.family"], v0=cfg["potential.v0"],
              lambda_center=tuple(cfg.get("lambda.center", [0.0] * N)),
              lambda_radius=cfg["lambda.radius"],
              min_point=tuple(cfg.get("potential.min_point", [0.1] + [0.0] * (N - 1))))
    for key in ("curvature", "skew", "core_radius", "outer_radius"):
        if f"potential.{key}" in cfg:
            kw[key] = cfg[f"potential.{key}"]
    if kw["family"] == "algebraic":
        if params.omega is None:
            raise ConfigError("the algebraic family needs 'omega'")
        kw["omega"] = params.omega
    try:
        return pz.PotentialSpec(**kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def run_semiclassical(cfg, rep: Report, run_dir: Path, rng, scale):
    params = problem_params(cfg)
    pot = _potential(cfg, params)
    path = cfg.get("pen.path") or rg.classify_regime(params, False).existence_path
    if path not in ("Q1", "Q2"):
        raise ConfigError(f"parameters admit no existence path (p={params.p})")
    try:
        pen = rg.admissible_penalization(params, path, cfg["pen.mu_fraction"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    spec = pz.PenalizationSpec.for_potential(pen, pot)
    grid = sp.Grid(params.dim, cfg["grid.n"], cfg["grid.L"])
    assum = pot.check_assumption(grid)
    rep.check("potential-assumption", "local minimum of V inside Lambda, strictly below its boundary",
              assum["ok"], **assum)
    sc = _solver_config(cfg, "cg")
    crep = pz.concentration_scan(spec, pot, params, cfg["eps_ladder"], sc, grid)
    rep.results["penalization"] = dict(mu=pen.mu, tau=pen.tau, theta=pen.theta, kappa=pen.kappa,
                                       path=pen.path)
    rep.results["concentration"] = crep.as_dict()
    rep.results["states"] = [st.record() for st in crep.states]
    for st in crep.states:
        tag = f"eps{st.eps:g}"
        fieldio.write_field(run_dir / f"penalized_{tag}.fcq", st.field)
    last = crep.states[-1]
    if last.frame == "physical":
        prob = pz.PenalizedProblem(spec, pot, last.eps, params, last.field.grid)
        rr = np.linalg.norm(prob.x - np.asarray(pot.lambda_center), axis=-1)[~prob.inside]
        order = np.argsort(rr, kind="stable")
        _write_csv(run_dir / "margins.csv", ("radius", "margin"),
                   zip(rr[order], last.margins[order]))
    tol = sc.tol
    for st in crep.states:
        rep.check(f"recovery-eps{st.eps:g}", "truncation inactive off Lambda (u^(p-1) <= P_eps)",
                  st.recovery_ok and st.residual_untruncated <= 10 * tol,
                  min_margin=st.min_margin, residual=st.residual_untruncated)
    rep.check("concentration-monotone", "V(x_eps) tends to the local minimum V0",
              crep.monotone and crep.final_gap_ok, v_at_max=crep.v_at_max, barrier=pot.barrier)
    ratio = crep.energy_ratio[-1] / crep.limit_target
    rep.check("energy-upper-bound", "c_eps / eps^N bounded by the limiting energy at V0",
              ratio <= 1 + 0.05 * scale, ratio=ratio)
    rep.check("decay-envelope", "polynomial envelope of u_eps away from x_eps", crep.envelope_ok,
              asserted=False, gammas=crep.gammas, predicted=crep.gamma_predicted)


def run_decay_fit(cfg, rep: Report, run_dir: Path, rng, scale):
    try:
        fld = fieldio.read_field(cfg["fit.field"])
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read field: {e}") from None
    g = fld.grid
    imax = np.unravel_index(np.argmax(fld.values), g.shape)
    center = np.array([g.axis()[i] for i in imax])
    r = g.radius(center).ravel()
    v = fld.values.ravel()
    edges = np.arange(0.0, g.half_width, g.spacing)
    idx = np.digitize(r, edges)
    cnt = np.bincount(idx, minlength=edges.size + 1)
    ok = cnt > 0
    rb = (np.bincount(idx, weights=r, minlength=edges.size + 1)[ok] / cnt[ok])
    vb = (np.bincount(idx, weights=v, minlength=edges.size + 1)[ok] / cnt[ok])
    win = tuple(cfg.get("fit.window", (g.half_width / 4, g.half_width / 2)))
    m = (rb >= win[0]) & (rb <= win[1])
    fieldio.write_radial_csv(run_dir / "profile.csv", rb, vb)
    fit = cmp.fit_tail_exponent((rb[m], vb[m]), win)
    rep.results["fit"] = fit.as_dict()
    exp = cfg.get("fit.expected")
    if exp is not None:
        dev = abs(fit.exponent - exp) / abs(exp)
        rep.check("tail-exponent", "algebraic tail exponent of a dumped field",
                  dev <= cfg["fit.tol"] * scale, exponent=fit.exponent, expected=exp)


def run_inequalities(cfg, rep: Report, run_dir: Path, rng, scale):
    params = problem_params(cfg)
    grid = sp.Grid(params.dim, cfg["grid.n"], cfg["grid.L"])
    rows = []
    for _ in range(cfg["trials"]):
        u = sp.random_tapered_field(grid, rng)
        rows.append(sp.inequality_suite(u, params))
    keys = ("hardy_raw", "hardy_cert", "hls_raw", "hls_cert", "whls")
    _write_csv(run_dir / "ratios.csv", keys, [[r[k] for k in keys] for r in rows])
    arr = {k: np.array([r[k] for r in rows]) for k in keys}
    rep.results["summary"] = {k: dict(min=float(a.min()), max=float(a.max()), mean=float(a.mean()))
                              for k, a in arr.items()}
    rep.check("weighted-hls", "weighted HLS bound with the sharp constant",
              arr["whls"].max() <= 1 + 1e-6 * scale, max_ratio=arr["whls"].max())
    rep.check("hardy", "fractional Hardy inequality with the sharp constant",
              np.all(np.isfinite(arr["hardy_raw"])) and arr["hardy_cert"].max() <= 1 + 1e-6 * scale,
              max_ratio=arr["hardy_cert"].max())
    rep.check("hls", "HLS inequality with the sharp constant",
              np.all(np.isfinite(arr["hls_raw"])) and arr["hls_cert"].max() <= 1 + 1e-6 * scale,
              max_ratio=arr["hls_cert"].max())


RUNNERS = {"regime": run_regime, "frlap-verify": run_frlap_verify, "ground-state": run_ground_state,
           "semiclassical": run_semiclassical, "decay-fit": run_decay_fit,
           "inequalities": run_inequalities}


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="fchoquard", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--tolerance-scale", type=float, default=1.0)
    return ap


def run(subcommand, config_path=None, out=Path("runs"), seed=0, threads=None, tolerance_scale=1.0,
        stream=None) -> int:
    t0 = time.time()
    err = stream if stream is not None else sys.stderr
    stream = stream if stream is not None else sys.stdout
    try:
        if seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if not tolerance_scale > 0:
            raise ConfigError("tolerance scale must be positive")
        text = Path(config_path).read_text() if config_path is not None else ""
        cfg = resolve(subcommand, parse_config(text))
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=err)
        return EXIT_CONFIG
    if threads:
        sp.set_workers(threads)
    run_dir = next_run_dir(Path(out), subcommand)
    rep = Report(subcommand, cfg, seed, tolerance_scale)
    rng = np.random.default_rng(seed)
    code = EXIT_OK
    try:
        RUNNERS[subcommand](cfg, rep, run_dir, rng, tolerance_scale)
        if rep.failed:
            code = EXIT_FAIL
    except ConfigError as e:
        print(f"config error: {e}", file=err)
        code = EXIT_CONFIG
    except lim.SolverError as e:
        print(f"solver failure: {e}", file=err)
        rep.results["solver_error"] = str(e)
        code = EXIT_NONCONV
    except Exception:
        code = EXIT_FAIL
        raise
    finally:
        with open(run_dir / "report.json", "w") as fh:
            json.dump(rep.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        meta = dict(started=time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
                    elapsed_seconds=time.time() - t0, argv=sys.argv, pid=os.getpid(), exit_code=code)
        with open(run_dir / "metadata.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        if code != EXIT_OK:
            (run_dir / "FAILED").write_text(f"exit code {code}\n")
    for c in rep.checks:
        flag = "PASS" if c["passed"] else ("FAIL" if c["asserted"] else "note")
        print(f"{flag} {c['name']}", file=stream)
    print(f"report: {run_dir / 'report.json'}", file=stream)
    return code


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    # quadrature error estimates are reported in the JSON; scipy's own warnings are noise here
    warnings.simplefilter("ignore", IntegrationWarning)
    return run(a.subcommand, a.config, a.out, a.seed, a.threads, a.tolerance_scale)


if __name__ == "__main__":
    sys.exit(main())
