"""Experiment pipelines behind the command line.

Each pipeline returns an :class:`ExperimentResult` with metrics, threshold checks and
the CSV files it wrote. Timings stay out of the CSVs so repeated runs are byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .domain import CubeGeometry, build_domain, build_patches, extend_domain
from .dtn import DtnMap, make_anchor
from .elliptic import Conductivity, richardson_lambda1, stiffness
from .fitting import fit_slope
from .nonlinearity import builtin, perturbed, validate_assumptions
from .plots import render_all, write_csv
from .probes import hfrak_lp_norm, parametrix_residual
from .recovery import calibrate, integrate_curve, recover_aprime, sigma_profile, stability_experiment
from .traces import trace_gram

log = logging.getLogger(__name__)

__all__ = ["EXPERIMENTS", "ExperimentResult", "Context", "run_experiments", "SCHEMA_VERSION", "PRNG"]

SCHEMA_VERSION = "1.0"
PRNG = "numpy.PCG64"


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool

    def to_dict(self):
        return {"name": self.name, "value": _jsonable(self.value), "threshold": self.threshold,
                "passed": bool(self.passed)}


@dataclass
class ExperimentResult:
    name: str
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name, value, threshold, passed):
        self.checks.append(Check(name, value, threshold, bool(passed)))

    def to_dict(self):
        return {
            "metrics": _jsonable(self.metrics),
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
            "artifacts": self.artifacts,
            "wall_clock_s": round(self.wall_clock, 3),
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


class Context:
    """Shared grid, probes and calibration for one run."""

    def __init__(self, cfg, out_dir, workers=1):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.workers = workers

    def rng(self, stream):
        # independent seeded streams per experiment
        return np.random.Generator(np.random.PCG64([self.cfg.seed, stream]))

    @cached_property
    def domain(self):
        g = self.cfg.geometry
        return build_domain(g.n, g.N, CubeGeometry(g.side))

    @cached_property
    def A(self):
        return Conductivity.from_matrix(np.asarray(self.cfg.A, dtype=float))

    @cached_property
    def patches(self):
        g = self.cfg.geometry
        return build_patches(self.domain, r0=g.r0, r1=g.r1, axis=g.axis, side=g.face)

    @cached_property
    def ext(self):
        return extend_domain(self.domain, self.patches)

    @cached_property
    def gram(self):
        return trace_gram(self.domain)

    @cached_property
    def calibration(self):
        p = self.cfg.probes
        deltas = None
        if p.deltas:
            deltas = p.deltas
        elif p.count != 4:
            from .probes import delta_sweep

            deltas = delta_sweep(self.ext, p.count, p.min_factor)
        return calibrate(self.ext, self.A, deltas, p.min_factor, p.corrector, self.cfg.solver.method)

    @cached_property
    def anchor(self):
        return make_anchor(self.patches, tau=self.cfg.sweep.tau, n_t=self.cfg.sweep.n_t)

    def gamma0_trace(self, rng):
        f = np.zeros(self.domain.gamma.size)
        f[self.patches.gamma0] = rng.standard_normal(self.patches.gamma0.size)
        return f

    def dtn(self, coefficient, **kw):
        s = self.cfg.solver
        return DtnMap(self.domain, self.A, coefficient, self.patches, method=s.method,
                      newton_method=s.newton_method, newton_tol=kw.pop("newton_tol", s.newton_tol), **kw)

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def exp_identity(ctx):
    """Integral identity on random potential pairs and extension independence of the flux."""
    res = ExperimentResult("identity")
    cfg, dom = ctx.cfg, ctx.domain
    rng = ctx.rng(1)
    w = dom.mesh.weights
    rows, rels = [], []
    for k in range(cfg.identity.pairs):
        s1 = rng.random(dom.mesh.num_nodes)
        s2 = rng.random(dom.mesh.num_nodes)
        f, g = ctx.gamma0_trace(rng), ctx.gamma0_trace(rng)
        E1, E2 = ctx.dtn(s1), ctx.dtn(s2)
        volume = float(np.sum(w * (s1 - s2) * E1.solve(f) * E2.solve(g)))
        pairing = float(g @ (E1.localized(f) - E2.localized(f)))
        rel = abs(volume - pairing) / max(abs(volume), abs(pairing), 1e-300)
        rels.append(rel)
        rows.append((k, volume, pairing, rel))
    p = ctx.path("identity.csv")
    write_csv(p, ["pair", "volume", "pairing", "relative_error"], rows)
    res.artifacts.append(p.name)
    res.metrics["identity_max_rel"] = max(rels)
    res.check("identity relative discrepancy", max(rels), f"<= {cfg.thresholds.identity_rel:g}",
              max(rels) <= cfg.thresholds.identity_rel)

    # pairing of a solution with different extensions of one test trace
    E = ctx.dtn(rng.random(dom.mesh.num_nodes))
    f, g = ctx.gamma0_trace(rng), ctx.gamma0_trace(rng)
    u = E.solve(f)
    K = stiffness(dom.mesh, ctx.A)
    Bu = K @ u + w * E.sigma * u
    ref = float(g @ E.flux(u))
    frows, frels = [], []
    for k in range(cfg.identity.extensions):
        G = np.zeros(dom.mesh.num_nodes)
        G[dom.gamma] = g
        G[dom.mesh.interior] = rng.standard_normal(dom.mesh.interior.size)
        val = float(G @ Bu)
        rel = abs(val - ref) / max(abs(ref), 1e-300)
        frels.append(rel)
        frows.append((k, val, ref, rel))
    p = ctx.path("flux_extensions.csv")
    write_csv(p, ["extension", "pairing", "reference", "relative_error"], frows)
    res.artifacts.append(p.name)
    res.metrics["flux_max_rel"] = max(frels)
    res.check("flux extension independence", max(frels), f"<= {cfg.thresholds.flux_rel:g}",
              max(frels) <= cfg.thresholds.flux_rel)
    return res


def exp_frechet(ctx):
    """Difference quotients of the localized map against its linearization."""
    res = ExperimentResult("frechet")
    cfg = ctx.cfg
    th = cfg.thresholds
    rng = ctx.rng(2)
    eps = np.asarray(cfg.frechet.eps, dtype=float)
    f0 = cfg.frechet.amplitude * np.asarray(ctx.anchor.h)
    g = 0.5 * ctx.gamma0_trace(rng)
    rows = []
    for spec in cfg.frechet.nonlinearities:
        spec = dict(spec)
        a = builtin(spec.pop("name"), **spec)
        E = ctx.dtn(a, newton_tol=min(cfg.solver.newton_tol, 1e-12))
        base = E.localized(f0)
        lin = E.linearization(f0).localized(g)
        scale = ctx.gram.dual_norm(lin)
        errs = []
        for e in eps:
            q = (E.localized(f0 + e * g) - base) / e
            err = ctx.gram.dual_norm(q - lin)
            errs.append(err)
            rows.append((a.name, e, err, err / scale))
        errs = np.array(errs)
        if np.all(errs > 0):
            slope = fit_slope(eps, errs).slope
        else:
            slope = math.nan
        res.metrics[f"{a.name}_slope"] = slope
        res.metrics[f"{a.name}_errors"] = errs
        ok = th.frechet_slope_min <= slope <= th.frechet_slope_max
        res.check(f"{a.name} remainder slope", slope, f"in [{th.frechet_slope_min}, {th.frechet_slope_max}]", ok)
    p = ctx.path("frechet.csv")
    write_csv(p, ["nonlinearity", "eps", "error", "relative_error"], rows)
    res.artifacts.append(p.name)
    return res


def exp_scaling(ctx):
    """Probe norm scaling over the delta sweep."""
    res = ExperimentResult("scaling")
    th = ctx.cfg.thresholds
    cal = ctx.calibration
    dom = ctx.domain
    n = dom.n
    rows = []
    hh = np.zeros((cal.deltas.size, n))
    lp = np.zeros_like(hh)
    vh = np.zeros_like(hh)
    for i, fam in enumerate(cal.families):
        for j in range(n):
            hh[i, j] = ctx.gram.norm(fam.traces[:, j])
            lp[i, j] = hfrak_lp_norm(dom, fam, j=j)
            vh[i, j] = fam.corrector_h1[j]
            rows.append((fam.delta, j + 1, hh[i, j], lp[i, j], vh[i, j]))
    p = ctx.path("scaling.csv")
    write_csv(p, ["delta", "j", "h_half", "lp_norm", "corrector_h1"], rows)
    res.artifacts.append(p.name)
    band = th.slope_band
    for j in range(n):
        s_h = fit_slope(cal.deltas, hh[:, j]).slope
        s_l = fit_slope(cal.deltas, lp[:, j]).slope
        ratio = float(vh[:, j].max() / vh[:, j].min())
        res.metrics[f"h_half_slope_j{j + 1}"] = s_h
        res.metrics[f"lp_slope_j{j + 1}"] = s_l
        res.metrics[f"corrector_ratio_j{j + 1}"] = ratio
        res.check(f"H^1/2 slope j={j + 1}", s_h, f"{th.probe_h_half_slope} +- {band}",
                  abs(s_h - th.probe_h_half_slope) <= band)
        res.check(f"L^p slope j={j + 1}", s_l, f"{th.probe_lp_slope} +- {band}",
                  abs(s_l - th.probe_lp_slope) <= band)
        res.check(f"corrector ratio j={j + 1}", ratio, f"< {th.corrector_ratio}", ratio < th.corrector_ratio)
    y = cal.families[0].y
    res.metrics["parametrix_residual_far"] = parametrix_residual(dom, ctx.A, y, 4 * dom.h)
    res.metrics["deltas"] = cal.deltas
    res.metrics["s_ref"] = cal.s_ref
    return res


def exp_lambda1(ctx):
    res = ExperimentResult("lambda1")
    g = ctx.cfg.geometry
    est, fine, coarse = richardson_lambda1(g.n, g.N, g.side)
    exact = g.n * math.pi**2 / g.side**2
    rel = abs(est - exact) / exact
    res.metrics.update(richardson=est, fine=fine, coarse=coarse, exact=exact, relative_error=rel)
    p = ctx.path("lambda1.csv")
    write_csv(p, ["quantity", "value"], [("coarse", coarse), ("fine", fine), ("richardson", est), ("exact", exact)])
    res.artifacts.append(p.name)
    res.check("lambda1 relative error", rel, f"<= {ctx.cfg.thresholds.lambda1_rel}",
              rel <= ctx.cfg.thresholds.lambda1_rel)
    return res


def exp_recover_sigma(ctx):
    """Calibrated pointwise estimates of constant and bump potential differences."""
    res = ExperimentResult("recover-sigma")
    cfg, th = ctx.cfg, ctx.cfg.thresholds
    cal = ctx.calibration
    dom, pat = ctx.domain, ctx.patches
    c1, c2 = cfg.recovery.constant_pair
    c0 = c1 - c2
    E1, E2 = ctx.dtn(c1), ctx.dtn(c2)
    const = sigma_profile(E1, E2, cal)
    x = dom.mesh.coords
    bump = np.exp(-np.sum((x - pat.x0) ** 2, axis=1) / (2 * cfg.recovery.bump_radius**2))
    Eb, E0 = ctx.dtn(bump), ctx.dtn(0.0)
    bprof = sigma_profile(Eb, E0, cal)
    swapped = sigma_profile(E0, Eb, cal)
    rows = [("constant", d, v, c0) for d, v in zip(cal.deltas, const)]
    rows += [("bump", d, v, 1.0) for d, v in zip(cal.deltas, bprof)]
    p = ctx.path("recover_sigma.csv")
    write_csv(p, ["case", "delta", "estimate", "target"], rows)
    res.artifacts.append(p.name)
    cerr = np.abs(const - c0) / abs(c0)
    res.metrics.update(constant_estimates=const, constant_rel_errors=cerr, bump_estimates=bprof,
                       antisymmetry=float(np.max(np.abs(bprof + swapped))))
    res.check("constant difference rel error (all delta)", float(cerr.max()), f"<= {th.constant_rel}",
              cerr.max() <= th.constant_rel)
    d_rel = cal.reliable_delta()
    k = cal.index(d_rel)
    berr = np.abs(bprof - 1.0)
    res.metrics["bump_delta"] = d_rel
    res.metrics["bump_rel_errors"] = berr
    res.check("bump rel error at smallest reliable delta", float(berr[k]), f"<= {th.bump_rel}",
              berr[k] <= th.bump_rel)
    if k + 1 < berr.size:
        res.check("bump error decreases as delta shrinks", float(berr[k + 1] - berr[k]), "> 0",
                  berr[k] < berr[k + 1])
    return res


def exp_recover_aprime(ctx):
    """t-sweep for a linear and a cubic unknown against a2 = 0."""
    res = ExperimentResult("recover-aprime")
    cfg, th = ctx.cfg, ctx.cfg.thresholds
    cal, anchor = ctx.calibration, ctx.anchor
    zero = builtin("zero")
    lam = cfg.recovery.linear_lam
    rows = []
    lin = recover_aprime(ctx.dtn(builtin("linear", lam=lam)), zero, anchor, cal, workers=ctx.workers)
    rows += [("linear", t, e, tr) for t, e, tr, _ in lin.rows()]
    lin_err = float(np.max(np.abs(lin.estimates - lam)) / abs(lam))
    res.metrics["linear_estimates"] = lin.estimates
    res.check("linear curve flat at lambda", lin_err, f"<= {th.linear_rel}", lin_err <= th.linear_rel)

    c3 = cfg.recovery.cubic_c3
    cub = recover_aprime(ctx.dtn(builtin("cubic", c3=c3, c1=0.0)), zero, anchor, cal, workers=ctx.workers)
    rows += [("cubic", t, e, tr) for t, e, tr, _ in cub.rows()]
    est, t = cub.estimates, cub.t
    even = float(np.max(np.abs(est - est[::-1])) / np.max(np.abs(est)))
    i0 = int(np.flatnonzero(t == 0.0)[0])
    pos = est[i0:]
    res.metrics.update(cubic_estimates=est, cubic_truth=cub.truth, cubic_ratio_to_truth=np.divide(
        est, cub.truth, out=np.full_like(est, np.nan), where=cub.truth != 0),
        u_at_x_star=cub.diagnostics["u_at_x_star"][:, 0], failures=lin.failures + cub.failures)
    res.check("cubic curve even", even, f"<= {th.cubic_even_rel}", even <= th.cubic_even_rel)
    res.check("cubic curve minimal at t=0", float(est[i0] - est.min()), "== 0", est[i0] <= est.min())
    res.check("cubic curve monotone on [0, tau]", float(np.min(np.diff(pos))), "> 0", np.all(np.diff(pos) > 0))
    rec = integrate_curve(cub, zero, 0.0)
    res.metrics["cubic_integrated_max_error"] = float(np.max(np.abs(rec.values - c3 * t**3)))
    res.metrics["cubic_curve_max_error"] = float(np.max(np.abs(est - cub.truth)))
    p = ctx.path("recover_aprime.csv")
    write_csv(p, ["case", "t", "estimate", "truth"], rows)
    res.artifacts.append(p.name)
    return res


def exp_stability(ctx):
    """Operator-norm side vs the exact coefficient gap for scaled perturbations."""
    res = ExperimentResult("stability")
    cfg, th = ctx.cfg, ctx.cfg.thresholds
    spec = dict(cfg.stability.base)
    a1 = builtin(spec.pop("name"), **spec)
    fam = [perturbed(a1, e) for e in cfg.stability.eps]
    table = stability_experiment(a1, fam, ctx.anchor, ctx.domain, ctx.A, ctx.patches,
                                 labels=[f"eps={e:g}" for e in cfg.stability.eps],
                                 rtol=cfg.solver.op_norm_rtol, workers=ctx.workers, method=cfg.solver.method)
    # assumptions are checked on [-rho, rho] with rho the computed max-norm of the sweep solutions
    lam1 = cfg.geometry.n * math.pi**2 / cfg.geometry.side**2
    assumptions = {}
    for label, a in zip(["base"] + table.labels, [a1] + fam):
        rep = validate_assumptions(a, table.rho, kappa=ctx.A.kappa, lambda1=lam1, n=cfg.geometry.n)
        assumptions[label] = rep.ok
        if not rep.ok:
            log.warning("assumption check for %s: %s", a.name, "; ".join(rep.messages))
    res.metrics["rho"] = table.rho
    res.metrics["assumptions_ok"] = assumptions
    rows = [(lab, e, x, y, c) for lab, e, x, y, c in
            zip(table.labels, cfg.stability.eps, table.X, table.Y, table.C_k)]
    p = ctx.path("stability.csv")
    write_csv(p, ["label", "eps", "X", "Y", "C_k"], rows)
    res.artifacts.append(p.name)
    res.metrics.update(exponent=table.exponent, slope=table.slope, C_hat=table.C_hat, spread=table.spread,
                       X=table.X, Y=table.Y, failures=table.failures)
    print(f"stability: theoretical exponent {table.exponent:.4g}, empirical slope {table.slope:.4g}")
    res.check("Y_k <= C X_k^exponent for all k", table.C_hat, "single finite C", table.holds()
              and math.isfinite(table.C_hat))
    res.check("spread of per-k constants", table.spread, f"<= {th.stability_spread}",
              table.spread <= th.stability_spread)
    return res


EXPERIMENTS = {
    "identity": exp_identity,
    "frechet": exp_frechet,
    "scaling": exp_scaling,
    "lambda1": exp_lambda1,
    "recover-sigma": exp_recover_sigma,
    "recover-aprime": exp_recover_aprime,
    "stability": exp_stability,
}


def run_experiments(cfg, names, out_dir, workers=1, plots=True):
    """Run experiments in order; writes ``report.json`` and SVG plots. Returns the report dict."""
    from .config import dump_config

    ctx = Context(cfg, out_dir, workers)
    ctx.out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, ctx.out / "config.toml")
    results = {}
    t_all = time.perf_counter()
    for name in names:
        t0 = time.perf_counter()
        log.info("running %s", name)
        r = EXPERIMENTS[name](ctx)
        r.wall_clock = time.perf_counter() - t0
        results[name] = r
        for c in r.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {name}: {c.name} = {_fmt(c.value)} ({c.threshold})")
    svgs = render_all(ctx.out) if plots else []
    report = {
        "schema_version": SCHEMA_VERSION,
        "prng": PRNG,
        "seed": cfg.seed,
        "config": _jsonable(cfg.to_dict()),
        "experiments": {k: v.to_dict() for k, v in results.items()},
        "passed": all(v.passed for v in results.values()),
        "plots": [Path(s).name for s in svgs],
        "wall_clock_s": round(time.perf_counter() - t_all, 3),
        "grid": {"N": cfg.geometry.N, "h": ctx.domain.h, "num_nodes": ctx.domain.mesh.num_nodes,
                 "gamma": int(ctx.domain.gamma.size)},
    }
    (ctx.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
