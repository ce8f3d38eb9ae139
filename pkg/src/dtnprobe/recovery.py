"""Pointwise boundary recovery from probe pairings, the ``a'`` sweep and the stability experiment.

The pairing row ``S(delta)`` of a potential difference concentrates the kernel
``|grad H(., y_delta)|^2`` at ``x0``. Dividing by the row of a unit reference
difference cancels the unknown kernel mass, leaving an estimate of the
difference at ``x0``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .domain import ConfigurationError
from .dtn import DtnMap, localized_difference
from .elliptic import Conductivity, SolverError
from .fitting import fit_slope
from .nonlinearity import DimensionParams
from .probes import build_probe_family, delta_sweep, probe_pairing_row
from .traces import op_norm, trace_gram

log = logging.getLogger(__name__)

__all__ = [
    "CalibrationProfile",
    "CalibrationMismatch",
    "RecoveredCurve",
    "SampledNonlinearity",
    "StabilityTable",
    "calibrate",
    "geometry_fingerprint",
    "sigma_point_estimate",
    "sigma_profile",
    "recover_aprime",
    "integrate_curve",
    "stability_experiment",
]


class CalibrationMismatch(ConfigurationError):
    """Calibration used with a different grid, probe point or conductivity."""


def geometry_fingerprint(ext, A):
    """SHA-256 over the grid, probe geometry and ``A``."""
    A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
    pat = ext.patches
    payload = {
        "grid": [float(v) for v in ext.parent.fingerprint()[:3]] + list(map(float, ext.parent.lower)),
        "x0": np.round(pat.x0, 12).tolist(),
        "r0": round(pat.r0, 12),
        "r1": round(pat.r1, 12),
        "A": np.round(A.A, 14).tolist(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    """Reference rows ``S_ref(delta)`` of the unit difference ``1 - 0`` with the probes that produced them."""

    deltas: np.ndarray
    s_ref: np.ndarray
    fingerprint: str
    families: tuple
    ext: object
    A: Conductivity
    threshold: float = 1e-14

    def check(self, ext, A):
        fp = geometry_fingerprint(ext, A)
        if fp != self.fingerprint:
            raise CalibrationMismatch(f"calibration fingerprint {self.fingerprint[:12]} does not match "
                                      f"the current geometry {fp[:12]}")

    def index(self, delta):
        hit = np.flatnonzero(np.isclose(self.deltas, delta, rtol=1e-10, atol=0.0))
        if hit.size == 0:
            raise ConfigurationError(f"delta={delta:.6g} is not in the calibrated grid "
                                     f"{np.array2string(self.deltas, precision=4)}; no extrapolation")
        return int(hit[0])

    def corrector_norms(self):
        return np.array([f.corrector_h1.max() for f in self.families])

    def reliable_delta(self, factor=2.0):
        """Smallest ``delta`` whose corrector norm stays within ``factor`` of the sweep minimum."""
        v = self.corrector_norms()
        ok = np.flatnonzero(v <= factor * v.min())
        return float(self.deltas[ok].min())

    def to_dict(self):
        return {"deltas": self.deltas.tolist(), "s_ref": self.s_ref.tolist(), "fingerprint": self.fingerprint}


def calibrate(ext, A, deltas=None, min_factor=4.0, corrector=True, method="direct"):
    """Build probes for each ``delta`` and record ``S_ref`` for ``sigma_1 = 1``, ``sigma_2 = 0``."""
    A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
    deltas = delta_sweep(ext, 4, min_factor) if deltas is None else np.sort(np.asarray(deltas, dtype=float))
    dom, pat = ext.parent, ext.patches
    fams = tuple(build_probe_family(ext, A, d, min_factor, corrector) for d in deltas)
    one = DtnMap(dom, A, 1.0, pat, method=method)
    zero = DtnMap(dom, A, 0.0, pat, method=method)
    s_ref = np.array([probe_pairing_row(one, zero, f) for f in fams])
    if np.any(s_ref <= 0):
        bad = deltas[s_ref <= 0]
        raise ConfigurationError(f"non-positive reference row at delta={bad}: grid too coarse for the probes "
                                 "or the probe point is too close to an edge")
    s_ref.setflags(write=False)
    deltas.setflags(write=False)
    return CalibrationProfile(deltas=deltas, s_ref=s_ref, fingerprint=geometry_fingerprint(ext, A),
                              families=fams, ext=ext, A=A)


def sigma_point_estimate(E1, E2, cal, delta):
    """``S(delta) / S_ref(delta)`` for two linear DtN maps sharing the calibrated geometry."""
    for E in (E1, E2):
        if E.patches is None:
            raise ConfigurationError("DtN maps need boundary patches for localization")
        cal.check(cal.ext, E.A)
        if E.mesh is not cal.ext.parent.mesh:
            raise CalibrationMismatch("DtN map lives on a different grid than the calibration")
    k = cal.index(delta)
    if abs(cal.s_ref[k]) < cal.threshold:
        raise ConfigurationError(f"reference row {cal.s_ref[k]:.3e} below threshold {cal.threshold:.1e}")
    return probe_pairing_row(E1, E2, cal.families[k]) / cal.s_ref[k]


def sigma_profile(E1, E2, cal):
    """Estimates at every calibrated ``delta`` (ascending)."""
    return np.array([sigma_point_estimate(E1, E2, cal, d) for d in cal.deltas])


@dataclass
class RecoveredCurve:
    """Estimates of ``(a1' - a2')(t)`` on a sorted ``t`` grid."""

    t: np.ndarray
    estimates: np.ndarray
    delta: float
    per_delta: np.ndarray              # (len(t), len(deltas))
    deltas: np.ndarray
    truth: np.ndarray                  # forward-computed potential difference at x_*
    diagnostics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t grid must be strictly increasing")

    def rows(self):
        for i, t in enumerate(self.t):
            yield t, self.estimates[i], self.truth[i], self.per_delta[i]


def recover_aprime(oracle, reference, anchor, cal, delta=None, workers=1):
    """Recover ``a1'(t) - a2'(t)`` at ``x_*`` over ``anchor.t``.

    ``oracle`` is the semilinear DtN map of the unknown ``a1``; it is used only through
    its localized Fréchet differential at ``t h``. ``reference`` is the known ``a2``.
    """
    if not np.allclose(cal.ext.patches.x0, anchor.x_star):
        raise ConfigurationError("probes must be anchored at the sweep point x_*")
    dom, pat, A = oracle.domain, oracle.patches, oracle.A
    delta = cal.reliable_delta() if delta is None else float(delta)
    k_sel = cal.index(delta)
    ref_map = reference if isinstance(reference, DtnMap) else DtnMap(dom, A, reference, pat, method=oracle.method)
    star = dom.gamma[anchor.star_position]

    def one(t):
        f = anchor.data(t)
        lin1, lin2 = oracle.linearization(f), ref_map.linearization(f)
        row = sigma_profile(lin1, lin2, cal)
        # ground truth from the forward solutions, for diagnostics only
        u1, u2 = oracle.solve(f), ref_map.solve(f)
        truth = float(np.asarray(lin1.sigma)[star] - np.asarray(lin2.sigma)[star])
        return row, truth, float(u1[star]), float(u2[star])

    t_grid = np.asarray(anchor.t, dtype=float)
    results = [None] * t_grid.size
    failures = []

    def guarded(i):
        try:
            return i, one(t_grid[i]), None
        except (SolverError, np.linalg.LinAlgError) as exc:
            return i, None, f"t={t_grid[i]:.4g}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(guarded, range(t_grid.size)))
    else:
        # +-t neighbours share a linearization when the nonlinearity is odd
        order = sorted(range(t_grid.size), key=lambda i: (abs(t_grid[i]), t_grid[i]))
        out = [guarded(i) for i in order]
    for i, res, err in sorted(out, key=lambda r: r[0]):
        results[i] = res
        if err:
            failures.append(err)
            log.warning("recovery failed at %s", err)
    nd = cal.deltas.size
    per = np.array([r[0] if r else np.full(nd, np.nan) for r in results])
    truth = np.array([r[1] if r else np.nan for r in results])
    u_star = np.array([[r[2], r[3]] if r else [np.nan, np.nan] for r in results])
    return RecoveredCurve(
        t=t_grid, estimates=per[:, k_sel].copy(), delta=delta, per_delta=per, deltas=np.array(cal.deltas),
        truth=truth, diagnostics={"u_at_x_star": u_star, "corrector_h1": cal.corrector_norms()},
        failures=failures,
    )


@dataclass
class SampledNonlinearity:
    t: np.ndarray
    values: np.ndarray

    def __call__(self, z):
        return np.interp(z, self.t, self.values)


def integrate_curve(curve, a2, a1_at_zero):
    """``a1(t) = a1(0) + a2(t) - a2(0) + int_0^t (a1' - a2')`` by the trapezoidal rule."""
    t = np.asarray(curve.t, dtype=float)
    zero = np.flatnonzero(t == 0.0)
    if zero.size == 0:
        raise ValueError("the t grid must contain 0")
    d = np.asarray(curve.estimates, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("curve has missing points")
    prim = cumulative_trapezoid(d, t, initial=0.0)
    prim -= prim[zero[0]]
    a2v = np.asarray(a2.eval(t), dtype=float)
    a20 = float(np.asarray(a2.eval(np.zeros(1)))[0])
    return SampledNonlinearity(t=t, values=a1_at_zero + a2v - a20 + prim)


@dataclass
class StabilityTable:
    labels: list
    X: np.ndarray
    Y: np.ndarray
    exponent: float
    slope: float
    C_k: np.ndarray
    C_hat: float
    spread: float
    failures: list = field(default_factory=list)
    rho: float = math.nan   # max |u_{a1}(t h)| over the sweep

    def holds(self):
        mask = self.X > 0
        ok = np.all(self.Y[mask] <= self.C_hat * self.X[mask] ** self.exponent * (1 + 1e-12))
        zero_rows = ~mask
        return bool(ok and np.all(self.Y[zero_rows] == 0.0))


def stability_experiment(a1, family, anchor, domain, A, patches, basis=None, n=3, labels=None,
                         rtol=1e-6, workers=1, method="direct"):
    """Rows ``(X_k, Y_k)``: ``X_k = max_t ||dΛ̃_{a1}^t(0) - dΛ̃_{a2^(k)}^t(0)||``, ``Y_k = max_t |a1' - a2'^(k)|``."""
    A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
    basis = patches.gamma0 if basis is None else basis
    gram = trace_gram(domain)
    t = np.asarray(anchor.t, dtype=float)
    labels = labels or [a.name for a in family]
    exponent = DimensionParams(n).stability_exponent
    E1 = DtnMap(domain, A, a1, patches, method=method)
    # odd nonlinearities give identical potentials at +-t; reuse linearizations by potential bytes
    lin1 = {}
    for tv in t:
        f = anchor.data(tv)
        key = E1.potential_at(f).tobytes()
        if key not in lin1:
            lin1[key] = E1.linearization(f)
    first = [lin1[E1.potential_at(anchor.data(tv)).tobytes()] for tv in t]
    rho = max(float(np.abs(E1.solve(anchor.data(tv))).max()) for tv in t)

    def row(k):
        a2 = family[k]
        E2 = DtnMap(domain, A, a2, patches, method=method)
        norms = {}
        try:
            for i, tv in enumerate(t):
                l1 = first[i]
                s2 = E2.potential_at(anchor.data(tv))
                if np.array_equal(np.asarray(l1.sigma), s2):
                    continue
                key = np.asarray(l1.sigma).tobytes() + s2.tobytes()
                if key not in norms:
                    l2 = E2.linearization(anchor.data(tv))
                    norms[key] = op_norm(localized_difference(l1, l2, basis), gram, basis, rtol=rtol)
            return max(norms.values(), default=0.0), None
        except SolverError as exc:
            return math.nan, f"{labels[k]}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(row, range(len(family))))
    else:
        out = [row(k) for k in range(len(family))]
    X = [x for x, _ in out]
    fails = [err for _, err in out if err]
    Y = [float(np.max(np.abs(a1.deriv(t) - a2.deriv(t)))) for a2 in family]
    X, Y = np.array(X), np.array(Y)
    pos = (X > 0) & (Y > 0) & np.isfinite(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        C_k = np.where(pos, Y / X**exponent, np.nan)
    C_hat = float(np.nanmax(C_k)) if np.any(pos) else 0.0
    spread = float(np.nanmax(C_k) / np.nanmin(C_k)) if np.any(pos) else 1.0
    slope = fit_slope(X[pos], Y[pos]).slope if pos.sum() >= 3 else math.nan
    return StabilityTable(labels=list(labels), X=X, Y=Y, exponent=exponent, slope=slope, C_k=C_k,
                          C_hat=C_hat, spread=spread, failures=fails, rho=rho)
