"""Singular boundary probes built from the Levi parametrix of ``div(A grad .)``.

For a singularity ``y`` just outside the probe face, ``∂_j H(., y)`` is corrected
by the ``A``-harmonic function on the capped domain with the same boundary values.
The difference vanishes on every boundary node of the capped domain, so its trace
on the cube is supported in ``B(x0, r0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import ConfigurationError, smooth_step
from .elliptic import Conductivity, DirichletProblem, h1_norm, stiffness

__all__ = [
    "Parametrix",
    "ProbeFamily",
    "place_singularity",
    "build_probe_family",
    "build_probe",
    "probe_pairing_row",
    "probe_pairings",
    "delta_sweep",
    "hfrak_lp_norm",
    "write_probe_csv",
]


def sphere_area(n):
    """``|S^{n-1}|``."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


class Parametrix:
    """``H(x, y) = [A^{-1}(x-y).(x-y)]^{(2-n)/2} / ((n-2)|S^{n-1}| sqrt(det A))``."""

    def __init__(self, A):
        A = A.A if isinstance(A, Conductivity) else np.asarray(A, dtype=float)
        self.A = A
        self.n = n = A.shape[0]
        if n < 3:
            raise ValueError("parametrix requires n >= 3")
        self.Ainv = np.linalg.inv(A)
        self.const = 1.0 / ((n - 2) * sphere_area(n) * math.sqrt(np.linalg.det(A)))

    def _diff(self, x, y):
        d = np.atleast_2d(np.asarray(x, dtype=float)) - np.asarray(y, dtype=float)
        if np.any(np.linalg.norm(d, axis=1) < 1e-12):
            raise ValueError("parametrix evaluated at its singularity")
        return d

    def __call__(self, x, y):
        d = self._diff(x, y)
        q = np.einsum("ki,ij,kj->k", d, self.Ainv, d)
        out = self.const * q ** ((2 - self.n) / 2)
        return out if np.ndim(x) > 1 else float(out[0])

    def grad(self, x, y, j=None):
        """``∂_{x_j} H(x, y)`` (all components when ``j`` is None)."""
        d = self._diff(x, y)
        Ad = d @ self.Ainv.T
        q = np.einsum("ki,ki->k", d, Ad)
        g = self.const * (2 - self.n) * q[:, None] ** (-self.n / 2) * Ad
        if j is not None:
            g = g[:, j]
        if np.ndim(x) == 1:
            return g[0]
        return g


def place_singularity(ext, delta, min_factor=4.0):
    """``y = x0 + delta * xi`` with the placement conditions checked against the geometry."""
    h = ext.mesh.h
    if delta < min_factor * h * (1 - 1e-12):
        raise ConfigurationError(f"delta={delta:.4g} below {min_factor:g}h={min_factor * h:.4g}: "
                                 "the singularity would not be resolved")
    y = ext.singularity(delta)
    d_cube = ext.parent.distance_to_closure(y)
    d_outer = ext.distance_to_outer_boundary(y)
    tol = 1e-9
    if d_cube < delta * (1 - tol) or d_outer < ext.r0 / 2 * (1 - tol):
        raise ConfigurationError(
            f"placement fails: dist(y, closure)={d_cube:.4g} (need >= {delta:.4g}), "
            f"dist(y, outer boundary)={d_outer:.4g} (need >= {ext.r0 / 2:.4g})"
        )
    return y


@dataclass(frozen=True, eq=False)
class ProbeFamily:
    """The ``n`` probes for one ``delta``: traces on Gamma, correctors on the capped mesh."""

    delta: float
    y: np.ndarray
    traces: np.ndarray        # (|Gamma|, n)
    correctors: np.ndarray    # (|Omega_0 nodes|, n)
    hfrak: np.ndarray         # (|Omega nodes|, n): ∂_j H(., y) on the cube
    corrector_h1: np.ndarray  # (n,) discrete H^1(Omega) norms of the correctors
    with_corrector: bool = True

    @property
    def n(self):
        return self.traces.shape[1]


def _corrector_problem(ext, A):
    key = ("corrector", A.key())
    if key not in ext.mesh._cache:
        ext.mesh._cache[key] = DirichletProblem(ext.mesh, A, 0.0, method="direct")
    return ext.mesh._cache[key]


def build_probe_family(ext, A, delta, min_factor=4.0, corrector=True):
    """All ``n`` probe traces ``f_j = (∂_j H - v_j)|_Gamma`` for one ``delta``."""
    A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
    y = place_singularity(ext, delta, min_factor)
    P = Parametrix(A)
    parent = ext.parent
    mesh0 = ext.mesh
    omega_ids = ext.omega_nodes
    gamma_ids = omega_ids[parent.gamma]
    hfrak = P.grad(mesh0.coords[omega_ids], y)
    if corrector:
        prob = _corrector_problem(ext, A)
        data = P.grad(mesh0.coords[mesh0.boundary], y)
        v = prob.solve(data)
        traces = P.grad(mesh0.coords[gamma_ids], y) - v[gamma_ids]
        vh1 = np.array([h1_norm(parent, v[omega_ids, j]) for j in range(parent.n)])
    else:
        pat = ext.patches
        rho = np.where(parent.on_face(pat.axis, pat.side),
                       smooth_step(np.linalg.norm(parent.gamma_coords - pat.x0, axis=1), 0.5 * pat.r0, pat.r0),
                       0.0)
        traces = rho[:, None] * hfrak[parent.gamma]
        v = np.zeros((mesh0.num_nodes, parent.n))
        vh1 = np.zeros(parent.n)
    outside = np.setdiff1d(np.arange(parent.gamma.size), ext.patches.gamma0)
    traces[outside] = np.where(np.abs(traces[outside]) > 0, traces[outside], 0.0)
    if np.any(traces[outside] != 0.0):
        raise ConfigurationError("probe trace is not supported in Gamma_0")
    for arr in (traces, v, hfrak, vh1):
        arr.setflags(write=False)
    return ProbeFamily(delta=float(delta), y=y, traces=traces, correctors=v, hfrak=hfrak,
                       corrector_h1=vh1, with_corrector=corrector)


def build_probe(ext, A, delta, j, min_factor=4.0):
    """``(f_delta^j, v_delta^j)`` for a single direction ``j`` (0-based)."""
    fam = build_probe_family(ext, A, delta, min_factor)
    return fam.traces[:, j], fam.correctors[:, j]


def probe_pairings(E1, E2, family):
    """``<(Λ̃1 - Λ̃2) f_j, f_j>`` for each probe direction."""
    F = family.traces
    diff = E1.localized(F) - E2.localized(F)
    return np.einsum("kj,kj->j", F, diff)


def probe_pairing_row(E1, E2, family):
    """``S(delta) = delta^{n-2} sum_j <(Λ̃1 - Λ̃2) f_j, f_j>``."""
    return float(family.delta ** (family.n - 2) * probe_pairings(E1, E2, family).sum())


def delta_sweep(ext, count=4, min_factor=4.0):
    """Geometric grid of ``count`` values in ``[max(min_factor h, r0/8), r0/2]``."""
    lo = max(min_factor * ext.mesh.h, ext.r0 / 8)
    hi = ext.delta0
    if lo > hi:
        raise ConfigurationError(f"empty delta range [{lo:.4g}, {hi:.4g}]: refine the grid or enlarge r0")
    return np.geomspace(lo, hi, count)


def hfrak_lp_norm(domain, family, p=None, j=None):
    """Discrete ``L^p(Omega)`` norm of ``∂_j H(., y)`` (default ``p = 2n/(n+2)``; all j summed in quadrature)."""
    n = family.n
    p = 2 * n / (n + 2) if p is None else p
    w = domain.mesh.weights
    vals = family.hfrak if j is None else family.hfrak[:, [j]]
    norms = (np.sum(w[:, None] * np.abs(vals) ** p, axis=0)) ** (1 / p)
    return float(np.sqrt(np.sum(norms**2))) if j is None else float(norms[0])


def parametrix_residual(domain, A, y, min_dist):
    """Relative discrete residual of ``K H(., y)`` at interior nodes farther than ``min_dist`` from ``y``."""
    A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
    mesh = domain.mesh
    P = Parametrix(A)
    Hv = P(mesh.coords, y)
    K = stiffness(mesh, A)
    r = K @ Hv
    I = mesh.interior
    far = I[np.linalg.norm(mesh.coords[I] - y, axis=1) > min_dist]
    scale = np.abs(K.diagonal()[far] * Hv[far])
    return float(np.max(np.abs(r[far]) / scale))


def write_probe_csv(path, domain, family, j):
    """CSV rows ``node, x_1..x_n, value`` for the trace of probe ``j``."""
    coords = domain.gamma_coords
    nodes = domain.gamma
    with open(path, "w") as fh:
        cols = ",".join(f"x{k + 1}" for k in range(domain.n))
        fh.write(f"node,{cols},value\n")
        for node, x, v in zip(nodes, coords, family.traces[:, j]):
            xs = ",".join(f"{c:.17g}" for c in x)
            fh.write(f"{node},{xs},{v:.17g}\n")
