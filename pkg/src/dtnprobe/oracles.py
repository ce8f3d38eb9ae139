"""Dense reference computations for small grids.

The oracles rebuild the discrete energy from per-cell gradient rows and solve with
dense Cholesky or LU factorizations, so they share no assembly or solver code with
the sparse path. They are slow by design and guarded to at most 1728 unknowns.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .elliptic import Conductivity, SolverError, mesh_of
from .fitting import fit_slope

__all__ = [
    "OracleResult",
    "MAX_ORACLE_NODES",
    "dense_energy_matrix",
    "dense_solve_oracle",
    "dense_newton_oracle",
    "dense_flux",
    "dense_gram",
    "frechet_oracle",
    "identity_oracle",
    "digest",
    "oracle_case",
]

MAX_ORACLE_NODES = 1728


@dataclass
class OracleResult:
    name: str
    inputs_digest: str
    reference: dict
    tolerance: float
    passed: bool | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def digest(*arrays, **meta):
    """SHA-256 over array bytes and JSON metadata."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    h.update(json.dumps(meta, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _guard(mesh):
    if mesh.num_nodes > MAX_ORACLE_NODES:
        raise ValueError(f"oracle grids are limited to {MAX_ORACLE_NODES} nodes (got {mesh.num_nodes})")


def dense_energy_matrix(domain, A):
    """Dense ``∫ A grad u . grad v`` from explicit edge-difference rows per cell."""
    mesh = mesh_of(domain)
    _guard(mesh)
    A = A.A if isinstance(A, Conductivity) else np.asarray(A, dtype=float)
    n, h, m = mesh.n, mesh.h, mesh.num_nodes
    lookup = {tuple(mi): k for k, mi in enumerate(mesh.multi_index)}
    K = np.zeros((m, m))
    corners = [np.array(c) for c in itertools.product((0, 1), repeat=n)]
    cell_vol = h**n
    nedge = 2 ** (n - 1)
    for cell in mesh.cells:
        base = mesh.multi_index[cell[0]]
        ids = [lookup[tuple(base + c)] for c in corners]
        pos = {tuple(c): k for k, c in enumerate(corners)}
        # one local row per edge: (u_q - u_p) / h along axis i
        rows = []
        for i in range(n):
            R = []
            for c in corners:
                if c[i]:
                    continue
                q = c.copy()
                q[i] = 1
                r = np.zeros(len(corners))
                r[pos[tuple(c)]] -= 1.0 / h
                r[pos[tuple(q)]] += 1.0 / h
                R.append(r)
            rows.append(np.array(R))
        L = np.zeros((len(corners), len(corners)))
        for i in range(n):
            L += A[i, i] * cell_vol / nedge * (rows[i].T @ rows[i])
        means = [R.mean(axis=0) for R in rows]
        for i in range(n):
            for j in range(n):
                if i != j and A[i, j] != 0.0:
                    L += A[i, j] * cell_vol * np.outer(means[i], means[j])
        K[np.ix_(ids, ids)] += L
    return 0.5 * (K + K.T)


def _weights(mesh):
    # trapezoidal weights recomputed from cell membership
    w = np.zeros(mesh.num_nodes)
    share = mesh.h**mesh.n / 2**mesh.n
    for cell in mesh.cells:
        w[cell] += share
    return w


def dense_solve_oracle(domain, A, sigma, f):
    """Dense Cholesky solution of ``-div(A grad u) + sigma u = 0``, ``u = f`` on the boundary."""
    mesh = mesh_of(domain)
    K = dense_energy_matrix(mesh, A)
    w = _weights(mesh)
    s = np.full(mesh.num_nodes, float(sigma)) if np.isscalar(sigma) else np.asarray(sigma, dtype=float)
    B = K + np.diag(w * s)
    I, G = mesh.interior, mesh.boundary
    u = np.zeros(mesh.num_nodes)
    u[G] = f
    rhs = -B[np.ix_(I, G)] @ np.asarray(f, dtype=float)
    u[I] = sla.cho_solve(sla.cho_factor(B[np.ix_(I, I)]), rhs)
    return u


def dense_newton_oracle(domain, A, a, f, tol=1e-13, maxiter=60, ramp=8):
    """Dense Newton with amplitude ramping for ``-div(A grad u) + a(u) = 0``."""
    mesh = mesh_of(domain)
    K = dense_energy_matrix(mesh, A)
    w = _weights(mesh)
    I, G = mesh.interior, mesh.boundary
    KII, KIG = K[np.ix_(I, I)], K[np.ix_(I, G)]
    wI = w[I]
    f = np.asarray(f, dtype=float)
    ui = np.zeros(I.size)
    for s in np.linspace(1.0 / ramp, 1.0, ramp):
        kf = KIG @ (s * f)
        ref = max(np.linalg.norm(kf), 1e-300)
        for _ in range(maxiter):
            r = KII @ ui + kf + wI * a.eval(ui)
            if np.linalg.norm(r) <= tol * ref:
                break
            J = KII + np.diag(wI * a.deriv(ui))
            ui = ui - sla.lu_solve(sla.lu_factor(J), r)
        else:
            raise SolverError(f"dense Newton failed at ramp amplitude {s:.3g}")
    # one extra step once the tolerance is met
    r = KII @ ui + KIG @ f + wI * a.eval(ui)
    ui = ui - sla.lu_solve(sla.lu_factor(KII + np.diag(wI * a.deriv(ui))), r)
    u = np.zeros(mesh.num_nodes)
    u[G], u[I] = f, ui
    return u


def dense_flux(domain, A, coefficient, u):
    """``(K u + w c(u))`` on boundary nodes, ``c`` a scalar/array potential or a nonlinearity."""
    mesh = mesh_of(domain)
    K = dense_energy_matrix(mesh, A)
    w = _weights(mesh)
    if hasattr(coefficient, "eval"):
        zero = w * coefficient.eval(u)
    else:
        zero = w * np.broadcast_to(np.asarray(coefficient, dtype=float), u.shape) * u
    return (K @ u + zero)[mesh.boundary]


def dense_gram(domain):
    """Dense Schur complement of ``K_lap + W`` onto the boundary."""
    mesh = mesh_of(domain)
    G = dense_energy_matrix(mesh, np.eye(mesh.n)) + np.diag(_weights(mesh))
    I, B = mesh.interior, mesh.boundary
    S = G[np.ix_(B, B)] - G[np.ix_(B, I)] @ sla.solve(G[np.ix_(I, I)], G[np.ix_(I, B)], assume_a="pos")
    return 0.5 * (S + S.T)


def _dual_norm(M, psi):
    return float(np.sqrt(max(psi @ sla.solve(M, psi, assume_a="pos"), 0.0)))


def frechet_oracle(domain, A, a, f0, g, eps, chi=None):
    """Table of ``||(Λ(f0 + e g) - Λ(f0))/e - dΛ(f0) g||_{H^{-1/2}}`` over ``e`` in ``eps``.

    Everything is dense: Newton for the forward maps, Cholesky for the linearization
    and the dual norm of the Schur-complement Gram matrix.
    """
    mesh = mesh_of(domain)
    eps = np.asarray(eps, dtype=float)
    if eps.size < 4:
        raise ValueError("at least 4 step sizes are needed")
    chi = np.ones(mesh.boundary.size) if chi is None else np.asarray(chi)
    M = dense_gram(mesh)
    u0 = dense_newton_oracle(mesh, A, a, f0)
    psi0 = dense_flux(mesh, A, a, u0)
    pot = a.deriv(u0)
    lin = dense_flux(mesh, A, pot, dense_solve_oracle(mesh, A, pot, g))
    errors = []
    for e in eps:
        ue = dense_newton_oracle(mesh, A, a, f0 + e * g)
        q = (dense_flux(mesh, A, a, ue) - psi0) / e
        errors.append(_dual_norm(M, chi * (q - lin)))
    errors = np.array(errors)
    scale = _dual_norm(M, chi * lin)
    fit = fit_slope(eps, errors) if np.all(errors > 0) else None
    return {
        "eps": eps.tolist(),
        "errors": errors.tolist(),
        "relative_errors": (errors / max(scale, 1e-300)).tolist(),
        "slope": None if fit is None else fit.slope,
        "r2": None if fit is None else fit.r2,
        "linearized_norm": scale,
    }


def identity_oracle(domain, A, sigma1, sigma2, f, g):
    """Both sides of ``∫ (sigma1 - sigma2) u1(f) u2(g) = <(Λ1 - Λ2) f, g>`` with dense solves."""
    mesh = mesh_of(domain)
    s1 = np.broadcast_to(np.asarray(sigma1, dtype=float), (mesh.num_nodes,))
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (mesh.num_nodes,))
    w = _weights(mesh)
    u1f = dense_solve_oracle(mesh, A, s1, f)
    u2g = dense_solve_oracle(mesh, A, s2, g)
    u2f = dense_solve_oracle(mesh, A, s2, f)
    volume = float(np.sum(w * (s1 - s2) * u1f * u2g))
    pairing = float(np.asarray(g) @ (dense_flux(mesh, A, s1, u1f) - dense_flux(mesh, A, s2, u2f)))
    return {"volume": volume, "pairing": pairing}


ANISOTROPIC_A = [[1.2, 0.2, 0.1], [0.2, 1.0, 0.05], [0.1, 0.05, 0.9]]


def oracle_case(N, seed, r0=0.3, r1=0.4, A=None):
    """Seeded inputs shared by the fixture generator and the regression tests.

    Returns the domain, patches, ``A`` and random potentials/traces (traces supported in Gamma_0).
    """
    from .domain import build_domain, build_patches

    dom = build_domain(3, N)
    pat = build_patches(dom, r0=r0, r1=r1)
    rng = np.random.Generator(np.random.PCG64(seed))
    m, k = dom.mesh.num_nodes, dom.gamma.size
    A = np.asarray(ANISOTROPIC_A if A is None else A, dtype=float)
    sigma1 = rng.random(m)
    sigma2 = 0.5 * rng.random(m)
    f_full = rng.standard_normal(k)
    f = np.zeros(k)
    g = np.zeros(k)
    f[pat.gamma0] = rng.standard_normal(pat.gamma0.size)
    g[pat.gamma0] = rng.standard_normal(pat.gamma0.size)
    return {"domain": dom, "patches": pat, "A": A, "sigma1": sigma1, "sigma2": sigma2,
            "f_full": f_full, "f": f, "g": g}
