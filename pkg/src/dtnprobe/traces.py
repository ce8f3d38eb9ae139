"""Discrete trace norms: the quotient H^{1/2} norm, its dual, and operator norms of boundary maps.

The quotient norm of a trace ``f`` is the energy of its ``(-Δ + 1)``-minimizing
extension, so its Gram matrix ``M`` is the Schur complement of ``G = K + W`` onto the
boundary. ``M`` is never formed at desk scale: ``M f`` needs one interior solve and
``M^{-1} psi`` one solve with the full (Neumann-type) matrix ``G``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .elliptic import LinearSolver, SolverError, mesh_of, stiffness

__all__ = [
    "TraceGram",
    "RestrictedGram",
    "BoundaryOperatorMatrix",
    "trace_gram",
    "h_half_norm",
    "h_minus_half_norm",
    "z_norm",
    "op_norm",
    "seminorm_pm",
]

MAX_DENSE_GAMMA = 4000


class TraceGram:
    """Operator-form Gram matrix ``M`` of the discrete H^{1/2} quotient norm."""

    def __init__(self, domain, method="direct", max_dense=MAX_DENSE_GAMMA):
        self.mesh = mesh = mesh_of(domain)
        self.method = method
        self.max_dense = max_dense
        K = stiffness(mesh, np.eye(mesh.n))
        self.G = (K + sp.diags(mesh.weights)).tocsr()
        I, B = mesh.interior, mesh.boundary
        self._G_II = self.G[I][:, I]
        self._G_IB = self.G[I][:, B]
        self._ext = None
        self._full = None
        self._restricted = {}

    @property
    def size(self):
        return self.mesh.boundary.size

    def extend(self, f):
        """Minimizing extension of ``f`` (columns of a matrix are handled together)."""
        if self._ext is None:
            self._ext = LinearSolver(self._G_II, method=self.method)
        mesh = self.mesh
        f = np.asarray(f, dtype=float)
        v = np.zeros((mesh.num_nodes,) + f.shape[1:])
        v[mesh.boundary] = f
        v[mesh.interior] = self._ext.solve(-(self._G_IB @ f))
        return v

    def apply(self, f):
        """``M f``."""
        return (self.G @ self.extend(f))[self.mesh.boundary]

    def norm(self, f):
        f = np.asarray(f, dtype=float)
        if not np.any(f):
            return 0.0
        v = self.extend(f)
        return float(np.sqrt(max(v @ (self.G @ v), 0.0)))

    def solve(self, psi):
        """``M^{-1} psi`` via the full system with ``psi`` as boundary load."""
        if self._full is None:
            self._full = LinearSolver(self.G, method=self.method)
        mesh = self.mesh
        psi = np.asarray(psi, dtype=float)
        rhs = np.zeros((mesh.num_nodes,) + psi.shape[1:])
        rhs[mesh.boundary] = psi
        return self._full.solve(rhs)[mesh.boundary]

    def dual_norm(self, psi):
        psi = np.asarray(psi, dtype=float)
        if not np.any(psi):
            return 0.0
        return float(np.sqrt(max(psi @ self.solve(psi), 0.0)))

    def dense(self):
        """Dense ``M`` (guarded by ``max_dense``)."""
        if self.size > self.max_dense:
            raise MemoryError(f"|Gamma| = {self.size} exceeds the dense Gram cap {self.max_dense}; "
                              "use the operator form")
        M = self.apply(np.eye(self.size))
        return 0.5 * (M + M.T)

    def restricted(self, positions):
        key = np.asarray(positions, dtype=np.int64).tobytes()
        if key not in self._restricted:
            self._restricted[key] = RestrictedGram(self, np.asarray(positions, dtype=np.int64))
        return self._restricted[key]


class RestrictedGram:
    """``M0 = M[S, S]`` for a set ``S`` of trace positions (e.g. the nodes of Gamma_0)."""

    def __init__(self, gram, positions):
        self.gram = gram
        self.positions = positions
        self._solver = None
        self._dense = None

    @property
    def size(self):
        return self.positions.size

    def embed(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.gram.size,) + x.shape[1:])
        out[self.positions] = x
        return out

    def apply(self, x):
        return self.gram.apply(self.embed(x))[self.positions]

    def solve(self, r):
        if self._dense is not None:
            return sla.cho_solve(self._dense_factor, r)
        if self._solver is None:
            mesh = self.gram.mesh
            nodes = np.concatenate([mesh.interior, mesh.boundary[self.positions]])
            self._solver = (nodes, LinearSolver(self.gram.G[nodes][:, nodes], method=self.gram.method))
        nodes, solver = self._solver
        r = np.asarray(r, dtype=float)
        rhs = np.zeros((nodes.size,) + r.shape[1:])
        rhs[-self.size:] = r
        return solver.solve(rhs)[-self.size:]

    def dense(self):
        if self._dense is None:
            M0 = self.apply(np.eye(self.size))
            self._dense = 0.5 * (M0 + M0.T)
            self._dense_factor = sla.cho_factor(self._dense)
        return self._dense


@dataclass
class BoundaryOperatorMatrix:
    """Matrix ``T`` whose column ``j`` is the functional produced by the trace ``basis[:, j]``.

    ``basis`` is either an index array into the Gamma ordering (nodal hat functions) or
    a dense ``|Gamma| x k`` matrix of traces.
    """

    T: np.ndarray
    basis: np.ndarray

    @property
    def nodal(self):
        return self.basis.ndim == 1


def trace_gram(domain, method="direct"):
    """Cached :class:`TraceGram` of a domain."""
    mesh = mesh_of(domain)
    key = ("trace_gram", method)
    if key not in mesh._cache:
        mesh._cache[key] = TraceGram(mesh, method=method)
    return mesh._cache[key]


def _gram(obj):
    return obj if isinstance(obj, TraceGram) else trace_gram(obj)


def h_half_norm(domain_or_gram, f):
    """Discrete ``min { ||v||_{H^1} : v = f on Gamma }``."""
    return _gram(domain_or_gram).norm(f)


def h_minus_half_norm(domain_or_gram, psi):
    """Dual norm ``sqrt(psi^T M^{-1} psi)``."""
    return _gram(domain_or_gram).dual_norm(psi)


def z_norm(domain_or_gram, f):
    """Stronger-than-H^{1/2} proxy: H^{1/2} norm plus the surface-gradient seminorm of ``f``."""
    gram = _gram(domain_or_gram)
    mesh = gram.mesh
    key = "surface_edges"
    if key not in mesh._cache:
        K = stiffness(mesh, np.eye(mesh.n))
        B = mesh.boundary
        sub = sp.triu(K[B][:, B], k=1).tocoo()
        mesh._cache[key] = (sub.row, sub.col)
    p, q = mesh._cache[key]
    f = np.asarray(f, dtype=float)
    surf = np.sum((f[p] - f[q]) ** 2) * mesh.h ** (mesh.n - 3)
    return float(np.sqrt(gram.norm(f) ** 2 + surf))


def _domain_gram(gram, basis):
    basis = np.asarray(basis)
    if basis.ndim == 1:
        return gram.restricted(basis)
    G0 = basis.T @ gram.apply(basis)
    G0 = 0.5 * (G0 + G0.T)
    return _DenseGram(G0)


class _DenseGram:
    def __init__(self, G0):
        self.G0 = G0
        self.size = G0.shape[0]
        self._factor = sla.cho_factor(G0)

    def apply(self, x):
        return self.G0 @ x

    def solve(self, r):
        return sla.cho_solve(self._factor, r)

    def dense(self):
        return self.G0


def op_norm(T, gram, basis=None, rtol=1e-8, maxiter=500, seed=0, return_vector=False):
    """``max_x ||T x||_{H^{-1/2}} / ||x||_{H^{1/2}}`` over the span of ``basis``.

    Power iteration on ``M0^{-1} T^T M^{-1} T``; on stagnation falls back to a dense
    generalized eigensolve when the domain is small.
    """
    if isinstance(T, BoundaryOperatorMatrix):
        T, basis = T.T, T.basis
    gram = _gram(gram)
    dom = _domain_gram(gram, basis)
    Top = aslinearoperator(T) if not isinstance(T, LinearOperator) else T
    k = Top.shape[1]
    if k != dom.size:
        raise ValueError(f"operator has {k} columns but the basis spans {dom.size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(k)
    x /= np.sqrt(x @ dom.apply(x))
    lam_old = None
    for it in range(maxiter):
        s = Top.rmatvec(gram.solve(Top.matvec(x)))
        lam = float(x @ s)
        if lam <= 0.0 and not np.any(s):
            return (0.0, x) if return_vector else 0.0
        if lam_old is not None and abs(lam - lam_old) <= rtol * abs(lam):
            val = float(np.sqrt(max(lam, 0.0)))
            return (val, x) if return_vector else val
        lam_old = lam
        x = dom.solve(s)
        x /= np.sqrt(x @ dom.apply(x))
    if k <= 2000:
        C = Top.rmatmat(gram.solve(Top.matmat(np.eye(k))))
        C = 0.5 * (C + C.T)
        w, V = sla.eigh(C, dom.dense())
        val = float(np.sqrt(max(w[-1], 0.0)))
        return (val, V[:, -1]) if return_vector else val
    raise SolverError(f"power iteration for the operator norm stagnated after {maxiter} steps")


def sample_ball(domain_or_gram, positions, m, K, seed=0, smooth=2):
    """``K`` random traces supported on ``positions`` with ``z_norm <= m`` (radii spread over (0, m])."""
    gram = _gram(domain_or_gram)
    rng = np.random.Generator(np.random.PCG64(seed))
    mesh = gram.mesh
    out = []
    coords = mesh.coords[mesh.boundary][positions]
    for i in range(K):
        # random smooth combination of Gaussian bumps centered in the patch
        centers = coords[rng.integers(0, len(coords), 3)]
        amps = rng.standard_normal(3)
        width = 0.5 * np.ptp(coords, axis=0).max() / smooth + mesh.h
        vals = sum(a * np.exp(-np.sum((coords - c) ** 2, axis=1) / width**2) for a, c in zip(amps, centers))
        f = np.zeros(gram.size)
        f[positions] = vals
        radius = m * rng.uniform(0.1, 1.0)
        f *= radius / z_norm(gram, f)
        out.append(f)
    return out


def seminorm_pm(dtn_map, m, samples, gram=None, basis=None):
    """Monte Carlo lower estimate of ``sup_{||f|| <= m} ||Λ(f)|| + ||dΛ(f)||_op``.

    ``dtn_map`` provides ``localized(f)`` and ``differential(f)`` (a linear operator over
    ``basis``). Only samples with ``z_norm(f) <= m`` are used, so estimates are nested in ``m``.
    Returns ``(estimate, index_of_maximizer)``; the value under-approximates the supremum.
    """
    gram = gram or trace_gram(dtn_map.domain)
    best, arg = 0.0, None
    for i, f in enumerate(samples):
        if z_norm(gram, f) > m * (1 + 1e-12):
            continue
        val = gram.dual_norm(dtn_map.localized(f)) + op_norm(dtn_map.differential(f), gram, basis)
        if val > best:
            best, arg = val, i
    return best, arg
