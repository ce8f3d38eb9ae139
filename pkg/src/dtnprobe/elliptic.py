"""Assembly and solution of ``-div(A grad u) + c(u) = g`` on masked grids.

The discrete energy is cell based. On each cell, diagonal entries of ``A`` act on
edge differences (the ``2n+1``-point Laplacian when ``A = I``) and off-diagonal
entries act on cell-averaged gradients. The resulting form is symmetric and positive
semidefinite with constants as its only kernel, and boundary faces automatically
receive half weights. Zero-order terms use the lumped (trapezoidal) node weights.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .nonlinearity import Nonlinearity

log = logging.getLogger(__name__)

__all__ = [
    "Conductivity",
    "PotentialField",
    "SolverError",
    "NewtonDivergence",
    "CoercivityError",
    "LinearSolver",
    "DirichletProblem",
    "NewtonResult",
    "mesh_of",
    "stiffness",
    "assemble",
    "potential_values",
    "solve_linear",
    "solve_semilinear",
    "energy_pairing",
    "h1_norm",
    "estimate_lambda1",
    "richardson_lambda1",
]

DIRECT_LIMIT = 4000


class SolverError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NewtonDivergence(SolverError):
    pass


class CoercivityError(ValueError):
    pass


def mesh_of(obj):
    return getattr(obj, "mesh", obj)


@dataclass(frozen=True, eq=False)
class Conductivity:
    """Constant symmetric matrix with ``kappa|xi|^2 <= A xi.xi`` and ``max|a_ij| <= 1/kappa``."""

    A: np.ndarray
    kappa: float

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be a square matrix")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        lam_min = np.linalg.eigvalsh(A).min()
        if lam_min < self.kappa * (1 - 1e-12):
            raise ValueError(f"ellipticity fails: smallest eigenvalue {lam_min:.6g} < kappa={self.kappa}")
        if np.abs(A).max() > (1 + 1e-12) / self.kappa:
            raise ValueError(f"max|a_ij| = {np.abs(A).max():.6g} exceeds 1/kappa")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_matrix(cls, A, kappa=None):
        A = np.asarray(A, dtype=float)
        if kappa is None:
            bound = min(np.linalg.eigvalsh((A + A.T) / 2).min(), 1.0 / np.abs(A).max())
            kappa = min(bound, math.nextafter(1.0, 0.0))
        return cls(A, kappa)

    @classmethod
    def identity(cls, n=3):
        return cls.from_matrix(np.eye(n))

    @property
    def n(self):
        return self.A.shape[0]

    def key(self):
        return self.A.tobytes()


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Nodal potential with the lower-bound constant ``c_lower`` (``sigma >= -c_lower``)."""

    values: np.ndarray
    c_lower: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def check_lower(self):
        lo = float(self.values.min()) if self.values.size else 0.0
        if lo < -self.c_lower - 1e-12:
            raise CoercivityError(f"potential dips to {lo:.6g} below -c = {-self.c_lower:.6g}")

    def holder_seminorm(self, coords, beta=0.5, pairs=20000, seed=0):
        """Sampled Hölder quotient ``max |s(x) - s(y)| / |x - y|**beta``."""
        rng = np.random.Generator(np.random.PCG64(seed))
        m = self.values.size
        i = rng.integers(0, m, pairs)
        j = rng.integers(0, m, pairs)
        keep = i != j
        d = np.linalg.norm(coords[i[keep]] - coords[j[keep]], axis=1)
        q = np.abs(self.values[i[keep]] - self.values[j[keep]]) / d**beta
        return float(q.max()) if q.size else 0.0


def potential_values(mesh, sigma):
    """Nodal array from a scalar, an array or a :class:`PotentialField`."""
    if isinstance(sigma, PotentialField):
        sigma = sigma.values
    if np.isscalar(sigma):
        return np.full(mesh.num_nodes, float(sigma))
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (mesh.num_nodes,):
        raise ValueError(f"potential has shape {sigma.shape}, expected ({mesh.num_nodes},)")
    return sigma


def _local_stiffness(n, A, h):
    offsets = np.array(list(itertools.product((0, 1), repeat=n)))
    m = len(offsets)
    L = np.zeros((m, m))
    D = np.where(offsets == 1, 1.0, -1.0)      # D[:, i] sums the i-edge differences
    for i in range(n):
        for p in range(m):
            if offsets[p, i]:
                continue
            q = p + 2 ** (n - 1 - i)              # flip bit i (C-order corner numbering)
            d = np.zeros(m)
            d[p], d[q] = -1.0, 1.0
            L += A[i, i] / 2 ** (n - 1) * np.outer(d, d)
    for i in range(n):
        for j in range(n):
            if i != j and A[i, j] != 0.0:
                L += A[i, j] / 4 ** (n - 1) * np.outer(D[:, i], D[:, j])
    return h ** (n - 2) * L


def stiffness(domain, A):
    """Sparse matrix of the discrete ``∫ A grad u . grad v`` over all mesh nodes (cached)."""
    mesh = mesh_of(domain)
    A = A.A if isinstance(A, Conductivity) else np.asarray(A, dtype=float)
    key = ("stiffness", A.tobytes())
    if key not in mesh._cache:
        L = _local_stiffness(mesh.n, A, mesh.h)
        p, q = np.nonzero(L)
        rows = mesh.cells[:, p].ravel()
        cols = mesh.cells[:, q].ravel()
        vals = np.tile(L[p, q], mesh.cells.shape[0])
        K = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.num_nodes,) * 2)
        K.sum_duplicates()
        K = ((K + K.T) * 0.5).tocsr()
        mesh._cache[key] = K
    return mesh._cache[key]


def assemble(domain, A, sigma=0.0, c_lower=None):
    """Full operator ``K + diag(w sigma)`` over all mesh nodes.

    ``c_lower`` (if given, or carried by a :class:`PotentialField`) is checked nodewise.
    """
    mesh = mesh_of(domain)
    if isinstance(sigma, PotentialField):
        sigma.check_lower()
    elif c_lower is not None:
        PotentialField(potential_values(mesh, sigma), c_lower).check_lower()
    s = potential_values(mesh, sigma)
    K = stiffness(mesh, A)
    if not np.any(s):
        return K
    return (K + sp.diags(mesh.weights * s)).tocsr()


class LinearSolver:
    """Factor-once solver for a sparse SPD matrix.

    ``direct`` uses sparse LU, ``amg`` smoothed-aggregation preconditioned CG and
    ``cg`` Jacobi-preconditioned CG. ``auto`` picks ``direct`` for small systems.
    """

    def __init__(self, matrix, method="auto", rtol=1e-13, maxiter=2000, check=1e-8):
        self.matrix = sp.csr_matrix(matrix)
        size = self.matrix.shape[0]
        if method == "auto":
            method = "direct" if size <= DIRECT_LIMIT else "amg"
        self.method = method
        self.rtol = rtol
        self.maxiter = maxiter
        self.check = check
        self.stats = {"method": method, "solves": 0, "iterations": []}
        if size == 0:
            self._solve = lambda b: np.zeros_like(b)
        elif method == "direct":
            lu = spla.splu(self.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
            self._solve = lu.solve
        elif method == "amg":
            import pyamg

            # local (Gershgorin-type) weighting avoids pyamg's randomized spectral radius
            # estimate, so repeated setups give bit-identical solves
            ml = pyamg.smoothed_aggregation_solver(self.matrix, symmetry="symmetric",
                                                   smooth=("jacobi", {"omega": 4.0 / 3.0, "weighting": "local"}))
            self._ml = ml
            self._solve = self._amg_solve
        elif method == "cg":
            self._jacobi = sp.diags(1.0 / self.matrix.diagonal())
            self._solve = self._cg_solve
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def _amg_solve(self, b):
        if b.ndim == 2:
            return np.column_stack([self._amg_solve(b[:, k]) for k in range(b.shape[1])])
        res = []
        x = self._ml.solve(b, tol=self.rtol, accel="cg", maxiter=self.maxiter, residuals=res)
        self.stats["iterations"].append(len(res))
        return x

    def _cg_solve(self, b):
        if b.ndim == 2:
            return np.column_stack([self._cg_solve(b[:, k]) for k in range(b.shape[1])])
        hist = []
        x, info = spla.cg(self.matrix, b, rtol=self.rtol, atol=0.0, maxiter=self.maxiter * 10,
                          M=self._jacobi, callback=lambda xk: hist.append(1))
        self.stats["iterations"].append(len(hist))
        if info != 0:
            r = np.linalg.norm(self.matrix @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise SolverError(f"CG did not converge (info={info}, relres={r:.3e})", [r])
        return x

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.matrix.shape[0] == 0:
            return np.zeros_like(b)
        x = self._solve(b)
        self.stats["solves"] += 1 if b.ndim == 1 else b.shape[1]
        r = self.matrix @ x - b
        bn = np.linalg.norm(b, axis=0)
        rel = np.linalg.norm(r, axis=0) / np.maximum(bn, 1e-300)
        rel = np.where(bn == 0, np.linalg.norm(r, axis=0), rel)
        if np.max(rel) > self.check:
            raise SolverError(f"{self.method} solve residual {np.max(rel):.3e} above {self.check:.1e}",
                              np.atleast_1d(rel).tolist())
        return x


class DirichletProblem:
    """``-div(A grad u) + sigma u = g`` with Dirichlet data on the mesh boundary; factor once, solve many."""

    def __init__(self, domain, A, sigma=0.0, method="auto", c_lower=None, **solver_opts):
        self.mesh = mesh_of(domain)
        self.A = A
        self.sigma = potential_values(self.mesh, sigma)
        self.B = assemble(self.mesh, A, sigma, c_lower=c_lower)
        I, G = self.mesh.interior, self.mesh.boundary
        self.B_II = self.B[I][:, I]
        self.B_IG = self.B[I][:, G]
        self.solver = LinearSolver(self.B_II, method=method, **solver_opts)

    def solve(self, f, g=None):
        """Nodal solution for trace ``f`` (length ``|boundary|``, or a matrix of traces)."""
        mesh = self.mesh
        f = np.asarray(f, dtype=float)
        rhs = -(self.B_IG @ f)
        if g is not None:
            g = np.asarray(g, dtype=float)
            src = mesh.weights * g if g.ndim == 1 else mesh.weights[:, None] * g
            rhs = rhs + src[mesh.interior]
        u = np.zeros((mesh.num_nodes,) + f.shape[1:])
        u[mesh.boundary] = f
        u[mesh.interior] = self.solver.solve(rhs)
        return u

    def flux(self, u):
        """Boundary functional ``(B u)`` restricted to boundary nodes."""
        return (self.B @ u)[self.mesh.boundary]


def solve_linear(domain, A, sigma, f, g=None, method="auto", c_lower=None):
    """Discrete solution of ``-div(A grad u) + sigma u = g`` with ``u = f`` on the boundary."""
    return DirichletProblem(domain, A, sigma, method=method, c_lower=c_lower).solve(f, g)


@dataclass
class NewtonResult:
    u: np.ndarray
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)
    continuation: bool = False
    damped_steps: int = 0


def _newton(mesh, K, a, f, u0, tol, maxiter, method, polish):
    I, G = mesh.interior, mesh.boundary
    w = mesh.weights[I]
    K_II = K[I][:, I]
    K_IG = K[I][:, G]
    kf = K_IG @ f
    u = u0.copy()
    u[G] = f

    def F(ui):
        return K_II @ ui + kf + w * a.eval(ui)

    ui = u[I].copy()
    r = F(ui)
    ref = max(np.linalg.norm(r), np.linalg.norm(kf), 1e-300)
    hist = [np.linalg.norm(r) / ref]
    damped = 0
    for it in range(1, maxiter + 1):
        if hist[-1] <= tol:
            if polish:
                J = K_II + sp.diags(w * a.deriv(ui))
                ui = ui - LinearSolver(J, method=method).solve(r)
                r = F(ui)
                hist.append(np.linalg.norm(r) / ref)
            u[I] = ui
            return NewtonResult(u, True, it - 1, hist, damped_steps=damped)
        J = K_II + sp.diags(w * a.deriv(ui))
        step = LinearSolver(J, method=method).solve(-r)
        lam, rn = 1.0, np.linalg.norm(r)
        while True:
            trial = ui + lam * step
            rt = F(trial)
            if np.linalg.norm(rt) <= (1 - 1e-4 * lam) * rn or lam < 1 / 64:
                break
            lam *= 0.5
        if lam < 1.0:
            damped += 1
        if np.linalg.norm(rt) >= rn and lam < 1 / 64:
            u[I] = ui
            return NewtonResult(u, False, it, hist, damped_steps=damped)
        ui, r = trial, rt
        hist.append(np.linalg.norm(r) / ref)
    u[I] = ui
    return NewtonResult(u, hist[-1] <= tol, maxiter, hist, damped_steps=damped)


def solve_semilinear(domain, A, a, f, tol=1e-10, maxiter=50, method="auto", u0=None,
                     polish=True, full_output=False, continuation_steps=4):
    """Newton solution of ``-div(A grad u) + a(u) = 0`` with ``u = f`` on the boundary.

    Armijo backtracking guards each step; if Newton fails from the initial guess the
    boundary amplitude is ramped in ``continuation_steps`` stages.
    """
    mesh = mesh_of(domain)
    f = np.asarray(f, dtype=float)
    K = stiffness(mesh, A)
    if isinstance(a, Nonlinearity) and a.name in ("zero", "linear"):
        lam = a.params.get("lam", 0.0)
        u = DirichletProblem(mesh, A, lam, method=method).solve(f)
        res = NewtonResult(u, True, 0, [0.0])
        return res if full_output else u
    start = np.zeros(mesh.num_nodes) if u0 is None else np.asarray(u0, dtype=float)
    res = _newton(mesh, K, a, f, start, tol, maxiter, method, polish)
    if not res.converged:
        log.info("Newton failed from initial guess (%d its); switching to continuation", res.iterations)
        u = start.copy()
        hist = list(res.residuals)
        for s in np.linspace(1.0 / continuation_steps, 1.0, continuation_steps):
            res = _newton(mesh, K, a, s * f, u, tol, maxiter, method, polish)
            hist += res.residuals
            if not res.converged:
                raise NewtonDivergence(f"Newton failed at continuation amplitude {s:.3g}", hist)
            u = res.u
        res.continuation = True
        res.residuals = hist
    return res if full_output else res.u


def energy_pairing(domain, A, u, v, coefficient=0.0):
    """Discrete ``∫ A grad u . grad v + c(u) v`` with ``c(u) = sigma u`` or ``a(u)``."""
    mesh = mesh_of(domain)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] != mesh.num_nodes or v.shape[0] != mesh.num_nodes:
        raise ValueError("fields do not live on this grid")
    K = stiffness(mesh, A)
    if isinstance(coefficient, Nonlinearity):
        zero = mesh.weights * coefficient.eval(u)
    else:
        zero = mesh.weights * potential_values(mesh, coefficient) * u
    return float(v @ (K @ u) + v @ zero)


def h1_norm(domain, u):
    """Discrete ``(||grad u||^2 + ||u||^2)^(1/2)``."""
    mesh = mesh_of(domain)
    K = stiffness(mesh, np.eye(mesh.n))
    return float(np.sqrt(u @ (K @ u) + np.sum(mesh.weights * u * u)))


def estimate_lambda1(domain, rtol=1e-6, maxiter=500, seed=0):
    """Smallest Dirichlet eigenvalue of the discrete Laplacian by inverse power iteration."""
    mesh = mesh_of(domain)
    I = mesh.interior
    K = stiffness(mesh, np.eye(mesh.n))[I][:, I]
    W = mesh.weights[I]
    solver = LinearSolver(K, method="direct" if I.size <= 60000 else "amg")
    x = np.random.Generator(np.random.PCG64(seed)).random(I.size) + 0.5
    lam_old = np.inf
    # iterate past rtol so the returned value is accurate well below the stopping test
    for it in range(maxiter):
        x = solver.solve(W * x)
        x /= np.sqrt(np.sum(W * x * x))
        lam = float(x @ (K @ x))
        if abs(lam - lam_old) <= 1e-3 * rtol * lam:
            return lam
        lam_old = lam
    raise SolverError(f"inverse iteration stagnated after {maxiter} steps", [lam])


def richardson_lambda1(n=3, N=33, side=1.0):
    """One Richardson step from grids with spacings ``2h`` and ``h`` (second-order error)."""
    from .domain import CubeGeometry, build_domain

    if (N - 1) % 2:
        raise ValueError("N - 1 must be even for a halved grid")
    fine = estimate_lambda1(build_domain(n, N, CubeGeometry(side)))
    coarse = estimate_lambda1(build_domain(n, (N - 1) // 2 + 1, CubeGeometry(side)))
    return (4.0 * fine - coarse) / 3.0, fine, coarse
