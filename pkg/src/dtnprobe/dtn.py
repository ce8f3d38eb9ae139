"""Dirichlet-to-Neumann maps, their cutoff localization and Fréchet differentials.

A boundary functional is stored by its pairings with the nodal trace basis, each
extended by zero into the interior: ``psi[k] = B(u, e_k)``. For a discrete
solution ``u``, the pairing with any other extension of the same trace gives the
same value, because the difference of two extensions lies in the discrete H_0^1
space and the interior rows of ``B u`` vanish.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .domain import smooth_step
from .elliptic import (
    Conductivity,
    DirichletProblem,
    potential_values,
    solve_semilinear,
    stiffness,
)
from .nonlinearity import Nonlinearity

__all__ = [
    "DtnMap",
    "SweepAnchor",
    "make_anchor",
    "dtn_apply",
    "dtn_localized",
    "dtn_linearized",
    "linearized_matrix",
    "localized_difference",
    "save_matrix",
]

LINEARIZATION_CACHE = 4


class DtnMap:
    """DtN map of ``-div(A grad u) + c(u) = 0`` on a cube domain.

    ``coefficient`` is a potential (scalar, nodal array) or a :class:`Nonlinearity`.
    Semilinear forward solutions are cached by trace bytes.
    """

    def __init__(self, domain, A, coefficient, patches=None, method="direct", newton_method="auto",
                 newton_tol=1e-10, cache_size=32):
        self.domain = domain
        self.mesh = domain.mesh
        self.A = A if isinstance(A, Conductivity) else Conductivity.from_matrix(A)
        self.patches = patches
        self.method = method
        self.newton_method = newton_method
        self.newton_tol = newton_tol
        if isinstance(coefficient, Nonlinearity):
            self.nonlinearity = coefficient
            self.sigma = None
        else:
            self.nonlinearity = None
            self.sigma = potential_values(self.mesh, coefficient)
        self._problem = None
        self._cache = OrderedDict()
        self._cache_size = cache_size
        self._lin_cache = OrderedDict()
        self._lock = threading.Lock()
        self.stats = {"forward_solves": 0, "cache_hits": 0}

    @property
    def linear(self):
        return self.nonlinearity is None

    @property
    def problem(self):
        if self._problem is None:
            self._problem = DirichletProblem(self.mesh, self.A, self.sigma, method=self.method)
        return self._problem

    @property
    def chi(self):
        if self.patches is None:
            raise ValueError("localization needs boundary patches")
        return self.patches.chi

    def solve(self, f):
        """Forward solution with trace ``f``."""
        f = np.asarray(f, dtype=float)
        if self.linear:
            self.stats["forward_solves"] += 1
            return self.problem.solve(f)
        key = f.tobytes()
        with self._lock:
            if key in self._cache:
                self.stats["cache_hits"] += 1
                self._cache.move_to_end(key)
                return self._cache[key]
        u = solve_semilinear(self.mesh, self.A, self.nonlinearity, f, tol=self.newton_tol,
                             method=self.newton_method)
        u.setflags(write=False)
        with self._lock:
            self.stats["forward_solves"] += 1
            self._cache[key] = u
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return u

    def flux(self, u):
        """Pairings ``B(u, e_k)`` with the zero-extended nodal trace basis."""
        mesh = self.mesh
        K = stiffness(mesh, self.A)
        if self.linear:
            w = mesh.weights * self.sigma
            zero = w * u if u.ndim == 1 else w[:, None] * u
        else:
            zero = mesh.weights * self.nonlinearity.eval(u)
        return (K @ u + zero)[mesh.boundary]

    def apply(self, f):
        """``Λ(f)`` as pairings against the trace basis; accepts a matrix of traces when linear."""
        return self.flux(self.solve(f))

    def localized(self, f):
        """``χ Λ(f)``: ``psi_χ(φ) = psi(χ φ)``."""
        psi = self.apply(f)
        return psi * self.chi if psi.ndim == 1 else psi * self.chi[:, None]

    def potential_at(self, f):
        """Linearization potential ``a'(u(f))`` (or ``sigma`` for a linear map)."""
        if self.linear:
            return self.sigma
        return self.nonlinearity.deriv(self.solve(f))

    def linearization(self, f):
        """Linear DtN map with potential ``a'(u(f))``; its action is the Fréchet differential at ``f``.

        The last few maps are kept by potential bytes, since each holds a factorization.
        """
        sigma = self.potential_at(f)
        key = np.asarray(sigma).tobytes()
        with self._lock:
            if key in self._lin_cache:
                self._lin_cache.move_to_end(key)
                return self._lin_cache[key]
        lin = DtnMap(self.domain, self.A, sigma, self.patches, method=self.method)
        with self._lock:
            self._lin_cache[key] = lin
            while len(self._lin_cache) > LINEARIZATION_CACHE:
                self._lin_cache.popitem(last=False)
        return lin

    def differential(self, f, basis=None):
        """``dΛ̃(f)`` as a linear operator on nodal coefficients over ``basis`` (default Gamma_0)."""
        lin = self.linearization(f)
        basis = self.patches.gamma0 if basis is None else basis
        return localized_difference(lin, None, basis)


def localized_difference(first, second, basis):
    """Linear operator ``x -> χ (Λ1 - Λ2)(E x)`` over nodal ``basis`` positions (``second`` may be None)."""
    chi = first.chi
    size = first.mesh.boundary.size
    basis = np.asarray(basis)

    def embed(x):
        out = np.zeros((size,) + x.shape[1:])
        out[basis] = x
        return out

    def apply(f):
        psi = first.apply(f)
        if second is not None:
            psi = psi - second.apply(f)
        return psi

    def matvec(x):
        psi = apply(embed(np.asarray(x, dtype=float)))
        return psi * chi if psi.ndim == 1 else psi * chi[:, None]

    def rmatvec(y):
        y = np.asarray(y, dtype=float)
        cy = y * chi if y.ndim == 1 else y * chi[:, None]
        return apply(cy)[basis]

    return LinearOperator((size, basis.size), matvec=matvec, rmatvec=rmatvec,
                          matmat=matvec, rmatmat=rmatvec, dtype=float)


@dataclass(frozen=True, eq=False)
class SweepAnchor:
    """Trace ``h`` supported in Gamma_0 with ``h(x_*) = 1`` and the sweep grid ``t``."""

    h: np.ndarray
    x_star: np.ndarray
    star_position: int
    t: np.ndarray

    def data(self, t):
        return t * self.h

    @property
    def tau(self):
        return float(np.max(np.abs(self.t)))


def make_anchor(patches, tau=1.0, n_t=9, flat=0.5, outer=0.9):
    """Quintic plateau trace: 1 within ``flat*r0`` of ``x_*``, 0 beyond ``outer*r0``."""
    dom = patches.domain
    gc = dom.gamma_coords
    x_star = np.asarray(patches.x_star, dtype=float)
    d = np.linalg.norm(gc - x_star, axis=1)
    pos = int(np.argmin(d))
    if d[pos] > 1e-9 * dom.side:
        raise ValueError("x_* must be a grid node of Gamma")
    on_face = dom.on_face(patches.axis, patches.side)
    r0 = patches.r0
    s = np.where(on_face, d, np.inf)
    h = smooth_step(s, flat * r0, outer * r0)
    outside = np.setdiff1d(np.arange(h.size), patches.gamma0)
    if np.any(h[outside] != 0.0):
        raise ValueError("anchor trace leaks outside Gamma_0")
    h[pos] = 1.0
    h.setflags(write=False)
    t = np.linspace(-tau, tau, n_t)
    if n_t % 2 == 1:
        t[n_t // 2] = 0.0
    return SweepAnchor(h=h, x_star=x_star, star_position=pos, t=t)


def dtn_apply(E, f):
    return E.apply(f)


def dtn_localized(E, f):
    return E.localized(f)


def dtn_linearized(E, t, g, anchor):
    """``dΛ̃^t(0) g``: localized functional of the problem with potential ``a'(u(t h))`` and data ``g``."""
    return E.linearization(anchor.data(t)).localized(g)


def linearized_matrix(E, t, basis, anchor):
    """Columns ``dΛ̃^t(0) basis_j`` for nodal positions (1-D) or explicit traces (2-D)."""
    from .traces import BoundaryOperatorMatrix

    lin = E.linearization(anchor.data(t))
    basis = np.asarray(basis)
    if basis.ndim == 1:
        F = np.zeros((E.mesh.boundary.size, basis.size))
        F[basis, np.arange(basis.size)] = 1.0
    else:
        F = basis
    return BoundaryOperatorMatrix(T=lin.localized(F), basis=basis)


def save_matrix(path, T):
    """Write a matrix as ``.npy`` or ``.csv`` depending on the suffix."""
    path = str(path)
    T = np.asarray(T)
    if path.endswith(".npy"):
        np.save(path, T)
    else:
        np.savetxt(path, T, delimiter=",", fmt="%.17g")
