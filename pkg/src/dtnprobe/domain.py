"""Masked structured grids for the cube domain, its probe patches and the capped extension.

A mesh is a box of ``shape`` nodes with spacing ``h`` and a boolean mask. Cells are
the elementary boxes whose ``2**n`` corners all lie in the mask; everything the
solvers need (stiffness, lumped weights, boundary sets) is derived from the active
cells, so the cube and the staircase extension share one code path.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "CubeGeometry",
    "Mesh",
    "DomainGrid",
    "BoundaryPatches",
    "ExtendedDomain",
    "build_domain",
    "build_patches",
    "extend_domain",
    "smooth_step",
]


class ConfigurationError(ValueError):
    """Raised when a geometric configuration cannot host the requested construction."""


@dataclass(frozen=True)
class CubeGeometry:
    side: float = 1.0
    origin: tuple[float, ...] | None = None

    def lower(self, n):
        if self.origin is None:
            return np.zeros(n)
        o = np.asarray(self.origin, dtype=float)
        if o.shape != (n,):
            raise ConfigurationError(f"origin must have {n} components")
        return o


def _corner_offsets(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=int)


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Masked box grid. Node ids number the masked nodes in C order."""

    n: int
    h: float
    shape: tuple[int, ...]
    origin: np.ndarray
    node_flat: np.ndarray      # flat box index of every mesh node
    cells: np.ndarray          # (ncells, 2**n) mesh node ids, corners in binary order
    weights: np.ndarray        # lumped volume weight per node
    interior: np.ndarray       # mesh node ids with every surrounding cell active
    boundary: np.ndarray       # remaining mesh node ids, sorted
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_mask(cls, mask, h, origin):
        mask = np.asarray(mask, dtype=bool)
        n = mask.ndim
        shape = mask.shape
        offsets = _corner_offsets(n)
        cell_shape = tuple(s - 1 for s in shape)
        # a cell is active when all of its corners are in the mask
        active = np.ones(cell_shape, dtype=bool)
        for off in offsets:
            sl = tuple(slice(o, o + c) for o, c in zip(off, cell_shape))
            active &= mask[sl]
        # keep only nodes touched by an active cell
        touched = np.zeros(shape, dtype=bool)
        for off in offsets:
            sl = tuple(slice(o, o + c) for o, c in zip(off, cell_shape))
            touched[sl] |= active
        node_flat = np.flatnonzero(touched)
        ids = np.full(touched.size, -1, dtype=np.int64)
        ids[node_flat] = np.arange(node_flat.size)
        ids = ids.reshape(shape)

        lower = np.argwhere(active)
        cells = np.empty((lower.shape[0], len(offsets)), dtype=np.int64)
        for k, off in enumerate(offsets):
            cells[:, k] = ids[tuple((lower + off).T)]

        weights = np.zeros(node_flat.size)
        np.add.at(weights, cells.ravel(), h**n / 2**n)

        # interior: every one of the 2**n cells around the node is active
        padded = np.zeros(tuple(s + 2 for s in cell_shape), dtype=bool)
        padded[tuple(slice(1, -1) for _ in range(n))] = active
        full = np.ones(shape, dtype=bool)
        for off in offsets:
            sl = tuple(slice(o, o + s) for o, s in zip(off, shape))
            full &= padded[sl]
        full_ids = ids[full & touched]
        is_int = np.zeros(node_flat.size, dtype=bool)
        is_int[full_ids] = True

        return cls(
            n=n,
            h=float(h),
            shape=tuple(int(s) for s in shape),
            origin=_readonly(np.asarray(origin, dtype=float)),
            node_flat=_readonly(node_flat),
            cells=_readonly(cells),
            weights=_readonly(weights),
            interior=_readonly(np.flatnonzero(is_int)),
            boundary=_readonly(np.flatnonzero(~is_int)),
        )

    @property
    def num_nodes(self):
        return self.node_flat.size

    @property
    def multi_index(self):
        if "multi_index" not in self._cache:
            mi = np.stack(np.unravel_index(self.node_flat, self.shape), axis=1)
            self._cache["multi_index"] = _readonly(mi)
        return self._cache["multi_index"]

    @property
    def coords(self):
        if "coords" not in self._cache:
            self._cache["coords"] = _readonly(self.origin + self.h * self.multi_index)
        return self._cache["coords"]

    def volume(self):
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """The cube ``Omega`` sampled with ``N`` nodes per axis (all box nodes belong to it)."""

    n: int
    N: int
    side: float
    mesh: Mesh

    @property
    def h(self):
        return self.mesh.h

    @property
    def lower(self):
        return self.mesh.origin

    @property
    def upper(self):
        return self.mesh.origin + self.side

    @property
    def gamma(self):
        """Mesh node ids of the boundary, in the order used by every trace vector."""
        return self.mesh.boundary

    @property
    def gamma_coords(self):
        return self.mesh.coords[self.mesh.boundary]

    def node_class(self):
        """Per-node label: ``"interior"`` or ``"boundary"`` (no exterior nodes in the cube box)."""
        labels = np.full(self.mesh.num_nodes, "interior", dtype=object)
        labels[self.mesh.boundary] = "boundary"
        return labels

    def face_center(self, axis, side):
        c = self.lower + self.side / 2
        c = c.copy()
        c[axis] = self.upper[axis] if side > 0 else self.lower[axis]
        return c

    def on_face(self, axis, side):
        """Boolean over Gamma: trace nodes lying on the given face."""
        x = self.gamma_coords[:, axis]
        target = self.upper[axis] if side > 0 else self.lower[axis]
        return np.abs(x - target) <= 1e-9 * self.side

    def distance_to_closure(self, y):
        """Euclidean distance from ``y`` to the closed cube."""
        y = np.asarray(y, dtype=float)
        d = np.maximum(self.lower - y, 0.0) + np.maximum(y - self.upper, 0.0)
        return float(np.linalg.norm(d))

    def fingerprint(self):
        return (self.n, self.N, round(self.side, 12), tuple(np.round(self.lower, 12)))


def build_domain(n=3, N=17, geometry=None):
    """Classified grid for the axis-aligned cube ``[o, o + side]**n`` with ``N`` nodes per axis."""
    if n < 3:
        raise ConfigurationError("n >= 3 required (the parametrix exponent degenerates at n = 2)")
    if N < 8:
        raise ConfigurationError("N >= 8 required to separate the boundary patches")
    geometry = geometry or CubeGeometry()
    if geometry.side <= 0:
        raise ConfigurationError("cube side must be positive")
    h = geometry.side / (N - 1)
    mesh = Mesh.from_mask(np.ones((N,) * n, dtype=bool), h, geometry.lower(n))
    return DomainGrid(n=n, N=N, side=float(geometry.side), mesh=mesh)


def smooth_step(s, r_in, r_out):
    """Quintic C^2 profile equal to 1 for ``s <= r_in`` and 0 for ``s >= r_out``."""
    s = np.asarray(s, dtype=float)
    q = np.clip((r_out - s) / (r_out - r_in), 0.0, 1.0)
    return q**3 * (10.0 - 15.0 * q + 6.0 * q**2)


@dataclass(frozen=True, eq=False)
class BoundaryPatches:
    """Nested patches ``Gamma_0`` (closed disc of radius r0) and ``Gamma_1`` (open disc r1) on one face."""

    domain: DomainGrid
    axis: int
    side: int
    x0: np.ndarray
    x_star: np.ndarray
    r0: float
    r1: float
    gamma0: np.ndarray   # positions into the Gamma ordering
    gamma1: np.ndarray
    chi: np.ndarray      # cutoff sampled on Gamma

    def face_distance(self):
        """Distance of each trace node to ``x0`` (infinite off the probe face)."""
        d = np.linalg.norm(self.domain.gamma_coords - self.x0, axis=1)
        return np.where(self.domain.on_face(self.axis, self.side), d, np.inf)

    def chi_at(self, s):
        return smooth_step(s, self.r0, self.r1)

    @property
    def normal(self):
        xi = np.zeros(self.domain.n)
        xi[self.axis] = float(self.side)
        return xi


def build_patches(domain, x0=None, r0=0.2, r1=0.35, axis=None, side=1, x_star=None):
    """Concentric discs ``Gamma_0 = Gamma ∩ B̄(x0, r0)``, ``Gamma_1 = Gamma ∩ B(x0, r1)`` and cutoff chi."""
    n = domain.n
    axis = n - 1 if axis is None else int(axis)
    side = 1 if side > 0 else -1
    center = domain.face_center(axis, side)
    x0 = center if x0 is None else np.asarray(x0, dtype=float)
    if np.abs(x0[axis] - center[axis]) > 1e-12:
        raise ConfigurationError("x0 must lie on the probe face")
    h = domain.h
    if not h < r0 < r1:
        raise ConfigurationError(f"need h < r0 < r1, got h={h:.4g}, r0={r0}, r1={r1}")
    tangential = [k for k in range(n) if k != axis]
    edge_gap = min(min(x0[k] - domain.lower[k], domain.upper[k] - x0[k]) for k in tangential)
    if r1 >= edge_gap:
        raise ConfigurationError(f"Gamma_1 radius {r1} reaches a cube edge (gap {edge_gap:.4g})")

    gcoords = domain.gamma_coords
    on_face = domain.on_face(axis, side)
    s = np.where(on_face, np.linalg.norm(gcoords - x0, axis=1), np.inf)
    tol = 1e-9 * domain.side
    gamma0 = np.flatnonzero(s <= r0 + tol)
    gamma1 = np.flatnonzero(s < r1 - tol)
    if gamma0.size == 0:
        raise ConfigurationError("Gamma_0 contains no grid node")
    outside = np.setdiff1d(np.arange(s.size), gamma1)
    # discrete compact inclusion: no Gamma_0 node is an axis neighbour of a node outside Gamma_1
    sep = _min_distance(gcoords[gamma0], gcoords[outside])
    if sep <= h * (1 + 1e-9):
        raise ConfigurationError(
            f"N too small to separate Gamma_0 from Gamma \\ Gamma_1 (gap {sep:.4g} <= h {h:.4g})"
        )
    chi = np.where(on_face, smooth_step(s, r0, r1), 0.0)
    x_star = x0 if x_star is None else np.asarray(x_star, dtype=float)
    return BoundaryPatches(
        domain=domain, axis=axis, side=side, x0=_readonly(x0.copy()), x_star=_readonly(x_star.copy()),
        r0=float(r0), r1=float(r1), gamma0=_readonly(gamma0), gamma1=_readonly(gamma1),
        chi=_readonly(chi),
    )


def _min_distance(a, b, chunk=2048):
    if a.size == 0 or b.size == 0:
        return np.inf
    best = np.inf
    for i in range(0, a.shape[0], chunk):
        d = np.linalg.norm(a[i:i + chunk, None, :] - b[None, :, :], axis=2)
        best = min(best, float(d.min()))
    return best


@dataclass(frozen=True, eq=False)
class ExtendedDomain:
    """``Omega_0 = Omega ∪ B(x0, r0)`` on a taller box; the cap is a staircase half-ball."""

    parent: DomainGrid
    patches: BoundaryPatches
    mesh: Mesh
    omega_nodes: np.ndarray   # mesh ids of the parent mesh nodes (parent node order)
    cap: np.ndarray           # mesh ids outside the closed cube
    xi: np.ndarray
    delta0: float

    @property
    def boundary(self):
        return self.mesh.boundary

    @property
    def r0(self):
        return self.patches.r0

    @property
    def x0(self):
        return self.patches.x0

    def node_class(self):
        """Labels over the box nodes of the extended mesh."""
        labels = np.full(int(np.prod(self.mesh.shape)), "exterior", dtype=object)
        cls = np.full(self.mesh.num_nodes, "extension-interior", dtype=object)
        in_omega = np.zeros(self.mesh.num_nodes, dtype=bool)
        in_omega[self.omega_nodes] = True
        par = self.parent.node_class()
        cls[self.omega_nodes] = par
        cls[self.mesh.boundary[~in_omega[self.mesh.boundary]]] = "boundary"
        labels[self.mesh.node_flat] = cls
        return labels

    def singularity(self, delta):
        """``y_delta = x0 + delta * xi``."""
        if delta <= 0:
            raise ConfigurationError("delta must be positive")
        if delta > self.delta0 * (1 + 1e-12):
            raise ConfigurationError(f"singularity too far: delta={delta} > delta0={self.delta0}")
        return self.x0 + delta * self.xi

    def distance_to_outer_boundary(self, y):
        """Distance from a cap point to the continuum boundary of ``Omega_0``."""
        y = np.asarray(y, dtype=float)
        dom = self.parent
        ax, sd = self.patches.axis, self.patches.side
        d_sphere = self.r0 - np.linalg.norm(y - self.x0)
        # other faces of the cube (the probe face inside the ball is interior to Omega_0)
        dists = [d_sphere]
        for k in range(dom.n):
            for s, plane in ((-1, dom.lower[k]), (1, dom.upper[k])):
                if k == ax and s == sd:
                    # flat part of the probe face outside B(x0, r0)
                    t = np.linalg.norm(np.delete(y - self.x0, ax))
                    off = y[ax] - plane
                    dists.append(float(np.hypot(max(self.r0 - t, 0.0), off)))
                    continue
                dists.append(abs(y[k] - plane))
        return float(min(dists))


def extend_domain(domain, patches, pad=None):
    """Masked mesh for ``Omega ∪ B(x0, r0)``; ``pad`` is the box padding beyond the probe face."""
    n, h = domain.n, domain.h
    r0 = patches.r0
    ax, sd = patches.axis, patches.side
    layers_needed = int(math.ceil(r0 / h - 1e-9)) + 1
    if pad is None:
        layers = layers_needed
    else:
        layers = int(math.floor(pad / h + 1e-9))
        if layers * h < r0:
            raise ConfigurationError(f"cap of radius {r0} leaves the bounding box (padding {pad})")
    shape = [domain.N] * n
    shape[ax] += layers
    origin = domain.lower.copy()
    shift = [0] * n
    if sd < 0:
        origin[ax] -= layers * h
        shift[ax] = layers
    idx = np.indices(shape).reshape(n, -1).T
    x = origin + h * idx
    in_cube = np.all((x >= domain.lower - 1e-9 * h) & (x <= domain.upper + 1e-9 * h), axis=1)
    in_ball = np.linalg.norm(x - patches.x0, axis=1) < r0 - 1e-9 * h
    mask = (in_cube | in_ball).reshape(shape)
    mesh = Mesh.from_mask(mask, h, origin)

    ids = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    ids[mesh.node_flat] = np.arange(mesh.num_nodes)
    parent_mi = domain.mesh.multi_index + np.asarray(shift)
    omega_nodes = ids[np.ravel_multi_index(tuple(parent_mi.T), tuple(shape))]
    if np.any(omega_nodes < 0):
        raise ConfigurationError("extended mesh lost part of the cube")
    cap = np.setdiff1d(np.arange(mesh.num_nodes), omega_nodes)
    xi = patches.normal
    return ExtendedDomain(
        parent=domain, patches=patches, mesh=mesh, omega_nodes=_readonly(omega_nodes),
        cap=_readonly(cap), xi=_readonly(xi), delta0=r0 / 2,
    )
