import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtnprobe import ConfigurationError, build_domain, build_patches, extend_domain
from dtnprobe.domain import CubeGeometry, smooth_step


def test_cube_counts():
    dom = build_domain(3, 17)
    assert dom.mesh.num_nodes == 17**3
    assert dom.mesh.interior.size == 15**3
    assert build_domain(3, 33).gamma.size == 33**3 - 31**3


def test_low_dimension_rejected():
    with pytest.raises(ConfigurationError, match="n >= 3 required"):
        build_domain(2, 17)


def test_weights_sum_to_volume():
    dom = build_domain(3, 9, CubeGeometry(side=2.0))
    assert dom.mesh.volume() == pytest.approx(8.0, rel=1e-14)


def test_boundary_nodes_touch_interior():
    dom = build_domain(3, 9)
    mi = dom.mesh.multi_index
    interior = {tuple(m) for m in mi[dom.mesh.interior]}
    for node in dom.gamma:
        m = mi[node]
        # every boundary node of the cube touches the interior through its cell neighbourhood
        nbrs = {tuple(m + d) for d in np.array(np.meshgrid(*[[-1, 0, 1]] * 3)).reshape(3, -1).T}
        assert nbrs & interior


def test_patches_nested_and_cutoff(grid17):
    pat = build_patches(grid17, r0=0.2, r1=0.35)
    assert set(pat.gamma0) <= set(pat.gamma1)
    assert np.all(pat.chi[pat.gamma0] == 1.0)
    outside = np.setdiff1d(np.arange(grid17.gamma.size), pat.gamma1)
    assert np.all(pat.chi[outside] == 0.0)
    assert np.all((pat.chi >= 0) & (pat.chi <= 1))
    star = np.argmin(np.linalg.norm(grid17.gamma_coords - pat.x0, axis=1))
    assert pat.chi[star] == 1.0
    np.testing.assert_allclose(pat.x0, [0.5, 0.5, 1.0])
    # Gamma_0 lies on the z = 1 face
    assert np.all(np.abs(grid17.gamma_coords[pat.gamma0, 2] - 1.0) < 1e-12)


def test_ball_trace_inside_gamma0(grid17):
    pat = build_patches(grid17, r0=0.2, r1=0.35)
    d = np.linalg.norm(grid17.gamma_coords - pat.x0, axis=1)
    assert set(np.flatnonzero(d <= 0.2)) <= set(pat.gamma0)


def test_patch_separation_enforced():
    dom = build_domain(3, 9)
    with pytest.raises(ConfigurationError):
        build_patches(dom, r0=0.2, r1=0.25)


def test_membership_stable_under_refinement():
    point = np.array([0.5 + 0.125, 0.5, 1.0])
    for N in (17, 33, 65):
        dom = build_domain(3, N)
        pat = build_patches(dom, r0=0.2, r1=0.35)
        k = np.argmin(np.linalg.norm(dom.gamma_coords - point, axis=1))
        assert k in set(pat.gamma0)


def test_cutoff_c1_at_rim():
    r0, r1 = 0.2, 0.35
    h = 1e-4
    s = np.array([r1 - 2 * h, r1 - h, r1, r1 + h])
    v = smooth_step(s, r0, r1)
    # one-sided slopes at the rim agree within O(h)
    assert abs((v[2] - v[1]) / h - (v[3] - v[2]) / h) < h


@given(st.floats(-1, 2), st.floats(-1, 2))
def test_smooth_step_monotone(a, b):
    lo, hi = sorted((a, b))
    assert smooth_step(lo, 0.2, 0.6) >= smooth_step(hi, 0.2, 0.6)
    assert 0.0 <= smooth_step(a, 0.2, 0.6) <= 1.0


def test_extension_geometry(ext17):
    np.testing.assert_array_equal(ext17.xi, [0, 0, 1])
    y = ext17.singularity(0.05)
    np.testing.assert_allclose(y, [0.5, 0.5, 1.05])
    assert ext17.parent.distance_to_closure(y) == pytest.approx(0.05)
    with pytest.raises(ConfigurationError, match="singularity too far"):
        ext17.singularity(ext17.delta0 * 1.01)
    # cap nodes sit above the face inside the ball
    cap = ext17.mesh.coords[ext17.cap]
    assert np.all(cap[:, 2] > 1.0)
    assert np.all(np.linalg.norm(cap - ext17.x0, axis=1) < ext17.r0)


def test_extension_boundary_matches_gamma_outside_ball(ext17):
    par = ext17.parent
    bnd = set(ext17.mesh.boundary)
    gid = ext17.omega_nodes[par.gamma]
    d = np.linalg.norm(par.gamma_coords - ext17.x0, axis=1)
    on_outer = np.array([g in bnd for g in gid])
    # outside the ball every cube boundary node stays on the boundary of the extension
    assert np.all(on_outer[d > ext17.r0 + 1e-12])
    # well inside the ball on the face, nodes become interior
    h = par.h
    assert not np.any(on_outer[(d < ext17.r0 - 2 * h) & par.on_face(2, 1)])


def test_distance_at_delta0(ext17):
    y = ext17.singularity(ext17.delta0)
    assert ext17.distance_to_outer_boundary(y) == pytest.approx(ext17.r0 / 2)
