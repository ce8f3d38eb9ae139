import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtnprobe import build_domain, build_patches
from dtnprobe.dtn import (
    DtnMap,
    dtn_linearized,
    linearized_matrix,
    localized_difference,
    make_anchor,
    save_matrix,
)
from dtnprobe.nonlinearity import builtin


@pytest.fixture(scope="module")
def patches9(grid9):
    return build_patches(grid9, r0=0.3, r1=0.4)


def test_constant_data_zero_potential_has_zero_total_flux(grid9, aniso_A):
    E = DtnMap(grid9, aniso_A, 0.0)
    psi = E.apply(np.ones(grid9.gamma.size))
    assert abs(psi.sum()) < 1e-13
    assert np.abs(psi).max() < 1e-13


def test_reciprocity(grid9, aniso_A, rng):
    E = DtnMap(grid9, aniso_A, rng.random(grid9.mesh.num_nodes))
    L = E.apply(np.eye(grid9.gamma.size))
    np.testing.assert_allclose(L, L.T, atol=1e-12 * np.abs(L).max())
    w = np.linalg.eigvalsh(0.5 * (L + L.T))
    assert w[0] > 0


def test_linear_nonlinearity_is_linear_map(grid9, patches9, rng):
    f = rng.standard_normal(grid9.gamma.size)
    E1 = DtnMap(grid9, np.eye(3), builtin("linear", lam=1.5), patches9)
    E2 = DtnMap(grid9, np.eye(3), 1.5, patches9)
    np.testing.assert_allclose(E1.apply(f), E2.apply(f), atol=1e-11)


def test_localized_support_and_agreement(grid9, patches9, rng):
    E = DtnMap(grid9, np.eye(3), builtin("cubic", c3=1.0, c1=0.0), patches9)
    f = np.zeros(grid9.gamma.size)
    f[patches9.gamma0] = rng.standard_normal(patches9.gamma0.size)
    psi, loc = E.apply(f), E.localized(f)
    outside = patches9.chi == 0
    assert np.all(loc[outside] == 0)
    # on Gamma_0 the cutoff is 1
    np.testing.assert_array_equal(loc[patches9.gamma0], psi[patches9.gamma0])


def test_forward_cache(grid9, patches9, rng):
    E = DtnMap(grid9, np.eye(3), builtin("sine", mu=1.0), patches9)
    f = rng.standard_normal(grid9.gamma.size)
    E.apply(f)
    E.apply(f.copy())
    assert E.stats["cache_hits"] == 1


@settings(max_examples=8)
@given(st.integers(0, 2**31))
def test_linearized_is_linear_in_g(seed):
    dom = build_domain(3, 9)
    pat = build_patches(dom, r0=0.3, r1=0.4)
    E = DtnMap(dom, np.eye(3), builtin("cubic", c3=1.0, c1=1.0), pat)
    anchor = make_anchor(pat, n_t=3)
    r = np.random.Generator(np.random.PCG64(seed))
    g1, g2 = r.standard_normal((2, dom.gamma.size))
    a = r.uniform(-2, 2)
    lhs = dtn_linearized(E, 1.0, a * g1 + g2, anchor)
    rhs = a * dtn_linearized(E, 1.0, g1, anchor) + dtn_linearized(E, 1.0, g2, anchor)
    assert np.abs(lhs - rhs).max() <= 1e-10 * (1 + np.abs(rhs).max())
    assert np.all(dtn_linearized(E, 1.0, 0 * g1, anchor) == 0)


def test_linearized_matrix_symmetric_on_gamma0(grid9, patches9):
    E = DtnMap(grid9, np.eye(3), builtin("cubic", c3=1.0, c1=0.0), patches9)
    anchor = make_anchor(patches9, n_t=3)
    T = linearized_matrix(E, 1.0, patches9.gamma0, anchor)
    S = T.T[patches9.gamma0]
    np.testing.assert_allclose(S, S.T, atol=1e-12 * np.abs(S).max())


def test_localized_difference_zero_for_equal_maps(grid9, patches9, rng):
    s = rng.random(grid9.mesh.num_nodes)
    E1 = DtnMap(grid9, np.eye(3), s, patches9)
    E2 = DtnMap(grid9, np.eye(3), s.copy(), patches9)
    D = localized_difference(E1, E2, patches9.gamma0)
    assert np.all(D.matvec(rng.standard_normal(patches9.gamma0.size)) == 0)


def test_localized_difference_adjoint(grid9, patches9, rng):
    E1 = DtnMap(grid9, np.eye(3), rng.random(grid9.mesh.num_nodes), patches9)
    E2 = DtnMap(grid9, np.eye(3), 0.0, patches9)
    D = localized_difference(E1, E2, patches9.gamma0)
    x = rng.standard_normal(patches9.gamma0.size)
    y = rng.standard_normal(grid9.gamma.size)
    assert D.matvec(x) @ y == pytest.approx(x @ D.rmatvec(y), rel=1e-10)


def test_anchor(patches9):
    anchor = make_anchor(patches9, tau=2.0, n_t=5)
    assert anchor.h[anchor.star_position] == 1.0
    assert anchor.tau == 2.0 and 0.0 in anchor.t
    assert set(np.flatnonzero(anchor.h)) <= set(patches9.gamma0)


def test_save_matrix(tmp_path, rng):
    T = rng.standard_normal((3, 2))
    save_matrix(tmp_path / "t.npy", T)
    save_matrix(tmp_path / "t.csv", T)
    np.testing.assert_array_equal(np.load(tmp_path / "t.npy"), T)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "t.csv", delimiter=","), T)
