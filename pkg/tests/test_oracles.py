"""Fast solver paths against the frozen dense oracles in tests/fixtures."""
import math

import numpy as np
import pytest

from dtnprobe.dtn import DtnMap
from dtnprobe.elliptic import estimate_lambda1, solve_linear, solve_semilinear
from dtnprobe.nonlinearity import builtin
from dtnprobe.oracles import digest, oracle_case
from dtnprobe.traces import TraceGram

pytestmark = pytest.mark.oracle


@pytest.mark.parametrize("N", [9, 12])
@pytest.mark.parametrize("method", ["direct", "amg", "cg"])
def test_linear_solve(load_fixture, N, method):
    fx = load_fixture(f"dense_solve_N{N}")
    cfg = fx["config"]
    c = oracle_case(cfg["N"], cfg["seed"])
    assert digest(c["A"], c["sigma1"], c["f_full"], **cfg) == fx["inputs_digest"]
    ref = np.array(fx["reference"]["u"])
    u = solve_linear(c["domain"], c["A"], c["sigma1"], c["f_full"], method=method)
    assert np.abs(u - ref).max() <= fx["tolerance"] * np.abs(ref).max()


def test_semilinear_solve(load_fixture):
    fx = load_fixture("dense_newton_cubic_N9")
    cfg = fx["config"]
    c = oracle_case(cfg["N"], cfg["seed"])
    f = cfg["scale"] * c["f_full"]
    assert digest(c["A"], f, **cfg) == fx["inputs_digest"]
    spec = dict(cfg["nonlinearity"])
    a = builtin(spec.pop("name"), **spec)
    u = solve_semilinear(c["domain"], c["A"], a, f)
    ref = np.array(fx["reference"]["u"])
    assert np.abs(u - ref).max() <= fx["tolerance"] * max(1.0, np.abs(ref).max())


def test_identity(load_fixture):
    fx = load_fixture("identity_N9")
    cfg = fx["config"]
    c = oracle_case(cfg["N"], cfg["seed"])
    dom = c["domain"]
    s1, s2 = 0.2 * c["sigma1"], 0.2 * c["sigma2"]
    E1 = DtnMap(dom, c["A"], s1, c["patches"])
    E2 = DtnMap(dom, c["A"], s2, c["patches"])
    w = dom.mesh.weights
    volume = float(np.sum(w * (s1 - s2) * E1.solve(c["f"]) * E2.solve(c["g"])))
    pairing = float(c["g"] @ (E1.apply(c["f"]) - E2.apply(c["f"])))
    ref = fx["reference"]
    tol = fx["tolerance"]
    assert volume == pytest.approx(ref["volume"], rel=tol)
    assert pairing == pytest.approx(ref["pairing"], rel=tol)
    assert fx["passed"]


@pytest.mark.parametrize("name", ["cubic", "sine", "linear"])
def test_frechet(load_fixture, name):
    fx = load_fixture(f"frechet_{name}_N9")
    cfg = fx["config"]
    c = oracle_case(cfg["N"], cfg["seed"])
    spec = dict(cfg["nonlinearity"])
    a = builtin(spec.pop("name"), **spec)
    E = DtnMap(c["domain"], c["A"], a, c["patches"], newton_tol=1e-13)
    gram = TraceGram(c["domain"])
    f0, g = c["f"], c["g"]
    base = E.localized(f0)
    lin = E.linearization(f0).localized(g)
    ref = fx["reference"]
    assert gram.dual_norm(lin) == pytest.approx(ref["linearized_norm"], rel=1e-8)
    errs = np.array([gram.dual_norm((E.localized(f0 + e * g) - base) / e - lin) for e in cfg["eps"]])
    if name == "linear":
        assert np.all(errs / ref["linearized_norm"] < 1e-8)
    else:
        np.testing.assert_allclose(errs, ref["errors"], rtol=fx["tolerance"] * 100)
        assert fx["passed"]


def test_gram(load_fixture):
    fx = load_fixture("trace_gram_N9")
    c = oracle_case(fx["config"]["N"], fx["config"]["seed"])
    gram = TraceGram(c["domain"])
    np.testing.assert_allclose(np.diag(gram.dense()), fx["reference"]["M_diag"], rtol=fx["tolerance"])


def test_lambda1(load_fixture):
    fx = load_fixture("lambda1_N9")
    c = oracle_case(9, 0)
    lam = estimate_lambda1(c["domain"])
    assert lam == pytest.approx(fx["reference"]["lambda1"], rel=fx["tolerance"])
    assert lam < 3 * math.pi**2
