"""Regenerate the frozen oracle fixtures in tests/fixtures.

Every fixture records the generating configuration, a digest of its inputs and the
comparison tolerance. Run from the repository root:

    python3 scripts/freeze_oracles.py
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import sympy

from dtnprobe.nonlinearity import builtin
from dtnprobe.oracles import (
    OracleResult,
    _weights,
    dense_energy_matrix,
    dense_gram,
    dense_newton_oracle,
    dense_solve_oracle,
    digest,
    frechet_oracle,
    identity_oracle,
    oracle_case,
)

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
EPS = [1e-2, 1e-3, 1e-4, 1e-5]


def save(result, config):
    OUT.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    payload["config"] = config
    path = OUT / f"{result.name}.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    print(f"wrote {path.relative_to(OUT.parents[1])}")


def linear_solves():
    for N in (9, 12):
        cfg = {"N": N, "seed": 11}
        c = oracle_case(**cfg)
        u = dense_solve_oracle(c["domain"], c["A"], c["sigma1"], c["f_full"])
        d = digest(c["A"], c["sigma1"], c["f_full"], **cfg)
        save(OracleResult(f"dense_solve_N{N}", d, {"u": u.tolist()}, 1e-9), cfg)


def semilinear_solve():
    cfg = {"N": 9, "seed": 12, "nonlinearity": {"name": "cubic", "c3": 1.0, "c1": 0.0}, "scale": 2.0}
    c = oracle_case(cfg["N"], cfg["seed"])
    f = cfg["scale"] * c["f_full"]
    u = dense_newton_oracle(c["domain"], c["A"], builtin("cubic", c3=1.0, c1=0.0), f)
    d = digest(c["A"], f, **cfg)
    save(OracleResult("dense_newton_cubic_N9", d, {"u": u.tolist()}, 1e-8), cfg)


def identity():
    cfg = {"N": 9, "seed": 13}
    c = oracle_case(**cfg)
    sides = identity_oracle(c["domain"], c["A"], 0.2 * c["sigma1"], 0.2 * c["sigma2"], c["f"], c["g"])
    d = digest(c["A"], c["sigma1"], c["sigma2"], c["f"], c["g"], **cfg)
    rel = abs(sides["volume"] - sides["pairing"]) / abs(sides["volume"])
    save(OracleResult("identity_N9", d, sides, 1e-10, passed=rel <= 1e-10,
                      details={"relative_discrepancy": rel}), cfg)


def frechet():
    for spec in ({"name": "cubic", "c3": 1.0, "c1": 0.0}, {"name": "sine", "mu": 1.0},
                 {"name": "linear", "lam": 1.0}):
        cfg = {"N": 9, "seed": 14, "nonlinearity": spec, "eps": EPS}
        c = oracle_case(cfg["N"], cfg["seed"])
        params = {k: v for k, v in spec.items() if k != "name"}
        a = builtin(spec["name"], **params)
        table = frechet_oracle(c["domain"], c["A"], a, c["f"], c["g"], EPS, chi=c["patches"].chi)
        d = digest(c["A"], c["f"], c["g"], **cfg)
        if spec["name"] == "linear":
            passed = max(table["relative_errors"]) < 1e-8
        else:
            passed = 0.9 <= table["slope"] <= 1.1
        save(OracleResult(f"frechet_{spec['name']}_N9", d, table, 1e-4, passed=passed), cfg)


def gram():
    cfg = {"N": 9, "seed": 15, "columns": 7}
    c = oracle_case(cfg["N"], cfg["seed"])
    dom, pat = c["domain"], c["patches"]
    M = dense_gram(dom)
    f, g = c["f_full"], c["g"]
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    T = rng.standard_normal((dom.gamma.size, pat.gamma0.size)) / dom.gamma.size
    M0 = M[np.ix_(pat.gamma0, pat.gamma0)]
    C = T.T @ sla.solve(M, T, assume_a="pos")
    w = sla.eigh(0.5 * (C + C.T), M0, eigvals_only=True)
    ref = {
        "h_half": float(np.sqrt(f @ M @ f)),
        "h_minus_half": float(np.sqrt(g @ sla.solve(M, g, assume_a="pos"))),
        "op_norm": float(np.sqrt(w[-1])),
        "M_diag": np.diag(M).tolist(),
    }
    d = digest(f, g, T, **cfg)
    save(OracleResult("trace_gram_N9", d, ref, 1e-9), cfg)


def lambda1():
    cfg = {"N": 9}
    c = oracle_case(cfg["N"], 0)
    mesh = c["domain"].mesh
    K = dense_energy_matrix(mesh, np.eye(3))
    I = mesh.interior
    w = sla.eigh(K[np.ix_(I, I)], np.diag(_weights(mesh)[I]), eigvals_only=True, subset_by_index=[0, 0])
    save(OracleResult("lambda1_N9", digest(**cfg), {"lambda1": float(w[0])}, 1e-8), cfg)


def parametrix():
    x, y = sympy.symbols("x y")
    cases = []
    pts = [
        ("identity_unit", np.eye(3), (1, 0, 0)),
        ("diag_4_1_1", np.diag([4, 1, 1]), (1, 0, 0)),
        ("anisotropic", np.array([[2, 1, 0], [1, 2, 0], [0, 0, 3]]), (sympy.Rational(3, 10), -sympy.Rational(1, 5),
                                                                       sympy.Rational(1, 2))),
    ]
    for name, A, d in pts:
        As = sympy.Matrix(A.tolist())
        X = sympy.Matrix(sympy.symbols("x1:4"))
        q = (X.T * As.inv() * X)[0]
        H = q ** sympy.Rational(-1, 2) / (4 * sympy.pi * sympy.sqrt(As.det()))
        sub = dict(zip(X, d))
        grad = [float(sympy.diff(H, xi).subs(sub).evalf(30)) for xi in X]
        cases.append({"name": name, "A": A.tolist(), "x_minus_y": [float(v) for v in d],
                      "H": float(H.subs(sub).evalf(30)), "grad": grad})
    save(OracleResult("parametrix", digest(**{"cases": [c["name"] for c in cases]}), {"cases": cases}, 1e-13),
         {"n": 3})


if __name__ == "__main__":
    linear_solves()
    semilinear_solve()
    identity()
    frechet()
    gram()
    lambda1()
    parametrix()
