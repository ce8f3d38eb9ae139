"""Semilinear terms ``a(z)`` with growth metadata and assumption checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Nonlinearity",
    "DimensionParams",
    "AssumptionReport",
    "builtin",
    "BUILTINS",
    "validate_assumptions",
    "running_max_gamma",
]


def _padded_envelope(deriv, s):
    """Running max of ``|a'(+-s)|``, each sample padded by its largest adjacent increment.

    The pad covers a peak falling between two samples of a smooth ``a'``.
    """
    vals = np.maximum(np.abs(deriv(s)), np.abs(deriv(-s)))
    inc = np.abs(np.diff(vals))
    pad = np.zeros_like(vals)
    pad[:-1] = inc
    pad[1:] = np.maximum(pad[1:], inc)
    return np.maximum.accumulate(vals + pad)


def running_max_gamma(deriv, zmax=10.0, samples=4001):
    """Nondecreasing majorant of ``|a'|`` from a padded running max over ``|z| <= zmax``."""
    s = np.linspace(0.0, zmax, samples)
    env = _padded_envelope(deriv, s)

    def gamma(r):
        r = np.abs(np.asarray(r, dtype=float))
        # value at the first sample at or beyond r keeps the step function above |a'|
        out = env[np.clip(np.searchsorted(s, r, side="left"), 0, s.size - 1)]
        far = r > zmax
        if np.any(far):
            # extend over [zmax, max r] on a grid with the same spacing
            step = s[1] - s[0]
            ext = np.arange(zmax, r[far].max() + 2 * step, step)
            ext_env = np.maximum(_padded_envelope(deriv, ext), env[-1])
            out[far] = ext_env[np.clip(np.searchsorted(ext, r[far], side="left"), 0, ext.size - 1)]
        return out

    return gamma


@dataclass(frozen=True)
class Nonlinearity:
    """``a`` and ``a'`` with the constants of the growth and derivative assumptions.

    ``c_lower`` is the constant in ``a'(z) >= -c_lower``; ``gamma`` majorizes ``|a'(z)|``
    as a function of ``|z|``.
    """

    name: str
    eval: Callable
    deriv: Callable
    alpha: float
    mu1: float
    mu2: float
    c_lower: float
    gamma: Callable = None
    params: dict = field(default_factory=dict)
    second: Callable = None

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", running_max_gamma(self.deriv))

    def __call__(self, z):
        return self.eval(np.asarray(z, dtype=float))

    def is_linear(self):
        return self.name in ("zero", "linear")

    def spec(self):
        return {"name": self.name, **self.params}


def _const(value):
    def f(r):
        return np.full(np.shape(r), float(value))
    return f


def _zero():
    return Nonlinearity(
        "zero", lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        alpha=0.0, mu1=1.0, mu2=1.0, c_lower=0.0, gamma=_const(1.0),
        second=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
    )


def _linear(lam=1.0):
    lam = float(lam)
    return Nonlinearity(
        "linear", lambda z: lam * np.asarray(z, dtype=float),
        lambda z: np.full(np.shape(z), lam),
        alpha=1.0, mu1=1.0, mu2=abs(lam) if lam else 1.0, c_lower=max(0.0, -lam),
        gamma=_const(abs(lam) if lam else 1.0), params={"lam": lam},
        second=lambda z: np.zeros(np.shape(z)),
    )


def _cubic(c3=1.0, c1=0.0):
    c3, c1 = float(c3), float(c1)
    # |c3 z^3 + c1 z| <= |c1| + (|c3| + |c1|)|z|^3
    return Nonlinearity(
        "cubic", lambda z: c3 * np.asarray(z, dtype=float) ** 3 + c1 * np.asarray(z, dtype=float),
        lambda z: 3.0 * c3 * np.asarray(z, dtype=float) ** 2 + c1,
        alpha=3.0, mu1=max(abs(c1), 1.0), mu2=(abs(c3) + abs(c1)) or 1.0,
        c_lower=max(0.0, -c1) if c3 >= 0 else math.inf,
        gamma=lambda r: 3.0 * abs(c3) * np.asarray(r, dtype=float) ** 2 + abs(c1),
        params={"c3": c3, "c1": c1},
        second=lambda z: 6.0 * c3 * np.asarray(z, dtype=float),
    )


def _sine(mu=1.0):
    mu = float(mu)
    return Nonlinearity(
        "sine", lambda z: mu * np.sin(z), lambda z: mu * np.cos(z),
        alpha=0.0, mu1=abs(mu) or 1.0, mu2=abs(mu) or 1.0, c_lower=abs(mu),
        gamma=_const(abs(mu) or 1.0), params={"mu": mu},
        second=lambda z: -mu * np.sin(z),
    )


def _logistic(mu=1.0):
    mu = float(mu)

    def sig(z):
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))

    return Nonlinearity(
        "logistic", lambda z: mu * (sig(z) - 0.5), lambda z: mu * sig(z) * (1.0 - sig(z)),
        alpha=0.0, mu1=abs(mu) / 2 or 1.0, mu2=abs(mu) / 2 or 1.0,
        c_lower=abs(mu) / 4 if mu < 0 else 0.0,
        gamma=_const(abs(mu) / 4 or 1.0), params={"mu": mu},
        second=lambda z: mu * sig(z) * (1.0 - sig(z)) * (1.0 - 2.0 * sig(z)),
    )


BUILTINS = {
    "zero": _zero,
    "linear": _linear,
    "cubic": _cubic,
    "sine": _sine,
    "logistic": _logistic,
}


def builtin(name, **params):
    """Named nonlinearity: ``zero``, ``linear(lam)``, ``cubic(c3, c1)``, ``sine(mu)``, ``logistic(mu)``."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


def perturbed(base, eps, name="bump"):
    """``base + eps * z exp(-z^2)``; adds ``eps (1 - 2 z^2) exp(-z^2)`` to the derivative."""
    eps = float(eps)

    def b(z):
        z = np.asarray(z, dtype=float)
        return z * np.exp(-z * z)

    def db(z):
        z = np.asarray(z, dtype=float)
        return (1.0 - 2.0 * z * z) * np.exp(-z * z)

    def d2b(z):
        z = np.asarray(z, dtype=float)
        return (4.0 * z**3 - 6.0 * z) * np.exp(-z * z)

    # |db| <= 1 and db >= -2 exp(-3/2)
    return Nonlinearity(
        f"{base.name}+{name}",
        lambda z: base.eval(z) + eps * b(z),
        lambda z: base.deriv(z) + eps * db(z),
        alpha=base.alpha, mu1=base.mu1 + abs(eps), mu2=base.mu2,
        c_lower=base.c_lower + (2.0 * math.exp(-1.5) * eps if eps > 0 else abs(eps)),
        gamma=lambda r: base.gamma(r) + abs(eps),
        params={"base": base.spec(), "eps": eps},
        second=(lambda z: base.second(z) + eps * d2b(z)) if base.second else None,
    )


@dataclass(frozen=True)
class DimensionParams:
    """Exponents attached to the dimension: admissible growth ``alpha_n`` and Hölder ``beta_n``."""

    n: int
    p: float | None = None
    r: float | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n >= 3 required")
        if self.n >= 4:
            if self.p is None or not (self.n / 2 < self.p < self.n):
                raise ValueError("n >= 4 needs n/2 < p < n")
            if self.n == 4 and (self.r is None or not (1 <= self.r < 2)):
                raise ValueError("n = 4 needs 1 <= r < 2")

    @property
    def q(self):
        if self.n == 3:
            return None
        if self.n == 4:
            return 2 * self.r / (2 - self.r)
        return 2 * self.n / (self.n - 4)

    @property
    def alpha(self):
        return 3.0 if self.n == 3 else self.q / self.p

    @property
    def beta(self):
        return 0.5 if self.n == 3 else 2.0 - self.n / self.p

    @property
    def stability_exponent(self):
        return self.beta / (2.0 + self.beta)


@dataclass
class AssumptionReport:
    growth_ok: bool
    lower_ok: bool
    gamma_ok: bool
    alpha_ok: bool
    coercive_ok: bool
    worst: dict
    messages: list

    @property
    def ok(self):
        return self.growth_ok and self.lower_ok and self.gamma_ok and self.alpha_ok and self.coercive_ok


def validate_assumptions(a, rho, *, kappa, lambda1, n=3, dims=None, samples=4001):
    """Check growth, derivative lower bound, ``|a'| <= gamma``, ``alpha <= alpha_n`` and ``c < kappa*lambda1``.

    Report-only: never raises on a violation.
    """
    dims = dims or DimensionParams(n)
    z = np.linspace(-rho, rho, samples)
    av, dv = a.eval(z), a.deriv(z)
    growth_excess = np.abs(av) - (a.mu1 + a.mu2 * np.abs(z) ** a.alpha)
    lower_excess = -a.c_lower - dv
    gamma_excess = np.abs(dv) - a.gamma(np.abs(z))
    tol = 1e-12 * (1.0 + np.abs(av).max() + np.abs(dv).max())
    msgs = []
    worst = {}

    def record(key, excess):
        i = int(np.argmax(excess))
        worst[key] = {"z": float(z[i]), "excess": float(excess[i])}
        return bool(excess[i] <= tol)

    growth_ok = record("growth", growth_excess)
    if not growth_ok:
        msgs.append(f"growth |a(z)| <= mu1 + mu2|z|^alpha violated at z={worst['growth']['z']:.4g}")
    lower_ok = record("lower", lower_excess)
    if not lower_ok:
        msgs.append(f"a'(z) >= -c violated at z={worst['lower']['z']:.4g}")
    gamma_ok = record("gamma", gamma_excess)
    if not gamma_ok:
        msgs.append(f"|a'(z)| <= gamma(|z|) violated at z={worst['gamma']['z']:.4g}")
    alpha_ok = a.alpha <= dims.alpha + 1e-12
    if not alpha_ok:
        msgs.append(f"alpha={a.alpha} exceeds alpha_n={dims.alpha}")
    coercive_ok = a.c_lower < kappa * lambda1
    worst["coercivity"] = {"c": float(a.c_lower), "kappa_lambda1": float(kappa * lambda1)}
    if not coercive_ok:
        msgs.append(f"coercivity violated: c = {a.c_lower:.6g} >= kappa*lambda1 = {kappa * lambda1:.6g}")
    return AssumptionReport(growth_ok, lower_ok, gamma_ok, alpha_ok, coercive_ok, worst, msgs)
