import numpy as np
import pytest

from dtnprobe import ConfigurationError, build_patches, extend_domain
from dtnprobe.dtn import DtnMap, make_anchor
from dtnprobe.fitting import fit_slope
from dtnprobe.nonlinearity import builtin, perturbed
from dtnprobe.recovery import (
    CalibrationMismatch,
    RecoveredCurve,
    calibrate,
    integrate_curve,
    recover_aprime,
    sigma_point_estimate,
    stability_experiment,
)

MF = 2.0


@pytest.fixture(scope="module")
def cal17(ext17, identity_A):
    return calibrate(ext17, identity_A, min_factor=MF)


def maps(grid, patches, *sigmas):
    return [DtnMap(grid, np.eye(3), s, patches) for s in sigmas]


def test_calibration_profile(cal17):
    assert np.all(cal17.s_ref > 0)
    assert np.all(np.diff(cal17.deltas) > 0)
    assert cal17.reliable_delta() in cal17.deltas
    assert set(cal17.to_dict()) == {"deltas", "s_ref", "fingerprint"}


def test_estimate_of_calibration_pair_is_one(grid17, patches17, cal17):
    E1, E0 = maps(grid17, patches17, 1.0, 0.0)
    for d in cal17.deltas:
        assert sigma_point_estimate(E1, E0, cal17, d) == pytest.approx(1.0, rel=1e-12)


def test_zero_antisymmetric_additive(grid17, patches17, cal17, rng):
    s1 = rng.random(grid17.mesh.num_nodes)
    s2 = rng.random(grid17.mesh.num_nodes)
    Ea, Eb, Ec = maps(grid17, patches17, s1, s2, 0.0)
    d = cal17.deltas[0]
    assert sigma_point_estimate(Ea, Ea, cal17, d) == 0.0
    ab = sigma_point_estimate(Ea, Eb, cal17, d)
    assert sigma_point_estimate(Eb, Ea, cal17, d) == pytest.approx(-ab, rel=1e-12)
    assert sigma_point_estimate(Ea, Ec, cal17, d) == pytest.approx(
        ab + sigma_point_estimate(Eb, Ec, cal17, d), rel=1e-10)


def test_constant_pair_close(grid17, patches17, cal17):
    E2, E1 = maps(grid17, patches17, 2.0, 1.0)
    est = sigma_point_estimate(E2, E1, cal17, cal17.deltas[0])
    assert est == pytest.approx(1.0, rel=0.05)


def test_localization_only_gamma0_matters(grid17, patches17, cal17, rng):
    # potentials that agree near Gamma_0 give nearly the same local estimate
    s = rng.random(grid17.mesh.num_nodes)
    far = np.linalg.norm(grid17.mesh.coords - patches17.x0, axis=1) > 0.9
    s_mod = s.copy()
    s_mod[far] += 0.5
    Ea, Eb, E0 = maps(grid17, patches17, s, s_mod, 0.0)
    d = cal17.deltas[0]
    diff = sigma_point_estimate(Eb, Ea, cal17, d)
    assert abs(diff) < 0.05 * abs(sigma_point_estimate(Ea, E0, cal17, d))


def test_delta_off_grid_and_fingerprint(grid17, patches17, cal17, identity_A, aniso_A):
    E1, E0 = maps(grid17, patches17, 1.0, 0.0)
    with pytest.raises(ConfigurationError, match="not in the calibrated grid"):
        sigma_point_estimate(E1, E0, cal17, 0.5 * cal17.deltas[0])
    Ea = DtnMap(grid17, aniso_A, 1.0, patches17)
    with pytest.raises(CalibrationMismatch):
        sigma_point_estimate(Ea, E0, cal17, cal17.deltas[0])
    other = extend_domain(grid17, build_patches(grid17, r0=0.34, r1=0.44))
    with pytest.raises(CalibrationMismatch):
        cal17.check(other, identity_A)


def test_recover_linear_pair(grid17, patches17, cal17):
    anchor = make_anchor(patches17, tau=1.0, n_t=3)
    E = DtnMap(grid17, np.eye(3), builtin("linear", lam=1.0), patches17)
    curve = recover_aprime(E, builtin("zero"), anchor, cal17)
    np.testing.assert_allclose(curve.estimates, curve.estimates[0], rtol=1e-12)
    assert curve.estimates[0] == pytest.approx(1.0, rel=0.05)
    assert not curve.failures


def test_integrate_curve_examples():
    t = np.linspace(-1, 1, 5)
    curve = RecoveredCurve(t=t, estimates=3 * t**2, delta=0.1, per_delta=np.zeros((5, 1)),
                           deltas=np.array([0.1]), truth=3 * t**2)
    a1 = integrate_curve(curve, builtin("zero"), 0.0)
    # trapezoid sums of 3t^2 with step 1/2: 0.1875 at 0.5, 1.125 at 1
    np.testing.assert_allclose(a1.values, [-1.125, -0.1875, 0.0, 0.1875, 1.125], atol=1e-15)
    lin = RecoveredCurve(t=t, estimates=np.full(5, 2.0), delta=0.1, per_delta=np.zeros((5, 1)),
                         deltas=np.array([0.1]), truth=np.full(5, 2.0))
    np.testing.assert_allclose(integrate_curve(lin, builtin("linear", lam=1.0), 0.5).values, 0.5 + 3 * t)


def test_integrate_curve_needs_zero():
    t = np.array([0.1, 0.2, 0.3])
    curve = RecoveredCurve(t=t, estimates=t, delta=0.1, per_delta=np.zeros((3, 1)),
                           deltas=np.array([0.1]), truth=t)
    with pytest.raises(ValueError, match="contain 0"):
        integrate_curve(curve, builtin("zero"), 0.0)
    with pytest.raises(ValueError):
        RecoveredCurve(t=t[::-1], estimates=t, delta=0.1, per_delta=np.zeros((3, 1)),
                       deltas=np.array([0.1]), truth=t)


def test_stability_zero_row(grid9):
    pat = build_patches(grid9, r0=0.3, r1=0.4)
    anchor = make_anchor(pat, n_t=3)
    a1 = builtin("cubic", c3=1.0, c1=1.0)
    fam = [a1, perturbed(a1, 0.2)]
    tab = stability_experiment(a1, fam, anchor, grid9, np.eye(3), pat, labels=["same", "eps=0.2"])
    assert tab.X[0] == 0.0 and tab.Y[0] == 0.0
    assert tab.X[1] > 0 and tab.Y[1] > 0
    assert tab.holds()
    # max principle: solutions stay within the data range
    assert 0 < tab.rho <= anchor.tau + 1e-12


def test_fit_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_slope(x, 3 * x**1.5)
    assert fit.slope == pytest.approx(1.5) and fit.r2 == pytest.approx(1.0)
    slope, intercept, r2 = fit
    assert intercept == pytest.approx(np.log(3))
    with pytest.raises(ValueError):
        fit_slope(x[:2], x[:2])
