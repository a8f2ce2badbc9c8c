import math

import numpy as np
import pytest

from nilflows import diagnostics as dg
from nilflows.dynamics import FlowConfig, shear_record
from nilflows.lie_core import ValidationError
from nilflows.nilmanifold import haar_sample
from nilflows.observables import (FiberPolynomial, constant, cos_mode, fiber_character_obs,
                                  torus_character, torus_polynomial, torus_transfer)

from conftest import FULL, SQRT2

E = dg.EstimatorConfig


def _sep(a, sa, b, sb, k=2.0):
    """a exceeds b by at least k combined standard errors."""
    return a - b >= k * math.hypot(sa, sb)


@pytest.fixture(scope="module")
def zero_poly(heis_level):
    return FiberPolynomial(heis_level.envelope, {})


# --- configuration and reports ---------------------------------------------

def test_estimator_config_validation_and_digest():
    a = E(samples=10, t_grid=[0, 1])
    assert a.t_grid == (0.0, 1.0)
    assert a.digest() == E(samples=10, t_grid=(0.0, 1.0)).digest()
    assert a.digest() != a.with_(seed=1).digest()
    for bad in (dict(samples=0), dict(C=-1), dict(eta=[0.0]), dict(ell=0)):
        with pytest.raises(ValidationError):
            E(**bad)


def test_curve_report_csv(tmp_path):
    rep = dg.CurveReport([0, 1], [0.5, 0.25], [0.1, 0.1], {"a": 1}, {"x": [1, 2]})
    rep.to_csv(tmp_path / "r.csv", "hash=abc")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# hash=abc" and lines[1] == "t,estimate,stderr,x"
    assert lines[2] == "0,0.5,0.10000000000000001,1"
    with pytest.raises(ValidationError):
        dg.CurveReport([0, 1], [0.5], [0.1, 0.1])


# --- correlations ------------------------------------------------------------

def test_correlation_eigenfunction_modulus(heis_lat, cfg_one):
    chi = torus_character(heis_lat, [1, 0])
    rep = dg.correlation_curve(chi, chi, cfg_one, E(samples=2000, t_grid=[0, 1.5, 10, 100]))
    assert np.allclose(rep.extra["raw_abs"], 1.0, atol=1e-12)


def test_correlation_constant_defect_zero(heis_lat, cfg_nc):
    c = constant(heis_lat, 2.0)
    g = torus_character(heis_lat, [1, 1])
    rep = dg.correlation_curve(c, g, cfg_nc, E(samples=500, t_grid=[0, 3, 20]))
    assert np.all(rep.estimate <= 3 * rep.stderr + 1e-12)


def test_correlation_trend_noncoboundary(heis_lat, cfg_nc):
    n = 10 ** 5 if FULL else 5000
    chi = torus_character(heis_lat, [1, 0]).real()
    rep = dg.correlation_curve(chi, chi, cfg_nc, E(samples=n, t_grid=[5, 200]))
    assert rep.estimate[1] * 3 <= rep.estimate[0]
    assert _sep(rep.estimate[0], rep.stderr[0], rep.estimate[1], rep.stderr[1])


def test_measure_preservation(heis_lat, cfg_nc, alpha_nc):
    r = np.random.default_rng(0)
    for k in range(10):
        m = tuple(int(a) for a in r.integers(-2, 3, 2))
        h = torus_polynomial(heis_lat, cos_mode(m, 1.0)) + alpha_nc * float(r.uniform(-1, 1))
        t = float(r.uniform(0, 50))
        a, b, se = dg.measure_preservation(h, cfg_nc, t, E(samples=1000, seed=k))
        assert abs(a - b) < 3 * se + 1e-12


def test_stderr_scales_with_sqrt_n(heis_lat, cfg_nc):
    chi = torus_character(heis_lat, [1, 0]).real()
    est = E(samples=2000, t_grid=[3.0])
    a = dg.correlation_curve(chi, chi, cfg_nc, est).stderr[0]
    b = dg.correlation_curve(chi, chi, cfg_nc, est.with_(samples=4000)).stderr[0]
    assert abs(a / b - math.sqrt(2)) < 0.1 * math.sqrt(2)


def test_estimators_deterministic(heis_lat, cfg_nc, f_perp):
    est = E(samples=200, seed=4, t_grid=[0, 5])
    chi = torus_character(heis_lat, [1, 0])
    a = dg.correlation_curve(chi, chi, cfg_nc, est)
    b = dg.correlation_curve(chi, chi, cfg_nc, est)
    assert np.array_equal(a.estimate, b.estimate) and np.array_equal(a.stderr, b.stderr)
    # per-worker streams: reproducible at a fixed worker count
    c = dg.correlation_curve(chi, chi, cfg_nc, est.with_(workers=3))
    d = dg.correlation_curve(chi, chi, cfg_nc, est.with_(workers=3))
    assert np.array_equal(c.estimate, d.estimate)


# --- shear integrals ---------------------------------------------------------

def test_shear_integral_trivial(heis_lat, cfg_nc):
    zero = constant(heis_lat, 0.0)
    rep = dg.shear_integral_distribution(zero, "Z", cfg_nc, 0.5, 5.0, E(samples=100, eta=[1e-3, 0.1]))
    assert np.all(rep.estimate == 0)
    one = torus_character(heis_lat, [1, 0])
    rep = dg.shear_integral_distribution(one, "Y", cfg_nc, 0.5, 0.0, E(samples=200, eta=[0.6, 1.0]))
    assert np.all(rep.estimate == 0)


def test_shear_integral_trend(heis_lat, cfg_nc, alpha_nc, heis_level):
    from nilflows.observables import along, reciprocal
    fv = fiber_character_obs((1,), heis_level.envelope, 0.35, 2)
    cob = along(fv, cfg_nc.Xf) * reciprocal(alpha_nc)   # V fv, a mean-zero V-coboundary
    n = 10 ** 4 if FULL else 600
    s = 0.5
    est = E(samples=n, eta=[0.1 * s])
    small = dg.shear_integral_distribution(cob, "Z", cfg_nc, s, 5.0, est)
    large = dg.shear_integral_distribution(cob, "Z", cfg_nc, s, 200.0, est)
    assert _sep(small.estimate[0], small.stderr[0], large.estimate[0], large.stderr[0])


# --- sublevel sets -----------------------------------------------------------

def test_sublevel_trivial(zero_poly, cfg_one, f_perp):
    rep = dg.sublevel_birkhoff(zero_poly, cfg_one, 1.0, [1, 10], E(samples=50))
    assert np.all(rep.estimate == 1)
    rep = dg.sublevel_birkhoff(f_perp, cfg_one, 0.0, [1, 10], E(samples=50))
    assert np.all(rep.estimate == 0)


def test_sublevel_requires_structure(heis_lat, cfg_one, cfg_nc, f_perp):
    with pytest.raises(ValidationError):
        dg.sublevel_birkhoff(torus_character(heis_lat, [1, 0]), cfg_one, 1.0, [1], E(samples=10))
    with pytest.raises(ValidationError):
        dg.sublevel_birkhoff(f_perp, cfg_nc, 1.0, [1], E(samples=10))


def test_sublevel_trend(f_perp, cfg_one):
    n = 10 ** 4 if FULL else 1000
    rep = dg.sublevel_birkhoff(f_perp, cfg_one, 1.0, [10, 1000], E(samples=n))
    assert _sep(rep.estimate[0], rep.stderr[0], rep.estimate[1], rep.stderr[1])


def test_sublevel_shear(cfg_nc, cfg_zinv):
    n = 10 ** 4 if FULL else 1000
    rep = dg.sublevel_shear(cfg_nc, 1.0, [5, 200], E(samples=n))
    assert _sep(rep.estimate[0], rep.stderr[0], rep.estimate[1], rep.stderr[1])
    rep = dg.sublevel_shear(cfg_zinv, 1.0, [5, 50], E(samples=100))
    assert np.all(rep.estimate == 1)


def test_cesaro(zero_poly, f_perp, cfg_one):
    assert dg.cesaro_sublevel(zero_poly, cfg_one, 1.0, 10.0, E(samples=20)) == 1.0
    assert dg.cesaro_sublevel(f_perp, cfg_one, 0.0, 10.0, E(samples=20)) == 0.0
    n = 2000 if FULL else 400
    rep = dg.cesaro_curve(f_perp, cfg_one, 1.0, [100, 1000], E(samples=n))
    assert rep.estimate[1] < rep.estimate[0]
    assert _sep(rep.estimate[0], rep.stderr[0], rep.estimate[1], rep.stderr[1])


def test_progression(zero_poly, f_perp, cfg_one):
    grid = [10, 50, 100, 400]
    est = E(samples=400, t0_grid=grid)
    with pytest.raises(dg.ProgressionNotFound) as exc:
        dg.find_progression(zero_poly, cfg_one, 1.0, 0.9, 2, est)
    assert not exc.value.best.found
    one = dg.find_progression(f_perp, cfg_one, 1.0, 0.2, 1, est)
    sub = dg.sublevel_birkhoff(f_perp, cfg_one, 1.0, grid, est)
    first = next(t for t, p, s in zip(grid, sub.estimate, sub.stderr) if p + 2 * s < 0.2)
    assert one.found and one.t0 == first
    res = dg.find_progression(f_perp, cfg_one, 1.0, 0.2, 3, est.with_(samples=1000))
    assert res.found and np.all(res.estimates + 2 * res.stderr < 0.2)


def test_decoupling(zero_poly, f_perp, cfg_one):
    rep = dg.decoupling_measure(f_perp, cfg_one, 1.0, 0.0, [0, 10, 100], E(samples=30))
    assert np.all(rep.estimate == 1)
    rep = dg.decoupling_measure(zero_poly, cfg_one, 1.0, 50.0, [0, 10], E(samples=30))
    assert np.all(rep.estimate == 1)
    n = 10 ** 4 if FULL else 1000
    rep = dg.decoupling_measure(f_perp, cfg_one, 1.0, 100.0, [0, 1000], E(samples=n))
    assert rep.estimate[1] < 0.5 * rep.estimate[0]
    assert _sep(0.5 * rep.estimate[0], 0.5 * rep.stderr[0], rep.estimate[1], rep.stderr[1])


# --- trigonometric sublevel exponent ----------------------------------------

def test_trig_single_term(f_perp):
    fit = dg.trig_sublevel_exponent(f_perp, [0.1, 0.5, 0.99, 1.0], E(samples=2000))
    assert np.all(fit.mu[:3] == 0) and fit.mu[3] == 1
    assert not fit.ok and fit.note


def test_trig_two_term_exponent(p_deg1):
    grid = [0.02, 0.05, 0.1, 0.2, 0.4]
    fit = dg.trig_sublevel_exponent(p_deg1, grid, E(samples=20000))
    oracle = dg.fiber_sublevel_oracle(p_deg1, grid, E(samples=1000))
    assert fit.ok and 0.5 <= fit.d <= 1.5 and 0.5 <= oracle.d <= 1.5
    arcsin = 2 / math.pi * np.arcsin(np.asarray(grid))
    assert np.allclose(oracle.mu, arcsin, atol=2e-3)
    assert np.all(np.abs(fit.mu - oracle.mu) < 4 * fit.stderr + 1e-3)


# --- D_t ratios --------------------------------------------------------------

def test_quasi_invariance(cfg_nc, cfg_zinv):
    assert dg.quasi_invariance_ratio(cfg_zinv, 10.0, [0.1], E(samples=20)).degenerate
    r = dg.quasi_invariance_ratio(cfg_nc, 10.0, [0.0], E(samples=50))
    assert r.worst == pytest.approx(1.0)
    a = dg.quasi_invariance_ratio(cfg_nc, 100.0, [-0.5, 0.5], E(samples=100))
    b = dg.quasi_invariance_ratio(cfg_nc, 100.0, [-0.5, 0.5], E(samples=200))
    assert np.isfinite(a.worst) and np.isfinite(b.worst)
    assert 0.5 <= b.worst / a.worst <= 2.0
    with pytest.raises(ValidationError):
        dg.quasi_invariance_ratio(cfg_nc, 1.0, [2.0], E(samples=5))


def test_comparison_and_distortion(cfg_nc, cfg_zinv):
    assert dg.comparison_and_distortion(cfg_zinv, 5.0, E(samples=10, delta=[0.5])).degenerate
    c = dg.comparison_and_distortion(cfg_nc, 20.0, E(samples=300, delta=[0.01, 0.5, 1.0, 2.0]))
    assert np.all(c.mu[2:] == 1)
    assert c.mu[0] < c.mu[1]
    assert np.isfinite(c.distortion_worst)


# --- conjugacy and the factor lift -------------------------------------------

@pytest.fixture(scope="module")
def torus_cfgs(torus_lat):
    X = [1.0, SQRT2]
    p = {**cos_mode([1, 0], 0.2), (0, 0): 1.0}
    a1 = torus_polynomial(torus_lat, p)
    u = torus_polynomial(torus_lat, torus_transfer({m: -c for m, c in cos_mode([1, 0], 0.2).items()}, X))
    return FlowConfig(torus_lat, X, a1), FlowConfig(torus_lat, X, 1.0), u


def test_conjugacy_identity(torus_cfgs, torus_lat):
    c1, c2, u = torus_cfgs
    zero = constant(torus_lat, 0.0)
    worst, _ = dg.conjugacy_check(c1, c1, zero, E(samples=20))
    assert worst < 1e-12


def test_conjugacy_transfer_and_control(torus_cfgs):
    c1, c2, u = torus_cfgs
    est = E(samples=100)
    worst, rep = dg.conjugacy_check(c1, c2, u, est)
    assert worst < 1e-5 and rep.t.max() == 50
    bad, _ = dg.conjugacy_check(c1, c2, u * 2.0, est)
    assert bad > 1e-2


def test_factor_lift_trivial(heis_level, heis_lat):
    from nilflows.observables import Pullback
    qlat = heis_level.quotient_lattice
    abar = torus_polynomial(qlat, {**cos_mode([1, 0], 0.2), (0, 0): 1.0})
    cfg = FlowConfig(heis_lat, heis_level.triple.X, Pullback(heis_level, abar), triple=heis_level.triple)
    fb = constant(qlat, 1.5)
    gb = torus_character(qlat, [0, 0])
    rep = dg.factor_lift_check(heis_level, fb, gb, cfg, E(samples=500, t_grid=[0, 2.5]))
    assert np.allclose(rep.extra["lift_re"], 1.5) and np.allclose(rep.extra["quot_re"], 1.5)
    chi = torus_character(qlat, [1, 0])
    rep = dg.factor_lift_check(heis_level, chi, chi, cfg, E(samples=2000, t_grid=[0, 0.37, 2.6]))
    assert np.all(rep.estimate < 3 * rep.stderr)
    with pytest.raises(ValidationError):
        dg.quotient_alpha(heis_level, FlowConfig(heis_lat, heis_level.triple.X,
                                                 torus_polynomial(heis_lat, {(0, 0): 1.0})))
