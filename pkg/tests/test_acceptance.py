"""Acceptance suite: ten criteria at their stated sizes and tolerances.

Each test prints (and records for the terminal summary) one line

    [PASS] criterion N <title> (<seconds> s)

or the matching [FAIL] line with the first line of the failure message.
Manifest-driven criteria run the shipped manifests through the CLI and
refuse any output whose hash line does not match the invoking manifest.
"""
import json
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from nilflows import diagnostics as dg
from nilflows.cli import main
from nilflows.diagnostics import FD_QUAD
from nilflows.dynamics import (d_grid, nilflow_step, pushforward_coeffs,
                               tilde_tau, timechange_step)
from nilflows.lie_core import (AlgebraVector, bch, descending_series, jacobi_residual, rank)
from nilflows.manifest import file_sha256
from nilflows.nilmanifold import Lattice, distance, fiber_act, haar_sample
from nilflows.observables import torus_character
from nilflows.specs import filiform4, heisenberg, load_algebra, resolve
from nilflows.towers import build_maximal_tower

from conftest import ACCEPTANCE_LINES, SQRT2
from test_dynamics import _fd_pushforward
from test_lie_core import _matrix_bch


def _report(n, ok, title, elapsed, why=""):
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] criterion {n} {title} ({elapsed:.1f} s)"
    if why:
        line += f": {why}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@contextmanager
def criterion(n, title, budget, spent=0.0):
    """Time the body (plus ``spent`` seconds of shared setup) against budget."""
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        msg = str(exc).strip().splitlines()
        _report(n, False, title, spent + time.perf_counter() - t0, msg[0] if msg else type(exc).__name__)
        raise
    elapsed = spent + time.perf_counter() - t0
    ok = elapsed < budget
    _report(n, ok, title, elapsed, "" if ok else f"over the {budget} s budget")
    assert ok, f"criterion {n} took {elapsed:.1f} s > {budget} s"


def _sep2(hi, se_hi, lo, se_lo):
    return hi - lo >= 2 * np.hypot(se_hi, se_lo)


# ---------------------------------------------------------------------------
# manifest outputs

def _load_run(out, manifest, run):
    """Columns and meta of one run, refusing outputs from another manifest."""
    want = file_sha256(resolve(manifest))
    lines = (out / f"{run}.csv").read_text().splitlines()
    if lines[0] != f"# manifest_sha256={want} run={run}":
        pytest.fail(f"refusing {run}.csv: hash line {lines[0]!r} does not match {manifest}")
    meta = json.loads((out / f"{run}.meta.json").read_text())
    if meta["manifest_sha256"] != want:
        pytest.fail(f"refusing {run}.meta.json: manifest hash mismatch")
    names = lines[1].split(",")
    rows = np.array([[float(v) for v in l.split(",")] for l in lines[2:]])
    return {k: rows[:, i] for i, k in enumerate(names)}, meta


def _run_manifest(tmp_path_factory, name):
    out = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    code = main(["run", name, "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0, f"nilflows run {name} exited with {code}"
    return out, elapsed


@pytest.fixture(scope="session")
def noncob(tmp_path_factory):
    return _run_manifest(tmp_path_factory, "noncoboundary-heisenberg")


# ---------------------------------------------------------------------------

def test_criterion_1_exact_algebra():
    with criterion(1, "exact algebra: Jacobi, BCH associativity, matrix oracle", 10):
        for alg in (heisenberg(), filiform4(), load_algebra("heisenberg5")):
            assert jacobi_residual(alg) == 0
        f = filiform4()
        r = np.random.default_rng(2024)

        def rat():
            return AlgebraVector([Fraction(int(r.integers(-30, 31)), int(r.integers(1, 13)))
                                  for _ in range(f.dim)])

        for _ in range(1000):
            A, B, C = rat(), rat(), rat()
            assert bch(f, bch(f, A, B), C) == bch(f, A, bch(f, B, C))
        h = heisenberg()
        got = bch(h, AlgebraVector([1, 0, 0]), AlgebraVector([0, 1, 0]))
        assert got == AlgebraVector([1, 1, Fraction(1, 2)])
        assert list(got.coords) == _matrix_bch([1, 0, 0], [0, 1, 0])


def test_criterion_2_tower_heights():
    with criterion(2, "tower heights step-1, envelope = g_k over 10 seeds", 30):
        cases = [(heisenberg(), [1, SQRT2, 0]), (filiform4(), [1, SQRT2, 0, 0])]
        for alg, X in cases:
            lat = Lattice(alg)
            Xv = AlgebraVector(X, exact=False)
            step = len(descending_series(alg))
            for seed in range(10):
                t = build_maximal_tower(alg, lat, Xv, seed)
                assert t.height == step - 1
                for lev in t.levels:
                    gk = [list(v) for v in descending_series(lev.algebra)[-1]]
                    env = [list(v) for v in lev.envelope.basis]
                    assert lev.envelope.dim == len(gk) == rank(gk)
                    assert rank(gk + env) == len(gk)


def test_criterion_3_flow_laws(heis_lat, cfg_nc, cfg_zinv, heis_level):
    with criterion(3, "flow group and cocycle laws, fiber commutation", 120):
        r = np.random.default_rng(3)
        n = 1000
        X = cfg_nc.Xf
        x = haar_sample(heis_lat, n, 31)
        s, t = r.uniform(0, 100, n), r.uniform(0, 100, n)
        a = nilflow_step(heis_lat, nilflow_step(heis_lat, x, X, t), X, s)
        b = nilflow_step(heis_lat, x, X, s + t)
        assert np.max(distance(heis_lat, a, b)) < 1e-7
        y = timechange_step(x, cfg_nc, t, FD_QUAD)
        a = timechange_step(y, cfg_nc, s, FD_QUAD)
        b = timechange_step(x, cfg_nc, s + t, FD_QUAD)
        assert np.max(distance(heis_lat, a, b)) < 1e-7
        # additive cocycle of the nilflow time
        lhs = tilde_tau(x, cfg_nc, s + t, FD_QUAD)
        rhs = tilde_tau(x, cfg_nc, t, FD_QUAD) + tilde_tau(y, cfg_nc, s, FD_QUAD)
        assert np.max(np.abs(lhs - rhs)) < 1e-7
        z = heis_level.envelope
        assert cfg_zinv.is_z_invariant(z)
        c = r.uniform(-1, 1, (n, 1))
        a = timechange_step(fiber_act(heis_lat, x, z, c), cfg_zinv, s)
        b = fiber_act(heis_lat, timechange_step(x, cfg_zinv, s), z, c)
        assert np.max(distance(heis_lat, a, b)) < 1e-8


def test_criterion_4_pushforward(heis_lat, cfg_nc, cfg_one, cfg_zinv):
    with criterion(4, "pushforward coefficients vs finite differences", 120):
        x = haar_sample(heis_lat, 100, 41)
        for W in ("Y", "Z"):
            for t in (1.0, 5.0, 12.5, 20.0):
                got = np.array(pushforward_coeffs(x, cfg_nc, W, t))
                fd = _fd_pushforward(cfg_nc, x, W, t)
                assert np.max(np.abs(got - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-4
        for t in (1.0, 20.0):
            a, b, c = pushforward_coeffs(x, cfg_one, "Y", t)
            assert np.all(a == 0) and np.all(b == 1) and np.all(c == -t)
            a, b, c = pushforward_coeffs(x, cfg_one, "Z", t)
            assert np.all(a == 0) and np.all(b == 0) and np.all(c == 1)
            a, b, c = pushforward_coeffs(x, cfg_zinv, "Z", t)
            assert np.all(a == 0) and np.all(b == 0) and np.all(c == 1)


def test_criterion_5_nonmixing_control(heis_lat, cfg_one):
    with criterion(5, "eigenfunction correlation modulus constant under the nilflow", 120):
        chi = torus_character(heis_lat, [1, 0])
        g = chi + torus_character(heis_lat, [0, 1]) * 0.5
        est = dg.EstimatorConfig(samples=10 ** 5, seed=5, t_grid=[1, 10, 100], quad=dg.MC_QUAD)
        rep = dg.correlation_curve(chi, g, cfg_one, est)
        raw, se = rep.extra["raw_abs"], rep.stderr
        assert np.all(se > 0)
        for j in (1, 2):
            assert abs(raw[j] - raw[0]) <= 3 * np.hypot(se[j], se[0])


def test_criterion_6_shearing_trends(noncob, heis_lat, cfg_zinv):
    out, spent = noncob
    with criterion(6, "sublevel F_T and D_t shrink, D = 0 for z-invariant alpha", 600, spent):
        m = "noncoboundary-heisenberg"
        F, meta = _load_run(out, m, "F-sublevel")
        assert meta["config"]["samples"] == 10 ** 4
        i, j = list(F["t"]).index(10), list(F["t"]).index(1000)
        assert _sep2(F["estimate"][i], F["stderr"][i], F["estimate"][j], F["stderr"][j])
        D, meta = _load_run(out, m, "D-sublevel")
        assert meta["config"]["samples"] == 10 ** 4
        i, j = list(D["t"]).index(5), list(D["t"]).index(200)
        assert _sep2(D["estimate"][i], D["stderr"][i], D["estimate"][j], D["stderr"][j])
        x = haar_sample(heis_lat, 1000, 61)
        Dz, _ = d_grid(x, cfg_zinv, [5.0, 200.0])
        assert np.max(np.abs(Dz)) < 1e-8


def test_criterion_7_decoupling_and_defect(noncob):
    out, spent = noncob
    with criterion(7, "decoupling and correlation defect fall below half", 600, spent):
        m = "noncoboundary-heisenberg"
        dc, meta = _load_run(out, m, "decoupling")
        assert meta["config"]["samples"] == 10 ** 4
        T = list(dc["t"])
        big = T.index(1000)
        for small in (T.index(0), T.index(10)):
            e, s = dc["estimate"], dc["stderr"]
            assert e[big] < 0.5 * e[small]
            assert _sep2(e[small], s[small], e[big], s[big])
        cr, meta = _load_run(out, m, "correlation")
        assert meta["config"]["samples"] == 10 ** 4
        i, j = list(cr["t"]).index(5), list(cr["t"]).index(200)
        e, s = cr["estimate"], cr["stderr"]
        assert e[j] < 0.5 * e[i] and _sep2(e[i], s[i], e[j], s[j])


def test_criterion_8_conjugacy(tmp_path_factory):
    with criterion(8, "cohomologous time-changes conjugate on the torus", 60):
        m = "conjugacy-torus2"
        out, _ = _run_manifest(tmp_path_factory, m)
        ok, _ = _load_run(out, m, "conjugacy")
        assert ok["t"].max() == 50 and np.all(ok["t"] <= 50)
        assert np.max(ok["estimate"]) < 1e-5
        ctl, _ = _load_run(out, m, "conjugacy-control")
        assert np.max(ctl["estimate"]) > 1e-2


def test_criterion_9_factor_lift(tmp_path_factory):
    with criterion(9, "factor-lift correlations agree within 3 SE", 120):
        m = "factor-lift-heisenberg"
        out, _ = _run_manifest(tmp_path_factory, m)
        fl, meta = _load_run(out, m, "factor-lift")
        assert meta["config"]["samples"] == 10 ** 5
        assert len(fl["t"]) >= 2 and np.all(fl["stderr"] > 0)
        assert np.all(fl["estimate"] < 3 * fl["stderr"])


def test_criterion_10_sublevel_exponent(tmp_path_factory):
    with criterion(10, "sublevel exponent in [0.5, 1.5] vs the fiber oracle", 60):
        m = "trigsub-heisenberg"
        out, _ = _run_manifest(tmp_path_factory, m)
        _, meta = _load_run(out, m, "trigsub")
        d, d_or = meta["d"], meta["oracle_d"]
        assert meta["fit_ok"]
        assert 0.5 <= d <= 1.5 and 0.5 <= d_or <= 1.5
        assert abs(d - d_or) < 0.1
