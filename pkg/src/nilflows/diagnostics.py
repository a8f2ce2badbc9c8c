"""
Monte Carlo and deterministic estimators for time-changed nilflows.

Every estimator draws Haar samples from (samples, seed, workers) of an
EstimatorConfig, evaluates per-sample quantities with the orbit engine of
``dynamics`` and reduces them in a fixed order. Standard errors are the
sample standard deviation over sqrt(n); for indicators that is
sqrt(p (1 - p) / n).

Trend statements (decay of sublevel measures, of correlations, of shear
integrals) are not built in: the estimators return curves and the caller
compares a small-time and a large-time entry with their error bars.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import (FlowConfig, OrbitQuadrature, _triple, birkhoff_integral, d_grid, nilflow_step,
                       tilde_tau_grid, timechange_step)
from .lie_core import ValidationError, _raw
from .nilmanifold import _pts, distance, haar_sample, reduce
from .observables import FiberPolynomial, Observable, Pullback, constant

log = logging.getLogger(__name__)

# Tolerances for Monte Carlo work: the GK error estimate is pessimistic by
# several orders (observed errors ~1e-12 at these settings) and sampling
# error dominates anyway.
MC_QUAD = OrbitQuadrature(rtol=1e-6, atol=1e-8, max_step=0.5)
FD_QUAD = OrbitQuadrature(rtol=1e-10, atol=1e-12, max_step=0.5)
FLOOR = 1e-8


class ProgressionNotFound(RuntimeError):
    """No t0 on the grid satisfied all ell bounds; ``best`` holds the closest candidate."""

    def __init__(self, msg, best):
        super().__init__(msg)
        self.best = best


class ConvergenceError(RuntimeError):
    """A fixed-point iteration did not converge."""


@dataclass(frozen=True)
class EstimatorConfig:
    samples: int = 10 ** 4
    seed: int = 0
    t_grid: tuple = ()
    C: float = 1.0
    sigma: float = 1.0
    eta: tuple = ()
    delta: tuple = ()
    epsilon: float = 0.2
    ell: int = 1
    t0_grid: tuple = ()
    nodes: int = 8
    workers: int = 1
    quad: OrbitQuadrature = MC_QUAD

    def __post_init__(self):
        for name in ("t_grid", "eta", "delta", "t0_grid"):
            object.__setattr__(self, name, tuple(float(a) for a in getattr(self, name)))
        if int(self.samples) < 1:
            raise ValidationError("samples must be >= 1")
        if self.C < 0:
            raise ValidationError("C must be nonnegative")
        if not self.sigma > 0 or not self.epsilon > 0:
            raise ValidationError("sigma and epsilon must be positive")
        if any(a <= 0 for a in self.eta + self.delta):
            raise ValidationError("eta and delta values must be positive")
        if int(self.ell) < 1:
            raise ValidationError("ell must be >= 1")
        if int(self.workers) < 1 or int(self.nodes) < 1:
            raise ValidationError("workers and nodes must be >= 1")

    def with_(self, **kw):
        d = asdict(self)
        d["quad"] = self.quad
        d.update(kw)
        return EstimatorConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["quad"] = asdict(self.quad)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def draw(self, lattice, seed_offset=0):
        return haar_sample(lattice, int(self.samples), int(self.seed) + seed_offset, int(self.workers))


@dataclass
class CurveReport:
    t: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.estimate = np.asarray(self.estimate, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.t.shape == self.estimate.shape == self.stderr.shape):
            raise ValidationError("CurveReport columns must have equal length")
        for k, v in self.extra.items():
            if np.shape(v) != self.t.shape:
                raise ValidationError(f"extra column {k!r} has the wrong length")

    def columns(self):
        cols = {"t": self.t, "estimate": self.estimate, "stderr": self.stderr}
        cols.update({k: np.asarray(v, dtype=float) for k, v in self.extra.items()})
        return cols

    def to_csv(self, path, header_comment=None):
        cols = self.columns()
        names = list(cols)
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(names) + "\n")
            for i in range(len(self.t)):
                fh.write(",".join(format(float(cols[n][i]), ".17g") for n in names) + "\n")

    def write_meta(self, path, extra=None):
        meta = dict(self.meta)
        meta.update(extra or {})
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _meta(name, est, **kw):
    d = {"estimator": name, "config": est.to_dict(), "config_hash": est.digest()}
    d.update(kw)
    return d


def _indicator_stats(ind):
    """(mean, stderr) along the sample axis (last) of a boolean array."""
    ind = np.asarray(ind, dtype=float)
    n = ind.shape[-1]
    p = ind.mean(axis=-1)
    return p, ind.std(axis=-1) / np.sqrt(n)


def _per_sample(fn, x, workers):
    """Apply fn to worker blocks of x and concatenate along the sample axis.

    Blocks are those of haar_sample, so results do not depend on thread
    scheduling; the compiled kernels release the GIL.
    """
    workers = int(workers)
    if workers == 1:
        return fn(x)
    n = len(x)
    sizes = [n // workers + (1 if w < n % workers else 0) for w in range(workers)]
    cuts = np.cumsum([0] + sizes)
    blocks = [x[cuts[w]:cuts[w + 1]] for w in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(fn, blocks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts], axis=-1) for i in range(len(parts[0])))
    return np.concatenate(parts, axis=-1)


def _sorted_grid(times):
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValidationError("empty time grid")
    if np.any(times < 0):
        raise ValidationError("time grids must be nonnegative")
    order = np.argsort(times, kind="stable")
    return times, order


def _alpha_weights(cfg, x):
    if cfg.const is not None:
        return np.ones(len(x))
    a = cfg.alpha.eval(x).real
    return a / a.mean()


def _envelope(cfg, f=None):
    if isinstance(f, FiberPolynomial):
        return f.z
    if cfg.triple is not None:
        return cfg.triple.envelope
    return None


def _require_u_regime(cfg, f=None):
    z = _envelope(cfg, f)
    if not cfg.is_z_invariant(z):
        raise ValidationError("this estimator needs a z-invariant time-change "
                              "(alpha constant or a FiberPolynomial without v != 0 terms)")


def _require_perp(f, cfg):
    if not isinstance(f, FiberPolynomial):
        raise ValidationError("f must be a FiberPolynomial (a term sum in H_0-perp)")
    if f.zero_part is not None:
        raise ValidationError("f must have an empty zero part (use f.perp())")
    if cfg.triple is not None and f.terms and f.z is not cfg.triple.envelope:
        raise ValidationError("f is built on a different envelope than the flow's triple")


# ---------------------------------------------------------------------------
# correlations

def correlation_curve(f: Observable, g: Observable, cfg: FlowConfig, est: EstimatorConfig):
    """<f o phi^V_t, g> against the invariant measure alpha dmu / int alpha.

    estimate = |defect|, defect = raw - (int f dnu) conj(int g dnu); raw and
    defect parts are kept as extra columns. All times share one sample set.
    """
    times, order = _sorted_grid(est.t_grid)
    x = est.draw(cfg.lattice)
    w = _alpha_weights(cfg, x)
    fx = f.eval(x)
    gx = np.conj(g.eval(x))
    mf = np.mean(w * fx)
    mg = np.mean(w * np.conj(gx))

    def block(xb):
        S = tilde_tau_grid(xb, cfg, times[order], est.quad)
        return np.stack([f.eval(nilflow_step(cfg.lattice, xb, cfg.Xf, S[j])) for j in range(len(times))])

    fy = np.empty((len(times), len(x)), dtype=complex)
    fy[order] = _per_sample(block, x, est.workers)
    prod = w * fy * gx
    n = len(x)
    raw = prod.mean(axis=1)
    se = np.sqrt(np.mean(np.abs(prod - raw[:, None]) ** 2, axis=1) / n)
    defect = raw - mf * np.conj(mg)
    return CurveReport(times, np.abs(defect), se,
                       _meta("correlate", est, f=f.tag, g=g.tag, mean_f=mf, mean_g=mg),
                       {"raw_re": raw.real, "raw_im": raw.imag, "raw_abs": np.abs(raw),
                        "defect_re": defect.real, "defect_im": defect.imag})


# ---------------------------------------------------------------------------
# shear integrals

def _direction(cfg, W):
    if isinstance(W, str):
        Y, Z, _ = _triple(cfg)
        if W == "Y":
            return Y
        if W == "Z":
            return Z
        raise ValidationError("W must be 'Y', 'Z' or a vector")
    return np.asarray(_raw(W), dtype=float)


def shear_integral_distribution(f: Observable, W, cfg: FlowConfig, s, t, est: EstimatorConfig):
    """mu{ |int_0^s f o phi^V_t o phi^W_r dr| >= eta } for each eta of est.

    The inner integral uses est.nodes-point Gauss-Legendre on [0, s]; the
    report's t column holds the eta thresholds.
    """
    s = float(s)
    if not 0 < s <= 1:
        raise ValidationError("s must lie in (0, 1]")
    if not est.eta:
        raise ValidationError("shear_integral_distribution needs an eta grid")
    Wv = _direction(cfg, W)
    lat = cfg.lattice
    xg, wg = np.polynomial.legendre.leggauss(int(est.nodes))
    r = 0.5 * s * (xg + 1.0)
    wq = 0.5 * s * wg
    x = est.draw(lat)

    def block(xb):
        pts = reduce(lat, lat.law.mul(xb[:, None, :], lat.law.exp_path(Wv, r[None, :])))
        flat = pts.reshape(-1, lat.dim)
        moved = timechange_step(flat, cfg, float(t), est.quad) if t != 0 else flat
        vals = f.eval(moved).reshape(len(xb), len(r))
        return vals @ wq

    integ = _per_sample(block, x, est.workers)
    eta = np.asarray(est.eta)
    p, se = _indicator_stats(np.abs(integ)[None, :] >= eta[:, None])
    return CurveReport(eta, p, se, _meta("shear", est, f=f.tag, s=s, time=float(t),
                                         W=W if isinstance(W, str) else list(Wv)))


# ---------------------------------------------------------------------------
# Birkhoff sublevel sets

def _birkhoff_table(f, cfg, times, est, x):
    """F at the grid times (any order, >= 0), shape (J, n)."""
    times, order = _sorted_grid(times)

    def block(xb):
        return birkhoff_integral(f, xb, cfg, None, est.quad, times=times[order])

    out = np.empty((len(times), len(x)), dtype=complex)
    out[order] = _per_sample(block, x, est.workers)
    return out


def sublevel_birkhoff(f, cfg: FlowConfig, C, T_grid, est: EstimatorConfig):
    """mu{ |F_T| < C } for each T (Haar samples, one orbit march)."""
    _require_perp(f, cfg)
    _require_u_regime(cfg, f)
    x = est.draw(cfg.lattice)
    T = np.asarray(T_grid, dtype=float)
    F = _birkhoff_table(f, cfg, T, est, x)
    p, se = _indicator_stats(np.abs(F) < float(C))
    return CurveReport(T, p, se, _meta("sublevel", est, f=f.tag, C=float(C), functional="birkhoff"))


def sublevel_shear(cfg: FlowConfig, C, t_grid, est: EstimatorConfig):
    """mu{ |D_t| < C } for each t."""
    x = est.draw(cfg.lattice)
    times, order = _sorted_grid(t_grid)

    def block(xb):
        return d_grid(xb, cfg, times[order], est.quad)[0]

    D = np.empty((len(times), len(x)))
    D[order] = _per_sample(block, x, est.workers)
    p, se = _indicator_stats(np.abs(D) < float(C))
    return CurveReport(times, p, se, _meta("sublevel", est, C=float(C), functional="D"))


def cesaro_curve(f, cfg: FlowConfig, C, T_grid, est: EstimatorConfig, points=65):
    """T^-1 int_0^T mu{|F_t| < C} dt on a uniform grid of ``points`` times, per T.

    The per-sample time average of the indicator is the sampled variable,
    which gives the standard error.
    """
    _require_perp(f, cfg)
    _require_u_regime(cfg, f)
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(T_grid <= 0):
        raise ValidationError("Cesaro horizons must be positive")
    grids = [np.linspace(0.0, T, int(points)) for T in T_grid]
    allt = np.unique(np.concatenate(grids))
    x = est.draw(cfg.lattice)
    F = _birkhoff_table(f, cfg, allt, est, x)
    ind = np.abs(F) < float(C)
    vals, ses = [], []
    for grid in grids:
        rows = np.searchsorted(allt, grid)
        per = ind[rows].mean(axis=0)
        vals.append(per.mean())
        ses.append(per.std() / np.sqrt(len(per)))
    return CurveReport(T_grid, vals, ses, _meta("cesaro", est, f=f.tag, C=float(C), points=int(points)))


def cesaro_sublevel(f, cfg: FlowConfig, C, T, est: EstimatorConfig):
    return float(cesaro_curve(f, cfg, C, [T], est).estimate[0])


@dataclass
class ProgressionResult:
    t0: float
    found: bool
    table: CurveReport          # per candidate t0: worst upper bound over i = 1..ell
    estimates: np.ndarray       # (ell,) at the chosen t0
    stderr: np.ndarray


def find_progression(f, cfg: FlowConfig, C, epsilon, ell, est: EstimatorConfig):
    """First t0 of est.t0_grid with mu{|F_{i t0}| < C} + 2 se < epsilon for i = 1..ell.

    Raises ProgressionNotFound (carrying the best candidate) otherwise.
    """
    _require_perp(f, cfg)
    _require_u_regime(cfg, f)
    ell = int(ell)
    if ell < 1:
        raise ValidationError("ell must be >= 1")
    grid = np.asarray(est.t0_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValidationError("find_progression needs a grid of positive t0 candidates")
    times = np.unique(np.outer(grid, np.arange(1, ell + 1)).ravel())
    x = est.draw(cfg.lattice)
    F = _birkhoff_table(f, cfg, times, est, x)
    p, se = _indicator_stats(np.abs(F) < float(C))
    upper = p + 2 * se
    worst, ests, errs = [], [], []
    for t0 in grid:
        rows = np.searchsorted(times, t0 * np.arange(1, ell + 1))
        worst.append(upper[rows].max())
        ests.append(p[rows])
        errs.append(se[rows])
    worst = np.asarray(worst)
    table = CurveReport(grid, worst, np.array([e.max() for e in errs]),
                        _meta("progression", est, f=f.tag, C=float(C), epsilon=float(epsilon), ell=ell))
    ok = np.nonzero(worst < float(epsilon))[0]
    if ok.size:
        k = int(ok[0])
        table.meta.update(t0=float(grid[k]), found=True)
        return ProgressionResult(float(grid[k]), True, table, ests[k], errs[k])
    k = int(np.argmin(worst))
    best = ProgressionResult(float(grid[k]), False, table, ests[k], errs[k])
    table.meta.update(t0=float(grid[k]), found=False)
    raise ProgressionNotFound(f"no t0 on the grid has all {ell} estimates below {epsilon} "
                              f"(best t0 = {grid[k]:g}, bound {worst[k]:.4g})", best)


def decoupling_measure(f, cfg: FlowConfig, C, t, T_grid, est: EstimatorConfig):
    """mu{ |F_T o phi_t - F_T| < 2C } per T, evaluated as mu{ |F_t o phi_T - F_t| < 2C }.

    The cocycle identity F_T o phi_t - F_T = F_t o phi_T - F_t replaces two
    integrals of length T by two of length t.
    """
    _require_u_regime(cfg, f)
    T = np.asarray(T_grid, dtype=float)
    t = float(t)
    x = est.draw(cfg.lattice)
    if t == 0:
        p = np.ones(len(T))
        return CurveReport(T, p, np.zeros(len(T)), _meta("decouple", est, f=f.tag, C=float(C), time=t))

    def block(xb):
        Fx = birkhoff_integral(f, xb, cfg, t, est.quad)
        rows = []
        for TT in T:
            y = timechange_step(xb, cfg, float(TT), est.quad) if TT != 0 else xb
            rows.append(np.abs(birkhoff_integral(f, y, cfg, t, est.quad) - Fx) < 2 * float(C))
        return np.stack(rows)

    ind = _per_sample(block, x, est.workers)
    p, se = _indicator_stats(ind)
    return CurveReport(T, p, se, _meta("decouple", est, f=f.tag, C=float(C), time=t))


# ---------------------------------------------------------------------------
# relative trigonometric polynomials

@dataclass
class ExponentFit:
    delta: np.ndarray
    mu: np.ndarray
    stderr: np.ndarray
    Delta: float = None
    d: float = None
    ok: bool = False
    bound_ok: bool = None
    note: str = ""

    def report(self, est, tag):
        return CurveReport(self.delta, self.mu, self.stderr,
                           _meta("trigsub", est, p=tag, Delta=self.Delta, d=self.d, fit_ok=self.ok,
                                 bound_ok=self.bound_ok, note=self.note))


def _fit_power(delta, mu, se):
    sel = (mu > 0) & (delta < 1)
    fit = ExponentFit(delta, mu, se)
    if sel.sum() < 2:
        fit.note = ("all estimates zero below delta = 1: p stays away from its relative zero set"
                    if not (mu[delta < 1] > 0).any() else "fewer than two positive estimates")
        return fit
    d, logD = np.polyfit(np.log(delta[sel]), np.log(mu[sel]), 1)
    fit.d = float(d)
    fit.Delta = float(np.exp(logD))
    fit.ok = True
    fit.bound_ok = bool(np.all(mu[sel] <= 1.5 * fit.Delta * delta[sel] ** fit.d))
    return fit


def trig_sublevel_exponent(p: FiberPolynomial, delta_grid, est: EstimatorConfig):
    """mu{|p| <= delta sum_v |p_v|} per delta with a power-law fit (Delta, d)."""
    if not isinstance(p, FiberPolynomial) or p.zero_part is not None:
        raise ValidationError("p must be a FiberPolynomial with empty zero part")
    if not p.terms:
        raise ValidationError("p has no terms")
    delta = np.asarray(delta_grid, dtype=float)
    if np.any(delta <= 0):
        raise ValidationError("delta values must be positive")
    x = est.draw(p.lattice)

    def block(xb):
        vals = p.term_values(xb)
        tot = sum(vals.values())
        den = sum(np.abs(v) for v in vals.values())
        return np.abs(tot)[None, :] <= delta[:, None] * den[None, :]

    mu, se = _indicator_stats(_per_sample(block, x, est.workers))
    return _fit_power(delta, mu, se)


def fiber_sublevel_oracle(p: FiberPolynomial, delta_grid, est: EstimatorConfig, grid=10 ** 4,
                          seed_offset=1):
    """The same measure with the fiber integrated on a uniform grid.

    Along the fiber p(Phi_t x) = sum_v e^{2 pi i <v, t>} p_v(x), so every base
    sample contributes the exact grid fraction of its fiber. Base samples use
    an independent stream (seed + seed_offset).
    """
    z = p.z
    m = int(round(grid ** (1.0 / z.dim)))
    axis = np.arange(m) / m
    nodes = np.stack(np.meshgrid(*([axis] * z.dim), indexing="ij"), axis=-1).reshape(-1, z.dim)
    delta = np.asarray(delta_grid, dtype=float)
    x = est.draw(p.lattice, seed_offset)
    vals = p.term_values(x)
    keys = sorted(vals)
    V = np.array(keys, dtype=float)
    phases = np.exp(2j * np.pi * nodes @ V.T)            # (G, nterms)
    coef = np.stack([vals[k] for k in keys], axis=1)     # (n, nterms)
    den = np.abs(coef).sum(axis=1)
    frac = np.empty((len(delta), len(x)))
    step = max(1, 2 ** 22 // len(nodes))
    for lo in range(0, len(x), step):
        blk = coef[lo:lo + step] @ phases.T              # (b, G)
        a = np.abs(blk)
        frac[:, lo:lo + step] = (a[None] <= delta[:, None, None] * den[None, lo:lo + step, None]).mean(axis=2)
    mu = frac.mean(axis=1)
    se = frac.std(axis=1) / np.sqrt(len(x))
    return _fit_power(delta, mu, se)


# ---------------------------------------------------------------------------
# D_t ratios

@dataclass
class RatioReport:
    worst: float
    degenerate: bool
    n_used: int
    per_s: np.ndarray = None
    note: str = ""


def _dv_abs(Dv, shape):
    return sum(np.abs(v) for v in Dv.values()) if Dv else np.zeros(shape)


def _sheared(cfg, t, x, est, quad=None):
    D, Dv = d_grid(x, cfg, [float(t)], quad or est.quad, with_dv=True)
    return D[0], {v: a[0] for v, a in Dv.items()}


def quasi_invariance_ratio(cfg: FlowConfig, t, s_grid, est: EstimatorConfig):
    """max over samples and s of sum_v |D_t^v(phi^Z_s x)| / max(sum_v |D_t^v(x)|, 1e-8)."""
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(np.abs(s_grid) > 1):
        raise ValidationError("s_grid must lie in [-1, 1]")
    _, Zv, _ = _triple(cfg)
    if cfg.is_z_invariant(cfg.triple.envelope):
        return RatioReport(float("nan"), True, 0, note="alpha is z-invariant: every D^v vanishes")
    lat = cfg.lattice
    x = est.draw(lat)
    _, Dv0 = _sheared(cfg, t, x, est)
    S0 = _dv_abs(Dv0, len(x))
    keep = S0 >= FLOOR
    if not keep.any():
        return RatioReport(float("nan"), True, 0, note="all denominators below the floor")
    den = np.maximum(S0, FLOOR)
    per = []
    for s in s_grid:
        if s == 0:
            per.append(float(np.max(S0 / den)))
            continue
        xs = reduce(lat, lat.law.mul(x, lat.law.exp_path(Zv, s)))
        _, Dvs = _sheared(cfg, t, xs, est)
        per.append(float(np.max(_dv_abs(Dvs, len(x)) / den)))
    per = np.asarray(per)
    return RatioReport(float(per.max()), False, int(keep.sum()), per)


@dataclass
class ComparisonReport:
    delta: np.ndarray
    mu: np.ndarray
    stderr: np.ndarray
    distortion_worst: float
    distortion_mean: float
    distortion_se: float
    degenerate: bool
    note: str = ""

    def report(self, est):
        return CurveReport(self.delta, self.mu, self.stderr,
                           _meta("compare", est, distortion_worst=self.distortion_worst,
                                 distortion_mean=self.distortion_mean,
                                 distortion_se=self.distortion_se, degenerate=self.degenerate,
                                 note=self.note))


def comparison_and_distortion(cfg: FlowConfig, t, est: EstimatorConfig, h=1e-5):
    """(i) mu{|D_t| <= delta sum_v |D_t^v|} per delta of est; (ii) |Z D_t| / sum_v |D_t^v|.

    Z D_t is a central difference of D_t along phi^Z with step h, computed
    at tight quadrature tolerance.
    """
    delta = np.asarray(est.delta, dtype=float)
    _, Zv, _ = _triple(cfg)
    if cfg.is_z_invariant(cfg.triple.envelope):
        nan = np.full(len(delta), np.nan)
        return ComparisonReport(delta, nan, nan, float("nan"), float("nan"), float("nan"), True,
                                "alpha is z-invariant: D_t and every D^v vanish")
    lat = cfg.lattice
    x = est.draw(lat)
    D, Dv = _sheared(cfg, t, x, est, FD_QUAD)
    S = _dv_abs(Dv, len(x))
    mu, se = _indicator_stats(np.abs(D)[None, :] <= delta[:, None] * S[None, :])
    xp = reduce(lat, lat.law.mul(x, lat.law.exp_path(Zv, h)))
    xm = reduce(lat, lat.law.mul(x, lat.law.exp_path(Zv, -h)))
    Dp = d_grid(xp, cfg, [float(t)], FD_QUAD)[0][0]
    Dm = d_grid(xm, cfg, [float(t)], FD_QUAD)[0][0]
    ZD = (Dp - Dm) / (2 * h)
    keep = S >= FLOOR
    if not keep.any():
        return ComparisonReport(delta, mu, se, float("nan"), float("nan"), float("nan"), True,
                                "all denominators below the floor")
    ratio = np.abs(ZD[keep]) / S[keep]
    return ComparisonReport(delta, mu, se, float(ratio.max()), float(ratio.mean()),
                            float(ratio.std() / np.sqrt(ratio.size)), False)


# ---------------------------------------------------------------------------
# conjugacy of cohomologous time-changes

def _psi(cfg1, u, y, quad):
    return timechange_step(y, cfg1, u.eval(y).real, quad)


def psi_inverse(cfg1, u, x, quad=None, tol=1e-13, maxit=100):
    """y with psi(y) = x, by iterating y <- phi~1_{-u(y)}(x)."""
    y = np.array(x, dtype=float)
    for it in range(maxit):
        y_new = timechange_step(x, cfg1, -u.eval(y).real, quad)
        err = float(np.max(distance(cfg1.lattice, y_new, y)))
        y = y_new
        if err < tol:
            return y
    raise ConvergenceError(f"psi^-1 fixed-point iteration did not converge in {maxit} steps "
                           f"(last change {err:.3g})")


def conjugacy_check(cfg1: FlowConfig, cfg2: FlowConfig, u: Observable, est: EstimatorConfig):
    """max over samples and tau of d(phi~1_tau(x), psi(phi~2_tau(psi^-1(x)))).

    psi(x) = phi~1_{u(x)}(x). The identity holds when X u = alpha_2 - alpha_1,
    i.e. tau_2 - tau_1 = u o phi_t - u. Returns (max defect, per-tau maxima).
    """
    if np.max(np.abs(cfg1.Xf - cfg2.Xf)) > 0 or cfg1.lattice is not cfg2.lattice:
        raise ValidationError("cfg1 and cfg2 must share the lattice and X")
    taus = np.asarray(est.t_grid if est.t_grid else np.linspace(0.0, 50.0, 38), dtype=float)
    quad = FD_QUAD
    x = est.draw(cfg1.lattice)
    xinv = psi_inverse(cfg1, u, x, quad)
    per = []
    for tau in taus:
        lhs = timechange_step(x, cfg1, float(tau), quad)
        rhs = _psi(cfg1, u, timechange_step(xinv, cfg2, float(tau), quad), quad)
        per.append(float(np.max(distance(cfg1.lattice, lhs, rhs))))
    per = np.asarray(per)
    rep = CurveReport(taus, per, np.zeros(len(taus)), _meta("conjugacy", est, u=u.tag))
    return float(per.max()), rep


# ---------------------------------------------------------------------------
# factor lift

def quotient_alpha(level, cfg: FlowConfig):
    """The time-change on the quotient induced by a z-invariant alpha at this level."""
    if cfg.const is not None:
        return cfg.const
    a = cfg.alpha
    if isinstance(a, FiberPolynomial) and a.z is level.envelope and a.is_z_invariant:
        zp = a.zero_part
        if zp is None:
            raise ValidationError("alpha has no zero part")
        if a.level is level and zp.lattice is level.quotient_lattice:
            return zp
        if isinstance(zp, Pullback) and zp.level is level:
            return zp.f
    if isinstance(a, Pullback) and a.level is level:
        return a.f
    raise ValidationError("factor_lift_check needs alpha z-invariant at this level, given as a "
                          "pullback or a FiberPolynomial whose zero part lives on the quotient")


def factor_lift_check(level, fbar: Observable, gbar: Observable, cfg: FlowConfig, est: EstimatorConfig):
    """Correlations of pulled-back observables on M against the same on the quotient.

    Both sides use est (samples, grid); the quotient side uses the seed
    stream seed + 1. The estimate column is |c_M(t) - c_Mbar(t)| and stderr
    the combined sqrt(se_M^2 + se_Mbar^2).
    """
    abar = quotient_alpha(level, cfg)
    Xbar = level.project_vector(cfg.X)
    cbar = FlowConfig(level.quotient_lattice, Xbar, abar)
    up = correlation_curve(Pullback(level, fbar), Pullback(level, gbar), cfg, est)
    down = correlation_curve(fbar, gbar, cbar, est.with_(seed=est.seed + 1))
    cu = up.extra["raw_re"] + 1j * up.extra["raw_im"]
    cd = down.extra["raw_re"] + 1j * down.extra["raw_im"]
    se = np.sqrt(up.stderr ** 2 + down.stderr ** 2)
    disc = np.abs(cu - cd)
    return CurveReport(up.t, disc, se, _meta("factorlift", est, f=fbar.tag, g=gbar.tag),
                       {"lift_re": cu.real, "lift_im": cu.imag, "quot_re": cd.real,
                        "quot_im": cd.imag, "lift_se": up.stderr, "quot_se": down.stderr})


def measure_preservation(h: Observable, cfg: FlowConfig, t, est: EstimatorConfig):
    """(alpha-weighted mean of h o phi^V_t, of h, combined stderr) on one sample set."""
    x = est.draw(cfg.lattice)
    w = _alpha_weights(cfg, x)
    y = timechange_step(x, cfg, float(t), est.quad)
    a = w * h.eval(y)
    b = w * h.eval(x)
    n = len(x)
    return a.mean(), b.mean(), float(np.sqrt((np.var(a) + np.var(b)) / n))
