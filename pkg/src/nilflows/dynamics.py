"""
Nilflows, time-changed flows and their orbit functionals.

The nilflow is evaluated exactly through the group law. Everything that
depends on the time-change alpha is an integral along a nilflow orbit,
done by an adaptive Gauss-Kronrod (7, 15) panel scheme in nilflow time r.
Integrals in time-changed time use the change of variables

    int_0^t h o phi^V_tau dtau = int_0^{tilde_tau(x,t)} (h alpha) o phi^X_r dr,

so one march computes tilde_tau, Birkhoff integrals and all shear functionals.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .lie_core import AlgebraVector, ValidationError, _raw, is_completely_irrational
from .nilmanifold import Lattice, _pts, haar_sample, reduce
from .observables import FiberPolynomial, Pullback, constant

log = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    """Orbit quadrature or root finding could not reach its tolerance."""


# Gauss-Kronrod (7, 15) on [-1, 1]
_XK = np.array([-0.991455371120812639206854697526329, -0.949107912342758524526189684047851,
                -0.864864423359769072789712788640926, -0.741531185599394439863864773280788,
                -0.586087235467691130294144845693013, -0.405845151377397166906606412076961,
                -0.207784955007898467600689403773245, 0.0,
                0.207784955007898467600689403773245, 0.405845151377397166906606412076961,
                0.586087235467691130294144845693013, 0.741531185599394439863864773280788,
                0.864864423359769072789712788640926, 0.949107912342758524526189684047851,
                0.991455371120812639206854697526329])
_WK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
                0.204432940075298892414161999234649, 0.190350578064785409913256402421014,
                0.169004726639267902826583426598550, 0.140653259715525918745189590510238,
                0.104790010322250183839876322541518, 0.063092092629978553290700663189204,
                0.022935322010529224963732008058970])
_WG = np.zeros(15)
_WG[1::2] = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
             0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
             0.381830050505118944950369775488975, 0.279705391489276667901467771423780,
             0.129484966168869693270611432679082]


@dataclass(frozen=True)
class OrbitQuadrature:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.25
    method: str = "gk15"
    max_depth: int = 30
    chunk: int = 4096

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("rtol and atol must be positive")
        if not self.max_step > 0:
            raise ValidationError("max_step must be positive")
        if self.method != "gk15":
            raise ValidationError(f"unknown quadrature method {self.method!r}")


DEFAULT_QUAD = OrbitQuadrature()


class FlowConfig:
    """Generator X, positive time-change alpha and lattice; V = X / alpha.

    ``triple`` (a HeisenbergTriple with X equal to this X) is needed by the
    shear functionals. ``alpha`` may be a number or an Observable.
    """

    def __init__(self, lattice: Lattice, X, alpha=1.0, triple=None, check=True,
                 n_check=10 ** 4, seed=0, irr_tol=1e-10, denom_bound=10 ** 4):
        self.lattice = lattice
        alg = lattice.algebra
        self.X = X if isinstance(X, AlgebraVector) else AlgebraVector(X)
        if self.X.dim != alg.dim:
            raise ValidationError(f"X has length {self.X.dim}, algebra has dim {alg.dim}")
        self.Xf = np.asarray(self.X.to_float(), dtype=float)
        if np.isscalar(alpha):
            if not float(alpha) > 0:
                raise ValidationError("alpha must be positive")
            self.const = float(alpha)
            self.alpha = constant(lattice, self.const)
        else:
            self.const = None
            self.alpha = alpha
        self.triple = triple
        if triple is not None:
            tx = np.asarray(triple.X.to_float(), dtype=float)
            if np.max(np.abs(tx - self.Xf)) > 1e-12:
                raise ValidationError("triple.X differs from the flow generator")
        self.amin = self.amax = self.const
        if check:
            if alg.step >= 1 and alg.dim and not is_completely_irrational(alg, self.X, irr_tol, denom_bound):
                raise ValidationError("X is not completely irrational")
            if self.const is None:
                x = haar_sample(lattice, n_check, seed)
                a = self.alpha.eval(x)
                if float(np.max(np.abs(a.imag))) > 1e-10:
                    raise ValidationError("alpha is not real-valued")
                self.amin, self.amax = float(a.real.min()), float(a.real.max())
                if self.amin <= 0:
                    raise ValidationError(f"alpha is not positive (sampled min {self.amin:.4g})")

    def is_z_invariant(self, z=None):
        if self.const is not None:
            return True
        if isinstance(self.alpha, FiberPolynomial):
            if z is None or z is self.alpha.z:
                return self.alpha.is_z_invariant
        if isinstance(self.alpha, Pullback):
            return z is None or z is self.alpha.level.envelope
        return False

    def with_alpha(self, alpha):
        return FlowConfig(self.lattice, self.X, alpha, self.triple, check=False)

    def __repr__(self):
        a = self.const if self.const is not None else self.alpha.tag
        return f"FlowConfig(X={self.Xf.tolist()}, alpha={a})"


@dataclass
class ShearRecord:
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    Dv: dict = field(default_factory=dict)

    def dv_sum(self):
        return sum(self.Dv.values()) if self.Dv else np.zeros_like(self.D)

    def dv_abs_sum(self):
        return sum(np.abs(v) for v in self.Dv.values()) if self.Dv else np.zeros(np.shape(self.D))


# ---------------------------------------------------------------------------
# the nilflow

def nilflow_step(lat, x, X, t):
    """reduce(x exp(tX)); x (..., dim), t broadcast against x[..., 0]."""
    x = _pts(x)
    Xf = np.asarray(_raw(X), dtype=float)
    t = np.asarray(t, dtype=float)
    return reduce(lat, lat.law.mul(x, lat.law.exp_path(Xf, t)))


def _orbit_points(lat, base, Xf, r):
    """base (n, dim) times exp(r X) for r of shape (n, q) -> (n, q, dim)."""
    return lat.law.mul(base[:, None, :], lat.law.exp_path(Xf, r))


# ---------------------------------------------------------------------------
# adaptive panels

def _gk(fn, lat, base, Xf, a, b, K):
    """GK15 on [a, b] (per-sample arrays); returns (value (K, n), error (n,))."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    r = mid[:, None] + half[:, None] * _XK[None, :]
    vals = fn(_orbit_points(lat, base, Xf, r))          # (K, n, 15)
    kr = np.einsum("kns,s->kn", vals, _WK) * half
    ga = np.einsum("kns,s->kn", vals, _WG) * half
    err = np.max(np.abs(kr - ga), axis=0)
    return kr, err


def _adaptive(fn, lat, base, Xf, a, b, K, quad, depth=0):
    val, err = _gk(fn, lat, base, Xf, a, b, K)
    scale = np.max(np.abs(val), axis=0)
    bad = err > np.maximum(quad.atol, quad.rtol * scale)
    if not bad.any():
        return val
    if depth >= quad.max_depth:
        raise QuadratureError(f"panel tolerance unreachable (error {float(err.max()):.3g} at depth {depth})")
    idx = np.nonzero(bad)[0]
    m = 0.5 * (a[idx] + b[idx])
    left = _adaptive(fn, lat, base[idx], Xf, a[idx], m, K, quad, depth + 1)
    right = _adaptive(fn, lat, base[idx], Xf, m, b[idx], K, quad, depth + 1)
    val = val.copy()
    val[:, idx] = left + right
    return val


def _ensure_targets(t, n):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = np.full((1, n), float(t))
    elif t.ndim == 1:
        t = t[:, None] * np.ones((1, n)) if t.shape[0] != n or n == 1 else t[None, :]
    return t


def _march(cfg, x, targets, fn, K, quad, clock=True):
    """Integrate fn (component 0 = alpha when clock) along phi^X orbits.

    targets (J, n), nondecreasing in J and >= 0, are in time-changed time
    when ``clock`` (component 0 is then the running alpha integral) and in
    nilflow time otherwise. Returns (s, I): nilflow times (J, n) at the
    targets and the integrals (K, J, n) from 0 to s.
    """
    lat = cfg.lattice
    Xf = cfg.Xf
    x = np.atleast_2d(_pts(x))
    n = len(x)
    J = targets.shape[0]
    S = np.zeros((J, n))
    I = np.zeros((K, J, n), dtype=complex)
    h = float(quad.max_step)
    base = reduce(lat, x)
    C = np.zeros((K, n), dtype=complex)
    r0 = 0.0
    ptr = np.zeros(n, dtype=int)
    _resolve_zero(targets, ptr, S, I)
    active = np.nonzero(ptr < J)[0]
    steps = 0
    while active.size:
        for lo in range(0, active.size, quad.chunk):
            idx = active[lo: lo + quad.chunk]
            m = idx.size
            vals = _adaptive(fn, lat, base[idx], Xf, np.zeros(m), np.full(m, h), K, quad)
            Cn = C[:, idx] + vals
            clock_new = Cn[0].real if clock else np.full(m, r0 + h)
            _resolve_block(cfg, fn, K, quad, base, C, Cn, r0, targets, ptr, S, I, clock, h, idx, clock_new)
            C[:, idx] = Cn
            base[idx] = reduce(lat, lat.law.mul(base[idx], lat.law.exp_path(Xf, h)))
        r0 += h
        steps += 1
        active = np.nonzero(ptr < J)[0]
        if clock and steps * h * max(cfg.amin or 1.0, 1e-300) > 1e12:
            raise QuadratureError("orbit march did not terminate")
    return S, I


def _resolve_zero(targets, ptr, S, I):
    """Targets at time 0 have s = 0 and zero integrals."""
    J = targets.shape[0]
    n = targets.shape[1]
    idx = np.arange(n)
    while True:
        sel = idx[ptr < J]
        sel = sel[targets[ptr[sel], sel] <= 0.0]
        if sel.size == 0:
            return
        S[ptr[sel], sel] = 0.0
        I[:, ptr[sel], sel] = 0.0
        ptr[sel] += 1


def _resolve_block(cfg, fn, K, quad, base, C, Cn, r0, targets, ptr, S, I, clock, h, idx, clock_new):
    """Resolve targets falling in the panel (r0, r0 + h] for samples idx."""
    lat = cfg.lattice
    J = targets.shape[0]
    pos = np.arange(idx.size)
    while True:
        live = pos[ptr[idx] < J]
        if live.size == 0:
            return
        sel = live[targets[ptr[idx[live]], idx[live]] <= clock_new[live]]
        if sel.size == 0:
            return
        gi = idx[sel]
        tgt = targets[ptr[gi], gi]
        b = base[gi]
        C0 = C[:, gi]
        if clock:
            u = _solve_clock(cfg, quad, b, C0[0].real, Cn[0, sel].real, tgt, h)
        else:
            u = tgt - r0
        u = np.clip(u, 0.0, h)
        part = _adaptive(fn, lat, b, cfg.Xf, np.zeros(gi.size), u, K, quad)
        S[ptr[gi], gi] = r0 + u
        I[:, ptr[gi], gi] = C0 + part
        ptr[gi] += 1


def _solve_clock(cfg, quad, b, c0, c1, tgt, h, maxit=50):
    """u in [0, h] with c0 + int_0^u alpha = tgt (safeguarded Newton).

    Only alpha is evaluated here; the other integrands are computed once
    at the root.
    """
    fn = _alpha_fn(cfg)
    K = 1
    lo = np.zeros(tgt.size)
    hi = np.full(tgt.size, h)
    span = np.maximum(c1 - c0, 1e-300)
    u = np.clip((tgt - c0) / span * h, 0.0, h)
    tol = quad.atol
    done = np.zeros(tgt.size, dtype=bool)
    for _ in range(maxit):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            return u
        ua = u[act]
        F = c0[act] + _adaptive(fn, cfg.lattice, b[act], cfg.Xf, np.zeros(act.size), ua, K, quad)[0].real - tgt[act]
        a = fn(_orbit_points(cfg.lattice, b[act], cfg.Xf, ua[:, None]))[0, :, 0].real
        conv = np.abs(F) <= tol
        lo[act] = np.where(F < 0, ua, lo[act])
        hi[act] = np.where(F > 0, ua, hi[act])
        step = ua - F / a
        bad = (step <= lo[act]) | (step >= hi[act])
        step = np.where(bad, 0.5 * (lo[act] + hi[act]), step)
        newton_small = np.abs(step - ua) < 1e-15 * max(h, 1.0)
        u[act] = np.where(conv, ua, step)
        done[act] = conv | newton_small
    if not done.all():
        raise QuadratureError("tilde_tau root finding did not converge")
    return u


# ---------------------------------------------------------------------------
# integrand builders

def _alpha_fn(cfg):
    if cfg.const is not None:
        c = cfg.const
        return lambda p: np.full((1,) + p.shape[:-1], c, dtype=complex)
    a = cfg.alpha
    return lambda p: a.eval(p)[None]


def _reverse(cfg):
    """The same configuration for the flow generated by -X (times reversed)."""
    rc = FlowConfig.__new__(FlowConfig)
    rc.__dict__.update(cfg.__dict__)
    rc.Xf = -cfg.Xf
    rc.X = AlgebraVector(-cfg.Xf, exact=False)
    return rc


def _run_signed(cfg, x, t, fn, K, quad, clock, per_sample=True):
    """Per-sample times t of any sign: returns (s (n,), I (K, n)) with signed integrals."""
    x = np.atleast_2d(_pts(x))
    n = len(x)
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    s = np.zeros(n)
    I = np.zeros((K, n), dtype=complex)
    for sign in (1.0, -1.0):
        m = np.nonzero((t >= 0) if sign > 0 else (t < 0))[0]
        if m.size == 0:
            continue
        c = cfg if sign > 0 else _reverse(cfg)
        S, Iv = _march(c, x[m], np.abs(t[m])[None, :], fn, K, quad, clock)
        s[m] = sign * S[0]
        I[:, m] = sign * Iv[:, 0]
    return s, I


# ---------------------------------------------------------------------------
# public operations

def tilde_tau(x, cfg, t, quad=None):
    """Nilflow time s with int_0^s alpha o phi^X_r(x) dr = t (vectorized)."""
    quad = quad or DEFAULT_QUAD
    scalar = np.ndim(_pts(x)) == 1 and np.ndim(t) == 0
    if cfg.const is not None:
        n = np.atleast_2d(_pts(x)).shape[0]
        s = np.broadcast_to(np.asarray(t, dtype=float), (n,)) / cfg.const
    else:
        s, _ = _run_signed(cfg, x, t, _alpha_fn(cfg), 1, quad, True)
    return float(s[0]) if scalar else s


def tilde_tau_grid(x, cfg, times, quad=None):
    """tilde_tau for a nondecreasing grid of nonnegative times; shape (J, n)."""
    quad = quad or DEFAULT_QUAD
    x = np.atleast_2d(_pts(x))
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be nonnegative and nondecreasing")
    if cfg.const is not None:
        return times[:, None] / cfg.const * np.ones((1, len(x)))
    S, _ = _march(cfg, x, times[:, None] * np.ones((1, len(x))), _alpha_fn(cfg), 1, quad, True)
    return S


def timechange_step(x, cfg, t, quad=None):
    """phi^V_t(x) = nilflow_step(x, X, tilde_tau(x, t))."""
    s = tilde_tau(x, cfg, t, quad)
    return nilflow_step(cfg.lattice, x, cfg.Xf, s if np.ndim(s) == 0 else np.asarray(s))


def birkhoff_integral(f, x, cfg, T, quad=None, times=None):
    """F_T(x) = int_0^T f o phi^V_tau(x) dtau.

    With ``times`` (nondecreasing, >= 0) the integrals at every grid time are
    returned in one march, shape (J, n).
    """
    quad = quad or DEFAULT_QUAD
    xs = np.atleast_2d(_pts(x))
    if cfg.const is not None:
        c = cfg.const
        fn = lambda p: f.eval(p)[None] * c
        clock = False
        scale = 1.0 / c
    else:
        a = cfg.alpha
        fn = lambda p: _stack(a.eval(p), f.eval(p) * a.eval(p))
        clock = True
        scale = 1.0
    if times is not None:
        times = np.asarray(times, dtype=float)
        if np.any(times < 0) or np.any(np.diff(times) < 0):
            raise ValidationError("times must be nonnegative and nondecreasing")
        targ = times[:, None] * np.ones((1, len(xs))) * scale
        _, I = _march(cfg, xs, targ, fn, 1 if clock is False else 2, quad, clock)
        return I[-1]
    _, I = _run_signed(cfg, xs, np.asarray(T, dtype=float) * scale, fn, 1 if clock is False else 2, quad, clock)
    out = I[-1]
    return out if np.ndim(_pts(x)) > 1 or np.ndim(T) else complex(out[0])


def _stack(*arrs):
    return np.stack(arrs, axis=0)


def _triple(cfg):
    if cfg.triple is None:
        raise ValidationError("this operation needs a Heisenberg triple on the flow configuration")
    tri = cfg.triple
    return (np.asarray(tri.Y.to_float(), dtype=float), np.asarray(tri.Z.to_float(), dtype=float),
            tri.envelope)


def _shear_fn(cfg, with_dv=True, with_r=False):
    """Integrand components: alpha, Y alpha, Z alpha, [Z alpha_v ...] in phi^X time."""
    Y, Z, z = _triple(cfg)
    alpha = cfg.alpha
    keys = []
    coef = []
    if with_dv and isinstance(alpha, FiberPolynomial) and alpha.z is z:
        keys = sorted(alpha.terms)
        tz = np.asarray(z.fiber_coords(Z), dtype=float)
        coef = [2j * np.pi * float(np.dot(v, tz)) for v in keys]

    def fn(p):
        memo = {}
        a, (ya, za) = alpha.jet(p, [Y, Z], memo)
        comps = [a, ya, za]
        for v, c in zip(keys, coef):
            comps.append(c * alpha.terms[v].jet(p, [Y, Z], memo)[0])
        return np.stack(comps, axis=0)

    return fn, keys


def shear_record(x, cfg, t, quad=None, with_dv=True):
    """A, B, D and D^v at time t (vectorized over points).

    A = -int_0^t (Y alpha / alpha) o phi^V, B = int_0^t (1/alpha) o phi^V,
    D = -int_0^t (Z alpha / alpha) o phi^V (analytic Z-derivative of alpha),
    Dv[v] = -int_0^{tilde_tau} Z alpha_v o phi^X (character law of alpha_v).
    """
    quad = quad or DEFAULT_QUAD
    xs = np.atleast_2d(_pts(x))
    n = len(xs)
    if cfg.const is not None:
        tt = np.broadcast_to(np.asarray(t, dtype=float), (n,)) / cfg.const
        zero = np.zeros(n)
        return ShearRecord(np.broadcast_to(np.asarray(t, float), (n,)).copy(), zero.copy(), tt.copy(),
                           zero.copy(), {})
    fn, keys = _shear_fn(cfg, with_dv)
    s, I = _run_signed(cfg, xs, t, fn, 3 + len(keys), quad, True)
    return ShearRecord(np.broadcast_to(np.asarray(t, float), (n,)).copy(),
                       -I[1].real, s, -I[2].real,
                       {v: -I[3 + k] for k, v in enumerate(keys)})


def shear_grid(x, cfg, times, quad=None, with_dv=True):
    """ShearRecords at a nondecreasing grid of times from a single march."""
    quad = quad or DEFAULT_QUAD
    xs = np.atleast_2d(_pts(x))
    times = np.asarray(times, dtype=float)
    if cfg.const is not None:
        return [shear_record(xs, cfg, t) for t in times]
    fn, keys = _shear_fn(cfg, with_dv)
    S, I = _march(cfg, xs, times[:, None] * np.ones((1, len(xs))), fn, 3 + len(keys), quad, True)
    out = []
    for j, t in enumerate(times):
        out.append(ShearRecord(np.full(len(xs), t), -I[1, j].real, S[j], -I[2, j].real,
                               {v: -I[3 + k, j] for k, v in enumerate(keys)}))
    return out


def _d_fn(cfg, with_dv):
    """Integrand components alpha, Z alpha, [Z alpha_v ...] (Z-jets only)."""
    _, Z, z = _triple(cfg)
    alpha = cfg.alpha
    keys, coef = [], []
    if with_dv and isinstance(alpha, FiberPolynomial) and alpha.z is z:
        keys = sorted(alpha.terms)
        tz = np.asarray(z.fiber_coords(Z), dtype=float)
        coef = [2j * np.pi * float(np.dot(v, tz)) for v in keys]

    def fn(p):
        memo = {}
        a, (za,) = alpha.jet(p, [Z], memo)
        comps = [a, za]
        for v, c in zip(keys, coef):
            comps.append(c * alpha.terms[v].jet(p, [Z], memo)[0])
        return np.stack(comps, axis=0)

    return fn, keys


def d_grid(x, cfg, times, quad=None, with_dv=False):
    """(D, {v: D^v}) at a nondecreasing grid of times, shapes (J, n).

    The cheaper path when A_t and B_t are not needed.
    """
    quad = quad or DEFAULT_QUAD
    xs = np.atleast_2d(_pts(x))
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be nonnegative and nondecreasing")
    n = len(xs)
    if cfg.const is not None:
        return np.zeros((len(times), n)), {}
    fn, keys = _d_fn(cfg, with_dv)
    _, I = _march(cfg, xs, times[:, None] * np.ones((1, n)), fn, 2 + len(keys), quad, True)
    return -I[1].real, {v: -I[2 + k] for k, v in enumerate(keys)}


def d_direct(x, cfg, t, rtol=1e-11, atol=1e-13):
    """D_t by integrating the ODE system in time-changed time with DOP853.

    State (s, D): ds/dtau = 1/alpha(phi^X_s x), dD/dtau = -(Z alpha/alpha)(phi^X_s x).
    Independent of the panel quadrature; used for cross-validation.
    """
    _, Z, _ = _triple(cfg)
    lat = cfg.lattice
    xs = reduce(lat, np.atleast_2d(_pts(x)))
    n = len(xs)
    Xf = cfg.Xf
    alpha = cfg.alpha

    def rhs(tau, y):
        s = y[:n]
        p = lat.law.mul(xs, lat.law.exp_path(Xf, s))
        a, (za,) = alpha.jet(p, [Z])
        a = a.real
        return np.concatenate([1.0 / a, -za.real / a])

    sol = solve_ivp(rhs, (0.0, float(t)), np.zeros(2 * n), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise QuadratureError(f"ODE integration failed: {sol.message}")
    return sol.y[n:, -1], sol.y[:n, -1]


def pushforward_coeffs(x, cfg, W, t, quad=None):
    """(a, b, c) with (phi^V_t)_* W = a V + b Y + c Z at phi^V_t(x), W in {'Y', 'Z'}."""
    quad = quad or DEFAULT_QUAD
    xs = np.atleast_2d(_pts(x))
    n = len(xs)
    if W not in ("Y", "Z"):
        raise ValidationError("W must be 'Y' or 'Z'")
    if cfg.const is not None:
        tt = np.broadcast_to(np.asarray(t, float), (n,)) / cfg.const
        if W == "Z":
            return np.zeros(n), np.zeros(n), np.ones(n)
        return np.zeros(n), np.ones(n), -tt.copy()
    Y, Z, _ = _triple(cfg)
    alpha = cfg.alpha
    Xf = cfg.Xf
    lat = cfg.lattice

    def fn(p, r=None):
        a, (ya, za) = alpha.jet(p, [Y, Z])
        return np.stack([a, ya, za], axis=0)

    if W == "Z":
        s, I = _run_signed(cfg, xs, t, fn, 3, quad, True)
        return -I[2].real, np.zeros(n), np.ones(n)
    # the r-weighted integral needs nilflow time r inside the integrand
    s, I = _run_signed(cfg, xs, t, fn, 3, quad, True)
    rz = _weighted_r_integral(cfg, xs, s, lambda p: alpha.jet(p, [Z])[1][0], quad)
    a = -(I[1].real - rz.real)
    return a, np.ones(n), -s


def _weighted_r_integral(cfg, xs, s, g, quad):
    """int_0^s r g(phi^X_r x) dr for per-sample nilflow times s (any sign)."""
    lat = cfg.lattice
    n = len(xs)
    out = np.zeros(n, dtype=complex)
    base = reduce(lat, xs)
    h = quad.max_step
    Xf = cfg.Xf
    sign = np.sign(s)
    sa = np.abs(s)
    k = 0
    while True:
        r0 = k * h
        act = np.nonzero(sa > r0)[0]
        if act.size == 0:
            break
        a = np.full(act.size, r0)
        b = np.minimum(sa[act], r0 + h)
        Xs = Xf * sign[act][:, None]
        fn = lambda p, r: (r * g(p))[None]
        out[act] += sign[act] * _adaptive_r(fn, lat, base[act], Xs, a, b, quad)[0]
        k += 1
    return out


def _adaptive_r(fn, lat, base, Xs, a, b, quad, depth=0):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    r = mid[:, None] + half[:, None] * _XK[None, :]
    pts = lat.law.mul(base[:, None, :], lat.law.exp_path(Xs[:, None, :], r))
    vals = fn(pts, r)
    kr = np.einsum("kns,s->kn", vals, _WK) * half
    ga = np.einsum("kns,s->kn", vals, _WG) * half
    err = np.max(np.abs(kr - ga), axis=0)
    bad = err > np.maximum(quad.atol, quad.rtol * np.max(np.abs(kr), axis=0))
    if not bad.any() or depth >= quad.max_depth:
        if bad.any():
            raise QuadratureError("panel tolerance unreachable")
        return kr
    idx = np.nonzero(bad)[0]
    m = 0.5 * (a[idx] + b[idx])
    kr = kr.copy()
    kr[:, idx] = (_adaptive_r(fn, lat, base[idx], Xs[idx], a[idx], m, quad, depth + 1)
                  + _adaptive_r(fn, lat, base[idx], Xs[idx], m, b[idx], quad, depth + 1))
    return kr


def trace_orbit(x, cfg, times, quad=None):
    """Points phi^V_t(x) for a grid of times (rows of a trace); shape (J, dim)."""
    x = np.asarray(_pts(x), dtype=float).reshape(1, -1)
    times = np.asarray(times, dtype=float)
    if cfg.const is not None:
        s = times / cfg.const
    else:
        order = np.argsort(times)
        s = np.zeros_like(times)
        pos = times[order] >= 0
        if pos.any():
            s[order[pos]] = tilde_tau_grid(x, cfg, times[order][pos], quad)[:, 0]
        if (~pos).any():
            s[order[~pos]] = -tilde_tau_grid(x, _reverse(cfg), -times[order][~pos][::-1], quad)[::-1, 0]
    return nilflow_step(cfg.lattice, np.repeat(x, len(times), axis=0), cfg.Xf, s)
