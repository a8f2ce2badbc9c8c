"""
Functions on M: torus characters, periodized fiber characters, fiber Fourier
projection, relative trigonometric polynomials and the alpha decomposition.

Every Observable evaluates on point arrays of shape (..., dim) and returns
complex arrays of shape (...). ``dderiv(W, x)`` is d/ds f(x exp(sW)) at
s = 0, the derivative along the flow generated by W.
"""
import itertools
import logging
import math
from fractions import Fraction

import numpy as np

from . import _kernels
from .lie_core import AlgebraVector, ValidationError, _raw
from .nilmanifold import CentralSubspace, Lattice, fiber_act, haar_sample, reduce

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def _vecf(W):
    return np.asarray(_raw(W), dtype=float)


class Observable:
    """Scalar function on M with an analytic directional derivative."""

    def __init__(self, lattice, fn, dfn, tag="custom"):
        self.lattice = lattice
        self._fn = fn
        self._dfn = dfn
        self.tag = tag

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._fn(x), dtype=complex)

    __call__ = eval

    def dderiv(self, W, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._dfn(_vecf(W), x), dtype=complex)

    def jet(self, x, Ws, memo=None):
        """(value, [derivative along each W]) in one call.

        ``memo`` is an optional dict private to one call tree with fixed
        (x, Ws); shared sub-observables are then evaluated once.
        """
        x = np.asarray(x, dtype=float)
        return self.eval(x), [self.dderiv(W, x) for W in Ws]

    # arithmetic --------------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            c = complex(other)
            return _Arith(self.lattice, [self], lambda v: v[0] + c,
                          lambda v, d: d[0], f"({self.tag}+{other})")
        return _Arith(self.lattice, [self, other], lambda v: v[0] + v[1],
                      lambda v, d: d[0] + d[1], f"({self.tag}+{other.tag})")

    __radd__ = __add__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other if not np.isscalar(other) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            c = complex(other)
            return _Arith(self.lattice, [self], lambda v: c * v[0],
                          lambda v, d: c * d[0], f"{other}*{self.tag}")
        return _Arith(self.lattice, [self, other], lambda v: v[0] * v[1],
                      lambda v, d: d[0] * v[1] + v[0] * d[1], f"({self.tag}*{other.tag})")

    __rmul__ = __mul__

    def conj(self):
        return _Arith(self.lattice, [self], lambda v: np.conj(v[0]),
                      lambda v, d: np.conj(d[0]), f"conj({self.tag})")

    def real(self):
        return _Arith(self.lattice, [self], lambda v: v[0].real + 0j,
                      lambda v, d: d[0].real + 0j, f"Re({self.tag})")

    def imag(self):
        return _Arith(self.lattice, [self], lambda v: v[0].imag + 0j,
                      lambda v, d: d[0].imag + 0j, f"Im({self.tag})")

    def __repr__(self):
        return f"Observable<{self.tag}>"


class _Arith(Observable):
    """Pointwise combination with the matching product/sum rule."""

    def __init__(self, lattice, parts, op, dop, tag):
        self.lattice = lattice
        self.parts = parts
        self.op = op
        self.dop = dop
        self.tag = tag

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.op([p.eval(x) for p in self.parts]), dtype=complex)

    __call__ = eval

    def dderiv(self, W, x):
        return self.jet(x, [W])[1][0]

    def jet(self, x, Ws, memo=None):
        jets = [p.jet(x, Ws, memo) for p in self.parts]
        vals = [j[0] for j in jets]
        val = np.asarray(self.op(vals), dtype=complex)
        ders = [np.asarray(self.dop(vals, [j[1][k] for j in jets]), dtype=complex)
                for k in range(len(Ws))]
        return val, ders


class Pullback(Observable):
    """f o pi for an Observable f on the quotient of a tower level."""

    def __init__(self, level, f):
        if f.lattice is not level.quotient_lattice:
            raise ValidationError("pullback needs an Observable on the level's quotient")
        self.lattice = level.lattice
        self.level = level
        self.f = f
        self.tag = f"pull({f.tag})"

    def eval(self, x):
        return self.f.eval(self.level.project(x))

    __call__ = eval

    def jet(self, x, Ws, memo=None):
        sub = None if memo is None else memo.setdefault(("pull", id(self)), {})
        return self.f.jet(self.level.project(x), [self.level.project(_vecf(W)) for W in Ws], sub)

    def dderiv(self, W, x):
        return self.jet(x, [W])[1][0]


class _Along(Observable):
    """The derivative W u as an Observable (first order only)."""

    def __init__(self, u, W):
        self.lattice = u.lattice
        self.u = u
        self.W = _vecf(W)
        self.tag = f"d({u.tag})"

    def eval(self, x):
        return self.u.dderiv(self.W, np.asarray(x, dtype=float))

    __call__ = eval

    def dderiv(self, W, x):
        raise NotImplementedError("second derivatives are not available")


def along(u, W):
    return _Along(u, W)


def reciprocal(f):
    return _Arith(f.lattice, [f], lambda v: 1.0 / v[0], lambda v, d: -d[0] / v[0] ** 2,
                  f"1/{f.tag}")


def constant(lattice, c):
    c = complex(c)
    return Observable(lattice, lambda x: np.full(x.shape[:-1], c),
                      lambda W, x: np.zeros(x.shape[:-1], dtype=complex), f"const({c.real:g})")


def torus_character(lattice, m):
    """x -> exp(2 pi i <m, toral_project(x)>)."""
    n = lattice.algebra.n_abelian
    m = np.asarray(m, dtype=float)
    if m.shape != (n,):
        raise ValidationError(f"torus character needs an integer vector of length {n}")

    def fn(x):
        return np.exp(1j * TWO_PI * (x[..., :n] @ m))

    def dfn(W, x):
        return (1j * TWO_PI * float(W[:n] @ m)) * fn(x)

    return Observable(lattice, fn, dfn, f"chi{tuple(int(a) for a in m)}")


def torus_polynomial(lattice, coeffs):
    """sum_m c_m exp(2 pi i <m, x_ab>) from a {m: c_m} map."""
    n = lattice.algebra.n_abelian
    ms = np.array([list(m) for m in coeffs], dtype=float).reshape(-1, n)
    cs = np.array([complex(c) for c in coeffs.values()])

    def fn(x):
        if len(cs) == 0:
            return np.zeros(x.shape[:-1], dtype=complex)
        return np.exp(1j * TWO_PI * (x[..., :n] @ ms.T)) @ cs

    def dfn(W, x):
        if len(cs) == 0:
            return np.zeros(x.shape[:-1], dtype=complex)
        return np.exp(1j * TWO_PI * (x[..., :n] @ ms.T)) @ (cs * 1j * TWO_PI * (ms @ W[:n]))

    return Observable(lattice, fn, dfn, "torus_poly")


# ---------------------------------------------------------------------------
# periodized fiber characters

def _check_dual(v, z):
    vv = []
    for a in np.atleast_1d(np.asarray(v, dtype=object)):
        if isinstance(a, (float, np.floating)):
            if not float(a).is_integer():
                raise ValidationError(f"dual vector {v} is not in the dual lattice (fractional)")
            a = int(a)
        elif isinstance(a, Fraction):
            if a.denominator != 1:
                raise ValidationError(f"dual vector {v} is not in the dual lattice (fractional)")
            a = int(a)
        vv.append(int(a))
    if len(vv) != z.dim:
        raise ValidationError(f"dual vector has length {len(vv)}, fiber has dim {z.dim}")
    return tuple(vv)


class PeriodizedCharacter(Observable):
    """Fiber projection onto H_v of a lattice-periodized Gaussian window.

    With the window w(y) = prod_i exp(-(y_i - c)^2 / (2 sigma^2)) in adapted
    coordinates, the fiber integral of the Lambda-periodization is done in
    closed form (Gaussian Fourier transform), which leaves

        f_v(x) = K_v sum_k  prod_{i free} G(y_i) * A(a(y)) * exp(2 pi i <v, t(y)>)

    over non-central words k with |k_i| <= truncation, y = k * x. Here t(y)
    are the fiber coordinates, a(y) the remaining central coordinates (where
    the window is periodized directly) and K_v the Gaussian transform factor.
    """

    def __init__(self, z: CentralSubspace, v, window_width=0.5, truncation=4, center=0.5,
                 backend="numba"):
        if backend not in ("numba", "numpy"):
            raise ValidationError(f"unknown backend {backend!r}")
        self.backend = backend
        lat = z.lattice
        self.lattice = lat
        self.z = z
        self.v = _check_dual(v, z)
        if all(a == 0 for a in self.v):
            raise ValidationError("v must be nonzero (use H_0 constructors for v = 0)")
        self.sigma = float(window_width)
        self.truncation = int(truncation)
        self.center = float(center)
        self.tag = f"periodized(v={self.v}, w={self.sigma:g}, T={self.truncation})"
        alg = lat.algebra
        self.free = [i for i in range(alg.dim) if i not in z.center]
        rng = range(-self.truncation, self.truncation + 1)
        words = np.zeros(((2 * self.truncation + 1) ** len(self.free), alg.dim))
        for r, k in enumerate(itertools.product(rng, repeat=len(self.free))):
            words[r, self.free] = k
        self.words = words
        vv = np.array(self.v, dtype=float)
        s = self.sigma
        self.K = float(np.prod(s * math.sqrt(2 * math.pi) * np.exp(-2 * math.pi ** 2 * s ** 2 * vv ** 2)))
        self.phase0 = np.exp(-1j * TWO_PI * float(vv.sum()) * self.center)
        self._vv = vv
        self._shifts = np.arange(-self.truncation, self.truncation + 1, dtype=float)

    def _jet(self, x, Ws):
        # f is Gamma-invariant and left translation commutes with the right
        # flows, so evaluating at the reduced representative is exact
        x = reduce(self.lattice, x)
        if self.backend == "numba":
            return self._jet_compiled(x, Ws)
        law = self.lattice.law
        z = self.z
        s2 = self.sigma ** 2
        c = self.center
        shape = x.shape[:-1]
        val = np.zeros(shape, dtype=complex)
        ders = [np.zeros(shape, dtype=complex) for _ in Ws]
        Wf = [np.asarray(W, dtype=float) for W in Ws]
        central_W = [np.all(W[self.free] == 0) for W in Wf]
        for word in self.words:
            y = law.mul(word, x)
            dy_free = y[..., self.free] - c
            g = np.exp(-0.5 * np.sum(dy_free ** 2, axis=-1) / s2)
            a, t = z.split_center(y)
            amp, damp = self._aperiodic(a)
            term = g * amp * np.exp(1j * TWO_PI * (t @ self._vv))
            val += term
            if not Ws:
                continue
            J = None
            for k, W in enumerate(Wf):
                if central_W[k]:
                    dy = np.broadcast_to(W, y.shape)
                else:
                    if J is None:
                        J = law.frame(y)
                    dy = J @ W
                da, dt = z.split_center(dy)
                lg = -np.sum(dy_free * dy[..., self.free], axis=-1) / s2
                la = np.sum(damp * da, axis=-1) if da.shape[-1] else 0.0
                ders[k] += term * (lg + 1j * TWO_PI * (dt @ self._vv)) + \
                    g * la * np.exp(1j * TWO_PI * (t @ self._vv))
        f = self.K * self.phase0
        return f * val, [f * d for d in ders]

    def _jet_compiled(self, x, Ws):
        z = self.z
        shape = x.shape[:-1]
        P = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        Wkey = tuple(tuple(float(a) for a in np.asarray(W, dtype=float)) for W in Ws)
        val = np.zeros(len(P), dtype=complex)
        der = np.zeros((len(Ws), len(P)), dtype=complex)
        f = self.K * self.phase0
        if z.n_quot == 0:
            ukey = tuple(tuple(int(u) for u in row) for row in z.Uinv)
            tabs = _kernels.factored_tables(self.lattice.law, tuple(self.free), tuple(z.center), ukey,
                                            tuple(float(a) for a in self._vv), self.sigma,
                                            self.center, self.truncation, Wkey)
            _kernels.factored_jet(P, *tabs, len(Ws), val, der)
            return (f * val).reshape(shape), [(f * d).reshape(shape) for d in der]
        wkey = tuple(tuple(int(a) for a in w) for w in self.words)
        mono, coef, midx, off = _kernels.composed_tables(self.lattice.law, wkey, Wkey)
        _kernels.periodized_jet(P, len(self.words), mono, coef, midx, off,
                                np.array(self.free, dtype=np.int64),
                                np.array(z.center, dtype=np.int64), z._Uinv_f, z.n_quot, self._vv,
                                self.sigma, self.center, self._shifts, len(Ws), val, der)
        return (f * val).reshape(shape), [(f * d).reshape(shape) for d in der]

    def _aperiodic(self, a):
        """Periodized window in the non-fiber central coordinates and its gradient factor."""
        if a.shape[-1] == 0:
            return np.ones(a.shape[:-1]), np.zeros(a.shape[:-1] + (0,))
        s2 = self.sigma ** 2
        a = a - np.floor(a)
        u = a[..., :, None] + self._shifts - self.center
        e = np.exp(-0.5 * u ** 2 / s2)
        per = e.sum(axis=-1)
        dper = (-(u / s2) * e).sum(axis=-1)
        amp = np.prod(per, axis=-1)
        # d amp / d a_r = amp * dper_r / per_r
        damp = amp[..., None] * dper / per
        return amp, damp

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return self._jet(x, [])[0]

    __call__ = eval

    def dderiv(self, W, x):
        return self._jet(np.asarray(x, dtype=float), [_vecf(W)])[1][0]

    def jet(self, x, Ws, memo=None):
        if memo is not None:
            key = id(self)
            if key not in memo:
                memo[key] = self._jet(np.asarray(x, dtype=float), [_vecf(W) for W in Ws])
            return memo[key]
        return self._jet(np.asarray(x, dtype=float), [_vecf(W) for W in Ws])


def fiber_character_obs(v, z: CentralSubspace, window_width=0.5, truncation=4, center=0.5,
                        certify=True, seed=12345, backend="numba"):
    """A member of H_v built by periodization of a Gaussian window (see PeriodizedCharacter)."""
    f = PeriodizedCharacter(z, v, window_width, truncation, center, backend)
    if certify:
        x = haar_sample(z.lattice, 2048, seed)
        sup = float(np.max(np.abs(f.eval(x))))
        if sup < 1e-6:
            raise ValidationError(f"degenerate window: sup-norm {sup:.3g} < 1e-6 "
                                  "(widen or recenter)")
        res = character_law_residual(f, z, f.v, n=256, seed=seed + 1)
        if res > 1e-8 * max(1.0, sup):
            raise ValidationError(f"H_v character law residual {res:.3g} exceeds 1e-8")
    return f


def character_law_residual(f, z, v, n=1000, seed=0):
    """max |f(Phi_t x) - e^{2 pi i <v,t>} f(x)| over random (x, t)."""
    lat = z.lattice
    x = haar_sample(lat, n, seed)
    gen = np.random.Generator(np.random.Philox(key=seed + 7919))
    t = gen.uniform(-1.0, 1.0, (n, z.dim))
    lhs = f.eval(fiber_act(lat, x, z, t))
    rhs = np.exp(1j * TWO_PI * (t @ np.asarray(v, dtype=float))) * f.eval(x)
    return float(np.max(np.abs(lhs - rhs)))


class FiberProjection(Observable):
    """f_v(x) = int_T e^{-2 pi i <v,t>} f(Phi_t x) dt by the trapezoid rule."""

    def __init__(self, f, z, v, grid):
        self.lattice = z.lattice
        self.f = f
        self.z = z
        self.v = tuple(int(a) for a in v)
        self.grid = int(grid)
        g1 = np.arange(self.grid) / self.grid
        self.nodes = np.array(list(itertools.product(g1, repeat=z.dim)))
        self.weights = np.exp(-1j * TWO_PI * (self.nodes @ np.asarray(self.v, float))) / len(self.nodes)
        self.tag = f"proj_{self.v}({f.tag})"

    def _moved(self, x):
        lat = self.lattice
        return [fiber_act(lat, x, self.z, np.broadcast_to(t, x.shape[:-1] + (self.z.dim,)))
                for t in self.nodes]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return sum(w * self.f.eval(y) for w, y in zip(self.weights, self._moved(x)))

    __call__ = eval

    def dderiv(self, W, x):
        x = np.asarray(x, dtype=float)
        return sum(w * self.f.dderiv(W, y) for w, y in zip(self.weights, self._moved(x)))


def project_fiber(f, z, v, grid=16):
    v = _check_dual(v, z) if np.any(np.asarray(v) != 0) else tuple(0 for _ in range(z.dim))
    return FiberProjection(f, z, v, grid)


# ---------------------------------------------------------------------------
# relative trigonometric polynomials

def degree_of(v):
    g = 0
    for a in v:
        g = math.gcd(g, abs(int(a)))
    return g


class FiberPolynomial(Observable):
    """sum_v f_v + f_0 relative to a central subspace z.

    ``terms`` maps v in Lambda* \\ {0} to Observables in H_v. ``zero_part``
    is an H_0 Observable on the same lattice, a FiberPolynomial of the next
    tower level (pulled back through ``level``), a number, or None.
    """

    def __init__(self, z: CentralSubspace, terms=None, zero_part=None, level=None,
                 certify=False, seed=0):
        self.z = z
        self.lattice = z.lattice
        self.terms = {}
        for v, f in (terms or {}).items():
            vv = _check_dual(v, z)
            if all(a == 0 for a in vv):
                raise ValidationError("v = 0 belongs in zero_part, not in terms")
            if vv in self.terms:
                self.terms[vv] = self.terms[vv] + f
            else:
                self.terms[vv] = f
        if isinstance(zero_part, FiberPolynomial) and zero_part.lattice is not self.lattice:
            if level is None:
                raise ValidationError("a quotient-level zero_part needs the tower level")
        if zero_part is not None and np.isscalar(zero_part):
            zero_part = constant(self.lattice, zero_part)
        self.zero_part = zero_part
        self.level = level
        self.tag = "fiberpoly[" + ",".join(str(v) for v in self.terms) + "]"
        if certify:
            for v, f in self.terms.items():
                r = character_law_residual(f, z, v, n=200, seed=seed)
                if r > 1e-8:
                    raise ValidationError(f"coefficient at v={v} violates the H_v law ({r:.3g})")
            if self.zero_part is not None:
                r = self._zero_invariance(seed)
                if r > 1e-8:
                    raise ValidationError(f"zero_part is not fiber invariant ({r:.3g})")

    @property
    def degree(self):
        return max((degree_of(v) for v in self.terms), default=0)

    @property
    def is_z_invariant(self):
        return not self.terms

    def _zero_invariance(self, seed):
        lat = self.lattice
        x = haar_sample(lat, 200, seed)
        gen = np.random.Generator(np.random.Philox(key=seed + 17))
        t = gen.uniform(-1, 1, (200, self.z.dim))
        a = self.zero_eval(fiber_act(lat, x, self.z, t))
        return float(np.max(np.abs(a - self.zero_eval(x))))

    def _zero_jet(self, x, Ws, memo=None):
        zp = self.zero_part
        shape = x.shape[:-1]
        if zp is None:
            return np.zeros(shape, dtype=complex), [np.zeros(shape, dtype=complex) for _ in Ws]
        if self.level is not None and zp.lattice is not self.lattice:
            xb = self.level.project(x)
            Wb = [self.level.project(np.asarray(W, dtype=float)) for W in Ws]
            return zp.jet(xb, Wb, None if memo is None else memo.setdefault("quotient", {}))
        return zp.jet(x, Ws, memo)

    def zero_eval(self, x):
        return self._zero_jet(np.asarray(x, dtype=float), [])[0]

    def term_values(self, x):
        x = np.asarray(x, dtype=float)
        return {v: f.eval(x) for v, f in self.terms.items()}

    def eval(self, x):
        return self.jet(x, [])[0]

    __call__ = eval

    def dderiv(self, W, x):
        return self.jet(x, [W])[1][0]

    def jet(self, x, Ws, memo=None):
        x = np.asarray(x, dtype=float)
        Ws = [_vecf(W) for W in Ws]
        memo = {} if memo is None else memo
        val, ders = self._zero_jet(x, Ws, memo)
        ders = list(ders)
        for f in self.terms.values():
            v, d = f.jet(x, Ws, memo)
            val = val + v
            ders = [a + b for a, b in zip(ders, d)]
        return val, ders

    def term_jets(self, x, Ws, memo=None):
        """{v: (value, derivatives)} for the v != 0 terms."""
        x = np.asarray(x, dtype=float)
        Ws = [_vecf(W) for W in Ws]
        memo = {} if memo is None else memo
        return {v: f.jet(x, Ws, memo) for v, f in self.terms.items()}

    # structure-preserving arithmetic
    def scaled(self, c, shift=0.0):
        """c * self + shift (shift goes into the zero part)."""
        terms = {v: f * c for v, f in self.terms.items()}
        zp = self.zero_part
        if zp is None:
            zp = constant(self.lattice, shift) if shift else None
        else:
            zp = zp * c + shift if not isinstance(zp, FiberPolynomial) else zp.scaled(c, shift)
        return FiberPolynomial(self.z, terms, zp, self.level)

    def __add__(self, other):
        if np.isscalar(other):
            return self.scaled(1.0, other)
        if isinstance(other, FiberPolynomial) and other.z is self.z:
            terms = dict(self.terms)
            for v, f in other.terms.items():
                terms[v] = terms[v] + f if v in terms else f
            if self.zero_part is None:
                zp = other.zero_part
            elif other.zero_part is None:
                zp = self.zero_part
            else:
                zp = self.zero_part + other.zero_part
            return FiberPolynomial(self.z, terms, zp, self.level or other.level)
        return Observable.__add__(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scaled(other)
        return Observable.__mul__(self, other)

    __rmul__ = __mul__

    def conj(self):
        """conj(p): the term at v moves to -v."""
        terms = {tuple(-a for a in v): f.conj() for v, f in self.terms.items()}
        zp = self.zero_part
        if zp is not None:
            zp = zp.conj()
        return FiberPolynomial(self.z, terms, zp, self.level)

    def real(self):
        """Re(p) as a FiberPolynomial: terms (f_v + conj f_{-v}) / 2."""
        keys = set(self.terms) | {tuple(-a for a in v) for v in self.terms}
        terms = {}
        for v in sorted(keys):
            neg = tuple(-a for a in v)
            parts = []
            if v in self.terms:
                parts.append(self.terms[v] * 0.5)
            if neg in self.terms:
                parts.append(self.terms[neg].conj() * 0.5)
            terms[v] = parts[0] if len(parts) == 1 else parts[0] + parts[1]
        zp = self.zero_part
        if zp is not None:
            zp = zp.real()
        return FiberPolynomial(self.z, terms, zp, self.level)

    def perp(self):
        return FiberPolynomial(self.z, self.terms, None, self.level)

    def __repr__(self):
        return f"FiberPolynomial(terms={sorted(self.terms)}, zero={self.zero_part!r})"


def decompose_alpha(alpha, n=10 ** 5, seed=0):
    """(zero_part, perp_part) of a positive real FiberPolynomial.

    Positivity and real-valuedness are checked on n Haar samples. The zero
    part is returned as an Observable on the same lattice.
    """
    if not isinstance(alpha, FiberPolynomial):
        raise ValidationError("decompose_alpha needs a FiberPolynomial")
    lat = alpha.lattice
    x = haar_sample(lat, n, seed)
    vals = alpha.eval(x)
    if float(np.max(np.abs(vals.imag))) > 1e-10:
        raise ValidationError("alpha is not real-valued")
    amin = float(vals.real.min())
    if amin <= 0:
        raise ValidationError(f"alpha is not positive (sampled min {amin:.4g})")
    zero = (_ZeroPull(alpha) if alpha.zero_part is not None else constant(lat, 0.0))
    zmin = float(zero.eval(x).real.min())
    if zmin <= 0:
        raise ValidationError(f"zero part is not positive (sampled min {zmin:.4g})")
    log.info("alpha sampled min %.4g, zero part min %.4g", amin, zmin)
    return zero, alpha.perp()


class _ZeroPull(Observable):
    def __init__(self, poly):
        self.lattice = poly.lattice
        self.poly = poly
        self.tag = f"zero({poly.tag})"

    def eval(self, x):
        return self.poly.zero_eval(np.asarray(x, dtype=float))

    __call__ = eval

    def jet(self, x, Ws, memo=None):
        return self.poly._zero_jet(np.asarray(x, dtype=float), [_vecf(W) for W in Ws], memo)

    def dderiv(self, W, x):
        return self.jet(x, [W])[1][0]


def fiber_average(f, z, x, grid=32):
    """Numerical fiber average of f (trapezoid rule, used as an oracle)."""
    return FiberProjection(f, z, tuple(0 for _ in range(z.dim)), grid).eval(x)


# ---------------------------------------------------------------------------
# torus transfer functions

def torus_transfer(p, omega, tol=1e-12):
    """u_m = p_m / (2 pi i <m, omega>) for m != 0, solving omega . grad u = p - mean."""
    omega = np.asarray(omega, dtype=float)
    out = {}
    for m, c in p.items():
        m = tuple(int(a) for a in m)
        if all(a == 0 for a in m):
            continue
        w = float(np.dot(m, omega))
        if abs(w) <= tol:
            raise ValidationError(f"resonant mode m={m}: <m, omega> = {w:.3g}")
        out[m] = complex(c) / (1j * TWO_PI * w)
    return out


def torus_eval(coeffs, x):
    """Evaluate {m: c_m} at torus points x (..., n)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1], dtype=complex)
    for m, c in coeffs.items():
        out = out + complex(c) * np.exp(1j * TWO_PI * (x @ np.asarray(m, dtype=float)))
    return out


def cos_mode(m, amp=1.0):
    """Coefficients of amp * cos(2 pi <m, x>)."""
    m = tuple(int(a) for a in m)
    return {m: amp / 2, tuple(-a for a in m): amp / 2}
