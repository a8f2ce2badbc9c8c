"""
Polynomial group law in second-kind Malcev coordinates.

The product, inverse, exponential chart and left-invariant frame are
polynomials with rational coefficients. They are derived once per algebra
by running the exact BCH code on sympy symbols, then compiled to vectorized
numpy callables for the float regime.
"""
from functools import lru_cache

import numpy as np
import sympy as sp

from .lie_core import _bch_raw


def _sym_vec(name, d):
    out = np.empty(d, dtype=object)
    out[:] = sp.symbols(f"{name}0:{d}")
    return out


def _expand(v):
    out = np.empty(len(v), dtype=object)
    for i, e in enumerate(v):
        out[i] = sp.expand(e)
    return out


def _unit(d, i, value):
    v = np.empty(d, dtype=object)
    v[:] = sp.Integer(0)
    v[i] = value
    return v


def sym_second_to_first(alg, x):
    """log(exp(x_1 E_1) ... exp(x_d E_d)) as polynomials in x."""
    d = alg.dim
    acc = _unit(d, 0, x[0])
    for i in range(1, d):
        acc = _expand(_bch_raw(alg, acc, _unit(d, i, x[i])))
    return acc


def sym_first_to_second(alg, a):
    """Second-kind coordinates of exp(a) by sequential peeling."""
    d = alg.dim
    out = np.empty(d, dtype=object)
    cur = a.copy()
    for i in range(d):
        out[i] = sp.expand(cur[i])
        cur = _expand(_bch_raw(alg, _unit(d, i, -out[i]), cur))
    return out


class _Compiled:
    """Vector-valued polynomial map compiled for broadcasting arrays."""

    def __init__(self, exprs, args):
        self.exprs = list(exprs)
        self.args = list(args)
        self._fns = [sp.lambdify(self.args, e, modules="numpy") for e in self.exprs]
        self._const = [e.free_symbols == set() for e in self.exprs]

    def __call__(self, *arrays):
        flat = []
        for a in arrays:
            a = np.asarray(a, dtype=float)
            flat.extend(a[..., i] for i in range(a.shape[-1]))
        shape = np.broadcast_shapes(*[f.shape for f in flat]) if flat else ()
        out = np.empty(shape + (len(self.exprs),))
        for k, (fn, const) in enumerate(zip(self._fns, self._const)):
            out[..., k] = fn(*flat)
        return out


class GroupLaw:
    """Second-kind group law of one algebra (exact coefficients, float evaluation)."""

    def __init__(self, alg):
        self.alg = alg
        d = alg.dim
        x, y, a = _sym_vec("x", d), _sym_vec("y", d), _sym_vec("a", d)
        m = sp.Symbol("m")
        self.s2f_expr = sym_second_to_first(alg, x)
        self.f2s_expr = sym_first_to_second(alg, a)
        ly = sym_second_to_first(alg, y)
        prod_first = _expand(_bch_raw(alg, self.s2f_expr, ly))
        sub = dict(zip(a, prod_first))
        self.mul_expr = np.array([sp.expand(e.xreplace(sub)) for e in self.f2s_expr], dtype=object)
        neg = dict(zip(a, -self.s2f_expr))
        self.inv_expr = np.array([sp.expand(e.xreplace(neg)) for e in self.f2s_expr], dtype=object)
        zero_y = {yi: 0 for yi in y}
        self.frame_expr = [[sp.expand(sp.diff(self.mul_expr[i], y[j]).xreplace(zero_y))
                            for j in range(d)] for i in range(d)]
        self.x_syms, self.y_syms, self.a_syms = list(x), list(y), list(a)

        self.mul = _Compiled(self.mul_expr, list(x) + list(y))
        self.inv = _Compiled(self.inv_expr, list(x))
        self.f2s = _Compiled(self.f2s_expr, list(a))
        self.s2f = _Compiled(self.s2f_expr, list(x))
        self._frame = _Compiled([e for row in self.frame_expr for e in row], list(x))
        # left multiplication by m E_j (a lattice generator power)
        self._lmul = []
        for j in range(d):
            subj = {x[i]: (m if i == j else 0) for i in range(d)}
            ex = [sp.expand(e.xreplace(subj)) for e in self.mul_expr]
            self._lmul.append(_Compiled(ex, [m] + list(y)))

    def frame(self, x):
        """J(x) with d/ds coords(x exp(sW)) at s=0 equal to J(x) @ W; shape (..., d, d)."""
        f = self._frame(x)
        return f.reshape(f.shape[:-1] + (self.alg.dim, self.alg.dim))

    def lmul(self, j, m, y):
        """Coordinates of exp(m E_j) * y."""
        m = np.asarray(m, dtype=float)[..., None]
        return self._lmul[j](m, y)

    def exp_path(self, W, t):
        """Second-kind coordinates of exp(t W) for an array of times t."""
        t = np.asarray(t, dtype=float)
        return self.f2s(t[..., None] * np.asarray(W, dtype=float))

    def is_integral(self, expr_list):
        return all(all(c.q == 1 for c in sp.Poly(e, *self.x_syms, *self.y_syms).coeffs())
                   for e in expr_list if e != 0)


@lru_cache(maxsize=32)
def _cached(key_alg):
    return GroupLaw(key_alg)


def group_law(alg):
    return _cached(alg)
