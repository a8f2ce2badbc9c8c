"""
Compiled evaluation of periodized fiber characters and their jets.

The group law enters through sparse polynomial tables (coefficients and
exponent rows) extracted from the sympy expressions, so one compiled
kernel serves every algebra.

When the envelope is the whole fiber (no periodized quotient coordinates)
the logarithm of every summand is a polynomial in (k, p), word k and point
p, so each term factors as w_k prod_a Z_a(p)^(k^a) over the k-monomials a.
``factored_jet`` then needs a few complex exponentials per point and one
product per word.
"""
import itertools
from functools import lru_cache

import numpy as np
import sympy as sp
from numba import njit


def poly_table(exprs, syms):
    """(coef, exps, offsets) for a list of polynomials in syms."""
    coefs, exps, offs = [], [], [0]
    for e in exprs:
        e = sp.expand(e)
        if e == 0:
            offs.append(offs[-1])
            continue
        for mon, c in sp.Poly(e, *syms).terms():
            coefs.append(float(c))
            exps.append(list(mon))
        offs.append(len(coefs))
    nv = len(syms)
    return (np.array(coefs, dtype=np.float64),
            np.array(exps, dtype=np.int64).reshape(-1, nv),
            np.array(offs, dtype=np.int64))


@lru_cache(maxsize=64)
def composed_tables(law, words_key, W_key):
    """Per-word polynomials in the point p of y = exp(word) * p and J(y) @ W_l.

    Returns (mono, coef, midx, off): the distinct monomials of p (exponent
    rows), and for output slot r = word * (d + L d) + j the terms
    coef[off[r]:off[r+1]] times monomial midx[...].
    """
    d = law.alg.dim
    xs, ps = law.x_syms, law.y_syms
    Ws = [np.asarray(W, dtype=float) for W in W_key]
    frame = [[law.frame_expr[i][j] for j in range(d)] for i in range(d)]
    mono_index = {}
    coefs, midx, offs = [], [], [0]

    def add(expr):
        expr = sp.expand(expr)
        if expr != 0:
            for mon, c in sp.Poly(expr, *ps).terms():
                k = mono_index.setdefault(mon, len(mono_index))
                coefs.append(float(c))
                midx.append(k)
        offs.append(len(coefs))

    for w in words_key:
        sub = {xs[i]: sp.Integer(int(w[i])) for i in range(d)}
        y = [sp.expand(e.xreplace(sub)) for e in law.mul_expr]
        for e in y:
            add(e)
        ysub = dict(zip(xs, y))
        for W in Ws:
            for i in range(d):
                add(sp.Add(*[frame[i][j].xreplace(ysub) * sp.Float(W[j])
                             for j in range(d) if W[j] != 0]))
    mono = np.zeros((max(len(mono_index), 1), d), dtype=np.int64)
    for mon, k in mono_index.items():
        mono[k] = mon
    return mono, np.array(coefs), np.array(midx, dtype=np.int64), np.array(offs, dtype=np.int64)


@njit(cache=True)
def _peval(coef, exps, off, k, y):
    s = 0.0
    for t in range(off[k], off[k + 1]):
        m = coef[t]
        for j in range(exps.shape[1]):
            e = exps[t, j]
            if e == 1:
                m *= y[j]
            elif e > 1:
                m *= y[j] ** e
        s += m
    return s


@njit(cache=True)
def periodized_jet(P, nwords, mono, coef, midx, off, free, cidx, Uinv, nq, vv, sigma, center,
                   shifts, L, val, der):
    """Accumulate the unnormalized periodized sum and its W-derivatives.

    P (M, d) reduced points; (mono, coef, midx, off) from composed_tables;
    cidx, Uinv split central coordinates into (a, t); shifts periodize the
    a-part.
    """
    M, d = P.shape
    U = mono.shape[0]
    nc = cidx.shape[0]
    nf = free.shape[0]
    nt = nc - nq
    s2 = sigma * sigma
    two_pi = 2.0 * np.pi
    stride = d + L * d
    mv = np.empty(U)
    y = np.empty(d)
    dy = np.empty(d)
    w = np.empty(nc)
    dw = np.empty(nc)
    dfree = np.empty(nf)
    per = np.empty(max(nq, 1))
    dper = np.empty(max(nq, 1))
    for m in range(M):
        p = P[m]
        for u in range(U):
            v = 1.0
            for j in range(d):
                e = mono[u, j]
                if e == 1:
                    v *= p[j]
                elif e > 1:
                    v *= p[j] ** e
            mv[u] = v
        for k in range(nwords):
            b0 = k * stride
            for i in range(d):
                acc = 0.0
                for t in range(off[b0 + i], off[b0 + i + 1]):
                    acc += coef[t] * mv[midx[t]]
                y[i] = acc
            q = 0.0
            for a in range(nf):
                dfree[a] = y[free[a]] - center
                q += dfree[a] * dfree[a]
            g = np.exp(-0.5 * q / s2)
            if g < 1e-300:
                continue
            for r in range(nc):
                acc = 0.0
                for c in range(nc):
                    acc += Uinv[r, c] * y[cidx[c]]
                w[r] = acc
            amp = 1.0
            for r in range(nq):
                a0 = w[r] - np.floor(w[r])
                sp_ = 0.0
                dsp = 0.0
                for sh in shifts:
                    uu = a0 + sh - center
                    e = np.exp(-0.5 * uu * uu / s2)
                    sp_ += e
                    dsp += -(uu / s2) * e
                per[r] = sp_
                dper[r] = dsp
                amp *= sp_
            ph = 0.0
            for r in range(nt):
                ph += vv[r] * w[nq + r]
            term = g * amp * (np.cos(two_pi * ph) + 1j * np.sin(two_pi * ph))
            val[m] += term
            for l in range(L):
                bl = b0 + d + l * d
                for i in range(d):
                    acc = 0.0
                    for t in range(off[bl + i], off[bl + i + 1]):
                        acc += coef[t] * mv[midx[t]]
                    dy[i] = acc
                lg = 0.0
                for a in range(nf):
                    lg -= dfree[a] * dy[free[a]]
                lg /= s2
                for r in range(nc):
                    acc = 0.0
                    for cc in range(nc):
                        acc += Uinv[r, cc] * dy[cidx[cc]]
                    dw[r] = acc
                dph = 0.0
                for r in range(nt):
                    dph += vv[r] * dw[nq + r]
                la = 0.0
                for r in range(nq):
                    la += dper[r] / per[r] * dw[r]
                der[l, m] += term * (lg + la + 1j * two_pi * dph)


def _kmonomial_groups(expr, ks, ps):
    """{k-exponent tuple: polynomial in p} for an expression in (k, p)."""
    out = {}
    for mon, c in sp.Poly(sp.expand(expr), *ks, *ps).terms():
        km, pm = mon[:len(ks)], mon[len(ks):]
        term = c * sp.Mul(*[p ** e for p, e in zip(ps, pm)])
        out[km] = out.get(km, 0) + term
    return out


@lru_cache(maxsize=64)
def factored_tables(law, free, cidx, Uinv_key, vv, sigma, center, truncation, W_key):
    """Tables for factored_jet.

    Returns (mono, coef, midx, off, expo, nmin, wts): polynomial slots
    [Re e_a, Im e_a] for each p-dependent k-monomial a, followed by the
    W-derivatives of the same; integer exponents k^a per word; per-word
    constant weights from the p-independent monomials.
    """
    d = law.alg.dim
    xs, ps = law.x_syms, law.y_syms
    ks = sp.symbols(f"k0:{len(free)}")
    sub = {xs[i]: 0 for i in range(d)}
    for a, i in enumerate(free):
        sub[xs[i]] = ks[a]
    y = [sp.expand(e.xreplace(sub)) for e in law.mul_expr]
    c = sp.nsimplify(center)
    Q = sum((y[i] - c) ** 2 for i in free)
    Uinv = [[sp.Rational(u) for u in row] for row in Uinv_key]
    t = [sum(Uinv[r][j] * y[cidx[j]] for j in range(len(cidx))) for r in range(len(cidx))]
    Phi = sum(sp.nsimplify(vv[r]) * t[r] for r in range(len(cidx)))
    gq = _kmonomial_groups(Q, ks, ps)
    gp = _kmonomial_groups(Phi, ks, ps)
    keys = sorted(set(gq) | set(gp))
    s2 = float(sigma) ** 2
    active, const = [], []
    for km in keys:
        q = sp.expand(gq.get(km, 0))
        ph = sp.expand(gp.get(km, 0))
        re = -q / (2 * sp.nsimplify(s2))
        im = 2 * sp.pi * ph
        if re.free_symbols or im.free_symbols or not any(km):
            active.append((km, re, im))
        else:
            const.append((km, complex(float(re), float(im))))
    rng = range(-truncation, truncation + 1)
    words = np.array(list(itertools.product(rng, repeat=len(free))), dtype=np.int64)
    expo = np.array([[int(np.prod(w ** np.array(km))) for km, _, _ in active] for w in words],
                    dtype=np.int64).reshape(len(words), len(active))
    logw = np.zeros(len(words), dtype=complex)
    for km, val in const:
        logw += np.prod(words ** np.array(km), axis=1) * val
    wts = np.exp(logw)
    nmin = expo.min(axis=0) if len(words) else np.zeros(len(active), dtype=np.int64)
    frame = [[law.frame_expr[i][j].xreplace(dict(zip(xs, ps))) for j in range(d)] for i in range(d)]
    Ws = [np.asarray(W, dtype=float) for W in W_key]
    mono_index = {}
    coefs, midx, offs = [], [], [0]

    def add(expr):
        expr = sp.expand(expr)
        if expr != 0:
            for mon, cf in sp.Poly(expr, *ps).terms():
                k = mono_index.setdefault(mon, len(mono_index))
                coefs.append(float(cf))
                midx.append(k)
        offs.append(len(coefs))

    for _, re, im in active:
        add(re)
        add(im)
    for W in Ws:
        JW = [sp.Add(*[frame[j][i] * sp.Float(W[i]) for i in range(d) if W[i] != 0]) for j in range(d)]
        for _, re, im in active:
            add(sum(sp.diff(re, ps[j]) * JW[j] for j in range(d)))
            add(sum(sp.diff(im, ps[j]) * JW[j] for j in range(d)))
    mono = np.zeros((max(len(mono_index), 1), d), dtype=np.int64)
    for mon, k in mono_index.items():
        mono[k] = mon
    return (mono, np.array(coefs), np.array(midx, dtype=np.int64), np.array(offs, dtype=np.int64),
            expo, nmin.astype(np.int64), wts)


@njit(cache=True)
def factored_jet(P, mono, coef, midx, off, expo, nmin, wts, L, val, der):
    """Sum over words of w_k prod_a Z_a^(k^a) and its W-derivatives (see factored_tables)."""
    M, d = P.shape
    U = mono.shape[0]
    nw, A = expo.shape
    span = 1
    for a in range(A):
        hi = nmin[a]
        for k in range(nw):
            if expo[k, a] > hi:
                hi = expo[k, a]
        if hi - nmin[a] + 1 > span:
            span = hi - nmin[a] + 1
    mv = np.empty(U)
    e = np.empty(A, dtype=np.complex128)
    de = np.empty((L, A), dtype=np.complex128)
    pw = np.empty((A, span), dtype=np.complex128)
    for m in range(M):
        p = P[m]
        for u in range(U):
            v = 1.0
            for j in range(d):
                ex = mono[u, j]
                if ex == 1:
                    v *= p[j]
                elif ex > 1:
                    v *= p[j] ** ex
            mv[u] = v
        for slot in range(2 * A + 2 * L * A):
            acc = 0.0
            for t in range(off[slot], off[slot + 1]):
                acc += coef[t] * mv[midx[t]]
            if slot < 2 * A:
                a = slot // 2
                if slot % 2 == 0:
                    e[a] = acc
                else:
                    e[a] = e[a] + 1j * acc
            else:
                r = slot - 2 * A
                l = r // (2 * A)
                a = (r % (2 * A)) // 2
                if r % 2 == 0:
                    de[l, a] = acc
                else:
                    de[l, a] = de[l, a] + 1j * acc
        for a in range(A):
            z = np.exp(e[a])
            zi = np.exp(-e[a])
            lo = nmin[a]
            # powers lo .. lo + span - 1, anchored at exponent 0
            if lo <= 0:
                pw[a, -lo] = 1.0
                for n in range(-lo + 1, span):
                    pw[a, n] = pw[a, n - 1] * z
                for n in range(-lo - 1, -1, -1):
                    pw[a, n] = pw[a, n + 1] * zi
            else:
                base = np.exp(lo * e[a])
                pw[a, 0] = base
                for n in range(1, span):
                    pw[a, n] = pw[a, n - 1] * z
        for k in range(nw):
            term = wts[k]
            for a in range(A):
                term *= pw[a, expo[k, a] - nmin[a]]
            val[m] += term
            for l in range(L):
                dl = 0.0j
                for a in range(A):
                    dl += expo[k, a] * de[l, a]
                der[l, m] += term * dl
