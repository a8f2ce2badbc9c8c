"""
The compact quotient M = Gamma\\G in second-kind Malcev coordinates.

Points are float arrays of shape (..., dim) with entries in [0, 1). The
lattice Gamma is the set of integer second-kind words, which is a group
when the structure constants are chosen accordingly (checked on generators).
"""
import csv
import logging
import math
from fractions import Fraction

import numpy as np

from ._grouplaw import group_law
from .lie_core import (AlgebraVector, GroupElement, LieAlgebra, ValidationError,
                       _bch_raw, _raw, as_exact, nullspace, rref)

log = logging.getLogger(__name__)

WRAP_TOL = 1e-9


class Lattice:
    """Integer second-kind words exp(m_1 E_1)...exp(m_d E_d) in G."""

    def __init__(self, algebra: LieAlgebra, check=True):
        self.algebra = algebra
        self.dim = algebra.dim
        self.law = group_law(algebra)
        if check:
            self._check_generators()

    def _check_generators(self):
        d = self.dim
        for i in range(d):
            for j in range(d):
                for si in (1, -1):
                    for sj in (1, -1):
                        a = [0] * d
                        b = [0] * d
                        a[i] = si
                        b[j] = sj
                        prod = mul_exact(self.algebra, a, b)
                        if any(c.denominator != 1 for c in prod):
                            raise ValidationError(
                                f"integer words are not closed under products: "
                                f"{si:+d}E{i + 1} * {sj:+d}E{j + 1} -> {list(map(str, prod))}")

    def __repr__(self):
        return f"Lattice({self.algebra!r})"


class NilPoint:
    """A single point of M (reduced second-kind coordinates, each in [0,1))."""

    __slots__ = ("coords2",)

    def __init__(self, coords2):
        c = np.array(coords2, dtype=float)
        if c.ndim != 1 or np.any(c < 0) or np.any(c >= 1):
            raise ValidationError("NilPoint coordinates must lie in [0, 1)")
        c.setflags(write=False)
        object.__setattr__(self, "coords2", c)

    def __setattr__(self, key, value):
        raise AttributeError("NilPoint is immutable")

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coords2, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, NilPoint):
            return NotImplemented
        d = np.abs(self.coords2 - other.coords2)
        return bool(np.all(np.minimum(d, 1 - d) <= WRAP_TOL))

    __hash__ = None

    def __repr__(self):
        return f"NilPoint({self.coords2.tolist()})"


def _pts(x):
    if isinstance(x, NilPoint):
        return x.coords2
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# exact coordinate changes (spec path, used for construction and as oracle)

def second_to_first(alg, x):
    """log(exp(x_1 E_1) ... exp(x_d E_d)) by repeated BCH (exact or float)."""
    x = _raw(x)
    d = alg.dim
    acc = None
    for i in range(d):
        e = np.zeros(x.shape, dtype=x.dtype) if x.dtype != object else _zeros_like(x)
        e[..., i] = x[..., i]
        acc = e if acc is None else _bch_raw(alg, acc, e)
    return acc


def _zeros_like(x):
    out = np.empty(x.shape, dtype=object)
    out[...] = Fraction(0)
    return out


def first_to_second(g, alg=None):
    """Second-kind coordinates of exp(log g) by sequential peeling.

    Accepts a GroupElement or a first-kind coordinate array (then alg is
    required). Exact for rational input.
    """
    if isinstance(g, GroupElement):
        alg, a = g.algebra, g.log.coords
    else:
        a = _raw(g)
    d = alg.dim
    cur = np.array(a, dtype=a.dtype, copy=True)
    out = np.array(cur, copy=True)
    for i in range(d):
        out[..., i] = cur[..., i]
        e = _zeros_like(cur) if cur.dtype == object else np.zeros_like(cur)
        e[..., i] = -cur[..., i]
        cur = _bch_raw(alg, e, cur)
    return out


def mul_exact(alg, x, y):
    """Exact product of two second-kind coordinate vectors."""
    x, y = as_exact(x), as_exact(y)
    return first_to_second(_bch_raw(alg, second_to_first(alg, x), second_to_first(alg, y)),
                           alg)


# ---------------------------------------------------------------------------
# float group law on point arrays

def mul(lat, x, y):
    """Second-kind coordinates of x * y (unreduced)."""
    return lat.law.mul(x, y)


def inverse(lat, x):
    return lat.law.inv(x)


def exp_coords(lat, W, t=1.0):
    """Second-kind coordinates of exp(t W)."""
    return lat.law.exp_path(_raw(W).astype(float), t)


def reduce(lat, g, centered=False):
    """Canonical coset representative of Gamma g in [0, 1)^dim.

    g is a GroupElement, or an array of unreduced second-kind coordinates.
    Coordinates are reduced first to last by left multiplication with
    integer powers of the generators. ``centered=True`` reduces to
    [-1/2, 1/2) instead (used for distances).
    """
    if isinstance(g, GroupElement):
        y = first_to_second(g).astype(float)
    else:
        y = np.array(_pts(g), dtype=float, copy=True)
    law = lat.law
    for j in range(lat.dim):
        if centered:
            m = np.floor(y[..., j] + 0.5)
        else:
            m = np.floor(y[..., j])
            frac = y[..., j] - m
            m = np.where(frac >= 1 - WRAP_TOL, m + 1, m)
        if np.any(m != 0):
            y = law.lmul(j, -m, y)
        if not centered:
            y[..., j] = np.clip(y[..., j], 0.0, np.nextafter(1.0, 0.0))
    return y


def distance(lat, x, y):
    """Second-kind sup-distance |y x^{-1}| after centering by the lattice."""
    rel = mul(lat, _pts(y), inverse(lat, _pts(x)))
    return np.max(np.abs(reduce(lat, rel, centered=True)), axis=-1)


def haar_sample(lat, n, seed, workers=1):
    """n Haar-random points (uniform second-kind coordinates).

    Counter-based Philox streams; worker w uses key seed + w and the blocks
    are concatenated in worker order.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    sizes = [n // workers + (1 if w < n % workers else 0) for w in range(workers)]
    blocks = []
    for w, m in enumerate(sizes):
        gen = np.random.Generator(np.random.Philox(key=int(seed) + w))
        blocks.append(gen.random((m, lat.dim)))
    return np.concatenate(blocks, axis=0)


def toral_project(lat, x):
    """First n = dim g/[g,g] coordinates mod 1."""
    return np.mod(_pts(x)[..., : lat.algebra.n_abelian], 1.0)


# ---------------------------------------------------------------------------
# central subspaces

def _int_column_reduce(rows, n):
    """Unimodular U with R @ U = [H | 0] for an integer matrix R (r x n)."""
    R = [list(r) for r in rows]
    U = [[int(i == j) for j in range(n)] for i in range(n)]
    piv_col = 0
    for r in range(len(R)):
        if piv_col >= n:
            break
        while True:
            nz = [c for c in range(piv_col, n) if R[r][c] != 0]
            if not nz:
                break
            c0 = min(nz, key=lambda c: abs(R[r][c]))
            _swap_cols(R, U, piv_col, c0)
            done = True
            for c in range(piv_col + 1, n):
                if R[r][c]:
                    q = R[r][c] // R[r][piv_col]
                    _addcol(R, U, c, piv_col, -q)
                    if R[r][c]:
                        done = False
            if done:
                piv_col += 1
                break
    return U, piv_col


def _swap_cols(R, U, a, b):
    for M in (R, U):
        for row in M:
            row[a], row[b] = row[b], row[a]


def _addcol(R, U, dst, src, q):
    for M in (R, U):
        for row in M:
            row[dst] += q * row[src]


def _primitive_int(row):
    den = 1
    for a in row:
        den = den * Fraction(a).denominator // math.gcd(den, Fraction(a).denominator)
    ints = [int(Fraction(a) * den) for a in row]
    g = 0
    for a in ints:
        g = math.gcd(g, abs(a))
    return [a // g for a in ints] if g else ints


class CentralSubspace:
    """A rational subspace z of g_k with its lattice Lambda = z ∩ log Gamma.

    ``lam`` (d x dim integers) is a primitive basis of Lambda; fiber vectors
    t are coordinates in that basis, so Phi_t with t in Z^d is trivial on M.
    The dual lattice Lambda* is Z^d in the dual basis (``dual_lattice``).
    Central coordinates c are split as c = U w with U unimodular,
    w = (quotient part, fiber part t).
    """

    def __init__(self, lat: Lattice, basis):
        alg = lat.algebra
        self.lattice = lat
        self.algebra = alg
        B = as_exact(np.atleast_2d(np.array(basis, dtype=object)))
        red, piv = rref(B)
        if len(piv) == 0:
            raise ValidationError("central subspace must be nonzero")
        cidx = alg.center_indices
        if any(p not in cidx for p in piv) or any(
                red[r][c] != 0 for r in range(len(red)) for c in range(alg.dim) if c not in cidx):
            raise ValidationError("subspace is not contained in g_k (the last series term)")
        for row in red:
            for i in range(alg.dim):
                e = [Fraction(int(q == i)) for q in range(alg.dim)]
                br = _bch_bracket(alg, row, e)
                if any(v != 0 for v in br):
                    raise ValidationError("subspace is not central")
        self.basis = red
        self.dim = len(piv)
        self.center = list(cidx)
        nk = len(cidx)
        zc = [[row[c] for c in cidx] for row in red]
        ann = nullspace(zc, nk)          # functionals vanishing on z
        rel = [_primitive_int(r) for r in ann]
        U, rnk = _int_column_reduce(rel, nk)
        assert rnk == nk - self.dim
        self.U = np.array(U, dtype=object)
        self.Uinv = np.array(_int_inverse(U), dtype=object)
        self.lam_center = np.array([[U[i][j] for i in range(nk)] for j in range(rnk, nk)],
                                   dtype=object)
        lam = np.zeros((self.dim, alg.dim), dtype=object)
        lam[...] = 0
        for r in range(self.dim):
            for k, c in enumerate(cidx):
                lam[r, c] = int(self.lam_center[r, k])
        self.lam = lam
        self.dual_lattice = np.eye(self.dim, dtype=int)
        self.n_quot = rnk
        self._Uinv_f = self.Uinv.astype(float)
        self._lam_f = lam.astype(float)

    @classmethod
    def full_center(cls, lat):
        alg = lat.algebra
        rows = [[int(q == i) for q in range(alg.dim)] for i in alg.center_indices]
        return cls(lat, rows)

    def split_center(self, x):
        """(quotient part, fiber part t) of the central coordinates of x."""
        c = _pts(x)[..., self.center]
        w = c @ self._Uinv_f.T
        return w[..., : self.n_quot], w[..., self.n_quot:]

    def fiber_coords(self, W):
        """Coordinates t of a vector W of z in the Lambda basis."""
        w = _raw(W)
        if w.dtype == object:
            c = [Fraction(w[k]) for k in self.center]
            t = [sum(self.Uinv[i, j] * c[j] for j in range(len(c))) for i in range(len(c))]
            return np.array(t[self.n_quot:], dtype=object)
        return (w[..., self.center] @ self._Uinv_f.T)[..., self.n_quot:]

    def contains(self, W, tol=1e-9):
        w = _raw(W)
        if w.dtype == object:
            from .lie_core import in_span
            return in_span(list(w), list(self.basis))
        proj = self.fiber_coords(w.astype(float)) @ self._lam_f
        return float(np.max(np.abs(proj - w))) < tol

    def __repr__(self):
        rows = ["(" + ", ".join(str(a) for a in r) + ")" for r in self.lam]
        return f"CentralSubspace(Lambda basis {', '.join(rows)})"


def _bch_bracket(alg, a, b):
    from .lie_core import _bracket_raw
    return _bracket_raw(alg, as_exact(a), as_exact(b))


def _int_inverse(U):
    n = len(U)
    inv = nullspace_inverse(U)
    return [[int(v) for v in row] for row in inv]


def nullspace_inverse(U):
    n = len(U)
    aug = [[Fraction(U[i][j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)]
           for i in range(n)]
    red, _ = rref(aug)
    return [[red[i][n + j] for j in range(n)] for i in range(n)]


def fiber_act(lat, x, z: CentralSubspace, t):
    """Phi^z_t(x) = reduce(x exp(sum t_i lambda_i))."""
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != z.dim:
        raise ValidationError(f"fiber vector has length {t.shape[-1]}, expected {z.dim}")
    y = np.array(_pts(x), dtype=float, copy=True)
    shift = t @ z._lam_f
    y = y + shift
    return reduce(lat, y)


# ---------------------------------------------------------------------------
# serialization

def save_points(path, x):
    x = np.atleast_2d(_pts(x))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in x:
            w.writerow([format(v, ".17g") for v in row])


def load_points(path):
    with open(path) as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    return np.array(rows)
