"""
Exact arithmetic for nilpotent Lie algebras and their simply connected groups.

Vectors are numpy arrays whose last axis is the algebra dimension. An array
of ``Fraction`` objects (dtype object) is the exact regime, a float64 array
is the float regime. ``AlgebraVector`` wraps a single vector with a regime
tag for the public API; every function also accepts plain arrays.
"""
import itertools
import logging
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

MAX_DEPTH = 6


class ValidationError(ValueError):
    """Malformed or inconsistent input (bad structure constants, shapes...)."""


# ---------------------------------------------------------------------------
# scalars and vectors

def _is_exact_scalar(a):
    return isinstance(a, (int, Fraction, np.integer)) and not isinstance(a, bool)


def as_exact(values):
    """Object array of Fractions (ints and Fractions are accepted)."""
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    for idx, a in np.ndenumerate(arr):
        if isinstance(a, (np.integer, int)):
            out[idx] = Fraction(int(a))
        elif isinstance(a, Fraction):
            out[idx] = a
        else:
            raise ValidationError(f"non-rational entry {a!r} in exact vector")
    return out


def is_exact_array(a):
    a = np.asarray(a)
    return a.dtype == object


class AlgebraVector:
    """Coordinates of an algebra element in the fixed basis, with a regime tag.

    ``exact=True`` stores Fractions, otherwise float64. Arithmetic between an
    exact and a float vector falls back to float and logs a warning.
    """

    __slots__ = ("coords", "exact")

    def __init__(self, coords, exact=None):
        raw = np.asarray(coords if not isinstance(coords, AlgebraVector) else coords.coords,
                         dtype=object)
        if raw.ndim != 1:
            raise ValidationError("AlgebraVector needs a 1-d coordinate list")
        if exact is None:
            exact = all(_is_exact_scalar(a) for a in raw)
        if exact:
            c = as_exact(raw)
        else:
            c = np.array([float(a) for a in raw], dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "exact", bool(exact))

    def __setattr__(self, key, value):
        raise AttributeError("AlgebraVector is immutable")

    @property
    def dim(self):
        return len(self.coords)

    @property
    def regime(self):
        return "exact" if self.exact else "float"

    def to_float(self):
        return AlgebraVector(self.coords.astype(float), exact=False)

    def __len__(self):
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def __getitem__(self, i):
        return self.coords[i]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return np.array(self.coords)
        return np.array(self.coords, dtype=dtype)

    def _other(self, other):
        if isinstance(other, AlgebraVector):
            return other
        return AlgebraVector(other)

    def _combine(self, other, op):
        other = self._other(other)
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch {self.dim} vs {other.dim}")
        a, b = self.coords, other.coords
        if self.exact != other.exact:
            log.warning("mixing exact and float AlgebraVectors; coercing to float")
            a, b = a.astype(float), b.astype(float)
        return AlgebraVector(op(a, b), exact=self.exact and other.exact)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._other(other) - self

    def __neg__(self):
        return AlgebraVector(-self.coords, exact=self.exact)

    def __mul__(self, s):
        if _is_exact_scalar(s) and self.exact:
            return AlgebraVector(self.coords * Fraction(s), exact=True)
        if self.exact:
            log.warning("float scalar times exact AlgebraVector; coercing to float")
        return AlgebraVector(self.coords.astype(float) * float(s), exact=False)

    __rmul__ = __mul__

    def __eq__(self, other):
        try:
            other = self._other(other)
        except ValidationError:
            return NotImplemented
        if other.dim != self.dim:
            return False
        if self.exact and other.exact:
            return bool(np.all(self.coords == other.coords))
        return bool(np.allclose(self.coords.astype(float), other.coords.astype(float),
                                rtol=0, atol=1e-12))

    def __hash__(self):
        return hash((self.exact, tuple(self.coords)))

    def __repr__(self):
        items = ", ".join(str(a) if self.exact else repr(float(a)) for a in self.coords)
        return f"AlgebraVector([{items}], {self.regime})"


def _raw(v):
    """Coordinates as an ndarray (object or float)."""
    if isinstance(v, AlgebraVector):
        return v.coords
    a = np.asarray(v)
    if a.dtype == object:
        return a
    if np.issubdtype(a.dtype, np.integer):
        return as_exact(a)
    return a.astype(float, copy=False)


def _unify(a, b):
    a, b = _raw(a), _raw(b)
    if (a.dtype == object) != (b.dtype == object):
        if a.dtype == object and _has_fractions(a) or b.dtype == object and _has_fractions(b):
            log.warning("mixing exact and float coordinates; coercing to float")
        a, b = _to_float(a), _to_float(b)
    return a, b


def _has_fractions(a):
    return a.size > 0 and isinstance(a.flat[0], Fraction)


def _to_float(a):
    if a.dtype == object and (a.size == 0 or isinstance(a.flat[0], Fraction)):
        return a.astype(float)
    return a


def _wrap_like(res, *inputs):
    if any(isinstance(v, AlgebraVector) for v in inputs) and np.ndim(res) == 1:
        return AlgebraVector(res, exact=res.dtype == object)
    return res


# ---------------------------------------------------------------------------
# rational linear algebra

def rref(rows):
    """Exact reduced row echelon form; zero rows dropped.

    Returns (basis, pivots) with basis an object array of Fractions.
    """
    m = [list(map(Fraction, r)) for r in rows]
    if not m:
        return np.zeros((0, 0), dtype=object), []
    ncol = len(m[0])
    pivots = []
    r = 0
    for col in range(ncol):
        piv = None
        for i in range(r, len(m)):
            if m[i][col] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        p = m[r][col]
        m[r] = [a / p for a in m[r]]
        for i in range(len(m)):
            if i != r and m[i][col] != 0:
                f = m[i][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(col)
        r += 1
        if r == len(m):
            break
    out = np.empty((r, ncol), dtype=object)
    for i in range(r):
        out[i] = m[i]
    return out, pivots


def rank(rows):
    return len(rref(rows)[1])


def in_span(vec, basis):
    """Exact membership test of a rational vector in the row span of basis."""
    basis = list(basis)
    if not basis:
        return all(Fraction(a) == 0 for a in vec)
    return rank(basis + [list(vec)]) == rank(basis)


def nullspace(rows, ncol):
    """Exact basis (rows) of {x : rows @ x = 0}."""
    if len(rows) == 0:
        out = np.empty((ncol, ncol), dtype=object)
        for i in range(ncol):
            out[i] = [Fraction(int(i == j)) for j in range(ncol)]
        return out
    red, piv = rref(rows)
    free = [c for c in range(ncol) if c not in piv]
    out = np.empty((len(free), ncol), dtype=object)
    for k, f in enumerate(free):
        x = [Fraction(0)] * ncol
        x[f] = Fraction(1)
        for i, p in enumerate(piv):
            x[p] = -red[i][f]
        out[k] = x
    return out


# ---------------------------------------------------------------------------
# the algebra

class LieAlgebra:
    """Nilpotent Lie algebra with rational structure constants.

    ``structure[i, j, s]`` is c[i][j][s] (0-based) with
    [E_i, E_j] = sum_s c[i][j][s] E_s. Construction validates antisymmetry,
    Jacobi, nilpotency and that the basis is a Malcev basis through the
    descending central series.
    """

    def __init__(self, structure, step=None, name=None, validate_malcev=True):
        c = as_exact(structure)
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]):
            raise ValidationError("structure constants must be a dim x dim x dim tensor")
        self.dim = c.shape[0]
        self.name = name
        self.structure = c
        self.structure.setflags(write=False)
        self._check_antisymmetry()
        res = jacobi_residual(self)
        if res != 0:
            raise ValidationError(f"Jacobi identity fails (max residual {res})")
        self.series = descending_series(self)
        self.step = len(self.series)
        if step is not None and int(step) != self.step:
            raise ValidationError(f"declared step {step} but series has length {self.step}")
        self.layer_starts = self._tail_starts()
        if validate_malcev:
            self._check_malcev()
        self.structure_float = c.astype(float)
        # sparse entries (i < j) used by the exact bracket
        self.entries = tuple((i, j, s, c[i, j, s])
                             for i in range(self.dim) for j in range(i + 1, self.dim)
                             for s in range(self.dim) if c[i, j, s] != 0)

    @classmethod
    def from_entries(cls, dim, entries, step=None, name=None):
        """entries: iterable of (i, j, s, value) with 1-based i < j."""
        c = np.empty((dim, dim, dim), dtype=object)
        c[...] = Fraction(0)
        for i, j, s, val in entries:
            i, j, s = int(i) - 1, int(j) - 1, int(s) - 1
            if not (0 <= i < dim and 0 <= j < dim and 0 <= s < dim):
                raise ValidationError(f"index out of range in entry {(i + 1, j + 1, s + 1)}")
            if i == j:
                raise ValidationError(f"diagonal entry c[{i + 1}][{j + 1}][{s + 1}]")
            val = Fraction(val)
            if i > j:
                i, j, val = j, i, -val
                if c[i, j, s] != 0 and c[i, j, s] != val:
                    raise ValidationError(
                        f"antisymmetry violated at c[{j + 1}][{i + 1}][{s + 1}]")
            c[i, j, s] = val
            c[j, i, s] = -val
        return cls(c, step=step, name=name)

    def _check_antisymmetry(self):
        c = self.structure
        for i in range(self.dim):
            for j in range(self.dim):
                for s in range(self.dim):
                    if c[i, j, s] != -c[j, i, s]:
                        raise ValidationError(
                            f"antisymmetry violated at c[{i + 1}][{j + 1}][{s + 1}]")

    def _tail_starts(self):
        starts = []
        for sub in self.series:
            piv = rref(sub)[1]
            starts.append(min(piv) if piv else self.dim)
        return starts

    def _check_malcev(self):
        # (ii): every g_j is spanned by a tail of the basis
        for j, sub in enumerate(self.series):
            p = self.layer_starts[j]
            red, piv = rref(sub)
            if piv != list(range(p, self.dim)):
                raise ValidationError(
                    f"basis is not adapted to the descending series at g_{j + 1}")
        # (i): dropping the first l elements spans a subalgebra
        for ell in range(self.dim):
            for a in range(ell, self.dim):
                for b in range(a + 1, self.dim):
                    br = self.structure[a, b]
                    if any(br[s] != 0 for s in range(ell)):
                        raise ValidationError(
                            f"span(E_{ell + 1}..E_{self.dim}) is not a subalgebra")

    # ---- derived data

    @property
    def n_abelian(self):
        """n = dim g/[g,g], the number of first-layer basis vectors."""
        return self.layer_starts[1] if self.step > 1 else self.dim

    def layer(self, j):
        """0-based basis indices of layer j (1-based series index)."""
        start = self.layer_starts[j - 1]
        stop = self.layer_starts[j] if j < self.step else self.dim
        return list(range(start, stop))

    @property
    def center_indices(self):
        """Indices spanning g_k (the last series term)."""
        return list(range(self.layer_starts[-1], self.dim))

    def basis_vector(self, i):
        """E_{i+1} as an exact AlgebraVector (0-based i)."""
        return AlgebraVector([int(q == i) for q in range(self.dim)])

    def zero(self, exact=True):
        return AlgebraVector([0] * self.dim) if exact else AlgebraVector(np.zeros(self.dim))

    def key(self):
        return (self.dim, self.entries)

    def __eq__(self, other):
        return isinstance(other, LieAlgebra) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        nm = f" {self.name!r}" if self.name else ""
        return f"LieAlgebra{nm}(dim={self.dim}, step={self.step})"

    def bracket_table(self):
        """Nonzero brackets as {(i, j): {s: c}} with 1-based indices, i < j."""
        out = {}
        for i, j, s, c in self.entries:
            out.setdefault((i + 1, j + 1), {})[s + 1] = c
        return out


# ---------------------------------------------------------------------------
# bracket

def _bracket_raw(alg, a, b):
    if a.dtype == object or b.dtype == object:
        shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
        out = np.empty(shape + (alg.dim,), dtype=object)
        zero = Fraction(0) if (a.size == 0 or isinstance(a.flat[0], Fraction)) else 0
        out[...] = zero
        for i, j, s, c in alg.entries:
            out[..., s] = out[..., s] + c * (a[..., i] * b[..., j] - a[..., j] * b[..., i])
        return out
    outer = a[..., :, None] * b[..., None, :]
    return np.tensordot(outer, alg.structure_float, axes=([-2, -1], [0, 1]))


def bracket(alg, a, b):
    """[a, b] = sum_ij a_i b_j c[i][j][.]; exact when both inputs are rational."""
    x, y = _unify(a, b)
    if x.shape[-1] != alg.dim or y.shape[-1] != alg.dim:
        raise ValidationError(f"dimension mismatch: expected {alg.dim}")
    return _wrap_like(_bracket_raw(alg, x, y), a, b)


def jacobi_residual(alg):
    """Max |[E_i,[E_j,E_l]] + cyclic| over basis triples (exact Fraction)."""
    c = alg.structure
    d = c.shape[0]
    br = {}
    for i in range(d):
        for j in range(d):
            row = {s: c[i, j, s] for s in range(d) if c[i, j, s] != 0}
            if row:
                br[i, j] = row

    def nested(i, j, l, acc):
        for r, cr in br.get((j, l), {}).items():
            for s, cs in br.get((i, r), {}).items():
                acc[s] = acc.get(s, 0) + cr * cs

    worst = Fraction(0)
    for i in range(d):
        for j in range(d):
            for l in range(d):
                acc = {}
                nested(i, j, l, acc)
                nested(j, l, i, acc)
                nested(l, i, j, acc)
                for v in acc.values():
                    worst = max(worst, abs(Fraction(v)))
    return worst


def descending_series(alg):
    """g_1 ⊇ g_2 ⊇ ... ⊇ g_k as exact row-reduced basis matrices."""
    d = alg.dim
    c = alg.structure
    cur, _ = rref([[int(i == j) for j in range(d)] for i in range(d)])
    series = []
    for _ in range(d + 1):
        if len(cur) == 0:
            return series
        series.append(cur)
        rows = []
        for row in cur:
            for l in range(d):
                br = [sum((row[i] * c[i, l, s] for i in range(d) if row[i] != 0), Fraction(0))
                      for s in range(d)]
                if any(x != 0 for x in br):
                    rows.append(br)
        nxt, _ = rref(rows) if rows else (np.zeros((0, d), dtype=object), [])
        if len(nxt) == len(cur):
            raise ValidationError("algebra is not nilpotent (series stalls)")
        cur = nxt
    raise ValidationError("algebra is not nilpotent (series does not terminate)")


# ---------------------------------------------------------------------------
# BCH via Dynkin's formula

@lru_cache(maxsize=None)
def dynkin_table(depth=MAX_DEPTH):
    """Coefficients of right-nested brackets of words in {x, y}.

    log(e^x e^y) = sum_w coef[w] [w_1, [w_2, ... [w_{m-1}, w_m]]]
    for words w of length m <= depth, computed once from Dynkin's formula.
    Words whose nested bracket vanishes identically are dropped.
    """
    if depth > MAX_DEPTH:
        raise ValidationError(f"BCH truncation supports depth <= {MAX_DEPTH}")
    coef = {}
    for m in range(1, depth + 1):
        for n in range(1, m + 1):
            sign = Fraction((-1) ** (n - 1), n)
            # compositions of m into n positive parts, each part split r + s
            for parts in _compositions(m, n):
                for split in itertools.product(*[range(p + 1) for p in parts]):
                    word = []
                    denom = 1
                    for p, r in zip(parts, split):
                        s = p - r
                        word += ["x"] * r + ["y"] * s
                        denom *= math.factorial(r) * math.factorial(s)
                    w = "".join(word)
                    coef[w] = coef.get(w, Fraction(0)) + sign / (m * denom)
    out = {}
    for w, c in coef.items():
        if c == 0:
            continue
        if len(w) >= 2 and w[-1] == w[-2]:
            continue
        out[w] = c
    return tuple(sorted(out.items(), key=lambda kv: (len(kv[0]), kv[0])))


def _compositions(m, n):
    if n == 1:
        yield (m,)
        return
    for first in range(1, m - n + 2):
        for rest in _compositions(m - first, n - 1):
            yield (first,) + rest


def _bch_raw(alg, a, b):
    if alg.step > MAX_DEPTH:
        raise ValidationError(f"step {alg.step} exceeds BCH truncation depth {MAX_DEPTH}")
    exact = a.dtype == object
    cache = {}

    def nested(w):
        if w in cache:
            return cache[w]
        if len(w) == 1:
            val = a if w == "x" else b
        else:
            val = _bracket_raw(alg, a if w[0] == "x" else b, nested(w[1:]))
        cache[w] = val
        return val

    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.broadcast_to(a + b, shape).copy()
    for w, c in dynkin_table(alg.step):
        if len(w) == 1:
            continue
        out = out + (c if exact else float(c)) * nested(w)
    return out


def bch(alg, a, b):
    """log(exp a exp b), exact over the rationals for rational inputs."""
    x, y = _unify(a, b)
    if x.shape[-1] != alg.dim or y.shape[-1] != alg.dim:
        raise ValidationError(f"dimension mismatch: expected {alg.dim}")
    return _wrap_like(_bch_raw(alg, x, y), a, b)


class GroupElement:
    """g = exp(log) in first-kind coordinates."""

    __slots__ = ("algebra", "log")

    def __init__(self, algebra, log_):
        object.__setattr__(self, "algebra", algebra)
        object.__setattr__(self, "log", log_ if isinstance(log_, AlgebraVector)
                           else AlgebraVector(log_))
        if self.log.dim != algebra.dim:
            raise ValidationError("log has wrong dimension")

    def __setattr__(self, key, value):
        raise AttributeError("GroupElement is immutable")

    @classmethod
    def identity(cls, algebra):
        return cls(algebra, algebra.zero())

    def __mul__(self, other):
        return GroupElement(self.algebra, bch(self.algebra, self.log, other.log))

    def inverse(self):
        return GroupElement(self.algebra, -self.log)

    def __eq__(self, other):
        return isinstance(other, GroupElement) and self.log == other.log

    def __hash__(self):
        return hash(self.log)

    def __repr__(self):
        return f"GroupElement({self.log!r})"


# ---------------------------------------------------------------------------
# integer relations / complete irrationality

def integer_relations(values, bound, tol, first_only=False):
    """Nonzero integer vectors m with |m_i| <= bound and |<m, values>| < tol.

    Exhaustive for up to 3 coordinates: every coordinate but the pivot (the
    largest |value|) is scanned, the pivot is solved for by rounding. Only
    primitive vectors up to sign are returned. Above 3 coordinates an LLL
    search is used (not exhaustive).
    """
    v = np.asarray(values, dtype=float)
    d = len(v)
    if d == 0:
        return []
    if d > 3:
        return _lll_relations(v, bound, tol, first_only)
    p = int(np.argmax(np.abs(v)))
    if abs(v[p]) < tol:
        # every unit vector is a relation
        return [tuple(int(i == j) for j in range(d)) for i in range(d)][: 1 if first_only else d]
    others = [i for i in range(d) if i != p]
    if not others:
        return []
    if len(others) == 1:
        cands = _scan1(float(v[others[0]]), float(v[p]), bound, tol)
    else:
        cands = _scan2(float(v[others[0]]), float(v[others[1]]), float(v[p]), bound, tol,
                       first_only)
    found = []
    for row in cands:
        full = [0] * d
        for i, val in zip(others, row[:-1]):
            full[i] = int(val)
        full[p] = int(row[-1])
        g = 0
        for q in full:
            g = math.gcd(g, abs(q))
        if g != 1:
            continue
        if next(q for q in full if q != 0) < 0:
            full = [-q for q in full]
        if tuple(full) not in found:
            found.append(tuple(full))
        if first_only:
            break
    return found


def _scan1(a, vp, bound, tol):
    rng = np.arange(-bound, bound + 1)
    s = rng * a
    mp = np.rint(-s / vp)
    ok = (np.abs(mp) <= bound) & (np.abs(s + mp * vp) < tol) & ((rng != 0) | (mp != 0))
    return np.column_stack([rng[ok], mp[ok]]).astype(np.int64)


@njit(cache=True)
def _scan2_kernel(a, b, vp, bound, tol, first_only):
    out = []
    for i in range(-bound, bound + 1):
        si = i * a
        for j in range(-bound, bound + 1):
            s = si + j * b
            m = np.rint(-s / vp)
            if abs(m) <= bound and abs(s + m * vp) < tol and (i != 0 or j != 0 or m != 0):
                out.append((i, j, int(m)))
                if first_only and i >= 0:
                    return out
    return out


def _scan2(a, b, vp, bound, tol, first_only):
    res = _scan2_kernel(a, b, vp, bound, tol, first_only)
    if len(res) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array(res, dtype=np.int64)


def _lll_relations(v, bound, tol, first_only):
    scale = 1.0 / max(tol, 1e-300)
    d = len(v)
    basis = [[Fraction(int(i == j)) for j in range(d)] + [Fraction(round(scale * v[i]))]
             for i in range(d)]
    red = lll_reduce(basis)
    found = []
    for row in red:
        m = [int(x) for x in row[:d]]
        if any(m) and max(abs(q) for q in m) <= bound and abs(float(np.dot(m, v))) < tol:
            g = 0
            for q in m:
                g = math.gcd(g, abs(q))
            m = [q // g for q in m]
            if next(q for q in m if q != 0) < 0:
                m = [-q for q in m]
            found.append(tuple(m))
            if first_only:
                break
    return found


def lll_reduce(basis, delta=Fraction(3, 4)):
    """Exact LLL reduction of the rows of basis (textbook version)."""
    b = [list(map(Fraction, r)) for r in basis]
    n = len(b)

    def dot(u, w):
        return sum(x * y for x, y in zip(u, w))

    def gso():
        bs, mu = [], [[Fraction(0)] * n for _ in range(n)]
        for i in range(n):
            v = b[i][:]
            for j in range(i):
                mu[i][j] = dot(b[i], bs[j]) / dot(bs[j], bs[j]) if dot(bs[j], bs[j]) else Fraction(0)
                v = [x - mu[i][j] * y for x, y in zip(v, bs[j])]
            bs.append(v)
        return bs, mu

    bs, mu = gso()
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = round(mu[k][j])
            if q:
                b[k] = [x - q * y for x, y in zip(b[k], b[j])]
                bs, mu = gso()
        if dot(bs[k], bs[k]) >= (delta - mu[k][k - 1] ** 2) * dot(bs[k - 1], bs[k - 1]):
            k += 1
        else:
            b[k], b[k - 1] = b[k - 1], b[k]
            bs, mu = gso()
            k = max(k - 1, 1)
    return b


def abelian_part(alg, X):
    """X^Ab: the first n coordinates of X."""
    return _raw(X)[..., : alg.n_abelian]


def is_completely_irrational(alg, X, tol=1e-10, denom_bound=10 ** 4):
    """True iff no integer m, 0 < |m|_inf <= denom_bound, has |<m, X^Ab>| < tol."""
    w = abelian_part(alg, X)
    if w.dtype == object:
        w = w.astype(float)
    return len(integer_relations(w, denom_bound, tol, first_only=True)) == 0
