"""
Heisenberg triples, rational envelopes, central quotients and maximal towers.
"""
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .lie_core import (AlgebraVector, LieAlgebra, ValidationError, _bracket_raw, _raw,
                       bracket, integer_relations, is_completely_irrational, nullspace, rank)
from .nilmanifold import CentralSubspace, Lattice

log = logging.getLogger(__name__)


class TowerError(RuntimeError):
    """Construction failure (triple, envelope, quotient or propagation)."""


@dataclass(frozen=True)
class HeisenbergTriple:
    X: AlgebraVector
    Y: AlgebraVector
    Z: AlgebraVector
    envelope: CentralSubspace = field(default=None, compare=False, repr=False)

    def residual(self, alg):
        """|[X, Y] - Z|_inf."""
        br = bracket(alg, self.X.to_float(), self.Y.to_float())
        return float(np.max(np.abs(np.asarray(br, dtype=float) - np.asarray(self.Z, dtype=float))))


@dataclass(frozen=True)
class TowerLevel:
    algebra: LieAlgebra
    lattice: Lattice
    triple: HeisenbergTriple
    envelope: CentralSubspace
    projection: np.ndarray          # exact (dim - d) x dim integer matrix
    quotient: LieAlgebra = None
    quotient_lattice: Lattice = None

    def project(self, x):
        """Coordinates (points or vectors, float) in the next level."""
        return np.asarray(x, dtype=float) @ self.projection.astype(float).T

    def project_vector(self, W):
        w = _raw(W)
        if w.dtype == object:
            return AlgebraVector(self.projection.dot(w))
        return AlgebraVector(self.project(w), exact=False)


@dataclass(frozen=True)
class HeisenbergTower:
    levels: tuple
    base: LieAlgebra
    base_lattice: Lattice
    base_X: AlgebraVector

    @property
    def height(self):
        return len(self.levels)

    def envelope_dims(self):
        return [lev.envelope.dim for lev in self.levels]


# ---------------------------------------------------------------------------

def _as_vector(alg, X):
    v = X if isinstance(X, AlgebraVector) else AlgebraVector(X)
    if v.dim != alg.dim:
        raise ValidationError(f"vector has length {v.dim}, algebra has dim {alg.dim}")
    return v


def rational_envelope(Z, lat: Lattice, denom_bound=10 ** 4, tol=1e-10):
    """Smallest rational subspace of g_k containing Z (up to the search bound)."""
    alg = lat.algebra
    z = _raw(Z)
    cidx = alg.center_indices
    rest = [i for i in range(alg.dim) if i not in cidx]
    if z.dtype == object:
        if any(z[i] != 0 for i in rest):
            raise ValidationError("Z is not in g_k (not central)")
        if all(z[i] == 0 for i in cidx):
            raise ValidationError("Z is zero")
        return CentralSubspace(lat, [list(z)])
    z = z.astype(float)
    scale = max(1.0, float(np.max(np.abs(z))))
    if rest and float(np.max(np.abs(z[rest]))) > 1e-9 * scale:
        raise ValidationError("Z is not in g_k (not central)")
    zc = z[cidx]
    if float(np.max(np.abs(zc))) < tol:
        raise ValidationError("Z is zero")
    rels = integer_relations(zc, denom_bound, tol)
    kept = []
    for r in rels:
        if rank(kept + [list(r)]) > len(kept):
            kept.append(list(r))
    ker = nullspace(kept, len(cidx))
    basis = []
    for row in ker:
        full = [Fraction(0)] * alg.dim
        for k, c in enumerate(cidx):
            full[c] = row[k]
        basis.append(full)
    return CentralSubspace(lat, basis)


def find_heisenberg_triple(alg, X, seed, lat=None, denom_bound=10 ** 4, tol=1e-10,
                           max_attempts=32):
    """Generic Y in layer k-1, Z = [X, Y], retried until [Z]_Gamma = g_k."""
    if alg.step < 2:
        raise TowerError("a Heisenberg triple needs step >= 2")
    X = _as_vector(alg, X)
    if not is_completely_irrational(alg, X, tol, denom_bound):
        raise TowerError(f"X is not completely irrational (tol {tol}, bound {denom_bound})")
    lat = lat or Lattice(alg)
    k = alg.step
    idx = alg.layer(k - 1)
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    full = len(alg.center_indices)
    best = 0
    for attempt in range(max_attempts):
        y = np.zeros(alg.dim)
        y[idx] = gen.uniform(1.0, 2.0, len(idx))
        Y = AlgebraVector(y, exact=False)
        Z = bracket(alg, X.to_float(), Y)
        try:
            env = rational_envelope(Z, lat, denom_bound, tol)
        except ValidationError:
            continue
        best = max(best, env.dim)
        if env.dim == full:
            return HeisenbergTriple(X, Y, Z, env)
        log.info("attempt %d: envelope dim %d < %d, retrying", attempt, env.dim, full)
    raise TowerError(f"no full-envelope triple in {max_attempts} attempts "
                     f"(best envelope dim {best} of {full})")


def central_quotient(level):
    """(quotient algebra, quotient lattice, projected X) for g / z.

    The central part of the basis is changed by the unimodular matrix of
    the envelope so that z is spanned by trailing vectors; the quotient
    keeps the non-central basis and the complementary central vectors.
    """
    alg = level.algebra
    if alg.step < 2:
        raise TowerError("nothing to quotient in a step-1 algebra")
    z = level.envelope
    P = projection_matrix(z)
    d = alg.dim
    q = d - z.dim
    # lifts of the quotient basis: non-central E_i, then the central completions
    lifts = []
    for i in range(d):
        if i not in z.center:
            lifts.append([Fraction(int(r == i)) for r in range(d)])
    for j in range(z.n_quot):
        col = [Fraction(0)] * d
        for k, c in enumerate(z.center):
            col[c] = Fraction(int(z.U[k, j]))
        lifts.append(col)
    c = np.empty((q, q, q), dtype=object)
    c[...] = Fraction(0)
    L = np.array(lifts, dtype=object)
    for a in range(q):
        for b in range(q):
            br = _bracket_raw(alg, L[a], L[b])
            c[a, b, :] = P.dot(br)
    try:
        quot = LieAlgebra(c, name=(alg.name + "/z") if alg.name else None)
    except ValidationError as exc:
        raise TowerError(f"quotient basis does not preserve the series filtration: {exc}") from None
    qlat = Lattice(quot)
    Xq = level.project_vector(level.triple.X) if level.triple is not None else None
    return quot, qlat, Xq


def projection_matrix(z: CentralSubspace):
    """Exact integer matrix of coordinates g -> g/z in the adapted basis."""
    d = z.algebra.dim
    rows = []
    for i in range(d):
        if i not in z.center:
            rows.append([int(r == i) for r in range(d)])
    for j in range(z.n_quot):
        row = [0] * d
        for k, c in enumerate(z.center):
            row[c] = int(z.Uinv[j, k])
        rows.append(row)
    return np.array(rows, dtype=object)


def build_maximal_tower(alg, lat, X, seed, denom_bound=10 ** 4, tol=1e-10):
    """Iterate triple -> envelope -> quotient until the algebra is abelian."""
    if alg.step < 2:
        raise TowerError("a tower needs step >= 2")
    lat = lat or Lattice(alg)
    X = _as_vector(alg, X)
    levels = []
    cur_alg, cur_lat, cur_X = alg, lat, X
    i = 0
    while cur_alg.step >= 2:
        if not is_completely_irrational(cur_alg, cur_X, tol, denom_bound):
            raise TowerError(f"projected X fails the irrationality check at level {i}")
        tri = find_heisenberg_triple(cur_alg, cur_X, seed + i, cur_lat, denom_bound, tol)
        env = tri.envelope
        P = projection_matrix(env)
        lev = TowerLevel(cur_alg, cur_lat, tri, env, P)
        quot, qlat, qX = central_quotient(lev)
        lev = TowerLevel(cur_alg, cur_lat, tri, env, P, quot, qlat)
        levels.append(lev)
        cur_alg, cur_lat, cur_X = quot, qlat, qX
        i += 1
    if not is_completely_irrational(cur_alg, cur_X, tol, denom_bound):
        raise TowerError(f"projected X fails the irrationality check at the base (level {i})")
    return HeisenbergTower(tuple(levels), cur_alg, cur_lat, cur_X)


# ---------------------------------------------------------------------------
# serialization

def _frac(a):
    a = Fraction(a)
    return str(a.numerator) if a.denominator == 1 else f"{a.numerator}/{a.denominator}"


def _vec17(v):
    return [format(float(a), ".17g") for a in v]


def _alg_dict(alg):
    return {"name": alg.name, "dim": alg.dim, "step": alg.step,
            "entries": [{"i": i + 1, "j": j + 1, "s": s + 1, "num": c.numerator,
                         "den": c.denominator} for i, j, s, c in alg.entries]}


def dump_tower(tower, seed=None):
    out = {"height": tower.height, "seed": seed, "levels": []}
    for lev in tower.levels:
        out["levels"].append({
            "algebra": _alg_dict(lev.algebra),
            "triple": {"X": _vec17(lev.triple.X), "Y": _vec17(lev.triple.Y),
                       "Z": _vec17(lev.triple.Z)},
            "envelope": [[_frac(a) for a in row] for row in lev.envelope.lam],
            "envelope_dim": lev.envelope.dim,
            "projection": [[_frac(a) for a in row] for row in lev.projection],
        })
    out["base"] = {"algebra": _alg_dict(tower.base), "X": _vec17(tower.base_X)}
    return json.dumps(out, indent=2) + "\n"


def load_tower(text):
    """Rebuild a tower from a dump (envelopes are the canonical data)."""
    data = json.loads(text)

    def alg_of(d):
        return LieAlgebra.from_entries(d["dim"], [(e["i"], e["j"], e["s"],
                                                   Fraction(e["num"], e["den"]))
                                                  for e in d["entries"]], name=d.get("name"))

    levels = []
    for d in data["levels"]:
        alg = alg_of(d["algebra"])
        lat = Lattice(alg)
        env = CentralSubspace(lat, [[Fraction(a) for a in row] for row in d["envelope"]])
        tri = HeisenbergTriple(*(AlgebraVector([float(a) for a in d["triple"][k]], exact=False)
                                 for k in "XYZ"), envelope=env)
        P = projection_matrix(env)
        lev = TowerLevel(alg, lat, tri, env, P)
        quot, qlat, _ = central_quotient(lev)
        levels.append(TowerLevel(alg, lat, tri, env, P, quot, qlat))
    base = alg_of(data["base"]["algebra"])
    return HeisenbergTower(tuple(levels), base, Lattice(base),
                           AlgebraVector([float(a) for a in data["base"]["X"]], exact=False))
