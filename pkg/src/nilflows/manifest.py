"""
Run manifests: one YAML file fixing algebra, flow, observables and runs.

Top level::

    name: noncoboundary-heisenberg
    algebra: heisenberg            # shipped name or path
    X: [1, sqrt(2), 0]
    tower_seed: 7                  # seed of the Heisenberg triple search
    seed: 0                        # Monte Carlo seed (--seed overrides)
    samples: 10000                 # default per run (--samples overrides)
    quadrature: {rtol: 1e-6, atol: 1e-8, max_step: 0.5}
    observables: {name: spec, ...}
    runs: [{name, estimator, ...}, ...]

Observable specs are mappings with one constructor key:

    periodized: {v, width, truncation, center}   single-term FiberPolynomial
    fiberpoly: {terms: [{v, constructor, ...}], base: spec}
    torus: [{m, coef}, ...]   cos: {m, amp}   constant: c
    real: name   conj: name   sum: [names]   product: [a, b]
    affine: {of, scale, shift}   normalize: name (sampled sup-norm 1)
    pullback: name   coboundary: {of, alpha}   transfer: {modes, scale}

``space: quotient`` places torus/cos/constant/transfer terms on the first
tower quotient. Grids are lists, {start, stop, step} (inclusive) or
{linspace: [a, b, n]}.
"""
import hashlib
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import diagnostics as dg
from .dynamics import FlowConfig, OrbitQuadrature
from .lie_core import AlgebraVector, ValidationError
from .nilmanifold import Lattice, haar_sample
from .observables import (FiberPolynomial, Pullback, along, constant, cos_mode, fiber_character_obs,
                          reciprocal, torus_character, torus_polynomial, torus_transfer)
from .specs import SpecError, _child, _compose, _line, load_algebra, parse_scalar, resolve
from .towers import build_maximal_tower

ESTIMATORS = ("correlate", "shear", "sublevel", "cesaro", "progression", "decouple", "trigsub",
              "quasi", "compare", "conjugacy", "factorlift", "orbit", "birkhoff")

_COMMON = {"name", "estimator", "samples", "seed", "alpha", "nodes", "workers"}
_KEYS = {
    "correlate": {"f", "g", "t_grid"},
    "shear": {"f", "W", "s", "t", "eta"},
    "sublevel": {"f", "functional", "C", "T_grid", "t_grid"},
    "cesaro": {"f", "C", "T_grid", "points"},
    "progression": {"f", "C", "epsilon", "ell", "t0_grid"},
    "decouple": {"f", "C", "t", "T_grid"},
    "trigsub": {"p", "delta", "oracle_grid"},
    "quasi": {"t", "s_grid"},
    "compare": {"t", "delta"},
    "conjugacy": {"alpha1", "alpha2", "u", "tau_grid"},
    "factorlift": {"f", "g", "t_grid"},
    "orbit": {"x0", "t_grid"},
    "birkhoff": {"f", "T_grid"},
}
_NEEDS_U_REGIME = ("cesaro", "progression", "decouple")
_SUP_SEED = 5
_SUP_SAMPLES = 20000


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_grid(spec, where=None):
    if isinstance(spec, dict):
        if "linspace" in spec:
            a, b, n = spec["linspace"]
            return np.linspace(float(parse_scalar(a)), float(parse_scalar(b)), int(n))
        try:
            a, b, h = (float(parse_scalar(spec[k])) for k in ("start", "stop", "step"))
        except KeyError as exc:
            raise SpecError(f"grid needs start, stop and step (missing {exc})", where)
        if h <= 0:
            raise SpecError("grid step must be positive", where)
        m = int(round((b - a) / h))
        return a + h * np.arange(m + 1)
    if isinstance(spec, (list, tuple)):
        return np.array([float(parse_scalar(v)) for v in spec])
    return np.array([float(parse_scalar(spec))])


@dataclass
class RunManifest:
    path: Path
    sha256: str
    data: dict
    node: object
    name: str
    seed: int
    samples: int
    workers: int
    quad: OrbitQuadrature
    out: Path
    runs: list = field(default_factory=list)
    run_lines: list = field(default_factory=list)

    @classmethod
    def load(cls, path, seed=None, samples=None, out=None):
        path = resolve(path)
        text = Path(path).read_text(encoding="utf-8")
        node, data = _compose(text, str(path))
        src = str(path)
        if not isinstance(data, dict):
            raise SpecError("manifest must be a mapping", 1, src)
        for key in ("name", "algebra"):
            if key not in data:
                raise SpecError(f"missing field '{key}'", 1, src)
        q = data.get("quadrature") or {}
        try:
            quad = OrbitQuadrature(**{k: float(parse_scalar(v)) if k != "method" else v
                                      for k, v in q.items()}) if q else dg.MC_QUAD
        except TypeError as exc:
            raise SpecError(f"bad quadrature block ({exc})", _line(_child(node, "quadrature")), src)
        runs = data.get("runs") or []
        rnode = _child(node, "runs")
        lines = [_line(rnode.value[k]) if isinstance(rnode, yaml.SequenceNode) else None
                 for k in range(len(runs))]
        m = cls(Path(path), file_sha256(path), data, node, str(data["name"]),
                int(data.get("seed", 0) if seed is None else seed),
                int(data.get("samples", 10 ** 4) if samples is None else samples),
                int(data.get("workers", 1)), quad,
                Path(out) if out is not None else Path(data.get("out", "out")), runs, lines)
        m._samples_override = samples is not None
        m._seed_override = seed is not None
        return m

    def err(self, msg, line=None):
        return SpecError(msg, line, str(self.path))


class Context:
    """Lazily built algebra, lattice, tower, observables and flow configurations."""

    def __init__(self, manifest: RunManifest):
        self.m = manifest
        d = manifest.data
        self.alg = load_algebra(d["algebra"])
        self.lat = Lattice(self.alg)
        if "X" in d:
            vals = [parse_scalar(v) for v in d["X"]]
            if all(isinstance(a, (int, Fraction)) for a in vals):
                self.X = AlgebraVector(vals)
            else:
                self.X = AlgebraVector([float(a) for a in vals], exact=False)
        else:
            self.X = None
        self.tower_seed = int(d.get("tower_seed", 0))
        self._tower = None
        self._obs = {}
        self._cfg = {}
        self.specs = d.get("observables") or {}
        self.obs_node = _child(manifest.node, "observables")

    # structure ---------------------------------------------------------
    @property
    def tower(self):
        if self._tower is None:
            if self.X is None:
                raise self.m.err("this manifest needs a flow generator X")
            self._tower = build_maximal_tower(self.alg, self.lat, self.X.to_float(), self.tower_seed)
        return self._tower

    @property
    def level(self):
        return self.tower.levels[0]

    @property
    def triple(self):
        return self.level.triple if self.alg.step >= 2 else None

    @property
    def z(self):
        return self.level.envelope

    def lattice_of(self, space):
        if space in (None, "M"):
            return self.lat
        if space == "quotient":
            return self.level.quotient_lattice
        raise self.m.err(f"unknown space {space!r}")

    # observables -------------------------------------------------------
    def obs(self, ref, stack=()):
        if isinstance(ref, (int, float)) or (isinstance(ref, str) and ref not in self.specs):
            try:
                return constant(self.lat, float(parse_scalar(ref)))
            except SpecError:
                raise self.m.err(f"unknown observable {ref!r}") from None
        if isinstance(ref, dict):
            return self._build(ref, stack, None)
        if ref in self._obs:
            return self._obs[ref]
        if ref in stack:
            raise self.m.err(f"observable cycle through {ref!r}")
        line = _line(_child(self.obs_node, ref))
        o = self._build(self.specs[ref], stack + (ref,), line)
        self._obs[ref] = o
        return o

    def _build(self, spec, stack, line):
        if not isinstance(spec, dict):
            raise self.m.err("observable spec must be a mapping", line)
        keys = set(spec) - {"space"}
        if len(keys) != 1:
            raise self.m.err(f"observable spec needs exactly one constructor, got {sorted(keys)}", line)
        (kind,) = keys
        arg = spec[kind]
        lat = self.lattice_of(spec.get("space"))
        try:
            return self._construct(kind, arg, lat, stack, line)
        except ValidationError as exc:
            if isinstance(exc, SpecError):
                raise
            raise self.m.err(f"{kind}: {exc}", line) from None

    def _construct(self, kind, arg, lat, stack, line):
        sub = lambda r: self.obs(r, stack)
        if kind == "periodized":
            f = fiber_character_obs(tuple(int(a) for a in arg["v"]), self.z,
                                    float(parse_scalar(arg.get("width", 0.5))),
                                    int(arg.get("truncation", 4)),
                                    float(parse_scalar(arg.get("center", 0.5))))
            return FiberPolynomial(self.z, {f.v: f})
        if kind == "fiberpoly":
            terms, zero = {}, None
            for t in arg.get("terms", []):
                con = t.get("constructor", "periodized")
                v = tuple(int(a) for a in t["v"])
                if con == "periodized":
                    f = fiber_character_obs(v, self.z, float(parse_scalar(t.get("width", 0.5))),
                                            int(t.get("truncation", 4)),
                                            float(parse_scalar(t.get("center", 0.5))))
                    c = complex(parse_scalar(t.get("coef", 1)))
                    terms[v] = f * c if c != 1 else f
                elif con == "torus_character":
                    if any(v):
                        raise self.m.err("torus_character terms belong to v = 0", line)
                    ch = torus_character(self.lat, t["m"]) * complex(parse_scalar(t.get("coef", 1)))
                    zero = ch if zero is None else zero + ch
                else:
                    raise self.m.err(f"unknown term constructor {con!r}", line)
            if "base" in arg:
                b = self.obs(arg["base"], stack) if not isinstance(arg["base"], dict) else \
                    self._build(dict(arg["base"], space=arg["base"].get("space", "quotient")), stack, line)
                b = Pullback(self.level, b) if b.lattice is not self.lat else b
                zero = b if zero is None else zero + b
            return FiberPolynomial(self.z, terms, zero)
        if kind == "torus":
            items = arg if isinstance(arg, list) else [arg]
            return torus_polynomial(lat, {tuple(int(a) for a in t["m"]): complex(parse_scalar(t.get("coef", 1)))
                                          for t in items})
        if kind == "cos":
            coeffs = cos_mode(arg["m"], float(parse_scalar(arg.get("amp", 1.0))))
            if "shift" in arg:
                coeffs[tuple(0 for _ in arg["m"])] = float(parse_scalar(arg["shift"]))
            return torus_polynomial(lat, coeffs)
        if kind == "constant":
            return constant(lat, float(parse_scalar(arg)))
        if kind == "real":
            return sub(arg).real()
        if kind == "conj":
            return sub(arg).conj()
        if kind == "sum":
            parts = [sub(a) for a in arg]
            out = parts[0]
            for p in parts[1:]:
                out = out + p
            return out
        if kind == "product":
            a, b = (sub(r) for r in arg)
            return a * b
        if kind == "affine":
            f = sub(arg["of"])
            c = float(parse_scalar(arg.get("scale", 1)))
            s = float(parse_scalar(arg.get("shift", 0)))
            return f.scaled(c, s) if isinstance(f, FiberPolynomial) else f * c + s
        if kind == "normalize":
            f = sub(arg)
            sup = float(np.max(np.abs(f.eval(haar_sample(f.lattice, _SUP_SAMPLES, _SUP_SEED)))))
            if sup == 0:
                raise self.m.err("cannot normalize an observable that vanishes on the samples", line)
            return f.scaled(1.0 / sup) if isinstance(f, FiberPolynomial) else f * (1.0 / sup)
        if kind == "pullback":
            return Pullback(self.level, sub(arg))
        if kind == "coboundary":
            u = sub(arg["of"])
            a = sub(arg.get("alpha", 1.0))
            return along(u, self.X.to_float()) * reciprocal(a)
        if kind == "transfer":
            n = lat.algebra.n_abelian
            Xf = np.asarray(self.X.to_float(), dtype=float)
            omega = Xf[:n] if lat is self.lat else self.level.project(Xf)[:n]
            modes = {tuple(int(a) for a in t["m"]): complex(parse_scalar(t.get("coef", 1)))
                     for t in arg["modes"]}
            c = float(parse_scalar(arg.get("scale", 1)))
            return torus_polynomial(lat, {m: c * v for m, v in torus_transfer(modes, omega).items()})
        raise self.m.err(f"unknown observable constructor {kind!r}", line)

    # flows -------------------------------------------------------------
    def flow(self, alpha_ref):
        key = repr(alpha_ref)
        if key in self._cfg:
            return self._cfg[key]
        if self.X is None:
            raise self.m.err("this manifest needs a flow generator X")
        tri = self.triple
        if isinstance(alpha_ref, (int, float)) or (isinstance(alpha_ref, str) and alpha_ref not in self.specs):
            a = float(parse_scalar(alpha_ref))
        else:
            a = self.obs(alpha_ref)
        try:
            cfg = FlowConfig(self.lat, tri.X if tri is not None else self.X, a, triple=tri)
        except ValidationError as exc:
            raise self.m.err(f"alpha {alpha_ref!r}: {exc}") from None
        self._cfg[key] = cfg
        return cfg


def validate_runs(m: RunManifest):
    """Check names, keys and references of every run before computing anything."""
    seen = set()
    out = []
    for k, r in enumerate(m.runs):
        line = m.run_lines[k]
        if not isinstance(r, dict):
            raise m.err("run must be a mapping", line)
        name = r.get("name")
        est = r.get("estimator")
        if not name or not est:
            raise m.err("run needs 'name' and 'estimator'", line)
        if est not in ESTIMATORS:
            raise m.err(f"unknown estimator {est!r} (one of {', '.join(ESTIMATORS)})", line)
        if name in seen:
            raise m.err(f"duplicate run name {name!r}", line)
        seen.add(name)
        extra = set(r) - _COMMON - _KEYS[est]
        if extra:
            raise m.err(f"run {name!r}: unknown keys {sorted(extra)}", line)
        t = r.get("t")
        if isinstance(t, dict):
            src = t.get("from")
            if src not in seen:
                raise m.err(f"run {name!r}: t refers to {src!r}, which is not an earlier run", line)
        out.append((r, line))
    return out


def check_regimes(ctx: Context, runs):
    """z-invariance and shape requirements, reported before computation."""
    m = ctx.m
    for r, line in runs:
        est = r["estimator"]
        needs_u = est in _NEEDS_U_REGIME or est == "factorlift" or (
            est == "sublevel" and r.get("functional", "birkhoff") == "birkhoff")
        if est in ("conjugacy",):
            for key in ("alpha1", "alpha2"):
                ctx.flow(r.get(key, 1.0))
            continue
        cfg = ctx.flow(r.get("alpha", 1.0))
        if needs_u:
            z = ctx.z if ctx.alg.step >= 2 else None
            if not cfg.is_z_invariant(z):
                raise m.err(f"run {r['name']!r}: estimator {est!r} needs a z-invariant alpha", line)
        if est in ("sublevel", "cesaro", "progression") and r.get("functional", "birkhoff") == "birkhoff":
            f = ctx.obs(r["f"])
            if not isinstance(f, FiberPolynomial) or f.zero_part is not None:
                raise m.err(f"run {r['name']!r}: f must be a FiberPolynomial with empty zero part", line)
        if est == "trigsub":
            p = ctx.obs(r["p"])
            if not isinstance(p, FiberPolynomial) or p.zero_part is not None:
                raise m.err(f"run {r['name']!r}: p must be a FiberPolynomial with empty zero part", line)
        for key in ("f", "g", "p", "u"):
            if key in r:
                ctx.obs(r[key])
