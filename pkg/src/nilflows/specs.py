"""
Structured-text inputs: algebra specs and scalar expressions.

Algebra spec (YAML)::

    dim: 3
    step: 2            # optional, validated
    entries:
      - {i: 1, j: 2, s: 3, num: 1, den: 1}

Only i < j entries are stored; antisymmetry is implied. Indices are 1-based.
"""
import ast
import math
import operator
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from .lie_core import LieAlgebra, ValidationError

SHIPPED = ("heisenberg", "filiform4", "heisenberg5", "torus2")


class SpecError(ValidationError):
    def __init__(self, msg, line=None, source=None):
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {msg}" if where else msg)
        self.line = line


def data_path(name):
    return resources.files("nilflows") / "data" / name


def resolve(path_or_name, base=None, suffix=".yaml"):
    """Path of a file; bare names of shipped data files are looked up in the package."""
    p = Path(path_or_name)
    if base is not None and not p.is_absolute() and (Path(base) / p).exists():
        return Path(base) / p
    if p.exists():
        return p
    cand = data_path(str(path_or_name) + ("" if str(path_or_name).endswith(suffix) else suffix))
    if cand.is_file():
        return Path(str(cand))
    cand = data_path("manifests") / (str(path_or_name) + ("" if str(path_or_name).endswith(suffix) else suffix))
    if cand.is_file():
        return Path(str(cand))
    raise SpecError(f"no such file or shipped spec: {path_or_name}")


def _compose(text, source):
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        line = getattr(getattr(e, "problem_mark", None), "line", None)
        raise SpecError(f"parse error: {getattr(e, 'problem', e)}",
                        None if line is None else line + 1, source) from None
    return node, data


def _child(node, key):
    if not isinstance(node, yaml.MappingNode):
        return None
    for k, v in node.value:
        if k.value == key:
            return v
    return None


def _line(node):
    return None if node is None else node.start_mark.line + 1


def load_yaml(path):
    text = Path(path).read_text(encoding="utf-8")
    return _compose(text, str(path))


def algebra_from_text(text, source=None):
    node, data = _compose(text, source)
    if not isinstance(data, dict):
        raise SpecError("algebra spec must be a mapping", 1, source)
    for key in ("dim", "entries"):
        if key not in data:
            raise SpecError(f"missing field '{key}'", 1, source)
    dim = data["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise SpecError("dim must be a positive integer", _line(_child(node, "dim")), source)
    enodes = _child(node, "entries")
    entries = data["entries"] or []
    seen = {}
    triples = []
    for k, e in enumerate(entries):
        en = enodes.value[k] if isinstance(enodes, yaml.SequenceNode) else None
        ln = _line(en)
        if not isinstance(e, dict):
            raise SpecError("entry must be a mapping {i, j, s, num, den}", ln, source)
        try:
            i, j, s = int(e["i"]), int(e["j"]), int(e["s"])
            num, den = int(e["num"]), int(e.get("den", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"bad entry ({exc})", ln, source) from None
        if den == 0:
            raise SpecError("zero denominator", ln, source)
        if not (1 <= i <= dim and 1 <= j <= dim and 1 <= s <= dim):
            raise SpecError(f"index out of range 1..{dim}", ln, source)
        if i == j:
            raise SpecError(f"diagonal entry c[{i}][{j}][{s}] breaks antisymmetry", ln, source)
        val = Fraction(num, den)
        a, b, v = (i, j, val) if i < j else (j, i, -val)
        if (a, b, s) in seen and seen[a, b, s][0] != v:
            raise SpecError(
                f"antisymmetry failure: c[{i}][{j}][{s}] conflicts with line {seen[a, b, s][1]}",
                ln, source)
        if (a, b, s) in seen:
            continue
        seen[a, b, s] = (v, ln)
        triples.append((a, b, s, v))
    step = data.get("step")
    try:
        return LieAlgebra.from_entries(dim, triples, step=step, name=data.get("name"))
    except ValidationError as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc), None, source) from None


def load_algebra(path_or_name):
    p = resolve(path_or_name)
    return algebra_from_text(p.read_text(encoding="utf-8"), str(p))


def dump_algebra(alg):
    lines = []
    if alg.name:
        lines.append(f"name: {alg.name}")
    lines += [f"dim: {alg.dim}", f"step: {alg.step}"]
    if not alg.entries:
        lines.append("entries: []")
    else:
        lines.append("entries:")
        for i, j, s, c in alg.entries:
            lines.append(f"  - {{i: {i + 1}, j: {j + 1}, s: {s + 1}, "
                         f"num: {c.numerator}, den: {c.denominator}}}")
    return "\n".join(lines) + "\n"


def heisenberg():
    return load_algebra("heisenberg")


def filiform4():
    return load_algebra("filiform4")


# ---------------------------------------------------------------------------
# scalar expressions

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow,
        ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log, "cos": math.cos, "sin": math.sin}
_CONSTS = {"pi": math.pi, "e": math.e}


def parse_scalar(value):
    """Number or arithmetic string such as '1/2', 'sqrt(2)', '2*pi'.

    Integers and ratios of integers stay exact (Fraction); anything
    involving a function or a float literal is a float.
    """
    if isinstance(value, bool):
        raise SpecError(f"not a number: {value!r}")
    if isinstance(value, (int, float, Fraction)):
        return value
    if not isinstance(value, str):
        raise SpecError(f"not a number: {value!r}")
    try:
        tree = ast.parse(value.strip(), mode="eval")
    except SyntaxError:
        raise SpecError(f"cannot parse scalar {value!r}") from None

    def ev(n):
        if isinstance(n, ast.Expression):
            return ev(n.body)
        if isinstance(n, ast.Constant) and isinstance(n.value, (int, float)):
            return n.value
        if isinstance(n, ast.BinOp) and type(n.op) in _OPS:
            a, b = ev(n.left), ev(n.right)
            if isinstance(n.op, ast.Div) and isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
                return Fraction(a) / Fraction(b)
            return _OPS[type(n.op)](a, b)
        if isinstance(n, ast.UnaryOp) and type(n.op) in _OPS:
            return _OPS[type(n.op)](ev(n.operand))
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name) and n.func.id in _FUNCS:
            return _FUNCS[n.func.id](*[float(ev(a)) for a in n.args])
        if isinstance(n, ast.Name) and n.id in _CONSTS:
            return _CONSTS[n.id]
        raise SpecError(f"unsupported expression in {value!r}")

    return ev(tree)


def parse_vector(values):
    return [parse_scalar(v) for v in values]
