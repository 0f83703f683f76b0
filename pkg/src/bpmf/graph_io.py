"""JSON graph documents: loading with line/field diagnostics, and belief output.

Document layout::

    {
      "variables": [{"name": "x", "card": 2},
                    {"name": "h", "gaussian": {"dim": 2}}],
      "factors": [
        {"name": "f", "scope": ["x", "y"], "values": [[1, 2], [3, 4]], "part": "bp"},
        {"name": "lik", "type": "quadratic", "scope": ["x", "h"],
         "discrete": ["x"], "continuous": [["h", [0]]],
         "const": [0, 0], "linear": [[1], [-1]], "quadratic": [[[1]], [[1]]]},
        {"name": "prior", "type": "gaussian_prior", "scope": ["h"],
         "mean": [0, 0], "covariance": [[1, 0], [0, 1]]}
      ],
      "partition": {"bp": ["f"]},
      "em": ["z"],
      "stop": {"max_iters": 200, "rel_f_tol": 1e-9, "delta_tol": 1e-8},
      "config": {"damping": 0.3, "n_inner": 5}
    }

Any complex-valued field may be written as a real array or as
``{"re": array, "im": array}``. ``partition.bp`` takes precedence over the
per-factor ``part`` key; table factors default to BP and quadratic or
Gaussian-prior factors to MF.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from json import decoder as _jd
from json import scanner as _js

import numpy as np

from .factor_graph import (BpMfPartition, Factor, FactorGraph, QuadraticPotential, Variable,
                           gaussian_prior_potential, partition)
from .gaussian import ComplexGaussian
from .message_passing import EmConstraintSet
from .scheduler import StopRule
from .tabular import Table


class GraphSpecError(ValueError):
    """A malformed graph document; ``line`` and ``field`` locate the problem."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line, self.field, self.detail = line, field, message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__((", ".join(where) + ": " if where else "") + message)


@dataclass
class GraphSpec:
    graph: FactorGraph
    part: BpMfPartition
    em: EmConstraintSet | None = None
    stop: StopRule = field(default_factory=StopRule)
    damping: float = 0.3
    n_inner: int = 5


# ---------------------------------------------------------------- position-aware parsing


class _Obj(dict):
    pos = 0


class _Arr(list):
    pos = 0


def _decoder(text: str) -> json.JSONDecoder:
    dec = json.JSONDecoder()

    def parse_object(s_and_end, *args):
        start = s_and_end[1] - 1
        val, end = _jd.JSONObject(s_and_end, *args)
        out = _Obj(val)
        out.pos = text.count("\n", 0, start) + 1
        return out, end

    def parse_array(s_and_end, scan_once):
        start = s_and_end[1] - 1
        val, end = _jd.JSONArray(s_and_end, scan_once)
        out = _Arr(val)
        out.pos = text.count("\n", 0, start) + 1
        return out, end

    dec.parse_object = parse_object
    dec.parse_array = parse_array
    dec.scan_once = _js.py_make_scanner(dec)
    return dec


def parse_json(text: str):
    """Parse JSON keeping the starting line of every object and array."""
    try:
        return _decoder(text).decode(text)
    except json.JSONDecodeError as exc:
        raise GraphSpecError(exc.msg, exc.lineno, None) from None


# ---------------------------------------------------------------- field helpers


class _Ctx:
    def __init__(self, node, path):
        self.node, self.path = node, path

    def line(self, node=None):
        return getattr(node if node is not None else self.node, "pos", None)

    def fail(self, msg, key=None, node=None):
        path = self.path if key is None else f"{self.path}.{key}" if self.path else key
        sub = node if node is not None else (self.node.get(key) if key and isinstance(self.node, dict) else None)
        raise GraphSpecError(msg, self.line(sub) or self.line(), path)

    def get(self, key, kind=None, required=True, default=None):
        if not isinstance(self.node, dict):
            raise GraphSpecError("expected an object", self.line(), self.path)
        if key not in self.node:
            if required:
                self.fail(f"missing required field {key!r}")
            return default
        v = self.node[key]
        if kind is not None:
            numeric = kind in (int, float, (int, float))
            if not isinstance(v, kind) or (numeric and isinstance(v, bool)):
                self.fail(f"wrong type {type(v).__name__}", key)
        return v

    def child(self, key, idx=None):
        node = self.node[key] if idx is None else self.node[key][idx]
        path = f"{self.path}.{key}" if self.path else key
        if idx is not None:
            path += f"[{idx}]"
        return _Ctx(node, path)


def _real_array(ctx: _Ctx, key, required=True):
    raw = ctx.get(key, required=required)
    if raw is None:
        return None
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        ctx.fail("expected a rectangular array of numbers", key)
    if not np.all(np.isfinite(arr)):
        ctx.fail("entries must be finite", key)
    return arr


def _complex_array(ctx: _Ctx, key, required=True):
    raw = ctx.get(key, required=required)
    if raw is None:
        return None
    if isinstance(raw, dict):
        sub = ctx.child(key)
        re = _real_array(sub, "re")
        im = _real_array(sub, "im", required=False)
        if im is None:
            im = np.zeros_like(re)
        if re.shape != im.shape:
            sub.fail("re and im must have the same shape")
        return re + 1j * im
    return _real_array(ctx, key).astype(complex)


# ---------------------------------------------------------------- loading


def load_graph_spec(path) -> GraphSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise GraphSpecError(f"cannot read {path}: {exc.strerror}") from None
    return graph_spec_from_text(text)


def graph_spec_from_text(text: str) -> GraphSpec:
    doc = parse_json(text)
    return graph_spec_from_doc(doc)


def graph_spec_from_doc(doc) -> GraphSpec:
    root = _Ctx(doc, "")
    if not isinstance(doc, dict):
        raise GraphSpecError("top level must be an object", getattr(doc, "pos", 1), None)
    unknown = set(doc) - {"variables", "factors", "partition", "em", "stop", "config", "comment"}
    if unknown:
        root.fail(f"unknown top-level fields {sorted(unknown)}")
    variables = _load_variables(root)
    vid = {v.name: k for k, v in enumerate(variables)}
    factors, parts = _load_factors(root, variables, vid)
    graph = _build(root, variables, factors)
    bp = _load_partition(root, factors, parts)
    try:
        part = partition(graph, bp)
    except ValueError as exc:
        raise GraphSpecError(str(exc), root.line(doc.get("partition")), "partition") from None
    em = _load_em(root, vid, part)
    stop = _load_stop(root)
    damping, n_inner = _load_config(root)
    return GraphSpec(graph, part, em, stop, damping, n_inner)


def _load_variables(root: _Ctx) -> list[Variable]:
    vs = root.get("variables", list)
    if not vs:
        root.fail("at least one variable is required", "variables")
    out, seen = [], set()
    for k in range(len(vs)):
        c = root.child("variables", k)
        name = c.get("name", str)
        if name in seen:
            c.fail(f"duplicate variable name {name!r}", "name")
        seen.add(name)
        if "gaussian" in c.node:
            g = c.child("gaussian")
            dim = g.get("dim", int, required=False, default=1)
            if dim < 1:
                g.fail("dimension must be >= 1", "dim")
            out.append(Variable(name, dim=dim))
        else:
            card = c.get("card", int)
            if card < 1:
                c.fail("alphabet size must be >= 1", "card")
            out.append(Variable(name, card=card))
    return out


def _names_to_ids(c: _Ctx, key, vid) -> tuple[int, ...]:
    names = c.get(key, list)
    ids = []
    for n in names:
        if not isinstance(n, str):
            c.fail("variable references must be names", key)
        if n not in vid:
            c.fail(f"unknown variable {n!r}", key)
        ids.append(vid[n])
    return tuple(ids)


def _load_factors(root: _Ctx, variables, vid):
    fs = root.get("factors", list)
    if not fs:
        root.fail("at least one factor is required", "factors")
    out, parts, seen = [], [], set()
    for k in range(len(fs)):
        c = root.child("factors", k)
        name = c.get("name", str, required=False, default=f"f{k}")
        if name in seen:
            c.fail(f"duplicate factor name {name!r}", "name")
        seen.add(name)
        scope = _names_to_ids(c, "scope", vid)
        if not scope:
            c.fail("empty scope", "scope")
        if len(set(scope)) != len(scope):
            c.fail("duplicate variable in scope", "scope")
        kind = c.get("type", str, required=False, default="table")
        if kind == "table":
            pot = _table(c, scope, variables)
        elif kind == "quadratic":
            pot = _quadratic(c, scope, variables, vid)
        elif kind == "gaussian_prior":
            pot = _gaussian_prior(c, scope, variables)
        else:
            c.fail(f"unknown factor type {kind!r}", "type")
        part = c.get("part", str, required=False, default=None)
        if part is not None and part not in ("bp", "mf"):
            c.fail("part must be 'bp' or 'mf'", "part")
        if part is None:
            part = "bp" if kind == "table" else "mf"
        out.append(Factor(scope, pot, name))
        parts.append(part)
    return out, parts


def _table(c: _Ctx, scope, variables) -> Table:
    for i in scope:
        if variables[i].is_gaussian:
            c.fail(f"table factor over Gaussian variable {variables[i].name!r}", "scope")
    vals = _real_array(c, "values")
    shape = tuple(variables[i].card for i in scope)
    if vals.size == math.prod(shape) and vals.shape != shape:
        vals = vals.reshape(shape)
    if vals.shape != shape:
        c.fail(f"shape {vals.shape} does not match alphabet sizes {shape}", "values")
    if np.any(vals < 0):
        c.fail("potential values must be nonnegative", "values")
    if not np.any(vals > 0):
        c.fail("potential is identically zero", "values")
    return Table(scope, vals)


def _quadratic(c: _Ctx, scope, variables, vid) -> QuadraticPotential:
    disc = _names_to_ids(c, "discrete", vid) if "discrete" in c.node else tuple(
        i for i in scope if not variables[i].is_gaussian)
    cont_raw = c.get("continuous", list, required=False, default=None)
    if cont_raw is None:
        cont = tuple((i, tuple(range(variables[i].dim))) for i in scope if variables[i].is_gaussian)
    else:
        cont = []
        for entry in cont_raw:
            if not (isinstance(entry, list) and len(entry) == 2 and entry[0] in vid and isinstance(entry[1], list)):
                c.fail("entries must be [variable name, [coordinates]]", "continuous")
            v = vid[entry[0]]
            if not variables[v].is_gaussian:
                c.fail(f"{entry[0]!r} is not Gaussian", "continuous")
            if any(not isinstance(x, int) or not 0 <= x < variables[v].dim for x in entry[1]):
                c.fail(f"coordinate out of range for {entry[0]!r}", "continuous")
            cont.append((v, tuple(entry[1])))
        cont = tuple(cont)
    if set(disc) | {v for v, _ in cont} != set(scope) or len(disc) + len(cont) != len(scope):
        c.fail("discrete and continuous parts must partition the scope", "scope")
    for i in disc:
        if variables[i].is_gaussian:
            c.fail(f"{variables[i].name!r} is Gaussian", "discrete")
    n = sum(len(cc) for _, cc in cont)
    dshape = tuple(variables[i].card for i in disc)
    const = _real_array(c, "const")
    lin = _complex_array(c, "linear", required=False)
    quad = _complex_array(c, "quadratic", required=False)
    lin = np.zeros(dshape + (n,), complex) if lin is None else lin
    quad = np.zeros(dshape + (n, n), complex) if quad is None else quad
    for key, arr, shp in (("const", const, dshape), ("linear", lin, dshape + (n,)),
                          ("quadratic", quad, dshape + (n, n))):
        if arr.size != math.prod(shp):
            c.fail(f"expected shape {shp}, got {arr.shape}", key)
    try:
        return QuadraticPotential(disc, cont, const.reshape(dshape), lin, quad)
    except ValueError as exc:
        c.fail(str(exc), "quadratic")


def _gaussian_prior(c: _Ctx, scope, variables) -> QuadraticPotential:
    if len(scope) != 1 or not variables[scope[0]].is_gaussian:
        c.fail("a Gaussian prior needs exactly one Gaussian variable", "scope")
    v = scope[0]
    d = variables[v].dim
    mean = _complex_array(c, "mean", required=False)
    mean = np.zeros(d, complex) if mean is None else mean.reshape(-1)
    if mean.size != d:
        c.fail(f"expected {d} entries", "mean")
    if "precision" in c.node:
        prec = _complex_array(c, "precision")
        try:
            g = ComplexGaussian(mean, prec)
        except ValueError as exc:
            c.fail(str(exc), "precision")
    else:
        cov = _complex_array(c, "covariance")
        try:
            g = ComplexGaussian.from_covariance(mean, cov)
        except ValueError as exc:
            c.fail(str(exc), "covariance")
    return gaussian_prior_potential(v, g)


def _build(root, variables, factors) -> FactorGraph:
    try:
        return FactorGraph(variables, factors)
    except ValueError as exc:
        raise GraphSpecError(str(exc), root.line(), "factors") from None


def _load_partition(root: _Ctx, factors, parts):
    if "partition" not in root.node:
        return [a for a, p in enumerate(parts) if p == "bp"]
    pc = root.child("partition")
    names = {f.name: a for a, f in enumerate(factors)}
    bp = pc.get("bp", list)
    out = []
    for n in bp:
        if n not in names:
            pc.fail(f"unknown factor {n!r}", "bp")
        out.append(names[n])
    return out


def _load_em(root: _Ctx, vid, part):
    if "em" not in root.node:
        return None
    names = root.get("em", list)
    ids = []
    for n in names:
        if n not in vid:
            root.fail(f"unknown variable {n!r}", "em")
        ids.append(vid[n])
    em = EmConstraintSet(ids)
    try:
        em.validate(part)
    except ValueError as exc:
        root.fail(str(exc), "em")
    return em


def _load_stop(root: _Ctx) -> StopRule:
    if "stop" not in root.node:
        return StopRule()
    c = root.child("stop")
    d = StopRule()
    kw = dict(max_iters=c.get("max_iters", int, False, d.max_iters),
              rel_f_tol=float(c.get("rel_f_tol", (int, float), False, d.rel_f_tol)),
              delta_tol=float(c.get("delta_tol", (int, float), False, d.delta_tol)))
    try:
        return StopRule(**kw)
    except ValueError as exc:
        c.fail(str(exc))


def _load_config(root: _Ctx):
    if "config" not in root.node:
        return 0.3, 5
    c = root.child("config")
    damping = float(c.get("damping", (int, float), False, 0.3))
    n_inner = c.get("n_inner", int, False, 5)
    if not 0.0 <= damping < 1.0:
        c.fail("damping must lie in [0, 1)", "damping")
    if n_inner < 1:
        c.fail("n_inner must be >= 1", "n_inner")
    return damping, n_inner


# ---------------------------------------------------------------- output


def beliefs_to_json(graph: FactorGraph, state) -> dict:
    """Variable beliefs keyed by name; Gaussian beliefs give mean and marginal variances."""
    out = {}
    for i, v in enumerate(graph.variables):
        b = state.var_beliefs.get(i)
        if b is None:
            continue
        if isinstance(b, ComplexGaussian):
            out[v.name] = {"mean": {"re": b.mean.real.tolist(), "im": b.mean.imag.tolist()},
                           "variance": b.variances().tolist()}
        else:
            out[v.name] = np.asarray(b, float).tolist()
    return out


def graph_to_doc(graph: FactorGraph, part: BpMfPartition) -> dict:
    """Inverse of :func:`graph_spec_from_doc` for table and quadratic factors."""
    vs = []
    for v in graph.variables:
        vs.append({"name": v.name, "gaussian": {"dim": v.dim}} if v.is_gaussian else {"name": v.name, "card": v.card})
    fs = []
    for a, f in enumerate(graph.factors):
        name = f.name or f"f{a}"
        scope = [graph.variables[i].name for i in f.scope]
        pot = f.potential
        entry = {"name": name, "scope": scope, "part": "bp" if a in part.bp else "mf"}
        if isinstance(pot, Table):
            entry["values"] = pot.transpose(f.scope).values.tolist()
        elif isinstance(pot, QuadraticPotential):
            entry.update(type="quadratic", discrete=[graph.variables[i].name for i in pot.discrete],
                         continuous=[[graph.variables[v].name, list(c)] for v, c in pot.continuous],
                         const=pot.const.tolist(), linear=_cjson(pot.linear), quadratic=_cjson(pot.quadratic))
        else:
            raise ValueError(f"factor {name}: only table and quadratic factors can be written")
        fs.append(entry)
    return {"variables": vs, "factors": fs}


def _cjson(a):
    a = np.asarray(a, complex)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}
