"""YAML descriptions of spaces, strata and run configuration.

Space file::

    dimension: 4
    link:
      round_sphere: {f: 3, radius: 1.0, jmax: 32}
    warp:
      kind: spindle        # spindle | cone | sampled
      rho: 0.5
      L: 3.141592653589793

An explicit link replaces ``round_sphere`` with
``{f, volume, scal, spectrum: [[eigenvalue, multiplicity], ...], name}``.
A sampled warp gives ``L`` and ``samples: {x: [...], psi: [...]}``.

Strata file::

    dimension: 4
    strata:
      - {f: 3, A0: 0.0, A1: 1.0}

Unknown keys are errors, reported with the line they appear on.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import yaml

from .cone_geometry import Cone, ConeSpace, InvalidSpaceError, LinkSpec, SampledWarp, Spindle, StratumData, YamabeConstants
from .link_spectrum import DEFAULT_JMAX, round_sphere_link
from .yamabe_solver import SolverConfig


class SpaceFileError(ValueError):
    pass


def _key_lines(node, prefix=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = prefix + (i,)
            out[path] = v.start_mark.line + 1
            _key_lines(v, path, out)
    return out


class _Doc:
    """Parsed YAML with line lookups for diagnostics."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.data = yaml.safe_load(text)
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{source}:{mark.line + 1}" if mark is not None else source
            raise SpaceFileError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
        self.lines = _key_lines(root) if root is not None else {}

    def error(self, path, message):
        line = None
        p = tuple(path)
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        where = f"{self.source}:{line}" if line else self.source
        field = ".".join(str(x) for x in path) or "<root>"
        return SpaceFileError(f"{where}: field '{field}': {message}")

    def mapping(self, value, path, required=(), optional=()):
        if not isinstance(value, dict):
            raise self.error(path, "expected a mapping")
        unknown = set(value) - set(required) - set(optional)
        if unknown:
            key = sorted(map(str, unknown))[0]
            raise self.error(tuple(path) + (key,), "unknown key")
        for key in required:
            if key not in value:
                raise self.error(path, f"missing required key '{key}'")
        return value

    def number(self, value, path, integer=False, positive=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected a number, got {value!r}")
        if integer and int(value) != value:
            raise self.error(path, f"expected an integer, got {value!r}")
        if not math.isfinite(value):
            raise self.error(path, "must be finite")
        if positive and not value > 0:
            raise self.error(path, f"must be positive, got {value!r}")
        return int(value) if integer else float(value)


def _read(path) -> _Doc:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpaceFileError(f"{path}: cannot read: {exc.strerror}") from None
    return _Doc(text, str(path))


def _link(doc: _Doc, value, path):
    if isinstance(value, dict) and "round_sphere" in value:
        doc.mapping(value, path, required=("round_sphere",))
        rs = doc.mapping(value["round_sphere"], path + ("round_sphere",), required=("f",), optional=("radius", "jmax"))
        f = doc.number(rs["f"], path + ("round_sphere", "f"), integer=True)
        radius = doc.number(rs.get("radius", 1.0), path + ("round_sphere", "radius"))
        jmax = doc.number(rs.get("jmax", DEFAULT_JMAX), path + ("round_sphere", "jmax"), integer=True)
        return round_sphere_link(f, radius, jmax)
    m = doc.mapping(value, path, required=("f", "volume", "scal"), optional=("spectrum", "name"))
    spectrum = m.get("spectrum", [[0.0, 1]])
    if not isinstance(spectrum, list) or not spectrum:
        raise doc.error(path + ("spectrum",), "expected a nonempty list of [eigenvalue, multiplicity]")
    pairs = []
    for i, item in enumerate(spectrum):
        if not (isinstance(item, list) and len(item) == 2):
            raise doc.error(path + ("spectrum", i), "expected [eigenvalue, multiplicity]")
        pairs.append(
            (doc.number(item[0], path + ("spectrum", i)), doc.number(item[1], path + ("spectrum", i), integer=True))
        )
    return LinkSpec(
        f=doc.number(m["f"], path + ("f",), integer=True),
        volume=doc.number(m["volume"], path + ("volume",)),
        scal=doc.number(m["scal"], path + ("scal",)),
        laplace_spectrum=tuple(pairs),
        name=str(m.get("name", "")),
    )


def _warp(doc: _Doc, value, path):
    m = doc.mapping(value, path, required=("kind",), optional=("rho", "L", "samples"))
    kind = m["kind"]
    if kind == "spindle":
        doc.mapping(m, path, required=("kind", "rho"), optional=("L",))
        return Spindle(doc.number(m["rho"], path + ("rho",), positive=True), doc.number(m.get("L", math.pi), path + ("L",), positive=True))
    if kind == "cone":
        doc.mapping(m, path, required=("kind", "rho"), optional=("L",))
        return Cone(doc.number(m["rho"], path + ("rho",), positive=True), doc.number(m.get("L", 1.0), path + ("L",), positive=True))
    if kind == "sampled":
        doc.mapping(m, path, required=("kind", "L", "samples"))
        s = doc.mapping(m["samples"], path + ("samples",), required=("x", "psi"))
        xs = [doc.number(v, path + ("samples", "x", i)) for i, v in enumerate(s["x"] or [])]
        ps = [doc.number(v, path + ("samples", "psi", i)) for i, v in enumerate(s["psi"] or [])]
        return SampledWarp(tuple(xs), tuple(ps), doc.number(m["L"], path + ("L",)))
    raise doc.error(path + ("kind",), f"unknown warp kind {kind!r} (spindle, cone, sampled)")


def load_space(path) -> ConeSpace:
    doc = _read(path)
    top = doc.mapping(doc.data, (), required=("dimension", "link", "warp"))
    parts = {}
    for key, build in (
        ("dimension", lambda: YamabeConstants(doc.number(top["dimension"], ("dimension",), integer=True))),
        ("link", lambda: _link(doc, top["link"], ("link",))),
        ("warp", lambda: _warp(doc, top["warp"], ("warp",))),
    ):
        try:
            parts[key] = build()
        except SpaceFileError:
            raise
        except (InvalidSpaceError, ValueError) as exc:
            raise doc.error((key,), str(exc)) from None
    try:
        return ConeSpace(parts["dimension"], parts["link"], parts["warp"])
    except (InvalidSpaceError, ValueError) as exc:
        raise doc.error(("link",), str(exc)) from None


def load_strata(path):
    """(dimension, [StratumData, ...]) from a strata file."""
    doc = _read(path)
    top = doc.mapping(doc.data, (), required=("dimension",), optional=("strata",))
    n = doc.number(top["dimension"], ("dimension",), integer=True)
    items = top.get("strata") or []
    if not isinstance(items, list):
        raise doc.error(("strata",), "expected a list")
    out = []
    for i, item in enumerate(items):
        p = ("strata", i)
        m = doc.mapping(item, p, required=("f", "A0", "A1"))
        try:
            out.append(
                StratumData(
                    n=n,
                    f_j=doc.number(m["f"], p + ("f",), integer=True),
                    A0=doc.number(m["A0"], p + ("A0",)),
                    A1=doc.number(m["A1"], p + ("A1",)),
                )
            )
        except InvalidSpaceError as exc:
            raise doc.error(p, str(exc)) from None
    return n, out


@dataclasses.dataclass(frozen=True)
class AnalysisConfig:
    q: float | None = None
    threshold: float = 0.05
    moser_levels: int = 40
    n_probes: int = 200
    n_verify: int = 1000
    morrey_q: float = 1.2
    hardy_cells: int = 4000


@dataclasses.dataclass(frozen=True)
class RunConfig:
    solver: SolverConfig = SolverConfig()
    analysis: AnalysisConfig = AnalysisConfig()

    def as_dict(self):
        return {"solver": dataclasses.asdict(self.solver), "analysis": dataclasses.asdict(self.analysis)}


def _section(doc, data, path, cls):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    m = doc.mapping(data, path, optional=tuple(fields))
    kw = {}
    for key, value in m.items():
        if key == "schedule":
            if value is not None and not isinstance(value, list):
                raise doc.error(path + (key,), "expected a list of exponents")
            kw[key] = None if value is None else tuple(doc.number(v, path + (key, i)) for i, v in enumerate(value))
        elif key == "step_rule":
            kw[key] = str(value)
        elif value is None:
            kw[key] = None
        else:
            integer = isinstance(getattr(cls(), key), int) and not isinstance(getattr(cls(), key), bool)
            kw[key] = doc.number(value, path + (key,), integer=integer)
    try:
        return cls(**kw)
    except ValueError as exc:
        raise doc.error(path, str(exc)) from None


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    doc = _read(path)
    if doc.data is None:
        return RunConfig()
    top = doc.mapping(doc.data, (), optional=("solver", "analysis"))
    solver = _section(doc, top.get("solver") or {}, ("solver",), SolverConfig)
    analysis = _section(doc, top.get("analysis") or {}, ("analysis",), AnalysisConfig)
    return RunConfig(solver, analysis)
