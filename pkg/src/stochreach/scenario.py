"""Scenario files: a sectioned ``key = value`` text format.

Grammar (see ``docs/scenario-format.md`` for the full reference)::

    file     := { comment | blank | section }
    section  := "[" name "]" { entry }
    entry    := key "=" value
    value    := number | string | list        (lists and numbers are JSON)
    comment  := ("#" | ";") text

Matrices are bracketed row lists, e.g. ``sigma = [[0.5, 0.8], [0.8, 2.0]]``.
Unknown sections and keys are rejected. Errors carry the line number and the
dotted field name (``disturbance.sigma``).
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .linsys import LtiSystem, Pursuer, double_integrator, point_mass
from .planner import OptConfig, PursuitProblem
from .polytope import Polytope
from .quad import QuadConfig
from .randvec import ExponentialLaw, GaussianLaw

SCHEMA = {
    "system": {"model", "A", "B", "Ts", "T", "x0", "positions"},
    "disturbance": {"kind", "mean", "sigma", "rates"},
    "pursuer": {"x0", "u_lower", "u_upper", "half_width"},
    "solver": {
        "profile", "tol", "nodes", "max_evals", "radius", "epsilon", "max_iter",
        "patience", "fd_step", "multistart", "mc_particles", "seed", "separable",
    },
    "output": {"dir", "snapshots", "grid_num", "grid_width"},
}
REQUIRED = {
    "system": {"model", "Ts", "T", "x0"},
    "disturbance": {"kind"},
    "pursuer": {"x0", "u_lower", "u_upper", "half_width"},
}

# reduced quadrature settings for quick checks
CI_QUAD = dict(nodes=33, tol=1e-5, panel_order=8, max_evals=4_000_000)


class ScenarioError(ValidationError):
    """Invalid scenario file; ``field`` is the dotted key, ``line`` 1-based or None."""

    def __init__(self, message, field=None, line=None, path=None):
        where = f"{path or '<scenario>'}"
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " + (f"{field}: " if field else "")
        super().__init__(prefix + message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class Scenario:
    name: str
    problem: PursuitProblem
    Ts: float
    quad: QuadConfig
    opt: OptConfig
    mc_particles: int = 500_000
    seed: int = 0
    separable: bool | None = None
    out_dir: str = "out"
    snapshots: tuple = ()
    grid_num: int = 101
    grid_width: float = 4.0

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``gauss_pm`` or ``exp_di``)."""
    stem = name[:-len(".scenario")] if name.endswith(".scenario") else name
    path = resources.files("stochreach") / "scenarios" / f"{stem}.scenario"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return Path(str(path))


def _line_index(text):
    """Map (section, key) to the 1-based line where the key is set."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            index[(section, m.group(1).strip())] = no
    return index


class _Reader:
    def __init__(self, cp, lines, path):
        self.cp = cp
        self.lines = lines
        self.path = path

    def fail(self, section, key, message):
        raise ScenarioError(message, f"{section}.{key}", self.lines.get((section, key)), self.path)

    def has(self, section, key):
        return self.cp.has_option(section, key)

    def raw(self, section, key):
        return self.cp.get(section, key).strip()

    def value(self, section, key, default=None):
        if not self.has(section, key):
            return default
        text = self.raw(section, key)
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text

    def string(self, section, key, choices, default=None):
        v = self.value(section, key, default)
        if v not in choices:
            self.fail(section, key, f"expected one of {sorted(choices)}, got {v!r}")
        return v

    def number(self, section, key, default=None, integer=False, positive=True):
        v = self.value(section, key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(section, key, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            self.fail(section, key, f"expected an integer, got {v!r}")
        if positive and not v > 0:
            self.fail(section, key, f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    def array(self, section, key, shape=None, default=None):
        v = self.value(section, key, default)
        try:
            arr = np.array(v, dtype=float)
        except (TypeError, ValueError):
            self.fail(section, key, f"expected a numeric list, got {v!r}")
        if arr.ndim == 0:
            self.fail(section, key, "expected a bracketed list")
        if shape is not None and arr.shape != shape:
            self.fail(section, key, f"expected shape {shape}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            self.fail(section, key, "entries must be finite")
        return arr


def parse_scenario(text: str, name: str = "scenario", path=None) -> Scenario:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path or name))
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"duplicate key {exc.option!r}", f"{exc.section}.{exc.option}",
                            exc.lineno, path) from exc
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"duplicate section {exc.section!r}", exc.section, exc.lineno, path) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ScenarioError("malformed line", None, line, path) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError("entries must follow a [section] header", None, exc.lineno, path) from exc
    lines = _line_index(text)
    r = _Reader(cp, lines, path)

    for section in cp.sections():
        if section not in SCHEMA:
            raise ScenarioError(f"unknown section [{section}]", section, lines.get((section, None)), path)
        for key in cp.options(section):
            if key not in SCHEMA[section]:
                r.fail(section, key, "unknown key")
    for section, keys in REQUIRED.items():
        if not cp.has_section(section):
            raise ScenarioError(f"missing section [{section}]", section, None, path)
        for key in sorted(keys):
            if not cp.has_option(section, key):
                raise ScenarioError("missing required key", f"{section}.{key}",
                                    lines.get((section, None)), path)

    # system
    Ts = r.number("system", "Ts")
    T = r.number("system", "T", integer=True)
    model = r.string("system", "model", {"point_mass", "double_integrator", "custom"})
    if model == "point_mass":
        sys = point_mass(Ts, T)
    elif model == "double_integrator":
        sys = double_integrator(Ts, T)
    else:
        for key in ("A", "B"):
            if not r.has("system", key):
                r.fail("system", key, "required when model = custom")
        A = r.array("system", "A")
        B = r.array("system", "B")
        pos = tuple(int(i) for i in r.array("system", "positions", default=[0, 1]))
        try:
            sys = LtiSystem(A, B, T, pos)
        except (ShapeError, ValidationError) as exc:
            r.fail("system", "A", str(exc))
    if model != "custom":
        for key in ("A", "B", "positions"):
            if r.has("system", key):
                r.fail("system", key, f"not allowed with model = {model}")
    x0 = r.array("system", "x0", shape=(sys.n,))

    # disturbance
    kind = r.string("disturbance", "kind", {"gaussian", "exponential_product"})
    if kind == "gaussian":
        for key in ("mean", "sigma"):
            if not r.has("disturbance", key):
                r.fail("disturbance", key, "required for a gaussian disturbance")
        if r.has("disturbance", "rates"):
            r.fail("disturbance", "rates", "not allowed for a gaussian disturbance")
        mean = r.array("disturbance", "mean", shape=(sys.p,))
        sigma = r.array("disturbance", "sigma", shape=(sys.p, sys.p))
        try:
            law = GaussianLaw(mean, sigma)
        except ValidationError as exc:
            r.fail("disturbance", "sigma", str(exc))
    else:
        if not r.has("disturbance", "rates"):
            r.fail("disturbance", "rates", "required for an exponential_product disturbance")
        for key in ("mean", "sigma"):
            if r.has("disturbance", key):
                r.fail("disturbance", key, "not allowed for an exponential_product disturbance")
        rates = r.array("disturbance", "rates", shape=(sys.p,))
        if np.any(rates <= 0):
            r.fail("disturbance", "rates", "rates must be strictly positive")
        law = ExponentialLaw(rates)

    # pursuer
    rx0 = r.array("pursuer", "x0", shape=(2,))
    lo = r.array("pursuer", "u_lower", shape=(2,))
    hi = r.array("pursuer", "u_upper", shape=(2,))
    if np.any(lo > hi):
        r.fail("pursuer", "u_upper", "must be >= u_lower componentwise")
    a = r.number("pursuer", "half_width")
    pursuer = Pursuer(rx0, Polytope.from_box(lo, hi), Ts)
    problem = PursuitProblem(sys, law, x0, pursuer, a)

    # solver
    s = "solver"
    profile = r.string(s, "profile", {"default", "ci"}, "default")
    q = QuadConfig(**CI_QUAD) if profile == "ci" else QuadConfig()
    changes = {}
    if r.has(s, "tol"):
        changes["tol"] = r.number(s, "tol")
    if r.has(s, "nodes"):
        changes["nodes"] = r.number(s, "nodes", integer=True)
    if r.has(s, "max_evals"):
        changes["max_evals"] = r.number(s, "max_evals", integer=True)
    if r.has(s, "radius"):
        changes["radius"] = r.number(s, "radius")
    try:
        q = q.with_(**changes)
    except ValidationError as exc:
        raise ScenarioError(str(exc), "solver", lines.get((s, None)), path) from exc
    opt_kw = {}
    for key, integer in (("epsilon", False), ("max_iter", True), ("patience", True),
                         ("fd_step", False), ("multistart", True)):
        if r.has(s, key):
            opt_kw[key] = r.number(s, key, integer=integer)
    opt = OptConfig(**opt_kw)
    particles = r.number(s, "mc_particles", 500_000, integer=True)
    seed = r.number(s, "seed", 0, integer=True, positive=False)
    if seed < 0:
        r.fail(s, "seed", "must be nonnegative")
    sep = r.string(s, "separable", {"auto", "yes", "no"}, "auto")
    separable = {"auto": None, "yes": True, "no": False}[sep]

    # output
    o = "output"
    out_dir = str(r.value(o, "dir", "out"))
    snaps = r.value(o, "snapshots", [])
    if not isinstance(snaps, list) or not all(isinstance(k, int) and not isinstance(k, bool)
                                              for k in snaps):
        r.fail(o, "snapshots", "expected a list of integer steps")
    for k in snaps:
        if not 1 <= k <= T:
            r.fail(o, "snapshots", f"step {k} outside [1, {T}]")
    grid_num = r.number(o, "grid_num", 101, integer=True)
    if grid_num < 2:
        r.fail(o, "grid_num", "needs at least 2 points per axis")
    grid_width = r.number(o, "grid_width", 4.0)

    return Scenario(name, problem, Ts, q, opt, particles, seed, separable, out_dir,
                    tuple(snaps), grid_num, grid_width)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file (a path, or the name of a bundled scenario)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled(str(path))
    text = p.read_text()
    return parse_scenario(text, p.stem, p)
