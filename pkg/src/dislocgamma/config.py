"""Experiment configuration files.

One ``key = value`` pair per line, values in JSON.  Blank lines and lines
starting with ``#`` are ignored.  Unknown keys are rejected and every error
names its line.

Example::

    wells = [[[1, 0], [0, 1]], [[1.3, 0], [0, 0.8]]]
    mode = "iso"
    xi = [1, 0]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .rigidity import KINDS


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _vec(v) -> bool:
    return isinstance(v, list) and len(v) == 2 and all(_num(a) for a in v)


def _mat(v) -> bool:
    return isinstance(v, list) and len(v) == 2 and all(_vec(r) for r in v)


def _check(pred: Callable[[Any], bool], what: str):
    def check(v):
        if not pred(v):
            raise ValueError(f"expected {what}")
        return v
    return check


def _int_ge(lo):
    return _check(lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= lo,
                  f"an integer >= {lo}")


def _choice(*opts):
    return _check(lambda v: v in opts, "one of " + ", ".join(map(repr, opts)))


_pos = _check(lambda v: _num(v) and v > 0, "a positive number")
_num_list = _check(lambda v: isinstance(v, list) and all(_num(a) and a > 0 for a in v),
                   "a list of positive numbers")

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    default: Any
    check: Callable
    doc: str


SCHEMA: dict[str, Key] = {
    "wells": Key(REQUIRED, _check(lambda v: isinstance(v, list) and v and all(_mat(m) for m in v),
                                  "a non-empty list of 2x2 matrices"), "well matrices U_i, row major"),
    "mode": Key("dist2", _choice("dist2", "iso"), "energy density: dist2 or iso"),
    "lattice": Key([[1.0, 0.0], [0.0, 1.0]], _check(_mat, "two basis vectors"), "Burgers lattice basis"),
    "truncation": Key(None, _check(lambda v: v is None or (_num(v) and v > 0), "null or a positive number"),
                      "lattice enumeration radius (default 4 max|b|)"),
    "convention": Key("psi-half", _choice("psi-half", "psi-nohalf"), "factor carried by hat psi"),
    "seed": Key(0, _int_ge(0), "master seed"),
    "grid": Key(None, _check(lambda v: v is None or (isinstance(v, int) and v >= 4), "null or an integer >= 4"),
                "grid cells per unit length"),
    "out": Key("out", _check(lambda v: isinstance(v, str) and v, "a path"), "output directory"),
    "well_index": Key(0, _int_ge(0), "well used by cell, table and gamma"),
    "xi": Key([1.0, 0.0], _check(_vec, "a 2-vector"), "Burgers vector"),
    "deltas": Key([1e-1, 3e-2, 1e-2, 3e-3], _num_list, "core radii of the cell sweep"),
    "n_theta": Key(128, _int_ge(101), "angular cells of the cell solver"),
    "ds": Key(1 / 16, _check(lambda v: _num(v) and 0 < v <= 1 / 16, "a number in (0, 1/16]"),
              "log-radial step of the cell solver"),
    "eps_sweep": Key([], _num_list, "eps values for psi_eps (rho = 1/|log eps|)"),
    "rotation_angle": Key(0.0, _check(_num, "a number"), "rotation R of the self-energy table"),
    "directions": Key([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
                      _check(lambda v: isinstance(v, list) and all(_vec(a) for a in v), "a list of 2-vectors"),
                      "query directions for phi"),
    "kind": Key("weighted-poincare", _check(lambda v: isinstance(v, str), "an inequality id"), "probe kind"),
    "n_samples": Key(50, _int_ge(0), "probe ensemble size"),
    "amplitude": Key(0.3, _pos, "probe field amplitude"),
    "levels": Key([16, 32, 64], _check(lambda v: isinstance(v, list) and len(v) >= 2 and
                                       all(isinstance(a, int) and a >= 8 for a in v), "a list of integers >= 8"),
                  "grid levels of the Helmholtz study"),
    "omega": Key([-0.5, -0.5, 1.5, 1.5], _check(lambda v: isinstance(v, list) and len(v) == 4 and
                                                 all(_num(a) for a in v) and v[0] < v[2] and v[1] < v[3],
                                                 "[x0, y0, x1, y1]"), "reference rectangle"),
    "E": Key([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
             _check(lambda v: isinstance(v, list) and len(v) >= 3 and all(_vec(a) for a in v),
                    "a polygon vertex list"), "dislocation region"),
    "eps": Key([1e-2, 3e-3, 1e-3], _num_list, "scale schedule"),
    "rho_exponent": Key(0.4, _check(lambda v: _num(v) and 0 < v < 1, "a number in (0, 1)"), "rho = eps^a"),
    "eta": Key(None, _check(lambda v: v is None or (isinstance(v, list) and all(_num(a) and a > 0 for a in v)),
                            "null or a list of positive numbers"), "penalty weights (default eps|log eps|/rho)"),
    "gamma": Key(0.25, _check(lambda v: _num(v) and 0 < v < 1, "a number in (0, 1)"), "eta range exponent"),
    "limit_amplitude": Key(0.05, _check(lambda v: _num(v) and v >= 0, "a non-negative number"),
                           "amplitude of the non-harmonic part of the limit strain"),
    "liminf_s": Key(0.9, _check(lambda v: _num(v) and 0 < v < 1, "a number in (0, 1)"), "exponent s of the shells"),
}


def parse_config(text: str) -> dict:
    """Parse and validate; returns a dict with every schema key filled in."""
    seen: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", n)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", n)
        try:
            value = json.loads(val.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON value for {key!r}: {exc.msg}", n) from None
        try:
            seen[key] = SCHEMA[key].check(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", n) from None
        lines[key] = n
    out = {}
    for key, spec in SCHEMA.items():
        if key in seen:
            out[key] = seen[key]
        elif spec.default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            out[key] = spec.default
    if out["kind"] not in KINDS and "kind" in seen:
        raise ConfigError(f"unknown inequality id {out['kind']!r}", lines["kind"])
    if out["well_index"] >= len(out["wells"]):
        raise ConfigError("well_index out of range", lines.get("well_index"))
    if out["eta"] is not None and len(out["eta"]) != len(out["eps"]):
        raise ConfigError("eta must have one entry per eps", lines.get("eta"))
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def schema_doc() -> str:
    rows = []
    for k, s in SCHEMA.items():
        d = "required" if s.default is REQUIRED else json.dumps(s.default)
        rows.append(f"{k} = {d}    # {s.doc}")
    return "\n".join(rows)
