"""Experiment configuration: JSON schema, parsing and up-front validation.

Schema (all keys except ``grid`` optional)::

    {
      "seed": 42,
      "grid": {"dim": 2, "points_per_dim": 32, "box_length": 12.0},
      "field": {"kind": "constant", "components": {"1,2": 1.0}},
      "gauge": {"type": "transversal"},
      "symbols": {"f": "xi_1^2 + xi_2^2", "g": "x_1"},
      "window": {"apply_to": ["f", "g"], "x_frac": 0.06, "xi_frac": 0.12, "margin": 4.0},
      "params": {"<command>": {...}},
      "output": "out"
    }

Field components are numbers or expressions in ``x_j``; ``{"npy": path}``
loads a grid-sampled component.  Gauges are ``transversal``, ``symmetric``
or ``landau`` (2D constant fields), or ``explicit`` with ``"A": [...]``;
any of them may add ``"phi": "<expr>"`` to apply ``A -> A + d phi``.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .errors import ConfigError, MagWeylError
from .field import (GaugeFunction, MagneticField, VectorPotential, check_pair, gauge_transform, landau_gauge,
                    symmetric_gauge, transversal_gauge, validate_field, zero_potential)
from .symbols import Plateau, SpatialGrid, expression, xisyms

DEFAULT_SEED = 42


def content_hash(raw: bytes) -> str:
    """Git blob hash of the raw config bytes."""
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


@dataclass
class ExperimentConfig:
    raw: dict
    hash: str
    seed: int
    grid: SpatialGrid
    field: MagneticField | None
    potential: VectorPotential | None
    symbols: dict
    window: Plateau | None
    window_targets: tuple
    params: dict = field(default_factory=dict)
    output: str = "out"

    @property
    def gauge_tag(self):
        return self.potential.tag if self.potential is not None else "A=0"

    def header(self, command):
        return [f"command={command}", f"seed={self.seed}", f"gauge_tag={self.gauge_tag}",
                f"grid={self.grid.tag()}", f"config_hash={self.hash}"]

    def symbol(self, name):
        if name not in self.symbols:
            raise ConfigError(f"symbol {name!r} missing from config")
        return self.symbols[name]

    def command_params(self, command):
        return dict(self.params.get(command, {}))


def _component(v, n, base):
    if isinstance(v, (int, float)):
        return sp.Float(v) if isinstance(v, float) else sp.Integer(v)
    if isinstance(v, str):
        d = _parse_symbol(v, n)
        if d.expr.free_symbols & set(xisyms(n)):
            raise ConfigError(f"field component {v!r} depends on xi")
        return d.expr
    if isinstance(v, dict) and "npy" in v:
        return np.load(os.path.join(base, v["npy"]))
    raise ConfigError(f"cannot read field component {v!r}")


def parse_field(spec, n, grid=None, base="."):
    """Field descriptor from its JSON form (``None`` for no field)."""
    if spec is None:
        return None
    if not isinstance(spec, dict) or "components" not in spec:
        raise ConfigError("field needs a 'components' mapping")
    comps = {}
    for key, v in spec["components"].items():
        try:
            j, k = (int(s) for s in str(key).split(","))
        except ValueError:
            raise ConfigError(f"bad component key {key!r}, expected 'j,k'") from None
        comps[(j, k)] = _component(v, n, base)
    sampled = any(isinstance(v, np.ndarray) for v in comps.values())
    kind = spec.get("kind", "grid_sampled" if sampled else "closed_form")
    try:
        B = MagneticField(n, kind, comps, grid if kind == "grid_sampled" else None)
        B.check_indices()
    except (ValueError, MagWeylError) as exc:
        raise ConfigError(f"invalid field: {exc}") from None
    return B


def parse_gauge(spec, B, n):
    """Vector potential from its JSON form."""
    spec = spec or {"type": "transversal"}
    kind = spec.get("type", "transversal")
    if kind == "transversal":
        A = zero_potential(n) if B is None else transversal_gauge(B)
    elif kind in ("symmetric", "landau"):
        if n != 2 or B is None or not B.is_constant:
            raise ConfigError(f"{kind} gauge needs a constant 2D field")
        b = float(B(np.zeros((1, 2)))[0, 0, 1])
        A = symmetric_gauge(b) if kind == "symmetric" else landau_gauge(b)
    elif kind == "explicit":
        exprs = spec.get("A")
        if not isinstance(exprs, list) or len(exprs) != n:
            raise ConfigError(f"explicit gauge needs a list of {n} components")
        parsed = []
        for e in exprs:
            d = _parse_symbol(e, n)
            if d.expr.free_symbols & set(xisyms(n)):
                raise ConfigError(f"potential component {e!r} depends on xi")
            parsed.append(d.expr)
        A = VectorPotential(n, "closed_form", tuple(parsed), tag=spec.get("tag", f"A={[str(e) for e in exprs]}"),
                            source=B)
    else:
        raise ConfigError(f"unknown gauge type {kind!r}")
    if "phi" in spec:
        phi = _parse_symbol(spec["phi"], n)
        if phi.expr.free_symbols & set(xisyms(n)):
            raise ConfigError("gauge function phi depends on xi")
        A = gauge_transform(A, GaugeFunction(phi.expr, n))
    return A


def _parse_symbol(text, n):
    try:
        return expression(str(text), n)
    except MagWeylError as exc:
        raise ConfigError(f"symbol {text!r}: {exc}") from None
    except (ValueError, SyntaxError, TypeError, sp.SympifyError) as exc:
        raise ConfigError(f"cannot parse symbol {text!r}: {exc}") from None


def _walk_expressions(params, n):
    """Parse every symbol-like string under ``params`` that names a symbol."""
    keys = {"f", "g", "f0", "f_S", "f_L", "f_minus", "f_plus"}
    for key, v in params.items():
        if isinstance(v, dict):
            _walk_expressions(v, n)
        elif key in keys and v is not None:
            _parse_symbol(v, n)
        elif key == "limit_symbols":
            for s in v:
                _parse_symbol(s, n)


def load_config(path=None, data=None):
    """Read, parse and validate a config (file path or already-loaded dict).

    Every descriptor is parsed and dimension-checked here, before any
    computation; failures raise :class:`ConfigError`.
    """
    if data is None:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
            data = json.loads(raw)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    else:
        raw = json.dumps(data, sort_keys=True).encode()
        base = "."
    if not isinstance(data, dict) or "grid" not in data:
        raise ConfigError("config needs a 'grid' section")
    g = data["grid"]
    try:
        grid = SpatialGrid(int(g["dim"]), int(g["points_per_dim"]), float(g["box_length"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"grid needs dim, points_per_dim, box_length: {exc}") from None
    except (ValueError, MagWeylError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from None
    n = grid.n
    seed = int(data.get("seed", DEFAULT_SEED))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    B = parse_field(data.get("field"), n, grid, base)
    if B is not None and B.kind != "grid_sampled":
        rep = validate_field(B)
        if not rep.valid:
            raise ConfigError(f"field is not a closed 2-form: {rep}")
    try:
        A = parse_gauge(data.get("gauge"), B, n)
        if B is not None:
            check_pair(A, B, scale=grid.L / 4)
    except ConfigError:
        raise
    except (MagWeylError, ValueError, TypeError, SyntaxError, sp.SympifyError) as exc:
        raise ConfigError(f"invalid gauge: {exc}") from None
    symbols = {k: _parse_symbol(v, n) for k, v in (data.get("symbols") or {}).items()}
    window, targets = None, ()
    if "window" in data:
        w = dict(data["window"])
        targets = tuple(w.pop("apply_to", list(symbols)))
        try:
            window = Plateau(grid, **w)
        except TypeError as exc:
            raise ConfigError(f"bad window parameters: {exc}") from None
        if window.x_core <= 0 or window.xi_core <= 0:
            raise ConfigError("window leaves no flat core on this grid")
    params = data.get("params") or {}
    _walk_expressions(params, n)
    return ExperimentConfig(data, content_hash(raw), seed, grid, B, A, symbols, window, targets, params,
                            data.get("output", "out"))


__all__ = ["ExperimentConfig", "load_config", "parse_field", "parse_gauge", "content_hash", "DEFAULT_SEED"]
