"""Batch driver: ``magweyl <command> --config cfg.json [--out DIR]``.

Exit codes: 0 success, 1 failed ``verify`` rows, 2 configuration errors,
3 computation errors.  Numeric payloads are deterministic for a fixed
config and seed; the run timestamp goes to a separate ``*_meta.json``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources

import numpy as np

from . import __version__
from .config import load_config
from .errors import ComputeError, ConfigError, MagWeylError

COMMANDS = ("field-check", "quantize", "compose", "expand", "spectrum", "funcalc", "invert", "lap", "essspec",
            "verify")
_MODULE_OF = {"field-check": "field", "quantize": "quantize", "compose": "moyal", "expand": "moyal",
              "spectrum": "spectral", "funcalc": "funcalc", "invert": "funcalc", "lap": "spectral",
              "essspec": "spectral", "verify": "invariants"}


def bundled_config(name):
    """Path of a bundled config (``default``, ``landau``, ``pair_x1_xi1``, ...)."""
    return str(resources.files("magweyl") / "configs" / f"{name}.json")


# ---------------------------------------------------------------------------
# writers (one writer per process, files written at the end of a command)
# ---------------------------------------------------------------------------
class Outputs:
    def __init__(self, cfg, command, out_dir):
        self.cfg, self.command, self.dir = cfg, command, out_dir
        self.files = {}

    def _header(self):
        return "".join(f"# {h}\n" for h in self.cfg.header(self.command))

    def csv(self, name, columns, rows):
        lines = [self._header(), ",".join(columns) + "\n"]
        for r in rows:
            lines.append(",".join(_fmt(v) for v in r) + "\n")
        self.files[name] = "".join(lines).encode()

    def symbol_csv(self, name, f, mask=None):
        g = f.grid
        n = g.n
        cols = [f"x_{j + 1}" for j in range(n)] + [f"xi_{j + 1}" for j in range(n)] + ["re", "im"]
        coords = np.stack([np.broadcast_to(c, g.field_shape).ravel() for c in g.mesh()], axis=1)
        v = f.values.ravel()
        if mask is not None:
            cols.append("core")
            m = np.broadcast_to(mask, g.field_shape).ravel().astype(int)
        body = np.column_stack([coords, v.real, v.imag])
        lines = [self._header(), ",".join(cols) + "\n"]
        for i, row in enumerate(body):
            s = ",".join(f"{x:.16e}" for x in row)
            lines.append(s + (f",{m[i]}" if mask is not None else "") + "\n")
        self.files[name] = "".join(lines).encode()

    def json(self, name, payload):
        d = {"command": self.command, "seed": self.cfg.seed, "gauge_tag": self.cfg.gauge_tag,
             "grid": self.cfg.grid.tag(), "config_hash": self.cfg.hash}
        d.update(payload)
        self.files[name] = (json.dumps(d, indent=2, sort_keys=True, default=_jsonable) + "\n").encode()

    def matrix(self, name, T):
        import tempfile

        with tempfile.NamedTemporaryFile(delete=False) as tmp:
            path = tmp.name
        try:
            T.to_binary(path)
            with open(path, "rb") as fh:
                self.files[name] = fh.read()
        finally:
            os.unlink(path)

    def flush(self, started):
        os.makedirs(self.dir, exist_ok=True)
        for name, data in self.files.items():
            with open(os.path.join(self.dir, name), "wb") as fh:
                fh.write(data)
        meta = {"command": self.command, "version": __version__, "config_hash": self.cfg.hash,
                "seed": self.cfg.seed, "started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "files": sorted(self.files)}
        with open(os.path.join(self.dir, f"{self.command}_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)
        return sorted(self.files)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    if isinstance(v, (tuple, list)):
        return "\"" + " ".join(str(int(x)) for x in v) + "\""
    return str(v)


def _jsonable(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def _sampled(cfg, name):
    from .symbols import sample_symbol

    f = sample_symbol(cfg.symbol(name), cfg.grid)
    if cfg.window is not None and name in cfg.window_targets:
        w = sample_symbol(cfg.window.descriptor(), cfg.grid)
        f = f * w
    return f


def _core(cfg):
    return cfg.window.core_mask() if cfg.window is not None else None


def cmd_field_check(cfg, args, out):
    from .field import check_pair, cocycle_residual, validate_field

    rep = {"potential": cfg.gauge_tag}
    if cfg.field is None:
        rep.update(field=None, valid=True)
    else:
        v = validate_field(cfg.field, seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        s = cfg.grid.L / 8
        q, x, y, w = (rng.uniform(-s, s, size=(1000, cfg.grid.n)) for _ in range(4))
        rep.update(field=cfg.field.tag(), antisymmetry_residual=v.antisymmetry_residual,
                   closedness_residual=v.closedness_residual, valid=v.valid,
                   curl_residual=check_pair(cfg.potential, cfg.field, scale=cfg.grid.L / 4),
                   cocycle_residual=float(np.max(cocycle_residual(cfg.field, q, x, y, w))))
    out.json("field_check.json", rep)


def cmd_quantize(cfg, args, out):
    from .quantize import quantize

    for name in cfg.symbols:
        T = quantize(_sampled(cfg, name), cfg.potential)
        out.matrix(f"quantize_{name}.mwop", T)
        out.json(f"quantize_{name}.json", {"symbol": str(cfg.symbol(name).expr), "rows": T.entries.shape[0],
                                           "hermiticity_residual": T.hermiticity()})


def cmd_compose(cfg, args, out):
    from .moyal import compose_integral, compose_operator_route, expansion

    f, g = _sampled(cfg, "f"), _sampled(cfg, "g")
    method = args.method or "operator"
    core = _core(cfg)
    if method == "operator":
        fg = compose_operator_route(f, g, cfg.potential)
        gf = compose_operator_route(g, f, cfg.potential)
        comm = fg - gf
        out.symbol_csv("compose_fg.csv", fg, core)
        out.symbol_csv("compose_gf.csv", gf, core)
        out.symbol_csv("compose_commutator.csv", comm, core)
        vals = comm.values[core] if core is not None else comm.values
        mean = complex(np.mean(vals))
        out.json("compose.json", {"method": method, "commutator_constant": mean,
                                  "commutator_deviation": float(np.max(np.abs(vals - mean))),
                                  "evaluated_on": "core" if core is not None else "grid"})
    elif method == "integral":
        B = _field_or_zero(cfg)
        pts = cfg.command_params("compose").get("points")
        if pts is None:
            pts = [[0.0] * (2 * cfg.grid.n)]
        vals = np.atleast_1d(compose_integral(f, g, B, np.asarray(pts, dtype=float)))
        cols = [f"x_{j + 1}" for j in range(cfg.grid.n)] + [f"xi_{j + 1}" for j in range(cfg.grid.n)]
        out.csv("compose_integral.csv", cols + ["re", "im"],
                [list(map(float, p)) + [v.real, v.imag] for p, v in zip(pts, vals)])
    elif method == "expansion":
        order = args.order or cfg.command_params("compose").get("order", 3)
        terms = expansion(f, g, _field_or_zero(cfg), int(order))
        total = terms[0].value
        for t in terms[1:]:
            total = total + t.value
        out.symbol_csv("compose_expansion.csv", total, core)
    else:
        raise ConfigError(f"unknown method {method!r}")


def _field_or_zero(cfg):
    from .field import MagneticField

    return cfg.field if cfg.field is not None else MagneticField(cfg.grid.n, "constant", {})


def cmd_expand(cfg, args, out):
    from .moyal import expansion

    order = args.order or cfg.command_params("expand").get("order", 3)
    terms = expansion(_sampled(cfg, "f"), _sampled(cfg, "g"), _field_or_zero(cfg), int(order))
    core = _core(cfg)
    rows = []
    for t in terms:
        out.symbol_csv(f"expand_h{t.level}.csv", t.value, core)
        rows.extend(t.to_csv_rows())
    out.csv("expand_breakdown.csv", ["level", "a", "alpha", "b", "beta", "coef_re", "coef_im", "max_abs"], rows)


def cmd_spectrum(cfg, args, out):
    from .quantize import quantize
    from .spectral import cluster_levels, eigensolve

    p = cfg.command_params("spectrum")
    rep = eigensolve(quantize(_sampled(cfg, "f"), cfg.potential), vectors=p.get("localization", True))
    rep.metadata["gauge"] = cfg.gauge_tag
    loc = rep.localization if rep.localization is not None else np.full(len(rep.eigenvalues), np.nan)
    out.csv("spectrum.csv", ["index", "eigenvalue", "localization"],
            [(i, float(np.real(e)), float(l)) for i, (e, l) in enumerate(zip(rep.eigenvalues, loc))])
    clusters = cluster_levels(rep.eigenvalues, gap=p.get("cluster_gap", 1e-3), min_size=p.get("min_size", 4))
    out.csv("spectrum_clusters.csv", ["cluster", "mean", "count"], [(i, m, c) for i, (m, c) in enumerate(clusters)])
    out.json("spectrum.json", {"hermiticity_residual": rep.hermiticity_residual, "n_eigenvalues": len(rep.eigenvalues),
                               "clusters": clusters[: p.get("clusters", 10)]})


def cmd_funcalc(cfg, args, out):
    from .funcalc import QuasiAnalyticExtension, hs_functional_calculus, spectral_function
    from .quantize import operator_norm, quantize

    p = cfg.command_params("funcalc")
    if "phi" not in p or "support" not in p:
        raise ConfigError("funcalc needs params.funcalc.phi (expression in t) and support")
    Phi = QuasiAnalyticExtension(p["phi"], tuple(p["support"]), int(p.get("order", 3)))
    f = _sampled(cfg, "f")
    res = hs_functional_calculus(Phi, f, cfg.potential, mesh=int(p.get("mesh", 64)), tol=float(p.get("tol", 1e-4)),
                                 max_mesh=int(p.get("max_mesh", 1024)), full=True)
    oracle = spectral_function(Phi, f, cfg.potential)
    sup = float(np.max(np.abs(Phi(np.linspace(*Phi.support, 4097)))))
    err = operator_norm(quantize(res.symbol, cfg.potential).entries - oracle)
    out.symbol_csv("funcalc.csv", res.symbol)
    out.json("funcalc.json", {"mesh": res.mesh, "mesh_change": res.change, "oracle_error": err,
                              "oracle_error_rel": err / sup if sup else err})


def cmd_invert(cfg, args, out):
    from .funcalc import resolvent_symbol, sharp_inverse
    from .quantize import operator_norm, quantize

    p = cfg.command_params("invert")
    f = _sampled(cfg, "f")
    T = quantize(f, cfg.potential).entries
    I = np.eye(T.shape[0])
    if "z" in p:
        z = complex(*p["z"])
        s = resolvent_symbol(f, z, cfg.potential)
        R = quantize(s, cfg.potential).entries
        res = operator_norm((T - z * I) @ R - I)
        out.symbol_csv("invert_resolvent.csv", s)
        out.json("invert.json", {"kind": "resolvent", "z": z, "residual": res})
    else:
        s = sharp_inverse(f, cfg.potential)
        res = operator_norm(T @ quantize(s, cfg.potential).entries - I)
        out.symbol_csv("invert.csv", s)
        out.json("invert.json", {"kind": "inverse", "residual": res})


def cmd_lap(cfg, args, out):
    from .spectral import lap_probe

    p = cfg.command_params("lap")
    if "lambda" not in p:
        raise ConfigError("lap needs params.lap.lambda")
    eps = p.get("eps")
    norms = lap_probe(_sampled(cfg, "f"), cfg.potential, float(p["lambda"]), eps, float(p.get("gamma", 1.0)),
                      float(p.get("m", 0.0)))
    if eps is None:
        from .quantize import quantize
        import scipy.linalg as sla

        T = quantize(_sampled(cfg, "f"), cfg.potential).entries
        ev = sla.eigvalsh(0.5 * (T + T.conj().T))
        i = np.searchsorted(ev, float(p["lambda"]))
        lo = ev[i - 1] if i > 0 else ev[0] - 1.0
        hi = ev[i] if i < len(ev) else ev[-1] + 1.0
        eps = [(hi - lo) * s for s in (1, 0.5, 0.25, 0.125, 0.0625)]
    out.csv("lap.csv", ["eps", "norm"], [(float(e), float(v)) for e, v in zip(eps, norms)])
    ratio = norms[-1] / norms[-2] if len(norms) > 1 else float("nan")
    out.json("lap.json", {"lambda": float(p["lambda"]), "norms": norms, "last_ratio": ratio,
                          "bounded_trend": bool(ratio <= 1.5)})


def cmd_essspec(cfg, args, out):
    from .config import parse_field, parse_gauge
    from .spectral import AnisotropyProfile, PerturbationSplit, anisotropic_ess, ess_spectrum_decaying
    from .symbols import expression

    p = cfg.command_params("essspec")
    n, g = cfg.grid.n, cfg.grid
    mode = p.get("mode", "decaying")
    thr = float(p.get("threshold", 0.2))
    tol = float(p.get("tol", 0.05))
    if mode == "decaying":
        parts = {k: expression(p[k], n) if p.get(k) else None for k in ("f0", "f_S", "f_L")}
        if parts["f0"] is None:
            raise ConfigError("decaying mode needs params.essspec.f0")
        try:
            split = PerturbationSplit(parts["f0"], parts["f_S"], parts["f_L"], float(p.get("eps", 0.5)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rep = ess_spectrum_decaying(split, _field_or_zero(cfg), cfg.potential, g, thr, tol)
    elif mode == "anisotropic":
        lims = tuple(expression(s, n) for s in p["limit_symbols"])
        fields = tuple(parse_field(b, n, g) for b in p.get("limit_fields", [None, None]))
        gauges = p.get("limit_gauges")
        lpots = None
        if gauges is not None:
            lpots = tuple(None if spec is None else parse_gauge(spec, B, n) for spec, B in zip(gauges, fields))
        prof = AnisotropyProfile(tuple(p["direction"]), lims, fields, field=cfg.field, potential=cfg.potential,
                                 limit_potentials=lpots)
        window = tuple(p["window"]) if "window" in p else None
        rep = anisotropic_ess(prof, cfg.symbol("f"), g, thr, tol, window)
    else:
        raise ConfigError(f"unknown essspec mode {mode!r}")
    out.json("essspec.json", json.loads(rep.to_json(mode=mode)))


def cmd_verify(cfg, args, out):
    from .invariants import format_table, run_suite

    results = run_suite(cfg.grid, cfg.field, cfg.potential, cfg.seed)
    out.csv("verify.csv", ["module", "check", "value", "tolerance", "status"],
            [(r.module, r.name, r.value, r.tolerance, "PASS" if r.passed else "FAIL") for r in results])
    print(format_table(results))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


HANDLERS = {"field-check": cmd_field_check, "quantize": cmd_quantize, "compose": cmd_compose, "expand": cmd_expand,
            "spectrum": cmd_spectrum, "funcalc": cmd_funcalc, "invert": cmd_invert, "lap": cmd_lap,
            "essspec": cmd_essspec, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="magweyl", description="Magnetic Weyl calculus experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment config (default: bundled 'default')")
    ap.add_argument("--out", help="output directory (default: the config's 'output' entry)")
    ap.add_argument("--seed", type=int, help="random seed, overrides the config (default 42)")
    ap.add_argument("--method", choices=("operator", "integral", "expansion"), help="composition route for compose")
    ap.add_argument("--order", type=int, help="number of expansion terms N (levels 0..N-1)")
    return ap


def run(command, cfg, args=None, out_dir=None):
    """Run one command on a loaded config; returns the exit status."""
    args = args or argparse.Namespace(method=None, order=None)
    out = Outputs(cfg, command, out_dir or cfg.output)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    try:
        status = HANDLERS[command](cfg, args, out) or 0
    except ConfigError:
        raise
    except (MagWeylError, np.linalg.LinAlgError, ArithmeticError, MemoryError) as exc:
        raise ComputeError(_MODULE_OF[command], command, exc) from exc
    out.flush(started)
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config or bundled_config("default"))
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        return run(args.command, cfg, args, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ComputeError as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
