"""Command line entry point: ``simulate``, ``verify`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .drag import DragError, QuadratureConfig
from .model import ModelParams, drag_constants, terminal_velocity
from .solver import SimulationResult, SolverConfig, SolverError, solve

MANDATORY = ("epsilon", "kappa", "d", "gamma", "t_end")

# key -> (default, kind); kinds drive type checking of the flat JSON document
OPTIONAL = {
    "h": (1.0, "real"),
    "dt": (None, "real?"),
    "picard_damping": (0.5, "real"),
    "picard_tol": (1e-8, "real"),
    "picard_max_iter": (60, "int"),
    "mode": ("picard", "str"),
    "external_force": (0.0, "real"),
    "drag_spacing": (0.01, "real"),
    "n_xi1": (48, "int"),
    "n_xperp": (16, "int"),
    "n_xiperp": (24, "int"),
    "n_xihat": (40, "int"),
    "window_padding": (1.05, "real"),
    "tol_tangent": (1e-8, "real"),
    "n_max": (64, "int"),
    "output_dir": ("output", "str"),
    "emit_plot_data": (False, "bool"),
    "seed": (0, "int"),
    "fit_window": (None, "window?"),
    "theorem": ("auto", "str"),
}
KINDS = {"epsilon": "real", "kappa": "kappa", "d": "int", "gamma": "real", "t_end": "real"}
KINDS.update({k: v[1] for k, v in OPTIONAL.items()})
THEOREMS = ("auto", "thm1", "thm2", "none")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    solver: SolverConfig
    quadrature: QuadratureConfig
    output_dir: Path
    emit_plot_data: bool = False
    seed: int = 0
    fit_window: tuple | None = None
    theorem: str = "auto"

    def resolved(self) -> dict:
        """Flat dict with every default materialised (``kappa = inf`` as ``"inf"``)."""
        m, s, q = self.model, self.solver, self.quadrature
        out = {"epsilon": m.epsilon, "kappa": "inf" if m.free_molecular else m.kappa, "d": m.d,
               "gamma": m.gamma, "h": m.h}
        for f in fields(SolverConfig):
            out[f.name] = getattr(s, f.name)
        for f in fields(QuadratureConfig):
            if f.name in KINDS:
                out[f.name] = getattr(q, f.name)
        out.update(output_dir=str(self.output_dir), emit_plot_data=self.emit_plot_data, seed=self.seed,
                   fit_window=list(self.fit_window) if self.fit_window else None, theorem=self.theorem)
        return out


def _coerce(key: str, value):
    kind = KINDS[key]
    if kind.endswith("?") and value is None:
        return None
    kind = kind.rstrip("?")
    if kind == "kappa":
        if value == "inf":
            return math.inf
        kind = "real"
    if kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if kind == "window":
        if (not isinstance(value, list) or len(value) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
            raise ConfigError(key, f"expected [t_lo, t_hi], got {value!r}")
        if not value[0] < value[1]:
            raise ConfigError(key, "needs t_lo < t_hi")
        return (float(value[0]), float(value[1]))
    raise AssertionError(kind)


def config_from_dict(doc: dict, output_dir: str | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "the config must be a JSON object")
    unknown = sorted(set(doc) - set(KINDS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in MANDATORY:
        if key not in doc:
            raise ConfigError(key, "missing mandatory key")
    v = {k: _coerce(k, doc[k]) for k in doc}
    for k, (default, _) in OPTIONAL.items():
        v.setdefault(k, default)
    if output_dir is not None:
        v["output_dir"] = output_dir
    if v["theorem"] not in THEOREMS:
        raise ConfigError("theorem", f"must be one of {THEOREMS}")

    def build(cls, keys, key_of_error=None):
        try:
            return cls(**{k: v[k] for k in keys})
        except ValueError as exc:
            msg = str(exc)
            key = next((k for k in keys if msg.startswith(k)), key_of_error or keys[0])
            raise ConfigError(key, msg) from None

    model = build(ModelParams, ["epsilon", "kappa", "d", "gamma", "h"])
    solver_cfg = build(SolverConfig, ["t_end", "dt", "picard_damping", "picard_tol", "picard_max_iter",
                                      "mode", "external_force", "drag_spacing"])
    quad = build(QuadratureConfig, ["n_xi1", "n_xperp", "n_xiperp", "n_xihat", "window_padding",
                                    "tol_tangent", "n_max"])
    if v["seed"] < 0:
        raise ConfigError("seed", "must be nonnegative")
    return RunConfig(model, solver_cfg, quad, Path(v["output_dir"]), v["emit_plot_data"], v["seed"],
                     v["fit_window"], v["theorem"])


def parse_config(text: str, output_dir: str | None = None) -> RunConfig:
    """Validate a flat JSON document into a :class:`RunConfig`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    return config_from_dict(doc, output_dir)


# ---------------------------------------------------------------- outputs

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return obj


def write_series(path: Path, result: SimulationResult) -> None:
    cols = result.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "V", "D", "r_plus", "r_minus"])
        for row in zip(*cols):
            w.writerow([f"{x:.16e}" for x in row])


def write_plot(path: Path, result: SimulationResult) -> None:
    """gnuplot layout: one two-column block per quantity, separated by two blank lines."""
    t, *rest = result.columns()
    with open(path, "w", newline="\n") as fh:
        for i, (name, col) in enumerate(zip(("V", "D", "r_plus", "r_minus"), rest)):
            if i:
                fh.write("\n\n")
            fh.write(f"# {name}\n")
            for a, b in zip(t, col):
                fh.write(f"{a:.16e} {b:.16e}\n")


def pick_theorem(cfg: RunConfig) -> str:
    if cfg.theorem != "auto":
        return cfg.theorem
    m = cfg.model
    if cfg.solver.external_force > 0:
        return "none"
    if not m.free_molecular and m.epsilon >= 2 * m.kappa * drag_constants(m.d, max(m.gamma, 1e-300)).C0:
        return "thm2"
    return "thm1"


def summarize(cfg: RunConfig, result: SimulationResult) -> dict:
    t, V = result.times, result.V
    fits = {}
    for mode in analysis.MODES:
        try:
            fits[mode] = analysis.fit_rate((t, V), mode, cfg.fit_window).as_dict()
        except (analysis.FitError, ValueError) as exc:
            fits[mode] = {"error": str(exc)}
    which = pick_theorem(cfg)
    report = None if which == "none" else analysis.theorem_check(result, cfg.model, which, cfg.fit_window)
    out = {
        "version": __version__,
        "config": cfg.resolved(),
        "convergence": {"converged": result.converged, "iterations": result.iterations,
                        "residual": result.residual, "residuals": list(result.residuals)},
        "stats": result.stats.as_dict(),
        "fits": fits,
        "sign_change": analysis.detect_sign_change((t, V)),
        "theorem_check": report,
    }
    E = cfg.solver.external_force
    if E > 0:
        v_inf = terminal_velocity(cfg.model.d, E)
        tv = {"V_inf": v_inf, "final_gap": float(V[-1] - v_inf)}
        try:
            tv["approach_fit"] = analysis.approach_fit((t, V), v_inf).as_dict()
        except (analysis.FitError, ValueError) as exc:
            tv["approach_fit"] = {"error": str(exc)}
        out["terminal_velocity"] = tv
    return _clean(out)


def run(cfg: RunConfig, log=print) -> int:
    """Execute one configured run and write its outputs; returns the exit status."""
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        probe = cfg.output_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        log(f"error: output directory {cfg.output_dir} is not writable: {exc}")
        return EXIT_USAGE
    try:
        result = solve(cfg.model, cfg.quadrature, cfg.solver)
    except (SolverError, DragError) as exc:
        log(f"error: {exc}")
        return EXIT_FAIL
    summary = summarize(cfg, result)
    write_series(cfg.output_dir / "series.csv", result)
    with open(cfg.output_dir / "summary.json", "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if cfg.emit_plot_data:
        write_plot(cfg.output_dir / "plot.dat", result)
    state = "converged" if result.converged else "NOT converged"
    log(f"{state} after {result.iterations} iteration(s), residual {result.residual:.3e}; "
        f"outputs in {cfg.output_dir}")
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def sweep(base: dict, param: str, values, output_dir: str | None = None, log=print) -> int:
    """Run the family ``base[param] = v`` and aggregate the fits into ``sweep.csv``."""
    if param not in KINDS:
        raise ConfigError(param, "unknown key")
    root = Path(output_dir or base.get("output_dir", OPTIONAL["output_dir"][0]))
    rows = []
    status = EXIT_OK
    for raw in values:
        doc = dict(base)
        doc[param] = raw
        doc["output_dir"] = str(root / f"{param}={raw}")
        cfg = config_from_dict(doc)
        code = run(cfg, log)
        status = max(status, code)
        if code != EXIT_OK:
            rows.append([str(raw)] + [""] * 8)
            continue
        s = json.loads((cfg.output_dir / "summary.json").read_text())
        fa, fe = s["fits"]["algebraic"], s["fits"]["exponential"]
        tc = s["theorem_check"]
        rows.append([str(raw), s["convergence"]["converged"], s["convergence"]["iterations"],
                     s["sign_change"] if s["sign_change"] is not None else "",
                     fa.get("rate", ""), fa.get("r_squared", ""), fe.get("rate", ""), fe.get("r_squared", ""),
                     "" if tc is None else tc["pass"]])
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([param, "converged", "iterations", "sign_change", "algebraic_rate", "algebraic_r2",
                    "exponential_rate", "exponential_r2", "theorem_pass"])
        for r in rows:
            w.writerow([f"{x:.16e}" if isinstance(x, float) else x for x in r])
    log(f"sweep written to {root / 'sweep.csv'}")
    return status


def _set_threads() -> None:
    raw = os.environ.get("LORENTZ_DRAG_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("LORENTZ_DRAG_THREADS", f"expected an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("LORENTZ_DRAG_THREADS", "must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorentz-drag", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("config", help="flat JSON config file")
    p.add_argument("--output-dir", help="override output_dir")
    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=["model", "characteristics", "drag", "solver", "all"])
    p = sub.add_parser("sweep", help="run a family of configurations")
    p.add_argument("config", help="flat JSON base config file")
    p.add_argument("--param", required=True, help="config key to vary")
    p.add_argument("--values", required=True, nargs="+",
                   help="values (space- or comma-separated JSON scalars)")
    p.add_argument("--output-dir", help="override output_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    err = lambda msg: print(msg, file=sys.stderr)
    try:
        _set_threads()
        if args.command == "verify":
            from .verify import run_suite

            return EXIT_OK if run_suite(args.suite) else EXIT_FAIL
        text = Path(args.config).read_text(encoding="utf-8")
        if args.command == "simulate":
            return run(parse_config(text, args.output_dir))
        values = [_parse_value(x) for v in args.values for x in v.split(",") if x != ""]
        base = json.loads(text)
        config_from_dict(base)  # validate the base before running anything
        return sweep(base, args.param, values, args.output_dir)
    except ConfigError as exc:
        err(f"config error: {exc}")
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        err(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
