"""Batch command-line front end.

Subcommands: ``eigenpair``, ``value``, ``riccati``, ``sensitivities``,
``diagnose``, ``simulate``, ``verify``.  Every subcommand reads a JSON config
(one model block, a preferences block, optional sim/sweep/output blocks) and
emits machine-readable JSON or CSV with all floats printed at 17 significant
digits so runs are diffable.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import coefficients as coeff
from . import sensitivities as sens
from . import simulation as sim
from . import valuation
from .eigenpairs import eigenpair, ergodic_residual, residual_grid
from .models import (
    MODEL_KINDS,
    OU_COMPLETE,
    ConfigError,
    Model,
    UnsupportedModelError,
    ValidationError,
    initial_state,
    load_config,
    model_from_config,
    sensitivity_parameters,
)

_TOP_KEYS = MODEL_KINDS + ("preferences", "sim", "sweep", "output")
_SIM_KEYS = ("T", "n_steps", "n_paths", "seed", "scheme")
_SWEEP_KEYS = ("parameter", "values", "T_grid")
_OUTPUT_KEYS = ("path", "format")

VERIFY_T_VALUES = (1.0, 5.0, 10.0)
TWO_ROUTE_T = 2.0
DIAG_T = 50.0


@dataclass(frozen=True)
class RunConfig:
    model: Model
    sim: sim.SimConfig | None
    sweep_parameter: str | None
    sweep_values: list[float] | None
    sweep_T_grid: list[float] | None
    out_path: str | None
    out_format: str


def parse_run_config(cfg: dict) -> RunConfig:
    unknown = sorted(set(cfg) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' in config")
    model = model_from_config(cfg)
    sim_cfg = None
    if "sim" in cfg:
        block = cfg["sim"]
        if not isinstance(block, dict):
            raise ConfigError("sim block must be an object")
        bad = sorted(set(block) - set(_SIM_KEYS))
        if bad:
            raise ConfigError(f"unknown key '{bad[0]}' in sim block")
        missing = [k for k in ("T", "n_steps", "n_paths", "seed") if k not in block]
        if missing:
            raise ConfigError(f"missing key '{missing[0]}' in sim block")
        try:
            sim_cfg = sim.SimConfig(
                T=float(block["T"]),
                n_steps=int(block["n_steps"]),
                n_paths=int(block["n_paths"]),
                seed=int(block["seed"]),
                scheme=block.get("scheme", _default_scheme(model)),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid sim block: {exc}") from exc
    sweep_parameter = sweep_values = sweep_T = None
    if "sweep" in cfg:
        block = cfg["sweep"]
        if not isinstance(block, dict):
            raise ConfigError("sweep block must be an object")
        bad = sorted(set(block) - set(_SWEEP_KEYS))
        if bad:
            raise ConfigError(f"unknown key '{bad[0]}' in sweep block")
        sweep_parameter = block.get("parameter")
        if sweep_parameter is not None:
            valid = sensitivity_parameters(model.kind) + ["chi", "s0"]
            if sweep_parameter not in valid:
                raise ConfigError(
                    f"sweep parameter '{sweep_parameter}' does not exist for "
                    f"{model.kind}"
                )
        if "values" in block:
            sweep_values = [float(v) for v in block["values"]]
        if "T_grid" in block:
            sweep_T = [float(v) for v in block["T_grid"]]
    out_path = None
    out_format = "json"
    if "output" in cfg:
        block = cfg["output"]
        if not isinstance(block, dict):
            raise ConfigError("output block must be an object")
        bad = sorted(set(block) - set(_OUTPUT_KEYS))
        if bad:
            raise ConfigError(f"unknown key '{bad[0]}' in output block")
        out_path = block.get("path")
        out_format = block.get("format", "json")
        if out_format not in ("json", "csv"):
            raise ConfigError("output format must be 'json' or 'csv'")
    return RunConfig(model=model, sim=sim_cfg, sweep_parameter=sweep_parameter,
                     sweep_values=sweep_values, sweep_T_grid=sweep_T,
                     out_path=out_path, out_format=out_format)


def _default_scheme(model: Model) -> str:
    return "full_truncation_euler" if model.kind == "heston" else "exact_gaussian"


# --- deterministic serialization ----------------------------------------------

def format_float(x: float) -> str:
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return "null"
    return format(float(x), ".17g")


def to_json(obj, indent: int = 0) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  "{k}": {to_json(v, indent + 2)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = ",\n".join(f"{pad}  {to_json(v, indent + 2)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        import json as _json

        return _json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def to_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(
            [format_float(v) if isinstance(v, (float, np.floating)) else v
             for v in row]
        )
    return buf.getvalue()


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


# --- subcommands ----------------------------------------------------------------

def cmd_eigenpair(rc: RunConfig, workers: int | None) -> int:
    ep = eigenpair(rc.model)
    _emit(to_json(ep.as_dict(rc.model)), rc.out_path)
    return 0


def _require_sim(rc: RunConfig) -> sim.SimConfig:
    if rc.sim is None:
        raise ConfigError("this subcommand needs a sim block in the config")
    return rc.sim


def cmd_value(rc: RunConfig, workers: int | None) -> int:
    model = rc.model
    chi = initial_state(model)
    lam = eigenpair(model).lam
    horizons = rc.sweep_T_grid or [_require_sim(rc).T]
    rows = []
    for T in horizons:
        if model.kind == OU_COMPLETE:
            cfg = _require_sim(rc).with_(T=T)
            v, se = sim.simulate_phat_value(model, None, T, cfg, workers)
            growth = None if T == 0 else -math.log(v) / T
            rows.append({"T": T, "v": v, "utility": v ** (1 - model.p) / model.p,
                         "growth_rate_estimate": growth, "mc_se": se})
        else:
            res = valuation.dual_value(model, chi, T)
            rows.append({"T": T, **res.as_dict()})
    if rc.out_format == "csv":
        header = sorted(rows[0].keys())
        table = [header] + [[r[k] for k in header] for r in rows]
        _emit(to_csv(table), rc.out_path)
    elif len(rows) == 1:
        payload = {"model": model.kind, "chi": chi, **rows[0], "lambda": lam}
        _emit(to_json(payload), rc.out_path)
    else:
        _emit(to_json({"model": model.kind, "chi": chi, "lambda": lam,
                       "rows": rows}), rc.out_path)
    return 0


def _riccati_grid(rc: RunConfig) -> np.ndarray:
    if rc.sweep_T_grid:
        grid = [0.0] + [t for t in rc.sweep_T_grid if t > 0.0]
        return np.asarray(grid)
    return np.linspace(0.0, 50.0, 501)


def cmd_riccati(rc: RunConfig, workers: int | None) -> int:
    model = rc.model
    if model.kind == OU_COMPLETE:
        raise ConfigError("riccati needs a factor model (kim_omberg or heston)")
    grid = _riccati_grid(rc)
    closed = coeff.build_path(model, grid)
    oracle = coeff.riccati_oracle(model, grid)
    sup = float(np.max(np.abs(closed.beta - oracle.beta)))
    sup = max(sup, float(np.max(np.abs(closed.gamma - oracle.gamma))))
    if closed.Lambda is not None:
        sup = max(sup, float(np.max(np.abs(closed.Lambda - oracle.Lambda))))
    if rc.out_format == "csv":
        _emit(to_csv(closed.to_csv_rows()), rc.out_path)
    else:
        payload = {
            "model": model.kind,
            "grid": list(grid),
            "beta": list(closed.beta),
            "gamma": list(closed.gamma),
            "Lambda": None if closed.Lambda is None else list(closed.Lambda),
            "oracle_max_abs_diff": sup,
        }
        _emit(to_json(payload), rc.out_path)
    return 0


def cmd_sensitivities(rc: RunConfig, workers: int | None) -> int:
    report = sens.long_term_sensitivities(rc.model)
    if rc.out_format == "csv":
        _emit(to_csv(report.to_csv_rows()), rc.out_path)
    else:
        _emit(to_json(report.as_dict()), rc.out_path)
    flagged = report.flagged_parameters()
    if flagged:
        print(f"FLAGGED formulas disagree with the FD oracle: {flagged}",
              file=sys.stderr)
        return 1
    return 0


def cmd_diagnose(rc: RunConfig, workers: int | None) -> int:
    if rc.sweep_parameter is None or not rc.sweep_T_grid:
        raise ConfigError("diagnose needs sweep.parameter and sweep.T_grid")
    rows = sens.convergence_diagnostic(rc.model, rc.sweep_parameter,
                                       rc.sweep_T_grid, sim_config=rc.sim)
    if rc.out_format == "csv":
        table = [["T", "value", "limit", "gap"]]
        table += [[r.T, r.value, r.limit, r.gap] for r in rows]
        _emit(to_csv(table), rc.out_path)
    else:
        _emit(to_json({"model": rc.model.kind, "parameter": rc.sweep_parameter,
                       "rows": [r.as_dict() for r in rows]}), rc.out_path)
    return 0


def cmd_simulate(rc: RunConfig, workers: int | None) -> int:
    model = rc.model
    cfg = _require_sim(rc)
    chi = initial_state(model)
    horizons = rc.sweep_T_grid or [cfg.T]
    if model.kind == OU_COMPLETE:
        rows = []
        for T in horizons:
            v, se = sim.simulate_phat_value(model, None, T, cfg.with_(T=T), workers)
            growth = None if T == 0 else -math.log(v) / T
            rows.append({"T": T, "v_estimate": v, "mc_se": se,
                         "growth_rate_estimate": growth})
        payload = {"model": model.kind, "chi": chi, "seed": cfg.seed, "rows": rows}
        if rc.out_format == "csv":
            header = ["T", "v_estimate", "mc_se", "growth_rate_estimate", "seed"]
            _emit(to_csv([header] + [[r[k] for k in header[:-1]] + [cfg.seed]
                                     for r in rows]), rc.out_path)
        else:
            _emit(to_json(payload), rc.out_path)
        return 0
    results = [sim.decomposition_check(model, chi, T, cfg, workers)
               for T in horizons]
    ok = all(r.passed for r in results)
    if rc.out_format == "csv":
        header = ["T", "v_closed", "skeleton", "mc_error_term", "mc_se",
                  "ratio_gap", "passed", "seed"]
        table = [header]
        for T, r in zip(horizons, results):
            table.append([T, r.v_closed, r.skeleton, r.mc_error_term, r.mc_se,
                          r.ratio_gap, r.passed, r.seed])
        _emit(to_csv(table), rc.out_path)
    else:
        payload = {"model": model.kind, "chi": chi, "seed": cfg.seed,
                   "results": [{"T": T, **r.as_dict()}
                               for T, r in zip(horizons, results)]}
        _emit(to_json(payload), rc.out_path)
    return 0 if ok else 1


# --- verify ----------------------------------------------------------------------

def _check(name: str, passed: bool, details: dict) -> dict:
    return {"name": name, "passed": bool(passed), "details": details}


def _verify_checks(model: Model, cfg: sim.SimConfig,
                   workers: int | None) -> list[dict]:
    ep = eigenpair(model)
    chi = initial_state(model)
    checks = []

    grid = residual_grid(model)
    max_r = max(abs(ergodic_residual(model, ep, x)) for x in grid)
    checks.append(_check("eigenpair_residual_grid", max_r < 1e-8,
                         {"max_abs_residual": max_r, "n_points": int(grid.size)}))

    if model.kind != OU_COMPLETE:
        grid50 = np.linspace(0.0, 50.0, 501)
        closed = coeff.build_path(model, grid50)
        oracle = coeff.riccati_oracle(model, grid50)
        sup = float(np.max(np.abs(closed.beta - oracle.beta)))
        sup = max(sup, float(np.max(np.abs(closed.gamma - oracle.gamma))))
        if closed.Lambda is not None:
            sup = max(sup, float(np.max(np.abs(closed.Lambda - oracle.Lambda))))
        checks.append(_check("riccati_oracle_agreement", sup < 1e-6,
                             {"sup_abs_diff": sup}))

        res0 = valuation.dual_value(model, chi, 0.0)
        t0_ok = res0.v == 1.0 and res0.utility == 1.0 / model.p
        b0, g0, _ = valuation.coefficients_at(model, 0.0)
        t0_ok = t0_ok and b0 == 0.0 and g0 == 0.0
        checks.append(_check("t0_identities", t0_ok,
                             {"v": res0.v, "utility": res0.utility}))

        deco_details = []
        deco_ok = True
        for T in VERIFY_T_VALUES:
            r = sim.decomposition_check(model, chi, T, cfg, workers)
            deco_ok = deco_ok and r.passed
            deco_details.append({"T": T, "ratio_gap": r.ratio_gap,
                                 "mc_se": r.mc_se, "passed": r.passed})
        checks.append(_check("decomposition_identity", deco_ok,
                             {"runs": deco_details}))

        v_hat, se = sim.simulate_phat_value(model, chi, TWO_ROUTE_T,
                                            cfg.with_(T=TWO_ROUTE_T), workers)
        v_closed = valuation.dual_value(model, chi, TWO_ROUTE_T).v
        two_ok = abs(v_hat - v_closed) < 3.0 * se
        checks.append(_check("two_route_value", two_ok,
                             {"T": TWO_ROUTE_T, "mc": v_hat, "closed": v_closed,
                              "mc_se": se}))
    else:
        v0, se0 = sim.simulate_phat_value(model, None, 0.0, cfg.with_(T=0.0),
                                          workers)
        checks.append(_check("t0_identities", v0 == 1.0 and se0 == 0.0,
                             {"v": v0, "mc_se": se0}))

    report = sens.long_term_sensitivities(model)
    flagged = report.flagged_parameters()
    checks.append(_check(
        "sensitivity_formula_audit", not flagged,
        {"flagged": flagged,
         "rows": [e.as_dict() for e in report.entries]}))

    if model.kind != OU_COMPLETE:
        g50 = valuation.dual_value(model, chi, DIAG_T).growth_rate_estimate
        lam = ep.lam
        growth_ok = abs(g50 - lam) <= 0.05 * max(abs(lam), 1e-8)
        row = sens.convergence_diagnostic(model, "m_bar", [DIAG_T])[0]
        diag_ok = row.gap <= 0.05 * max(abs(row.limit), 1e-8)
        checks.append(_check(
            "convergence_diagnostics", growth_ok and diag_ok,
            {"T": DIAG_T, "growth_rate": g50, "lambda": lam,
             "m_bar_value": row.value, "m_bar_limit": row.limit}))
    return checks


def cmd_verify(rc: RunConfig, workers: int | None) -> int:
    cfg = _require_sim(rc)
    checks = _verify_checks(rc.model, cfg, workers)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    all_pass = all(c["passed"] for c in checks)
    payload = {"model": rc.model.kind, "seed": cfg.seed, "checks": checks,
               "all_pass": all_pass}
    if rc.out_path:
        _emit(to_json(payload), rc.out_path)
    return 0 if all_pass else 1


_COMMANDS = {
    "eigenpair": cmd_eigenpair,
    "value": cmd_value,
    "riccati": cmd_riccati,
    "sensitivities": cmd_sensitivities,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="utilsens",
        description="Long-horizon optimal-utility values, eigenpairs and "
                    "sensitivities for three closed-form factor models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--out", default=None, help="output file (default stdout)")
        p.add_argument("--format", default=None, choices=["json", "csv"])
        p.add_argument("--seed", default=None, type=int,
                       help="override the sim seed")
        p.add_argument("--workers", default=None, type=int,
                       help="path-simulation worker threads")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        rc = parse_run_config(cfg)
        if args.format:
            rc = replace(rc, out_format=args.format)
        if args.out:
            rc = replace(rc, out_path=args.out)
        if args.seed is not None:
            if rc.sim is None:
                raise ConfigError("--seed given but the config has no sim block")
            rc = replace(rc, sim=rc.sim.with_(seed=args.seed))
        return _COMMANDS[args.command](rc, args.workers)
    except (ConfigError, ValidationError, UnsupportedModelError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
