"""Command-line front end.

Usage::

    recursive-hhk COMMAND --config run.json [--set market.w=0.5] [--out DIR]

Commands: ``evaluate``, ``solve-ez``, ``solve``, ``verify``, ``dp``,
``oracle``, ``sweep``.  Results go to ``DIR`` (CSV and JSON) and a JSON
summary to stdout; diagnostics are JSON lines on stderr.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConvergenceError, DomainError, FelicityDomainError, HHKError
from .market import ConsumptionPlan, MarketParams, cumulative

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

COMMANDS = ("evaluate", "solve-ez", "solve", "verify", "dp", "oracle", "sweep")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["market", "preferences"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer"},
        "market": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "r", "beta", "y", "w"],
            "properties": {"T": _num, "r": _num, "beta": _num, "y": _num, "w": _num,
                           "grid_n": {"type": "integer", "minimum": 2}},
        },
        "preferences": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["felicity", "delta", "rho", "alpha"],
                 "properties": {"felicity": {"const": "epstein-zin"}, "delta": _num,
                                "rho": _num, "alpha": _num}},
                {"type": "object", "additionalProperties": False,
                 "required": ["felicity", "exponent", "delta"],
                 "properties": {"felicity": {"const": "time-additive-power"},
                                "exponent": _num, "delta": _num, "scale": _num}},
            ]
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"budget": _num, "phi": _num, "comp": _num},
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"max_picard": _pos_int, "picard_tol": _num},
        },
        "dp": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_t": _pos_int, "n_x": {"type": "integer", "minimum": 2},
                           "n_y": {"type": "integer", "minimum": 2}, "rate_levels": _pos_int,
                           "tol": _num, "n_max": _pos_int,
                           "slice_times": {"type": "array", "items": _num}},
        },
        "oracle": {
            "type": "object", "additionalProperties": False,
            "properties": {"mode": {"enum": ["exhaustive", "ascent", "both"]},
                           "times": {"type": "array", "items": _num, "minItems": 1,
                                     "maxItems": 6},
                           "quanta": _pos_int, "grid_n": {"type": "integer", "minimum": 2},
                           "steps": _pos_int},
        },
        "sweep": {
            "type": "object", "additionalProperties": False, "required": ["grid"],
            "properties": {"grid": {"type": "object",
                                    "additionalProperties": {"type": "array", "items": _num,
                                                             "minItems": 1}}},
        },
        "plan": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}


class ConfigError(Exception):
    pass


def _diag(event: str, **fields) -> None:
    sys.stderr.write(json.dumps({"event": event, **fields}, sort_keys=True,
                                default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default, allow_nan=True)


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not an object")
    node[parts[-1]] = value


def load_config(path: str | None, overrides=()) -> dict:
    """Read, override and schema-validate a run configuration."""
    cfg: dict = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        _apply_set(cfg, item)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return cfg


def _market(cfg) -> MarketParams:
    return MarketParams(**cfg["market"])


def _felicity(cfg):
    from .preferences import felicity_from_config
    try:
        return felicity_from_config(cfg["preferences"])
    except FelicityDomainError as exc:
        raise ConfigError(str(exc)) from exc


def _ez_params(cfg):
    from .preferences import EZParams
    pref = cfg["preferences"]
    if pref["felicity"] != "epstein-zin":
        raise ConfigError("this command needs the epstein-zin felicity")
    return EZParams(pref["delta"], pref["rho"], pref["alpha"])


def _tolerances(cfg):
    from .kkt import Tolerances
    return Tolerances(**cfg.get("tolerances", {}))


def _plan(cfg, params: MarketParams, base: Path) -> ConsumptionPlan:
    spec = cfg.get("plan")
    if spec is None:
        return ConsumptionPlan.empty(params)
    if isinstance(spec, str):
        path = Path(spec) if Path(spec).is_absolute() else base / spec
        try:
            spec = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read plan {path}: {exc}") from exc
    try:
        plan = ConsumptionPlan.from_dict(spec)
    except (DomainError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"invalid plan: {exc}") from exc
    return plan


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([f"{float(v):.17g}" for v in row])


def _plan_rows(plan: ConsumptionPlan, params: MarketParams, sol):
    """(t, rate, C_cum, Y, Phi) on the grid; the rate is the one of the cell starting at t."""
    rate = np.append(plan.rate, 0.0)
    cum = cumulative(plan, sol.times)
    return zip(sol.times, rate, cum, sol.Y.values, sol.phi)


class Runner:
    def __init__(self, cfg: dict, out_dir: Path, base: Path):
        self.cfg = cfg
        self.out = out_dir
        self.base = base
        self.prefix = cfg.get("output", {}).get("prefix", "")

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / f"{self.prefix}{name}"

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(_dump(obj) + "\n")

    # commands --------------------------------------------------------------
    def evaluate(self):
        from .paths import evaluate, write_paths_csv
        params = _market(self.cfg)
        plan = _plan(self.cfg, params, self.base)
        plan.check_grid(params)
        sol = evaluate(plan, _felicity(self.cfg), params)
        write_paths_csv(self.path("paths.csv"), plan, sol)
        return {"command": "evaluate", "U0": sol.U0, "cost": _cost(plan, params)}, EXIT_OK

    def solve_ez(self):
        from .ez import solve_ez
        from .kkt import verify_kkt
        from .paths import evaluate
        from .preferences import ez_felicity
        params, ez = _market(self.cfg), _ez_params(self.cfg)
        sol = solve_ez(params, ez)
        spec = ez_felicity(ez)
        report = verify_kkt(sol.plan, spec, params, _tolerances(self.cfg))
        paths = evaluate(sol.plan, spec, params)
        result = dict(sol.to_dict(), kkt=report.to_dict(with_path=False))
        self.write_json("solution.json", result)
        self.write_json("plan.json", sol.plan.to_dict())
        _write_csv(self.path("solution.csv"), ["t", "rate", "C_cum", "Y", "Phi"],
                   _plan_rows(sol.plan, params, paths))
        _diag("kkt", **report.to_dict(with_path=False))
        summary = {"command": "solve-ez", "case": sol.case, "U0": sol.U0,
                   "kkt_pass": report.ok}
        return summary, EXIT_OK

    def solve(self):
        from .constructor import solve
        from .paths import evaluate
        params, spec = _market(self.cfg), _felicity(self.cfg)
        opts = self.cfg.get("solver", {})
        tri = solve(spec, params, max_n=opts.get("max_picard", 50),
                    tol=opts.get("picard_tol", 1e-10), tolerances=_tolerances(self.cfg))
        for step in tri.history:
            _diag("picard", **step.to_dict())
        self.write_json("solution.json", tri.to_dict())
        self.write_json("plan.json", tri.plan.to_dict())
        paths = evaluate(tri.plan, spec, params)
        _write_csv(self.path("solution.csv"), ["t", "rate", "C_cum", "Y", "Phi"],
                   _plan_rows(tri.plan, params, paths))
        ok = tri.report is None or tri.report.ok
        if tri.report is not None:
            _diag("kkt", **tri.report.to_dict(with_path=False))
        summary = {"command": "solve", "regime": tri.regime, "t0": tri.t0, "t1": tri.t1,
                   "U0": float(tri.U_path.values[0]), "kkt_pass": ok}
        return summary, EXIT_OK

    def verify(self):
        from .kkt import verify_kkt
        params = _market(self.cfg)
        plan = _plan(self.cfg, params, self.base)
        report = verify_kkt(plan, _felicity(self.cfg), params, _tolerances(self.cfg))
        self.write_json("kkt.json", report.to_dict(with_path=True))
        summary = {"command": "verify", "pass": report.ok, "inconclusive": report.inconclusive,
                   **{k: bool(v) for k, v in report.passed.items()}}
        return summary, EXIT_OK if report.ok else EXIT_VERIFY

    def dp(self):
        from .dp import GridSpec, extract_policy_plan, iterate_to_convergence
        from .paths import utility_of
        params, spec = _market(self.cfg), _felicity(self.cfg)
        opts = self.cfg.get("dp", {})
        gs = GridSpec(opts.get("n_t", 50), opts.get("n_x", 40), opts.get("n_y", 40),
                      opts.get("rate_levels", 16))
        hist_path = self.path("dp_history.jsonl")
        with open(hist_path, "w") as fh:
            def record(entry):
                line = json.dumps(entry, sort_keys=True)
                fh.write(line + "\n")
                sys.stderr.write(json.dumps({"event": "dp", **entry}, sort_keys=True) + "\n")
            res = iterate_to_convergence(spec, params, gs, tol=opts.get("tol", 1e-8),
                                         n_max=opts.get("n_max", 60), callback=record)
        grid = res.grid
        from .preferences import ordinal_form
        to_u = ordinal_form(spec).to_utility
        for t in opts.get("slice_times", [0.0]):
            k = int(np.argmin(np.abs(grid.times - t)))
            with np.errstate(divide="ignore", invalid="ignore"):
                rows = [(x, y, to_u(grid.values[k, i, j])) for i, x in enumerate(grid.xs)
                        for j, y in enumerate(grid.ys)]
            _write_csv(self.path(f"dp_slice_t{grid.times[k]:.6g}.csv"), ["x", "y", "U"], rows)
        plan = extract_policy_plan(res)
        refine = max(1, params.grid_n // plan.grid_n)
        fine = params.replace(grid_n=plan.grid_n * refine)
        u_plan = utility_of(plan.refine(refine), spec, fine)
        self.write_json("dp_plan.json", plan.to_dict())
        summary = {"command": "dp", "converged": res.converged, "iterations": len(res.history),
                   "value": res.value_at(params.w, params.y), "rollout_U0": u_plan,
                   "clamped": res.clamped}
        return summary, EXIT_OK if res.converged else EXIT_NUMERIC

    def oracle(self):
        from .oracle import DiscretizedProblem, exhaustive_search, projected_gradient_ascent
        params, spec = _market(self.cfg), _felicity(self.cfg)
        opts = self.cfg.get("oracle", {})
        mode = opts.get("mode", "both")
        candidate = self._candidate_utility(params, spec)
        report = {"command": "oracle", "candidate_U0": candidate}
        if mode in ("exhaustive", "both"):
            times = opts.get("times") or list(np.linspace(0, params.T, 6)[:5])
            res = exhaustive_search(DiscretizedProblem(params, spec, tuple(times),
                                                       opts.get("quanta", 20)))
            report["exhaustive"] = dict(res.to_dict(), gap=candidate - res.utility)
        if mode in ("ascent", "both"):
            seed = self.cfg.get("seed")
            res = projected_gradient_ascent(params, spec, opts.get("grid_n", 100),
                                            steps=opts.get("steps", 300), seed=seed)
            report["ascent"] = dict(res.to_dict(), gap=candidate - res.utility,
                                    relative_gap=(candidate - res.utility) / abs(candidate))
        self.write_json("oracle.json", report)
        summary = {k: v for k, v in report.items()}
        for key in ("exhaustive", "ascent"):
            if key in summary:
                summary[key] = {"utility": summary[key]["utility"], "gap": summary[key]["gap"]}
        return summary, EXIT_OK

    def _candidate_utility(self, params, spec) -> float:
        if self.cfg["preferences"]["felicity"] == "epstein-zin":
            from .ez import solve_ez
            return solve_ez(params, _ez_params(self.cfg)).U0
        from .constructor import solve
        return float(solve(spec, params).U_path.values[0])

    def sweep(self):
        from .ez import solve_ez
        from .kkt import verify_kkt
        from .preferences import EZParams, ez_felicity
        grid = self.cfg.get("sweep", {}).get("grid")
        if not grid:
            raise ConfigError("sweep needs a sweep.grid block")
        keys = sorted(grid)
        for key in keys:
            section, _, name = key.partition(".")
            if section not in ("market", "preferences") or not name:
                raise ConfigError(f"sweep key {key!r} must look like market.x or preferences.x")
        _ez_params(self.cfg)
        rows, failures = [], 0
        for values in itertools.product(*(grid[k] for k in keys)):
            cfg = copy.deepcopy(self.cfg)
            for key, v in zip(keys, values):
                section, _, name = key.partition(".")
                cfg[section][name] = v
            params, ez = _market(cfg), _ez_params(cfg)
            sol = solve_ez(params, ez)
            rep = verify_kkt(sol.plan, ez_felicity(EZParams(ez.delta, ez.rho, ez.alpha)), params,
                             _tolerances(cfg))
            failures += not rep.ok
            case_code = {"gulp": 0, "wait": 1, "immediate": 2}[sol.case]
            rows.append(list(values) + [case_code, sol.tau_bar, sol.k_star, sol.gulp_size,
                                        sol.U0, float(rep.ok)])
        _write_csv(self.path("sweep.csv"),
                   keys + ["case", "tau_bar", "k_star", "gulp", "U0", "kkt_pass"], rows)
        summary = {"command": "sweep", "runs": len(rows), "kkt_failures": failures,
                   "case_codes": {"gulp": 0, "wait": 1, "immediate": 2}}
        return summary, EXIT_OK


def _cost(plan, params):
    from .market import price_functional
    return price_functional(plan, params)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recursive-hhk",
                                     description="Solve, evaluate and audit consumption "
                                                 "plans under recursive utility.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", "-c", help="JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. market.w=0.5 (repeatable)")
    parser.add_argument("--out", "-o", help="output directory (default: output.dir or .)")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
        base = Path(args.config).resolve().parent if args.config else Path.cwd()
        out = Path(args.out or cfg.get("output", {}).get("dir", "."))
        runner = Runner(cfg, out, base)
        handler = getattr(runner, args.command.replace("-", "_"))
        summary, code = handler()
    except ConfigError as exc:
        _diag("config_error", message=str(exc))
        return EXIT_CONFIG
    except (FelicityDomainError, ConvergenceError) as exc:
        _diag("numerical_failure", message=str(exc), type=type(exc).__name__,
              diagnostics=getattr(exc, "diagnostics", None))
        return EXIT_NUMERIC
    except DomainError as exc:
        _diag("config_error", message=str(exc))
        return EXIT_CONFIG
    except HHKError as exc:
        _diag("numerical_failure", message=str(exc), type=type(exc).__name__)
        return EXIT_NUMERIC
    sys.stdout.write(_dump(summary) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
