"""Command-line front end.

Subcommands::

    stagger estimate   --input panel.csv --estimator twfe --leads 3 --lags 5 --output out/est
    stagger compare    --input panel.csv --leads 3 --lags 5 --output out/cmp
    stagger theory     --grid-num 10 --output theory.csv
    stagger simulate   --scenario homogeneous --seed 1 --output out/panel
    stagger montecarlo --scenario heterogeneous --reps 500 --estimator twfe,as,tw --output out/mc

Every subcommand accepts ``--dump-config`` (print the resolved configuration
as JSON and exit) and ``--config FILE`` (load such a JSON file; explicit flags
still win).  Outputs are written to a temporary file and renamed into place,
so a failed run leaves no partial files.

Exit codes: 0 success, 1 other failure, 2 schema or configuration errors,
3 estimation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import as_interaction_weighted, compare_estimators, tw_split_sample, twfe_event_study
from .exceptions import (
    ConvergenceError,
    DesignError,
    EstimationError,
    MonteCarloError,
    OutOfRegionError,
    SchemaError,
    StaggerError,
)
from .hotelling import THRESHOLD, theory_sweep
from .panel import FE_DIMENSIONS, EventTimeDesign, FixedEffectSpec, panel_to_csv, read_panel_csv
from .simgen import ESTIMATORS, SCENARIOS, DgpSpec, generate_panel, monte_carlo, scenario

DEFAULT_SEED = 20240101

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_SCHEMA = 2
EXIT_ESTIMATION = 3

# Keys that control the run itself rather than describe it.
_META = {"config", "dump_config", "func"}


class _ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON configuration (as printed by --dump-config)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration as JSON and exit")
    p.add_argument("--output", metavar="PREFIX", help="output path prefix; a trailing '/' writes into that directory")


def _add_columns(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", metavar="CSV", help="panel CSV file")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--time-col", default="time")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--adoption-col", default="adoption", help="adoption period; empty for never-treated units")
    p.add_argument("--cluster-col", default="cluster", help="falls back to the unit column when absent")
    p.add_argument("--group-col", default="group", help="group column for group-by-time fixed effects")
    p.add_argument("--controls", type=_str_list, default=[], help="comma-separated covariate columns")


def _add_design(p: argparse.ArgumentParser, leads: int = 3, lags: int = 5) -> None:
    p.add_argument("--leads", type=int, default=leads, help="number of pre-adoption periods K")
    p.add_argument("--lags", type=int, default=lags, help="number of post-adoption periods L")
    p.add_argument("--omit", type=_int_list, default=[-1], help="omitted relative periods (default -1)")
    p.add_argument("--endpoint-policy", choices=("drop_outside", "bin_endpoints"), default="drop_outside")
    p.add_argument("--level", type=float, default=None, help="confidence level")


def _add_fe(p: argparse.ArgumentParser, default: list[str]) -> None:
    p.add_argument(
        "--fe",
        type=_str_list,
        default=default,
        help=f"comma-separated fixed effects from {', '.join(FE_DIMENSIONS)} (default {','.join(default)})",
    )
    p.add_argument("--trends", action="store_true", help="add unit-specific linear trends")
    p.add_argument("--cluster-on", choices=("cluster", "unit", "group"), default="cluster")


def _add_dgp(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=SCENARIOS, default="homogeneous")
    p.add_argument("--spec", metavar="JSON", help="DGP specification file; overrides --scenario")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"master seed (default {DEFAULT_SEED})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagger", description="Event-study estimation for staggered adoption.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("estimate", help="estimate dynamic effects with one estimator")
    _add_common(p)
    _add_columns(p)
    _add_design(p)
    _add_fe(p, ["unit", "time"])
    p.add_argument("--estimator", choices=ESTIMATORS, default="twfe")
    p.add_argument("--tw-per-tau", action="store_true", help="split-sample regressions per event time")
    p.add_argument("--normal", action="store_true", help="normal instead of t(G-1) critical values")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", help="run all three estimators side by side")
    _add_common(p)
    _add_columns(p)
    _add_design(p)
    _add_fe(p, ["unit", "time"])
    p.add_argument("--tw-per-tau", action="store_true", help="split-sample regressions per event time")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("theory", help="equilibrium sweep of the competition model")
    _add_common(p)
    p.add_argument("--grid-start", type=float, default=0.0)
    p.add_argument("--grid-stop", type=float, default=THRESHOLD)
    p.add_argument("--grid-num", type=int, default=10)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="draw one synthetic panel")
    _add_common(p)
    _add_dgp(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="Monte Carlo bias and coverage study")
    _add_common(p)
    _add_dgp(p)
    _add_design(p)
    _add_fe(p, ["unit", "time", "group_time"])
    p.add_argument(
        "--estimator", type=_str_list, default=list(ESTIMATORS), help="comma-separated subset of twfe,as,tw"
    )
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def _explicit_dests(parser: argparse.ArgumentParser, sub: str, argv: list[str]) -> set[str]:
    """Destinations given explicitly on the command line."""
    subparser = parser._subparsers._group_actions[0].choices[sub]  # noqa: SLF001
    given = set()
    for action in subparser._actions:  # noqa: SLF001
        if any(a == opt or a.startswith(opt + "=") for a in argv for opt in action.option_strings):
            given.add(action.dest)
    return given


def parse_config(argv: list[str] | None = None) -> dict:
    """Parse ``argv`` into a plain configuration dictionary.

    Values from ``--config`` replace defaults; explicit flags replace both.
    Unknown keys or a subcommand mismatch raise :class:`_ConfigError`.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = {k: v for k, v in vars(ns).items() if k not in _META}
    if ns.config:
        try:
            loaded = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise _ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise _ConfigError("config file must hold a JSON object")
        if loaded.get("subcommand", ns.subcommand) != ns.subcommand:
            raise _ConfigError(f"config is for '{loaded['subcommand']}', not '{ns.subcommand}'")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise _ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        explicit = _explicit_dests(parser, ns.subcommand, argv)
        for k, v in loaded.items():
            if k not in explicit:
                cfg[k] = v
    cfg["_func"] = ns.func
    cfg["_dump"] = ns.dump_config
    return cfg


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _validate(cfg: dict) -> None:
    level = cfg.get("level")
    if level is not None and not 0 < level < 1:
        raise _ConfigError(f"--level must lie in (0, 1), got {level}")
    for key in ("leads", "lags"):
        if key in cfg and cfg[key] < 0:
            raise _ConfigError(f"--{key} must be non-negative")
    if "fe" in cfg:
        bad = [d for d in cfg["fe"] if d not in FE_DIMENSIONS]
        if bad:
            raise _ConfigError(f"unknown fixed effect(s) {bad}; expected {', '.join(FE_DIMENSIONS)}")
    if cfg["subcommand"] == "montecarlo":
        bad = [e for e in cfg["estimator"] if e not in ESTIMATORS]
        if bad or not cfg["estimator"]:
            raise _ConfigError(f"--estimator must list names from {', '.join(ESTIMATORS)}")
        if cfg["reps"] < 2:
            raise _ConfigError("--reps must be at least 2")
        if cfg["threads"] < 1:
            raise _ConfigError("--threads must be at least 1")
    if cfg["subcommand"] in ("estimate", "compare") and not cfg.get("input"):
        raise _ConfigError("--input is required")
    if cfg["subcommand"] == "theory" and cfg["grid_num"] < 1:
        raise _ConfigError("--grid-num must be positive")


def _output_path(cfg: dict, suffix: str) -> Path:
    prefix = cfg["output"]
    if prefix.endswith(("/", os.sep)) or Path(prefix).is_dir():
        return Path(prefix) / (cfg["subcommand"] + suffix)
    return Path(prefix + suffix)


def _write_all(files: dict[Path, str]) -> None:
    """Write every file to a temporary sibling, then rename them all into place."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _design(cfg: dict) -> EventTimeDesign:
    return EventTimeDesign(
        leads=cfg["leads"], lags=cfg["lags"], omitted=frozenset(cfg["omit"]), endpoint_policy=cfg["endpoint_policy"]
    )


def _fe(cfg: dict) -> FixedEffectSpec:
    return FixedEffectSpec(tuple(cfg["fe"]), unit_linear_trends=cfg["trends"])


def _panel(cfg: dict):
    return read_panel_csv(
        cfg["input"],
        unit=cfg["unit_col"],
        time=cfg["time_col"],
        outcome=cfg["outcome_col"],
        adoption=cfg["adoption_col"],
        cluster=cfg["cluster_col"],
        group=cfg["group_col"],
        covariates=cfg["controls"],
    )


def _spec(cfg: dict) -> DgpSpec:
    if cfg.get("spec"):
        try:
            spec = DgpSpec.from_json(cfg["spec"])
        except (OSError, ValueError, TypeError, KeyError, StaggerError) as exc:
            raise SchemaError(f"invalid spec file {cfg['spec']}: {exc}") from exc
    else:
        spec = scenario(cfg["scenario"])
    return replace(spec, seed=cfg["seed"])


def cmd_estimate(cfg: dict) -> dict[Path, str]:
    panel = _panel(cfg)
    design = _design(cfg)
    level = 0.95 if cfg["level"] is None else cfg["level"]
    est = cfg["estimator"]
    if est == "twfe":
        table = twfe_event_study(
            panel, design, _fe(cfg), controls=cfg["controls"], cluster_on=cfg["cluster_on"], level=level, normal=cfg["normal"]
        )
    elif est == "as":
        table = as_interaction_weighted(
            panel, design, _fe(cfg), cluster_on=cfg["cluster_on"], level=level, normal=cfg["normal"]
        )
    else:
        table = tw_split_sample(
            panel,
            design.leads,
            design.lags,
            per_tau=cfg["tw_per_tau"],
            cluster_on=cfg["cluster_on"],
            level=level,
            normal=cfg["normal"],
        )
    print(table.summary())
    if not cfg.get("output"):
        return {}
    return {_output_path(cfg, ".csv"): table.to_csv(), _output_path(cfg, ".json"): table.to_json()}


def cmd_compare(cfg: dict) -> dict[Path, str]:
    panel = _panel(cfg)
    level = 0.95 if cfg["level"] is None else cfg["level"]
    cmp = compare_estimators(
        panel, _design(cfg), _fe(cfg), cluster_on=cfg["cluster_on"], level=level, tw_per_tau=cfg["tw_per_tau"]
    )
    print(cmp.summary())
    if not cfg.get("output"):
        return {}
    payload = {name: t.to_dict() for name, t in cmp.tables.items()}
    return {
        _output_path(cfg, ".csv"): cmp.to_csv(),
        _output_path(cfg, ".json"): json.dumps(payload, indent=2, sort_keys=True) + "\n",
    }


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def theory_csv(betas) -> str:
    fields = ("beta", "a_c", "b_c", "f_c", "delta_f", "kind")
    lines = [",".join(fields)]
    for row in theory_sweep(betas):
        lines.append(",".join([_cell(row[f]) for f in fields[:-1]] + [row["kind"]]))
    return "\n".join(lines) + "\n"


def cmd_theory(cfg: dict) -> dict[Path, str]:
    if cfg["grid_stop"] > THRESHOLD or cfg["grid_start"] < 0:
        raise OutOfRegionError(f"grid must lie in [0, {THRESHOLD}]")
    betas = np.linspace(cfg["grid_start"], cfg["grid_stop"], cfg["grid_num"])
    text = theory_csv(betas)
    if not cfg.get("output"):
        sys.stdout.write(text)
        return {}
    print(f"{cfg['grid_num']} grid points plus monopoly and threshold rows")
    suffix = "" if cfg["output"].endswith(".csv") else ".csv"
    return {_output_path(cfg, suffix): text}


def cmd_simulate(cfg: dict) -> dict[Path, str]:
    spec = _spec(cfg)
    panel, truth = generate_panel(spec)
    print(f"simulated {panel.n_units} units x {spec.n_periods} periods (seed {spec.seed})")
    if not cfg.get("output"):
        sys.stdout.write(panel_to_csv(panel))
        return {}
    return {
        _output_path(cfg, ".csv"): panel_to_csv(panel),
        _output_path(cfg, ".spec.json"): spec.to_json(),
    }


def cmd_montecarlo(cfg: dict) -> dict[Path, str]:
    spec = _spec(cfg)
    level = 0.90 if cfg["level"] is None else cfg["level"]
    report = monte_carlo(
        spec,
        tuple(cfg["estimator"]),
        reps=cfg["reps"],
        design=_design(cfg),
        fe=_fe(cfg),
        level=level,
        n_jobs=cfg["threads"],
    )
    print(f"{'estimator':>9} {'tau':>4} {'bias':>10} {'mc_se':>9} {'coverage':>8}")
    for r in report.rows():
        print(f"{r['estimator']:>9} {r['tau']:>4} {r['bias']:>10.5f} {r['mc_se']:>9.5f} {r['coverage']:>8.3f}")
    if not cfg.get("output"):
        return {}
    return {_output_path(cfg, ".csv"): report.to_csv(), _output_path(cfg, ".json"): report.to_json()}


def main(argv: list[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
        _validate(cfg)
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SystemExit as exc:  # argparse: --help, --version, bad flags
        return int(exc.code or 0) and EXIT_SCHEMA
    if cfg["_dump"]:
        sys.stdout.write(json.dumps(_public(cfg), indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    try:
        files = cfg["_func"](cfg)
        _write_all(files)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (DesignError, OutOfRegionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (EstimationError, ConvergenceError, MonteCarloError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except StaggerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for path in files:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
