"""Command-line entry point: train, report, selftest.

Configuration is a flat key/value space. Defaults < config file (one
``key = value`` per line, ``#`` comments) < command-line flags. The
effective configuration is echoed to ``config.echo`` in the run directory,
and that file is itself a valid ``--config`` input, reproducing the run.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from . import harness, selftest
from .envs import ENV_REGISTRY
from .harness import ExperimentConfig, RunRecord, read_metrics_csv
from .optimizers import TrpoConfig, UaTrpoConfig


@dataclass(frozen=True)
class _Opt:
    name: str            # config key / flag name with underscores
    kind: str            # int | float | str | bool | ints | opt_int | opt_float
    default: object
    help: str


_OPTIONS = [
    _Opt("env", "str", None, f"environment: {', '.join(sorted(ENV_REGISTRY))}"),
    _Opt("algo", "str", None, "algorithm: trpo or ua_trpo"),
    _Opt("steps", "int", 50000, "total environment steps per seed"),
    _Opt("batch", "int", 1000, "environment steps per policy update"),
    _Opt("seeds", "int", 20, "number of seeds (0..n-1); overridden by --seed"),
    _Opt("seed", "str", None, "explicit comma-separated seed list"),
    _Opt("eval_episodes", "int", 5, "evaluation episodes per checkpoint"),
    _Opt("adversarial_noise", "bool", False, "perturb gradients against their sign"),
    _Opt("policy_hidden", "ints", (16, 16), "policy hidden layer sizes"),
    _Opt("value_hidden", "ints", (16, 16), "value hidden layer sizes"),
    _Opt("gamma", "opt_float", None, "discount override (default: environment's)"),
    _Opt("gae_lambda", "float", 0.97, "advantage estimation decay"),
    _Opt("vf_step_size", "float", 1e-3, "value-function Adam step size"),
    _Opt("vf_iters", "int", 5, "value-function updates per iteration"),
    _Opt("subsample_factor", "int", 10, "curvature-sample subsampling factor"),
    _Opt("horizon", "opt_int", None, "episode horizon override"),
    _Opt("delta_kl", "float", 0.01, "trust-region radius (trpo)"),
    _Opt("cg_iters", "int", 20, "conjugate gradient iterations"),
    _Opt("cg_damping", "float", 0.1, "conjugate gradient damping"),
    _Opt("backtrack_ratio", "float", 0.5, "line-search shrink factor"),
    _Opt("max_backtracks", "int", 10, "line-search shrink limit"),
    _Opt("delta_ua", "float", 0.03, "trust-region radius (ua_trpo)"),
    _Opt("c", "float", 6e-4, "uncertainty trade-off coefficient"),
    _Opt("alpha", "float", 0.05, "confidence level for the gradient ellipsoid"),
    _Opt("m", "opt_int", None, "random projections (default: min(200, ceil(d/4), d))"),
    _Opt("beta", "float", 0.9, "sketch moving-average weight"),
    _Opt("use_ema", "bool", True, "average sketches across iterations"),
    _Opt("jobs", "int", os.cpu_count() or 1, "parallel seed workers"),
]
_OPT_BY_NAME = {o.name: o for o in _OPTIONS}


def _parse_value(opt: _Opt, text: str):
    text = text.strip()
    if opt.kind in ("opt_int", "opt_float") and text.lower() in ("none", ""):
        return None
    try:
        if opt.kind in ("int", "opt_int"):
            return int(text)
        if opt.kind in ("float", "opt_float"):
            return float(text)
        if opt.kind == "bool":
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if opt.kind == "ints":
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ValueError(f"bad value for {opt.name}: {text!r}") from exc


def _format_value(opt: _Opt, value) -> str:
    if value is None:
        return "none"
    if opt.kind == "bool":
        return "true" if value else "false"
    if opt.kind == "ints":
        return ",".join(str(v) for v in value)
    return str(value)


def load_config_file(path: str) -> dict:
    """Flat ``key = value`` file; unknown keys are rejected."""
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _OPT_BY_NAME:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(_OPT_BY_NAME[key], raw)
    return values


def write_config_echo(path: str, values: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for opt in _OPTIONS:
            fh.write(f"{opt.name} = {_format_value(opt, values[opt.name])}\n")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", required=True, help="run output directory")
    for opt in _OPTIONS:
        flag = "--" + opt.name.replace("_", "-")
        if opt.kind == "bool":
            group = parser.add_mutually_exclusive_group()
            group.add_argument(flag, dest=opt.name, action="store_const", const=True,
                               default=None, help=opt.help)
            group.add_argument("--no-" + opt.name.replace("_", "-"), dest=opt.name,
                               action="store_const", const=False, default=None,
                               help=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, dest=opt.name, default=None, metavar="V",
                                help=opt.help)


def resolve_config(args: argparse.Namespace) -> dict:
    values = {opt.name: opt.default for opt in _OPTIONS}
    if args.config:
        values.update(load_config_file(args.config))
    for opt in _OPTIONS:
        raw = getattr(args, opt.name, None)
        if raw is None:
            continue
        values[opt.name] = raw if opt.kind == "bool" else _parse_value(opt, str(raw))
    return values


def resolve_seeds(values: dict) -> tuple[int, ...]:
    if values["seed"] is not None:
        return tuple(int(v) for v in str(values["seed"]).split(",") if v.strip())
    return tuple(range(int(values["seeds"])))


def build_experiment_config(values: dict) -> ExperimentConfig:
    return ExperimentConfig(
        env=values["env"],
        algo=values["algo"],
        total_steps=values["steps"],
        batch_steps=values["batch"],
        seeds=resolve_seeds(values),
        eval_episodes=values["eval_episodes"],
        adversarial_noise=values["adversarial_noise"],
        policy_hidden=values["policy_hidden"],
        value_hidden=values["value_hidden"],
        gamma=values["gamma"],
        gae_lambda=values["gae_lambda"],
        vf_step_size=values["vf_step_size"],
        vf_iters=values["vf_iters"],
        subsample_factor=values["subsample_factor"],
        horizon=values["horizon"],
        trpo=TrpoConfig(delta_kl=values["delta_kl"], cg_iters=values["cg_iters"],
                        cg_damping=values["cg_damping"],
                        backtrack_ratio=values["backtrack_ratio"],
                        max_backtracks=values["max_backtracks"]),
        ua=UaTrpoConfig(delta_ua=values["delta_ua"], c=values["c"],
                        alpha=values["alpha"], m=values["m"], beta=values["beta"],
                        use_ema=values["use_ema"]),
    )


def cmd_train(args: argparse.Namespace) -> int:
    try:
        values = resolve_config(args)
        if not values["env"]:
            raise ValueError("--env is required")
        if not values["algo"]:
            raise ValueError("--algo is required")
        values["seed"] = ",".join(str(s) for s in resolve_seeds(values))
        cfg = build_experiment_config(values)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("usage: uatrpo train --env ENV --algo ALGO --out DIR [options]",
              file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    write_config_echo(os.path.join(args.out, "config.echo"), values)
    records = harness.run_experiment(cfg, out_dir=args.out, jobs=int(values["jobs"]))
    label = f"{cfg.algo}/{cfg.env}"
    harness.write_summary({label: records}, os.path.join(args.out, "summary.csv"))
    n_diverged = sum(r.diverged for r in records)
    print(f"trained {len(records)} seeds ({n_diverged} diverged) -> {args.out}")
    if n_diverged == len(records):
        print("error: every seed diverged", file=sys.stderr)
        return 1
    return 0


def _load_run_dir(run_dir: str) -> tuple[str, list[RunRecord], int]:
    label = os.path.basename(os.path.normpath(run_dir))
    runs = []
    skipped = 0
    for name in sorted(os.listdir(run_dir)):
        if not (name.startswith("seed_") and name.endswith(".csv")):
            continue
        try:
            rows, bad = read_metrics_csv(os.path.join(run_dir, name))
        except (ValueError, OSError) as exc:
            print(f"warning: skipping {name}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        if bad:
            print(f"warning: {name}: skipped {bad} malformed rows", file=sys.stderr)
        if rows:
            runs.append(RunRecord(rows[0].seed, rows, diverged=False))
        else:
            skipped += 1
    return label, runs, skipped


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = args.out
    if out_dir is None:
        if len(args.runs) != 1:
            print("error: --out is required with multiple run directories",
                  file=sys.stderr)
            return 2
        out_dir = args.runs[0]
    runs_by_label: dict[str, list[RunRecord]] = {}
    for run_dir in args.runs:
        if not os.path.isdir(run_dir):
            print(f"warning: not a directory: {run_dir}", file=sys.stderr)
            continue
        label, runs, _ = _load_run_dir(run_dir)
        if not runs:
            print(f"warning: no usable rows in {run_dir}", file=sys.stderr)
            continue
        while label in runs_by_label:
            label += "+"
        runs_by_label[label] = runs
    if not runs_by_label:
        print("error: no valid run data found", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    harness.write_summary(runs_by_label, os.path.join(out_dir, "summary.csv"))
    paths = harness.emit_plots(runs_by_label, os.path.join(out_dir, "plots"))
    print(f"wrote summary.csv and {len(paths)} plots -> {out_dir}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = selftest.run_all(quick=args.quick)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status}  {r.detail}")
        failures += not r.passed
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uatrpo",
                                     description="trust-region policy optimization lab")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a multi-seed training experiment")
    _add_train_flags(train)
    train.set_defaults(func=cmd_train)

    report = sub.add_parser("report", help="summarize and plot completed runs")
    report.add_argument("--runs", nargs="+", required=True, help="run directories")
    report.add_argument("--out", default=None, help="output directory")
    report.set_defaults(func=cmd_report)

    self_p = sub.add_parser("selftest", help="run the built-in oracle checks")
    self_p.add_argument("--quick", action="store_true", help="halve Monte Carlo sizes")
    self_p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
