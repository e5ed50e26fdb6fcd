"""Command-line entry points.

Subcommands: run-synthetic, run-dataset, run-ope, diagnose, dump-config,
make-panel. Exit codes: 0 success, 2 configuration error, 3 runtime error;
failures print one machine-parseable ``error: <message>`` line to stderr.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, dump_config, load_config_file, parse_value
from .environments import load_logged_panel, load_tabular_csv, make_synthetic_panel, save_logged_panel
from .runner import AgentSpec, ExperimentConfig, diagnose, run_experiment, run_ope


def _parse_agent_list(text: str, shared: dict) -> list:
    """Parse 'kind,kind[key=v;key=v],name:kind' into AgentSpecs.

    Bracketed key=value pairs override the shared config for that agent only.
    """
    specs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        overrides = dict(shared)
        if "[" in chunk:
            if not chunk.endswith("]"):
                raise ConfigError(f"bad agent spec {chunk!r}")
            chunk, body = chunk[:-1].split("[", 1)
            for pair in body.split(";"):
                if not pair.strip():
                    continue
                if "=" not in pair:
                    raise ConfigError(f"bad agent override {pair!r}")
                key, raw = pair.split("=", 1)
                overrides[key.strip()] = parse_value(raw)
        if ":" in chunk:
            name, kind = chunk.split(":", 1)
        else:
            name = kind = chunk
        specs.append(AgentSpec(name=name.strip(), kind=kind.strip(), overrides=overrides))
    if not specs:
        raise ConfigError("empty agent list")
    return specs


def _shared_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = parse_value(raw)
    return cfg


def _add_run_flags(sub):
    sub.add_argument("--agents", default="bfts,lin_ts,lin_ucb")
    sub.add_argument("--horizon", type=int, required=True)
    sub.add_argument("--reps", type=int, default=1)
    sub.add_argument("--seed", type=int, default=42)
    sub.add_argument("--out", required=True)
    sub.add_argument("--config", default=None, help="config file of key = value lines")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--probes", type=int, default=40)
    sub.add_argument("--eval-rounds", default=None, help="comma list of diagnostic snapshot rounds")
    sub.add_argument("--dump-forest", action="store_true")
    sub.add_argument("--no-diagnostics", action="store_true")


def _experiment_config(args, scenario: str, dataset=None) -> ExperimentConfig:
    shared = _shared_config(args)
    agents = _parse_agent_list(args.agents, shared)
    eval_rounds = (
        tuple(int(v) for v in args.eval_rounds.split(","))
        if args.eval_rounds
        else ExperimentConfig.__dataclass_fields__["eval_rounds"].default
    )
    return ExperimentConfig(
        scenario=scenario,
        agents=agents,
        horizon=args.horizon,
        replications=args.reps,
        outdir=args.out,
        global_seed=args.seed,
        eval_rounds=eval_rounds,
        dataset=dataset,
        probes=args.probes,
        workers=args.workers,
        dump_forest=args.dump_forest,
        collect_diagnostics=not args.no_diagnostics,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bandit-forest")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("run-synthetic", help="run agents on a synthetic scenario")
    s.add_argument("--scenario", required=True)
    _add_run_flags(s)

    s = subs.add_parser("run-dataset", help="run agents on a classification CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--label", required=True)
    s.add_argument("--categorical", default=None, help="comma list of categorical columns")
    _add_run_flags(s)

    s = subs.add_parser("run-ope", help="replay agents on a logged panel")
    s.add_argument("--panel", required=True)
    s.add_argument("--agents", default="bfts")
    s.add_argument("--estimator", default="snips", choices=["snips", "dr", "both"])
    s.add_argument("--bootstrap", type=int, default=0)
    s.add_argument("--checkpoints", default="1000,2000,5000,10000")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")

    s = subs.add_parser("diagnose", help="recompute diagnostics from stored snapshots")
    s.add_argument("--run", required=True)

    s = subs.add_parser("dump-config", help="print the full default config")
    s.add_argument("--out", default=None)

    s = subs.add_parser("make-panel", help="write a synthetic logged panel CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--rows", type=int, default=10000)
    s.add_argument("--seed", type=int, default=7)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return 2 if (exc.code or 0) != 0 else 0

    try:
        if args.command == "run-synthetic":
            config = _experiment_config(args, args.scenario)
            result = run_experiment(config)
            print(f"wrote {result.rounds_path} and {result.summary_path}")
        elif args.command == "run-dataset":
            cats = args.categorical.split(",") if args.categorical else None
            env = load_tabular_csv(args.csv, args.label, categorical=cats)
            config = _experiment_config(args, "dataset", dataset=env)
            result = run_experiment(config)
            print(f"wrote {result.rounds_path} and {result.summary_path}")
        elif args.command == "run-ope":
            shared = _shared_config(args)
            agents = _parse_agent_list(args.agents, shared)
            panel = load_logged_panel(args.panel)
            estimators = ("snips", "dr") if args.estimator == "both" else (args.estimator,)
            checkpoints = tuple(int(v) for v in args.checkpoints.split(","))
            path = run_ope(
                panel,
                agents,
                args.out,
                estimators=estimators,
                checkpoints=checkpoints,
                bootstrap=args.bootstrap,
                global_seed=args.seed,
            )
            print(f"wrote {path}")
        elif args.command == "diagnose":
            path = diagnose(args.run)
            print(f"wrote diagnostics under {path}")
        elif args.command == "dump-config":
            text = dump_config()
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        elif args.command == "make-panel":
            panel, _, _ = make_synthetic_panel(args.rows, args.seed)
            save_logged_panel(panel, args.out)
            print(f"wrote {args.out}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 3 by contract
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
