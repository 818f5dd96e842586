"""Command-line entry point: ``python -m risorch <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .geometry_channel import ConfigError
from .harness import (AGENT_KINDS, ExperimentConfig, emit_results, load_config, measure_throughput,
                      results_to_csv, results_to_json, run_experiment)
from .neural import build_reward_network, gradient_check

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _agents(text: str) -> list[str]:
    kinds = [v.strip() for v in text.split(",") if v.strip()]
    bad = [k for k in kinds if k not in AGENT_KINDS]
    if bad:
        raise ConfigError(f"unknown agent kinds {bad}; choose from {AGENT_KINDS}")
    return kinds


def _base_config(args) -> ExperimentConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return config.with_values(**overrides) if overrides else config


def _write(tables, args, config: ExperimentConfig) -> None:
    out = args.out or config.output_path
    if out:
        emit_results(tables, out, args.format)
        print(f"wrote {out}", file=sys.stderr)
    else:
        sys.stdout.write(results_to_csv(tables) if args.format == "csv" else results_to_json(tables))


def _summary(table) -> None:
    print(f"{table.agent:>10} n_tot={table.n_tot:<4} card={table.cardinality:<5} "
          f"P={table.config.reward.power_dbm:g}dBm mean={table.mean:.4f} std={table.std:.4f} "
          f"ratio={table.normalized_ratio:.4f}", file=sys.stderr)


def cmd_run(args) -> int:
    config = _base_config(args)
    table = run_experiment(config)
    _summary(table)
    _write([table], args, config)
    return EXIT_OK


def _sweep(args, key: str, values) -> int:
    base = _base_config(args)
    agents = _agents(args.agents) if args.agents else [base.agent.kind]
    tables = []
    for value in values:
        for kind in agents:
            config = base.with_values(**{key: value, "agent.kind": kind, "observation_mode": base.observation_mode
                                         if kind in ("neural_eg", "dqn") else "auto"})
            table = run_experiment(config)
            _summary(table)
            tables.append(table)
    _write(tables, args, base)
    return EXIT_OK


def cmd_sweep(args) -> int:
    return _sweep(args, "n_tot", _ints(args.n_tot))


def cmd_power_sweep(args) -> int:
    return _sweep(args, "reward.power_dbm", _floats(args.powers))


def cmd_timing(args) -> int:
    base = _base_config(args)
    agents = _agents(args.agents)
    lines = ["agent,n_tot,card_A,steps_per_sec"]
    for n_tot in _ints(args.n_tot):
        config = base.with_values(n_tot=n_tot)
        for kind in agents:
            steps = args.steps if kind != "optimal" else max(1, min(args.steps, 4096 * 20 // config.cardinality))
            rate = measure_throughput(kind, config, duration_steps=steps, warmup=args.warmup)
            lines.append(f"{kind},{n_tot},{config.cardinality},{rate:.17g}")
            print(f"{kind:>10} n_tot={n_tot:<4} {rate:10.2f} steps/s", file=sys.stderr)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    net = build_reward_network(args.input_dim, args.output_dim, args.variant, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=args.input_dim)
    report = gradient_check(net, x, int(rng.integers(args.output_dim)), float(rng.normal()),
                            epsilon=args.epsilon, tolerance=args.tolerance, max_params=args.params, rng=rng)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} max relative error {report.max_relative_error:.3e} over {len(report.indices)} parameters "
          f"(tolerance {args.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risorch", description="Multi-RIS orchestration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p, config_positional: bool):
        if config_positional:
            p.add_argument("config", help="config file with dotted keys")
        else:
            p.add_argument("--config", help="config file with dotted keys (defaults to the reference setup)")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", help="output file (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("run", help="run one experiment")
    experiment_args(p, True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary the total RIS element count")
    experiment_args(p, False)
    p.add_argument("--n-tot", default="32,64,96,128,160")
    p.add_argument("--agents", default="random,optimal,ucb,neural_eg,dqn")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("power-sweep", help="vary the transmit power")
    experiment_args(p, False)
    p.add_argument("--powers", default="10,20,30,40,50")
    p.add_argument("--agents", default="random,optimal,ucb,neural_eg,dqn")
    p.set_defaults(func=cmd_power_sweep)

    p = sub.add_parser("timing", help="steps per second of each controller")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--n-tot", default="32,64")
    p.add_argument("--agents", default="random,optimal,ucb,neural_eg,dqn")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    p.add_argument("--input-dim", type=int, default=400)
    p.add_argument("--output-dim", type=int, default=16)
    p.add_argument("--variant", choices=("conv", "dense_only"), default="conv")
    p.add_argument("--params", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
