"""Command-line entry point: dataset generation, partition preview,
experiment execution, and report emission.

Every failure prints a single machine-parsable line ``<CODE>: <message>`` to
stderr.  Config errors exit with status 2, runtime errors with 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import _FIELD_TYPES, config_echo, parse_value, resolve_config
from .engine import run_experiment
from .errors import ConfigRangeError, ProtofedError
from .generators import generate_homophily, generate_sbm
from .graph import edge_homophily, load_graph, save_graph
from .partition import partition_graph

_GEN_DEFAULTS = {
    "sbm": {"nodes": 400, "blocks": 4, "p_in": 0.1, "p_out": 0.01,
            "features": 32, "mean_scale": 1.0, "noise_scale": 1.0,
            "train_frac": 0.2, "val_frac": 0.4},
    "homophily": {"nodes": 1000, "classes": 6, "level": 0.7, "avg_degree": 6.0,
                  "features": 32, "mean_scale": 1.0, "noise_scale": 1.0,
                  "train_frac": 0.2, "val_frac": 0.4},
}


def _gen_params(kind: str, overrides) -> dict:
    params = dict(_GEN_DEFAULTS[kind])
    for item in overrides:
        if "=" not in item:
            raise ConfigRangeError(f"generator param must be KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        key = key.strip()
        if key not in params:
            raise ConfigRangeError(f"unknown {kind} parameter {key!r}")
        params[key] = parse_value(val)
    return params


def cmd_gen_data(args) -> int:
    params = _gen_params(args.kind, args.set or [])
    seed = args.seed if args.seed is not None else 0
    try:
        if args.kind == "sbm":
            g = generate_sbm(int(params["nodes"]), int(params["blocks"]),
                             float(params["p_in"]), float(params["p_out"]),
                             int(params["features"]), seed,
                             float(params["mean_scale"]), float(params["noise_scale"]),
                             float(params["train_frac"]), float(params["val_frac"]))
        else:
            g = generate_homophily(int(params["nodes"]), int(params["classes"]),
                                   float(params["level"]), float(params["avg_degree"]),
                                   int(params["features"]), seed,
                                   float(params["mean_scale"]), float(params["noise_scale"]),
                                   float(params["train_frac"]), float(params["val_frac"]))
    except ValueError as exc:
        raise ConfigRangeError(str(exc)) from exc
    save_graph(g, args.out)
    print(f"wrote {args.kind} dataset to {args.out}: n={g.num_nodes} "
          f"m={g.num_edges} f={g.num_features} classes={g.num_classes} "
          f"edge_homophily={edge_homophily(g):.3f}")
    return 0


def cmd_partition(args) -> int:
    cfg = resolve_config(args.config, args.set or [], args.seed)
    if not cfg.data_dir:
        raise ConfigRangeError("data_dir must be set (config key or --set data_dir=...)")
    graph = load_graph(cfg.data_dir)
    part = partition_graph(graph, cfg.partition, cfg.num_clients, cfg.partition_seed)
    print(f"{cfg.partition} partition of {cfg.data_dir} into {cfg.num_clients} clients")
    print("client,nodes,edges," + ",".join(f"class_{c}" for c in range(graph.num_classes)))
    for cid, sub in enumerate(part.client_subgraphs):
        hist = np.bincount(sub.labels, minlength=graph.num_classes)
        print(f"{cid},{sub.num_nodes},{sub.num_edges}," + ",".join(str(int(x)) for x in hist))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "assignment.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("node_id,client_id\n")
            for v, cid in enumerate(part.assignment):
                fh.write(f"{v},{cid}\n")
        print(f"wrote {out / 'assignment.csv'}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args.config, args.set or [], args.seed)
    if not cfg.data_dir:
        raise ConfigRangeError("data_dir must be set (config key or --set data_dir=...)")
    if args.out is None:
        raise ConfigRangeError("--out DIR is required for run")
    echo = config_echo(cfg)
    print("resolved config:")
    for key, val in echo.items():
        print(f"  {key}={json.dumps(val)}")
    summary = run_experiment(cfg, cfg.data_dir, args.out)
    print(f"final_global_accuracy={summary['final_global_accuracy']:.4f} "
          f"best={summary['best_global_accuracy']:.4f} "
          f"bytes_up={summary['total_bytes_up']} bytes_down={summary['total_bytes_down']}")
    return 0


def _read_run_dir(run_dir: Path):
    summary_path = run_dir / "summary.json"
    if not summary_path.is_file():
        raise ConfigRangeError(f"not a run directory (no summary.json): {run_dir}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    per_round: dict[int, tuple[float, float]] = {}
    with open(run_dir / "metrics.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["split"] != "test":
                continue
            t = int(row["round"])
            correct, total = per_round.get(t, (0.0, 0.0))
            support = float(row["support"])
            per_round[t] = (correct + float(row["accuracy"]) * support,
                            total + support)
    curve = {t: (c / n if n else 0.0) for t, (c, n) in sorted(per_round.items())}
    return summary, curve


def cmd_report(args) -> int:
    series = []
    for d in args.run_dirs:
        summary, curve = _read_run_dir(Path(d))
        name = summary["method"]
        existing = sum(1 for s in series if s[0].split("#")[0] == name)
        if existing:
            name = f"{name}#{existing + 1}"
        series.append((name, summary, curve))
    header = f"{'method':<18} {'final_acc':>9} {'best_acc':>9} {'bytes_up':>12} {'bytes_down':>12}"
    print(header)
    for name, summary, _ in series:
        print(f"{name:<18} {summary['final_global_accuracy']:>9.4f} "
              f"{summary['best_global_accuracy']:>9.4f} "
              f"{summary['total_bytes_up']:>12} {summary['total_bytes_down']:>12}")
    out = Path(args.out) if args.out else Path(args.run_dirs[0])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curves.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,round,test_accuracy\n")
        for name, _, curve in series:
            for t, acc in curve.items():
                fh.write(f"{name},{t},{format(acc, '.17g')}\n")
    print(f"wrote {out / 'curves.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protofed",
        description="Deterministic simulator of prototype-exchange federated graph learning")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file (key=value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override (repeatable)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="shorthand overriding all seeds")

    gen = sub.add_parser("gen-data", parents=[common],
                         help="emit a synthetic dataset directory")
    gen.add_argument("kind", choices=("sbm", "homophily"))
    gen.set_defaults(fn=cmd_gen_data)

    part = sub.add_parser("partition", parents=[common],
                          help="preview a client partition of a dataset")
    part.set_defaults(fn=cmd_partition)

    run = sub.add_parser("run", parents=[common], help="run a federated experiment")
    run.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", parents=[common],
                         help="aggregate run directories into a table + curves.csv")
    rep.add_argument("run_dirs", nargs="+")
    rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-data" and args.out is None:
        print("CONFIG_RANGE: --out DIR is required for gen-data", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except ProtofedError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 2 if exc.code in ("CONFIG_NOT_FOUND", "CONFIG_RANGE") else 1
    except OSError as exc:
        print(f"IO_ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
