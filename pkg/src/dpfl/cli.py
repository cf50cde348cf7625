"""Command-line entry point: ``dpfl {run,partition-preview,greedy-validate,synergy,equivalence-check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import dump_config, load_config, with_seed
from .data import make_cohort
from .engine import run, synergy_scenario
from .errors import DpflError
from .metrics import export_graph, fmt, records_to_csv, symmetry_pct
from .model import accuracy

log = logging.getLogger("dpfl")

GRAPH_MODES = ("dpfl", "random_graph")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    result = run(cfg, threads=args.threads, keep_traces=True)

    _write(out / "config.txt", dump_config(cfg))
    _write(out / "metrics.csv", records_to_csv(result.records))
    _write(out / "rounds.jsonl", "".join(r.to_json() + "\n" for r in result.records))
    _write(out / "traces.jsonl", "".join(t.to_json() + "\n" for t in result.traces))
    if cfg.mode in GRAPH_MODES:
        last = result.records[-1].round
        for rnd, graph in result.graphs.items():
            if rnd % args.snapshot_every == 0 or rnd == last:
                js, dot = export_graph(graph, rnd)
                _write(out / "graphs" / f"round_{rnd:04d}.json", js + "\n")
                _write(out / "graphs" / f"round_{rnd:04d}.dot", dot)

    bad = set(result.malicious_ids)
    rows = ["client_id,n_train,n_val,n_test,weight_p,test_acc,best_val_loss,omega_size,malicious"]
    for c in result.clients:
        s = c.shard
        rows.append(",".join([
            str(s.client_id), str(len(s.train)), str(len(s.val)), str(len(s.test)), fmt(s.weight_p),
            fmt(accuracy(c.best_params, s.test)), fmt(c.best_val_loss), str(len(c.omega)),
            str(int(s.client_id in bad)),
        ]))
    _write(out / "clients.csv", "\n".join(rows) + "\n")

    final = result.records[-1]
    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "rounds_recorded": len(result.records),
        "final_round": final.round,
        "mean_test_accuracy": float(fmt(final.mean_test_accuracy)),
        "accuracy_variance": float(fmt(final.accuracy_variance)),
        "greedy_invocations": result.self_check.invocations,
        "greedy_fallbacks_to_self": sum(t.fell_back for t in result.traces),
        "no_worse_than_self_violations": result.self_check.violations,
        "malicious_ids": result.malicious_ids,
        "symmetry_pct_selected": float(fmt(final.symmetry_pct)),
        "symmetry_pct_omega": float(fmt(symmetry_pct([c.omega for c in result.clients]))),
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{cfg.mode}: final mean test accuracy {final.mean_test_accuracy:.4f} "
          f"(variance {final.accuracy_variance:.4g}) -> {out}")
    return 0 if result.self_check.violations == 0 else 1


def cmd_partition_preview(args) -> int:
    cfg = _load(args)
    shards = make_cohort(cfg.dataset, cfg.partition)
    num_classes = cfg.dataset.num_classes
    header = ["client_id", "n_train", "n_val", "n_test", "weight_p"] + [f"class_{c}" for c in range(num_classes)]
    rows = [",".join(header)]
    for s in shards:
        labels = np.concatenate([s.train.labels, s.val.labels, s.test.labels])
        hist = np.bincount(labels, minlength=num_classes)
        rows.append(",".join([str(s.client_id), str(len(s.train)), str(len(s.val)), str(len(s.test)),
                              fmt(s.weight_p)] + [str(int(h)) for h in hist]))
    text = "\n".join(rows) + "\n"
    if args.out:
        _write(Path(args.out) / "partition.csv", text)
    sys.stdout.write(text)
    return 0


def _report(args, name: str, report: dict) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(Path(args.out) / f"{name}.json", text)
    sys.stdout.write(text)


def cmd_greedy_validate(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = checks.greedy_validate(args.n, args.trials, seed)
    _report(args, "greedy_validate", report)
    ok = report["self_pass_rate"] in (None, 1.0)
    if report["mean_ratio"] is not None:
        ok = ok and report["mean_ratio"] >= args.min_mean_ratio
    return 0 if ok else 1


def cmd_equivalence_check(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = checks.equivalence_check(args.trials, seed)
    _report(args, "equivalence_check", report)
    return 0 if report["ok"] else 1


def cmd_synergy(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = synergy_scenario(seed=seed).as_dict()
    _report(args, "synergy", report)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, type=Path, help="key = value run config")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the seed (unsigned 64-bit)")
        return p

    p = common(sub.add_parser("run", help="run one experiment"))
    p.add_argument("--snapshot-every", type=int, default=10, help="graph export interval in rounds")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-client work")
    p.set_defaults(func=cmd_run, needs_out=True)

    p = common(sub.add_parser("partition-preview", help="show per-client split sizes and label histograms"))
    p.set_defaults(func=cmd_partition_preview)

    p = common(sub.add_parser("greedy-validate", help="greedy vs brute force on random cut instances"), config=False)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--min-mean-ratio", type=float, default=0.45)
    p.set_defaults(func=cmd_greedy_validate)

    p = common(sub.add_parser("synergy", help="three-client synergy scenario"), config=False)
    p.set_defaults(func=cmd_synergy)

    p = common(sub.add_parser("equivalence-check", help="direct vs batched greedy on random instances"), config=False)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_equivalence_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_out", False) and args.out is None:
        parser.error("--out is required for run")
    if getattr(args, "snapshot_every", 1) < 1 or getattr(args, "threads", 1) < 1:
        parser.error("--snapshot-every and --threads must be positive")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except DpflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
