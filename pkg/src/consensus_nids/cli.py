"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import harness
from .classifier import ParseError, TrainingError, filter_dos, parse_records, train
from .harness import ConfigError, ExperimentConfig

logger = logging.getLogger("consensus_nids")

# flag name -> config field
OVERRIDES = {
    "topology": "topology", "size": "size", "mitigation": "mitigation", "attack": "attack",
    "magnitude": "magnitude", "phases": "phases", "epsilon": "epsilon",
    "max_iter": "max_iter", "seed": "seed", "data": "data", "out": "out", "format": "format",
    "model": "model", "graph_seed": "graph_seed", "beta": "beta", "tau": "tau",
    "persistence": "persistence", "voter_policy": "voter_policy",
    "observer_init": "observer_init", "alert_value": "alert_value",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="consensus-nids",
                description="Distributed NIDS consensus with Byzantine attack mitigation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a full experiment")
    sim.add_argument("--config", help="JSON config file")
    sim.add_argument("--topology", choices=harness.TOPOLOGIES)
    sim.add_argument("--size", type=int)
    sim.add_argument("--graph-seed", type=int)
    sim.add_argument("--mitigation", choices=harness.MITIGATIONS)
    sim.add_argument("--attack", choices=harness.ATTACKS)
    sim.add_argument("--magnitude", type=float)
    sim.add_argument("--phases", type=int)
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--max-iter", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--data", help="NSL-KDD file; synthetic likelihoods when omitted")
    sim.add_argument("--model", help="trained model JSON")
    sim.add_argument("--beta", type=float)
    sim.add_argument("--tau", type=float)
    sim.add_argument("--persistence", type=int)
    sim.add_argument("--voter-policy")
    sim.add_argument("--observer-init")
    sim.add_argument("--alert-value", type=float)
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--format", choices=harness.FORMATS)
    sim.add_argument("--trace-phase", type=int, metavar="ID",
                     help="also dump trajectory and detector traces of one phase")

    demo = sub.add_parser("demo-attack", help="honest vs constant-attack convergence")
    demo.add_argument("--topology", default="ring", choices=harness.TOPOLOGIES)
    demo.add_argument("--size", type=int, default=9)
    demo.add_argument("--c", type=float, default=-10.0, help="constant transmitted")
    demo.add_argument("--epsilon", type=float, default=1e-6)
    demo.add_argument("--max-iter", type=int, default=10_000)
    demo.add_argument("--phases", type=int, default=1000)
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--out", help="output directory for histogram CSVs")

    tr = sub.add_parser("train", help="train the naive Bayes model")
    tr.add_argument("--data", required=True, help="NSL-KDD file")
    tr.add_argument("--out", required=True, help="model JSON path")
    tr.add_argument("--bins", type=int, default=10)

    be = sub.add_parser("bench", help="wall time across topology x mitigation")
    be.add_argument("--phases", type=int, default=20)
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--epsilon", type=float, default=1e-6)
    be.add_argument("--out", help="CSV path")
    return p


def _config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        base = ExperimentConfig.load(args.config).to_dict()
    for flag, key in OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    return ExperimentConfig.from_dict(base)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    result = harness.run_experiment(cfg)
    m = result.metrics
    print(f"phases={cfg.phases} tp={m.tp} tn={m.tn} fp={m.fp} fn={m.fn} "
          f"accuracy={m.accuracy:.4f} aborted={m.aborted} wall_time_s={m.total_wall_time:.3f}")
    det = [r.detection_iteration for r in result.records if r.detection_iteration is not None]
    if det:
        print(f"detections={len(det)} median_detection_iteration={harness.median(det)}")
    if cfg.out:
        for path in harness.export(result, cfg.format, cfg.out):
            print(f"wrote {path}")
        if args.trace_phase is not None:
            for path in harness.trace_phase(cfg, args.trace_phase,
                                            os.path.join(cfg.out, f"trace_{args.trace_phase}")):
                print(f"wrote {path}")
    return 0


def cmd_demo(args) -> int:
    cfg = ExperimentConfig(topology=args.topology, size=args.size, attack="constant",
                           magnitude=args.c, epsilon=args.epsilon, max_iter=args.max_iter,
                           phases=args.phases, seed=args.seed).validate()
    cmp = harness.compare_convergence(cfg)
    print(f"honest median iterations={harness.median(cmp.honest_iterations)}")
    print(f"attacked median iterations={harness.median(cmp.attacked_iterations)}")
    print(f"max |x - c| after attacked phases={max(cmp.attacked_max_error):.3g}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for name, hist in (("convergence_honest.csv", cmp.honest_histogram),
                           ("convergence_attacked.csv", cmp.attacked_histogram)):
            path = os.path.join(args.out, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(harness._hist_csv(hist))
            print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    with open(args.data, encoding="utf-8") as fh:
        records = filter_dos(parse_records(fh, skip_bad=True))
    model = train(records, n_bins=args.bins)
    model.save(args.out)
    print(f"trained on {model.counts['attack']} attack and {model.counts['normal']} normal "
          f"records; wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    rows = harness.bench(phases=args.phases, repeats=args.repeats, seed=args.seed,
                         epsilon=args.epsilon)
    for r in rows:
        print(f"{r['topology']:>8} {r['size']:>3} {r['mitigation']:>8} "
              f"{r['total_ms']:10.1f} ms  ({r['per_phase_ms']:.2f} ms/phase)")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
        print(f"wrote {args.out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "demo-attack": cmd_demo, "train": cmd_train,
            "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ParseError, TrainingError, harness.RunFailed, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
