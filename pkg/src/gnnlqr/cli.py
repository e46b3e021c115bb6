"""Command-line entry point: ``gnnlqr {exp1,...,exp5,verify} [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, default_config, load_config, run

_HELP = {
    "exp1": "sweep GNN and GF features, order and learning rate",
    "exp2": "compare Optim, MLP, D-MLP, GNN, GF and open loop",
    "exp3": "trained GNN against the open loop across ||A||_2",
    "exp4": "train on D, test on a perturbed system at distance eps",
    "exp5": "train at the smallest node count, test on larger systems",
    "verify": "run every bound and identity fuzz campaign",
}


def _floats(text):
    return tuple(float(s) for s in text.split(",") if s.strip())


def _ints(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="gnnlqr", description="Distributed LQR with graph neural networks.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (CSV, JSON)")
        p.add_argument("--scale", choices=("desk", "paper"))
        p.add_argument("--nodes", type=int, help="number of nodes N")
        p.add_argument("--horizon", type=int, help="trajectory length T")
        p.add_argument("--realizations", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--eps-grid", type=_floats, help="comma-separated system distances")
        p.add_argument("--a-norm-grid", type=_floats, help="comma-separated values of ||A||_2")
        p.add_argument("--node-counts", type=_ints, help="comma-separated node counts (exp5)")
        p.add_argument("--features", type=_ints, help="hidden features F1 (a grid for exp1)")
        p.add_argument("--order", type=_ints, help="filter order K1 (a grid for exp1)")
        p.add_argument("--lr", type=_floats, help="learning rate (a grid for exp1)")
        p.add_argument("--workers", type=int, help="worker processes; results do not depend on it")
    return parser


def config_from_args(args):
    over = {
        "seed": args.seed,
        "out": args.out,
        "n_nodes": args.nodes,
        "horizon": args.horizon,
        "n_realizations": args.realizations,
        "epochs": args.epochs,
        "eps_grid": args.eps_grid,
        "a_norm_grid": args.a_norm_grid,
        "node_counts": args.node_counts,
        "workers": args.workers,
    }
    if args.experiment == "exp1":
        over.update(features=args.features, orders=args.order, lrs=args.lr)
    else:
        if args.features or args.order:
            base = default_config(args.experiment).gnn_arch
            f = args.features[0] if args.features else base[0]
            k = args.order[0] if args.order else base[1]
            over["gnn_arch"] = (f, k)
        if args.lr:
            over["gnn_lr"] = args.lr[0]
    if args.config:
        return load_config(args.config, experiment=args.experiment, scale=args.scale, **over)
    return default_config(args.experiment, args.scale or "desk", **over)


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    res = run(cfg)
    print(json.dumps({"metadata": res.metadata(), "summary": res.summary}, indent=2, default=str))
    if cfg.experiment == "verify" and not res.summary["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
