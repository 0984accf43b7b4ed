"""Command-line entry points for the full experiment workflow."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import epidemics, estimators, netgraph, nnet
from . import experiments
from .config import builtin_config, load_config, override

log = logging.getLogger("episource")


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True,
                   help="experiment config file, or a builtin name like 'karate'")
    p.add_argument("--seeds", type=int, default=None, help="override run count")
    p.add_argument("--no-figures", action="store_true",
                   help="emit CSV/JSON only, skip PNG rendering")


def _load_cfg(args):
    path = Path(args.config)
    cfg = load_config(path) if path.exists() else builtin_config(args.config)
    if getattr(args, "seeds", None):
        cfg = override(cfg, seeds=args.seeds)
    return cfg


def _read_snapshot(path: str, g: netgraph.Graph, t: float) -> epidemics.Snapshot:
    """Snapshot text file: one 'label STATE' pair per line, S assumed."""
    states = np.zeros(g.n, dtype=np.uint8)
    codes = {"S": epidemics.STATE_S, "I": epidemics.STATE_I, "R": epidemics.STATE_R}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1].upper() not in codes:
            raise SystemExit(f"{path}:{lineno}: expected 'label S|I|R'")
        if parts[0] not in g.label_index:
            raise SystemExit(f"{path}:{lineno}: unknown node {parts[0]!r}")
        states[g.label_index[parts[0]]] = codes[parts[1].upper()]
    return epidemics.Snapshot(states=states, observed_at=t)


def cmd_stats(args) -> int:
    g = netgraph.load_edge_list_file(args.network)
    stats = netgraph.graph_stats(g)
    text = stats.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    g = cfg.load_graph()
    ds = epidemics.generate_dataset(
        g, cfg.params(), cfg.n_train_per_source, cfg.duration_spec(),
        epidemics.derive_seed(cfg.master_seed, "train-data", 0))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    epidemics.save_dataset(ds, out)
    summary = epidemics.dataset_summary(ds)
    summary_path = out.with_suffix(".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"wrote {len(ds)} records to {out} (summary: {summary_path})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    g = cfg.load_graph()
    ds = epidemics.generate_dataset(
        g, cfg.params(), cfg.n_train_per_source, cfg.duration_spec(),
        epidemics.derive_seed(cfg.master_seed, "train-data", 0))
    result = nnet.train(ds, g, cfg.model_config(cfg.augmentation),
                        cfg.train_config(),
                        seed=epidemics.derive_seed(cfg.master_seed, "model", 0))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.bundle.save(out)
    rows = [s.as_row() for s in result.curves]
    experiments.write_csv(out.with_suffix(".curves.csv"),
                          ["epoch", "train_loss", "val_loss", "train_top1",
                           "val_top1"], rows)
    if not args.no_figures:
        from . import plots
        plots.learning_curves_figure(out.with_suffix(".curves.png"),
                                     out.with_suffix(".curves.csv"))
    meta = result.bundle.meta
    print(f"trained {meta.epochs_run} epochs (best epoch {meta.best_epoch}, "
          f"val loss {meta.best_val_loss:.4f}); bundle: {out}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_cfg(args)
    g = cfg.load_graph()
    ds = epidemics.generate_dataset(
        g, cfg.params(), cfg.n_train_per_source, cfg.duration_spec(),
        epidemics.derive_seed(cfg.master_seed, "train-data", 0))
    best, trials = nnet.tune(ds, g, trials=args.trials or cfg.tune_trials,
                             seed=cfg.master_seed,
                             in_features=nnet.AUGMENTED_FEATURES
                             if cfg.augmentation else nnet.BASE_FEATURES)
    payload = {
        "best": best.to_dict(),
        "trials": [{"config": t.config.to_dict(), "objective": t.objective,
                    "epochs_run": t.epochs_run} for t in trials],
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(f"best objective {min(t.objective for t in trials):.4f}; log: {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    g = cfg.load_graph()
    snap = _read_snapshot(args.snapshot, g, cfg.t_star)
    method = args.method
    if method == "gnn":
        if not args.model:
            raise SystemExit("--model is required for the gnn method")
        bundle = nnet.ModelBundle.load(args.model)
        dist = nnet.predict(bundle, g, snap)
    elif method in ("sme", "mcmf"):
        if not args.dataset:
            raise SystemExit(f"--dataset is required for the {method} method")
        ds = epidemics.load_dataset(args.dataset, graph=g)
        if method == "sme":
            dist = estimators.sme_estimator(snap, ds, seed=cfg.master_seed)
        else:
            dist = estimators.mcmf_posterior(snap, estimators.mcmf_state_probs(ds))
    elif method == "random":
        dist = estimators.random_estimator(snap)
    elif method == "jordan":
        dist = estimators.jordan_estimator(g, snap)
    elif method == "betweenness":
        dist = estimators.betweenness_estimator(g, snap)
    else:
        raise SystemExit(f"unknown method {method!r}")
    text = dist.to_json(labels=g.labels)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _run_experiment(args, fn, **kwargs) -> int:
    cfg = _load_cfg(args)
    fn(cfg, args.out, figures=not args.no_figures, **kwargs)
    print(f"results in {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    return _run_experiment(args, experiments.run_benchmark)


def cmd_detectability(args) -> int:
    grid = [float(t) for t in args.t_grid.split(",")] if args.t_grid else None
    return _run_experiment(args, experiments.run_detectability, t_grid=grid)


def cmd_scaling(args) -> int:
    grid = [int(n) for n in args.n_grid.split(",")] if args.n_grid else None
    return _run_experiment(args, experiments.run_scaling, n_grid=grid)


def cmd_uncertain_t(args) -> int:
    return _run_experiment(args, experiments.run_uncertain_t)


def cmd_timing(args) -> int:
    return _run_experiment(args, experiments.run_timing)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="episource",
        description="Epidemic source detection: simulation, estimators, "
                    "training, and benchmark reproduction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="topology statistics of an edge list")
    p.add_argument("network", help="edge-list file")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("simulate", help="generate and persist an outbreak dataset")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="dataset output path")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train a detector model")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="model bundle output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("tune", help="random hyperparameter search")
    _add_config_arg(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", required=True, help="trial log JSON path")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("detect", help="infer the source of one snapshot")
    _add_config_arg(p)
    p.add_argument("--snapshot", required=True, help="'label STATE' text file")
    p.add_argument("--method", default="gnn",
                   choices=["gnn", "sme", "mcmf", "random", "jordan", "betweenness"])
    p.add_argument("--model", default=None, help="model bundle (gnn)")
    p.add_argument("--dataset", default=None, help="dataset file (sme/mcmf)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_detect)

    for name, fn, extra in (
        ("benchmark", cmd_benchmark, None),
        ("detectability", cmd_detectability, "t"),
        ("scaling", cmd_scaling, "n"),
        ("uncertain-t", cmd_uncertain_t, None),
        ("timing", cmd_timing, None),
    ):
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_config_arg(p)
        p.add_argument("--out", required=True, help="output directory")
        if extra == "t":
            p.add_argument("--t-grid", default=None,
                           help="comma-separated observation times")
        if extra == "n":
            p.add_argument("--n-grid", default=None,
                           help="comma-separated simulations per node")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
