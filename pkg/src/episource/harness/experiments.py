"""Experiment pipelines: benchmark, detectability, scaling, uncertain-T, timing."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import estimators, evalkit, netgraph, nnet
from ..epidemics import (STATE_I, STATE_R, STATE_S, SimDataset, Snapshot,
                         derive_seed, generate_dataset)
from ..estimators import PROBABILISTIC, SmeEvaluator, SourceDistribution
from .cache import StageCache, cache_key
from .config import ExperimentConfig, override

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Deterministic CSV emission
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_plot_csv(path: Path, rows: list[tuple]) -> None:
    """Spec-shaped plot-ready table: columns x, series, value, ci."""
    write_csv(path, ["x", "series", "value", "ci"], [list(r) for r in rows])


# ---------------------------------------------------------------------------
# Stage builders (cache-aware)
# ---------------------------------------------------------------------------

def train_dataset(cfg: ExperimentConfig, g: netgraph.Graph, run: int,
                  cache: StageCache, t_mode: str | None = None,
                  n_per_source: int | None = None) -> SimDataset:
    n = n_per_source or cfg.n_train_per_source
    spec = cfg.duration_spec(t_mode)
    seed = derive_seed(cfg.master_seed, "train-data", run)
    key = cache_key("train", g.content_hash(), cfg.beta, cfg.mu, spec, n, seed)
    return cache.dataset(key, g, lambda: generate_dataset(g, cfg.params(), n, spec, seed))


def test_dataset(cfg: ExperimentConfig, g: netgraph.Graph, run: int,
                 cache: StageCache) -> SimDataset:
    spec = cfg.duration_spec("fixed")
    seed = derive_seed(cfg.master_seed, "test-data", run)
    key = cache_key("test", g.content_hash(), cfg.beta, cfg.mu, spec,
                    cfg.n_test_per_source, seed)
    return cache.dataset(key, g, lambda: generate_dataset(
        g, cfg.params(), cfg.n_test_per_source, spec, seed))


def train_gnn(cfg: ExperimentConfig, g: netgraph.Graph, train_ds: SimDataset,
              run: int, cache: StageCache,
              augmented: bool = False) -> tuple[nnet.ModelBundle, list | None]:
    model_cfg = cfg.model_config(augmented=augmented)
    seed = derive_seed(cfg.master_seed, "model", run, augmented)
    key = cache_key("gnn", train_ds.content_hash(), model_cfg, seed)

    def builder():
        result = nnet.train(train_ds, g, model_cfg, cfg.train_config(), seed=seed)
        return result.bundle, result.curves

    return cache.bundle(key, train_ds.content_hash(), builder)


def mcmf_table(train_ds: SimDataset, cache: StageCache) -> estimators.StateProbTable:
    key = cache_key("mcmf", train_ds.content_hash())
    return cache.table(key, train_ds.graph_hash,
                       lambda: estimators.mcmf_state_probs(train_ds))


# ---------------------------------------------------------------------------
# Per-method suite evaluation
# ---------------------------------------------------------------------------

@dataclass
class MethodRun:
    method: str
    report: evalkit.MetricsReport
    top_k_hits: np.ndarray                      # bool per test case
    sample_dists: list[SourceDistribution]      # first few cases, for export


def _gnn_cases(bundle: nnet.ModelBundle, g: netgraph.Graph,
               states: np.ndarray) -> list[SourceDistribution]:
    aug = netgraph.node_feature_augmentation(g) if bundle.config.augmented else None
    log_probs = nnet.forward_log_probs(bundle.to_stack(), g, states, aug)
    probs = np.exp(log_probs)
    probs[states == STATE_S] = 0.0
    probs /= probs.sum(axis=1, keepdims=True)
    return [SourceDistribution(kind=PROBABILISTIC, scores=p) for p in probs]


def _heuristic_cases(method: str, g: netgraph.Graph,
                     states: np.ndarray) -> list[SourceDistribution]:
    fn = {"jordan": estimators.jordan_estimator,
          "betweenness": estimators.betweenness_estimator}[method]
    memo: dict[bytes, SourceDistribution] = {}
    out = []
    for row in states:
        mask_key = (row != STATE_S).tobytes()
        if mask_key not in memo:
            memo[mask_key] = fn(g, Snapshot(states=row, observed_at=0.0))
        out.append(memo[mask_key])
    return out


def method_cases(method: str, cfg: ExperimentConfig, g: netgraph.Graph,
                 train_ds: SimDataset | None, test_ds: SimDataset, run: int,
                 cache: StageCache) -> list[SourceDistribution]:
    states = test_ds.states
    if method == "random":
        return [estimators.random_estimator(Snapshot(states=row, observed_at=0.0))
                for row in states]
    if method in ("jordan", "betweenness"):
        return _heuristic_cases(method, g, states)
    if method in ("gnn", "gnn_da"):
        bundle, _ = train_gnn(cfg, g, train_ds, run, cache,
                              augmented=method == "gnn_da")
        return _gnn_cases(bundle, g, states)
    if method == "sme":
        ev = SmeEvaluator(train_ds)
        return [ev.posterior(row, derive_seed(cfg.master_seed, "sme", run, i))[0]
                for i, row in enumerate(states)]
    if method == "mcmf":
        table = mcmf_table(train_ds, cache)
        return [estimators.mcmf_posterior(Snapshot(states=row, observed_at=0.0), table)
                for row in states]
    raise ValueError(f"unknown method {method!r}")


def evaluate_run(cfg: ExperimentConfig, g: netgraph.Graph, methods,
                 train_ds: SimDataset | None, test_ds: SimDataset, run: int,
                 cache: StageCache, n_samples: int = 3) -> dict[str, MethodRun]:
    sources = test_ds.sources.astype(np.int64)
    out: dict[str, MethodRun] = {}
    for method in methods:
        t0 = time.perf_counter()
        dists = method_cases(method, cfg, g, train_ds, test_ds, run, cache)
        cases = list(zip(dists, sources))
        report = evalkit.evaluate_suite(cases, g, k=cfg.top_k)
        hits = np.array([evalkit.rank_of_source(d, s) <= cfg.top_k
                         for d, s in cases])
        out[method] = MethodRun(method=method, report=report, top_k_hits=hits,
                                sample_dists=dists[:n_samples])
        log.info("run %d %s: top%d=%.4f err=%.3f rr=%.3f (%.1fs)", run, method,
                 cfg.top_k, report.top_k_accuracy, report.error_distance,
                 report.reciprocal_rank, time.perf_counter() - t0)
    return out


# ---------------------------------------------------------------------------
# Report emission helpers
# ---------------------------------------------------------------------------

_RUN_HEADER = ["network", "method", "run", "top_k_accuracy", "error_distance",
               "reciprocal_rank", "css90", "n_cases"]
_AGG_HEADER = ["network", "method", "runs", "top_k_accuracy", "ci_top_k",
               "error_distance", "ci_error_distance", "reciprocal_rank",
               "ci_reciprocal_rank", "css90", "ci_css90"]


def _run_row(network: str, method: str, run: int, r: evalkit.MetricsReport) -> list:
    css = "" if r.css90 is None else r.css90
    return [network, method, run, r.top_k_accuracy, r.error_distance,
            r.reciprocal_rank, css, r.n_cases]


def _agg_row(network: str, method: str, r: evalkit.MetricsReport) -> list:
    css = "" if r.css90 is None else r.css90
    ci_css = "" if r.ci_css90 is None else r.ci_css90
    return [network, method, r.n_runs, r.top_k_accuracy, r.ci_top_k,
            r.error_distance, r.ci_error_distance, r.reciprocal_rank,
            r.ci_reciprocal_rank, css, ci_css]


def _size_bins(cfg: ExperimentConfig, test_ds: SimDataset) -> tuple[np.ndarray, list[str]]:
    frac = (test_ds.states != STATE_S).mean(axis=1)
    edges = list(cfg.size_bin_edges) + [1.0]
    which = np.searchsorted(np.asarray(edges), frac, side="left")
    which = np.clip(which, 0, len(edges) - 1)
    lo = [0.0] + edges[:-1]
    labels = [f"({a:.1f},{b:.1f}]" for a, b in zip(lo, edges)]
    return which, labels


def _export_examples(path: Path, g: netgraph.Graph, test_ds: SimDataset,
                     results: dict[str, MethodRun], n_samples: int = 3) -> None:
    payload = []
    for i in range(min(n_samples, len(test_ds))):
        states = test_ds.states[i]
        payload.append({
            "true_source": g.labels[int(test_ds.sources[i])],
            "states": {g.labels[v]: "SIR"[states[v]] for v in range(g.n)},
            "distributions": {
                m: dict(zip(g.labels, res.sample_dists[i].scores.tolist()))
                for m, res in results.items()
            },
        })
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def run_benchmark(cfg: ExperimentConfig, out_dir, figures: bool = True) -> dict:
    """Per-seed training + all-method evaluation, aggregated across seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    g = cfg.load_graph()
    network = cfg.label()
    methods = cfg.effective_methods

    per_method: dict[str, list[evalkit.MetricsReport]] = {m: [] for m in methods}
    run_rows, size_acc = [], {}
    size_labels: list[str] = []
    for run in range(cfg.seeds):
        needs_sim = any(m in ("gnn", "gnn_da", "sme", "mcmf") for m in methods)
        train_ds = train_dataset(cfg, g, run, cache) if needs_sim else None
        test_ds = test_dataset(cfg, g, run, cache)
        if run == 0 and "gnn" in methods and train_ds is not None:
            # train ahead of evaluate_run so the learning curves are captured
            _, curves = train_gnn(cfg, g, train_ds, run, cache)
            if curves is not None:
                write_csv(out / "learning_curves.csv",
                          ["epoch", "train_loss", "val_loss",
                           "train_top1", "val_top1"],
                          [s.as_row() for s in curves])
        results = evaluate_run(cfg, g, methods, train_ds, test_ds, run, cache)
        which, size_labels = _size_bins(cfg, test_ds)
        for m in methods:
            per_method[m].append(results[m].report)
            run_rows.append(_run_row(network, m, run, results[m].report))
            for b, label in enumerate(size_labels):
                sel = which == b
                if sel.any():
                    size_acc.setdefault((m, label), []).append(
                        (float(results[m].top_k_hits[sel].mean()), int(sel.sum())))
        if run == 0:
            _export_examples(out / "examples.json", g, test_ds, results)

    aggregated = {m: evalkit.aggregate_runs(per_method[m]) for m in methods}
    write_csv(out / "metrics_runs.csv", _RUN_HEADER, run_rows)
    write_csv(out / "metrics_aggregate.csv", _AGG_HEADER,
              [_agg_row(network, m, aggregated[m]) for m in methods])
    write_plot_csv(out / "benchmark_plot.csv", [
        (network, m, aggregated[m].top_k_accuracy, aggregated[m].ci_top_k)
        for m in methods])

    size_rows = []
    for (m, label), vals in sorted(size_acc.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        accs = [a for a, _ in vals]
        counts = sum(c for _, c in vals)
        ci = evalkit._t_halfwidth(accs) if len(accs) > 1 else float("nan")
        size_rows.append([network, m, label, float(np.mean(accs)), ci, counts])
    write_csv(out / "size_breakdown.csv",
              ["network", "method", "size_bin", "top_k_accuracy", "ci", "n_cases"],
              size_rows)

    if figures:
        from . import plots
        plots.benchmark_figure(out / "benchmark_top5.png", methods, aggregated)
        plots.size_breakdown_figure(out / "size_breakdown.png", size_labels,
                                    methods, size_rows)
        curves_path = out / "learning_curves.csv"
        if curves_path.exists():
            plots.learning_curves_figure(out / "learning_curves.png", curves_path)
    return {"aggregated": aggregated, "network": network}


def run_detectability(cfg: ExperimentConfig, out_dir, t_grid=None,
                      figures: bool = True) -> dict:
    """Retrain at every observation time; emit accuracy and state fractions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    g = cfg.load_graph()
    network = cfg.label()
    t_values = list(t_grid) if t_grid is not None else [
        f * cfg.t_star for f in cfg.t_grid_factors]
    if sorted(t_values) != t_values or min(t_values) <= 0:
        raise ValueError("t grid must be ascending and positive")

    rows, plot_rows = [], []
    results_by_t = {}
    for t in t_values:
        cfg_t = override(cfg, t_star=t, methods=("random", "gnn"))
        gnn_acc, rnd_acc, i_fracs, r_fracs = [], [], [], []
        for run in range(cfg.seeds):
            train_ds = train_dataset(cfg_t, g, run, cache)
            test_ds = test_dataset(cfg_t, g, run, cache)
            res = evaluate_run(cfg_t, g, ("random", "gnn"), train_ds, test_ds,
                               run, cache)
            gnn_acc.append(res["gnn"].report.top_k_accuracy)
            rnd_acc.append(res["random"].report.top_k_accuracy)
            i_fracs.append(float((test_ds.states == STATE_I).mean()))
            r_fracs.append(float((test_ds.states == STATE_R).mean()))
        entry = {
            "gnn": float(np.mean(gnn_acc)), "gnn_ci": evalkit._t_halfwidth(gnn_acc),
            "random": float(np.mean(rnd_acc)), "random_ci": evalkit._t_halfwidth(rnd_acc),
            "i_fraction": float(np.mean(i_fracs)), "r_fraction": float(np.mean(r_fracs)),
        }
        results_by_t[t] = entry
        rows.append([network, t, entry["gnn"], entry["gnn_ci"], entry["random"],
                     entry["random_ci"], entry["i_fraction"], entry["r_fraction"]])
        plot_rows += [(t, "gnn", entry["gnn"], entry["gnn_ci"]),
                      (t, "random", entry["random"], entry["random_ci"]),
                      (t, "i_fraction", entry["i_fraction"], float("nan")),
                      (t, "r_fraction", entry["r_fraction"], float("nan"))]
        log.info("detectability T=%.4g gnn=%.3f random=%.3f", t, entry["gnn"],
                 entry["random"])
    write_csv(out / "detectability.csv",
              ["network", "t", "gnn_top_k", "gnn_ci", "random_top_k", "random_ci",
               "i_fraction", "r_fraction"], rows)
    write_plot_csv(out / "detectability_plot.csv", plot_rows)
    if figures:
        from . import plots
        plots.detectability_figure(out / "detectability.png", t_values, results_by_t)
    return {"t_values": t_values, "results": results_by_t, "network": network}


def run_scaling(cfg: ExperimentConfig, out_dir, n_grid=None,
                figures: bool = True) -> dict:
    """Nested training-set sizes against a shared per-seed test suite."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    g = cfg.load_graph()
    network = cfg.label()
    grid = list(n_grid) if n_grid is not None else list(cfg.n_grid)
    if sorted(grid) != grid or min(grid) < 1:
        raise ValueError("n grid must be ascending and positive")
    methods = tuple(m for m in cfg.effective_methods if m in ("gnn", "gnn_da", "sme", "mcmf"))
    if not methods:
        raise ValueError("scaling needs at least one of gnn/sme/mcmf")

    acc: dict[tuple[int, str], list[float]] = {}
    for run in range(cfg.seeds):
        master = train_dataset(cfg, g, run, cache, n_per_source=max(grid))
        test_ds = test_dataset(cfg, g, run, cache)
        for n in grid:
            sub = master.subset_per_source(n) if n < master.n_per_source else master
            cfg_n = override(cfg, n_train_per_source=n)
            res = evaluate_run(cfg_n, g, methods, sub, test_ds, run, cache)
            for m in methods:
                acc.setdefault((n, m), []).append(res[m].report.top_k_accuracy)
            log.info("scaling n=%d run=%d %s", n, run,
                     {m: round(res[m].report.top_k_accuracy, 4) for m in methods})

    rows, plot_rows, means = [], [], {}
    for n in grid:
        for m in methods:
            vals = acc[(n, m)]
            mean, ci = float(np.mean(vals)), evalkit._t_halfwidth(vals)
            means[(n, m)] = mean
            rows.append([network, n, m, mean, ci, len(vals)])
            plot_rows.append((n, m, mean, ci))
    write_csv(out / "scaling.csv",
              ["network", "n_per_source", "method", "top_k_accuracy", "ci", "runs"],
              rows)
    write_plot_csv(out / "scaling_plot.csv", plot_rows)
    if figures:
        from . import plots
        plots.scaling_figure(out / "scaling.png", grid, methods, means)
    return {"grid": grid, "means": means, "network": network}


def run_uncertain_t(cfg: ExperimentConfig, out_dir, figures: bool = True) -> dict:
    """Fixed-T training versus uniform-(0, 4T*] training, tested at T*."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    g = cfg.load_graph()
    network = cfg.label()
    methods = tuple(m for m in cfg.effective_methods
                    if m in ("gnn", "gnn_da", "sme", "mcmf"))
    methods = methods + ("random",)

    acc: dict[tuple[str, str], list[float]] = {}
    for condition in ("fixed", "uniform4x"):
        for run in range(cfg.seeds):
            cfg_c = override(cfg, t_mode=condition)
            train_ds = train_dataset(cfg_c, g, run, cache)
            test_ds = test_dataset(cfg_c, g, run, cache)   # always fixed T*
            res = evaluate_run(cfg_c, g, methods, train_ds, test_ds, run, cache)
            for m in methods:
                acc.setdefault((condition, m), []).append(res[m].report.top_k_accuracy)

    rows, plot_rows, means = [], [], {}
    for condition in ("fixed", "uniform4x"):
        for m in methods:
            vals = acc[(condition, m)]
            mean, ci = float(np.mean(vals)), evalkit._t_halfwidth(vals)
            means[(condition, m)] = mean
            rows.append([network, condition, m, mean, ci, len(vals)])
            plot_rows.append((condition, m, mean, ci))
    write_csv(out / "uncertain_t.csv",
              ["network", "condition", "method", "top_k_accuracy", "ci", "runs"],
              rows)
    write_plot_csv(out / "uncertain_t_plot.csv", plot_rows)
    if figures:
        from . import plots
        plots.uncertain_t_figure(out / "uncertain_t.png", methods, means)
    return {"means": means, "network": network}


def run_timing(cfg: ExperimentConfig, out_dir, figures: bool = True) -> dict:
    """Wall-clock means per stage: simulation, training batch, inference."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    g = cfg.load_graph()
    network = cfg.label()
    train_ds = train_dataset(cfg, g, 0, cache)
    test_ds = test_dataset(cfg, g, 0, cache)
    timings: dict[str, float] = {}

    # simulation (warm path: dataset generation above already compiled kernels)
    n_sims = 2000
    seeds = np.array([derive_seed(1, "timing", i) for i in range(n_sims)],
                     dtype=np.uint64)
    sources = (np.arange(n_sims) % g.n).astype(np.int64)
    t_ends = np.full(n_sims, cfg.t_star)
    from ..epidemics import simulate_batch
    t0 = time.perf_counter()
    simulate_batch(g, cfg.params(), sources, t_ends, seeds)
    timings["simulation_per_run"] = (time.perf_counter() - t0) / n_sims

    if "gnn" in cfg.effective_methods:
        timings["gnn_train_per_batch"] = _time_training_batch(cfg, g, train_ds)
        bundle, _ = train_gnn(cfg, g, train_ds, 0, cache)
        stack = bundle.to_stack()
        aug = netgraph.node_feature_augmentation(g) if bundle.config.augmented else None
        n_inf = min(200, len(test_ds))
        t0 = time.perf_counter()
        for i in range(n_inf):
            nnet.forward_log_probs(stack, g, test_ds.states[i], aug)
        timings["gnn_inference_per_instance"] = (time.perf_counter() - t0) / n_inf

    if "sme" in cfg.effective_methods:
        ev = SmeEvaluator(train_ds)
        n_inf = min(50, len(test_ds))
        t0 = time.perf_counter()
        for i in range(n_inf):
            ev.posterior(test_ds.states[i], derive_seed(2, "timing-sme", i))
        timings["sme_inference_per_instance"] = (time.perf_counter() - t0) / n_inf

    if "mcmf" in cfg.effective_methods:
        t0 = time.perf_counter()
        table = estimators.mcmf_state_probs(train_ds)
        timings["mcmf_table_build"] = time.perf_counter() - t0
        table.log_probs  # force the cached log table like a warmed service would
        n_inf = min(1000, len(test_ds))
        t0 = time.perf_counter()
        for i in range(n_inf):
            estimators.mcmf_posterior(
                Snapshot(states=test_ds.states[i], observed_at=cfg.t_star), table)
        timings["mcmf_inference_per_instance"] = (time.perf_counter() - t0) / n_inf

    write_csv(out / "timing.csv", ["network", "stage", "seconds"],
              [[network, k, v] for k, v in sorted(timings.items())])
    if figures:
        from . import plots
        plots.timing_figure(out / "timing.png", timings)
    return {"timings": timings, "network": network}


def _time_training_batch(cfg: ExperimentConfig, g: netgraph.Graph,
                         train_ds: SimDataset) -> float:
    """Mean optimizer-step wall time over one warmed epoch."""
    model_cfg = cfg.model_config()
    tc = cfg.train_config()
    stack = nnet.build_stack(model_cfg, seed=0)
    opt = nnet.Adam(params=stack.named_parameters(), cfg=tc.adam())
    adj = nnet.adjacency_matrix(g)
    rng = np.random.Generator(np.random.Philox(key=derive_seed(3, "timing-train")))
    idx = np.arange(len(train_ds))
    batches = [idx[lo:lo + tc.batch_size] for lo in range(0, len(idx), tc.batch_size)]

    def one_epoch() -> float:
        start = time.perf_counter()
        for sel in batches:
            x = nnet.input_features(train_ds.states[sel])
            labels = train_ds.sources[sel].astype(np.int64)
            out = stack.forward(x, adj, training=True, rng=rng)
            loss = nnet.nll_loss(out, labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
        return time.perf_counter() - start

    one_epoch()                       # warm caches
    return one_epoch() / len(batches)
