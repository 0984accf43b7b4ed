"""Training loop, early stopping, random hyperparameter search, grad check."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import netgraph
from ..epidemics import SimDataset, derive_seed
from . import autodiff as ad
from .layers import LayerStack
from .model import (AUGMENTED_FEATURES, BASE_FEATURES, MP_DIMS, PRE_DIMS,
                    DROPOUT_GRID, ModelBundle, ModelConfig, TrainMeta,
                    adjacency_matrix, build_stack, input_features)
from .optim import Adam, AdamConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.0005
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.3
    decoupled_weight_decay: bool = True

    def __post_init__(self):
        if min(self.lr, self.weight_decay, self.batch_size, self.max_epochs,
               self.patience) < 0:
            raise ValueError("train config values must be nonnegative")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, weight_decay=self.weight_decay,
                          beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                          decoupled=self.decoupled_weight_decay)


def nll_loss(log_probs: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean negative log-likelihood of the true sources."""
    labels = np.asarray(labels, dtype=np.int64)
    n = log_probs.data.shape[1]
    if labels.min() < 0 or labels.max() >= n:
        raise ValueError("label out of range")
    return ad.neg_mean(ad.gather_rows(log_probs, labels))


def stratified_split(dataset: SimDataset, val_fraction: float,
                     seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-source 70/30-style split; needs >= 2 records per source."""
    n = dataset.n_per_source
    if n < 2:
        raise ValueError("stratified split needs n_per_source >= 2")
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "split")))
    n_val = min(max(1, round(n * val_fraction)), n - 1)
    train_idx, val_idx = [], []
    for q in range(dataset.n_nodes):
        block = np.arange(q * n, (q + 1) * n)
        perm = rng.permutation(n)
        val_idx.append(block[perm[:n_val]])
        train_idx.append(block[perm[n_val:]])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def _evaluate(stack: LayerStack, adj: np.ndarray, dataset: SimDataset,
              idx: np.ndarray, aug: np.ndarray | None,
              chunk: int = 2048) -> tuple[float, float]:
    """Eval-mode mean NLL and top-1 accuracy over the indexed records."""
    total_nll = 0.0
    hits = 0
    for lo in range(0, idx.shape[0], chunk):
        sel = idx[lo:lo + chunk]
        x = input_features(dataset.states[sel], aug)
        out = stack.forward(x, adj, training=False).data
        labels = dataset.sources[sel].astype(np.int64)
        total_nll += -out[np.arange(sel.shape[0]), labels].sum()
        hits += int((out.argmax(axis=1) == labels).sum())
    return total_nll / idx.shape[0], hits / idx.shape[0]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    train_top1: float
    val_top1: float

    def as_row(self) -> list:
        return [self.epoch, self.train_loss, self.val_loss,
                self.train_top1, self.val_top1]


@dataclass
class TrainResult:
    bundle: ModelBundle
    curves: list[EpochStats] = field(default_factory=list)

    def curve_csv_rows(self) -> list[list]:
        return [["epoch", "train_loss", "val_loss", "train_top1", "val_top1"]] + [
            s.as_row() for s in self.curves]


def train(dataset: SimDataset, g: netgraph.Graph, model_cfg: ModelConfig,
          train_cfg: TrainConfig | None = None, seed: int = 0) -> TrainResult:
    """Train with early stopping; returns best-validation-loss parameters.

    Fully deterministic given `seed`: initialization, the stratified split,
    batch order, and dropout masks all derive from it.
    """
    train_cfg = train_cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    aug = netgraph.node_feature_augmentation(g) if model_cfg.augmented else None
    adj = adjacency_matrix(g)
    stack = build_stack(model_cfg, seed=seed)
    opt = Adam(params=stack.named_parameters(), cfg=train_cfg.adam())
    train_idx, val_idx = stratified_split(dataset, train_cfg.val_fraction, seed)
    order_rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "order")))
    drop_rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "dropout")))

    pre_train, pre_top1 = _evaluate(stack, adj, dataset, train_idx, aug)
    pre_val, pre_vtop1 = _evaluate(stack, adj, dataset, val_idx, aug)
    curves = [EpochStats(0, pre_train, pre_val, pre_top1, pre_vtop1)]

    best_val = np.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {}
    best_buffers: dict[str, np.ndarray] = {}
    streak = 0
    bs = train_cfg.batch_size
    epoch = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = order_rng.permutation(train_idx.shape[0])
        epoch_loss = 0.0
        epoch_hits = 0
        for b, lo in enumerate(range(0, perm.shape[0], bs)):
            sel = train_idx[perm[lo:lo + bs]]
            x = input_features(dataset.states[sel], aug)
            labels = dataset.sources[sel].astype(np.int64)
            out = stack.forward(x, adj, training=True, rng=drop_rng)
            loss = nll_loss(out, labels)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, b)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data) * sel.shape[0]
            epoch_hits += int((out.data.argmax(axis=1) == labels).sum())
        train_loss = epoch_loss / perm.shape[0]
        train_top1 = epoch_hits / perm.shape[0]
        val_loss, val_top1 = _evaluate(stack, adj, dataset, val_idx, aug)
        curves.append(EpochStats(epoch, train_loss, val_loss, train_top1, val_top1))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in stack.named_parameters()}
            best_buffers = {k: v.copy() for k, v in stack.named_buffers()}
            streak = 0
        else:
            streak += 1
            if streak >= train_cfg.patience:
                break

    meta = TrainMeta(seed=seed, epochs_run=epoch, best_epoch=best_epoch,
                     best_val_loss=float(best_val),
                     final_train_loss=curves[-1].train_loss,
                     data_hash=dataset.content_hash())
    bundle = ModelBundle(config=model_cfg, params=best_params,
                         buffers=best_buffers, meta=meta)
    return TrainResult(bundle=bundle, curves=curves)


# ---------------------------------------------------------------------------
# Random hyperparameter search over the tuned design space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    n_pre: tuple[int, ...] = (0, 1, 2)
    pre_dim: tuple[int, ...] = PRE_DIMS
    n_mp: tuple[int, ...] = tuple(range(2, 9))
    mp_dim: tuple[int, ...] = MP_DIMS
    n_post: tuple[int, ...] = (0, 1, 2)
    skip: tuple[bool, ...] = (True, False)
    dropout: tuple[float, ...] = DROPOUT_GRID

    def sample(self, rng: np.random.Generator, in_features: int) -> ModelConfig:
        pick = lambda opts: opts[int(rng.integers(len(opts)))]
        return ModelConfig(
            n_pre=pick(self.n_pre), pre_dim=pick(self.pre_dim),
            n_mp=pick(self.n_mp), mp_dim=pick(self.mp_dim),
            n_post=pick(self.n_post), skip=pick(self.skip),
            dropout=pick(self.dropout), in_features=in_features,
        )


@dataclass
class TrialLog:
    config: ModelConfig
    objective: float
    epochs_run: int


def tune(dataset: SimDataset, g: netgraph.Graph, trials: int = 50, seed: int = 0,
         space: SearchSpace | None = None, train_cfg: TrainConfig | None = None,
         in_features: int = BASE_FEATURES) -> tuple[ModelConfig, list[TrialLog]]:
    """Seeded random search; objective is the mean of the last five
    validation losses before the stop epoch (lower is better)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    space = space or SearchSpace()
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "tune")))
    logs: list[TrialLog] = []
    for t in range(trials):
        cfg = space.sample(rng, in_features)
        result = train(dataset, g, cfg, train_cfg, seed=derive_seed(seed, "trial", t))
        tail = [s.val_loss for s in result.curves[1:]][-5:]
        logs.append(TrialLog(config=cfg, objective=float(np.mean(tail)),
                             epochs_run=result.bundle.meta.epochs_run))
        log.info("trial %d/%d objective=%.4f cfg=%s", t + 1, trials,
                 logs[-1].objective, cfg)
    best = min(range(len(logs)), key=lambda i: (logs[i].objective, i))
    return logs[best].config, logs


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

GRAD_FLOOR = 0.05


def relative_grad_error(fd: float, ad: float) -> float:
    """|fd - ad| / max(|fd|, |ad|, GRAD_FLOOR).

    Central differences at h=1e-5 carry ~1e-10 cancellation noise, so a pure
    relative quotient is meaningless for near-zero true gradients (e.g. bias
    directions the per-graph softmax is invariant to); the floor makes those
    comparisons absolute instead.
    """
    return abs(fd - ad) / max(abs(fd), abs(ad), GRAD_FLOOR)


def gradient_check(model_cfg: ModelConfig, g: netgraph.Graph, seed: int = 0,
                   batch: int = 3, step: float = 1e-5) -> float:
    """Max relative error of reverse-mode grads vs central differences.

    Dropout is forced off; batch-mode statistics stay on so every layer type
    is exercised. Inputs are random continuous vectors, which keeps the
    activation kinks away from zero.
    """
    if g.n > 10:
        raise ValueError("gradient check is meant for small graphs (N <= 10)")
    cfg = replace(model_cfg, dropout=0.0)
    stack = build_stack(cfg, seed=seed)
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "gradcheck")))
    adj = adjacency_matrix(g)
    x = rng.normal(size=(batch, g.n, cfg.in_features))
    labels = rng.integers(0, g.n, size=batch)

    def loss_value() -> float:
        stacks = copy.deepcopy(stack)  # keep running stats untouched across evals
        out = stacks.forward(x, adj, training=True)
        return float(nll_loss(out, labels).data)

    out = stack.forward(x, adj, training=True)
    loss = nll_loss(out, labels)
    for _, p in stack.named_parameters():
        p.grad = None
    loss.backward()

    worst = 0.0
    for name, p in stack.named_parameters():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_value()
            flat[i] = keep - step
            down = loss_value()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            worst = max(worst, relative_grad_error(fd, gflat[i]))
    return worst
