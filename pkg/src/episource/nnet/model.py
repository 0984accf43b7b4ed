"""Detector configuration, assembly, persistence, and inference."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import netgraph
from ..epidemics import STATE_S, Snapshot, derive_seed
from ..estimators import PROBABILISTIC, SourceDistribution
from .layers import DenseLayer, LayerStack, MessagePassingLayer, OutputHead

_BUNDLE_MAGIC = b"EPIDGNN\x01"

PRE_DIMS = (16, 32, 64)
MP_DIMS = (16, 32, 64, 128)
DROPOUT_GRID = (0.0, 0.1, 0.2, 0.3)
BASE_FEATURES = 3            # one-hot S/I/R
AUGMENTED_FEATURES = 7       # + degree, betweenness, closeness, clustering


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; ranges match the tuned design space."""

    n_pre: int = 1
    pre_dim: int = 16
    n_mp: int = 3
    mp_dim: int = 16
    n_post: int = 0
    skip: bool = True
    dropout: float = 0.1
    in_features: int = BASE_FEATURES

    def __post_init__(self):
        if not 0 <= self.n_pre <= 2:
            raise ValueError("n_pre must be in [0, 2]")
        if self.n_pre > 0 and self.pre_dim not in PRE_DIMS:
            raise ValueError(f"pre_dim must be one of {PRE_DIMS}")
        if not 2 <= self.n_mp <= 8:
            raise ValueError("n_mp must be in [2, 8]")
        if self.mp_dim not in MP_DIMS:
            raise ValueError(f"mp_dim must be one of {MP_DIMS}")
        if not 0 <= self.n_post <= 2:
            raise ValueError("n_post must be in [0, 2]")
        if not 0.0 <= self.dropout <= 0.3:
            raise ValueError("dropout must be in [0, 0.3]")
        if self.in_features not in (BASE_FEATURES, AUGMENTED_FEATURES):
            raise ValueError("in_features must be 3 (states) or 7 (augmented)")

    @property
    def augmented(self) -> bool:
        return self.in_features == AUGMENTED_FEATURES

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def build_stack(cfg: ModelConfig, seed: int) -> LayerStack:
    """Seeded construction; parameter shapes derive from the config alone."""
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "init")))
    stack = LayerStack(skip=cfg.skip, dropout_rate=cfg.dropout)
    width = cfg.in_features
    for _ in range(cfg.n_pre):
        stack.pre.append(DenseLayer.init(rng, width, cfg.pre_dim))
        width = cfg.pre_dim
    for _ in range(cfg.n_mp):
        stack.mp.append(MessagePassingLayer.init(rng, width, cfg.mp_dim))
        width = cfg.mp_dim
    for _ in range(cfg.n_post):
        stack.post.append(DenseLayer.init(rng, width, cfg.mp_dim))
        width = cfg.mp_dim
    head_in = width + (cfg.in_features if cfg.skip else 0)
    stack.head = OutputHead.init(rng, head_in)
    return stack


def adjacency_matrix(g: netgraph.Graph) -> np.ndarray:
    adj = np.zeros((g.n, g.n))
    for v in range(g.n):
        adj[v, g.neighbors(v)] = 1.0
    return adj


def input_features(states: np.ndarray, aug: np.ndarray | None = None) -> np.ndarray:
    """One-hot node states (B, N, 3), optionally with static topology columns."""
    if states.ndim == 1:
        states = states[None, :]
    one_hot = np.eye(3)[states.astype(np.int64)]
    if aug is None:
        return one_hot
    tiled = np.broadcast_to(aug, (states.shape[0],) + aug.shape)
    return np.concatenate([one_hot, tiled], axis=-1)


@dataclass
class TrainMeta:
    """Provenance recorded alongside learned parameters."""

    seed: int = 0
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("nan")
    final_train_loss: float = float("nan")
    data_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelBundle:
    """Config + learned parameters + buffers, persistable and reloadable."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    meta: TrainMeta = field(default_factory=TrainMeta)

    @classmethod
    def from_stack(cls, cfg: ModelConfig, stack: LayerStack,
                   meta: TrainMeta | None = None) -> "ModelBundle":
        params = {k: v.data.copy() for k, v in stack.named_parameters()}
        buffers = {k: v.copy() for k, v in stack.named_buffers()}
        return cls(config=cfg, params=params, buffers=buffers,
                   meta=meta or TrainMeta())

    def to_stack(self) -> LayerStack:
        stack = build_stack(self.config, seed=0)
        for name, tensor in stack.named_parameters():
            src = self.params[name]
            if src.shape != tensor.data.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {tensor.data.shape}")
            tensor.data = src.copy()
        for name, _ in stack.named_buffers():
            stack.set_buffer(name, self.buffers[name])
        return stack

    def save(self, path) -> None:
        names = sorted(self.params) + sorted(self.buffers)
        header = json.dumps({
            "config": self.config.to_dict(),
            "meta": self.meta.to_dict(),
            "params": sorted(self.params),
            "buffers": sorted(self.buffers),
            "shapes": {n: list((self.params | self.buffers)[n].shape) for n in names},
        }).encode()
        with open(path, "wb") as f:
            f.write(_BUNDLE_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for n in names:
                f.write(np.ascontiguousarray(
                    (self.params | self.buffers)[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:len(_BUNDLE_MAGIC)] != _BUNDLE_MAGIC:
            raise ValueError("not a model bundle file")
        off = len(_BUNDLE_MAGIC)
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = json.loads(blob[off:off + hlen].decode())
        off += hlen
        arrays: dict[str, np.ndarray] = {}
        for n in header["params"] + header["buffers"]:
            shape = tuple(header["shapes"][n])
            count = int(np.prod(shape)) if shape else 1
            arrays[n] = np.frombuffer(blob, dtype="<f8", count=count,
                                      offset=off).reshape(shape).copy()
            off += count * 8
        if off != len(blob):
            raise ValueError("model bundle has trailing or missing bytes")
        meta = TrainMeta(**header["meta"])
        return cls(config=ModelConfig.from_dict(header["config"]),
                   params={n: arrays[n] for n in header["params"]},
                   buffers={n: arrays[n] for n in header["buffers"]},
                   meta=meta)


def forward_log_probs(stack: LayerStack, g: netgraph.Graph, states: np.ndarray,
                      aug: np.ndarray | None = None, chunk: int = 1024) -> np.ndarray:
    """Eval-mode log-probabilities for a batch of snapshots, (M, N)."""
    adj = adjacency_matrix(g)
    if states.ndim == 1:
        states = states[None, :]
    out = np.empty((states.shape[0], g.n))
    for lo in range(0, states.shape[0], chunk):
        x = input_features(states[lo:lo + chunk], aug)
        out[lo:lo + chunk] = stack.forward(x, adj, training=False).data
    return out


def predict(bundle: ModelBundle, g: netgraph.Graph, snapshot: Snapshot,
            mask_susceptible: bool = True) -> SourceDistribution:
    """Eval-mode posterior for one snapshot.

    Susceptible nodes are zeroed and the rest renormalized so the output is
    comparable with the simulation-based estimators; pass
    mask_susceptible=False for the raw softmax output.
    """
    aug = netgraph.node_feature_augmentation(g) if bundle.config.augmented else None
    log_probs = forward_log_probs(bundle.to_stack(), g, snapshot.states, aug)[0]
    probs = np.exp(log_probs)
    if mask_susceptible:
        probs = np.where(snapshot.states != STATE_S, probs, 0.0)
        total = probs.sum()
        if total <= 0.0:
            probs = (snapshot.states != STATE_S).astype(np.float64)
            total = probs.sum()
        probs = probs / total
    return SourceDistribution(kind=PROBABILISTIC, scores=probs)
