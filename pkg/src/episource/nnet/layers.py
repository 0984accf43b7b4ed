"""Layer parameter containers, initialization, and forward functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Linear:
    weight: Tensor        # (in, out)
    bias: Tensor | None   # (out,)

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, bias: bool = True) -> "Linear":
        w = Tensor(_uniform_fan_in(rng, n_in, (n_in, n_out)), requires_grad=True)
        b = Tensor(_uniform_fan_in(rng, n_in, (n_out,)), requires_grad=True) if bias else None
        return cls(weight=w, bias=b)

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return ad.add(y, self.bias) if self.bias is not None else y


@dataclass
class BatchNorm:
    """Per-channel normalization over all nodes of all graphs in a batch."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def init(cls, dim: int) -> "BatchNorm":
        return cls(gamma=Tensor(np.ones(dim), requires_grad=True),
                   beta=Tensor(np.zeros(dim), requires_grad=True),
                   running_mean=np.zeros(dim), running_var=np.ones(dim))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            m = ad.mean(x, axis=(0, 1), keepdims=True)
            centered = ad.sub(x, m)
            var = ad.mean(ad.square(centered), axis=(0, 1), keepdims=True)
            norm = ad.div(centered, ad.sqrt(ad.add(var, BN_EPS)))
            count = x.data.shape[0] * x.data.shape[1]
            unbiased = var.data.reshape(-1) * count / max(count - 1, 1)
            self.running_mean = ((1 - BN_MOMENTUM) * self.running_mean
                                 + BN_MOMENTUM * m.data.reshape(-1))
            self.running_var = ((1 - BN_MOMENTUM) * self.running_var
                                + BN_MOMENTUM * unbiased)
        else:
            scale = 1.0 / np.sqrt(self.running_var + BN_EPS)
            norm = ad.mul(ad.sub(x, self.running_mean), scale)
        return ad.add(ad.mul(norm, self.gamma), self.beta)


@dataclass
class DenseLayer:
    """Linear -> BatchNorm -> PReLU, the pre/postprocessing building block."""

    lin: Linear
    bn: BatchNorm | None
    slope: Tensor         # single learnable PReLU slope

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, use_bn: bool = True) -> "DenseLayer":
        return cls(lin=Linear.init(rng, n_in, n_out),
                   bn=BatchNorm.init(n_out) if use_bn else None,
                   slope=Tensor(np.array([PRELU_INIT]), requires_grad=True))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.lin(x)
        if self.bn is not None:
            h = self.bn(h, training)
        return ad.prelu(h, self.slope)


@dataclass
class MessagePassingLayer:
    """h'_v = PReLU(BN(W1 h_v + W2 sum_{u in N(v)} h_u + b))."""

    w_self: Tensor        # (in, out)
    w_nbr: Tensor         # (in, out)
    bias: Tensor          # (out,)
    bn: BatchNorm | None
    slope: Tensor

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, use_bn: bool = True) -> "MessagePassingLayer":
        return cls(
            w_self=Tensor(_uniform_fan_in(rng, n_in, (n_in, n_out)), requires_grad=True),
            w_nbr=Tensor(_uniform_fan_in(rng, n_in, (n_in, n_out)), requires_grad=True),
            bias=Tensor(_uniform_fan_in(rng, n_in, (n_out,)), requires_grad=True),
            bn=BatchNorm.init(n_out) if use_bn else None,
            slope=Tensor(np.array([PRELU_INIT]), requires_grad=True),
        )

    def __call__(self, x: Tensor, adjacency: Tensor, training: bool) -> Tensor:
        agg = ad.matmul(adjacency, x)   # sum aggregation over neighbors
        h = ad.add(ad.add(ad.matmul(x, self.w_self), ad.matmul(agg, self.w_nbr)),
                   self.bias)
        if self.bn is not None:
            h = self.bn(h, training)
        return ad.prelu(h, self.slope)


@dataclass
class OutputHead:
    """Scalar score per node over [h ∥ x] (or h), then per-graph log-softmax."""

    lin: Linear

    @classmethod
    def init(cls, rng, n_in: int) -> "OutputHead":
        return cls(lin=Linear.init(rng, n_in, 1))

    def __call__(self, h: Tensor, x_input: Tensor | None,
                 segments: list[tuple[int, int]] | None = None) -> Tensor:
        z = ad.concat([h, x_input], axis=-1) if x_input is not None else h
        scores = ad.reshape(self.lin(z), z.data.shape[:-1])    # (B, N)
        if segments is None:
            return ad.log_softmax(scores, axis=1)
        parts = [ad.log_softmax(ad.slice_axis1(scores, lo, hi), axis=1)
                 for lo, hi in segments]
        return ad.concat(parts, axis=1)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if p <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, mask)


@dataclass
class LayerStack:
    """The full detector: pre layers, message passing, post layers, head."""

    pre: list[DenseLayer] = field(default_factory=list)
    mp: list[MessagePassingLayer] = field(default_factory=list)
    post: list[DenseLayer] = field(default_factory=list)
    head: OutputHead | None = None
    skip: bool = False
    dropout_rate: float = 0.0

    def forward(self, x: np.ndarray, adjacency: np.ndarray,
                training: bool = False, rng: np.random.Generator | None = None,
                segments: list[tuple[int, int]] | None = None) -> Tensor:
        """Log-probabilities (B, N) for node features x (B, N, F)."""
        x_t = Tensor(x)
        adj_t = Tensor(adjacency)
        h = x_t
        use_dropout = training and self.dropout_rate > 0.0
        for layer in self.pre:
            h = layer(h, training)
            if use_dropout:
                h = dropout(h, self.dropout_rate, rng)
        for layer in self.mp:
            h = layer(h, adj_t, training)
            if use_dropout:
                h = dropout(h, self.dropout_rate, rng)
        for layer in self.post:
            h = layer(h, training)
            if use_dropout:
                h = dropout(h, self.dropout_rate, rng)
        return self.head(h, x_t if self.skip else None, segments=segments)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []

        def dense(prefix: str, layer: DenseLayer):
            out.append((f"{prefix}.weight", layer.lin.weight))
            out.append((f"{prefix}.bias", layer.lin.bias))
            if layer.bn is not None:
                out.append((f"{prefix}.bn.gamma", layer.bn.gamma))
                out.append((f"{prefix}.bn.beta", layer.bn.beta))
            out.append((f"{prefix}.slope", layer.slope))

        for i, layer in enumerate(self.pre):
            dense(f"pre{i}", layer)
        for i, layer in enumerate(self.mp):
            out.append((f"mp{i}.w_self", layer.w_self))
            out.append((f"mp{i}.w_nbr", layer.w_nbr))
            out.append((f"mp{i}.bias", layer.bias))
            if layer.bn is not None:
                out.append((f"mp{i}.bn.gamma", layer.bn.gamma))
                out.append((f"mp{i}.bn.beta", layer.bn.beta))
            out.append((f"mp{i}.slope", layer.slope))
        for i, layer in enumerate(self.post):
            dense(f"post{i}", layer)
        out.append(("head.weight", self.head.lin.weight))
        out.append(("head.bias", self.head.lin.bias))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out: list[tuple[str, np.ndarray]] = []
        for name, group in (("pre", self.pre), ("mp", self.mp), ("post", self.post)):
            for i, layer in enumerate(group):
                if layer.bn is not None:
                    out.append((f"{name}{i}.bn.running_mean", layer.bn.running_mean))
                    out.append((f"{name}{i}.bn.running_var", layer.bn.running_var))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        group, _, rest = name.partition(".")
        kind = group.rstrip("0123456789")
        idx = int(group[len(kind):])
        layer = {"pre": self.pre, "mp": self.mp, "post": self.post}[kind][idx]
        if rest == "bn.running_mean":
            layer.bn.running_mean = value.copy()
        elif rest == "bn.running_var":
            layer.bn.running_var = value.copy()
        else:
            raise KeyError(name)
