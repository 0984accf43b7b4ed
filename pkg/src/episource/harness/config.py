"""Experiment configuration: one key = value text file per experiment."""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .. import netgraph
from ..epidemics import EpidemicParams, FixedDuration, UniformDuration
from ..nnet import AUGMENTED_FEATURES, BASE_FEATURES, ModelConfig, TrainConfig

KNOWN_METHODS = ("random", "jordan", "betweenness", "sme", "mcmf", "gnn", "gnn_da")
DEFAULT_METHODS = ("random", "jordan", "betweenness", "sme", "mcmf", "gnn")
T_MODES = ("fixed", "uniform4x")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    network: str = "karate.edges"
    name: str = ""
    beta: float = 1.3
    mu: float = 1.0
    t_star: float = 0.85
    n_train_per_source: int = 500
    n_test_per_source: int = 100
    seeds: int = 3
    master_seed: int = 0
    methods: tuple[str, ...] = DEFAULT_METHODS
    t_mode: str = "fixed"
    augmentation: bool = False
    top_k: int = 5
    # architecture
    n_pre: int = 1
    pre_dim: int = 16
    n_mp: int = 3
    mp_dim: int = 16
    n_post: int = 0
    skip: bool = True
    dropout: float = 0.1
    # experiment grids
    t_grid_factors: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
    n_grid: tuple[int, ...] = (50, 500, 5000, 10000)
    size_bin_edges: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    tune_trials: int = 50
    base_dir: str = ""           # resolution root for relative network paths

    def __post_init__(self):
        if min(self.n_train_per_source, self.n_test_per_source, self.seeds,
               self.top_k, self.tune_trials) < 1:
            raise ConfigError("counts must be >= 1")
        if not (self.t_star > 0):
            raise ConfigError("t_star must be positive")
        if self.t_mode not in T_MODES:
            raise ConfigError(f"t_mode must be one of {T_MODES}")
        unknown = set(self.methods) - set(KNOWN_METHODS)
        if unknown:
            raise ConfigError(f"unknown methods: {sorted(unknown)}")
        if list(self.t_grid_factors) != sorted(self.t_grid_factors):
            raise ConfigError("t_grid_factors must ascend")
        if list(self.n_grid) != sorted(self.n_grid):
            raise ConfigError("n_grid must ascend")

    @property
    def effective_methods(self) -> tuple[str, ...]:
        methods = list(self.methods)
        if self.augmentation and "gnn_da" not in methods and "gnn" in methods:
            methods.append("gnn_da")
        return tuple(methods)

    def params(self) -> EpidemicParams:
        return EpidemicParams(beta=self.beta, mu=self.mu)

    def duration_spec(self, mode: str | None = None):
        mode = mode or self.t_mode
        if mode == "fixed":
            return FixedDuration(self.t_star)
        return UniformDuration(4.0 * self.t_star)

    def model_config(self, augmented: bool = False) -> ModelConfig:
        return ModelConfig(
            n_pre=self.n_pre, pre_dim=self.pre_dim, n_mp=self.n_mp,
            mp_dim=self.mp_dim, n_post=self.n_post, skip=self.skip,
            dropout=self.dropout,
            in_features=AUGMENTED_FEATURES if augmented else BASE_FEATURES)

    def train_config(self) -> TrainConfig:
        return TrainConfig()

    def network_path(self) -> Path:
        p = Path(self.network)
        if p.is_absolute() and p.exists():
            return p
        if self.base_dir:
            local = Path(self.base_dir) / p
            if local.exists():
                return local
        if p.exists():
            return p
        builtin = resources.files("episource.data") / p.name
        if builtin.is_file():
            return Path(str(builtin))
        raise ConfigError(f"network file not found: {self.network}")

    def load_graph(self) -> netgraph.Graph:
        return netgraph.load_edge_list_file(self.network_path())

    def label(self) -> str:
        return self.name or Path(self.network).stem


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}

_FIELD_PARSERS = {
    "network": str,
    "name": str,
    "beta": float,
    "mu": float,
    "t_star": float,
    "n_train_per_source": int,
    "n_test_per_source": int,
    "seeds": int,
    "master_seed": int,
    "methods": lambda s: tuple(tok.strip() for tok in s.split(",") if tok.strip()),
    "t_mode": str,
    "augmentation": lambda s: _parse_bool(s),
    "top_k": int,
    "n_pre": int,
    "pre_dim": int,
    "n_mp": int,
    "mp_dim": int,
    "n_post": int,
    "skip": lambda s: _parse_bool(s),
    "dropout": float,
    "t_grid_factors": lambda s: tuple(float(tok) for tok in s.split(",") if tok.strip()),
    "n_grid": lambda s: tuple(int(tok) for tok in s.split(",") if tok.strip()),
    "size_bin_edges": lambda s: tuple(float(tok) for tok in s.split(",") if tok.strip()),
    "tune_trials": int,
}


def _parse_bool(s: str) -> bool:
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {s!r}") from None


def parse_config(text: str, base_dir: str = "") -> ExperimentConfig:
    values: dict = {"base_dir": base_dir}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _FIELD_PARSERS[key](val)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=str(path.parent))


def builtin_config(name: str) -> ExperimentConfig:
    """Shipped per-network defaults, e.g. builtin_config('karate')."""
    res = resources.files("episource.data") / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"no builtin config named {name!r}")
    return parse_config(res.read_text(encoding="utf-8"))


def override(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(cfg, **kwargs)
