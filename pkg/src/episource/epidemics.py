"""Continuous-time SIR/SI outbreak simulation and labeled dataset generation.

Two independent engines ship: a fast event-driven simulator built on a binary
min-heap of tentative infection events (the production path), and a slow
first-reaction simulator that redraws every competing clock at each step
(used as a cross-checking oracle in tests). Both consume a counter-based
splittable RNG so that every record is reproducible in isolation.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .netgraph import Graph, is_connected

STATE_S = 0
STATE_I = 1
STATE_R = 2
STATE_NAMES = ("S", "I", "R")

_MAGIC = b"EPIDSET\x01"
_FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Corrupt, truncated, or wrong-version dataset file."""


class DatasetMismatchError(ValueError):
    """Dataset does not belong to the supplied graph."""


class CalibrationError(RuntimeError):
    """Target infected fraction is unreachable; carries the achievable max."""

    def __init__(self, message: str, max_achievable: float):
        super().__init__(message)
        self.max_achievable = max_achievable


@dataclass(frozen=True)
class EpidemicParams:
    """Per-edge infection rate and recovery rate; mu = 0 selects SI."""

    beta: float
    mu: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")


@dataclass(frozen=True)
class FixedDuration:
    """Every record observed at the same elapsed time."""

    value: float

    def __post_init__(self):
        if not (self.value > 0):
            raise ValueError("duration must be positive")


@dataclass(frozen=True)
class UniformDuration:
    """Per-record elapsed time drawn i.i.d. uniform on (0, upper]."""

    upper: float

    def __post_init__(self):
        if not (self.upper > 0):
            raise ValueError("duration upper bound must be positive")


@dataclass(frozen=True)
class Snapshot:
    """Full node-state vector observed at one instant."""

    states: np.ndarray      # uint8 in {S, I, R}
    observed_at: float

    @property
    def non_susceptible(self) -> np.ndarray:
        return self.states != STATE_S

    @property
    def infected_count(self) -> int:
        return int(np.count_nonzero(self.states != STATE_S))

    def validate(self, params: EpidemicParams | None = None) -> None:
        if self.infected_count == 0:
            raise ValueError("snapshot has no infected node; the source was infected")
        if params is not None and params.mu == 0 and np.any(self.states == STATE_R):
            raise ValueError("recovered nodes present under mu = 0")


@dataclass(frozen=True)
class OutbreakRecord:
    """One labeled instance: true source, elapsed time, snapshot, seed."""

    source: int
    duration: float
    snapshot: Snapshot
    rng_seed: int

    def __post_init__(self):
        if not (self.duration > 0):
            raise ValueError("duration must be positive")
        if self.snapshot.states[self.source] == STATE_S:
            raise ValueError("source must be infected or recovered in its snapshot")


# ---------------------------------------------------------------------------
# Counter-based RNG (splitmix64) and jitted simulation kernels
# ---------------------------------------------------------------------------

_U64_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_U64_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


def derive_seed(*parts) -> int:
    """Stable 64-bit stream key from arbitrary tag parts."""
    h = hashlib.blake2b(b"|".join(str(p).encode() for p in parts), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@njit(inline="always")
def _next_u64(s):
    s = s + _U64_GOLDEN
    z = s
    z = (z ^ (z >> np.uint64(30))) * _U64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U64_MIX2
    return s, z ^ (z >> np.uint64(31))


@njit(inline="always")
def _next_exp(s, rate):
    """Inverse-CDF exponential draw; u in (0, 1] so the draw is finite."""
    s, z = _next_u64(s)
    u = (np.float64(z >> np.uint64(11)) + 1.0) * _INV_2_53
    return s, -math.log(u) / rate


@njit(inline="always")
def _heap_push(heap_t, heap_v, size, t, v):
    i = size
    heap_t[i] = t
    heap_v[i] = v
    while i > 0:
        parent = (i - 1) >> 1
        if heap_t[parent] <= heap_t[i]:
            break
        heap_t[parent], heap_t[i] = heap_t[i], heap_t[parent]
        heap_v[parent], heap_v[i] = heap_v[i], heap_v[parent]
        i = parent
    return size + 1


@njit(inline="always")
def _heap_pop(heap_t, heap_v, size):
    t = heap_t[0]
    v = heap_v[0]
    size -= 1
    heap_t[0] = heap_t[size]
    heap_v[0] = heap_v[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and heap_t[left] < heap_t[smallest]:
            smallest = left
        if right < size and heap_t[right] < heap_t[smallest]:
            smallest = right
        if smallest == i:
            break
        heap_t[smallest], heap_t[i] = heap_t[i], heap_t[smallest]
        heap_v[smallest], heap_v[i] = heap_v[i], heap_v[smallest]
        i = smallest
    return t, v, size


@njit(cache=True)
def _run_event_driven(indptr, indices, weights, beta, mu, source, t_end, seed,
                      states, tentative, recovery, heap_t, heap_v):
    n = states.shape[0]
    for v in range(n):
        states[v] = STATE_S
        tentative[v] = np.inf
        recovery[v] = np.inf
    rng = seed
    size = _heap_push(heap_t, heap_v, 0, 0.0, source)
    tentative[source] = 0.0
    while size > 0:
        t, v, size = _heap_pop(heap_t, heap_v, size)
        if t > t_end:
            break
        if states[v] != STATE_S:
            continue  # superseded by an earlier tentative event
        states[v] = STATE_I
        rec = np.inf
        if mu > 0.0:
            rng, dt = _next_exp(rng, mu)
            rec = t + dt
        recovery[v] = rec
        # draws happen for every neighbor so RNG consumption does not depend
        # on t_end; pushes are filtered afterwards
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            rng, dt = _next_exp(rng, beta * weights[j])
            tu = t + dt
            if tu < rec and tu <= t_end and tu < tentative[u]:
                tentative[u] = tu
                size = _heap_push(heap_t, heap_v, size, tu, u)
    for v in range(n):
        if states[v] == STATE_I and recovery[v] <= t_end:
            states[v] = STATE_R


@njit(cache=True)
def _run_event_driven_batch(indptr, indices, weights, beta, mu, sources,
                            t_ends, seeds, out_states):
    n = indptr.shape[0] - 1
    tentative = np.empty(n, dtype=np.float64)
    recovery = np.empty(n, dtype=np.float64)
    cap = indices.shape[0] + 8
    heap_t = np.empty(cap, dtype=np.float64)
    heap_v = np.empty(cap, dtype=np.int64)
    for i in range(sources.shape[0]):
        _run_event_driven(indptr, indices, weights, beta, mu, sources[i],
                          t_ends[i], seeds[i], out_states[i], tentative,
                          recovery, heap_t, heap_v)


@njit(cache=True)
def _run_first_reaction(indptr, indices, weights, beta, mu, source, t_end,
                        seed, states):
    """First-reaction oracle: redraw all competing clocks every step."""
    n = states.shape[0]
    for v in range(n):
        states[v] = STATE_S
    states[source] = STATE_I
    rng = seed
    t = 0.0
    while True:
        best_dt = np.inf
        best_node = -1
        best_state = STATE_I
        for v in range(n):
            if states[v] != STATE_I:
                continue
            if mu > 0.0:
                rng, dt = _next_exp(rng, mu)
                if dt < best_dt:
                    best_dt = dt
                    best_node = v
                    best_state = STATE_R
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                if states[u] != STATE_S:
                    continue
                rng, dt = _next_exp(rng, beta * weights[j])
                if dt < best_dt:
                    best_dt = dt
                    best_node = u
                    best_state = STATE_I
        if best_node < 0:
            break
        t = t + best_dt
        if t > t_end:
            break
        states[best_node] = best_state


@njit(cache=True)
def _run_first_reaction_batch(indptr, indices, weights, beta, mu, sources,
                              t_ends, seeds, out_states):
    for i in range(sources.shape[0]):
        _run_first_reaction(indptr, indices, weights, beta, mu, sources[i],
                            t_ends[i], seeds[i], out_states[i])


# ---------------------------------------------------------------------------
# Public simulation API
# ---------------------------------------------------------------------------

def _as_u64(seed: int) -> np.uint64:
    return np.uint64(seed & 0xFFFFFFFFFFFFFFFF)


def simulate(g: Graph, params: EpidemicParams, source: int, t_end: float,
             seed: int) -> Snapshot:
    """Exact continuous-time SIR sample at `t_end` from the event-driven engine."""
    g.validate_node(source)
    if not (t_end > 0):
        raise ValueError("t_end must be positive")
    sources = np.array([source], dtype=np.int64)
    t_ends = np.array([t_end], dtype=np.float64)
    seeds = np.array([_as_u64(seed)], dtype=np.uint64)
    out = np.empty((1, g.n), dtype=np.uint8)
    _run_event_driven_batch(g.indptr, g.indices, g.weights, params.beta,
                            params.mu, sources, t_ends, seeds, out)
    return Snapshot(states=out[0], observed_at=float(t_end))


def simulate_batch(g: Graph, params: EpidemicParams, sources: np.ndarray,
                   t_ends: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Vectorized multi-record front door; returns (M, N) uint8 states."""
    out = np.empty((sources.shape[0], g.n), dtype=np.uint8)
    _run_event_driven_batch(g.indptr, g.indices, g.weights, params.beta,
                            params.mu, sources.astype(np.int64),
                            t_ends.astype(np.float64),
                            seeds.astype(np.uint64), out)
    return out


def simulate_first_reaction(g: Graph, params: EpidemicParams, source: int,
                            t_end: float, seed: int) -> Snapshot:
    """Reference sample from the slow first-reaction oracle."""
    g.validate_node(source)
    if not (t_end > 0):
        raise ValueError("t_end must be positive")
    out = np.empty((1, g.n), dtype=np.uint8)
    _run_first_reaction_batch(g.indptr, g.indices, g.weights, params.beta,
                              params.mu, np.array([source], dtype=np.int64),
                              np.array([t_end], dtype=np.float64),
                              np.array([_as_u64(seed)], dtype=np.uint64), out)
    return Snapshot(states=out[0], observed_at=float(t_end))


def simulate_first_reaction_batch(g: Graph, params: EpidemicParams,
                                  sources: np.ndarray, t_ends: np.ndarray,
                                  seeds: np.ndarray) -> np.ndarray:
    out = np.empty((sources.shape[0], g.n), dtype=np.uint8)
    _run_first_reaction_batch(g.indptr, g.indices, g.weights, params.beta,
                              params.mu, sources.astype(np.int64),
                              t_ends.astype(np.float64),
                              seeds.astype(np.uint64), out)
    return out


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class SimDataset:
    """Balanced collection of outbreak records for one graph.

    Records are stored struct-of-arrays, grouped by source with a per-source
    counter, so any per-source prefix is itself a valid smaller dataset.
    """

    graph_hash: str
    params: EpidemicParams
    t_spec: FixedDuration | UniformDuration
    n_per_source: int
    sources: np.ndarray       # int32 (M,)
    durations: np.ndarray     # float64 (M,)
    seeds: np.ndarray         # uint64 (M,)
    states: np.ndarray        # uint8 (M, N)

    def __len__(self) -> int:
        return self.sources.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.states.shape[1]

    def record(self, i: int) -> OutbreakRecord:
        return OutbreakRecord(
            source=int(self.sources[i]),
            duration=float(self.durations[i]),
            snapshot=Snapshot(states=self.states[i], observed_at=float(self.durations[i])),
            rng_seed=int(self.seeds[i]),
        )

    def records_of_source(self, q: int) -> slice:
        start = int(np.searchsorted(self.sources, q, side="left"))
        stop = int(np.searchsorted(self.sources, q, side="right"))
        return slice(start, stop)

    def subset_per_source(self, n: int) -> "SimDataset":
        """First n records of every source (prefix property)."""
        if not (1 <= n <= self.n_per_source):
            raise ValueError(f"n must be in [1, {self.n_per_source}]")
        keep = np.concatenate([
            np.arange(q * self.n_per_source, q * self.n_per_source + n)
            for q in range(self.n_nodes)
        ])
        return SimDataset(
            graph_hash=self.graph_hash, params=self.params, t_spec=self.t_spec,
            n_per_source=n, sources=self.sources[keep],
            durations=self.durations[keep], seeds=self.seeds[keep],
            states=self.states[keep],
        )

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.graph_hash.encode())
        h.update(struct.pack("<ddI", self.params.beta, self.params.mu, self.n_per_source))
        h.update(self.sources.tobytes())
        h.update(self.durations.tobytes())
        h.update(self.states.tobytes())
        return h.hexdigest()


def generate_dataset(g: Graph, params: EpidemicParams, n_per_source: int,
                     t_spec: FixedDuration | UniformDuration,
                     master_seed: int) -> SimDataset:
    """n_per_source independent outbreaks from every node as source.

    Per-record seeds derive from (master_seed, source, counter), so the i-th
    record of a source is the same regardless of n_per_source.
    """
    if n_per_source < 1:
        raise ValueError("n_per_source must be >= 1")
    if not is_connected(g):
        raise ValueError("dataset generation requires a connected graph")
    m = g.n * n_per_source
    sources = np.repeat(np.arange(g.n, dtype=np.int32), n_per_source)
    seeds = np.empty(m, dtype=np.uint64)
    durations = np.empty(m, dtype=np.float64)
    for q in range(g.n):
        for i in range(n_per_source):
            r = q * n_per_source + i
            seeds[r] = derive_seed(master_seed, "record", q, i)
            if isinstance(t_spec, FixedDuration):
                durations[r] = t_spec.value
            else:
                u = (float(derive_seed(master_seed, "duration", q, i) >> 11) + 1.0) * _INV_2_53
                durations[r] = t_spec.upper * u  # uniform on (0, upper]
    states = simulate_batch(g, params, sources.astype(np.int64), durations, seeds)
    return SimDataset(graph_hash=g.content_hash(), params=params, t_spec=t_spec,
                      n_per_source=n_per_source, sources=sources,
                      durations=durations, seeds=seeds, states=states)


def infected_fraction(states: np.ndarray, count_recovered: bool = True) -> np.ndarray:
    """Per-record fraction of non-susceptible (or only infectious) nodes."""
    if count_recovered:
        hits = states != STATE_S
    else:
        hits = states == STATE_I
    return hits.mean(axis=1)


def calibrate_duration(g: Graph, params: EpidemicParams, target_fraction: float,
                       n_probe: int = 300, seed: int = 0, tol: float = 0.02,
                       count_recovered: bool = True) -> float:
    """Bisection on T against the Monte Carlo mean infected fraction.

    Uses common random numbers across evaluations, so the mean is exactly
    nondecreasing in T when counting I and R together.
    """
    if not (0 < target_fraction < 1):
        raise ValueError("target_fraction must lie strictly between 0 and 1")
    sources = np.arange(n_probe, dtype=np.int64) % g.n
    seeds = np.array([derive_seed(seed, "calib", i) for i in range(n_probe)],
                     dtype=np.uint64)

    def mean_frac(t: float) -> float:
        t_ends = np.full(n_probe, t)
        states = simulate_batch(g, params, sources, t_ends, seeds)
        return float(infected_fraction(states, count_recovered).mean())

    lo, hi = 1e-9, 1.0 / params.beta
    f_lo = mean_frac(lo)
    if f_lo > target_fraction + tol:
        raise CalibrationError(
            f"target fraction {target_fraction} lies below the source-only "
            f"fraction {f_lo:.4f}", max_achievable=f_lo)
    f_hi = mean_frac(hi)
    prev = -1.0
    while f_hi + tol < target_fraction:
        if f_hi == prev:
            raise CalibrationError(
                f"target fraction {target_fraction} unreachable; "
                f"epidemic saturates at {f_hi:.4f}", max_achievable=f_hi)
        prev = f_hi
        hi *= 2.0
        f_hi = mean_frac(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = mean_frac(mid)
        if abs(f_mid - target_fraction) <= tol:
            return mid
        if f_mid < target_fraction:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    # interval collapsed without entering the tolerance band
    raise CalibrationError(
        f"bisection could not hit |mean - {target_fraction}| <= {tol}; "
        f"closest achievable near {mean_frac(0.5 * (lo + hi)):.4f}",
        max_achievable=f_hi)


def dataset_summary(ds: SimDataset, n_bins: int = 10) -> dict:
    """Mean outbreak size per observation time, JSON-ready."""
    frac_ir = infected_fraction(ds.states, count_recovered=True)
    frac_i = infected_fraction(ds.states, count_recovered=False)
    bins = []
    if isinstance(ds.t_spec, FixedDuration):
        groups = [(ds.t_spec.value, ds.t_spec.value, np.arange(len(ds)))]
    else:
        edges = np.linspace(0.0, ds.t_spec.upper, n_bins + 1)
        which = np.clip(np.searchsorted(edges, ds.durations, side="left") - 1, 0, n_bins - 1)
        groups = [(edges[b], edges[b + 1], np.flatnonzero(which == b)) for b in range(n_bins)]
    for t_lo, t_hi, idx in groups:
        if idx.size == 0:
            continue
        bins.append({
            "t_lo": float(t_lo),
            "t_hi": float(t_hi),
            "n_records": int(idx.size),
            "mean_outbreak_size": float((frac_ir[idx] * ds.n_nodes).mean()),
            "mean_infected_fraction": float(frac_ir[idx].mean()),
            "mean_infectious_fraction": float(frac_i[idx].mean()),
        })
    return {
        "n_records": len(ds),
        "n_nodes": ds.n_nodes,
        "n_per_source": ds.n_per_source,
        "beta": ds.params.beta,
        "mu": ds.params.mu,
        "t_mode": "fixed" if isinstance(ds.t_spec, FixedDuration) else "uniform",
        "bins": bins,
    }


# ---------------------------------------------------------------------------
# Binary dataset container (magic, version, graph hash, params, packed states)
# ---------------------------------------------------------------------------

def _pack_states(states: np.ndarray) -> np.ndarray:
    m, n = states.shape
    width = (n + 3) // 4
    padded = np.zeros((m, width * 4), dtype=np.uint8)
    padded[:, :n] = states
    packed = np.zeros((m, width), dtype=np.uint8)
    for k in range(4):
        packed |= padded[:, k::4] << (2 * k)
    return packed


def _unpack_states(packed: np.ndarray, n: int) -> np.ndarray:
    m, width = packed.shape
    out = np.empty((m, width * 4), dtype=np.uint8)
    for k in range(4):
        out[:, k::4] = (packed >> (2 * k)) & 0x3
    return np.ascontiguousarray(out[:, :n])


def save_dataset(ds: SimDataset, path) -> None:
    t_mode = 0 if isinstance(ds.t_spec, FixedDuration) else 1
    t_value = ds.t_spec.value if t_mode == 0 else ds.t_spec.upper
    m = len(ds)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<H", _FORMAT_VERSION))
        f.write(bytes.fromhex(ds.graph_hash))
        f.write(struct.pack("<ddBdIIQ", ds.params.beta, ds.params.mu, t_mode,
                            t_value, ds.n_per_source, ds.n_nodes, m))
        f.write(ds.sources.astype("<i4").tobytes())
        f.write(ds.durations.astype("<f8").tobytes())
        f.write(ds.seeds.astype("<u8").tobytes())
        f.write(_pack_states(ds.states).tobytes())


def load_dataset(path, graph: Graph | None = None) -> SimDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(_MAGIC) + 2 or blob[:len(_MAGIC)] != _MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic)")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<H", blob, off)
    off += 2
    if version != _FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    if len(blob) < off + 16:
        raise DatasetFormatError("truncated dataset header")
    graph_hash = blob[off:off + 16].hex()
    off += 16
    header = struct.calcsize("<ddBdIIQ")
    if len(blob) < off + header:
        raise DatasetFormatError("truncated dataset header")
    beta, mu, t_mode, t_value, n_per_source, n, m = struct.unpack_from("<ddBdIIQ", blob, off)
    off += header
    width = (n + 3) // 4
    need = m * 4 + m * 8 + m * 8 + m * width
    if len(blob) - off != need:
        raise DatasetFormatError(
            f"truncated or oversized dataset body: have {len(blob) - off} bytes, need {need}")
    sources = np.frombuffer(blob, dtype="<i4", count=m, offset=off).copy()
    off += m * 4
    durations = np.frombuffer(blob, dtype="<f8", count=m, offset=off).copy()
    off += m * 8
    seeds = np.frombuffer(blob, dtype="<u8", count=m, offset=off).copy()
    off += m * 8
    packed = np.frombuffer(blob, dtype=np.uint8, count=m * width, offset=off)
    states = _unpack_states(packed.reshape(m, width), n)
    t_spec = FixedDuration(t_value) if t_mode == 0 else UniformDuration(t_value)
    ds = SimDataset(graph_hash=graph_hash, params=EpidemicParams(beta=beta, mu=mu),
                    t_spec=t_spec, n_per_source=n_per_source, sources=sources,
                    durations=durations, seeds=seeds, states=states)
    if graph is not None and graph.content_hash() != graph_hash:
        raise DatasetMismatchError(
            f"dataset was generated for graph {graph_hash}, "
            f"got graph {graph.content_hash()}")
    return ds
