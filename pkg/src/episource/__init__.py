"""Epidemic source detection toolkit.

Simulate SIR/SI outbreaks on static networks, train a message-passing
neural detector on them, run classical estimators on the same data, and
evaluate everything with a shared metric kit.
"""

from . import epidemics, estimators, evalkit, harness, netgraph, nnet
from .epidemics import (EpidemicParams, FixedDuration, OutbreakRecord,
                        SimDataset, Snapshot, UniformDuration,
                        calibrate_duration, generate_dataset, load_dataset,
                        save_dataset, simulate)
from .netgraph import Graph, TopologyStats, graph_stats, load_edge_list

__version__ = "0.1.0"

__all__ = [
    "epidemics", "estimators", "evalkit", "harness", "netgraph", "nnet",
    "EpidemicParams", "FixedDuration", "OutbreakRecord", "SimDataset",
    "Snapshot", "UniformDuration", "calibrate_duration", "generate_dataset",
    "load_dataset", "save_dataset", "simulate", "Graph", "TopologyStats",
    "graph_stats", "load_edge_list", "__version__",
]
