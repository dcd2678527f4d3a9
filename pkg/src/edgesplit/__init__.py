"""Simulation and control of transformer inference split between an edge device and a cloud."""

from .workload import ModelSpec, build_model_spec, WorkloadConfig, SeqLenDist
from .partition import PartitionPlan, LayerPartition, edge_only, cloud_only, layer_split, validate
from .cost import CostModel, CostBreakdown, get_device, QuantConfig
from .network import NetworkState, make_scenario, static_scenario, NetworkProcess
from .lyapunov import LyapunovConfig
from .policy import (Controller, CostWeights, GreedyDPPController, ConstantController, RandomController,
                     Infeasible, baseline, build_candidates, greedy_dpp_decide)
from .sim import EpisodeConfig, run_episode, execute_partition, percentiles, stability_probe, MetricsReport

__version__ = "0.1.0"

__all__ = [
    "ModelSpec", "build_model_spec", "WorkloadConfig", "SeqLenDist",
    "PartitionPlan", "LayerPartition", "edge_only", "cloud_only", "layer_split", "validate",
    "CostModel", "CostBreakdown", "get_device", "QuantConfig",
    "NetworkState", "make_scenario", "static_scenario", "NetworkProcess",
    "LyapunovConfig",
    "Controller", "CostWeights", "GreedyDPPController", "ConstantController", "RandomController",
    "Infeasible", "baseline", "build_candidates", "greedy_dpp_decide",
    "EpisodeConfig", "run_episode", "execute_partition", "percentiles", "stability_probe", "MetricsReport",
]
