"""Finite Markov chains, chain reductions, potential theory and metastability checks."""

from .chain import (
    Chain,
    Measure,
    Trajectory,
    build_chain,
    occupation_time,
    stationary,
    transient_distribution,
    tv_distance,
)
from .metastability import ConditionReport, Partition
from .models import ModelInstance, ModelSpec, build_model
from .potential import capacity, hitting_prob_bound, mixing_time, spectral_gap
from .reductions import enlarge_chain, reflected_chain, trace_chain, trace_surgery

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "Measure",
    "Trajectory",
    "build_chain",
    "stationary",
    "transient_distribution",
    "tv_distance",
    "occupation_time",
    "trace_chain",
    "reflected_chain",
    "enlarge_chain",
    "trace_surgery",
    "capacity",
    "spectral_gap",
    "mixing_time",
    "hitting_prob_bound",
    "Partition",
    "ConditionReport",
    "ModelSpec",
    "ModelInstance",
    "build_model",
]
