"""Simulator for collaborative semantic caching with early-exit inference."""
from .cachemath import AccumulatorState, HitDecision, accumulate, cosine_similarity, discriminative_score, hit_test
from .config import Scenario, load_scenario, scenario_from
from .costs import CostProfile, RunMetrics, aggregate, cache_size, calibrate_default_costs, expected_latency
from .engine import run_round, run_scenario
from .errors import ConfigError, ValidationError
from .lookup import BACKEND

__version__ = "0.1.0"

__all__ = [
    "AccumulatorState", "HitDecision", "accumulate", "cosine_similarity", "discriminative_score", "hit_test",
    "Scenario", "load_scenario", "scenario_from", "CostProfile", "RunMetrics", "aggregate", "cache_size",
    "calibrate_default_costs", "expected_latency", "run_round", "run_scenario", "ConfigError",
    "ValidationError", "BACKEND",
]
