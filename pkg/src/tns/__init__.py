"""Time-aware and expanded neighbor sampling for temporal graph networks."""
from .graph_store import TemporalGraph, load_csv, write_csv
from .model import ModelConfig, TemporalEmbedder, init_params
from .sampler import Strategy

__version__ = "0.1.0"

__all__ = ["TemporalGraph", "load_csv", "write_csv", "ModelConfig", "TemporalEmbedder",
           "init_params", "Strategy"]
