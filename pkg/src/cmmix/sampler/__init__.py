from ..rng import KeyedRng
from .sweep import ChainConfig, Draws, gibbs_sweep, run_chain
from . import diagnostics, updates

__all__ = ["KeyedRng", "ChainConfig", "Draws", "gibbs_sweep", "run_chain",
           "diagnostics", "updates"]
