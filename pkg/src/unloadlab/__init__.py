"""unloadlab: paired LV mesh generation with a Fung FE engine and a
cycle-consistent graph-attention surrogate for unloaded-shape prediction."""

__version__ = "0.1.0"
