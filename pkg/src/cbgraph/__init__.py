"""Contextual bandits with graph feedback: graph quantities, exploration games, elimination policies."""
from .graph import FeedbackGraph, read_graph, write_graph
from .quantities import QuantityReport

__version__ = "0.1.0"

__all__ = ["FeedbackGraph", "QuantityReport", "read_graph", "write_graph", "__version__"]
