"""Concept factorization with self-representation and an adaptive graph."""
__version__ = "0.1.0"

from .factorize import (FitDivergence, FitResult, Hyperparams, Variant, fit, init_state,
                        kkt_residuals, objective)
from .graph import AffinityGraph, build_graph
from .matrix import DataMatrix, LabelVector
from .metrics import extract_labels, score

__all__ = ["AffinityGraph", "DataMatrix", "FitDivergence", "FitResult", "Hyperparams",
           "LabelVector", "Variant", "build_graph", "extract_labels", "fit", "init_state",
           "kkt_residuals", "objective", "score"]
