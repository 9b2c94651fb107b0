"""Link prediction on heterogeneous legal citation graphs.

Typed graphs with optional meta-node enrichment, a small numpy autodiff
engine, relational and homogeneous graph encoders with asymmetric decoders,
scikit-learn style estimators and a date-based evaluation protocol.
"""

__version__ = "0.1.0"

from .enrichment import EnrichmentPlan, enrich, plan_enrichment, strip_enrichment
from .estimators import GraphLinkPredictor, SGDLinkPredictor, make_model
from .evaluation import MetricsReport, SplitPlan, auc_roc, average_precision, temporal_folds
from .graph import EdgeIndex, GraphError, HeteroGraph, RelationType, add_reverse_relations, build_graph
from .io import load_checkpoint, load_graph, save_checkpoint, save_graph
from .models import ModelConfig
from .synthetic import SyntheticSpec, generate_preset, generate_synthetic
from .training import TrainConfig

__all__ = [
    "EdgeIndex", "EnrichmentPlan", "GraphError", "GraphLinkPredictor", "HeteroGraph", "MetricsReport",
    "ModelConfig", "RelationType", "SGDLinkPredictor", "SplitPlan", "SyntheticSpec", "TrainConfig",
    "add_reverse_relations", "auc_roc", "average_precision", "build_graph", "enrich", "generate_preset",
    "generate_synthetic", "load_checkpoint", "load_graph", "make_model", "plan_enrichment",
    "save_checkpoint", "save_graph", "strip_enrichment", "temporal_folds",
]
