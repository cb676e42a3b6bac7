"""Graph-based vulnerability prediction: CPG ingestion, GGNN embeddings,
SMOTE rebalancing, triplet-loss representation learning and evaluation."""

__version__ = "0.1.0"
