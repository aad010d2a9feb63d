"""Uncertain knowledge graph embedding with Gumbel boxes.

Entities are Gumbel boxes, each relation is a pair of box transforms (one
for the head, one for the tail), and the confidence of ``(h, r, t)`` is the
approximate conditional probability ``P(f_r(h) | g_r(t))``.
"""

from .constraints import ConstraintSet, load_constraints
from .data import Dataset, Triples, WeightedTriple, load_dataset, load_dataset_dir, load_split
from .evaluation import confidence_metrics, ndcg, rank_queries, volume_report
from .geometry import GumbelBox, conditional_prob, expected_volume, intersect, mc_volume_oracle
from .model import (
    BoxTransform,
    ParameterStore,
    apply_transform,
    compose,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    score_triple,
)
from .training import Adam, TrainConfig, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BoxTransform",
    "ConstraintSet",
    "Dataset",
    "GumbelBox",
    "ParameterStore",
    "TrainConfig",
    "Triples",
    "WeightedTriple",
    "apply_transform",
    "compose",
    "conditional_prob",
    "confidence_metrics",
    "expected_volume",
    "fit",
    "init_parameters",
    "intersect",
    "load_checkpoint",
    "load_constraints",
    "load_dataset",
    "load_dataset_dir",
    "load_split",
    "mc_volume_oracle",
    "ndcg",
    "rank_queries",
    "save_checkpoint",
    "score_triple",
    "train_step",
    "volume_report",
]
