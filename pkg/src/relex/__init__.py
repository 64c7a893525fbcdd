"""Uncertainty quantification for relational explanations.

Pipeline: train a small GCN, explain node predictions with an edge-mask
explainer, generate symmetric counterfactual explanations through Boolean
low-rank factorization of the adjacency matrix, learn a factor graph over
those explanations, and score each explained relation by the change in
calibrated beliefs when the explanation is injected.  A McNemar retrain
protocol verifies the resulting rankings.
"""

__version__ = "0.1.0"

from relex.graphs import RelationalGraph, NodeSplit, GraphFormatError
from relex.gcn import GcnModel, TrainConfig
from relex.explainer import Explanation, ExplainConfig, SingleNodeExplanation
from relex.boolfact import (
    BooleanFactorization,
    CreSet,
    RankSearchConfig,
    CreGenerationFailed,
    EmptyCreSet,
)
from relex.factorgraph import FactorGraph, BpConfig, UncertaintyReport
from relex.mcnemar import McNemarResult, mcnemar_test
from relex.pipeline import PipelineConfig, run_verification, emit_report

__all__ = [
    "RelationalGraph",
    "NodeSplit",
    "GraphFormatError",
    "GcnModel",
    "TrainConfig",
    "Explanation",
    "ExplainConfig",
    "SingleNodeExplanation",
    "BooleanFactorization",
    "CreSet",
    "RankSearchConfig",
    "CreGenerationFailed",
    "EmptyCreSet",
    "FactorGraph",
    "BpConfig",
    "UncertaintyReport",
    "McNemarResult",
    "mcnemar_test",
    "PipelineConfig",
    "run_verification",
    "emit_report",
]
