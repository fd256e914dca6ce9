"""Directed-graph message passing (BBRW) and restricted directed graph attacks."""

__version__ = "0.1.0"

from .graph import DataSplit, DirectedGraph, apply_perturbation, load_dataset, load_graph, symmetrize
from .propagation import PropagationSpec, build_differentiable_operator, build_operator
from .models import ModelConfig, TrainedModel, grid_search, predict, train
from .perturbation import CandidateSet, Perturbation, budget_for, build_mask
from .attack import AttackConfig, AttackRun, classify_flips, pgd_attack, project_box_budget, run_attack_suite

__all__ = [
    "DataSplit",
    "DirectedGraph",
    "apply_perturbation",
    "load_dataset",
    "load_graph",
    "symmetrize",
    "PropagationSpec",
    "build_operator",
    "build_differentiable_operator",
    "ModelConfig",
    "TrainedModel",
    "train",
    "predict",
    "grid_search",
    "CandidateSet",
    "Perturbation",
    "budget_for",
    "build_mask",
    "AttackConfig",
    "AttackRun",
    "pgd_attack",
    "project_box_budget",
    "classify_flips",
    "run_attack_suite",
]
