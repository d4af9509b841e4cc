"""
Evaluation harness: synthetic world, surrogate scorer, perturbations, metrics and reports.
"""
from taco_icl.evaluation.world import (
    RESERVED_LABELS,
    SEMANTIC_LABELS,
    SyntheticWorld,
    WorldSpec,
    build_world,
    generate_world,
    load_world,
    save_world,
)
from taco_icl.evaluation.synthetic_scorer import ScorerSettings, SyntheticScorer, position_weights
from taco_icl.evaluation.metrics import (
    CohesionReport,
    Prompt,
    cohesion_report,
    disruption_gap,
    evaluate_accuracy,
    materialize,
    mean_loglik,
    order_sensitivity,
    population_std,
)
from taco_icl.evaluation.perturbations import PerturbationOp, apply_perturbation, make_perturbation
from taco_icl.evaluation.report import build_report, load_report, provenance, report_hash, write_report
from taco_icl.evaluation.runner import (
    ABLATIONS,
    METHODS,
    SETTINGS,
    EvaluationSettings,
    evaluate_methods,
    make_scorer,
    produce_sequences,
    run_ablations,
)

__all__ = [
    "RESERVED_LABELS", "SEMANTIC_LABELS", "SyntheticWorld", "WorldSpec",
    "build_world", "generate_world", "load_world", "save_world",
    "ScorerSettings", "SyntheticScorer", "position_weights",
    "CohesionReport", "Prompt", "cohesion_report", "disruption_gap", "evaluate_accuracy",
    "materialize", "mean_loglik", "order_sensitivity", "population_std",
    "PerturbationOp", "apply_perturbation", "make_perturbation",
    "build_report", "load_report", "provenance", "report_hash", "write_report",
    "ABLATIONS", "METHODS", "SETTINGS", "EvaluationSettings",
    "evaluate_methods", "make_scorer", "produce_sequences", "run_ablations",
]
