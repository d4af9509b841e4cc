"""
Sequence search: scorers, query-set selection, the Oracle, beam inference and baselines.
"""
from taco_icl.selection.scorer import (
    LABEL_PROBS,
    LOGLIK,
    CachedScorer,
    ScorerInterface,
    predict_label,
    request_hash,
    require_capability,
)
from taco_icl.selection.clustering import QuerySet, select_query_set
from taco_icl.selection.baselines import (
    baseline_demo,
    baseline_i2i,
    baseline_iq2iq,
    baseline_iqpr,
    baseline_rs,
    content_free_query,
    iq2iq_ranking,
)
from taco_icl.selection.oracle import (
    OracleConfig,
    build_training_set,
    oracle_greedy,
    pseudo_oracle,
)
from taco_icl.selection.beam import BeamConfig, beam_infer, beam_infer_all, sequence_log_prob

__all__ = [
    "LABEL_PROBS", "LOGLIK", "CachedScorer", "ScorerInterface", "predict_label",
    "request_hash", "require_capability",
    "QuerySet", "select_query_set",
    "baseline_demo", "baseline_i2i", "baseline_iq2iq", "baseline_iqpr", "baseline_rs",
    "content_free_query", "iq2iq_ranking",
    "OracleConfig", "build_training_set", "oracle_greedy", "pseudo_oracle",
    "BeamConfig", "beam_infer", "beam_infer_all", "sequence_log_prob",
]
