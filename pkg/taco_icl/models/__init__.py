"""
Embedding fusion, the TACO decoder, its training loop and checkpoint storage.
"""
from taco_icl.models.config import AblationConfig, DecoderConfig, FusionConfig, ModelConfig
from taco_icl.models.fusion import (
    Embedder,
    Fusion,
    TokenRole,
    TokenSequence,
    build_token_sequence,
    fuse_binary,
    fuse_query,
    init_task_guider,
    ternary_weights,
)
from taco_icl.models.decoder import (
    EOS_ID,
    DecoderOutput,
    SequenceLogits,
    TacoModel,
    build_task_mask,
    next_token_logits,
    relevance_weights,
    ta_attention,
    update_guider,
)
from taco_icl.models.losses import LossBreakdown, batch_loss, ce_loss, sparsity_loss
from taco_icl.models.optim import AdamW, CosineWarmRestarts
from taco_icl.models.registry import Checkpoint, load_checkpoint, load_model, save_checkpoint
from taco_icl.models.training import TrainConfig, TrainResult, train

__all__ = [
    "AblationConfig", "DecoderConfig", "FusionConfig", "ModelConfig",
    "Embedder", "Fusion", "TokenRole", "TokenSequence", "build_token_sequence",
    "fuse_binary", "fuse_query", "init_task_guider", "ternary_weights",
    "EOS_ID", "DecoderOutput", "SequenceLogits", "TacoModel", "build_task_mask",
    "next_token_logits", "relevance_weights", "ta_attention", "update_guider",
    "LossBreakdown", "batch_loss", "ce_loss", "sparsity_loss",
    "AdamW", "CosineWarmRestarts",
    "Checkpoint", "load_checkpoint", "load_model", "save_checkpoint",
    "TrainConfig", "TrainResult", "train",
]
