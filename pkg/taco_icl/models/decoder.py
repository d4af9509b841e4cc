"""
TACO decoder module for the demonstration configurator.

A stack of pre-norm decoder blocks over [BOS, TASK_QUERY, ICD..., EOS].
Selected blocks use task-aware attention: a per-layer relevance network
scores every token against the task guider, and the scores reweight a
cosine-similarity mask added to the attention logits. The guider is
refined by cross-attention between task-aware layers.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from taco_icl.core import (
    Module,
    Tensor,
    as_tensor,
    causal_mask,
    concat,
    cosine_matrix,
    derive_seed,
    make_rng,
    masked_fill,
    parameter,
)
from taco_icl.data.schema import DemoLibrary, IclSequence, QuerySample
from taco_icl.exceptions import DimensionError, VocabularyError
from taco_icl.models.config import ModelConfig
from taco_icl.models.fusion import Embedder, TokenSequence
from taco_icl.models.layers import FeedForward, LayerNorm, Linear, MultiHeadAttention, RelevanceMlp
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("models.decoder")

EOS_ID = "<EOS>"


def causal_additive_mask(length: int) -> Tensor:
    """Additive mask with 0 on and below the diagonal and -inf above it."""
    return masked_fill(np.zeros((length, length)), causal_mask(length), -np.inf)


def relevance_weights(guider: Tensor, tokens: TokenSequence, mlp: RelevanceMlp) -> Tensor:
    """
    Per-token relevance t_i = sigmoid(MLP(guider_i ; e_i)).

    Args:
        guider: Guider vector (d,) or per-position guider rows (T, d)
        tokens: Decoder input
        mlp: Relevance network of the layer

    Returns:
        (T,) weights in (0, 1)
    """
    length = len(tokens)
    if guider.ndim == 1:
        guider = Tensor(np.ones((length, 1))).matmul(guider.reshape(1, -1))
    return mlp(concat([guider, tokens.embeddings], axis=-1))


def build_task_mask(
    tokens: TokenSequence,
    t: Tensor,
    alpha: Tensor,
    cap: float = 20.0,
    literal_query_branch: bool = False
) -> Tensor:
    """
    Build the additive task-aware mask of one layer.

    ICD rows attending to earlier or equal ICD columns get
    cos(e_i, e_j) / sqrt(d) * (-log t_i). ICD rows attending to the query
    column get the same term scaled by alpha. Every column after the row is
    -inf; the remaining causally valid entries are 0.

    Args:
        tokens: Decoder input (embeddings without positions)
        t: (T,) relevance weights
        alpha: Learnable scale of the query branch, shape (1,)
        cap: Upper bound on -log t
        literal_query_branch: Place the query branch on the query row over
            ICD columns instead; those entries are left unmasked

    Returns:
        (T, T) mask

    Raises:
        DegenerateVectorError: If a token embedding has zero norm
    """
    length = len(tokens)
    if t.shape != (length,):
        raise DimensionError(f"relevance has shape {t.shape}, expected ({length},)")
    embeddings = tokens.embeddings
    d = embeddings.shape[-1]
    icds = np.array(tokens.icd_positions, dtype=int)
    query = tokens.query_position

    own = np.zeros((length, length))
    coupling = np.zeros((length, length))
    if icds.size:
        own[np.ix_(icds, icds)] = np.tril(np.ones((icds.size, icds.size)))
        if literal_query_branch:
            coupling[query, icds] = 1.0
        else:
            coupling[icds, query] = 1.0

    weight = alpha * coupling + own
    scale = -(t.clip(float(np.exp(-cap)), 1.0).log())
    mask = cosine_matrix(embeddings, embeddings) * weight * scale.reshape(length, 1) * (1.0 / np.sqrt(d))
    blocked = causal_mask(length)
    if literal_query_branch:
        blocked &= coupling == 0
    return masked_fill(mask, blocked, -np.inf)


def ta_attention(hidden: Tensor, mask: Tensor, attention: MultiHeadAttention) -> Tensor:
    """Multi-head attention over ``hidden`` with the task mask added to every head's logits."""
    return attention(hidden, mask=mask)


class DecoderBlock(Module):
    """Pre-norm decoder block."""

    def __init__(self, d: int, heads: int, ffn_mult: int, rng, std: float):
        self.attn_norm = LayerNorm(d)
        self.attention = MultiHeadAttention(d, heads, rng, std)
        self.ffn_norm = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult, rng, std)

    def __call__(self, x: Tensor, mask: Tensor) -> Tensor:
        x = x + ta_attention(self.attn_norm(x), mask, self.attention)
        return x + self.ffn(self.ffn_norm(x))


class GuiderUpdate(Module):
    """Cross-attention of the guider over hidden states, residual add, layer norm."""

    def __init__(self, d: int, heads: int, rng, std: float):
        self.attention = MultiHeadAttention(d, heads, rng, std)
        self.norm = LayerNorm(d)

    def __call__(self, guider: Tensor, hidden: Tensor, mask: Optional[Tensor] = None) -> Tensor:
        return self.norm(guider + self.attention(guider, mask=mask, context=hidden))


def update_guider(e_tg: Tensor, hidden: Tensor, updater: GuiderUpdate) -> Tensor:
    """
    Refine a single guider vector against all hidden states.

    Args:
        e_tg: Guider (d,)
        hidden: Hidden states (T, d)
        updater: Parameters of the update

    Returns:
        Updated guider (d,)
    """
    return updater(e_tg.reshape(1, -1), hidden).reshape(-1)


def next_token_logits(
    h: Tensor,
    demo_embeddings: Tensor,
    out_weight: Tensor,
    eos_weight: Tensor,
    eos_bias: Tensor,
    masked: Sequence[int] = ()
) -> Tensor:
    """
    Score every demonstration and EOS from one hidden state.

    score_j = (W_out h) . e_j; the EOS score is w_eos . h + b_eos.

    Args:
        h: Hidden state (d,)
        demo_embeddings: Fused demonstration embeddings (n, d)
        out_weight: (d, d)
        eos_weight: (d,)
        eos_bias: (1,)
        masked: Demonstration rows to exclude

    Returns:
        (n + 1,) logits, EOS last
    """
    projected = out_weight.matmul(h)
    scores = concat([demo_embeddings.matmul(projected), (eos_weight.matmul(h) + eos_bias).reshape(1)])
    blocked = np.zeros(scores.shape[0], dtype=bool)
    blocked[list(masked)] = True
    return masked_fill(scores, blocked, -np.inf) if blocked.any() else scores


@dataclass
class DecoderOutput:
    hidden: Tensor
    masks: Dict[int, Tensor] = field(default_factory=dict)
    relevance: Dict[int, Tensor] = field(default_factory=dict)
    tokens: Optional[TokenSequence] = None


@dataclass
class SequenceLogits:
    """Teacher-forced logits of one sequence: one row per prediction step."""
    logits: Tensor
    targets: Tuple[int, ...]
    output: DecoderOutput


class TacoModel(Module):
    """
    Class to configure demonstration sequences autoregressively.

    Output vocabulary: library ids in ``library.ids`` order, then EOS.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        dec = config.decoder
        rng = make_rng(derive_seed(seed, "init"))
        self._config = config
        self.embedder = Embedder(config, rng)
        self.blocks = [DecoderBlock(dec.d, dec.heads, dec.ffn_mult, rng, dec.init_std) for _ in range(dec.depth)]
        self.relevance = {str(layer): RelevanceMlp(dec.d, rng, dec.init_std) for layer in dec.task_aware_layers}
        self.guider_updates = [
            GuiderUpdate(dec.d, dec.heads, rng, dec.init_std) for _ in dec.task_aware_layers[:-1]
        ]
        self.alpha = parameter(np.full(1, dec.alpha_init))
        self.final_norm = LayerNorm(dec.d)
        if dec.output_head == "tied":
            self.out_weight = parameter(np.eye(dec.d))
            self.eos_weight = parameter(rng.normal(0.0, dec.init_std, size=dec.d))
            self.eos_bias = parameter(np.zeros(1))
        else:
            self.head = Linear(dec.d, len(config.vocab_ids) + 1, rng, dec.init_std)
        logger.debug(f"Initialized TacoModel with {self.parameters().num_parameters()} parameters")

    @property
    def config(self) -> ModelConfig:
        return self._config

    def no_decay_names(self) -> Tuple[str, ...]:
        """Parameters excluded from decoupled weight decay."""
        return ("embedder.guider_weight",)

    def guider_l2(self) -> Tensor:
        w = self.embedder.guider_weight
        return (w * w).sum()

    # --- inputs ---
    def library_embeddings(self, library: DemoLibrary) -> Tensor:
        library.require_non_empty()
        return self.embedder.library_embeddings(library)

    def guider(self, query: QuerySample, library: DemoLibrary) -> Tensor:
        return self.embedder.guider_init(query, library.inst_emb)

    def tokens(
        self,
        icd_ids: Sequence[str],
        query: QuerySample,
        library: DemoLibrary,
        library_embeddings: Tensor,
        with_eos: bool = False
    ) -> TokenSequence:
        return self.embedder.build_token_sequence(icd_ids, query, library, library_embeddings, with_eos)

    # --- decoder ---
    def forward(
        self,
        tokens: TokenSequence,
        guider_init: Tensor,
        relevance_override: Optional[Union[np.ndarray, Tensor]] = None,
        disable_task_attention: bool = False
    ) -> DecoderOutput:
        """
        Run every block over the token sequence.

        Args:
            tokens: Decoder input
            guider_init: Initial guider (d,)
            relevance_override: Fixed (T,) relevance used in every task-aware layer
            disable_task_attention: Use the plain causal mask in every layer

        Returns:
            DecoderOutput with final hidden states and per-layer masks and relevance
        """
        dec = self._config.decoder
        ablation = self._config.ablation
        length = len(tokens)
        if length == 0:
            raise DimensionError("token sequence is empty")
        task_layers = dec.task_aware_layers
        use_task = ablation.use_task_attention and not disable_task_attention
        plain = causal_additive_mask(length)

        x = tokens.embeddings + self.embedder.positions[:length]
        guider = Tensor(np.ones((length, 1))).matmul(guider_init.reshape(1, -1))
        output = DecoderOutput(hidden=x, tokens=tokens)
        updates = 0
        for layer, block in enumerate(self.blocks, start=1):
            if use_task and layer in task_layers:
                if relevance_override is not None:
                    t = as_tensor(relevance_override)
                else:
                    t = relevance_weights(guider, tokens, self.relevance[str(layer)])
                mask = build_task_mask(tokens, t, self.alpha, dec.relevance_cap, dec.literal_query_branch)
                output.masks[layer] = mask
                output.relevance[layer] = t
            else:
                mask = plain
            x = block(x, mask)
            if use_task and ablation.use_guider_updates and layer in task_layers and layer != task_layers[-1]:
                guider = self.guider_updates[updates](guider, x, plain)
                updates += 1
        output.hidden = self.final_norm(x)
        return output

    # --- output head ---
    def _free_columns(self, library: DemoLibrary) -> np.ndarray:
        vocab = {demo_id: i for i, demo_id in enumerate(self._config.vocab_ids)}
        unknown = [i for i in library.ids if i not in vocab]
        if unknown:
            raise VocabularyError(f"ids outside the model vocabulary: {unknown[:5]}")
        return np.array([vocab[i] for i in library.ids] + [len(vocab)], dtype=int)

    def output_logits(self, hidden_rows: Tensor, library: DemoLibrary, library_embeddings: Tensor) -> Tensor:
        """
        Logits over library ids and EOS for each hidden row.

        Args:
            hidden_rows: (k, d)
            library: Library defining the vocabulary
            library_embeddings: Fused library embeddings (n, d)

        Returns:
            (k, n + 1) logits
        """
        if self._config.decoder.output_head == "free":
            return self.head(hidden_rows)[:, self._free_columns(library)]
        scores = hidden_rows.matmul(self.out_weight.T).matmul(library_embeddings.T)
        eos = hidden_rows.matmul(self.eos_weight).reshape(-1, 1) + self.eos_bias
        return concat([scores, eos], axis=1)

    def sequence_logits(
        self,
        seq: IclSequence,
        library: DemoLibrary,
        library_embeddings: Optional[Tensor] = None,
        mask_repeats: bool = True
    ) -> SequenceLogits:
        """
        Teacher-forced logits: the query position predicts x1, x_k predicts x_{k+1}, x_N predicts EOS.

        Args:
            seq: Sequence in target order
            library: Library resolving the ICD ids
            library_embeddings: Precomputed fused library embeddings
            mask_repeats: Exclude ids already in the prefix at each step

        Returns:
            SequenceLogits
        """
        if library_embeddings is None:
            library_embeddings = self.library_embeddings(library)
        tokens = self.tokens(seq.icd_ids, seq.query, library, library_embeddings, with_eos=True)
        output = self.forward(tokens, self.guider(seq.query, library))
        steps = seq.shot + 1
        rows = output.hidden[tokens.query_position:tokens.query_position + steps]
        logits = self.output_logits(rows, library, library_embeddings)

        eos_index = len(library)
        targets = []
        for demo_id in seq.icd_ids:
            if demo_id not in library.index:
                raise VocabularyError(f"target id not in vocabulary: {demo_id}")
            targets.append(library.index[demo_id])
        targets.append(eos_index)

        if mask_repeats and seq.shot:
            blocked = np.zeros((steps, len(library) + 1), dtype=bool)
            for step in range(1, steps):
                blocked[step, targets[:step]] = True
            logits = masked_fill(logits, blocked, -np.inf)
        return SequenceLogits(logits, tuple(targets), output)

    def step_logits(
        self,
        prefix: Sequence[str],
        query: QuerySample,
        library: DemoLibrary,
        library_embeddings: Tensor,
        guider: Optional[Tensor] = None
    ) -> Tensor:
        """
        Logits of the next token after ``prefix``, with ids in the prefix excluded.

        Returns:
            (n + 1,) logits, EOS last
        """
        if guider is None:
            guider = self.guider(query, library)
        tokens = self.tokens(prefix, query, library, library_embeddings, with_eos=False)
        output = self.forward(tokens, guider)
        logits = self.output_logits(output.hidden[len(tokens) - 1:], library, library_embeddings).reshape(-1)
        if not prefix:
            return logits
        blocked = np.zeros(len(library) + 1, dtype=bool)
        blocked[[library.index[i] for i in prefix]] = True
        return masked_fill(logits, blocked, -np.inf)
