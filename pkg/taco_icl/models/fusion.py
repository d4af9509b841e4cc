"""
Embedding fusion for the TACO decoder: per-demonstration token embeddings,
the task-conditioned query token, the decoder input sequence and the task
guider initialization.
"""
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from taco_icl.core import Module, Tensor, as_tensor, concat, masked_softmax, parameter
from taco_icl.core.rng import Rng
from taco_icl.data.schema import DemoLibrary, Demonstration, IclSequence, QuerySample
from taco_icl.exceptions import ConfigError, FusionConfigError
from taco_icl.models.config import FusionConfig, ModelConfig
from taco_icl.models.layers import Linear


class TokenRole(str, Enum):
    BOS = "BOS"
    TASK_QUERY = "TASK_QUERY"
    ICD = "ICD"
    EOS = "EOS"


@dataclass(frozen=True)
class TokenSequence:
    """
    Decoder input: [BOS, TASK_QUERY, ICD x n, (EOS)] embeddings before positional encoding.
    """
    embeddings: Tensor
    roles: Tuple[TokenRole, ...]
    icd_ids: Tuple[str, ...]
    query_position: int = 1

    def __len__(self) -> int:
        return len(self.roles)

    @property
    def icd_positions(self) -> Tuple[int, ...]:
        return tuple(i for i, role in enumerate(self.roles) if role is TokenRole.ICD)

    @property
    def has_eos(self) -> bool:
        return self.roles[-1] is TokenRole.EOS


def ternary_weights(logits: Tensor, theta: float) -> Tensor:
    """
    Map per-row logits over (image, query, response) to fusion weights.

    Softmax puts the weights on the probability simplex; rows farther than
    sqrt(theta - 1/3) from the simplex centre are pulled radially onto that
    circle, which keeps the sum at one and caps the sum of squares at theta.

    Args:
        logits: (n, 3) head outputs
        theta: Cap on f_I^2 + f_Q^2 + f_R^2

    Returns:
        (n, 3) weights
    """
    weights = masked_softmax(logits, axis=-1)
    centre = 1.0 / 3.0
    radius = float(np.sqrt(max(theta - centre, 0.0)))
    diff = weights - centre
    norm = ((diff * diff).sum(axis=-1, keepdims=True) + 1e-24).sqrt()
    over = (norm.data > radius).astype(norm.data.dtype)
    safe_norm = norm + (1.0 - over)
    factor = (safe_norm ** -1.0) * radius * over + (1.0 - over)
    return diff * factor + centre


def residual_bucket(demo_id: str, buckets: int) -> int:
    """Stable bucket of a demonstration id in the learnable residual table."""
    return zlib.crc32(demo_id.encode("utf-8")) % buckets


class Fusion(Module):
    """
    Class to fuse a demonstration's modalities into one d-wide embedding.

    binary: gate f = sigmoid(W_f [img ; qr] + b_f), output f*img + (1-f)*qr
    ternary: weights over (img, q, r) from three linear heads, simplex-projected
    concat: img + q + r plus a learnable per-demonstration residual
    """

    def __init__(self, config: FusionConfig, d: int, d_img: int, d_txt: int, rng: Rng, std: float = 0.02):
        self._config = config
        self._d = d
        if config.project_inputs:
            self.image_proj = Linear(d_img, d, rng, std, bias=False)
            self.text_proj = Linear(d_txt, d, rng, std, bias=False)
        elif d_img != d or d_txt != d:
            raise FusionConfigError(
                f"embedding widths (d_img={d_img}, d_txt={d_txt}) differ from model width {d}; "
                "enable model.fusion.project_inputs"
            )

        if config.mode == "binary":
            gate_width = d if config.gate == "vector" else 1
            self.W_f = parameter(rng.normal(0.0, std, size=(gate_width, 2 * d)))
            self.b_f = parameter(np.zeros(gate_width))
        elif config.mode == "ternary":
            self.heads = parameter(rng.normal(0.0, std, size=(3, 3 * d)))
            self.head_bias = parameter(np.zeros(3))
        else:
            self.residual = parameter(rng.normal(0.0, std, size=(config.residual_buckets, d)))

    @property
    def config(self) -> FusionConfig:
        return self._config

    def project_image(self, x) -> Tensor:
        x = as_tensor(x)
        return self.image_proj(x) if self._config.project_inputs else x

    def project_text(self, x) -> Tensor:
        x = as_tensor(x)
        return self.text_proj(x) if self._config.project_inputs else x

    def gate(self, image: Tensor, text: Tensor) -> Tensor:
        return (concat([image, text], axis=-1).matmul(self.W_f.T) + self.b_f).sigmoid()

    def fuse_pairs(self, image: Tensor, text: Tensor) -> Tensor:
        """Binary fusion of aligned (n, d) image and text rows."""
        f = self.gate(image, text)
        return f * image + (1.0 - f) * text

    def fuse_triplets(self, image: Tensor, query: Tensor, response: Tensor, ids: Sequence[str]) -> Tensor:
        """
        Fuse (n, d) rows of projected image, question, response and joint Q+R embeddings.

        ``response`` is the joint Q+R embedding in binary mode and the response
        embedding otherwise.
        """
        mode = self._config.mode
        if mode == "binary":
            return self.fuse_pairs(image, response)
        if mode == "ternary":
            logits = concat([image, query, response], axis=-1).matmul(self.heads.T) + self.head_bias
            w = ternary_weights(logits, self._config.theta)
            return image * w[:, 0:1] + query * w[:, 1:2] + response * w[:, 2:3]
        rows = np.array([residual_bucket(i, self._config.residual_buckets) for i in ids], dtype=int)
        return image + query + response + self.residual[rows]

    def fuse_library(self, library: DemoLibrary) -> Tensor:
        """Fused embeddings of every demonstration, rows in ``library.ids`` order."""
        image = self.project_image(library.matrix("image_emb"))
        query = self.project_text(library.matrix("q_emb"))
        if self._config.mode == "binary":
            response = self.project_text(library.matrix("qr_emb"))
        else:
            response = self.project_text(library.matrix("r_emb"))
        return self.fuse_triplets(image, query, response, library.ids)

    def fuse_query(self, query: QuerySample) -> Tensor:
        """Fuse a query's image and question; the response slot is empty."""
        image = self.project_image(query.image_emb.reshape(1, -1))
        text = self.project_text(query.q_emb.reshape(1, -1))
        mode = self._config.mode
        if mode == "binary":
            return self.fuse_pairs(image, text).reshape(self._d)
        if mode == "ternary":
            empty = Tensor(np.zeros((1, self._d)))
            logits = concat([image, text, empty], axis=-1).matmul(self.heads.T) + self.head_bias
            w = ternary_weights(logits, self._config.theta)
            return (image * w[:, 0:1] + text * w[:, 1:2]).reshape(self._d)
        return (image + text).reshape(self._d)


def fuse_binary(demo: Demonstration, fusion: Fusion) -> Tensor:
    """
    Fuse one demonstration with the binary gate.

    Args:
        demo: Demonstration
        fusion: Fusion module in binary mode

    Returns:
        Fused embedding (d,)
    """
    if fusion.config.mode != "binary":
        raise ConfigError("fuse_binary needs a binary fusion module")
    image = fusion.project_image(demo.image_emb.reshape(1, -1))
    text = fusion.project_text(demo.qr_emb.reshape(1, -1))
    return fusion.fuse_pairs(image, text).reshape(-1)


def fuse_query(
    query: QuerySample,
    task_token: Optional[Tensor],
    fusion: Fusion,
    combine: str = "sum",
    projection: Optional[Linear] = None
) -> Tensor:
    """
    Task-conditioned query embedding: fused query combined with the [TASK] token.

    Args:
        query: Query sample
        task_token: Learnable [TASK] embedding, or None to skip it
        fusion: Fusion module shared with the demonstrations
        combine: "sum" or "concat_proj"
        projection: (2d -> d) map used by "concat_proj"

    Returns:
        Query token embedding (d,)
    """
    fused = fusion.fuse_query(query)
    if task_token is None:
        return fused
    if combine == "sum":
        return fused + task_token
    if projection is None:
        raise ConfigError("concat_proj needs a projection")
    return projection(concat([task_token, fused]).reshape(1, -1)).reshape(-1)


def init_task_guider(query: QuerySample, inst_emb, W_TG: Tensor) -> Tensor:
    """
    Initial task guider: W_TG applied to image, question and simplified-instruction embeddings.

    Args:
        query: Query sample
        inst_emb: Simplified-instruction embedding
        W_TG: (d, d_img + d_txt + d_inst) weight

    Returns:
        Guider embedding (d,)

    Raises:
        FusionConfigError: If the concatenated input does not match W_TG
    """
    joined = np.concatenate([query.image_emb, query.q_emb, np.asarray(inst_emb, dtype=np.float64).reshape(-1)])
    if W_TG.shape[1] != joined.size:
        raise FusionConfigError(f"guider weight expects {W_TG.shape[1]} inputs, got {joined.size}")
    return W_TG.matmul(joined)


class Embedder(Module):
    """
    Class to turn sequences into decoder inputs and to initialize the task guider.
    """

    def __init__(self, config: ModelConfig, rng: Rng):
        d = config.decoder.d
        std = config.decoder.init_std
        self._config = config
        self.fusion = Fusion(config.fusion, d, config.d_img, config.d_txt, rng, std)
        self.task_token = parameter(rng.normal(0.0, std, size=d))
        self.bos = parameter(rng.normal(0.0, 1.0, size=d))
        self.eos = parameter(rng.normal(0.0, 1.0, size=d))
        self.positions = parameter(rng.normal(0.0, std, size=(config.decoder.max_len, d)))
        self.guider_weight = parameter(
            rng.normal(0.0, std, size=(d, config.d_img + config.d_txt + config.d_inst))
        )
        if config.fusion.task_combine == "concat_proj":
            self.task_proj = Linear(2 * d, d, rng, std)
        if config.ablation.guider_init == "random":
            self.guider_random = parameter(rng.normal(0.0, 1.0, size=d))

    def library_embeddings(self, library: DemoLibrary) -> Tensor:
        return self.fusion.fuse_library(library)

    def query_embedding(self, query: QuerySample) -> Tensor:
        token = self.task_token if self._config.ablation.use_task_token else None
        return fuse_query(query, token, self.fusion, self._config.fusion.task_combine, getattr(self, "task_proj", None))

    def guider_init(self, query: QuerySample, inst_emb: Optional[np.ndarray]) -> Tensor:
        """
        Initial guider for a query; dropped components contribute zeros.
        """
        ablation = self._config.ablation
        if ablation.guider_init == "random":
            return self.guider_random
        inst = np.zeros(self._config.d_inst) if inst_emb is None else np.asarray(inst_emb, dtype=np.float64)
        if inst.size != self._config.d_inst:
            raise FusionConfigError(f"instruction embedding has width {inst.size}, expected {self._config.d_inst}")
        keep = set(ablation.guider_components)
        image = query.image_emb if "image" in keep else np.zeros_like(query.image_emb)
        text = query.q_emb if "query" in keep else np.zeros_like(query.q_emb)
        inst = inst if "inst" in keep else np.zeros_like(inst)
        masked = QuerySample(query.id, image, query.text_q, text, query.ground_truth_r)
        return init_task_guider(masked, inst, self.guider_weight)

    def build_token_sequence(
        self,
        icd_ids: Sequence[str],
        query: QuerySample,
        library: DemoLibrary,
        library_embeddings: Tensor,
        with_eos: bool
    ) -> TokenSequence:
        """
        Assemble [BOS, TASK_QUERY, ICD..., (EOS)].

        Args:
            icd_ids: Demonstration ids in order
            query: Query sample
            library: Library resolving the ids
            library_embeddings: Output of ``library_embeddings(library)``
            with_eos: Append the EOS token (training)

        Returns:
            TokenSequence
        """
        for demo_id in icd_ids:
            library[demo_id]
        rows = [library.index[demo_id] for demo_id in icd_ids]
        parts = [self.bos.reshape(1, -1), self.query_embedding(query).reshape(1, -1)]
        if rows:
            parts.append(library_embeddings[np.array(rows, dtype=int)])
        if with_eos:
            parts.append(self.eos.reshape(1, -1))
        roles = (TokenRole.BOS, TokenRole.TASK_QUERY) + (TokenRole.ICD,) * len(rows)
        if with_eos:
            roles = roles + (TokenRole.EOS,)
        if len(roles) > self._config.decoder.max_len:
            raise ConfigError(f"sequence of {len(roles)} tokens exceeds model.max_len={self._config.decoder.max_len}")
        return TokenSequence(concat(parts, axis=0), roles, tuple(icd_ids))


def build_token_sequence(
    seq: IclSequence,
    library: DemoLibrary,
    embedder: Embedder,
    with_eos: bool,
    library_embeddings: Optional[Tensor] = None
) -> TokenSequence:
    """Decoder input for an ICL sequence; see ``Embedder.build_token_sequence``."""
    if library_embeddings is None:
        library_embeddings = embedder.library_embeddings(library)
    return embedder.build_token_sequence(seq.icd_ids, seq.query, library, library_embeddings, with_eos)
