"""
Model configuration objects for the TACO decoder and its embedding front end.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

from taco_icl.exceptions import ConfigError

FUSION_MODES = ("binary", "ternary", "concat")
GATES = ("vector", "scalar")
TASK_COMBINES = ("sum", "concat_proj")
GUIDER_INITS = ("query", "random")
GUIDER_COMPONENTS = ("image", "query", "inst")
OUTPUT_HEADS = ("tied", "free")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "binary"
    gate: str = "vector"
    task_combine: str = "sum"
    project_inputs: bool = False
    theta: float = 0.6
    residual_buckets: int = 1024

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, got {self.mode}")
        if self.gate not in GATES:
            raise ConfigError(f"fusion gate must be one of {GATES}, got {self.gate}")
        if self.task_combine not in TASK_COMBINES:
            raise ConfigError(f"task_combine must be one of {TASK_COMBINES}, got {self.task_combine}")
        if not 1.0 / 3.0 <= self.theta <= 1.0:
            raise ConfigError(f"ternary theta must lie in [1/3, 1], got {self.theta}")
        if self.residual_buckets < 1:
            raise ConfigError("residual_buckets must be positive")


@dataclass(frozen=True)
class AblationConfig:
    """Switches for the component ablations of the full model."""
    use_task_token: bool = True
    use_guider_updates: bool = True
    guider_init: str = "query"
    guider_components: Tuple[str, ...] = GUIDER_COMPONENTS
    use_task_attention: bool = True

    def __post_init__(self):
        if self.guider_init not in GUIDER_INITS:
            raise ConfigError(f"guider_init must be one of {GUIDER_INITS}, got {self.guider_init}")
        components = tuple(self.guider_components)
        unknown = set(components) - set(GUIDER_COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown guider components: {sorted(unknown)}")
        object.__setattr__(self, "guider_components", components)


@dataclass(frozen=True)
class DecoderConfig:
    d: int = 64
    depth: int = 4
    heads: int = 4
    task_aware_layers: Tuple[int, ...] = (2, 4)
    alpha_init: float = 1.0
    ffn_mult: int = 4
    max_len: int = 32
    relevance_cap: float = 20.0
    literal_query_branch: bool = False
    output_head: str = "tied"
    init_std: float = 0.02

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("decoder depth must be at least 1")
        layers = tuple(sorted(int(l) for l in self.task_aware_layers))
        if any(not 1 <= l <= self.depth for l in layers):
            raise ConfigError(f"task-aware layers {layers} must lie in 1..{self.depth}")
        if len(set(layers)) != len(layers):
            raise ConfigError("task-aware layers repeat")
        if self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} is not divisible by {self.heads} heads")
        if self.output_head not in OUTPUT_HEADS:
            raise ConfigError(f"output_head must be one of {OUTPUT_HEADS}")
        if self.relevance_cap <= 0:
            raise ConfigError("relevance_cap must be positive")
        object.__setattr__(self, "task_aware_layers", layers)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a TacoModel's parameter layout."""
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    d_img: int = 64
    d_txt: int = 64
    d_inst: int = 64
    vocab_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vocab_ids", tuple(self.vocab_ids))
        if self.decoder.output_head == "free" and not self.vocab_ids:
            raise ConfigError("a free output head needs a fixed vocabulary of demonstration ids")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["decoder"]["task_aware_layers"] = list(self.decoder.task_aware_layers)
        data["ablation"]["guider_components"] = list(self.ablation.guider_components)
        data["vocab_ids"] = list(self.vocab_ids)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        decoder = dict(data["decoder"])
        decoder["task_aware_layers"] = tuple(decoder["task_aware_layers"])
        ablation = dict(data["ablation"])
        ablation["guider_components"] = tuple(ablation["guider_components"])
        return cls(
            decoder=DecoderConfig(**decoder),
            fusion=FusionConfig(**data["fusion"]),
            ablation=AblationConfig(**ablation),
            d_img=int(data["d_img"]),
            d_txt=int(data["d_txt"]),
            d_inst=int(data["d_inst"]),
            vocab_ids=tuple(data.get("vocab_ids", ())),
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_ablation(self, **changes) -> "ModelConfig":
        return replace(self, ablation=replace(self.ablation, **changes))

    @classmethod
    def from_run_config(
        cls,
        config: Dict[str, Any],
        d_img: int,
        d_txt: int,
        d_inst: Optional[int] = None,
        vocab_ids: Tuple[str, ...] = ()
    ) -> "ModelConfig":
        """
        Build a model configuration from the ``model`` section of a run config.

        Input projections are switched on whenever the library widths differ
        from ``model.d``.

        Args:
            config: Resolved run configuration
            d_img: Image embedding width of the library
            d_txt: Text embedding width of the library
            d_inst: Width of the simplified-instruction embedding (defaults to d_txt)
            vocab_ids: Library ids, required for the free output head

        Returns:
            ModelConfig
        """
        model = config["model"]
        decoder = DecoderConfig(
            d=int(model["d"]),
            depth=int(model["depth"]),
            heads=int(model["heads"]),
            task_aware_layers=tuple(model["task_aware_layers"]),
            alpha_init=float(model["alpha_init"]),
            ffn_mult=int(model["ffn_mult"]),
            max_len=int(model["max_len"]),
            relevance_cap=float(model["relevance_cap"]),
            literal_query_branch=bool(model["literal_query_branch"]),
            output_head=str(model["output_head"]),
            init_std=float(model["init_std"]),
        )
        fusion = FusionConfig(**model["fusion"])
        if not fusion.project_inputs and (int(d_img) != decoder.d or int(d_txt) != decoder.d):
            fusion = replace(fusion, project_inputs=True)
        ablation = AblationConfig(**{**model["ablation"], "guider_components": tuple(model["ablation"]["guider_components"])})
        return cls(
            decoder=decoder,
            fusion=fusion,
            ablation=ablation,
            d_img=int(d_img),
            d_txt=int(d_txt),
            d_inst=int(d_inst if d_inst is not None else d_txt),
            vocab_ids=tuple(vocab_ids) if decoder.output_head == "free" else (),
        )
