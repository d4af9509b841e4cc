"""
Evaluation runner for the TACO demonstration configurator.
Produces sequences with each selection method under each perturbation
setting and measures accuracy, disruption gap, order sensitivity and mean
log-likelihood.
"""
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from taco_icl.core import Rng, stage_rng
from taco_icl.data.schema import DemoLibrary, IclSequence, QuerySample, SequenceDataset
from taco_icl.evaluation.metrics import Prompt, cohesion_report, evaluate_accuracy, materialize, mean_loglik
from taco_icl.evaluation.perturbations import PerturbationOp, apply_perturbation, make_perturbation, remap_ground_truth
from taco_icl.evaluation.report import build_report
from taco_icl.evaluation.synthetic_scorer import ScorerSettings, SyntheticScorer
from taco_icl.evaluation.world import SyntheticWorld
from taco_icl.exceptions import ConfigError
from taco_icl.models import ModelConfig, TacoModel, TrainConfig, load_model, train
from taco_icl.selection import (
    BeamConfig,
    CachedScorer,
    baseline_demo,
    baseline_i2i,
    baseline_iq2iq,
    baseline_iqpr,
    baseline_rs,
    beam_infer_all,
    oracle_greedy,
    pseudo_oracle,
)
from taco_icl.selection.oracle import candidate_pool
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.runner")

METHODS = ("rs", "i2i", "iq2iq", "iqpr", "demo", "oracle", "oracle_rs", "oracle_i2i", "taco")
SETTINGS = ("standard", "em", "hm", "wl", "wl+em", "bi", "bi_query", "no_inst", "em+no_inst")

# (name, model ablation switches, training overrides)
ABLATIONS: Tuple[Tuple[str, Dict[str, Any], Dict[str, Any]], ...] = (
    ("full", {}, {}),
    ("a_no_task_token", {"use_task_token": False}, {}),
    ("b_no_guider_updates", {"use_guider_updates": False}, {}),
    ("c_no_sparsity", {}, {"lambda1": 0.0}),
    ("d_no_guider_l2", {}, {"lambda2": 0.0}),
    ("e_random_guider_init", {"guider_init": "random"}, {}),
    ("f_no_image", {"guider_components": ("query", "inst")}, {}),
    ("g_no_query", {"guider_components": ("image", "inst")}, {}),
    ("h_no_inst", {"guider_components": ("image", "query")}, {}),
    ("i_no_task_attention", {"use_task_attention": False}, {}),
)


@dataclass(frozen=True)
class EvaluationSettings:
    shots: int = 4
    perm_k: int = 10
    delta_repeats: int = 5
    delta_metric: str = "loglik"
    delta_neighbor_pool: int = 1
    em_factor: float = 0.8
    bi_std_scale: float = 0.5
    wl_fraction: float = 0.75
    demo_permutations: int = 24
    demo_top_k: int = 4
    pool_per_shot: int = 64
    beam_width: int = 3
    max_workers: int = 1

    @classmethod
    def from_run_config(cls, config: Dict[str, Any]) -> "EvaluationSettings":
        section = config["evaluation"]
        names = {f.name for f in fields(cls)}
        values = {name: section[name] for name in names if name in section}
        return cls(
            pool_per_shot=int(config["oracle"]["pool_per_shot"]),
            beam_width=int(config["beam"]["width"]),
            max_workers=int(config["scorer"]["max_concurrency"]),
            **values,
        )


def parse_list(value: Optional[str], allowed: Sequence[str], what: str) -> List[str]:
    """Split a comma-separated option and check every entry."""
    items = [item.strip() for item in (value or "").split(",") if item.strip()]
    unknown = [item for item in items if item not in allowed]
    if unknown:
        raise ConfigError(f"unknown {what}: {unknown}; choose from {list(allowed)}")
    return items


def make_scorer(config: Dict[str, Any], world: Optional[SyntheticWorld] = None, labels=None) -> CachedScorer:
    """
    Build the configured scorer, wrapped in a response cache.

    Raises:
        ConfigError: If the synthetic scorer is selected without a world
    """
    section = config["scorer"]
    if section["kind"] == "synthetic":
        if world is None:
            raise ConfigError("the synthetic scorer needs a world file")
        inner = SyntheticScorer(world, ScorerSettings.from_run_config(config))
    else:
        from taco_icl.bridge import ExternalScorer
        inner = ExternalScorer.from_run_config(config, labels)
    return CachedScorer(inner, section["cache_path"] or None)


def produce_sequences(
    method: str,
    queries: Sequence[QuerySample],
    library: DemoLibrary,
    scorer,
    rng: Rng,
    settings: EvaluationSettings,
    model=None
) -> List[IclSequence]:
    """
    Build one sequence per query with a selection method.

    Raises:
        ConfigError: For an unknown method, or "taco" without a model
    """
    n = settings.shots
    if method == "taco":
        if model is None:
            raise ConfigError("method taco needs a trained checkpoint")
        return beam_infer_all(model, queries, library, BeamConfig(settings.beam_width, n))
    sequences = []
    for query in queries:
        if method == "rs":
            seq = baseline_rs(query, library, n, rng)
        elif method == "i2i":
            seq = baseline_i2i(query, library, n)
        elif method == "iq2iq":
            seq = baseline_iq2iq(query, library, n)
        elif method == "iqpr":
            seq = baseline_iqpr(query, library, n, scorer, rng)
        elif method == "demo":
            seq = baseline_demo(query, library, n, scorer, rng, settings.demo_permutations, settings.demo_top_k)
        elif method == "oracle":
            pool = candidate_pool(query, library, settings.pool_per_shot * n, rng)
            ids = oracle_greedy(query, pool, library, scorer, n, max_workers=settings.max_workers)
            seq = IclSequence(library.instruction, tuple(ids), query)
        elif method in ("oracle_rs", "oracle_i2i"):
            seq = pseudo_oracle(
                query, library, n, scorer, rng, source=method.split("_")[1],
                pool_size=settings.pool_per_shot * n, max_workers=settings.max_workers,
            )
        else:
            raise ConfigError(f"unknown method {method!r}")
        sequences.append(seq)
    return sequences


def prepare_setting(
    setting: str,
    world: Optional[SyntheticWorld],
    library: DemoLibrary,
    queries: Sequence[QuerySample],
    rng: Rng,
    settings: EvaluationSettings
) -> Tuple[DemoLibrary, List[QuerySample], Optional[PerturbationOp]]:
    """
    Perturb the library and queries for a setting.

    Returns:
        (library, queries, per-prompt operator applied after selection or None)
    """
    queries = list(queries)
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    if setting == "standard":
        return library, queries, None
    if setting == "no_inst":
        return library.with_meta(instruction="", inst_emb=None), queries, None
    if world is None:
        raise ConfigError(f"setting {setting} needs the synthetic world")
    prompt_op = None
    if setting in ("em", "wl+em", "em+no_inst"):
        library = apply_perturbation(make_perturbation("EM", world, factor=settings.em_factor), library, rng, world)
        em_query = make_perturbation("EM", world, "query_only", factor=settings.em_factor)
        queries = apply_perturbation(em_query, queries, rng, world)
    if setting == "em+no_inst":
        library = library.with_meta(instruction="", inst_emb=None)
    if setting == "hm":
        hidden = make_perturbation("HM", world)
        library = apply_perturbation(hidden, library, rng, world)
        queries = remap_ground_truth(hidden, queries)
    if setting in ("wl", "wl+em"):
        prompt_op = make_perturbation("WL", world, fraction=settings.wl_fraction)
    if setting == "bi":
        library = apply_perturbation(make_perturbation("BI", world, std_scale=settings.bi_std_scale), library, rng)
    if setting == "bi_query":
        bi_query = make_perturbation("BI", world, "query_only", std_scale=settings.bi_std_scale)
        queries = apply_perturbation(bi_query, queries, rng)
    return library, queries, prompt_op


def evaluate_prompts(
    prompts: Sequence[Prompt],
    library: DemoLibrary,
    scorer,
    rng: Rng,
    settings: EvaluationSettings
) -> Dict[str, Any]:
    """Accuracy, disruption gap, order sensitivity and mean log-likelihood of a prompt set."""
    cohesion = cohesion_report(
        prompts, library, scorer, rng,
        k=settings.perm_k,
        repeats=settings.delta_repeats,
        metric=settings.delta_metric,
        neighbor_pool=settings.delta_neighbor_pool,
    )
    return {
        "accuracy": evaluate_accuracy(prompts, scorer),
        "delta": cohesion.delta,
        "sigma": cohesion.sigma,
        "mean_loglik": mean_loglik(prompts, scorer),
        "n_queries": len(prompts),
    }


def evaluate_methods(
    config: Dict[str, Any],
    world: Optional[SyntheticWorld],
    library: DemoLibrary,
    queries: Sequence[QuerySample],
    methods: Sequence[str],
    setting_names: Sequence[str],
    scorer,
    model=None
) -> pd.DataFrame:
    """
    Evaluate every method under every setting.

    Perturbations draw from one generator per setting, so all methods see the
    same perturbed library and queries.

    Returns:
        Report table, one row per (method, setting)
    """
    settings = EvaluationSettings.from_run_config(config)
    seed = int(config["seed"])
    rows = []
    for setting in setting_names:
        perturbed_library, perturbed_queries, prompt_op = prepare_setting(
            setting, world, library, queries, stage_rng(seed, f"perturb:{setting}"), settings
        )
        for method in methods:
            rng = stage_rng(seed, f"evaluate:{setting}:{method}")
            sequences = produce_sequences(method, perturbed_queries, perturbed_library, scorer, rng, settings, model)
            prompts = materialize(sequences, perturbed_library)
            if prompt_op is not None:
                prompts = [apply_perturbation(prompt_op, p, rng, world) for p in prompts]
            row = {"method": method, "setting": setting}
            row.update(evaluate_prompts(prompts, perturbed_library, scorer, rng, settings))
            logger.info(
                f"{method} / {setting}: accuracy={row['accuracy']:.3f} delta={row['delta']:.4f} "
                f"sigma={row['sigma']:.4f}"
            )
            rows.append(row)
    return build_report(rows)


def split_validation(queries: Sequence[QuerySample], count: int, seed: int) -> Tuple[List[QuerySample], List[QuerySample]]:
    """
    Hold out ``count`` training queries for model selection.

    Returns:
        (training queries, validation queries), each sorted by id
    """
    ordered = sorted(queries, key=lambda q: q.id)
    if count <= 0:
        return ordered, []
    if count >= len(ordered):
        logger.warning(f"Cannot hold out {count} of {len(ordered)} training queries; validating on training loss")
        return ordered, []
    picked = set(stage_rng(seed, "validation").choice(len(ordered), size=count, replace=False).tolist())
    train_part = [q for i, q in enumerate(ordered) if i not in picked]
    validation = [q for i, q in enumerate(ordered) if i in picked]
    return train_part, validation


def beam_validator(queries: Sequence[QuerySample], library: DemoLibrary, scorer, beam_config: BeamConfig):
    """Validation score: accuracy of beam-inferred sequences on held-out queries."""

    def validate(model) -> float:
        sequences = beam_infer_all(model, queries, library, beam_config)
        return evaluate_accuracy(materialize(sequences, library), scorer)

    return validate


def build_model(config: Dict[str, Any], library: DemoLibrary, seed: Optional[int] = None, **ablation):
    """Fresh TacoModel sized for a library, with optional ablation switches."""
    d_img, d_txt = library.dims
    inst = library.inst_emb
    model_config = ModelConfig.from_run_config(
        config, d_img, d_txt, None if inst is None else inst.size, library.ids
    )
    if ablation:
        model_config = model_config.with_ablation(**ablation)
    return TacoModel(model_config, seed=int(config["seed"]) if seed is None else seed)


def run_ablations(
    config: Dict[str, Any],
    world: Optional[SyntheticWorld],
    library: DemoLibrary,
    dataset: SequenceDataset,
    validation: Sequence[QuerySample],
    eval_queries: Sequence[QuerySample],
    scorer,
    output_dir: Union[str, Path]
) -> pd.DataFrame:
    """
    Retrain and evaluate the full model and every ablation.

    Each variant is trained ``evaluation.ablation_seeds`` times from
    consecutive seeds; the report holds the per-variant means.

    Returns:
        Report table with a ``reference`` column marking the full model
    """
    output_dir = Path(output_dir)
    seeds = [int(config["seed"]) + i for i in range(max(1, int(config["evaluation"]["ablation_seeds"])))]
    beam_config = BeamConfig.from_run_config(config)
    validator = beam_validator(validation, library, scorer, beam_config) if validation else None
    rows = []
    for name, switches, train_overrides in ABLATIONS:
        per_seed = []
        for seed in seeds:
            model = build_model(config, library, seed, **switches)
            train_config = replace(TrainConfig.from_run_config(config), seed=seed, **train_overrides)
            result = train(
                dataset, library, model, train_config, output_dir / f"{name}_seed{seed}",
                validator=validator, run_config_hash=config.get("config_hash"),
            )
            best = load_model(result.best_checkpoint)
            table = evaluate_methods(config, world, library, eval_queries, ["taco"], ["standard"], scorer, best)
            per_seed.append(table.iloc[0])
        frame = pd.DataFrame(per_seed)
        row = {"method": name, "setting": "standard", "reference": name == "full", "seeds": len(seeds)}
        for column in ("accuracy", "delta", "sigma", "mean_loglik"):
            row[column] = float(frame[column].mean())
        row["n_queries"] = int(frame["n_queries"].iloc[0])
        logger.info(f"Ablation {name}: mean accuracy {row['accuracy']:.3f} over {len(seeds)} seeds")
        rows.append(row)
    return build_report(rows, extra_columns=("reference", "seeds"))
