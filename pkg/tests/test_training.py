"""
Test script for the training loop, resuming and the ablation runner.
"""
import numpy as np
import pandas as pd
import pytest

from taco_icl.utils.logger import setup_logging
from taco_icl.utils.config import resolve_run_config
from taco_icl.core import make_rng, stage_rng
from taco_icl.data import Demonstration, DemoLibrary, IclSequence, QuerySample, SequenceDataset
from taco_icl.evaluation import ABLATIONS, WorldSpec, generate_world, make_scorer, run_ablations
from taco_icl.evaluation.runner import beam_validator, build_model
from taco_icl.exceptions import ConfigError, DatasetValidationError
from taco_icl.models import DecoderConfig, ModelConfig, TacoModel, TrainConfig, load_model, train
from taco_icl.models.training import METRIC_COLUMNS
from taco_icl.selection import BeamConfig, OracleConfig, build_training_set

# Configure logging
logger = setup_logging("tests.training")

def make_library(n=6, d=4, seed=0):
    rng = np.random.default_rng(seed)
    demos = [
        Demonstration(f"d{i:02d}", rng.normal(size=d), f"q{i}", "yes" if i % 2 else "no",
                      rng.normal(size=d), rng.normal(size=d), rng.normal(size=d))
        for i in range(n)
    ]
    return DemoLibrary.from_demos(demos, {"instruction": "Inst", "inst_emb": rng.normal(size=d).tolist()})

def make_dataset(library, d=4):
    rng = np.random.default_rng(3)
    sequences = []
    for j, icds in enumerate([("d01", "d02"), ("d03", "d00"), ("d05", "d04"), ("d02", "d03")]):
        query = QuerySample(f"q{j}", rng.normal(size=d), "what?", rng.normal(size=d), "yes")
        sequences.append(IclSequence("Inst", icds, query))
    return SequenceDataset.from_sequences(sequences)

def make_model(library, seed=1):
    config = ModelConfig(
        decoder=DecoderConfig(d=4, depth=2, heads=2, task_aware_layers=(1, 2), ffn_mult=2, max_len=12, init_std=0.3),
        d_img=4, d_txt=4, d_inst=4, vocab_ids=library.ids,
    )
    return TacoModel(config, seed=seed)

def fast_config(**changes):
    values = dict(lr=1e-2, batch_size=2, epochs=2, t0=4, seed=5)
    values.update(changes)
    return TrainConfig(**values)

def test_training_writes_metrics_and_checkpoints(tmp_path):
    """Test one metrics row per epoch, finite losses and both checkpoints."""
    library = make_library()
    result = train(make_dataset(library), library, make_model(library), fast_config(), tmp_path)

    assert result.best_checkpoint.exists() and result.last_checkpoint.exists()
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert list(metrics.columns) == METRIC_COLUMNS
    assert metrics["epoch"].tolist() == [1, 2]
    assert np.isfinite(metrics[["ce", "sparse", "l2", "total"]].to_numpy()).all()
    assert np.allclose(metrics["total"], metrics["ce"] + 0.01 * metrics["sparse"] + 1e-4 * metrics["l2"])
    assert result.best_epoch in (1, 2)
    assert load_model(result.last_checkpoint).config == make_model(library).config

def test_training_changes_parameters_and_uses_validator(tmp_path):
    """Test parameters move and a constant validator keeps the first epoch as best."""
    library = make_library()
    model = make_model(library)
    before = {name: p.data.copy() for name, p in model.parameters().items()}
    result = train(make_dataset(library), library, model, fast_config(epochs=3), tmp_path, validator=lambda m: 0.5)

    assert any(not np.array_equal(before[name], p.data) for name, p in model.parameters().items())
    assert result.history["val_score"].tolist() == [0.5, 0.5, 0.5]
    assert result.best_epoch == 1

def test_resume_matches_uninterrupted_run(tmp_path):
    """Test two epochs plus a resumed third equal three epochs in one go."""
    library = make_library()
    dataset = make_dataset(library)
    straight = train(dataset, library, make_model(library), fast_config(epochs=3), tmp_path / "straight")

    first = train(dataset, library, make_model(library), fast_config(epochs=2), tmp_path / "split")
    resumed = train(
        dataset, library, make_model(library), fast_config(epochs=3), tmp_path / "split",
        resume=first.last_checkpoint,
    )

    a = load_model(straight.last_checkpoint).parameters()
    b = load_model(resumed.last_checkpoint).parameters()
    for name in a:
        assert np.allclose(a[name].data, b[name].data, rtol=0.0, atol=1e-12)
    assert pd.read_csv(tmp_path / "split" / "metrics.csv")["epoch"].tolist() == [1, 2, 3]

def test_training_rejects_bad_input(tmp_path):
    """Test empty datasets and invalid hyperparameters."""
    library = make_library()
    with pytest.raises(DatasetValidationError):
        train(SequenceDataset.from_sequences([]), library, make_model(library), fast_config(), tmp_path)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(sparsity_direction="sideways")
    with pytest.raises(ConfigError):
        TrainConfig(lambda1=-1.0)

def small_run_config():
    return resolve_run_config(None, {
        "world.n_demos": 40, "world.n_eval_queries": 3, "world.d_img": 6, "world.d_txt": 6,
        "world.latent_dim": 2, "world.n_clusters": 2, "world.n_labels": 2,
        "queries.k": 2, "queries.m": 2,
        "oracle.method": "rs", "oracle.shots": 2,
        "model.d": 8, "model.depth": 2, "model.heads": 2, "model.task_aware_layers": [1, 2],
        "model.max_len": 16, "model.ffn_mult": 2,
        "train.epochs": 1, "train.batch_size": 4, "train.lr": 1e-3,
        "beam.width": 2, "beam.shots": 2,
        "evaluation.shots": 2, "evaluation.perm_k": 2, "evaluation.delta_repeats": 1,
        "scorer.max_concurrency": 1,
    })

def test_build_model_and_beam_validator():
    """Test a model sized from a world library scores held-out queries."""
    config = small_run_config()
    world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(0))
    model = build_model(config, library)
    assert model.config.d_img == 6 and model.config.d_txt == 6
    assert model.config.fusion.project_inputs
    assert not ModelConfig.from_run_config(config, 8, 8).fusion.project_inputs
    assert model.config.vocab_ids == library.ids
    ablated = build_model(config, library, use_task_token=False)
    assert ablated.config.ablation.use_task_token is False

    validate = beam_validator(queries, library, make_scorer(config, world), BeamConfig.from_run_config(config))
    assert 0.0 <= validate(model) <= 1.0

def test_run_ablations_table(tmp_path):
    """Test one row per ablation with the full model marked as reference."""
    config = small_run_config()
    world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(1))
    scorer = make_scorer(config, world)
    train_queries, eval_queries = queries[:2], queries[2:]
    dataset = build_training_set(
        library, train_queries, scorer, OracleConfig.from_run_config(config), stage_rng(0, "oracle")
    )
    assert len(dataset) == 2 * 4

    table = run_ablations(config, world, library, dataset, [], eval_queries, scorer, tmp_path)
    assert table["method"].tolist() == [name for name, _, _ in ABLATIONS]
    assert table["reference"].tolist() == [True] + [False] * (len(ABLATIONS) - 1)
    switches = {name: flags for name, flags, _ in ABLATIONS}
    assert switches["i_no_task_attention"] == {"use_task_attention": False}
    assert len(table) == 10
    assert (table["seeds"] == 1).all()
    assert table["accuracy"].between(0.0, 1.0).all()
    assert (tmp_path / "full_seed0" / "best.npz").exists()

if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        test_training_writes_metrics_and_checkpoints(Path(tmp))
    with tempfile.TemporaryDirectory() as tmp:
        test_training_changes_parameters_and_uses_validator(Path(tmp))
    with tempfile.TemporaryDirectory() as tmp:
        test_resume_matches_uninterrupted_run(Path(tmp))
    with tempfile.TemporaryDirectory() as tmp:
        test_training_rejects_bad_input(Path(tmp))
    test_build_model_and_beam_validator()
    with tempfile.TemporaryDirectory() as tmp:
        test_run_ablations_table(Path(tmp))
    logger.info("Training tests completed successfully!")
