"""
Test script for the taco command-line interface.
"""
import yaml
from click.testing import CliRunner

from taco_icl.utils.logger import setup_logging
from taco_icl.data import load_dataset, load_library, load_queries
from taco_icl.evaluation import load_report
from taco_icl.scripts.cli import main

# Configure logging
logger = setup_logging("tests.cli")

TINY_CONFIG = {
    "world": {"n_demos": 40, "n_eval_queries": 3, "d_img": 6, "d_txt": 6, "latent_dim": 2,
              "n_clusters": 2, "n_labels": 2},
    "queries": {"k": 2, "m": 2},
    "oracle": {"method": "oracle", "shots": 2, "pool_per_shot": 3},
    "model": {"d": 8, "depth": 2, "heads": 2, "task_aware_layers": [1, 2], "max_len": 16, "ffn_mult": 2},
    "train": {"epochs": 1, "batch_size": 4, "validation_queries": 0},
    "beam": {"width": 2, "shots": 2},
    "evaluation": {"shots": 2, "perm_k": 2, "delta_repeats": 1},
    "scorer": {"max_concurrency": 1},
}

def write_config(directory, **sections):
    config = {key: dict(value) for key, value in TINY_CONFIG.items()}
    for key, value in sections.items():
        config.setdefault(key, {}).update(value)
    path = directory / "run.yml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return str(path)

def invoke(config, out, *args, seed=0):
    result = CliRunner().invoke(main, ["--config", config, "--out", str(out), "--seed", str(seed), *args])
    logger.info(f"taco {' '.join(args)} -> {result.exit_code}: {result.output.strip()}")
    return result

def test_gen_world_is_deterministic(tmp_path):
    """Test the same seed writes identical files."""
    config = write_config(tmp_path)
    first = invoke(config, tmp_path / "a", "gen-world")
    second = invoke(config, tmp_path / "b", "gen-world")
    assert first.exit_code == 0 and second.exit_code == 0
    assert "train_queries=4" in first.output
    for name in ("world.json", "library.jsonl", "train_queries.jsonl", "eval_queries.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(load_library(tmp_path / "a" / "library.jsonl")) == 36
    assert len(load_queries(tmp_path / "a" / "eval_queries.jsonl")) == 3

    other = invoke(config, tmp_path / "c", "gen-world", seed=1)
    assert other.exit_code == 0
    assert (tmp_path / "c" / "library.jsonl").read_bytes() != (tmp_path / "a" / "library.jsonl").read_bytes()

def test_run_logs_follow_paths_logs(tmp_path):
    """Test log files move to the run's paths.logs directory."""
    logs = tmp_path / "logs"
    config = write_config(tmp_path, paths={"logs": str(logs)})
    assert invoke(config, tmp_path / "out", "gen-world").exit_code == 0
    world_logs = list(logs.glob("evaluation.world_*.log"))
    assert len(world_logs) == 1
    assert "Generated a generalized-mapping world" in world_logs[0].read_text(encoding="utf-8")

def test_invalid_runs_exit_non_zero(tmp_path):
    """Test validation failures exit with code 1."""
    too_many = write_config(tmp_path, queries={"k": 10, "m": 5})
    assert invoke(too_many, tmp_path / "out", "gen-world").exit_code == 1

    config = write_config(tmp_path)
    assert invoke(config, tmp_path / "out", "gen-world").exit_code == 0
    assert invoke(config, tmp_path / "out", "evaluate", "--methods", "rs,magic").exit_code == 1
    assert invoke(config, tmp_path / "out", "train", "--lambda-sweep", "0.1").exit_code == 1

    unknown = tmp_path / "unknown.yml"
    unknown.write_text("colour: blue\n", encoding="utf-8")
    assert invoke(str(unknown), tmp_path / "out", "gen-world").exit_code == 1

def test_pipeline_end_to_end(tmp_path):
    """Test gen-world, build-data, train, generate and evaluate in sequence."""
    config = write_config(tmp_path)
    out = tmp_path / "run"
    assert invoke(config, out, "gen-world").exit_code == 0

    built = invoke(config, out, "build-data")
    assert built.exit_code == 0
    dataset = load_dataset(out / "dataset.jsonl")
    assert len(dataset) == 2 * 2 * 4 and dataset.shot == 2
    assert "sequences=16" in built.output

    trained = invoke(config, out, "train")
    assert trained.exit_code == 0
    assert (out / "checkpoints" / "best.npz").exists()
    assert (out / "checkpoints" / "metrics.csv").exists()

    generated = invoke(config, out, "generate", "--queries", str(out / "eval_queries.jsonl"), "--shots", "2")
    assert generated.exit_code == 0
    sequences = load_dataset(out / "generated_2shot.jsonl")
    assert len(sequences) == 3 and sequences.shot == 2

    evaluated = invoke(config, out, "evaluate", "--methods", "rs,i2i,taco", "--settings", "standard,wl")
    assert evaluated.exit_code == 0
    table, meta = load_report(out / "report.json")
    assert len(table) == 6
    assert set(table["method"]) == {"rs", "i2i", "taco"}
    assert meta["command"] == "evaluate" and meta["seed"] == 0

def test_lambda_sweep_trains_one_model_per_pair(tmp_path):
    """Test every L1:L2 pair gets its own checkpoint directory."""
    config = write_config(tmp_path, oracle={"method": "rs"})
    out = tmp_path / "run"
    assert invoke(config, out, "gen-world").exit_code == 0
    assert invoke(config, out, "build-data").exit_code == 0
    swept = invoke(config, out, "train", "--lambda-sweep", "0:0,0.1:0.001")
    assert swept.exit_code == 0
    assert (out / "checkpoints" / "lambda_0_0" / "best.npz").exists()
    assert (out / "checkpoints" / "lambda_0.1_0.001" / "best.npz").exists()

if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for test in (
        test_gen_world_is_deterministic,
        test_run_logs_follow_paths_logs,
        test_invalid_runs_exit_non_zero,
        test_pipeline_end_to_end,
        test_lambda_sweep_trains_one_model_per_pair,
    ):
        with tempfile.TemporaryDirectory() as tmp:
            test(Path(tmp))
    logger.info("CLI tests completed successfully!")
