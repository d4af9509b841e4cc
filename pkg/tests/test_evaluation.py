"""
Test script for the synthetic world, the synthetic scorer, perturbations, metrics, reports and the runner.
"""
import math

import numpy as np
import pytest

from taco_icl.utils.logger import setup_logging
from taco_icl.utils.config import get_config_path, resolve_run_config
from taco_icl.core import make_rng
from taco_icl.data import Demonstration, DemoLibrary, IclSequence, QuerySample
from taco_icl.evaluation import (
    Prompt,
    ScorerSettings,
    SyntheticScorer,
    SyntheticWorld,
    WorldSpec,
    apply_perturbation,
    build_report,
    cohesion_report,
    disruption_gap,
    evaluate_accuracy,
    evaluate_methods,
    generate_world,
    load_report,
    load_world,
    make_perturbation,
    make_scorer,
    materialize,
    order_sensitivity,
    population_std,
    position_weights,
    provenance,
    report_hash,
    save_world,
    write_report,
)
from taco_icl.evaluation.metrics import is_correct, nearest_replacement
from taco_icl.evaluation.perturbations import PerturbationOp, next_label, remap_ground_truth
from taco_icl.evaluation.report import REPORT_COLUMNS
from taco_icl.evaluation.runner import (
    EvaluationSettings,
    parse_list,
    prepare_setting,
    produce_sequences,
    split_validation,
)
from taco_icl.exceptions import (
    CapabilityError,
    ConfigError,
    DatasetValidationError,
    SearchError,
    UnsupportedPerturbationError,
    WorldSpecError,
)
from taco_icl.selection import LABEL_PROBS, LOGLIK, baseline_i2i, baseline_rs

# Configure logging
logger = setup_logging("tests.evaluation")

def small_spec(**changes):
    values = dict(
        mapping="generalized", n_clusters=3, latent_dim=2, d_img=6, d_txt=6, n_demos=40,
        n_eval_queries=5, n_labels=3, label_noise=0.0, instruction="Inst",
    )
    values.update(changes)
    return WorldSpec(**values)

def hand_world():
    """Two clusters on the first axis, identity mixing, so the task estimate is the question embedding."""
    spec = WorldSpec(n_clusters=2, latent_dim=2, d_img=2, d_txt=2, n_labels=2, n_demos=1)
    return SyntheticWorld(
        spec=spec,
        centroids=np.array([[0.0, 0.0], [5.0, 0.0]]),
        image_mix=np.eye(2),
        text_mix=np.eye(2),
        styles=np.zeros((2, 2)),
        response_codes=np.eye(2),
        inst_emb=np.zeros(2),
    )

def world_demo(demo_id, tau, content, text_r, true_label, cluster=0):
    tau = np.asarray(tau, dtype=float)
    return Demonstration(
        id=demo_id, image_emb=tau, text_q=f"item {content}", text_r=text_r, q_emb=tau,
        r_emb=np.zeros(2), qr_emb=tau,
        meta={"tau": tau.tolist(), "content": content, "true_label": true_label, "cluster": cluster},
    )

def hand_query(ground_truth="yes"):
    return QuerySample("q", np.zeros(2), "item 0", np.zeros(2), ground_truth, {"content": 0, "cluster": 0})

class ConstantScorer:
    """Scorer that ignores its demonstrations."""

    name = "constant"
    capabilities = frozenset({LOGLIK, LABEL_PROBS})

    def loglik(self, instruction, icds, query, response):
        return -1.0

    def label_probs(self, instruction, icds, query):
        return {"yes": 0.6, "no": 0.4}

    def labels(self):
        return ["yes", "no"]

def test_generate_world_counts_labels_and_determinism(tmp_path):
    """Test world generation sizes, clean labels, determinism and the world file."""
    spec = small_spec()
    world, library, queries = generate_world(spec, make_rng(0))

    assert len(library) == 40 and len(queries) == 5
    assert library.ids[0] == "d00000" and queries[0].id == "q00000"
    assert library.labels == ["yes", "no", "left"]
    assert library.instruction == "Inst"
    for demo in library:
        assert demo.text_r == demo.meta["true_label"]
        assert demo.text_r == world.label_for(demo.meta["content"], demo.meta["cluster"])
    for query in queries:
        assert query.ground_truth_r == world.label_for(query.meta["content"], query.meta["cluster"])

    _, again, _ = generate_world(spec, make_rng(0))
    assert again == library

    save_world(world, tmp_path / "world.json")
    assert load_world(tmp_path / "world.json").to_dict() == world.to_dict()

def test_world_variants_and_spec_errors():
    """Test label noise, the specific mapping and invalid specs."""
    _, noisy, _ = generate_world(small_spec(label_noise=1.0), make_rng(1))
    assert all(demo.text_r != demo.meta["true_label"] for demo in noisy)

    world, library, _ = generate_world(small_spec(mapping="specific"), make_rng(2))
    assert world.n_clusters == 1
    assert {demo.meta["cluster"] for demo in library} == {0}

    with pytest.raises(WorldSpecError):
        WorldSpec(mapping="mixed")
    with pytest.raises(WorldSpecError):
        WorldSpec(latent_dim=8, d_img=4)
    with pytest.raises(WorldSpecError):
        WorldSpec(label_noise=1.5)

def test_synthetic_scorer_label_probs_closed_form():
    """Test votes and the tempered softmax on a hand-built world."""
    world = hand_world()
    scorer = SyntheticScorer(world, ScorerSettings())
    a = world_demo("a", (0.0, 0.0), 1, "no", "no")
    b = world_demo("b", (1.0, 0.0), 0, "no", "no", cluster=1)
    query = hand_query()

    votes = scorer.votes([a, b], query)
    assert votes["yes"] == pytest.approx(2.0)
    assert votes["no"] == pytest.approx(math.exp(-0.5))
    assert votes["foo"] == 0.0 and votes["bar"] == 0.0

    scaled = np.array([2.0, math.exp(-0.5), 0.0, 0.0]) / 0.25
    expected = np.exp(scaled - scaled.max()) / np.exp(scaled - scaled.max()).sum()
    probs = scorer.label_probs("Inst", [a, b], query)
    assert list(probs) == ["yes", "no", "foo", "bar"]
    assert [probs[k] for k in probs] == pytest.approx(expected.tolist())
    assert scorer.label_probs("Inst", [b, a], query) == probs

def test_synthetic_scorer_loglik_closed_form():
    """Test alignment, cohesion and penalty terms of the log-likelihood."""
    world = hand_world()
    a = world_demo("a", (0.0, 0.0), 1, "no", "no")
    b = world_demo("b", (1.0, 0.0), 0, "no", "no", cluster=1)
    wrong = world_demo("c", (0.0, 0.0), 1, "yes", "no")
    query = hand_query()

    invariant = SyntheticScorer(world, ScorerSettings())
    assert invariant.loglik("Inst", [a, b], query, "yes") == pytest.approx(-0.5 - 0.05 * 0.5)
    assert invariant.loglik("Inst", [a, b], query, "no") == pytest.approx(-0.525 - 2.0)
    assert invariant.loglik("Inst", [b, a], query, "yes") == invariant.loglik("Inst", [a, b], query, "yes")
    assert invariant.loglik("Inst", [], query, "yes") == 0.0
    assert invariant.label_mismatches([a, b, wrong]) == 1

    weighted = SyntheticScorer(world, ScorerSettings(mode="position_weighted"))
    assert position_weights(2, "position_weighted") == [0.5, 1.0]
    assert weighted.loglik("Inst", [a, b], query, "yes") == pytest.approx(-0.5 - 0.025)
    assert weighted.loglik("Inst", [b, a], query, "yes") == pytest.approx(-0.25 - 0.025)
    assert weighted.name != invariant.name
    assert SyntheticScorer(world, ScorerSettings()).name == invariant.name

    bare = Demonstration("x", np.zeros(2), "q", "yes", np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(CapabilityError):
        invariant.loglik("Inst", [bare], query, "yes")

def test_synthetic_scorer_image_and_instruction_terms():
    """Test the look-alike image vote, the instruction pull on the task estimate and BI reaching the vote."""
    world = hand_world()
    scorer = SyntheticScorer(world, ScorerSettings())
    lookalike = world_demo("far", (5.0, 0.0), 0, "no", "no", cluster=1)
    facing = QuerySample("q", np.array([1.0, 0.0]), "item 0", np.zeros(2), "yes", {"content": 0, "cluster": 0})
    aside = QuerySample("q", np.array([0.0, 1.0]), "item 0", np.zeros(2), "yes", {"content": 0, "cluster": 0})

    assert scorer.votes([lookalike], facing)["no"] == pytest.approx(0.5)
    assert scorer.votes([lookalike], aside)["no"] == pytest.approx(math.exp(-12.5))
    assert scorer.votes([lookalike], hand_query())["no"] == pytest.approx(math.exp(-12.5))
    blind = SyntheticScorer(world, ScorerSettings(visual=0.0))
    assert blind.votes([lookalike], facing)["no"] == pytest.approx(math.exp(-12.5))

    blurred = apply_perturbation(
        make_perturbation("BI", world, std=10.0), DemoLibrary.from_demos([lookalike]), make_rng(0)
    )
    assert scorer.votes([blurred["far"]], facing)["no"] != pytest.approx(0.5)

    off_centre = QuerySample("q", np.zeros(2), "item 0", np.array([1.0, 0.0]), "yes", {"content": 0, "cluster": 0})
    assert scorer.task_estimate(off_centre).tolist() == pytest.approx([1.0, 0.0])
    assert scorer.task_estimate(off_centre, "   ").tolist() == pytest.approx([1.0, 0.0])
    assert scorer.task_estimate(off_centre, "Inst").tolist() == pytest.approx([0.5, 0.0])
    near = world_demo("near", (0.0, 0.0), 1, "no", "no")
    assert scorer.loglik("Inst", [near], off_centre, "yes") == pytest.approx(-0.125)
    assert scorer.loglik("", [near], off_centre, "yes") == pytest.approx(-0.5)

    with pytest.raises(ConfigError):
        ScorerSettings(instruction_hint=1.5)
    with pytest.raises(ConfigError):
        ScorerSettings(visual=-1.0)

def test_noiseless_world_is_solved_by_any_demonstrations():
    """Test every prompt is answered correctly on a noiseless specific-mapping world."""
    world, library, queries = generate_world(small_spec(mapping="specific"), make_rng(3))
    scorer = SyntheticScorer(world)
    rng = make_rng(0)
    prompts = materialize([baseline_rs(q, library, 3, rng) for q in queries], library)
    assert evaluate_accuracy(prompts, scorer) == 1.0

def test_label_perturbations_are_pure():
    """Test WL and HM return relabelled copies and leave their input unchanged."""
    world, library, queries = generate_world(small_spec(n_demos=60), make_rng(4))
    before = [d.text_r for d in library]

    flipped = apply_perturbation(make_perturbation("WL", world, fraction=0.5), library, make_rng(0))
    changed = [d for d in flipped if d.text_r != library[d.id].text_r]
    assert len(changed) == 30
    assert all(d.text_r == next_label(library[d.id].text_r, world.labels, world.reserved) for d in changed)
    assert [d.text_r for d in library] == before

    hidden = apply_perturbation(make_perturbation("HM", world), library, make_rng(0))
    assert all(d.text_r in world.reserved for d in hidden)
    assert all(hidden[i].text_r == world.reserved[world.labels.index(library[i].text_r)] for i in library.ids)

    with pytest.raises(UnsupportedPerturbationError):
        make_perturbation("WL", world, "query_only")
    with pytest.raises(UnsupportedPerturbationError):
        apply_perturbation(make_perturbation("BI", world, "query_only", std=1.0), library, make_rng(0))
    with pytest.raises(UnsupportedPerturbationError):
        apply_perturbation(make_perturbation("BI", world, std=1.0), queries, make_rng(0))
    with pytest.raises(ConfigError):
        PerturbationOp("EM", factor=1.5)
    assert next_label("left", world.labels, world.reserved) == "yes"
    assert next_label("other", world.labels, world.reserved) == "other"

def test_embedding_perturbations():
    """Test EM endpoints, BI noise and per-prompt targets."""
    world, library, queries = generate_world(small_spec(), make_rng(5))

    pulled = apply_perturbation(make_perturbation("EM", world, "query_only", factor=1.0), queries, make_rng(0), world)
    for before, after in zip(queries, pulled):
        assert np.allclose(after.q_emb, world.centroid_text(before.meta["cluster"]))
        assert np.array_equal(after.image_emb, before.image_emb)
    kept = apply_perturbation(make_perturbation("EM", world, "query_only", factor=0.0), queries, make_rng(0), world)
    assert all(np.allclose(a.q_emb, b.q_emb) for a, b in zip(kept, queries))
    with pytest.raises(UnsupportedPerturbationError):
        apply_perturbation(make_perturbation("EM", world), library, make_rng(0))

    still = apply_perturbation(make_perturbation("BI", world, std=0.0), library, make_rng(0))
    assert all(np.array_equal(still[i].image_emb, library[i].image_emb) for i in library.ids)
    blurred = apply_perturbation(make_perturbation("BI", world, std=1.0), library, make_rng(0))
    assert all(not np.array_equal(blurred[i].image_emb, library[i].image_emb) for i in library.ids)

    prompt = Prompt.from_sequence(baseline_rs(queries[0], library, 3, make_rng(0)), library)
    relabelled = apply_perturbation(make_perturbation("WL", world, fraction=1.0), prompt, make_rng(0))
    assert all(a.text_r != b.text_r for a, b in zip(relabelled.icds, prompt.icds))
    assert relabelled.query == prompt.query
    noisy_query = apply_perturbation(make_perturbation("BI", world, "query_only", std=1.0), prompt, make_rng(0))
    assert noisy_query.icds == prompt.icds
    assert not np.array_equal(noisy_query.query.image_emb, prompt.query.image_emb)

def test_order_sensitivity_vanishes_for_order_invariant_scorer():
    """Test sigma is exactly zero when the scorer ignores demonstration order."""
    world, library, queries = generate_world(small_spec(label_noise=0.3), make_rng(6))
    scorer = SyntheticScorer(world)
    rng = make_rng(0)
    prompts = materialize([baseline_rs(q, library, 4, rng) for q in queries], library)
    assert order_sensitivity(prompts, scorer, 6, make_rng(1)) == 0.0
    with pytest.raises(ConfigError):
        order_sensitivity(prompts, scorer, 1, make_rng(1))

def test_metric_laws():
    """Test population std, the disruption gap of a demonstration-blind scorer and empty sets."""
    assert population_std([0.6, 0.8]) == pytest.approx(0.1)
    assert population_std([0.7, 0.7, 0.7]) == 0.0
    assert population_std([]) == 0.0

    world, library, queries = generate_world(small_spec(), make_rng(7))
    rng = make_rng(0)
    prompts = materialize([baseline_rs(q, library, 3, rng) for q in queries], library)
    blind = ConstantScorer()
    assert disruption_gap(prompts[0], library, blind, repeats=3, neighbor_pool=2, rng=make_rng(1)) == 0.0
    assert disruption_gap(Prompt("Inst", (), queries[0]), library, blind) == 0.0

    report = cohesion_report(prompts, library, SyntheticScorer(world), make_rng(2), k=3, repeats=2)
    assert report.delta >= 0.0
    assert len(report.per_position) == 3
    assert 0.0 <= report.accuracy_mean <= 1.0

    with pytest.raises(DatasetValidationError):
        evaluate_accuracy([], blind)
    with pytest.raises(DatasetValidationError):
        cohesion_report([], library, blind, make_rng(0))

def test_nearest_replacement_excludes_prompt():
    """Test replacements come from outside the prompt and run out cleanly."""
    world, library, queries = generate_world(small_spec(n_demos=4), make_rng(8))
    demo = library["d00000"]
    swap = nearest_replacement(demo, library, exclude=("d00000", "d00001"))
    assert swap.id in ("d00002", "d00003")
    with pytest.raises(SearchError):
        nearest_replacement(demo, library, exclude=library.ids)

def test_report_files_and_hash(tmp_path):
    """Test report columns, CSV and JSON output and the timestamp-free hash."""
    rows = [
        {"method": "rs", "setting": "standard", "accuracy": 0.5, "delta": 0.1, "sigma": 0.0,
         "mean_loglik": -1.5, "n_queries": 4},
        {"method": "i2i", "setting": "standard", "accuracy": 0.75},
    ]
    table = build_report(rows)
    assert list(table.columns) == REPORT_COLUMNS
    assert math.isnan(table.loc[1, "delta"])

    config = {"seed": 3, "config_hash": "abc"}
    meta = provenance(config, "evaluate")
    assert meta["seed"] == 3 and meta["config_hash"] == "abc"
    later = dict(meta, created_at="2000-01-01T00:00:00+00:00")
    assert report_hash(table, later) == report_hash(table, meta)
    assert report_hash(table, dict(meta, seed=4)) != report_hash(table, meta)

    csv_path, json_path = write_report(table, meta, tmp_path, "report")
    assert csv_path.exists()
    loaded, loaded_meta = load_report(json_path)
    assert loaded["method"].tolist() == ["rs", "i2i"]
    assert loaded.loc[0, "accuracy"] == 0.5
    assert loaded_meta["command"] == "evaluate"

def run_config(**overrides):
    values = {
        "world.n_demos": 60, "world.n_eval_queries": 4, "world.d_img": 6, "world.d_txt": 6,
        "world.latent_dim": 2, "world.n_clusters": 2, "world.n_labels": 3,
        "evaluation.shots": 2, "evaluation.perm_k": 2, "evaluation.delta_repeats": 1,
        "oracle.pool_per_shot": 4, "scorer.max_concurrency": 1,
    }
    values.update(overrides)
    return resolve_run_config(None, values)

def test_evaluate_methods_table():
    """Test one report row per method and setting."""
    config = run_config()
    world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(9))
    scorer = make_scorer(config, world)
    methods = ["rs", "i2i", "iq2iq", "iqpr", "demo", "oracle", "oracle_rs", "oracle_i2i"]

    table = evaluate_methods(config, world, library, queries, methods, ["standard"], scorer)
    assert table["method"].tolist() == methods
    assert list(table.columns) == REPORT_COLUMNS
    assert table["accuracy"].between(0.0, 1.0).all()
    assert (table["delta"] >= 0.0).all()
    assert (table["sigma"] == 0.0).all()
    assert (table["n_queries"] == 4).all()

    settings = ["standard", "em", "hm", "wl", "wl+em", "bi", "bi_query", "no_inst", "em+no_inst"]
    grid = evaluate_methods(config, world, library, queries, ["rs"], settings, scorer)
    assert grid["setting"].tolist() == settings
    again = evaluate_methods(config, world, library, queries, ["rs"], settings, scorer)
    assert grid.equals(again)

def test_evaluate_rs_on_noiseless_world():
    """Test random selection scores accuracy 1.0 on a noiseless specific-mapping world."""
    config = run_config(**{"world.mapping": "specific", "world.label_noise": 0.0})
    world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(10))
    table = evaluate_methods(config, world, library, queries, ["rs"], ["standard"], make_scorer(config, world))
    assert table.loc[0, "accuracy"] == 1.0

def test_runner_helpers():
    """Test option parsing, validation hold-out and the model requirement of taco."""
    assert parse_list("rs, i2i", ("rs", "i2i", "taco"), "methods") == ["rs", "i2i"]
    with pytest.raises(ConfigError):
        parse_list("rs,magic", ("rs",), "methods")

    world, library, queries = generate_world(small_spec(n_eval_queries=5), make_rng(11))
    train_part, validation = split_validation(queries, 2, seed=0)
    assert len(train_part) == 3 and len(validation) == 2
    assert not {q.id for q in train_part} & {q.id for q in validation}
    assert split_validation(queries, 2, seed=0)[1] == validation
    assert split_validation(queries, 5, seed=0) == (sorted(queries, key=lambda q: q.id), [])

    with pytest.raises(ConfigError):
        produce_sequences("taco", queries, library, SyntheticScorer(world), make_rng(0), EvaluationSettings())
    with pytest.raises(ConfigError):
        make_scorer(run_config(), None)

def test_hidden_mapping_and_instruction_settings():
    """Test HM renames query answers with the library and the no-instruction settings strip Inst."""
    config = run_config(**{"world.mapping": "specific", "world.label_noise": 0.0})
    settings = EvaluationSettings.from_run_config(config)
    world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(12))
    answers = [q.ground_truth_r for q in queries]

    hidden_library, hidden_queries, _ = prepare_setting("hm", world, library, queries, make_rng(0), settings)
    assert all(q.ground_truth_r in world.reserved for q in hidden_queries)
    assert {d.text_r for d in hidden_library} <= set(world.reserved)
    assert [q.ground_truth_r for q in queries] == answers
    with pytest.raises(UnsupportedPerturbationError):
        remap_ground_truth(make_perturbation("WL", world), queries)

    table = evaluate_methods(config, world, library, queries, ["rs", "oracle"], ["hm"], make_scorer(config, world))
    assert (table["accuracy"] > 0.5).all()

    bare, same_queries, op = prepare_setting("no_inst", None, library, queries, make_rng(0), settings)
    assert bare.instruction == "" and bare.inst_emb is None
    assert library.instruction and same_queries == list(queries) and op is None
    pulled, pulled_queries, _ = prepare_setting("em+no_inst", world, library, queries, make_rng(0), settings)
    assert pulled.instruction == "" and pulled.inst_emb is None
    assert not np.allclose(pulled_queries[0].q_emb, queries[0].q_emb)

def paired_correct(setting, world, library, queries, sequences, scorer, settings, seed):
    """Correct answers of fixed demonstration choices re-read under a perturbation setting."""
    perturbed_library, perturbed_queries, prompt_op = prepare_setting(
        setting, world, library, queries, make_rng(seed), settings
    )
    by_id = {q.id: q for q in perturbed_queries}
    prompts = materialize(
        [IclSequence(perturbed_library.instruction, s.icd_ids, by_id[s.query.id]) for s in sequences],
        perturbed_library,
    )
    if prompt_op is not None:
        flips = make_rng(seed + 1000)
        prompts = [apply_perturbation(prompt_op, p, flips, world) for p in prompts]
    return sum(is_correct(p, scorer) for p in prompts)

def test_perturbation_settings_order_accuracy():
    """Test EM > standard > HM, WL+EM > WL and the instruction's effect on the same random demonstrations."""
    config = resolve_run_config(None, {
        "world.mapping": "specific", "world.label_noise": 0.5, "world.n_demos": 200, "world.n_eval_queries": 60,
    })
    settings = EvaluationSettings.from_run_config(config)
    names = ["standard", "em", "hm", "wl", "wl+em", "no_inst", "em+no_inst"]
    correct = dict.fromkeys(names, 0)
    total = 0
    for seed in range(20):
        world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(seed))
        scorer = SyntheticScorer(world, ScorerSettings.from_run_config(config))
        rng = make_rng(100 + seed)
        sequences = [baseline_rs(q, library, settings.shots, rng) for q in queries]
        for name in names:
            correct[name] += paired_correct(name, world, library, queries, sequences, scorer, settings, seed)
        total += len(queries)
    accuracy = {name: count / total for name, count in correct.items()}
    logger.info(f"Accuracy by setting: {accuracy}")

    assert accuracy["em"] > accuracy["standard"] > accuracy["hm"] > 0.0
    assert accuracy["wl+em"] > accuracy["wl"]
    assert accuracy["standard"] > accuracy["no_inst"]
    assert accuracy["em+no_inst"] > accuracy["standard"]

def style_dominant_config(**overrides):
    values = {
        "world.n_demos": 200, "world.n_eval_queries": 100, "oracle.pool_per_shot": 16,
        "scorer.max_concurrency": 1,
    }
    values.update(overrides)
    return resolve_run_config(str(get_config_path("style_dominant")), values)

def task_match_rate(sequences, library):
    hits = [library[i].meta["cluster"] == s.query.meta["cluster"] for s in sequences for i in s.icd_ids]
    return sum(hits) / len(hits)

def test_image_only_retrieval_follows_style():
    """Test I2I retrieves fewer same-task demonstrations than RS under shifted styles and more without style."""
    for overrides, style_leads in (({}, True), ({"world.style_scale": 0.0}, False)):
        config = style_dominant_config(**overrides)
        i2i_rate, rs_rate = [], []
        for seed in range(8):
            world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(seed))
            rng = make_rng(seed)
            i2i_rate.append(task_match_rate([baseline_i2i(q, library, 4) for q in queries], library))
            rs_rate.append(task_match_rate([baseline_rs(q, library, 4, rng) for q in queries], library))
        if style_leads:
            assert np.mean(i2i_rate) < np.mean(rs_rate)
        else:
            assert np.mean(i2i_rate) > np.mean(rs_rate)
            assert np.mean(i2i_rate) > 0.9

def test_style_dominant_world_orders_selection_methods():
    """Test Oracle >= IQ2IQ > RS > I2I on the style-dominant preset."""
    config = style_dominant_config()
    settings = EvaluationSettings.from_run_config(config)
    correct = {"rs": 0, "i2i": 0, "iq2iq": 0}
    oracle_correct, iq2iq_subset, total, subset_total = 0, 0, 0, 0
    for seed in range(6):
        world, library, queries = generate_world(WorldSpec.from_run_config(config), make_rng(seed))
        scorer = SyntheticScorer(world, ScorerSettings.from_run_config(config))
        for method in correct:
            sequences = produce_sequences(method, queries, library, scorer, make_rng(seed), settings)
            correct[method] += sum(is_correct(p, scorer) for p in materialize(sequences, library))
        total += len(queries)

        subset = queries[:20]
        oracle = produce_sequences("oracle", subset, library, scorer, make_rng(seed), settings)
        oracle_correct += sum(is_correct(p, scorer) for p in materialize(oracle, library))
        similar = produce_sequences("iq2iq", subset, library, scorer, make_rng(seed), settings)
        iq2iq_subset += sum(is_correct(p, scorer) for p in materialize(similar, library))
        subset_total += len(subset)
    accuracy = {method: count / total for method, count in correct.items()}
    logger.info(f"Style-dominant accuracy: {accuracy}, oracle {oracle_correct / subset_total:.3f}")

    assert oracle_correct >= iq2iq_subset
    assert oracle_correct / subset_total > 0.9
    assert accuracy["iq2iq"] > accuracy["rs"] > accuracy["i2i"] + 0.3

if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        test_generate_world_counts_labels_and_determinism(Path(tmp))
    test_world_variants_and_spec_errors()
    test_synthetic_scorer_label_probs_closed_form()
    test_synthetic_scorer_loglik_closed_form()
    test_synthetic_scorer_image_and_instruction_terms()
    test_noiseless_world_is_solved_by_any_demonstrations()
    test_label_perturbations_are_pure()
    test_embedding_perturbations()
    test_order_sensitivity_vanishes_for_order_invariant_scorer()
    test_metric_laws()
    test_nearest_replacement_excludes_prompt()
    with tempfile.TemporaryDirectory() as tmp:
        test_report_files_and_hash(Path(tmp))
    test_evaluate_methods_table()
    test_evaluate_rs_on_noiseless_world()
    test_runner_helpers()
    test_hidden_mapping_and_instruction_settings()
    test_perturbation_settings_order_accuracy()
    test_image_only_retrieval_follows_style()
    test_style_dominant_world_orders_selection_methods()
    logger.info("Evaluation tests completed successfully!")
