"""
Test script for embedding fusion, the TACO decoder, losses, optimizer and checkpoints.
"""
import numpy as np
import pytest

from taco_icl.utils.logger import setup_logging
from taco_icl.core import Tensor, grad_check, layer_norm, make_rng, masked_softmax, no_grad
from taco_icl.data import Demonstration, DemoLibrary, IclSequence, QuerySample
from taco_icl.exceptions import CheckpointMismatchError, FusionConfigError, VocabularyError
from taco_icl.models import (
    AdamW,
    CosineWarmRestarts,
    DecoderConfig,
    Fusion,
    FusionConfig,
    ModelConfig,
    TacoModel,
    TokenRole,
    TokenSequence,
    batch_loss,
    build_task_mask,
    build_token_sequence,
    ce_loss,
    fuse_binary,
    init_task_guider,
    load_checkpoint,
    load_model,
    next_token_logits,
    relevance_weights,
    save_checkpoint,
    sparsity_loss,
    ta_attention,
    ternary_weights,
    update_guider,
)
from taco_icl.models.decoder import GuiderUpdate
from taco_icl.models.layers import MultiHeadAttention, RelevanceMlp

# Configure logging
logger = setup_logging("tests.models")

def make_library(n=6, d=4, seed=0):
    rng = np.random.default_rng(seed)
    demos = [
        Demonstration(
            id=f"d{i:02d}",
            image_emb=rng.normal(size=d),
            text_q=f"q{i}",
            text_r="yes" if i % 2 else "no",
            q_emb=rng.normal(size=d),
            r_emb=rng.normal(size=d),
            qr_emb=rng.normal(size=d),
        )
        for i in range(n)
    ]
    return DemoLibrary.from_demos(demos, {"instruction": "Inst", "inst_emb": rng.normal(size=d).tolist()})

def make_query(d=4, seed=7):
    rng = np.random.default_rng(seed)
    return QuerySample("q", rng.normal(size=d), "what?", rng.normal(size=d), "yes")

def small_config(d=4, depth=2, layers=(1, 2), init_std=0.3, **fusion):
    return ModelConfig(
        decoder=DecoderConfig(d=d, depth=depth, heads=2, task_aware_layers=layers, ffn_mult=2,
                              max_len=12, init_std=init_std),
        fusion=FusionConfig(**fusion),
        d_img=d, d_txt=d, d_inst=d,
    )

def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))

def test_binary_fusion_matches_gate_formula():
    """Test the vector and scalar gates against a direct evaluation."""
    library = make_library()
    demo = library["d01"]
    for gate in ("vector", "scalar"):
        fusion = Fusion(FusionConfig(gate=gate), 4, 4, 4, make_rng(1), std=0.5)
        f = sigmoid(fusion.W_f.data @ np.concatenate([demo.image_emb, demo.qr_emb]) + fusion.b_f.data)
        expected = f * demo.image_emb + (1.0 - f) * demo.qr_emb
        assert np.allclose(fuse_binary(demo, fusion).data, expected, atol=1e-12)
    assert Fusion(FusionConfig(gate="scalar"), 4, 4, 4, make_rng(1)).W_f.shape == (1, 8)

def test_fusion_dimension_checks():
    """Test that differing widths need input projections."""
    with pytest.raises(FusionConfigError):
        Fusion(FusionConfig(), 4, 6, 4, make_rng(0))
    fusion = Fusion(FusionConfig(project_inputs=True), 4, 6, 5, make_rng(0))
    assert fusion.project_image(np.ones(6)).shape == (4,)
    assert fusion.project_text(np.ones(5)).shape == (4,)

def test_ternary_weights_stay_in_feasible_set():
    """Test the simplex constraint and the sum-of-squares cap."""
    logits = Tensor(make_rng(3).normal(0.0, 4.0, size=(50, 3)))
    for theta in (1.0 / 3.0, 0.45, 0.6, 1.0):
        w = ternary_weights(logits, theta).data
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((w ** 2).sum(axis=1) <= theta + 1e-9)
    assert np.allclose(ternary_weights(logits, 1.0).data, masked_softmax(logits).data, atol=1e-12)
    assert np.allclose(ternary_weights(logits, 1.0 / 3.0).data, 1.0 / 3.0, atol=1e-9)

def test_init_task_guider():
    """Test the guider projection and its width check."""
    query = make_query()
    inst = np.arange(4.0)
    W = Tensor(make_rng(0).normal(size=(4, 12)))
    expected = W.data @ np.concatenate([query.image_emb, query.q_emb, inst])
    assert np.allclose(init_task_guider(query, inst, W).data, expected)
    with pytest.raises(FusionConfigError):
        init_task_guider(query, np.arange(3.0), W)

def test_token_sequence_layout():
    """Test roles and positions of the decoder input."""
    library = make_library()
    model = TacoModel(small_config())
    seq = IclSequence("Inst", ("d02", "d00"), make_query())
    tokens = build_token_sequence(seq, library, model.embedder, with_eos=True)
    assert tokens.roles == (TokenRole.BOS, TokenRole.TASK_QUERY, TokenRole.ICD, TokenRole.ICD, TokenRole.EOS)
    assert tokens.icd_positions == (2, 3)
    assert tokens.query_position == 1
    assert tokens.embeddings.shape == (5, 4)
    fused = model.library_embeddings(library).data
    assert np.allclose(tokens.embeddings.data[2], fused[library.index["d02"]])
    assert len(build_token_sequence(seq.with_icds(()), library, model.embedder, with_eos=False)) == 2

def test_relevance_weights():
    """Test the zero-head value, the range and a direct evaluation."""
    rng = make_rng(5)
    tokens = TokenSequence(Tensor(rng.normal(size=(4, 3))), (TokenRole.BOS, TokenRole.TASK_QUERY,
                           TokenRole.ICD, TokenRole.ICD), ("a", "b"))
    guider = Tensor(rng.normal(size=3))
    mlp = RelevanceMlp(3, rng, std=0.8)
    t = relevance_weights(guider, tokens, mlp).data
    assert np.all((t > 0) & (t < 1))

    pairs = np.concatenate([np.tile(guider.data, (4, 1)), tokens.embeddings.data], axis=1)
    hidden = pairs @ mlp.hidden.weight.data.T + mlp.hidden.bias.data
    gelu = 0.5 * hidden * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (hidden + 0.044715 * hidden ** 3)))
    expected = sigmoid(gelu @ mlp.head.weight.data.T + mlp.head.bias.data).reshape(-1)
    assert np.allclose(t, expected, atol=1e-12)

    mlp.head.weight.data[:] = 0.0
    mlp.head.bias.data[:] = 0.0
    assert np.allclose(relevance_weights(guider, tokens, mlp).data, 0.5)

def hand_tokens():
    E = np.array([
        [1.0, 0.0, 0.0],
        [0.5, 1.0, 0.0],
        [0.0, 1.0, 1.0],
        [1.0, -1.0, 2.0],
    ])
    roles = (TokenRole.BOS, TokenRole.TASK_QUERY, TokenRole.ICD, TokenRole.ICD)
    return TokenSequence(Tensor(E), roles, ("a", "b")), E

def test_build_task_mask_matches_hand_evaluation():
    """Test a 2-ICD toy mask entry by entry, including the literal query branch."""
    tokens, E = hand_tokens()
    t = np.array([0.5, 0.3, 0.25, 0.8])
    alpha = 1.5
    unit = E / np.linalg.norm(E, axis=1, keepdims=True)
    C = unit @ unit.T
    nl = -np.log(t)

    expected = np.zeros((4, 4))
    expected[np.triu_indices(4, k=1)] = -np.inf
    for i in (2, 3):
        for j in (2, 3):
            if j <= i:
                expected[i, j] = C[i, j] / np.sqrt(3) * nl[i]
        expected[i, 1] = alpha * C[i, 1] / np.sqrt(3) * nl[i]
    mask = build_task_mask(tokens, Tensor(t), Tensor([alpha]))
    np.testing.assert_allclose(mask.data, expected, atol=1e-12)

    literal = np.zeros((4, 4))
    literal[np.triu_indices(4, k=1)] = -np.inf
    for i in (2, 3):
        for j in (2, 3):
            if j <= i:
                literal[i, j] = C[i, j] / np.sqrt(3) * nl[i]
    for j in (2, 3):
        literal[1, j] = alpha * C[1, j] / np.sqrt(3) * nl[1]
    mask = build_task_mask(tokens, Tensor(t), Tensor([alpha]), literal_query_branch=True)
    np.testing.assert_allclose(mask.data, literal, atol=1e-12)

def test_task_mask_with_unit_relevance_is_causal():
    """Test that t = 1 leaves only zeros and the causal -inf pattern."""
    tokens, _ = hand_tokens()
    mask = build_task_mask(tokens, Tensor(np.ones(4)), Tensor([2.0])).data
    upper = np.triu(np.ones((4, 4), dtype=bool), k=1)
    assert np.all(np.isneginf(mask[upper]))
    assert np.all(mask[~upper] == 0.0)

def test_task_mask_pattern_depends_only_on_roles():
    """Test that the finite pattern ignores embedding values."""
    tokens, _ = hand_tokens()
    other = TokenSequence(Tensor(make_rng(2).normal(size=(4, 3))), tokens.roles, tokens.icd_ids)
    t = Tensor(np.full(4, 0.4))
    a = np.isfinite(build_task_mask(tokens, t, Tensor([1.0])).data)
    b = np.isfinite(build_task_mask(other, t, Tensor([1.0])).data)
    assert np.array_equal(a, b)

def test_ta_attention_and_guider_update_identities():
    """Test singleton attention and the zero cross-attention residual."""
    rng = make_rng(4)
    attention = MultiHeadAttention(4, 2, rng, std=0.5)
    x = Tensor(rng.normal(size=(1, 4)))
    out = ta_attention(x, Tensor(np.zeros((1, 1))), attention)
    assert np.allclose(out.data, attention.output(attention.value(x)).data, atol=1e-12)

    updater = GuiderUpdate(4, 2, rng, std=0.5)
    e = Tensor(rng.normal(size=4))
    single = Tensor(rng.normal(size=(1, 4)))
    expected = layer_norm(e.reshape(1, -1) + updater.attention.output(updater.attention.value(single)),
                          updater.norm.gain, updater.norm.bias).reshape(-1)
    assert np.allclose(update_guider(e, single, updater).data, expected.data, atol=1e-12)

    updater.attention.value.weight.data[:] = 0.0
    updater.attention.value.bias.data[:] = 0.0
    hidden = Tensor(rng.normal(size=(3, 4)))
    expected = layer_norm(e, updater.norm.gain, updater.norm.bias)
    assert np.allclose(update_guider(e, hidden, updater).data, expected.data, atol=1e-12)

def encode(model, library, icd_ids, query):
    emb = model.library_embeddings(library)
    tokens = model.tokens(icd_ids, query, library, emb, with_eos=True)
    return tokens, model.guider(query, library)

def test_unit_relevance_equals_plain_decoder():
    """Test that forcing t = 1 reproduces plain causal attention."""
    library = make_library()
    model = TacoModel(small_config(layers=(1,)))
    with no_grad():
        tokens, guider = encode(model, library, ("d01", "d03", "d04"), make_query())
        forced = model.forward(tokens, guider, relevance_override=np.ones(len(tokens))).hidden.data
        plain = model.forward(tokens, guider, disable_task_attention=True).hidden.data
    np.testing.assert_allclose(forced, plain, atol=1e-9)

def test_decoder_is_causal():
    """Test that changing token k never moves hidden states before k."""
    library = make_library()
    model = TacoModel(small_config())
    with no_grad():
        tokens, guider = encode(model, library, ("d01", "d03", "d04"), make_query())
        base = model.forward(tokens, guider).hidden.data
        for k in range(1, len(tokens)):
            E = tokens.embeddings.data.copy()
            E[k] += np.array([0.7, -0.3, 0.2, 0.5])
            changed = TokenSequence(Tensor(E), tokens.roles, tokens.icd_ids)
            out = model.forward(changed, guider).hidden.data
            np.testing.assert_allclose(out[:k], base[:k], atol=1e-12)
            assert not np.allclose(out[k], base[k])

def test_decoder_degenerate_config_and_determinism():
    """Test a one-block decoder without task-aware layers and seeded reproducibility."""
    library = make_library()
    query = make_query()
    model = TacoModel(small_config(depth=1, layers=()), seed=3)
    with no_grad():
        tokens, guider = encode(model, library, ("d00", "d05"), query)
        out = model.forward(tokens, guider)
    assert out.masks == {} and out.hidden.shape == (5, 4)

    a = TacoModel(small_config(), seed=11)
    b = TacoModel(small_config(), seed=11)
    seq = IclSequence("Inst", ("d02", "d04"), query)
    with no_grad():
        la = a.sequence_logits(seq, library).logits.data
        lb = b.sequence_logits(seq, library).logits.data
    assert np.array_equal(la, lb)

def test_next_token_logits():
    """Test the tied head geometry, masking and normalization."""
    E = Tensor(np.eye(3))
    h = Tensor(np.array([0.0, 1.0, 0.0]))
    W = Tensor(np.eye(3))
    logits = next_token_logits(h, E, W, Tensor(np.zeros(3)), Tensor([-5.0]))
    assert logits.shape == (4,)
    assert int(np.argmax(logits.data)) == 1
    probs = masked_softmax(next_token_logits(h, E, W, Tensor(np.zeros(3)), Tensor([-5.0]), masked=[1])).data
    assert probs[1] == 0.0
    assert abs(probs.sum() - 1.0) < 1e-12

def test_ce_loss():
    """Test the closed forms and the vocabulary check."""
    assert abs(ce_loss(Tensor(np.zeros((3, 5))), [0, 4, 2]).item() - np.log(5)) < 1e-12
    saturated = Tensor(np.array([[30.0, -30.0], [-30.0, 30.0]]))
    assert ce_loss(saturated, [0, 1]).item() < 1e-9
    with pytest.raises(VocabularyError):
        ce_loss(Tensor(np.zeros((2, 3))), [0, 3])

    logits = make_rng(0).normal(size=(3, 4))
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    expected = -np.mean(logp[np.arange(3), [1, 0, 3]])
    assert abs(ce_loss(Tensor(logits), [1, 0, 3]).item() - expected) < 1e-12

def test_sparsity_loss_closed_forms():
    """Test uniform rows, a one-hot row and the reverse direction."""
    roles = (TokenRole.BOS, TokenRole.TASK_QUERY, TokenRole.ICD)
    tokens = TokenSequence(Tensor(np.ones((3, 2))), roles, ("a",))
    upper = np.triu(np.ones((3, 3), dtype=bool), k=1)
    uniform = np.where(upper, -np.inf, 0.0)
    loss, skipped = sparsity_loss({1: Tensor(uniform)}, tokens)
    assert abs(loss.item()) < 1e-12 and skipped == 0

    peaked = uniform.copy()
    peaked[2, 0] = 1000.0
    loss, _ = sparsity_loss({1: Tensor(peaked), 2: Tensor(uniform)}, tokens)
    assert abs(loss.item() - np.log(3)) < 1e-12
    reverse, _ = sparsity_loss({1: Tensor(peaked)}, tokens, direction="reverse")
    assert abs(reverse.item() + np.log(3)) < 1e-12

def test_loss_breakdown_identity():
    """Test additivity of the total and its reduction to CE at zero weights."""
    library = make_library()
    model = TacoModel(small_config())
    batch = [IclSequence("Inst", ("d01", "d02"), make_query(seed=s)) for s in range(3)]
    loss = batch_loss(model, batch, library, 0.3, 0.05)
    b = loss.breakdown
    assert abs(b.total - (b.ce + 0.3 * b.sparse + 0.05 * b.l2_tg)) < 1e-9
    zero = batch_loss(model, batch, library, 0.0, 0.0).breakdown
    assert zero.total == zero.ce

def test_full_model_gradient_check():
    """Test reverse-mode gradients of the total loss on a 2-ICD instance."""
    library = make_library(n=4)
    model = TacoModel(small_config(), seed=2)
    seq = IclSequence("Inst", ("d03", "d01"), make_query())
    params = model.parameters()

    report = grad_check(lambda: batch_loss(model, [seq], library, 0.5, 0.1).total, params,
                        tol=1e-4, max_entries=4, rng=make_rng(0))
    assert report.passed, report.worst()

    params.zero_grad()
    batch_loss(model, [seq], library, 0.5, 0.1).total.backward()
    silent = [name for name, p in params.items()
              if name != "embedder.eos" and (p.grad is None or not np.any(p.grad != 0.0))]
    assert silent == []

def test_adamw_step():
    """Test one update against the closed form, with and without decay."""
    model = TacoModel(small_config())
    params = model.parameters()
    names = list(params)
    for name, p in params.items():
        p.data = np.ones_like(p.data)
        p.grad = np.full_like(p.data, 2.0)
    optimizer = AdamW(params, lr=0.1, weight_decay=0.5, no_decay=[names[0]])
    optimizer.step()
    # bias-corrected moments give an update of lr * g / |g|
    assert np.allclose(params[names[0]].data, 1.0 - 0.1 * 2.0 / (2.0 + 1e-8))
    assert np.allclose(params[names[1]].data, 1.0 - 0.1 * 0.5 - 0.1 * 2.0 / (2.0 + 1e-8))
    assert optimizer.step_count == 1

def test_cosine_warm_restarts():
    """Test the schedule start, restart boundaries and midpoint."""
    schedule = CosineWarmRestarts(1e-4, t0=10, t_mult=2, eta_min=0.0)
    assert schedule.get_lr() == 1e-4
    assert schedule.restart_steps(3) == [10, 30, 70]
    for boundary in schedule.restart_steps(3):
        assert schedule.lr_at(boundary) == 1e-4
    assert abs(schedule.lr_at(5) - 0.5e-4) < 1e-15
    assert schedule.lr_at(9) < schedule.lr_at(1)
    flat = CosineWarmRestarts(1.0, t0=4, t_mult=1)
    assert flat.lr_at(8) == 1.0

def test_checkpoint_round_trip(tmp_path):
    """Test parameter restoration and hash checks."""
    config = small_config()
    model = TacoModel(config, seed=9)
    path = save_checkpoint(tmp_path / "model", model, epoch=3, run_config_hash="abc")
    assert path.suffix == ".npz"
    restored = load_model(path)
    for name, p in model.parameters().items():
        assert np.array_equal(p.data, restored.parameters()[name].data)
    assert load_checkpoint(path).epoch == 3

    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected_model_hash=small_config(d=6).config_hash())
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected_run_hash="other")
    with pytest.raises(CheckpointMismatchError):
        TacoModel(small_config(d=6)).parameters().load_state_dict(load_checkpoint(path).params)

if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    test_binary_fusion_matches_gate_formula()
    test_fusion_dimension_checks()
    test_ternary_weights_stay_in_feasible_set()
    test_init_task_guider()
    test_token_sequence_layout()
    test_relevance_weights()
    test_build_task_mask_matches_hand_evaluation()
    test_task_mask_with_unit_relevance_is_causal()
    test_task_mask_pattern_depends_only_on_roles()
    test_ta_attention_and_guider_update_identities()
    test_unit_relevance_equals_plain_decoder()
    test_decoder_is_causal()
    test_decoder_degenerate_config_and_determinism()
    test_next_token_logits()
    test_ce_loss()
    test_sparsity_loss_closed_forms()
    test_loss_breakdown_identity()
    test_full_model_gradient_check()
    test_adamw_step()
    test_cosine_warm_restarts()
    with tempfile.TemporaryDirectory() as tmp:
        test_checkpoint_round_trip(Path(tmp))
    logger.info("Model tests completed successfully!")
