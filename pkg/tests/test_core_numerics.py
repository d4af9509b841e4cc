"""
Test script for the tensor core: primitives, masked softmax, layer norm,
similarities, KL to uniform and the gradient checker.
"""
import math

import numpy as np
import pytest

from taco_icl.utils.logger import setup_logging
from taco_icl.core import (
    Tensor,
    parameter,
    no_grad,
    matmul,
    masked_fill,
    masked_softmax,
    log_softmax,
    layer_norm,
    cosine_sim,
    cosine_matrix,
    kl_uniform,
    gelu,
    concat,
    stack,
    grad_check,
    make_rng,
    derive_seed,
)
from taco_icl.exceptions import (
    DimensionError,
    DegenerateRowError,
    DegenerateVectorError,
    InvalidDistributionError,
    GradientProbeError,
)

# Configure logging
logger = setup_logging("tests.core_numerics")

def test_matmul_values():
    """Test identity and hand-computed products."""
    eye = np.eye(2)
    assert np.array_equal(matmul(eye, eye).data, eye)
    out = matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
    assert np.array_equal(out.data, np.array([[2.0], [4.0]]))

def test_matmul_gradient_and_shape_error():
    """Test d sum(a @ b) / da = ones @ b.T and the dimension check."""
    rng = make_rng(1)
    a = parameter(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    matmul(a, b).sum().backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-12)

    report = grad_check(lambda: matmul(a, b).sum(), {"a": a})
    assert report.passed

    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))

def test_masked_softmax():
    """Test uniform, masked and high-precision softmax cases."""
    assert np.allclose(masked_softmax([0.0, 0.0, 0.0]).data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    for x in (-5.0, 0.0, 7.5):
        out = masked_softmax([x, -np.inf]).data
        assert out[0] == 1.0 and out[1] == 0.0

    out = masked_softmax([1.0, 2.0, 3.0]).data
    denom = math.fsum(math.exp(v) for v in (1.0, 2.0, 3.0))
    expected = [math.exp(v) / denom for v in (1.0, 2.0, 3.0)]
    assert np.allclose(out, expected, rtol=0, atol=1e-15)

    rng = make_rng(2)
    logits = rng.normal(size=(5, 6))
    mask = rng.random((5, 6)) < 0.4
    mask[:, 0] = False
    probs = masked_softmax(masked_fill(logits, mask, -np.inf)).data
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(probs[mask] == 0.0)

    with pytest.raises(DegenerateRowError):
        masked_softmax([[0.0, 1.0], [-np.inf, -np.inf]])

def test_masked_softmax_gradient():
    """Test that masked entries get zero gradient and the rest match finite differences."""
    rng = make_rng(3)
    x = parameter(rng.normal(size=(3, 4)))
    mask = np.zeros((3, 4), dtype=bool)
    mask[0, 3] = mask[2, 1] = True
    weights = Tensor(rng.normal(size=(3, 4)))

    def f():
        return (masked_softmax(masked_fill(x, mask, -np.inf)) * weights).sum()

    report = grad_check(f, {"x": x})
    assert report.passed, report.errors
    assert np.all(x.grad[mask] == 0.0)

def test_log_softmax_matches_log_of_softmax():
    """Test log_softmax against log(masked_softmax)."""
    values = [[0.3, -1.2, 2.0], [1.0, -np.inf, 0.5]]
    logp = log_softmax(values).data
    probs = masked_softmax(values).data
    finite = np.isfinite(logp)
    assert np.allclose(np.exp(logp[finite]), probs[finite], atol=1e-14)
    assert logp[1, 1] == -np.inf

def test_layer_norm():
    """Test zero-variance rows, normalized rows and random-row statistics."""
    gain, bias = np.ones(4), np.zeros(4)
    assert np.allclose(layer_norm(np.full((1, 4), 3.0), gain, bias).data, 0.0)

    out = layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2), eps=1e-14).data
    assert np.allclose(out, [[1.0, -1.0]], atol=1e-12)

    row = make_rng(4).normal(size=(1, 16)) * 10.0 + 2.0
    out = layer_norm(row, np.ones(16), np.zeros(16), eps=1e-5).data
    assert abs(out.mean()) < 1e-9
    assert abs(out.var() - 1.0) < 1e-6

def test_layer_norm_gradient():
    """Test the analytic layer-norm backward on all three inputs."""
    rng = make_rng(5)
    x = parameter(rng.normal(size=(3, 5)))
    gain = parameter(rng.normal(size=5))
    bias = parameter(rng.normal(size=5))
    weights = Tensor(rng.normal(size=(3, 5)))
    report = grad_check(lambda: (layer_norm(x, gain, bias) * weights).sum(),
                        {"x": x, "gain": gain, "bias": bias})
    assert report.passed, report.errors

def test_cosine_sim():
    """Test self, orthogonal and hand-evaluated cosine similarities."""
    v = np.array([0.5, -2.0, 3.0])
    assert abs(cosine_sim(v, v).item() - 1.0) < 1e-12
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]).item() == 0.0
    expected = 11.0 / (math.sqrt(5.0) * 5.0)
    assert abs(cosine_sim([1.0, 2.0], [3.0, 4.0]).item() - expected) < 1e-12

    with pytest.raises(DegenerateVectorError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])

    m = cosine_matrix(np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[0.0, 2.0]])).data
    assert np.allclose(m, [[0.0], [1.0 / math.sqrt(2.0)]])

def test_kl_uniform():
    """Test the KL identity, one-hot closed form and a hand-evaluated case."""
    assert abs(kl_uniform(np.full(5, 0.2)).item()) < 1e-12
    one_hot = np.zeros(6)
    one_hot[2] = 1.0
    assert abs(kl_uniform(one_hot).item() - math.log(6)) < 1e-12

    p = [0.7, 0.2, 0.1]
    expected = math.fsum(q * math.log(q * 3) for q in p)
    assert abs(kl_uniform(p).item() - expected) < 1e-12

    with pytest.raises(InvalidDistributionError):
        kl_uniform([0.5, 0.6])
    with pytest.raises(InvalidDistributionError):
        kl_uniform([1.2, -0.2])

def test_kl_of_masked_softmax_gradient():
    """Test kl_uniform(masked_softmax(x)) passes the gradient checker."""
    x = parameter(make_rng(6).normal(size=7))
    report = grad_check(lambda: kl_uniform(masked_softmax(x)), {"x": x})
    assert report.max_error < 1e-6, report.errors

def test_grad_check_polynomial_and_probe_error():
    """Test x^2 at 3 and the non-finite probe error."""
    x = parameter(np.array(3.0))
    report = grad_check(lambda: x * x, {"x": x}, h=1e-5)
    assert report.max_error < 1e-9
    assert abs(x.grad - 6.0) < 1e-12

    y = parameter(np.array(-1.0))
    with pytest.raises(GradientProbeError):
        grad_check(lambda: y.sqrt(), {"y": y})

def test_grad_check_zero_gradient_and_mismatch():
    """Test a shift-invariant parameter passes and an untracked dependence fails."""
    rng = make_rng(8)
    logits = Tensor(rng.normal(size=5))
    weights = Tensor(rng.normal(size=5))
    shift = parameter(np.array([0.7]))
    report = grad_check(lambda: (masked_softmax(logits + shift) * weights).sum(), {"shift": shift})
    assert report.passed, report.abs_errors
    assert report.abs_errors["shift"] < 1e-7

    x = parameter(np.array([1.0, 2.0]))
    report = grad_check(lambda: Tensor(x.data * 3.0).sum() + x.sum() * 0.0, {"x": x})
    assert not report.passed
    assert report.failures() == ["x"] and report.worst() == "x"
    assert abs(report.abs_errors["x"] - 3.0) < 1e-6

def test_composite_gradients():
    """Test gelu, concat, stack, indexing and clip through the checker."""
    rng = make_rng(7)
    a = parameter(rng.normal(size=(2, 3)))
    b = parameter(rng.normal(size=(2, 2)))

    def f():
        joined = concat([gelu(a), b.tanh()], axis=1)
        stacked = stack([joined[0], joined[1] * 2.0])
        return (stacked.clip(-0.9, 0.9) ** 2).sum() + joined[:, 1].sigmoid().sum()

    report = grad_check(f, {"a": a, "b": b})
    assert report.passed, report.errors

def test_no_grad_records_nothing():
    """Test that operations inside no_grad do not build a graph."""
    x = parameter(np.ones(3))
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert (x * 2.0).sum().requires_grad

def test_rng_determinism():
    """Test that equal seeds produce equal streams and labels separate sub-seeds."""
    assert np.array_equal(make_rng(42).normal(size=8), make_rng(42).normal(size=8))
    assert derive_seed(0, "world") == derive_seed(0, "world")
    assert derive_seed(0, "world") != derive_seed(0, "train")

if __name__ == "__main__":
    test_matmul_values()
    test_matmul_gradient_and_shape_error()
    test_masked_softmax()
    test_masked_softmax_gradient()
    test_log_softmax_matches_log_of_softmax()
    test_layer_norm()
    test_layer_norm_gradient()
    test_cosine_sim()
    test_kl_uniform()
    test_kl_of_masked_softmax_gradient()
    test_grad_check_polynomial_and_probe_error()
    test_grad_check_zero_gradient_and_mismatch()
    test_composite_gradients()
    test_no_grad_records_nothing()
    test_rng_determinism()
    logger.info("Core numerics tests completed successfully!")
