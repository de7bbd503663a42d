"""
🧪 ALIGNED SAE LAB - TESTES DE GRADIENTES
========================================
backward analítico contra o oráculo de diferenças finitas em todas as variantes
"""

import numpy as np
import pytest

from exceptions import ConfigError, NumericalError
from grad_engine import GradSet, backward, finite_diff_grads, grad_check, random_instance, variant_grid
from numerics import RngStream
from sae_model import SaeVariant, alignment_scores, make_params

STANDARD_RELU = SaeVariant(encoder_mode="standard", activation="relu")


def test_perfect_reconstruction_has_zero_gradient():
    params = make_params(STANDARD_RELU, [[1.0], [0.0]], w_enc_raw=[[1.0, 0.0]])
    loss, grads = backward(params, np.array([[1.0, 0.0]]), lam=0.0)
    assert loss == 0.0
    assert grads.max_abs() <= 1e-10


def test_dead_features_get_no_encoder_gradient():
    params = make_params(STANDARD_RELU, np.ones((3, 4)), b_enc=-np.ones(4), w_enc_raw=np.zeros((4, 3)))
    _, grads = backward(params, RngStream(1).normal((5, 3)), lam=0.5)
    assert not grads["w_enc_raw"].any()
    assert not grads["b_enc"].any()


def test_zero_input_bias_gradient_is_twice_b_dec():
    b_dec = np.array([0.3, -1.2, 2.0])
    params = make_params(STANDARD_RELU, np.ones((3, 2)), b_enc=-np.ones(2), b_dec=b_dec, w_enc_raw=np.ones((2, 3)))
    _, grads = backward(params, np.zeros((4, 3)), lam=0.1)
    assert np.allclose(grads["b_dec"], 2.0 * b_dec, atol=1e-15)


def test_scalar_quadratic_finite_difference_is_exact():
    params = make_params(STANDARD_RELU, [[1.5]], b_enc=[0.2], b_dec=[0.4], w_enc_raw=[[0.7]])
    x = np.array([[1.1]])
    _, analytic = backward(params, x, lam=0.0)
    numeric = finite_diff_grads(params, x, lam=0.0, step=1e-6)
    assert numeric["b_dec"][0] == pytest.approx(analytic["b_dec"][0], abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("variant", variant_grid(), ids=lambda v: v.label)
def test_backward_matches_finite_differences(variant, seed):
    params, x = random_instance(variant, RngStream(1000 + seed))
    report = grad_check(params, x, lam=0.1, p_current=0.7)
    assert report.max_rel_err <= 1e-4, (report.worst_tensor, report.worst_index, report.per_tensor)


def test_tied_mode_has_no_encoder_gradient():
    variant = SaeVariant(encoder_mode="tied", activation="relu")
    params, x = random_instance(variant, RngStream(5))
    _, grads = backward(params, x, lam=0.1)
    assert list(grads) == ["w_dec", "b_enc", "b_dec"]
    for name, grad in grads.items():
        assert grad.shape == params.free_tensors()[name].shape


def test_corrupted_gradient_is_reported_as_worst():
    params, x = random_instance(SaeVariant(encoder_mode="aligned", activation="relu"), RngStream(8))
    _, grads = backward(params, x, lam=0.1)
    corrupted = {name: grad.copy() for name, grad in grads.items()}
    corrupted["w_dec"][2, 5] += 1.0
    report = grad_check(params, x, lam=0.1, grads=GradSet(corrupted))
    assert report.worst_tensor == "w_dec"
    assert report.worst_index == (2, 5)
    assert report.max_rel_err > 1e-4


def test_topk_boundary_indices_are_skipped():
    variant = SaeVariant(encoder_mode="standard", activation="topk", k=1)
    params = make_params(variant, [[1.0, 0.5], [0.2, 1.0]], w_enc_raw=np.eye(2))
    x = np.array([[1.0, 1.0 + 1e-9]])
    report = grad_check(params, x, lam=0.0)
    assert report.skipped > 0
    assert report.max_rel_err <= 1e-4


def test_aligned_perturbation_stays_on_constraint():
    params, _ = random_instance(SaeVariant(encoder_mode="aligned", activation="relu"), RngStream(13))
    rng = RngStream(14)
    for _ in range(10):
        moved = params.with_tensors({"a_free": params.a_free + rng.normal(params.a_free.shape)})
        assert np.max(np.abs(alignment_scores(moved) - 1.0)) <= 1e-10


def test_backward_is_pure_and_deterministic():
    params, x = random_instance(SaeVariant(encoder_mode="aligned", activation="batchtopk", k=2), RngStream(3))
    before = {name: tensor.copy() for name, tensor in params.free_tensors().items()}
    loss_a, grads_a = backward(params, x, lam=0.2)
    loss_b, grads_b = backward(params, x, lam=0.2)
    assert loss_a == loss_b
    for name in grads_a:
        assert np.array_equal(grads_a[name], grads_b[name])
        assert np.array_equal(params.free_tensors()[name], before[name])


def test_overflow_aborts_with_numerical_error():
    params = make_params(STANDARD_RELU, 2.0 * np.eye(2), w_enc_raw=np.eye(2))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalError):
            backward(params, np.array([[1e300, 1e300]]), lam=0.0)


def test_invalid_arguments():
    params, x = random_instance(STANDARD_RELU, RngStream(2))
    with pytest.raises(ConfigError):
        backward(params, x, lam=-1.0)
    with pytest.raises(ConfigError):
        finite_diff_grads(params, x, lam=0.0, step=0.0)
