import numpy as np
import pytest

from predgrad.errors import DimensionError, InsufficientData
from predgrad.linalg import cosine
from predgrad.network import NetworkConfig, backward, forward, init_network, loss_and_residual
from predgrad.predictor import (FitSample, RefitPolicy, choose_rank, fit_scalar,
                                fit_structured, make_fit_sample, predict_scalar,
                                predict_structured, should_refit)
from predgrad.rng import substream


def deep_linear_net(seed=0, dim=4):
    # square identity-activation layers keep the trunk gradient an exact
    # linear function of the head gradient
    cfg = NetworkConfig(input_dim=dim, hidden_widths=(dim, dim), output_dim=1,
                        activation="identity", seed=seed)
    return init_network(cfg)


def scalar_samples(net, xs, ys):
    samples = []
    for x, y in zip(xs, ys):
        llh, output, cache = forward(net, x)
        _, residual = loss_and_residual(output, np.array([y]), "squared_scalar")
        est = backward(net, cache, residual)
        samples.append(make_fit_sample(llh, residual, est.trunk_grad, net.head_weight))
    return samples


def test_scalar_predictor_exact_on_deep_linear_net():
    net = deep_linear_net(seed=3)
    rng = substream(20, "lin")
    xs = rng.standard_normal((60, 4))
    ys = rng.standard_normal(60)
    pred = fit_scalar(scalar_samples(net, xs, ys), lam=0.0)

    held_x = rng.standard_normal((20, 4))
    held_y = rng.standard_normal(20)
    for x, y in zip(held_x, held_y):
        llh, output, cache = forward(net, x)
        _, residual = loss_and_residual(output, np.array([y]), "squared_scalar")
        true_trunk = backward(net, cache, residual).trunk_grad
        est = predict_scalar(pred, llh, float(output[0]), y)
        assert cosine(est.trunk_grad, true_trunk) >= 0.999
        rel = np.linalg.norm(est.trunk_grad - true_trunk) / np.linalg.norm(true_trunk)
        assert rel <= 1e-6
        # head part is the exact closed form
        head_true = backward(net, cache, residual).head_grad
        assert np.max(np.abs(est.head_grad - head_true)) <= 1e-12


def test_fit_scalar_rejects_zero_residuals():
    net = deep_linear_net()
    rng = substream(21, "zr")
    xs = rng.standard_normal((10, 4))
    samples = scalar_samples(net, xs, rng.standard_normal(10))
    for s in samples:
        s.residual = np.zeros(1)
    with pytest.raises(InsufficientData):
        fit_scalar(samples)


def test_fit_scalar_needs_enough_samples():
    net = deep_linear_net()
    rng = substream(22, "few")
    xs = rng.standard_normal((3, 4))
    with pytest.raises(InsufficientData):
        fit_scalar(scalar_samples(net, xs, rng.standard_normal(3)))


def test_fit_scalar_large_lambda_shrinks_to_zero():
    net = deep_linear_net(seed=4)
    rng = substream(23, "shrink")
    xs = rng.standard_normal((30, 4))
    pred = fit_scalar(scalar_samples(net, xs, rng.standard_normal(30)), lam=1e12)
    assert np.max(np.abs(pred.coef)) <= 1e-8
    est = predict_scalar(pred, xs[0][: net.config.last_hidden], 1.0, 0.0)
    assert np.max(np.abs(est.trunk_grad)) <= 1e-6


def test_predict_scalar_zero_residual_and_zero_map():
    net = deep_linear_net(seed=5)
    rng = substream(24, "pz")
    xs = rng.standard_normal((30, 4))
    pred = fit_scalar(scalar_samples(net, xs, rng.standard_normal(30)))
    llh = rng.standard_normal(4)
    est = predict_scalar(pred, llh, 0.7, 0.7)
    assert np.array_equal(est.trunk_grad, np.zeros_like(est.trunk_grad))
    assert np.array_equal(est.head_grad, np.zeros_like(est.head_grad))

    zero = fit_scalar(scalar_samples(net, xs, rng.standard_normal(30)), lam=0.0)
    zero.coef = np.zeros_like(zero.coef)
    est = predict_scalar(zero, llh, 2.0, 1.0)
    assert np.array_equal(est.trunk_grad, np.zeros_like(est.trunk_grad))
    aug = np.concatenate([llh, [1.0]])
    assert np.allclose(est.head_grad, aug[None, :] * 1.0, atol=1e-14)


def planted_structured(rng, n, p_t=30, d=5, c=3, r=2):
    basis, _ = np.linalg.qr(rng.standard_normal((p_t, r)))
    maps_true = rng.standard_normal((r, d, d + 1))
    head_w = rng.standard_normal((c, d))
    samples = []
    for _ in range(n):
        llh = rng.standard_normal(d)
        residual = rng.standard_normal(c)
        aug = np.concatenate([llh, [1.0]])
        h = head_w.T @ residual
        coeff = np.array([h @ maps_true[i] @ aug for i in range(r)])
        samples.append(FitSample(llh=llh, residual=residual, h=h,
                                 trunk_grad=basis @ coeff))
    return samples, head_w


def test_structured_predictor_recovers_planted_model():
    rng = substream(25, "plant")
    samples, head_w = planted_structured(rng, 150)
    pred = fit_structured(samples[:120], r=2, lam=1e-10)
    for s in samples[120:]:  # held out, same planted model
        est = predict_structured(pred, s.llh, s.residual, head_w)
        assert cosine(est.trunk_grad, s.trunk_grad) >= 0.99


def test_structured_rank_one_parallel_gradients():
    rng = substream(27, "rank1")
    direction = rng.standard_normal(20)
    direction /= np.linalg.norm(direction)
    head_w = rng.standard_normal((2, 4))
    samples = []
    for _ in range(12):
        llh = rng.standard_normal(4)
        residual = rng.standard_normal(2)
        scale = rng.uniform(0.5, 2.0)
        samples.append(make_fit_sample(llh, residual, scale * direction, head_w))
    pred = fit_structured(samples, r=1)
    assert abs(cosine(pred.basis[:, 0], direction)) >= 1.0 - 1e-10
    g = samples[0].trunk_grad
    assert abs(cosine(pred.basis @ (pred.basis.T @ g), g)) >= 1.0 - 1e-10


def test_structured_large_lambda_kills_maps():
    rng = substream(28, "slam")
    samples, _ = planted_structured(rng, 60)
    pred = fit_structured(samples, r=2, lam=1e14)
    assert np.max(np.abs(pred.maps)) <= 1e-8


def test_predict_structured_zero_residual():
    rng = substream(29, "pz2")
    samples, head_w = planted_structured(rng, 60)
    pred = fit_structured(samples, r=2)
    est = predict_structured(pred, rng.standard_normal(5), np.zeros(3), head_w)
    assert np.array_equal(est.trunk_grad, np.zeros_like(est.trunk_grad))


def test_predict_structured_linear_and_scale_equivariant():
    rng = substream(30, "lin2")
    samples, head_w = planted_structured(rng, 60)
    pred = fit_structured(samples, r=2)
    llh = rng.standard_normal(5)
    r1 = rng.standard_normal(3)
    r2 = rng.standard_normal(3)
    e1 = predict_structured(pred, llh, r1, head_w)
    e2 = predict_structured(pred, llh, r2, head_w)
    e12 = predict_structured(pred, llh, r1 + r2, head_w)
    assert np.max(np.abs(e12.trunk_grad - (e1.trunk_grad + e2.trunk_grad))) <= 1e-10
    alpha = -2.5
    ea = predict_structured(pred, llh, alpha * r1, head_w)
    assert np.allclose(ea.trunk_grad, alpha * e1.trunk_grad, atol=1e-10)
    assert np.allclose(ea.head_grad, alpha * e1.head_grad, atol=1e-10)


def test_classification_residual_uses_same_path():
    rng = substream(31, "cls")
    samples, head_w = planted_structured(rng, 60)
    pred = fit_structured(samples, r=2)
    llh = rng.standard_normal(5)
    _, residual = loss_and_residual(rng.standard_normal(3), 1, "cross_entropy", 0.05)
    as_regression = residual.copy()
    e_cls = predict_structured(pred, llh, residual, head_w)
    e_reg = predict_structured(pred, llh, as_regression, head_w)
    assert np.array_equal(e_cls.trunk_grad, e_reg.trunk_grad)
    assert np.array_equal(e_cls.head_grad, e_reg.head_grad)


def test_predicted_head_gradient_always_exact():
    rng = substream(32, "hexact")
    net = init_network(NetworkConfig(4, (6,), 3, activation="tanh", seed=8))
    samples = []
    for _ in range(40):
        x = rng.standard_normal(4)
        llh, output, cache = forward(net, x)
        _, residual = loss_and_residual(output, int(rng.integers(3)),
                                        "cross_entropy", 0.05)
        est = backward(net, cache, residual)
        samples.append(make_fit_sample(llh, residual, est.trunk_grad, net.head_weight))
    pred = fit_structured(samples)
    for _ in range(10):
        x = rng.standard_normal(4)
        llh, output, cache = forward(net, x)
        _, residual = loss_and_residual(output, int(rng.integers(3)),
                                        "cross_entropy", 0.05)
        true_head = backward(net, cache, residual).head_grad
        est = predict_structured(pred, llh, residual, net.head_weight)
        assert np.max(np.abs(est.head_grad - true_head)) <= 1e-12


def test_fit_structured_sample_and_rank_requirements():
    rng = substream(33, "req")
    samples, _ = planted_structured(rng, 4)
    with pytest.raises(InsufficientData):
        fit_structured(samples, r=2)  # needs at least D+1 = 6
    samples, _ = planted_structured(rng, 10)
    with pytest.raises(DimensionError):
        fit_structured(samples, r=50)


def test_should_refit_schedule():
    policy = RefitPolicy(period=50, buffer_capacity=64)
    assert should_refit(policy, 50)
    assert not should_refit(policy, 49)
    assert not should_refit(policy, 0)
    assert should_refit(policy, 100)


def test_choose_rank_energy_rule():
    assert choose_rank(np.array([3.0, 2.0, 1e-9]), cap=10) == 2
    assert choose_rank(np.array([5.0, 4.0, 3.0, 2.0]), cap=2) == 2
    assert choose_rank(np.array([1.0]), cap=10) == 1
