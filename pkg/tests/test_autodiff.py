"""Tests for the reverse-mode differentiation engine, its layers and checkpoints."""

import numpy as np
import pytest

import autodiff as ad


def test_add_and_mul_backward():
    a = ad.Param("a", np.array([1.0, 2.0]))
    b = ad.Param("b", np.array([3.0, -1.0]))
    ad.total(ad.mul(ad.add(a, b), b)).backward()
    # d/da sum((a+b)*b) = b ; d/db = a + 2b
    np.testing.assert_allclose(a.grad, [3.0, -1.0])
    np.testing.assert_allclose(b.grad, [7.0, 0.0])


def test_gradients_accumulate_until_zeroed():
    p = ad.Param("p", np.array([2.0]))
    ad.total(ad.square(p)).backward()
    ad.total(ad.square(p)).backward()
    np.testing.assert_allclose(p.grad, [8.0])
    p.zero_grad()
    np.testing.assert_allclose(p.grad, [0.0])


def test_sgd_step_updates_and_clears():
    p = ad.Param("p", np.array([1.0, -1.0]))
    ad.total(ad.square(p)).backward()
    ad.sgd_step([p], 0.25)
    np.testing.assert_allclose(p.value, [0.5, -0.5])
    np.testing.assert_allclose(p.grad, [0.0, 0.0])


def test_adam_first_step_moves_each_entry_by_the_learning_rate():
    p = ad.Param("p", np.array([1.0, -1.0, 0.5]))
    optimizer = ad.Adam([p], learning_rate=0.1)
    ad.total(ad.square(p)).backward()
    optimizer.step()
    np.testing.assert_allclose(p.value, [0.9, -0.9, 0.4], atol=1e-6)
    np.testing.assert_array_equal(p.grad, [0.0, 0.0, 0.0])


def test_adam_minimizes_a_quadratic():
    p = ad.Param("p", np.zeros(2))
    target = np.array([3.0, -2.0])
    optimizer = ad.make_optimizer('adam', [p], 0.1)
    for _ in range(500):
        ad.total(ad.square(ad.sub(p, target))).backward()
        optimizer.step()
    np.testing.assert_allclose(p.value, target, atol=0.05)


def test_make_optimizer_rejects_unknown_names():
    assert isinstance(ad.make_optimizer('sgd', [], 0.1), ad.SGD)
    with pytest.raises(ValueError, match='rmsprop'):
        ad.make_optimizer('rmsprop', [], 0.1)


def test_euclidean_distance_values():
    assert ad.euclidean_distance([0.0, 0.0], [3.0, 4.0]).item() == 5.0
    assert ad.euclidean_distance([1.5, 2.0], [1.5, 2.0]).item() == 0.0
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, v = rng.normal(size=5), rng.normal(size=5)
        assert ad.euclidean(u, v) == ad.euclidean(v, u)


def test_distance_gradient_is_zero_at_coincidence():
    u = ad.Param("u", np.array([1.0, 2.0]))
    ad.euclidean_distance(u, np.array([1.0, 2.0])).backward()
    np.testing.assert_array_equal(u.grad, [0.0, 0.0])


def test_lstm_step_with_zero_parameters():
    params = ad.LSTMParams(W=ad.Param("W", np.zeros((8, 5))), b=ad.Param("b", np.zeros(8)))
    x = np.zeros(3)
    h, c = ad.lstm_step(params, x, np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(h.value, [0.0, 0.0])
    np.testing.assert_array_equal(c.value, [0.0, 0.0])

    c_prev = np.array([0.8, -2.0])
    h, c = ad.lstm_step(params, x, np.zeros(2), c_prev)
    np.testing.assert_allclose(c.value, 0.5 * c_prev)
    np.testing.assert_allclose(h.value, 0.5 * np.tanh(0.5 * c_prev))


def test_lstm_step_matches_straight_line_equations():
    rng = np.random.default_rng(5)
    params = ad.LSTMParams.initialize("lstm", 3, 2, rng)
    x, h_prev, c_prev = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)

    z = params.W.value @ np.concatenate([x, h_prev]) + params.b.value
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    i, f, o, g = sig(z[0:2]), sig(z[2:4]), sig(z[4:6]), np.tanh(z[6:8])
    c_expected = f * c_prev + i * g
    h_expected = o * np.tanh(c_expected)

    h, c = ad.lstm_step(params, x, h_prev, c_prev)
    np.testing.assert_allclose(c.value, c_expected, rtol=1e-12)
    np.testing.assert_allclose(h.value, h_expected, rtol=1e-12)


def test_attention_pool_weights():
    x = np.array([1.0, -2.0, 0.5])
    g, a = ad.attention_pool(np.array([0.3, 0.1, 0.9]), [x])
    np.testing.assert_array_equal(g.value, x)
    np.testing.assert_array_equal(a, [1.0])

    _, a = ad.attention_pool(np.zeros(2), [np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    np.testing.assert_allclose(a, [0.5, 0.5])

    rng = np.random.default_rng(2)
    w = rng.normal(size=4)
    xs = [rng.normal(size=4) for _ in range(3)]
    g, a = ad.attention_pool(w, xs)
    scores = np.array([w @ x for x in xs])
    expected_a = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(a, expected_a, rtol=1e-12)
    np.testing.assert_allclose(g.value, sum(ai * xi for ai, xi in zip(expected_a, xs)), rtol=1e-12)
    assert np.all((a > 0) & (a < 1))
    assert abs(a.sum() - 1.0) < 1e-12


@pytest.mark.parametrize('seed', range(5))
def test_grad_check_linear_and_distance(seed):
    rng = np.random.default_rng(seed)
    W = ad.init_uniform("W", (3, 4), 4, rng)
    b = ad.init_uniform("b", (3,), 4, rng)
    x, target = rng.normal(size=4), rng.normal(size=3)
    report = ad.grad_check(lambda: ad.euclidean_distance(ad.linear_forward(W, b, x), target), [W, b])
    assert report.passed, report.per_param


@pytest.mark.parametrize('seed', range(5))
def test_grad_check_sparse_linear(seed):
    rng = np.random.default_rng(seed)
    W = ad.init_uniform("W", (3, 6), 6, rng)
    b = ad.init_uniform("b", (3,), 6, rng)
    indices = np.array([0, 2, 5])
    target = rng.normal(size=3)
    report = ad.grad_check(lambda: ad.euclidean_distance(ad.sparse_linear(W, b, indices), target), [W, b])
    assert report.passed, report.per_param


@pytest.mark.parametrize('seed', range(5))
def test_grad_check_lstm_chain(seed):
    rng = np.random.default_rng(seed)
    params = ad.LSTMParams.initialize("lstm", 3, 2, rng)
    xs = [rng.normal(size=3) for _ in range(4)]
    report = ad.grad_check(lambda: ad.sum_squares(ad.lstm_run(params, xs)[-1]), params.parameters())
    assert report.passed, report.per_param


@pytest.mark.parametrize('seed', range(5))
def test_grad_check_attention_pool(seed):
    rng = np.random.default_rng(seed)
    w = ad.Param("w", rng.normal(size=3))
    xs = [ad.Param(f"x{i}", rng.normal(size=3)) for i in range(4)]
    report = ad.grad_check(lambda: ad.sum_squares(ad.attention_pool(w, xs)[0]), [w] + xs)
    assert report.passed, report.per_param


def test_grad_check_bce_with_logits():
    rng = np.random.default_rng(1)
    z = ad.Param("z", rng.normal(size=5))
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    report = ad.grad_check(lambda: ad.mean(ad.bce_with_logits(z, y)), [z])
    assert report.passed


def test_grad_check_flags_a_wrong_gradient():
    p = ad.Param("p", np.array([1.0, 2.0]))

    def broken():
        return ad.Tensor(np.sum(p.value ** 2), (p,), lambda g: p._accumulate(g * p.value))

    assert not ad.grad_check(broken, [p]).passed


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    tensors = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=4), "s": np.array(np.pi)}
    path = tmp_path / 'model.ckpt'
    ad.save_checkpoint(path, tensors, {"model": "test", "note": "two words"})
    loaded, header = ad.load_checkpoint(path)
    assert header == {"model": "test", "note": "two words"}
    for name, value in tensors.items():
        np.testing.assert_array_equal(loaded[name], value)
        assert loaded[name].shape == value.shape


def test_checkpoint_with_short_payload_is_rejected(tmp_path):
    path = tmp_path / 'bad.ckpt'
    path.write_text("param\tw\t2,2\n1.0 2.0 3.0\n", encoding='utf-8')
    with pytest.raises(ad.CheckpointFormatError):
        ad.load_checkpoint(path)
