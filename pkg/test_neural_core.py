# test_neural_core.py - Dense networks, Adam, soft updates and checkpoints

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from src.neural_core import (
    CheckpointError,
    DenseNet,
    DenseNetSpec,
    NonFiniteGradientError,
    ParameterSet,
    ShapeError,
    StaleCacheError,
    adam_step,
    gradient_check,
    load_parameters,
    orthogonal_init,
    restore_parameters,
    save_parameters,
    soft_update,
)


# ============================================
# INITIALIZATION
# ============================================

def test_orthogonal_init(rng):
    wide = orthogonal_init(4, 9, 2.0, rng)
    np.testing.assert_allclose(wide @ wide.T, 4.0 * np.eye(4), atol=1e-12)
    tall = orthogonal_init(9, 4, 1.0, rng)
    np.testing.assert_allclose(tall.T @ tall, np.eye(4), atol=1e-12)
    with pytest.raises(ShapeError):
        orthogonal_init(0, 3, 1.0, rng)


def test_spec_validation():
    with pytest.raises(ShapeError):
        DenseNetSpec(layer_sizes=[3, 1], activations=['linear'])
    with pytest.raises(ShapeError):
        DenseNetSpec(layer_sizes=[3, 4, 1], activations=['relu'])
    with pytest.raises(ShapeError):
        DenseNetSpec(layer_sizes=[3, 4, 1], activations=['relu', 'tanh'])

    spec = DenseNetSpec.mlp(20, [256, 128], 1)
    assert spec.activations == ['relu', 'relu', 'linear']
    assert spec.input_size == 20 and spec.output_size == 1


def test_biases_start_at_zero_and_output_gain(rng):
    net = DenseNet(DenseNetSpec.mlp(5, [8], 3, output_gain=0.01), rng)
    assert all(not b.any() for b in net.biases)
    np.testing.assert_allclose(net.weights[-1] @ net.weights[-1].T, 1e-4 * np.eye(3), atol=1e-15)


# ============================================
# FORWARD AND BACKWARD
# ============================================

def test_forward_shapes(rng):
    net = DenseNet(DenseNetSpec.mlp(6, [16, 8], 2, output='sigmoid'), rng)
    y = net(rng.standard_normal(6))
    assert y.shape == (2,)
    batch = net(rng.standard_normal((5, 6)))
    assert batch.shape == (5, 2)
    assert np.all((batch > 0) & (batch < 1))
    with pytest.raises(ShapeError):
        net(np.zeros(7))


def test_backward_matches_hand_derivation():
    spec = DenseNetSpec(layer_sizes=[2, 2, 1], activations=['relu', 'linear'])
    params = ParameterSet(arrays=[
        np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([0.0, -10.0]),
        np.array([[3.0, 4.0]]), np.array([0.5]),
    ])
    net = DenseNet(spec, params=params)
    y, cache = net.forward(np.array([2.0, 1.0]))
    # hidden pre-activations (1, -9): second unit is off
    assert y[0] == pytest.approx(3.5)
    grads, dx = net.backward(cache, np.array([1.0]))
    np.testing.assert_allclose(grads[0], [[6.0, 3.0], [0.0, 0.0]])
    np.testing.assert_allclose(grads[1], [3.0, 0.0])
    np.testing.assert_allclose(grads[2], [[1.0, 0.0]])
    np.testing.assert_allclose(grads[3], [1.0])
    np.testing.assert_allclose(dx, [3.0, -3.0])
    print("✓ Two-layer backward equals the chain rule by hand")


@pytest.mark.parametrize('output', ['linear', 'sigmoid'])
def test_gradient_check_passes(rng, output):
    net = DenseNet(DenseNetSpec.mlp(8, [32, 16], 4, output=output), rng)
    result = gradient_check(net, rng, points=200, name=output)
    assert result.passed, f"max rel error {result.max_rel_error:.3e}"
    print(f"✓ {output} head: max relative error {result.max_rel_error:.2e}")


def test_gradient_check_catches_wrong_backward(rng, monkeypatch):
    net = DenseNet(DenseNetSpec.mlp(4, [8], 2), rng)
    original = DenseNet.backward

    def broken(self, cache, output_grad):
        grads, dx = original(self, cache, output_grad)
        grads[0] = 1.1 * grads[0]
        return grads, dx

    monkeypatch.setattr(DenseNet, 'backward', broken)
    assert not gradient_check(net, rng, points=20).passed


def test_stale_cache_rejected(rng):
    net = DenseNet(DenseNetSpec.mlp(3, [4], 1), rng)
    y, cache = net.forward(np.ones(3))
    grads, _ = net.backward(cache, np.ones(1))
    adam_step(net.params, grads, lr=1e-3)
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones(1))


# ============================================
# OPTIMIZER
# ============================================

def test_adam_first_step_moves_by_lr(rng):
    params = ParameterSet(arrays=[np.zeros(3), np.ones((2, 2))])
    grads = [np.array([1.0, -2.0, 0.0]), np.full((2, 2), 0.5)]
    adam_step(params, grads, lr=0.01)
    np.testing.assert_allclose(params.arrays[0], [-0.01, 0.01, 0.0], atol=1e-9)
    np.testing.assert_allclose(params.arrays[1], np.full((2, 2), 0.99), atol=1e-9)
    assert params.step == 1


def test_adam_rejects_bad_gradients():
    params = ParameterSet(arrays=[np.zeros(2)])
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, [np.array([np.nan, 0.0])], lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(params, [np.zeros(3)], lr=0.1)


def test_adam_minimizes_quadratic():
    params = ParameterSet(arrays=[np.array([5.0, -3.0])])
    for _ in range(2000):
        adam_step(params, [2.0 * params.arrays[0]], lr=0.05)
    assert np.max(np.abs(params.arrays[0])) < 5e-2


def test_soft_update_extremes(rng):
    a = DenseNet(DenseNetSpec.mlp(3, [4], 2), rng)
    b = DenseNet(DenseNetSpec.mlp(3, [4], 2), rng)
    before = b.params.flat()
    soft_update(a.params, b.params, 0.0)
    np.testing.assert_array_equal(b.params.flat(), before)
    soft_update(a.params, b.params, 0.005)
    np.testing.assert_allclose(b.params.flat(), 0.005 * a.params.flat() + 0.995 * before)
    soft_update(a.params, b.params, 1.0)
    np.testing.assert_array_equal(b.params.flat(), a.params.flat())


# ============================================
# CHECKPOINTS
# ============================================

def test_checkpoint_is_bit_exact(rng, tmp_path):
    net = DenseNet(DenseNetSpec.mlp(5, [7, 3], 2), rng)
    path = save_parameters(tmp_path / 'actor.txt', {'actor': net.params})
    stored = load_parameters(path)

    clone = DenseNet(DenseNetSpec.mlp(5, [7, 3], 2), np.random.default_rng(99))
    restore_parameters(clone.params, stored['actor'], 'actor')
    for original, restored in zip(net.params.arrays, clone.params.arrays):
        assert np.array_equal(original, restored)

    x = rng.standard_normal((4, 5))
    assert np.array_equal(net(x), clone(x))
    print("✓ %.17g text checkpoint restores every bit")


def test_checkpoint_errors(rng, tmp_path):
    with pytest.raises(CheckpointError):
        load_parameters(tmp_path / 'missing.txt')

    bogus = tmp_path / 'bogus.txt'
    bogus.write_text("weights\n1 2 3\n")
    with pytest.raises(CheckpointError):
        load_parameters(bogus)

    net = DenseNet(DenseNetSpec.mlp(5, [7], 2), rng)
    path = save_parameters(tmp_path / 'net.txt', {'net': net.params})
    other = DenseNet(DenseNetSpec.mlp(5, [8], 2), rng)
    with pytest.raises(CheckpointError):
        restore_parameters(other.params, load_parameters(path)['net'], 'net')


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
