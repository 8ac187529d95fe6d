import numpy as np
import pytest

from capspoe.energy import (
    EnergyModel,
    binary_cross_entropy,
    cd1_step,
    generate,
    generate_visible,
    hidden_code,
    hidden_preactivation,
    p_hidden_given_visible,
    p_visible_given_hidden,
    pair_energy,
    sample_bernoulli,
    total_energy,
    train_capsule_layer,
)
from capspoe.kernels import SeededRng, SgdMomentumState
from capspoe.routing import CapsuleLayerSpec, route_forward

from conftest import binary, random_model


def test_pair_energy_example():
    W = np.array([[1.0, 2.0], [0.0, -1.0]])
    assert pair_energy([1.0, 1.0], [1.0, 0.0], W) == -3.0
    assert pair_energy([1.0, 1.0], [1.0, 1.0], W) == -2.0
    with pytest.raises(ValueError):
        pair_energy([1.0], [1.0, 0.0], W)


def test_total_energy_against_loops(np_rng):
    model = random_model(np_rng, 3, 2, 4, 2)
    x, h = binary(np_rng, (3, 2)), binary(np_rng, (2, 4))
    c = np_rng.random((3, 2))
    ref = sum(c[i, j] * pair_energy(x[i], h[j], model.W[i, j]) for i in range(3) for j in range(2))
    assert total_energy(model, x, h, c) == pytest.approx(ref, rel=1e-13)
    assert total_energy(model, x, np.zeros((2, 4)), c) == 0.0
    assert total_energy(model, x, h, np.zeros((3, 2))) == 0.0


def test_energy_is_linear_in_coefficients(np_rng):
    model = random_model(np_rng, 2, 2, 2, 2)
    x, h = binary(np_rng, (2, 2)), binary(np_rng, (2, 2))
    c1, c2 = np_rng.random((2, 2, 2))
    lhs = total_energy(model, x, h, c1 + 2 * c2)
    rhs = total_energy(model, x, h, c1) + 2 * total_energy(model, x, h, c2)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conditionals_half_when_nothing_drives_them(np_rng):
    model = random_model(np_rng, 3, 2, 4, 5)
    np.testing.assert_array_equal(p_hidden_given_visible(model, np.zeros((3, 5)), np_rng.random((3, 2))), 0.5)
    np.testing.assert_array_equal(p_visible_given_hidden(model, np.ones((2, 4)), np.zeros((3, 2))), 0.5)


def test_preactivation_is_minus_energy_gradient(np_rng):
    # E is linear in each h_jn, so dE/dh = -preactivation exactly
    model = random_model(np_rng, 3, 2, 3, 2)
    x, c = np_rng.random((3, 2)), np_rng.random((3, 2))
    pre = hidden_preactivation(model, x, c)
    h0 = np.zeros((2, 3))
    for idx in np.ndindex(2, 3):
        h = h0.copy()
        h[idx] = 1.0
        assert -total_energy(model, x, h, c) == pytest.approx(pre[idx], rel=1e-13)


def test_batched_conditionals_match_single(np_rng):
    model = random_model(np_rng, 4, 3, 2, 2)
    x = np_rng.random((5, 4, 2))
    c = route_forward(model.W, x)[0].coefficients
    ph = p_hidden_given_visible(model, x, c)
    for b in range(5):
        np.testing.assert_allclose(ph[b], p_hidden_given_visible(model, x[b], c[b]), rtol=1e-14)


def test_sample_bernoulli():
    rng = SeededRng(0)
    np.testing.assert_array_equal(sample_bernoulli(np.zeros(5), rng), 0.0)
    np.testing.assert_array_equal(sample_bernoulli(np.ones(5), rng), 1.0)
    s = sample_bernoulli(np.full(100_000, 0.3), rng)
    assert abs(s.mean() - 0.3) < 0.01
    with pytest.raises(ValueError):
        sample_bernoulli(np.array([1.2]), rng)
    with pytest.raises(ValueError):
        sample_bernoulli(np.array([np.nan]), rng)


def test_cross_entropy_of_half():
    assert binary_cross_entropy(np.array([0.0, 1.0]), np.array([0.5, 0.5])) == pytest.approx(np.log(2))


def test_cd_gradient_vanishes_without_coefficients(np_rng):
    model = random_model(np_rng, 2, 2, 3, 3)
    res = cd1_step(model, binary(np_rng, (8, 2, 3)), 3, SeededRng(0), coefficients=np.zeros((2, 2)))
    np.testing.assert_array_equal(res.grad, 0.0)


def test_cd_gradient_is_zero_for_zero_data(np_rng):
    # x = 0 kills the positive phase; the negative phase is c * 0.25 on every pair
    model = EnergyModel(np.zeros((2, 2, 2, 2)))
    c = np.full((2, 2), 0.5)
    res = cd1_step(model, np.zeros((4, 2, 2)), 3, SeededRng(0), coefficients=c)
    np.testing.assert_allclose(res.grad, -0.125)


def test_cd_is_deterministic(np_rng):
    model = random_model(np_rng, 3, 2, 2, 2)
    x = binary(np_rng, (16, 3, 2))
    a = cd1_step(model, x, 3, SeededRng(9))
    b = cd1_step(model, x, 3, SeededRng(9))
    np.testing.assert_array_equal(a.grad, b.grad)
    assert a.reconstruction_xent == b.reconstruction_xent
    with pytest.raises(ValueError):
        cd1_step(model, x + 2.0, 3, SeededRng(9))


def _planted(n, rng):
    # two prototype patterns over 4 capsules of 3 neurons with 5% bit noise
    protos = np.array([[1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0],
                       [0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1]], dtype=float)
    pick = protos[(rng.uniform(n) < 0.5).astype(int)]
    flip = rng.uniform(pick.shape) < 0.05
    return np.abs(pick - flip).reshape(n, 4, 3)


def test_training_reduces_reconstruction_error():
    rng = SeededRng(0)
    data = _planted(256, rng)
    model = EnergyModel.initialize(CapsuleLayerSpec(4, 3), CapsuleLayerSpec(2, 4), rng, scale=0.1)
    opt = SgdMomentumState(0.1, momentum=0.5)

    def batches(epoch):
        order = rng.permutation(len(data))
        for k in range(0, len(data), 32):
            yield data[order[k:k + 32]]

    _, records = train_capsule_layer(model, batches, 20, opt, rng)
    first = np.mean([r["reconstruction_xent"] for r in records if r["epoch"] == 1])
    last = np.mean([r["reconstruction_xent"] for r in records if r["epoch"] == 20])
    assert last < first - 0.05


def test_zero_learning_rate_keeps_weights(np_rng):
    model = random_model(np_rng, 2, 2, 2, 2, 0.1)
    data = binary(np_rng, (8, 2, 2))
    out, records = train_capsule_layer(model, lambda e: [data], 2, SgdMomentumState(0.0), SeededRng(0))
    np.testing.assert_array_equal(out.W, model.W)
    assert [r["step"] for r in records] == [0, 1]


def test_hidden_code():
    h = hidden_code(SeededRng(0), CapsuleLayerSpec(3, 4), 1)
    assert not h[0].any() and not h[2].any()
    assert np.all((h[1] > 0) & (h[1] < 1))
    assert not hidden_code(SeededRng(0), CapsuleLayerSpec(3, 4), None).any()
    with pytest.raises(IndexError):
        hidden_code(SeededRng(0), CapsuleLayerSpec(3, 4), 3)


def test_generate_from_empty_code_is_half(np_rng):
    model = random_model(np_rng, 5, 3, 2, 4)
    img = generate(model, None, SeededRng(0), decoder=lambda v: v)
    np.testing.assert_array_equal(img, 0.5)
    a = generate(model, 2, SeededRng(4), decoder=lambda v: v)
    b = generate(model, 2, SeededRng(4), decoder=lambda v: v)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (5, 4)
    assert np.array_equal(generate_visible(model, np.zeros((3, 2))), np.full((5, 4), 0.5))
