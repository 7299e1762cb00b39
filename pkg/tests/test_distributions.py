import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmle.distributions import ActionSpace, CategoricalPredictor, DeltaPredictor, perturb, sample_uniform
from qmle.nn import adam_step


def test_space_validation():
    with pytest.raises(ValueError):
        ActionSpace(np.array([0.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        ActionSpace.box(2, bins=1)


def test_uniform_samples_in_bounds_and_centered(rng):
    a = sample_uniform(ActionSpace.box(2), 1000, rng)
    assert a.shape == (1000, 2)
    assert np.all(np.abs(a) <= 1.0)
    assert np.all(np.abs(a.mean(axis=0)) < 0.1)


def test_uniform_zero_samples_is_empty(rng):
    assert sample_uniform(ActionSpace.box(3), 0, rng).shape == (0, 3)


def test_high_dimensional_grid_is_never_enumerated(rng):
    space = ActionSpace.box(38, bins=3)
    assert space.n_actions == 3**38 == 1350851717672992089
    assert sample_uniform(space, 5, rng).shape == (5, 38)


def test_three_bin_centers():
    np.testing.assert_array_equal(ActionSpace.box(1).bin_centers(3), [[-1.0, 0.0, 1.0]])


def test_nearest_bin_rule():
    space = ActionSpace.box(1)
    assert space.bin_index(np.array([0.4]), 3)[0] == 1
    assert space.bin_index(np.array([0.5]), 3)[0] == 1  # tie goes to the lower index
    assert space.bin_index(np.array([-0.5]), 3)[0] == 0


def delta_with_head(point, space, sigma=0.01, absolute=False):
    pred = DeltaPredictor("d", 2, space, hidden=4, sigma=sigma, sigma_absolute=absolute)
    store = pred.init_store(np.random.default_rng(0))
    pred.place(store, np.asarray(point), scale=0.0)
    return pred, store


def test_delta_single_sample_is_head(rng):
    pred, store = delta_with_head([0.2, -0.3], ActionSpace.box(2))
    feats = np.ones((1, 2))
    np.testing.assert_array_equal(pred.sample(store, feats, 1, rng)[0, 0], pred.head(store, feats)[0])


def test_delta_zero_sigma_gives_copies(rng):
    pred, store = delta_with_head([0.2, -0.3], ActionSpace.box(2), sigma=0.0)
    s = pred.sample(store, np.ones((1, 2)), 5, rng)[0]
    assert np.all(s == s[0])


def test_delta_sigma_scales(rng):
    space = ActionSpace.box(1, -2.0, 2.0)
    assert delta_with_head([0.0], space, 0.01)[0].sigma[0] == pytest.approx(0.02)
    assert delta_with_head([0.0], space, 0.001, absolute=True)[0].sigma == 0.001


def test_delta_perturbation_spread(rng):
    mu = np.zeros((1, 1))
    s = perturb(mu, 20001, 0.001, ActionSpace.box(1), rng)[0, 1:, 0]
    assert s.std() == pytest.approx(0.001, rel=0.05)


def categorical_with_logits(logits, space):
    pred = CategoricalPredictor("c", 1, space, hidden=2)
    store = pred.init_store(np.random.default_rng(0))
    store["c.out.W"][...] = 0.0
    store["c.out.b"][...] = np.asarray(logits, dtype=float).ravel()
    return pred, store


def test_categorical_uniform_frequencies(rng):
    pred, store = categorical_with_logits([0, 0, 0], ActionSpace.box(1))
    s = pred.sample(store, np.ones((1, 1)), 3000, rng)[0, :, 0]
    for c in (-1.0, 0.0, 1.0):
        assert abs(np.mean(s == c) - 1 / 3) < 0.05


def test_categorical_certain_bin(rng):
    pred, store = categorical_with_logits([-1e3, -1e3, 0], ActionSpace.box(1))
    assert np.all(pred.sample(store, np.ones((1, 1)), 100, rng) == 1.0)


def test_categorical_rows_are_distributions(rng):
    pred = CategoricalPredictor("c", 3, ActionSpace.box(4), hidden=5)
    store = pred.init_store(rng)
    p = pred.probs(store, rng.standard_normal((6, 3)))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)


def test_delta_loss_zero_at_target():
    pred, store = delta_with_head([0.25, -0.5], ActionSpace.box(2))
    feats = np.ones((1, 2))
    assert pred.mle_loss(store, feats, pred.head(store, feats)) == 0.0


def test_categorical_uniform_loss_is_log3():
    pred, store = categorical_with_logits([0, 0, 0], ActionSpace.box(1))
    assert pred.mle_loss(store, np.ones((1, 1)), np.array([[0.7]])) == pytest.approx(math.log(3))


def test_out_of_box_target_is_clamped(caplog):
    pred, store = delta_with_head([0.0, 0.0], ActionSpace.box(2))
    with caplog.at_level(logging.WARNING):
        loss = pred.mle_loss(store, np.ones((1, 2)), np.array([[3.0, 0.0]]))
    assert loss == pytest.approx(1.0)
    assert "clamped" in caplog.text


def test_cross_entropy_decreases_monotonically():
    rng = np.random.default_rng(3)
    pred = CategoricalPredictor("c", 4, ActionSpace.box(3), hidden=16)
    store = pred.init_store(rng)
    feats = rng.standard_normal((1, 4))
    target = np.array([[1.0, -1.0, 0.0]])
    losses = []
    for _ in range(200):
        losses.append(pred.mle_loss(store, feats, target))
        adam_step(store, 0.0005)
    assert np.all(np.diff(losses) < 0)


@pytest.mark.parametrize("seed", range(5))
def test_delta_regression_reaches_target(seed):
    rng = np.random.default_rng(seed)
    space = ActionSpace.box(2)
    pred = DeltaPredictor("d", 4, space, hidden=128)
    store = pred.init_store(rng)
    feats = rng.standard_normal((1, 4))
    target = rng.uniform(-0.9, 0.9, (1, 2))
    for _ in range(2000):
        pred.mle_loss(store, feats, target)
        adam_step(store, 0.0005)
    assert np.max(np.abs(pred.head(store, feats) - target)) < 1e-3


def test_emitted_actions_stay_in_box():
    rng = np.random.default_rng(7)
    space = ActionSpace(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0]))
    delta = DeltaPredictor("d", 2, space, hidden=4, sigma=2.0)
    cat = CategoricalPredictor("c", 2, space, hidden=4)
    ds, cs = delta.init_store(rng), cat.init_store(rng)
    feats = 5 * rng.standard_normal((100, 2))
    draws = [sample_uniform(space, 1000, rng, batch=100), delta.sample(ds, feats, 1000, rng),
             cat.sample(cs, feats, 1000, rng)]
    for d in draws:
        assert d.shape[0] * d.shape[1] == 10**5
        assert np.all(d >= space.low) and np.all(d <= space.high)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_snap_lands_on_nearest_center(x, y):
    space = ActionSpace.box(2, bins=3)
    s = space.snap(np.array([x, y]))
    centers = np.array([-1.0, 0.0, 1.0])
    for v, sv in zip((x, y), s):
        assert sv in centers
        assert abs(v - sv) <= np.min(np.abs(v - centers)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3**5 - 1))
def test_flat_index_round_trip(k):
    space = ActionSpace.box(5, bins=3)
    assert space.flat_index(space.from_flat_index(np.array(k))) == k
