import numpy as np
from hypothesis import example, given, settings, strategies as st

from pals.numerics import AdamState, rng_stream
from pals.sparsity import (
    LayerMask, SparseLayerState, apply_mask, grow_count, init_mask, prune_and_grow,
    prune_fraction, round_half_up, snapshot,
)


def layer(weights, bits=None, grad=None, name="w"):
    w = np.asarray(weights, float).reshape(1, -1) if np.ndim(weights) == 1 else np.asarray(weights, float)
    bits = np.ones(w.shape, bool) if bits is None else np.asarray(bits, bool).reshape(w.shape)
    g = None if grad is None else np.asarray(grad, float).reshape(w.shape)
    st_ = SparseLayerState(name, w.copy(), LayerMask(bits), g)
    return apply_mask(st_)


def test_init_mask_counts():
    rng = rng_stream(0)
    assert init_mask((3, 5), 1.0, rng).active_count == 15
    assert init_mask((4, 4), 0.5, rng).active_count == 8
    assert init_mask((2, 2), 1e-9, rng).active_count == 1


def test_prune_example():
    s = layer([0.1, -0.5, 0.02, 0.3])
    assert prune_fraction(s, 0.5) == 2
    assert s.mask.bits.reshape(-1).tolist() == [False, True, False, True]
    assert s.weights.reshape(-1).tolist() == [0.0, -0.5, 0.0, 0.3]


def test_prune_zero_fraction_and_rounding():
    s = layer([0.1, -0.5, 0.02, 0.3])
    assert prune_fraction(s, 0.0) == 0 and s.mask.active_count == 4
    s = layer(np.arange(1.0, 11.0))
    assert prune_fraction(s, 0.55) == 6
    assert round_half_up(2.5) == 3 and round_half_up(3.5) == 4


def test_prune_keeps_one():
    s = layer([0.4, 0.1, 0.2])
    prune_fraction(s, 0.99)
    assert s.mask.active_count == 1 and s.weights.reshape(-1)[0] == 0.4


def test_prune_ties_lowest_index():
    s = layer([0.2, 0.2, 0.2, 0.2])
    prune_fraction(s, 0.5)
    assert s.mask.bits.reshape(-1).tolist() == [False, False, True, True]


def test_grow_example():
    s = layer([0.0, 0.0, 0.0, 0.7], bits=[0, 0, 0, 1], grad=[0.2, -0.9, 0.05, 3.0])
    assert grow_count(s, 2) == 2
    assert s.mask.bits.reshape(-1).tolist() == [True, True, False, True]
    assert s.weights.reshape(-1).tolist() == [0.0, 0.0, 0.0, 0.7]


def test_grow_zero_and_clamp():
    s = layer([0.0, 0.0, 0.5], bits=[0, 0, 1], grad=[1, 2, 3])
    assert grow_count(s, 0) == 0
    assert grow_count(s, 10) == 2 and s.mask.active_count == 3


def test_grow_resets_adam_moments():
    s = layer([0.0, 0.5], bits=[0, 1], grad=[1.0, 0.0])
    adam = AdamState()
    adam.first_moment["w"] = np.ones((1, 2))
    adam.second_moment["w"] = np.ones((1, 2))
    grow_count(s, 1, adam)
    assert adam.first_moment["w"].tolist() == [[0.0, 1.0]]
    assert adam.second_moment["w"].tolist() == [[0.0, 1.0]]


def test_apply_mask_properties():
    s = layer([[1.0, 2.0], [3.0, 4.0]], bits=[[1, 0], [1, 1]])
    before = s.weights.copy()
    apply_mask(s)
    assert np.array_equal(s.weights, before)
    s.weights[0, 1] = 0.123  # e.g. perturbed by an optimizer step
    apply_mask(s)
    assert s.weights[0, 1] == 0.0
    full = layer([[1.0, 2.0]])
    apply_mask(full)
    assert full.weights.tolist() == [[1.0, 2.0]]


def test_snapshot_examples():
    assert snapshot([layer(np.ones(6))]).global_sparsity == 0.0
    one = layer(np.ones(8), bits=[1, 1, 1, 0, 0, 0, 0, 0])
    snap = snapshot([one])
    assert snap.per_layer[0][1] == 0.375 and snap.global_sparsity == 0.625
    a = layer(np.ones(10), bits=[1] * 5 + [0] * 5, name="a")
    b = layer(np.ones(30), bits=[1] * 15 + [0] * 15, name="b")
    assert snapshot([a, b]).global_sparsity == 0.5


def test_mask_hex_round_trip():
    rng = rng_stream(2)
    m = init_mask((7, 9), 0.4, rng)
    back = LayerMask.from_hex(m.to_hex(), (7, 9))
    assert np.array_equal(back.bits, m.bits) and back.active_count == m.active_count


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.0, 0.95), st.floats(0.0, 1.5),
       st.integers(0, 2**31))
def test_prune_grow_invariants(r, c, zp, zg, seed):
    rng = rng_stream(seed)
    s = SparseLayerState("w", rng.standard_normal((r, c)), init_mask((r, c), 0.7, rng),
                         rng.standard_normal((r, c)))
    apply_mask(s)
    prune_and_grow(s, zp, zg)
    assert s.mask.active_count == int(s.mask.bits.sum()) >= 1
    assert np.all(s.weights[~s.mask.bits] == 0.0)


def test_stable_exchange_with_single_active_weight():
    s = layer([0.0, 0.3, 0.0], bits=[0, 1, 0], grad=[1.0, 0.0, 2.0])
    assert prune_and_grow(s, 0.5, 0.5) == (0, 0)
    assert s.mask.active_count == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.0, 0.95), st.integers(0, 2**31))
@example(2, 1, 0.5, 0)
def test_equal_prune_and_grow_preserves_count(r, c, zeta, seed):
    rng = rng_stream(seed)
    s = SparseLayerState("w", rng.standard_normal((r, c)), init_mask((r, c), 0.6, rng),
                         rng.standard_normal((r, c)))
    apply_mask(s)
    before = s.mask.active_count
    prune_and_grow(s, zeta, zeta)
    assert s.mask.active_count == before
