"""Binary weight masks, magnitude pruning, gradient growth, sparsity accounting.

All selections are deterministic: ties in magnitude or gradient are broken by
the lower flat index. Counts derived from fractions use round-half-up and
every layer keeps at least one active weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def round_half_up(x):
    return int(math.floor(x + 0.5))


class LayerMask:
    """Boolean mask with a cached popcount."""

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=bool)
        self.active_count = int(self.bits.sum())

    @property
    def shape(self):
        return self.bits.shape

    @property
    def size(self):
        return self.bits.size

    @property
    def density(self):
        return self.active_count / self.bits.size

    def set(self, flat_idx, value):
        flat = self.bits.reshape(-1)
        before = int(flat[flat_idx].sum())
        flat[flat_idx] = value
        after = len(flat_idx) if value else 0
        self.active_count += after - before

    def to_hex(self):
        return np.packbits(self.bits.reshape(-1)).tobytes().hex()

    @classmethod
    def from_hex(cls, text, shape):
        n = int(np.prod(shape))
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw)[:n].astype(bool).reshape(shape))


def init_mask(shape, d_init, rng):
    """Uniformly random mask with ``round(d_init * size)`` bits set (at least 1)."""
    if not 0.0 < d_init <= 1.0:
        raise ValueError(f"initial density must be in (0, 1], got {d_init}")
    size = int(np.prod(shape))
    n_on = max(1, min(size, round_half_up(d_init * size)))
    bits = np.zeros(size, dtype=bool)
    if n_on == size:
        bits[:] = True
    else:
        bits[rng.permutation(size)[:n_on]] = True
    return LayerMask(bits.reshape(shape))


@dataclass
class SparseLayerState:
    """A weight matrix together with its mask and most recent dense gradient.

    ``weights`` aliases the owning model's parameter array, so in-place edits
    here are seen by the model.
    """

    name: str
    weights: np.ndarray
    mask: LayerMask
    last_grad: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.last_grad is None:
            self.last_grad = np.zeros_like(self.weights)
        if self.mask.shape != self.weights.shape:
            raise ValueError(f"mask {self.mask.shape} does not match "
                             f"weights {self.weights.shape} in {self.name}")

    @property
    def size(self):
        return self.weights.size


def apply_mask(state):
    state.weights[~state.mask.bits] = 0.0
    return state


def _prune_smallest(state, k):
    if k <= 0:
        return 0
    active = np.flatnonzero(state.mask.bits)
    mags = np.abs(state.weights.reshape(-1)[active])
    # stable sort over ascending indices -> ties go to the lowest flat index
    drop = active[np.argsort(mags, kind="stable")[:k]]
    state.mask.set(drop, False)
    state.weights.reshape(-1)[drop] = 0.0
    return len(drop)


def prune_fraction(state, fraction):
    """Masks out the ``round(fraction * active)`` smallest-magnitude active weights."""
    if fraction < 0:
        raise ValueError(f"prune fraction must be >= 0, got {fraction}")
    active = state.mask.active_count
    k = min(round_half_up(fraction * active), active - 1)
    return _prune_smallest(state, k)


def prune_to_count(state, target_active):
    """Prunes by magnitude down to ``target_active`` weights; never grows."""
    target_active = max(1, target_active)
    return _prune_smallest(state, state.mask.active_count - target_active)


def grow_count(state, k, adam=None):
    """Activates up to ``k`` inactive positions with the largest ``|last_grad|``.

    New connections start at zero. If an Adam state is given, its moments at
    the new positions are reset.
    """
    if k <= 0:
        return 0
    inactive = np.flatnonzero(~state.mask.bits)
    if len(inactive) == 0:
        return 0
    score = np.abs(state.last_grad.reshape(-1)[inactive])
    grow = inactive[np.argsort(-score, kind="stable")[:k]]
    state.mask.set(grow, True)
    state.weights.reshape(-1)[grow] = 0.0
    if adam is not None:
        adam.reset_positions(state.name, grow)
    return len(grow)


def prune_and_grow(state, zeta_prune, zeta_grow, adam=None):
    """One connectivity update on a layer; both counts use the pre-update active base.

    When the keep-one clamp shortens the prune, the growth count shrinks by the
    same shortfall so equal fractions stay exactly count-preserving.
    Returns (n_pruned, n_grown).
    """
    base = state.mask.active_count
    wanted = round_half_up(zeta_prune * base)
    n_pruned = prune_fraction(state, zeta_prune)
    k_grow = max(0, round_half_up(zeta_grow * base) - (wanted - n_pruned))
    n_grown = grow_count(state, k_grow, adam)
    return n_pruned, n_grown


@dataclass(frozen=True)
class SparsitySnapshot:
    global_sparsity: float
    per_layer: tuple  # ((name, density), ...)
    active: int
    total: int


def snapshot(layers):
    if not layers:
        raise ValueError("snapshot needs at least one sparsifiable layer")
    active = sum(l.mask.active_count for l in layers)
    total = sum(l.size for l in layers)
    per_layer = tuple((l.name, l.mask.density) for l in layers)
    return SparsitySnapshot(1.0 - active / total, per_layer, active, total)
