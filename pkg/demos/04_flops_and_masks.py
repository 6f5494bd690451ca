"""
Masks, parameter counts and FLOPs by hand
=========================================

Builds a DLinear model directly, prunes it layer by layer and checks the
reported counts against simple arithmetic. Also shows a prune/grow exchange
and the gradient-based growth rule on a toy layer.
"""
import numpy as np

from pals import ModelConfig, build_model, count_flops, count_params, prune_fraction, snapshot
from pals.numerics import rng_stream
from pals.sparsity import LayerMask, SparseLayerState, prune_and_grow

rng = rng_stream(0)
model = build_model(ModelConfig(kind="dlinear", lookback=96, horizon=96, n_vars=8), rng)

# two (H, L) weight matrices plus two H-long biases
print("params:", count_params(model), "=", 2 * 96 * 96 + 2 * 96)
# each active weight costs a multiply and an add, for every channel
print("FLOPs per window:", count_flops(model, 1), "=", 2 * 2 * 96 * 96 * 8)

# %% prune 75% of the seasonal branch, nothing from the trend branch
prune_fraction(model.layer("seasonal.weight"), 0.75)
snap = snapshot(model.layers)
print(f"global sparsity {snap.global_sparsity:.4f}, active {snap.active} of {snap.total}")
print("nonzero params:", count_params(model, nonzero_only=True))
print("FLOPs per window now:", count_flops(model, 1))

# %% a toy exchange: prune the 2 smallest weights, grow the 2 largest-gradient holes
w = np.array([[0.5, -0.1, 0.0, 0.9], [0.05, 0.0, -0.7, 0.0]])
mask = LayerMask(w != 0)
g = np.array([[0.0, 0.0, 3.0, 0.0], [0.0, -5.0, 0.0, 1.0]])
layer = SparseLayerState("toy", w, mask, g)
print("before:\n", mask.bits.astype(int))
print("pruned, grown:", prune_and_grow(layer, 0.4, 0.4))
print("after:\n", layer.mask.bits.astype(int))
print("weights (new connections start at zero):\n", layer.weights)
