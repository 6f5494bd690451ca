"""
Sparsifying a small transformer
===============================

The mini transformer has eight sparsifiable projections (input, Q, K, V,
output, two feed-forward layers and the readout). Layer norms and the
positional embedding stay dense. This demo trains it with PALS and shows how
the density ends up distributed across the projections.
"""
from pals import ExperimentConfig, train

cfg = ExperimentConfig.from_dict({
    "data": {"synth": {"seed": 1, "T": 1200, "m": 2, "period": 12.0, "noise_std": 0.1}},
    "model": {"kind": "mini_transformer", "lookback": 24, "horizon": 12,
              "d_model": 16, "d_ff": 32},
    "controller": {"kind": "pals", "delta_t": 10},
    "epochs": 4,
    "lr": 1e-3,
})
report = train(cfg)

print(f"test MSE {report.test['mse']:.4f}, global sparsity {report.checkpoint_sparsity:.3f}")
for name, d in report.per_layer_density.items():
    bar = "#" * int(round(40 * d))
    print(f"{name:18s} {d:5.3f} {bar}")

# attention maps from the last forward pass are kept on the model
att = report.model.attention
print("attention tensor shape (batch, query, key):", att.shape)
print("rows sum to one:", bool(abs(att.sum(-1) - 1).max() < 1e-12))
