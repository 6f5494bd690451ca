"""
Comparing the sparsity controllers
==================================

GMP prunes along a cubic schedule and never regrows; GraNet follows the same
schedule but swaps a decaying fraction of weights each update; RigL keeps a
fixed sparsity and only exchanges connections. PALS picks its own sparsity.
Target sparsity for the fixed-schedule methods is set to 0.7 here.
"""
from pals import ExperimentConfig, train

rows = []
for kind in ["dense", "gmp", "granet", "rigl", "pals"]:
    cfg = ExperimentConfig.from_dict({
        "data": {"synth": {"seed": 3, "T": 1500, "m": 2, "period": 12.0, "noise_std": 0.2}},
        "model": {"kind": "mlp", "lookback": 36, "horizon": 12, "hidden": [64]},
        "controller": {"kind": kind, "target_sparsity": 0.7},
        "epochs": 5,
        "lr": 1e-3,
    })
    r = train(cfg)
    rows.append((kind, r.test["mse"], r.checkpoint_sparsity, r.params["nonzero"],
                 r.flops["test_total"]))

print(f"{'method':8s} {'MSE':>8s} {'S':>6s} {'params':>8s} {'FLOPs':>12s}")
for kind, m, s, p, f in rows:
    print(f"{kind:8s} {m:8.4f} {s:6.3f} {p:8d} {f:12d}")

# GraNet and GMP share the schedule, so their sparsity columns agree;
# RigL sits at its initial sparsity for the whole run.
