import json

import numpy as np
import pytest

from pals import cli
from pals.checkpoint import load_checkpoint
from pals.harness import ExperimentConfig, evaluate, load_config, mae, mse, prepare_data, train, write_outputs
from pals.numerics import DimensionError

SYNTH = {"seed": 1, "T": 700, "m": 2, "period": 12, "trend_slope": 0.0, "noise_std": 0.1}


def tiny(**over):
    d = {"data": {"synth": dict(SYNTH)},
         "model": {"kind": "dlinear", "lookback": 24, "horizon": 12, "moving_avg_kernel": 5},
         "controller": {"kind": "pals", "delta_t": 5},
         "epochs": 3, "lr": 1e-2}
    cfg = ExperimentConfig.from_dict(d)
    return cfg.replace(**over) if over else cfg


def test_metrics_hand_values():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0 and mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    assert mse([3.0], [3.0]) == 0.0 and mae([3.0], [3.0]) == 0.0
    rng = np.random.default_rng(0)
    p, t = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert mse(t + 3 * (p - t), t) == pytest.approx(9 * mse(p, t))
    assert mae(t - 3 * (p - t), t) == pytest.approx(3 * mae(p, t))
    with pytest.raises(DimensionError):
        mse(np.zeros(3), np.zeros(4))


def test_config_defaults_and_validation():
    cfg = ExperimentConfig.from_dict({"data": {"synth": SYNTH}})
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.patience) == (10, 32, 1e-4, 3)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"data": {"synth": SYNTH}, "epochs": 0})
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"data": {"synth": SYNTH}, "controller": {"lambda": 2}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({})


def test_load_toml_config(tmp_path):
    (tmp_path / "exp.toml").write_text(
        'epochs = 2\nseed = 5\n[data]\npath = "d.csv"\n[model]\nkind = "mlp"\nhidden = [8]\n'
        '[controller]\nkind = "rigl"\ntarget_sparsity = 0.7\n')
    cfg = load_config(str(tmp_path / "exp.toml"))
    assert cfg.data.path == str(tmp_path / "d.csv")
    assert cfg.model.hidden == (8,) and cfg.controller.target_sparsity == 0.7 and cfg.seed == 5


def test_zero_lr_leaves_parameters_untouched():
    cfg = tiny(**{"lr": 0.0, "controller.kind": "dense"})
    from pals.models import build_model
    from pals.numerics import rng_stream
    fresh = build_model(cfg.model, rng_stream(cfg.seed))
    report = train(cfg)
    for k, v in fresh.params.items():
        assert np.array_equal(report.model.params[k], v)


def test_dense_trace_has_zero_sparsity():
    report = train(tiny(**{"controller.kind": "dense"}))
    assert report.trace and all(r["s_after"] == 0.0 and r["s_before"] == 0.0 for r in report.trace)
    assert report.final_sparsity == 0.0


@pytest.mark.parametrize("kind", ["pals", "gmp", "granet", "rigl"])
def test_trace_invariants(kind):
    report = train(tiny(**{"controller.kind": kind, "controller.target_sparsity": 0.6}))
    assert report.trace[-1]["s_after"] == report.final_sparsity
    its = [r["iteration"] for r in report.trace]
    assert its == sorted(its) and all(i % 5 == 0 for i in its)
    if kind == "rigl":
        assert {round(r["s_after"], 12) for r in report.trace} == {round(report.trace[0]["s_before"], 12)}
    if kind in ("gmp", "granet"):
        s = [r["s_after"] for r in report.trace]
        assert all(b >= a for a, b in zip(s, s[1:]))


def test_reported_metrics_come_from_best_checkpoint():
    cfg = tiny(**{"epochs": 6, "patience": 2, "lr": 0.3})
    report = train(cfg)
    vals = [e["val_loss"] for e in report.epochs]
    assert report.best_epoch == int(np.argmin(vals))
    again = evaluate(report.model, report.data.val)
    assert again["mse"] == pytest.approx(vals[report.best_epoch], rel=1e-12)


def test_early_stopping_patience():
    report = train(tiny(**{"epochs": 10, "patience": 1, "lr": 5.0}))
    vals = [e["val_loss"] for e in report.epochs]
    if report.epochs_run < 10:
        assert vals[-1] >= min(vals[:-1])


def test_pals_never_shrinks_above_smax():
    report = train(tiny(**{"controller.s_max": 0.3, "epochs": 4}))
    for r in report.trace:
        if r["decision"] == "shrink":
            assert r["s_before"] < 0.3 or r["s_before"] < 0.2


def test_same_seed_reports_identical():
    a = train(tiny()).to_json(include_wall_time=False)
    b = train(tiny()).to_json(include_wall_time=False)
    assert a == b


def test_univariate_flag():
    report = train(tiny(**{"data.univariate": True, "epochs": 1}))
    assert report.dataset["n_vars"] == 1 and report.model.config.n_vars == 1


@pytest.mark.parametrize("kind", ["mlp", "mini_transformer"])
def test_other_models_train(kind):
    cfg = tiny(**{"model.kind": kind, "model.hidden": [16], "model.d_model": 8, "model.d_ff": 8,
                  "epochs": 1, "lr": 1e-3})
    report = train(cfg)
    assert np.isfinite(report.test["mse"])


def test_evaluate_contracts():
    report = train(tiny(**{"epochs": 1}))
    model, ds = report.model, report.data.test
    full = evaluate(model, ds)
    from pals.data import WindowedDataset
    doubled = WindowedDataset(ds.segment, ds.values, np.concatenate([ds.starts, ds.starts]),
                              ds.lookback, ds.horizon)
    assert evaluate(model, doubled)["flops"] == 2 * full["flops"]
    for layer in model.layers:
        from pals.sparsity import prune_fraction
        prune_fraction(layer, 0.5)
    assert evaluate(model, ds)["flops"] < full["flops"]


def test_evaluate_overfit_single_example():
    from pals.models import ModelConfig, build_model
    from pals.numerics import AdamState, adam_step, rng_stream
    from pals.data import make_windows
    values = np.sin(np.arange(30.0))[:, None]
    ds = make_windows(values, range(0, 14), 10, 4)
    ds = type(ds)(ds.segment, ds.values, ds.starts[:1], 10, 4)
    m = build_model(ModelConfig(kind="mlp", lookback=10, horizon=4, n_vars=1, hidden=(16,)), rng_stream(0))
    adam = AdamState(lr=1e-2)
    x, y = ds.batch([0])
    for _ in range(500):
        pred = m.forward(x)
        adam_step(m.params, m.backward(2 * (pred - y) / pred.size), adam)
    assert evaluate(m, ds)["mse"] < 1e-6


def test_evaluate_rejects_mismatched_dataset():
    report = train(tiny(**{"epochs": 1}))
    other = prepare_data(tiny(**{"model.lookback": 20})).test
    with pytest.raises(DimensionError):
        evaluate(report.model, other)


def test_write_outputs(tmp_path):
    report = train(tiny(**{"epochs": 1}))
    paths = write_outputs(report, str(tmp_path))
    rep = json.loads(open(paths["report.json"]).read())
    for key in ("config", "test", "final_sparsity", "params", "flops", "epochs_run", "decisions"):
        assert key in rep
    lines = open(paths["trace.jsonl"]).read().splitlines()
    assert len(lines) == rep["n_updates"]
    header = open(paths["predictions.csv"]).readline().strip()
    assert header == "index,variable,y_true,y_pred"
    model, scaler, extra = load_checkpoint(paths["checkpoint.json"])
    assert extra["experiment"] == rep["config"]


# -- CLI --------------------------------------------------------------------

@pytest.fixture
def synth_csv(tmp_path):
    p = str(tmp_path / "syn.csv")
    assert cli.main(["synth", "--out", p, "--length", "500", "--vars", "2", "--period", "12"]) == 0
    return p


def test_cli_train_with_config(tmp_path, synth_csv, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(f'epochs = 1\nlr = 0.01\n[data]\npath = "{synth_csv}"\n'
                   '[model]\nlookback = 24\nhorizon = 12\nmoving_avg_kernel = 5\n'
                   '[controller]\nkind = "pals"\ndelta_t = 5\n')
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "trace.jsonl").exists()
    assert (out / "predictions.csv").exists()
    line = capsys.readouterr().out.strip()
    assert line.startswith("MSE=") and "MAE=" in line and "S=" in line and "FLOPs=" in line

    assert cli.main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--segment", "val"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["segment"] == "val" and res["mse"] >= 0


def test_cli_flag_overrides(tmp_path, synth_csv):
    out = tmp_path / "run"
    rc = cli.main(["train", "--data", synth_csv, "--lookback", "24", "--horizon", "12",
                   "--epochs", "1", "--controller", "gmp", "--set", "controller.target_sparsity=0.4",
                   "--set", "model.moving_avg_kernel=5", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["controller"]["kind"] == "gmp"
    assert rep["config"]["controller"]["target_sparsity"] == 0.4


def test_cli_sweep_grid(tmp_path, synth_csv, capsys):
    out = tmp_path / "sweep"
    rc = cli.main(["sweep", "--data", synth_csv, "--lookback", "24", "--horizon", "12",
                   "--epochs", "1", "--delta-t", "5", "--lambda", "1.05,1.1,1.2",
                   "--gamma", "1.05,1.1,1.2", "--out", str(out)])
    assert rc == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert len(rows) == 9
    assert {(r["lambda"], r["gamma"]) for r in rows} == {
        (l, g) for l in (1.05, 1.1, 1.2) for g in (1.05, 1.1, 1.2)}
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[:2] == ["lambda", "gamma"] and len(table) == 10


def test_cli_missing_dataset(tmp_path, capsys):
    rc = cli.main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")])
    assert rc != 0
    assert "missing.csv" in capsys.readouterr().err


def test_cli_bad_flag():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--no-such-flag"])
    assert exc.value.code != 0
