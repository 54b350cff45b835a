"""Tests for experiment configs, orchestration, sweeps, and the CLI."""

import json
import os

import numpy as np
import pytest

from cagm import cli, experiments
from cagm import rng as rng_mod
from cagm.datasets import MultiFidelitySpec, mean_high, mean_low
from cagm.errors import ConfigError, DivergenceError, SchemaError
from cagm.experiments import (
    EXPERIMENT_NAMES,
    MetricSpec,
    ModelSpec,
    SweepSpec,
    _build_training_data,
    _headline_metric,
    apply_cell,
    apply_overrides,
    cell_label,
    config_from_dict,
    generate_data,
    grid_moments,
    load_config,
    multifidelity_predict,
    preset,
    reproduce_figure,
    reproduce_table,
    run,
    save_config,
    sweep,
)
from cagm.model import LossHistory, build_model


def _tiny_appendix(out_dir, seed=0):
    # small enough to train in well under a second
    cfg = preset("appendix_benchmark", seed=seed, out_dir=str(out_dir))
    cfg.data["n_train"] = 60
    cfg.model = ModelSpec(latent_dim=1, gen_hidden=(8, 8), enc_hidden=(8, 8),
                          disc_hidden=(8,))
    cfg.train.iterations = 30
    cfg.train.batch_size = 20
    cfg.metrics = MetricSpec(n_test_locations=9, n_mc=50)
    return cfg


_TINY_SETS = [
    "data.n_train=60", "train.iterations=30", "train.batch_size=20",
    "model.gen_hidden=8,8", "model.enc_hidden=8,8", "model.disc_hidden=8",
    "metrics.n_test_locations=9", "metrics.n_mc=50",
]


# ---------------------------------------------------------------- presets

def test_preset_update_ratios_are_pinned_per_experiment():
    expected = {
        "regression_i": (2, 1),
        "regression_ii": (2, 1),
        "regression_iii": (2, 1),
        "multifidelity": (1, 5),
        "multifidelity_single": (1, 5),
        "burgers": (1, 1),
        "appendix_benchmark": (3, 1),
    }
    for name in EXPERIMENT_NAMES:
        cfg = preset(name)
        assert (cfg.train.k_d, cfg.train.k_g) == expected[name], name
        assert cfg.train.lam == 1.5
        assert cfg.train.learning_rate == 1e-4


def test_preset_architectures():
    assert preset("regression_i").model.latent_dim == 1
    assert preset("regression_i").model.gen_hidden == (100, 100, 100)
    assert preset("regression_i").model.disc_hidden == (100, 100)
    assert preset("multifidelity").model.gen_hidden == (50, 50, 50)
    b = preset("burgers")
    assert b.model.latent_dim == 32
    assert b.model.gen_hidden == (256, 256, 256)
    assert b.train.beta == 0.5
    assert preset("appendix_benchmark").data == {"n_train": 2500}


def test_preset_seed_and_out_dir_threading(tmp_path):
    cfg = preset("regression_ii", seed=4)
    assert cfg.seed == 4 and cfg.train.seed == 4
    assert cfg.out_dir == os.path.join("runs", "regression_ii")
    cfg2 = preset("regression_ii", seed=4, out_dir=str(tmp_path))
    assert cfg2.out_dir == str(tmp_path)


def test_preset_rejects_unknown_name():
    with pytest.raises(ConfigError, match="unknown experiment"):
        preset("regression_iv")


# ---------------------------------------------------------------- config plumbing

def test_ini_round_trip(tmp_path):
    cfg = preset("regression_ii", seed=3, out_dir="somewhere")
    cfg.data["n_train"] = 111
    path = tmp_path / "c.ini"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded.to_dict() == cfg.to_dict()


def test_missing_config_file_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_unknown_keys_are_reported_with_section_prefix():
    doc = preset("regression_i").to_dict()
    doc["train"]["momentum"] = 0.9
    doc["model"]["dropout"] = 0.1
    with pytest.raises(SchemaError) as err:
        config_from_dict(doc)
    assert list(err.value.keys) == ["model.dropout", "train.momentum"]


def test_unknown_section_is_rejected():
    doc = preset("regression_i").to_dict()
    doc["optimizer"] = {"kind": "sgd"}
    with pytest.raises(SchemaError, match="optimizer"):
        config_from_dict(doc)


def test_data_keys_are_validated_per_experiment():
    doc = preset("regression_ii").to_dict()
    doc["data"]["noise_std"] = 0.5  # only case i takes an explicit noise level
    with pytest.raises(SchemaError, match="noise_std"):
        config_from_dict(doc)


def test_config_requires_experiment_name():
    with pytest.raises(SchemaError, match="experiment.name"):
        config_from_dict({"experiment": {"seed": 1}})


def test_train_seed_follows_experiment_seed():
    doc = preset("regression_i", seed=9).to_dict()
    doc["train"]["seed"] = 1234
    cfg = config_from_dict(doc)
    assert cfg.train.seed == 9


def test_apply_overrides():
    cfg = preset("regression_i")
    out = apply_overrides(cfg, ["train.lam=2.5", "model.gen_hidden=30,30",
                                "data.n_train=77", "experiment.data_seed=11"])
    assert out.train.lam == 2.5
    assert out.model.gen_hidden == (30, 30)
    assert out.data["n_train"] == 77
    assert out.data_seed == 11
    assert cfg.train.lam == 1.5  # original untouched


def test_override_parse_errors():
    cfg = preset("regression_i")
    with pytest.raises(ConfigError, match="section.key=value"):
        apply_overrides(cfg, ["lam=2.0"])
    with pytest.raises(SchemaError):
        apply_overrides(cfg, ["train.momentum=0.9"])


def test_config_hash_ignores_seed_and_out_dir_only():
    a = preset("regression_i", seed=0, out_dir="x")
    b = preset("regression_i", seed=5, out_dir="y")
    assert a.config_hash() == b.config_hash()
    c = apply_overrides(a, ["train.lam=2.0"])
    assert c.config_hash() != a.config_hash()


def test_provenance_line_contents():
    cfg = preset("regression_i", seed=2)
    line = cfg.provenance()
    assert f"config_hash={cfg.config_hash()}" in line
    assert "seed=2" in line
    assert "version=" in line


# ---------------------------------------------------------------- data building

def test_regression_training_data_shapes():
    cfg = preset("regression_i")
    cfg.data["n_train"] = 40
    ds, ctx = _build_training_data(cfg)
    assert ds.x.shape == (40, 1) and ds.y.shape == (40, 1)
    assert ctx["holdout"].x.shape == (40, 1)
    assert ds.meta["noise_std"] > 0


def test_multifidelity_row_layouts():
    cfg = preset("multifidelity")
    cfg.data["n_realizations"] = 6
    ds, _ = _build_training_data(cfg)
    assert ds.x.shape == (24, 2)  # (x, y_low) per sensor per realization
    assert ds.y.shape == (24, 1)
    single = preset("multifidelity_single")
    single.data["n_realizations"] = 6
    ds1, _ = _build_training_data(single)
    assert ds1.x.shape == (24, 1)
    assert np.array_equal(ds1.y, ds.y)  # same high-fidelity targets


def test_burgers_training_rows_are_normalized():
    cfg = preset("burgers")
    cfg.data = {"n_realizations": 2, "n_train_snapshots": 5}
    ds, ctx = _build_training_data(cfg)
    assert ds.x.shape == (10, 1)
    assert ds.y.shape == (10, 128)
    assert abs(float(ds.y.std()) - 1.0) < 1e-12
    assert ds.meta["y_scale"] == ctx["y_scale"] > 0.0


def test_training_data_depends_on_data_seed_not_model_seed():
    a = preset("regression_iii", seed=0)
    b = preset("regression_iii", seed=5)
    a.data["n_train"] = b.data["n_train"] = 30
    ds_a, _ = _build_training_data(a)
    ds_b, _ = _build_training_data(b)
    assert np.array_equal(ds_a.x, ds_b.x) and np.array_equal(ds_a.y, ds_b.y)
    c = apply_overrides(a, ["experiment.data_seed=8"])
    ds_c, _ = _build_training_data(c)
    assert not np.array_equal(ds_a.y, ds_c.y)


def test_generate_data_writes_file_pair(tmp_path):
    cfg = _tiny_appendix(tmp_path / "gd")
    generate_data(cfg)
    header = json.loads((tmp_path / "gd" / "dataset.json").read_text())
    assert header["generator_id"] == "appendix_benchmark"
    assert header["spec"]["config_hash"] == cfg.config_hash()
    assert (tmp_path / "gd" / "dataset.npz").exists()


# ---------------------------------------------------------------- prediction helpers

def test_grid_moments_chunk_size_does_not_change_results():
    model = build_model(1, 1, 2, (8,), (8,), (8,), seed=0)
    xs = np.linspace(0.0, 1.0, 7)[:, None]
    m1, v1 = grid_moments(model, xs, 40, rng_mod.stream(0, rng_mod.PREDICT, 0))
    m2, v2 = grid_moments(model, xs, 40, rng_mod.stream(0, rng_mod.PREDICT, 0), chunk=40)
    assert np.array_equal(m1, m2) and np.array_equal(v1, v2)


def test_multifidelity_predict_constant_generator():
    model = build_model(2, 1, 1, (4,), (4,), (4,), seed=0)
    for w in model.generator.weights:
        w[:] = 0.0
    for b in model.generator.biases:
        b[:] = 0.0
    model.generator.biases[-1][:] = 3.25
    mean, var = multifidelity_predict(
        model, MultiFidelitySpec(), np.linspace(0.0, 1.0, 5),
        n_paths=4, n_mc=6, rng=rng_mod.stream(0, rng_mod.PREDICT, 0),
    )
    assert np.allclose(mean, 3.25, atol=1e-12)
    assert np.allclose(var, 0.0, atol=1e-12)


def test_multifidelity_predict_passthrough_matches_low_process():
    # affine generator wired to copy the y_low input column: the predicted
    # process must collapse onto the low-fidelity GP itself
    model = build_model(2, 1, 1, (), (), (4,), seed=0)
    model.generator.weights[0][:] = np.array([[0.0], [1.0], [0.0]])
    model.generator.biases[0][:] = 0.0
    spec = MultiFidelitySpec()
    grid = np.linspace(0.0, 1.0, 5)
    n_paths, n_mc = 100, 100  # pooled sample budget 1e4
    mean, var = multifidelity_predict(
        model, spec, grid, n_paths=n_paths, n_mc=n_mc,
        rng=rng_mod.stream(0, rng_mod.PREDICT, 0),
    )
    k_ll = spec.low.sigma_f2
    # repeats of one path value add no information, so MC error for the
    # mean scales with n_paths, not the pooled count
    se_mean = np.sqrt(k_ll / n_paths)
    se_var = k_ll * np.sqrt(2.0 / (n_paths - 1))
    assert np.all(np.abs(mean - mean_low(grid)) <= 3.0 * se_mean)
    assert np.all(np.abs(var - k_ll) <= 3.0 * se_var)


def test_multifidelity_predict_optimal_generator_hits_exact_mean():
    # affine generator implementing the exact conditional at the sensor
    # x = 0.4: y_high = 0.8 y_low + c + sqrt(0.5) z with c chosen so the
    # marginal mean is the exact high-fidelity mean there
    spec = MultiFidelitySpec()
    x_star = 0.4
    slope = spec.rho  # K_LH(x,x) / K_LL(x,x)
    c = float(mean_high(x_star) - slope * mean_low(x_star))
    model = build_model(2, 1, 1, (), (), (4,), seed=0)
    model.generator.weights[0][:] = np.array(
        [[0.0], [slope], [np.sqrt(spec.high.sigma_f2)]])
    model.generator.biases[0][:] = c
    n_paths, n_mc = 100, 100
    mean, var = multifidelity_predict(
        model, spec, [x_star], n_paths=n_paths, n_mc=n_mc,
        rng=rng_mod.stream(1, rng_mod.PREDICT, 0),
    )
    # repeats of one low path carry no new information about the mean, so
    # the honest effective count for the pooled standard error is n_paths
    se = np.sqrt(var[0]) / np.sqrt(n_paths)
    assert abs(mean[0] - float(mean_high(x_star))) <= 3.0 * se
    # pooled variance approximates the exact high marginal variance 0.564
    assert abs(var[0] - 0.564) <= 0.564 * 0.2


def test_multifidelity_predict_rejects_empty_budget():
    model = build_model(2, 1, 1, (4,), (4,), (4,), seed=0)
    with pytest.raises(ConfigError):
        multifidelity_predict(model, MultiFidelitySpec(), [0.5], 0, 5,
                              rng_mod.stream(0, rng_mod.PREDICT, 0))


# ---------------------------------------------------------------- pipeline

def test_run_writes_all_artifacts(tmp_path):
    cfg = _tiny_appendix(tmp_path / "a")
    report = run(cfg)
    for name in ("config.ini", "dataset.json", "dataset.npz", "loss_history.csv",
                 "checkpoint.json", "marginal_kl.csv", "predictions.csv", "report.json"):
        assert (tmp_path / "a" / name).exists(), name
    assert report["diverged"] is False
    assert "avg_reverse_kl" in report
    assert "neg_d_loss_tail_mean" in report
    assert report["config_hash"] == cfg.config_hash()
    on_disk = json.loads((tmp_path / "a" / "report.json").read_text())
    assert on_disk["avg_reverse_kl"] == report["avg_reverse_kl"]


def test_rerun_reproduces_artifacts_byte_for_byte(tmp_path):
    r1 = run(_tiny_appendix(tmp_path / "one", seed=3))
    r2 = run(_tiny_appendix(tmp_path / "two", seed=3))
    assert r1["avg_reverse_kl"] == r2["avg_reverse_kl"]
    for name in ("loss_history.csv", "marginal_kl.csv", "predictions.csv",
                 "checkpoint.json", "report.json", "dataset.json"):
        a = (tmp_path / "one" / name).read_bytes()
        b = (tmp_path / "two" / name).read_bytes()
        assert a == b, name


def test_run_records_divergence_and_skips_checkpoint(tmp_path, monkeypatch):
    def explode(model, ds, tc):
        raise DivergenceError(
            "non-finite gradient", iteration=3,
            history=LossHistory(d_loss=[0.1] * 4, g_loss=[0.2] * 4, saturation_events=1),
        )

    monkeypatch.setattr(experiments, "train", explode)
    cfg = _tiny_appendix(tmp_path / "d")
    report = run(cfg)
    assert report["diverged"] is True and report["diverged_at"] == 3
    assert (tmp_path / "d" / "loss_history.csv").exists()
    assert (tmp_path / "d" / "report.json").exists()
    assert not (tmp_path / "d" / "checkpoint.json").exists()


def test_tiny_multifidelity_run(tmp_path):
    cfg = preset("multifidelity", seed=0, out_dir=str(tmp_path / "mf"))
    cfg.data["n_realizations"] = 5
    cfg.model = ModelSpec(latent_dim=1, gen_hidden=(8, 8), enc_hidden=(8, 8),
                          disc_hidden=(8,))
    cfg.train.iterations = 20
    cfg.train.batch_size = 10
    cfg.metrics = MetricSpec(n_test_locations=7, n_mc=40, n_paths=10)
    report = run(cfg)
    assert report["exact_high_sigma"] == pytest.approx(np.sqrt(0.564))
    assert "avg_reverse_kl" in report
    assert (tmp_path / "mf" / "predictions.csv").exists()


def test_tiny_burgers_run(tmp_path):
    cfg = preset("burgers", seed=0, out_dir=str(tmp_path / "bg"))
    cfg.data = {"n_realizations": 2, "n_train_snapshots": 4}
    cfg.model = ModelSpec(latent_dim=4, gen_hidden=(16, 16), enc_hidden=(16, 16),
                          disc_hidden=(16,))
    cfg.train.iterations = 5
    cfg.train.batch_size = 8
    cfg.metrics = MetricSpec(n_mc=30)
    report = run(cfg)
    assert report["eval_times"] == [12.5, 25.0, 37.5, 50.0]
    assert len(report["rel_l2_mean"]) == 4
    assert "rel_l2_mean_all" in report and "pearson_sigma_all" in report
    # declared beta is in field units; the trainer sees it rescaled by the
    # normalization applied to the rows
    assert report["beta_effective"] == pytest.approx(
        cfg.train.beta * report["y_scale"] ** 2
    )
    lines = (tmp_path / "bg" / "predictions.csv").read_text().splitlines()
    assert len(lines) == 2 + 4 * 128  # comment, header, rows


# ---------------------------------------------------------------- sweeps

def test_sweep_cells_and_labels():
    cfg = preset("appendix_benchmark")
    lam = apply_cell(cfg, "lambda", 2.0)
    assert lam.train.lam == 2.0 and cfg.train.lam == 1.5
    arch = apply_cell(cfg, "architecture", (3, 20))
    assert arch.model.gen_hidden == (20, 20, 20)
    assert arch.model.enc_hidden == (20, 20, 20)
    assert arch.model.disc_hidden == (20, 20)
    ratio = apply_cell(cfg, "kg_kd", (5, 1))
    assert ratio.train.k_g == 5 and ratio.train.k_d == 1
    assert cell_label("lambda", 1.5) == "lam_1.5"
    assert cell_label("architecture", (3, 100)) == "ng3_nn100"
    assert cell_label("kg_kd", (1, 5)) == "kg1_kd5"


def test_sweep_spec_validation():
    assert SweepSpec(parameter="lambda").grid == (1.0, 1.2, 1.5, 1.8, 2.0, 5.0)
    assert SweepSpec(parameter="architecture").grid[0] == (2, 20)
    with pytest.raises(ConfigError, match="unknown sweep parameter"):
        SweepSpec(parameter="beta")
    with pytest.raises(ConfigError, match="seed"):
        SweepSpec(parameter="lambda", seeds=())


def test_headline_metric_priority():
    assert np.isnan(_headline_metric({"diverged": True, "avg_reverse_kl": 1.0}))
    assert _headline_metric({"avg_reverse_kl": 0.5, "coverage_2sigma": 0.9}) == 0.5
    assert _headline_metric({"rel_l2_mean_all": 0.2}) == 0.2
    assert _headline_metric({"coverage_2sigma": 0.9}) == 0.9
    assert np.isnan(_headline_metric({}))


def test_sweep_writes_tables_and_subruns(tmp_path):
    base = _tiny_appendix(tmp_path / "sw")
    result = sweep(base, SweepSpec(parameter="lambda", grid=(1.0, 1.5), seeds=(0,)))
    assert len(result["rows"]) == 2
    assert (tmp_path / "sw" / "sweep_long.csv").exists()
    assert (tmp_path / "sw" / "sweep_summary.csv").exists()
    assert (tmp_path / "sw" / "lam_1" / "seed_0" / "report.json").exists()
    assert (tmp_path / "sw" / "lam_1.5" / "seed_0" / "checkpoint.json").exists()
    summary = (tmp_path / "sw" / "sweep_summary.csv").read_text().splitlines()
    assert summary[1] == "cell,median,mean,n_ok,n_diverged"
    assert len(summary) == 4


def test_sweep_parallel_matches_serial(tmp_path):
    spec = dict(parameter="lambda", grid=(1.0, 1.5), seeds=(0,))
    serial = sweep(_tiny_appendix(tmp_path / "ser"), SweepSpec(**spec), parallel=1)
    par = sweep(_tiny_appendix(tmp_path / "par"), SweepSpec(**spec), parallel=2)
    assert [r["metric"] for r in serial["rows"]] == [r["metric"] for r in par["rows"]]
    a = (tmp_path / "ser" / "sweep_long.csv").read_bytes()
    b = (tmp_path / "par" / "sweep_long.csv").read_bytes()
    assert a == b


def test_reproduce_selectors_reject_unknown_ids(tmp_path):
    with pytest.raises(ConfigError, match="table"):
        reproduce_table(9, str(tmp_path))
    with pytest.raises(ConfigError, match="figure"):
        reproduce_figure(5, str(tmp_path))


# ---------------------------------------------------------------- CLI

def _cli_tiny(extra):
    sets = []
    for s in _TINY_SETS:
        sets.extend(["--set", s])
    return extra + sets


def test_cli_run_then_predict_then_evaluate(tmp_path):
    out = str(tmp_path / "cli")
    base = ["--preset", "appendix_benchmark", "--seed", "1", "--out", out]
    assert cli.main(_cli_tiny(["run", *base])) == 0
    assert (tmp_path / "cli" / "checkpoint.json").exists()
    report1 = json.loads((tmp_path / "cli" / "report.json").read_text())

    assert cli.main(_cli_tiny(["predict", *base])) == 0
    lines = (tmp_path / "cli" / "predictions.csv").read_text().splitlines()
    assert lines[1] == "x,pred_mean,pred_sigma"
    assert len(lines) == 2 + 9

    assert cli.main(_cli_tiny(["evaluate", *base])) == 0
    report2 = json.loads((tmp_path / "cli" / "report.json").read_text())
    assert report2["avg_reverse_kl"] == report1["avg_reverse_kl"]
    assert report2["neg_d_loss_tail_mean"] == report1["neg_d_loss_tail_mean"]


def test_cli_gen_data_honors_out_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CAGM_OUT_ROOT", str(tmp_path))
    args = ["gen-data", "--preset", "appendix_benchmark", "--set", "data.n_train=30"]
    assert cli.main(args) == 0
    assert (tmp_path / "runs" / "appendix_benchmark" / "dataset.json").exists()


def test_cli_explicit_out_beats_out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CAGM_OUT_ROOT", str(tmp_path / "ignored"))
    out = str(tmp_path / "explicit")
    args = ["gen-data", "--preset", "appendix_benchmark", "--out", out,
            "--set", "data.n_train=30"]
    assert cli.main(args) == 0
    assert (tmp_path / "explicit" / "dataset.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_cli_sweep(tmp_path):
    out = str(tmp_path / "sw")
    args = _cli_tiny(["sweep", "--preset", "appendix_benchmark", "--out", out,
                      "--sweep", "lambda", "--grid", "1.0,1.5", "--seeds", "0"])
    assert cli.main(args) == 0
    assert (tmp_path / "sw" / "sweep_summary.csv").exists()


def test_cli_grid_parsing():
    assert cli._parse_grid("lambda", "1.0,1.5") == (1.0, 1.5)
    assert cli._parse_grid("architecture", "3x100,2x20") == ((3, 100), (2, 20))
    assert cli._parse_grid("kg_kd", "1x5") == ((1, 5),)


def test_cli_config_file_round_trip(tmp_path):
    cfg = _tiny_appendix(tmp_path / "ini_run", seed=2)
    path = tmp_path / "exp.ini"
    save_config(cfg, path)
    assert cli.main(["run", "--config", str(path)]) == 0
    assert (tmp_path / "ini_run" / "report.json").exists()


def test_cli_errors_return_code_2(tmp_path):
    assert cli.main(["run"]) == 2  # neither --config nor --preset
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    args = ["run", "--preset", "appendix_benchmark", "--out", str(tmp_path / "x"),
            "--set", "train.lam=0.5"]  # entropy weight below 1 is invalid
    assert cli.main(args) == 2
