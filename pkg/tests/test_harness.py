import json
import math

import numpy as np
import pytest

from pladis.diffusion import data
from pladis.harness import cli, experiments, metrics, report
from pladis.harness.config import ConfigError, ExperimentConfig, derive_seed, load_config

TINY = dict(bound_instances=30, noise_trials=20, train_iters=3, width=16, blocks=2, heads=2, n_data=64,
            train_batch=8, samples_per_condition=1, steps=3, timing_repeats=1)


# -- config ----------------------------------------------------------------------

def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config()
    assert cfg.lambdas == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] and cfg.steps == 50
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 7, "steps": 10}))
    cfg = load_config(p, seed=9)
    assert (cfg.seed, cfg.steps) == (9, 10)


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"stepz": 10}))
    with pytest.raises(ConfigError, match="stepz"):
        load_config(p)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize("bad", [dict(lambdas=[]), dict(taus=[]), dict(sample_seeds=[1, 1]),
                                 dict(alphas=[0.5]), dict(taus=[0.0]), dict(steps=0),
                                 dict(guidance="magic"), dict(betas=[math.nan])])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, 1), derive_seed(0, 2), derive_seed(1, 1), derive_seed(0, 1, 5)}) == 4
    expect = int(np.random.SeedSequence([3, 5]).generate_state(1, np.uint64)[0])
    assert derive_seed(3, 5) == expect


# -- metrics ---------------------------------------------------------------------

def test_accuracy_clean_images():
    conds = np.array(data.CELLS)
    assert metrics.conditional_accuracy(data.mean_images(conds), conds) == 1.0
    assert metrics.centroid_error(data.mean_images(conds), conds) < 0.05


def test_accuracy_shifted_condition_is_zero():
    conds = np.array(data.CELLS)
    shifted = (conds + [1, 0]) % 4
    assert metrics.conditional_accuracy(data.mean_images(conds), shifted) == 0.0


def test_accuracy_uniform_noise_near_chance():
    # labels drawn independently of the images: hits happen at chance rate
    rng = np.random.default_rng(0)
    n = 4000
    imgs = rng.uniform(0, 1, (n, data.PIXELS))
    conds = np.array(data.CELLS)[rng.integers(16, size=n)]
    p = 1 / 16
    acc = metrics.conditional_accuracy(imgs, conds)
    assert abs(acc - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_metrics_reject_empty_or_unpaired():
    with pytest.raises(ValueError):
        metrics.conditional_accuracy(np.zeros((0, data.PIXELS)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        metrics.centroid_error(np.zeros((3, data.PIXELS)), np.zeros((2, 2)))


def test_energy_distance_examples():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 4))
    assert metrics.energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    # 1-d point masses at 0 and 1: 2*1 - 0 - 0
    assert metrics.energy_distance([[0.0]], [[1.0]]) == pytest.approx(2.0)
    assert metrics.energy_distance(x, x + 3) > metrics.energy_distance(x, x + 0.3) > 0


def test_time_call_and_peak_alloc():
    med, times, out = metrics.time_call(lambda: 4, repeats=3)
    assert out == 4 and len(times) == 3 and med >= 0
    peak, out = metrics.peak_alloc(lambda: np.ones(100_000).sum())
    assert out == 100_000 and peak >= 800_000


# -- csv -------------------------------------------------------------------------

def test_csv_roundtrip_and_formatting(tmp_path):
    rows = [dict(a=0.1, b=True, c="x", d=""), dict(a=1e-17, b=False, c="y", d=3)]
    report.write_csv(tmp_path / "r.csv", rows)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines() == ["a,b,c,d", "0.1,true,x,", "1e-17,false,y,3"]
    assert report.read_csv(tmp_path / "r.csv")[0]["b"] == "true"


def test_bounds_csv_byte_identical(tmp_path):
    cfg = ExperimentConfig(**TINY)
    for d in ("a", "b"):
        experiments.run_bounds(cfg).write(tmp_path / d, cfg)
    for f in ("bounds.csv", "bounds_summary.csv", "bounds_checks.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- hopfield experiments ------------------------------------------------------------

def test_bounds_experiment_schema():
    cfg = ExperimentConfig(**TINY)
    res = experiments.run_bounds(cfg)
    assert not res.gated_failures
    kinds = {r["kind"] for r in res.rows}
    assert kinds == {"general", "alpha2", "dense", "pladis"}
    assert all(r["query"] == "basin" for r in res.rows if r["kind"] in ("dense", "pladis"))
    n_pladis = sum(r["kind"] == "pladis" for r in res.rows)
    assert n_pladis == cfg.bound_instances * len(cfg.bound_lambdas)


def test_noise_experiment_gates():
    res = experiments.run_noise_robustness(ExperimentConfig(**TINY))
    assert not res.gated_failures
    names = {c["check"] for c in res.checks}
    assert {"ordering_by_alpha", "alpha2_exact_at_zero_noise"} <= names


# -- model sweeps (tiny untrained-ish model) ---------------------------------------------

@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweep")
    experiments.get_model(ExperimentConfig(**TINY), d)
    return d


def test_model_cache_reused(sweep_dir):
    cfg = ExperimentConfig(**TINY)
    before = (sweep_dir / "model.ckpt").stat().st_mtime_ns
    experiments.get_model(cfg, sweep_dir)
    assert (sweep_dir / "model.ckpt").stat().st_mtime_ns == before
    assert len(report.read_csv(sweep_dir / "train_loss.csv")) == cfg.train_iters


def test_lambda_sweep_rows_and_gates(sweep_dir):
    cfg = ExperimentConfig(**TINY)
    res = experiments.run_lambda_sweep(cfg, sweep_dir)
    assert not res.gated_failures
    n = len(data.CELLS) * cfg.samples_per_condition * len(cfg.sample_seeds)
    assert len(res.rows) == (len(cfg.lambdas) + 1) * n
    for r in res.rows:
        if r["lam"] != "baseline":
            assert r["pladis_active"] == (r["lam"] > 1)
    assert {r["nfe_per_step"] for r in res.summary} == {2}


def test_temperature_sweep_configs(sweep_dir):
    cfg = ExperimentConfig(**TINY)
    res = experiments.run_temperature_sweep(cfg, sweep_dir)
    assert not res.gated_failures
    configs = [r for r in res.summary if r["tau"] != "baseline"]
    assert len(configs) == 2 * 2 * len(cfg.taus) == 20
    for r in configs:
        assert 0 <= r["attn_entropy"] <= math.log(3) + 1e-12


def test_alpha_sweep_gates(sweep_dir):
    res = experiments.run_alpha_sweep(ExperimentConfig(**TINY), sweep_dir)
    assert [c for c in res.gated_failures if c != "exact_faster_than_bisection"] == []
    assert {c["solver"] for c in res.costs if "solver" in c} == {"exact", "bisection"}


def test_layer_ablation_gates(sweep_dir):
    res = experiments.run_layer_ablation(ExperimentConfig(**TINY), sweep_dir)
    assert not res.gated_failures
    assert [r["layers"] for r in res.summary] == ["baseline", "default", "none", "first", "last", "all"]


def test_sweep_csv_deterministic(sweep_dir, tmp_path):
    cfg = ExperimentConfig(**{**TINY, "lambdas": [0.0, 2.0]})
    for d in ("a", "b"):
        experiments.run_lambda_sweep(cfg, sweep_dir).write(tmp_path / d, cfg)
    for f in ("lambda_sweep.csv", "lambda_sweep_summary.csv", "lambda_sweep_checks.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- cli -------------------------------------------------------------------------

def test_cli_entmax(capsys):
    assert cli.main(["entmax", "--alpha", "2", "0.5", "0.3", "-0.2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["0.6 0.4 0", "tau=-0.1", "kappa=2"]


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["bounds", "--config", str(tmp_path / "missing.json")]) == 2
    p = tmp_path / "bad.json"
    p.write_text('{"nope": 1}')
    assert cli.main(["bounds", "--config", str(p)]) == 2
    assert cli.main(["no-such-command"]) == 2


def test_cli_bounds_runs(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(dict(bound_instances=12)))
    assert cli.main(["bounds", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    rows = report.read_csv(tmp_path / "o" / "bounds_checks.csv")
    assert rows[0]["check"] == "violations" and rows[0]["value"] == "0"
    meta = json.loads((tmp_path / "o" / "bounds.meta.json").read_text())
    assert meta["config"]["bound_instances"] == 12


def test_cli_sample(tmp_path, sweep_dir, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**TINY, "checkpoint": str(sweep_dir / "model.ckpt")}))
    assert cli.main(["sample", "--config", str(p), "--cond", "1", "2", "--out", str(tmp_path / "o")]) == 0
