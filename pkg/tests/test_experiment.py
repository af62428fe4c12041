import collections
import json

import numpy as np
import pytest

from toydown.config import SPLITS, DistrictConfig, ERConfig, ExperimentConfig, resolve_split
from toydown.errors import ConfigurationError, ToydownError
from toydown.experiment import ExperimentError, emit_plotdata, run_experiment, write_report


def small_config(**kw):
    base = dict(branching=[4, 25], epsilon=1.0, split="equal", replicates=16, seed=7,
                districts=DistrictConfig(method="square", k=4, count=3))
    base.update(kw)
    return ExperimentConfig(**base)


def test_named_splits_are_table_rows():
    rounded = {k: tuple(round(float(x), 3) for x in v) for k, v in SPLITS.items()}
    assert rounded["equal"] == (0.2,) * 5
    assert rounded["state-heavy"] == (0.5, 0.25, 0.083, 0.083, 0.083)
    assert rounded["tract-heavy"] == (0.083, 0.167, 0.5, 0.167, 0.083)
    assert rounded["BG-heavy"] == (0.083, 0.083, 0.167, 0.5, 0.167)
    assert rounded["block-heavy"] == (0.083, 0.083, 0.083, 0.25, 0.5)
    assert all(sum(v) == 1 for v in SPLITS.values())


def test_resolve_split_depths():
    assert resolve_split("tract-heavy", 1.0, 5).per_level[2] == pytest.approx(0.5)
    six = resolve_split("equal", 1.0, 6)
    assert six.per_level[0] == 9.0 and six.total == pytest.approx(10.0)
    assert resolve_split("equal", 1.0, 3).per_level == pytest.approx((1 / 3,) * 3)
    with pytest.raises(ConfigurationError):
        resolve_split("BG-heavy", 1.0, 3)
    with pytest.raises(ConfigurationError):
        resolve_split([0.5, 0.6], 1.0, 2)
    with pytest.raises(ConfigurationError):
        resolve_split([1.0, 0.0], 1.0, 2)
    with pytest.raises(ConfigurationError):
        resolve_split("nope", 1.0, 5)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        small_config(replicates=0).validate()
    with pytest.raises(ConfigurationError):
        small_config(seed=None).validate()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(seed=1).validate()
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"branching": [2], "colour": "red"})


def test_replicates_zero_names_stage():
    with pytest.raises(ExperimentError) as info:
        run_experiment(small_config(replicates=0))
    assert info.value.stage == "config"


def test_sixteen_rows_per_district():
    rep = run_experiment(small_config())
    per = collections.Counter(r["district"] for r in rep.district_rows)
    assert len(per) == 3 and set(per.values()) == {16}
    assert len(rep.l1) == 16
    for row in rep.district_summary:
        assert row["predicted_variance"] > 0


def test_config_yaml_round_trip(tmp_path):
    cfg = small_config(er=ERConfig(synthetic_precincts=50), variance_curve_step=0.1)
    p = tmp_path / "cfg.yaml"
    import yaml
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    assert ExperimentConfig.load(p) == cfg


def test_echo_reproduces_run():
    cfg = small_config(replicates=3, er=ERConfig(synthetic_precincts=60))
    first = run_experiment(cfg)
    echo = dict(first.config)
    echo.pop("resolved_allocation")
    second = run_experiment(ExperimentConfig.from_dict(echo))
    assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(second.to_dict(), sort_keys=True)


def test_same_seed_identical_files(tmp_path):
    cfg = small_config(replicates=4, er=ERConfig(synthetic_precincts=80, noiser="gaussian"),
                       variance_curve_step=0.25)
    a, b = tmp_path / "a", tmp_path / "b"
    write_report(run_experiment(cfg), a)
    write_report(run_experiment(cfg), b)
    names = sorted(p.name for p in a.iterdir())
    assert names == ["district_errors.csv", "districts.csv", "l1.csv", "report.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    other = run_experiment(small_config(replicates=4, seed=8))
    write_report(other, tmp_path / "c")
    assert (tmp_path / "c" / "l1.csv").read_bytes() != (a / "l1.csv").read_bytes()


def test_output_dir_written(tmp_path):
    run_experiment(small_config(replicates=2, output_dir=str(tmp_path / "out")))
    assert (tmp_path / "out" / "report.json").exists()


@pytest.mark.parametrize("noise", ["toydown-single", "toydown-nonneg", "minitopdown", "none"])
def test_noise_algorithms(noise):
    rep = run_experiment(small_config(noise=noise, replicates=2))
    if noise == "none":
        assert all(r["l1"] == 0 for r in rep.l1)
        assert all(r["error"] == 0 for r in rep.district_rows)
    else:
        assert all(r["l1"] > 0 for r in rep.l1)


@pytest.mark.parametrize("method", ["greedy", "disconn", "recom"])
def test_district_methods(method):
    cfg = small_config(replicates=2, districts=DistrictConfig(method=method, k=4, count=2,
                                                              tolerance=0.05, recom_steps=3))
    rep = run_experiment(cfg)
    assert rep.district_summary
    assert all(r["size"] > 0 for r in rep.district_summary)


def test_plotdata_kinds():
    rep = run_experiment(small_config(replicates=2, variance_curve_step=0.1,
                                      er=ERConfig(synthetic_precincts=40, modes=["filtered"])))
    hist = emit_plotdata(rep, "error-hist").splitlines()
    assert hist[0] == "district,mean_abs_error" and len(hist) == 4
    assert hist[1:] == sorted(hist[1:])
    curve = emit_plotdata(rep, "variance-curve").splitlines()
    assert curve[0] == "eps1,eps2,eps3,variance"
    scatter = emit_plotdata(rep, "er-scatter").splitlines()
    assert scatter[0] == "x,y,replicate"
    assert len(scatter) > 40


def test_variance_curve_three_levels():
    rep = run_experiment(small_config(branching=[10, 10], replicates=1, variance_curve_step=0.1,
                                      districts=DistrictConfig()))
    curve = emit_plotdata(rep, "variance-curve").splitlines()
    assert curve[0] == "eps1,eps2,eps3,variance"
    values = np.array([[float(x) for x in line.split(",")] for line in curve[1:]])
    assert np.allclose(values[:, :3].sum(axis=1), 1.0)


def test_plotdata_missing_metric():
    rep = run_experiment(small_config(replicates=1))
    with pytest.raises(ToydownError):
        emit_plotdata(rep, "er-scatter")
    with pytest.raises(ToydownError):
        emit_plotdata(rep, "variance-curve")
    with pytest.raises(ToydownError):
        emit_plotdata(rep, "pie")


def test_er_gaussian_calibration_recorded():
    rep = run_experiment(small_config(replicates=3, districts=DistrictConfig(),
                                      er=ERConfig(synthetic_precincts=100, noiser="gaussian")))
    assert rep.er["sigma"] > 0 and rep.er["calibration_l1"] > 0
    assert set(rep.er["modes"]) == {"all", "filtered", "weighted"}


def test_failing_stage_is_named(tmp_path):
    cfg = small_config(branching=None, counts_file=str(tmp_path / "missing.csv"))
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg)
    assert info.value.stage == "hierarchy"
    bad_split = small_config(split="BG-heavy")
    with pytest.raises(ExperimentError) as info:
        run_experiment(bad_split)
    assert info.value.stage == "allocation"
