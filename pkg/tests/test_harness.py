import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from benchmarks import ACCEPTANCE_FAMILY, robustness_report
from dflgcrf.data import Mechanism
from dflgcrf.harness import (DFL_KIND, EvalReport, MetricError, ModelEntry, ReportRow, SweepConfig,
                             emit_report, load_report, r_squared, read_results, run_sweep,
                             save_report)

GEN = {"n_nodes": 40, "n_steps": 3}


# --- metric ------------------------------------------------------------------------

def test_r_squared_trivial_cases():
    y = np.array([0.0, 2.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(2, y.mean())) == 0.0
    assert r_squared(y, np.array([4.0, -2.0])) == 0.0


@pytest.mark.parametrize("y,mu", [([1.0, 1.0], [1.0, 2.0]), ([1.0], [1.0]), ([1.0, 2.0], [1.0])])
def test_r_squared_undefined(y, mu):
    with pytest.raises(MetricError):
        r_squared(np.array(y), np.array(mu))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(0.1, 10), b=st.floats(-5, 5))
def test_r_squared_affine_invariance_and_range(seed, a, b):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(10)
    mu = y + rng.standard_normal(10)
    r = r_squared(y, mu)
    assert 0.0 <= r <= 1.0
    assert r_squared(a * y + b, a * mu + b) == pytest.approx(r, abs=1e-12)
    assert r_squared(y, y + 1e-3 * rng.standard_normal(10)) < 1.0


# --- config --------------------------------------------------------------------------

def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(models=(), generator=GEN)
    with pytest.raises(ValueError):
        SweepConfig(models=("LR0",), fractions=(0.9,), generator=GEN)
    with pytest.raises(ValueError):
        SweepConfig(models=("LR0",))
    with pytest.raises(ValueError):
        SweepConfig(models=("LR0",), generator=GEN, data_path="x.csv")
    with pytest.raises(ValueError):
        SweepConfig(models=("nope",), generator=GEN)
    with pytest.raises(ValueError):
        ModelEntry(DFL_KIND, {"colour": 1})


def test_sweep_config_dict_round_trip():
    cfg = SweepConfig(models=("LR0", {"kind": DFL_KIND, "hyperparams": {"maxiter": 10}}),
                      seeds=(0, 1), mechanisms=("HighestResponse",), fractions=(0.0, 0.2),
                      generator=GEN)
    back = SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.mechanisms == (Mechanism.HIGHEST_RESPONSE,)


def test_dfl_settings_take_sweep_seed():
    arch, opts = ModelEntry(DFL_KIND, {"maxiter": 7, "hidden": 4}).dfl_settings(3)
    assert arch.seed == 3 and arch.hidden == 4 and opts.maxiter == 7


# --- sweeps ---------------------------------------------------------------------------

def test_single_cell_report(tmp_path):
    cfg = SweepConfig(models=("LR0",), fractions=(0.0,), generator=GEN)
    report = run_sweep(cfg)
    assert len(report.rows) == 1
    files = emit_report(report, tmp_path)
    assert len(files) == 3
    curve = [p for p in files if p.parent.name == "curves"][0].read_text().splitlines()
    assert len(curve) == 2


def test_every_cell_present_and_in_range():
    cfg = SweepConfig(models=("LR0", "GCRF0"), seeds=(0, 1), fractions=(0.0, 0.4),
                      mechanisms=tuple(Mechanism), generator=GEN)
    report = run_sweep(cfg)
    assert len(report.rows) == 2 * 2 * 2 * 3
    assert all(0.0 <= r.r2 <= 1.0 for r in report.rows)
    agg = report.aggregates()
    assert len(agg) == 2 * 3 * 2 and all(a["n"] == 2 for a in agg.values())


def test_masks_shared_and_zero_fraction_reused():
    cfg = SweepConfig(models=("LR0",), fractions=(0.0,), mechanisms=tuple(Mechanism), generator=GEN)
    report = run_sweep(cfg)
    assert len({r.r2 for r in report.rows}) == 1


def test_sweep_is_deterministic(tmp_path):
    cfg = SweepConfig(models=("LR0", "GCRF0"), seeds=(0, 1), fractions=(0.0, 0.4), generator=GEN)
    emit_report(run_sweep(cfg), tmp_path / "a")
    emit_report(run_sweep(cfg), tmp_path / "b")
    for name in ("results.csv", "summary.txt", "curves/AtRandom__LR0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_failed_model_marks_cell_and_sweep_continues(tmp_path, quiet):
    # a hidden width of zero makes the DFL fit raise
    cfg = SweepConfig(models=("LR0", {"kind": DFL_KIND, "hyperparams": {"hidden": 0}}),
                      fractions=(0.0, 0.2), generator=GEN)
    report = run_sweep(cfg)
    failed = [r for r in report.rows if r.status == "failed"]
    assert len(failed) == 2 and all(np.isnan(r.r2) for r in failed)
    assert all(r.status == "ok" for r in report.rows if r.model == "LR0")
    emit_report(report, tmp_path)
    assert "2 failed cell(s)" in (tmp_path / "summary.txt").read_text()


def test_results_csv_round_trip(tmp_path):
    cfg = SweepConfig(models=("LR0", "iLR"), seeds=(0, 2), fractions=(0.0, 0.2), generator=GEN)
    report = run_sweep(cfg)
    emit_report(report, tmp_path)
    assert read_results(tmp_path / "results.csv") == report.rows
    save_report(report, tmp_path / "r.json")
    assert load_report(tmp_path / "r.json").rows == report.rows


def test_summary_sorted_by_descending_r2(tmp_path):
    rows = [ReportRow("A", "AtRandom", 0.0, 0, 0.5), ReportRow("B", "AtRandom", 0.0, 0, 0.9),
            ReportRow("C", "AtRandom", 0.0, 0, 0.7), ReportRow("B", "AtRandom", 0.4, 0, 0.1)]
    emit_report(EvalReport(rows), tmp_path)
    lines = (tmp_path / "summary.txt").read_text().splitlines()[4:]
    assert [ln.split()[0] for ln in lines] == ["B", "C", "A"]


def test_curves_hold_median_over_seeds(tmp_path):
    rows = [ReportRow("A", "AtRandom", f, s, r) for f, s, r in
            [(0.0, 0, 0.2), (0.0, 1, 0.4), (0.0, 2, 0.9), (0.4, 0, 0.1)]]
    emit_report(EvalReport(rows), tmp_path)
    lines = (tmp_path / "curves" / "AtRandom__A.csv").read_text().splitlines()
    assert lines == ["fraction,median_r2", "0.0,0.4", "0.4,0.1"]


def test_dataset_from_file(tmp_path):
    from dflgcrf.synth import GeneratorConfig, generate_network, write_network
    ds, truth = generate_network(GeneratorConfig(n_nodes=30, n_steps=3))
    paths = write_network(ds, truth, tmp_path)
    cfg = SweepConfig(models=("LR0",), fractions=(0.0,), data_path=str(paths["train"]))
    report = run_sweep(cfg)
    assert report.rows[0].status == "ok"


@pytest.mark.slow
def test_dfl_degrades_monotonically_under_mar():
    report = robustness_report()
    meds = [report.median(DFL_KIND, "AtRandom", f) for f in (0.0, 0.4, 0.8)]
    assert meds[0] >= meds[1] >= meds[2], meds
    assert ACCEPTANCE_FAMILY["signal_split"] == 0.5
