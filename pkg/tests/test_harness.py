import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from alsysid import rng as rngmod
from alsysid.cli import main
from alsysid.config import ExperimentConfig, load_config
from alsysid.errors import ConfigError
from alsysid.harness import (RunTrace, make_test_set, metrics_from_files, read_curve, run,
                             sweep)
from alsysid.metrics import MetricsReport, aggregate, mcv, median_mad, r2, rmse
from alsysid.models import load_checkpoint
from alsysid.plants import make_benchmark

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _cfg(**kw):
    base = load_config(CONFIGS / "custom_narx.yaml")
    return base.replace(**{"N": 60, "N_test": 200, **kw})


def _ss_cfg(**kw):
    return _cfg(model="rnn-ss", n_x=2, n1x=4, n2x=3, n1y=3, N_i=20, N=40, N_b=40,
                delta=1.0, alpha_state=0.5, R=1.0, **kw)


def _same_records(a, b, n=None):
    ra, rb = a.records[:n], b.records[:n]
    assert len(ra) == len(rb)
    for x, y in zip(ra, rb):
        assert x.k == y.k
        assert_array_equal(x.u, y.u)
        assert_array_equal(x.y, y.y)
        assert_array_equal(x.yhat, y.yhat)
        assert_array_equal(x.score, y.score)
        assert x.penalty == y.penalty


# --- config ----------------------------------------------------------------

@pytest.mark.parametrize("path", sorted(p for p in CONFIGS.glob("*.yaml")
                                         if p.name != "custom_plant.yaml"))
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.N_i <= cfg.N


def test_config_parses_yaml_floats(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("ekf: {P0: 1e-2, R: 1e-3}\nacquisition: {delta: 5}\n")
    cfg = load_config(p)
    assert cfg.P0 == 0.01 and cfg.R == 0.001 and cfg.delta == 5.0


@pytest.mark.parametrize("text", [
    "bogus: 1\n",
    "experiment: {N_i: 100, N: 50}\n",
    "strategy: random\n",
    "model: {kind: lstm}\n",
    "experiment: {N: 1.5}\n",
    "constraints: {penalty: hard}\n",
    "- a\n- b\n",
])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_relative_plant_file():
    cfg = load_config(CONFIGS / "custom_narx.yaml")
    assert Path(cfg.plant_file) == CONFIGS / "custom_plant.yaml"


# --- metrics and rng -------------------------------------------------------

def test_metric_trivial_cases():
    y = np.array([1.0, 2.0, 4.0])
    assert rmse(y, y) == 0.0
    assert r2(y, y) == 100.0
    assert abs(r2(y, np.full(3, y.mean()))) < 1e-12
    assert_allclose(rmse([0.0, 0.0], [3.0, 4.0]), np.sqrt(12.5))
    assert np.isnan(r2([1.0, 1.0], [1.0, 2.0]))


def test_mcv():
    y = np.array([0.0, 0.5, 1.5, -0.25])
    assert_allclose(mcv(y, 0.0, 1.0), (0.5 + 0.25) / 4)
    assert mcv(y[1:2], 0.0, 1.0) == 0.0
    assert mcv(np.zeros(0), 0.0, 1.0) == 0.0


def test_median_mad_and_aggregate():
    med, mad = median_mad([1.0, 2.0, 10.0])
    assert (med, mad) == (2.0, 3.0)
    reps = [MetricsReport(0.1, v, 90.0, 0.0) for v in (1.0, 2.0, 10.0)]
    reps.append(MetricsReport(np.nan, np.nan, np.nan, np.nan, status="aborted at k=5: x"))
    agg = aggregate(reps)
    assert agg["n_runs"] == 3 and agg["n_aborted"] == 1
    assert agg["rmse_test"] == {"median": 2.0, "mad": 3.0}


def test_rng_streams_independent():
    a = rngmod.stream(5, rngmod.NOISE).standard_normal(4)
    g = rngmod.stream(5, rngmod.PASSIVE)
    g.standard_normal(100)
    assert_array_equal(rngmod.stream(5, rngmod.NOISE).standard_normal(4), a)
    assert not np.array_equal(rngmod.stream(6, rngmod.NOISE).standard_normal(4), a)


def test_test_set_fixed_and_cached():
    s = make_benchmark("two-tank")
    U1, Y1 = make_test_set(s, 50, 11)
    U2, Y2 = make_test_set(s, 50, 11)
    assert U1 is U2 and Y1 is Y2
    assert not U1.flags.writeable


# --- NARX runs -------------------------------------------------------------

def test_passive_run_trace():
    tr, rep = run(_cfg(strategy="passive"))
    assert tr.status == "ok" and rep.status == "ok"
    assert len(tr) == 60
    assert_array_equal(tr.column("k"), np.arange(60))
    assert_array_equal(tr.column("penalty"), 0.0)
    assert np.isnan(tr.column("score")).all()
    yhat = tr.column("yhat")
    assert np.isnan(yhat[:30]).all() and np.isfinite(yhat[30:]).all()
    assert np.isfinite(tr.curve).all()
    assert np.isfinite(rep.rmse_test) and np.isfinite(rep.rmse_train)


def test_no_acquisition_when_N_equals_N_i():
    tr, rep = run(_cfg(N=30))
    assert len(tr) == 30
    assert np.isnan(tr.column("score")).all()
    assert np.isfinite(tr.curve[30]) and rep.status == "ok"


def test_run_is_deterministic():
    a, ra = run(_cfg(strategy="ideal", constraints=True, rho=1e3))
    b, rb = run(_cfg(strategy="ideal", constraints=True, rho=1e3))
    _same_records(a, b)
    assert_array_equal(a.theta, b.theta)
    assert_array_equal(a.curve, b.curve)
    assert ra.rmse_test == rb.rmse_test


def test_strategies_share_passive_prefix():
    traces = {s: run(_cfg(strategy=s, N=40))[0] for s in ("passive", "ideal", "gsx", "igs", "qbc")}
    ref = traces["passive"]
    for s, tr in traces.items():
        _same_records(ref, tr, 30)
        # y at k = N_i follows from the same passive inputs
        assert_array_equal(ref.records[30].y, tr.records[30].y)
        assert_array_equal(ref.curve[:30], tr.curve[:30])


def test_frozen_parameters_stay_at_init():
    cfg = _cfg(P0=0.0, Q_theta=0.0, N=40)
    tr, _ = run(cfg)
    m = tr.model
    assert_array_equal(tr.theta, m.init_theta(rngmod.stream(cfg.seed, rngmod.INIT)))


def test_eval_every_leaves_gaps():
    tr, _ = run(_cfg(eval_every=7))
    c = tr.curve
    ks = [k for k in range(30, 61) if np.isfinite(c[k])]
    assert ks == [30, 37, 44, 51, 58, 60]


def test_constraints_record_penalty():
    tr, _ = run(_cfg(strategy="gsx", constraints=True, rho=1e12))
    assert (tr.column("penalty")[:30] == 0).all()
    assert np.all(tr.column("penalty") >= 0)


def test_linear_arx_run():
    tr, rep = run(_cfg(model="linear-arx", strategy="igs"))
    assert rep.status == "ok" and tr.theta.size == 4


# --- state-space runs ------------------------------------------------------

@pytest.mark.parametrize("m", [1, 10])
def test_ss_run_reconstruction_period(m):
    tr, rep = run(_ss_cfg(m=m))
    assert rep.status == "ok" and len(tr) == 40
    assert np.isfinite(tr.column("score")[20:]).all()
    assert np.isfinite(rep.rmse_test)


def test_ss_qbc_and_passive_share_prefix():
    a, _ = run(_ss_cfg(strategy="passive"))
    b, _ = run(_ss_cfg(strategy="qbc", K_qbc=3))
    _same_records(a, b, 20)
    assert_array_equal(a.records[20].yhat, b.records[20].yhat)


# --- persistence, aborts, sweeps, CLI --------------------------------------

def test_trace_csv_roundtrip(tmp_path):
    tr, _ = run(_cfg())
    tr.to_csv(tmp_path / "t.csv")
    back = RunTrace.from_csv(tmp_path / "t.csv")
    _same_records(tr, back)
    assert_allclose(back.column("step_ms"), tr.column("step_ms"), atol=1e-4)


def test_trace_csv_rejects_wrong_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        RunTrace.from_csv(p)


def test_aborted_run_persists_partial_trace(tmp_path):
    tr, rep = run(_cfg(R=-1.0), tmp_path / "ab")
    assert tr.status.startswith("aborted at k=30")
    assert rep.status == tr.status
    assert len(tr) == 30
    back = RunTrace.from_csv(tmp_path / "ab" / "trace.csv")
    assert len(back) == 30
    assert json.loads((tmp_path / "ab" / "metrics.json").read_text())["status"] == tr.status


def test_run_outputs_and_metrics_from_files(tmp_path):
    tr, rep = run(_cfg(), tmp_path / "r")
    for f in ("trace.csv", "curve.csv", "metrics.json", "config.yaml", "model.ckpt", "test.csv"):
        assert (tmp_path / "r" / f).exists()
    assert_array_equal(read_curve(tmp_path / "r" / "curve.csv"), tr.curve)
    again = metrics_from_files(tmp_path / "r" / "trace.csv", tmp_path / "r" / "test.csv")
    assert again.rmse_test == rep.rmse_test
    assert again.rmse_train == rep.rmse_train
    assert again.mcv == rep.mcv
    _, theta, _ = load_checkpoint(tmp_path / "r" / "model.ckpt")
    assert_array_equal(theta, tr.theta)


def test_ss_metrics_from_files(tmp_path):
    _, rep = run(_ss_cfg(strategy="passive"), tmp_path / "s")
    again = metrics_from_files(tmp_path / "s" / "trace.csv", tmp_path / "s" / "test.csv")
    assert_allclose(again.rmse_test, rep.rmse_test, rtol=1e-12)


def test_sweep_single_run_median_is_the_run(tmp_path):
    res = sweep(_cfg(N=40), ["passive", "gsx"], 1, tmp_path / "sw")
    for s in ("passive", "gsx"):
        _, rep = run(_cfg(N=40, strategy=s))
        agg = res[s]["aggregate"]
        assert agg["rmse_test"]["median"] == rep.rmse_test
        assert agg["rmse_test"]["mad"] == 0.0
    assert (tmp_path / "sw" / "summary.json").exists()
    text = (tmp_path / "sw" / "rmse_curves.csv").read_text().splitlines()
    assert text[0] == "k,gsx_median,gsx_mad,passive_median,passive_mad"
    assert len(text) == 42


def test_sweep_seeds_offset():
    res = sweep(_cfg(N=35, seed=3), ["passive"], 2)
    assert [r.seed for r in res["passive"]["reports"]] == [3, 4]


def test_cli_run_and_metrics(tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["run", "--config", str(CONFIGS / "custom_narx.yaml"), "--strategy", "gsx",
                 "--seed", "2", "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["strategy"] == "gsx" and printed["seed"] == 2
    assert main(["metrics", "--trace", str(out / "trace.csv"), "--test", str(out / "test.csv")]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["per_run"][0]["rmse_test"] == printed["rmse_test"]
    assert m["aggregate"]["n_runs"] == 1


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])
