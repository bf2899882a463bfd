"""Experiment driver: online active-learning loops, evaluation, sweeps and persistence.

A run has two phases.  For ``k < N_i`` inputs are drawn uniformly from
the pool; the scalers are then frozen on that data and the model is
initialized from it.  For ``k = N_i .. N`` each step measures ``y_k``,
updates the estimator and (for ``k < N``) picks ``u_k`` with the
configured strategy.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import rng as rngmod
from .acquisition import (AcquisitionContext, PenaltyConfig, StateSpaceContext, select,
                          select_ss)
from .config import ExperimentConfig
from .errors import ConfigError, NumericalBreakdown
from .estimation import (Committee, EkfHyper, batch_init_narx, batch_init_ss, committee_update,
                         ekf_update_narx, init_state_joint, joint_measurement_update,
                         joint_time_update, predict_one_step_ss, reconstruct_states)
from .metrics import MetricsReport, aggregate, mcv, median_mad, r2, rmse
from .models import is_state_space, load_checkpoint, make_model, save_checkpoint
from .plants import NoiseModel, PlantSpec, Simulator, make_benchmark, plant_from_dict, simulate
from .signals import Dataset, InputPool, Scaler, fit_scaler

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "u", "y", "yhat", "score", "penalty", "step_ms")


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class StepRecord:
    k: int
    u: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    score: float
    penalty: float
    step_ms: float


@dataclass
class RunTrace:
    """Per-step log of a run plus the final model.

    ``curve[k]`` is the test RMSE of the model after ``y_k`` has been
    processed (NaN where not evaluated); entries ``k < N_i`` hold the
    model right after initialization.
    """

    records: list = field(default_factory=list)
    status: str = "ok"
    curve: np.ndarray | None = None
    model: object = None
    theta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.atleast_1d(getattr(r, name)) if name in ("u", "y", "yhat")
                         else getattr(r, name) for r in self.records], float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.k, _fmt(r.u), _fmt(r.y), _fmt(r.yhat), repr(float(r.score)),
                            repr(float(r.penalty)), f"{r.step_ms:.4f}"])

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        recs = []
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            if tuple(rd.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace columns {rd.fieldnames}")
            for row in rd:
                recs.append(StepRecord(int(row["k"]), _parse(row["u"]), _parse(row["y"]),
                                       _parse(row["yhat"]), float(row["score"]),
                                       float(row["penalty"]), float(row["step_ms"])))
        return cls(recs)


def _fmt(v) -> str:
    return " ".join(repr(float(a)) for a in np.atleast_1d(v))


def _parse(s: str) -> np.ndarray:
    return np.array([float(a) for a in s.split()])


# --------------------------------------------------------------------------
# plants, test data and fitted-model evaluation
# --------------------------------------------------------------------------

def plant_for(cfg: ExperimentConfig) -> PlantSpec:
    if cfg.plant_file:
        try:
            d = yaml.safe_load(Path(cfg.plant_file).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read plant file {cfg.plant_file}: {exc}") from None
        return plant_from_dict(d)
    return make_benchmark(cfg.plant)


def _pool_rows(spec: PlantSpec) -> np.ndarray:
    return np.asarray(spec.pool, float).reshape(len(spec.pool), -1)


_TEST_CACHE: dict = {}


def make_test_set(spec: PlantSpec, n: int, seed: int):
    """Physical ``(U, Y)`` test record from the plant's initial state.

    Inputs are uniform pool draws.  The record depends only on the
    plant, ``n`` and ``seed``, so every strategy is scored on the same data.
    """
    key = (spec.name, spec.Ts, spec.gamma, n, seed)
    if key not in _TEST_CACHE:
        pool = _pool_rows(spec)
        idx = rngmod.stream(seed, rngmod.TEST).integers(len(pool), size=n)
        U = pool[idx]
        noise = NoiseModel(spec.gamma, rngmod.stream(seed, rngmod.TEST + "/noise"))
        Y = simulate(spec, U, noise)
        U.flags.writeable = False
        Y.flags.writeable = False
        _TEST_CACHE[key] = (U, Y)
    return _TEST_CACHE[key]


def narx_pairs(U, Y, na: int, nb: int):
    """Regressors and next-output targets for an already scaled record."""
    U = np.asarray(U, float).reshape(len(U), -1)
    Y = np.asarray(Y, float).reshape(len(Y), -1)
    ds = Dataset(U.shape[1], Y.shape[1], na, nb)
    for u, y in zip(U, Y):
        ds.append_sample(u, y)
    return ds.training_pairs()


@dataclass
class FittedModel:
    """A model with its parameters and frozen scalers, predicting in physical units."""

    model: object
    theta: np.ndarray
    su: Scaler
    sy: Scaler
    na: int = 0
    nb: int = 0
    x0: np.ndarray | None = None
    hyper: EkfHyper | None = None

    @property
    def state_space(self) -> bool:
        return is_state_space(self.model)

    def one_step(self, U, Y):
        """One-step-ahead predictions and the matching measured outputs."""
        Us, Ys = self.su.scale(np.asarray(U, float).reshape(len(U), -1)), \
            self.sy.scale(np.asarray(Y, float).reshape(len(Y), -1))
        if self.state_space:
            ntx = self.model.n_theta_x
            yh = predict_one_step_ss(self.model, self.theta[:ntx], self.theta[ntx:], Us, Ys,
                                     self.hyper, self.x0)
            return self.sy.unscale(yh), np.asarray(Y, float).reshape(len(Y), -1)
        X, T = narx_pairs(Us, Ys, self.na, self.nb)
        return self.sy.unscale(self.model.predict(self.theta, X)), self.sy.unscale(T)

    def meta(self) -> dict:
        d = {"scaler_u": self.su.to_dict(), "scaler_y": self.sy.to_dict(),
             "na": self.na, "nb": self.nb}
        if self.state_space:
            d["x0"] = [float(v) for v in self.x0]
            d["hyper"] = {"P0_x": self.hyper.P0[: self.model.n_x, : self.model.n_x].tolist(),
                          "Q_x": self.hyper.Q_x.tolist(), "R": self.hyper.R.tolist()}
        return d

    @classmethod
    def from_checkpoint(cls, path) -> tuple["FittedModel", dict]:
        model, theta, meta = load_checkpoint(path)
        hyper = x0 = None
        if is_state_space(model):
            hd = meta["hyper"]
            P0x = np.asarray(hd["P0_x"])
            hyper = EkfHyper(P0x, np.zeros((0, 0)), np.asarray(hd["R"]), np.asarray(hd["Q_x"]))
            x0 = np.asarray(meta["x0"])
        fm = cls(model, theta, Scaler.from_dict(meta["scaler_u"]),
                 Scaler.from_dict(meta["scaler_y"]), meta.get("na", 0), meta.get("nb", 0),
                 x0, hyper)
        return fm, meta


def evaluate(fm: FittedModel, test, trace: RunTrace | None = None, N_i: int = 0,
             y_min=None, y_max=None) -> MetricsReport:
    """Test RMSE / R2 of ``fm``; training RMSE and MCV from ``trace`` when given.

    MCV averages the bound violation of the measured outputs over the
    active-learning window ``N_i <= k < N`` only.
    """
    yh, yt = fm.one_step(*test)
    rep = MetricsReport(float("nan"), rmse(yt, yh), r2(yt, yh), 0.0)
    if trace is not None and len(trace):
        U, Y = trace.column("u"), trace.column("y")
        yh_tr, yt_tr = fm.one_step(U, Y)
        rep.rmse_train = rmse(yt_tr, yh_tr)
        if y_min is not None:
            k = trace.column("k")
            rep.mcv = mcv(Y[k >= N_i], y_min, y_max)
    return rep


# --------------------------------------------------------------------------
# shared run pieces
# --------------------------------------------------------------------------

class _Run:
    """State common to the NARX and state-space loops."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.spec = plant_for(cfg)
        self.pool_phys = _pool_rows(self.spec)
        self.n_test = cfg.N_test or self.spec.n_test
        self.test = make_test_set(self.spec, self.n_test, cfg.test_seed)
        self.sim = Simulator(self.spec, NoiseModel(self.spec.gamma,
                                                   rngmod.stream(cfg.seed, rngmod.NOISE)))
        self.passive = rngmod.stream(cfg.seed, rngmod.PASSIVE)
        self.trace = RunTrace(curve=np.full(cfg.N + 1, np.nan))
        self.U: list = []
        self.Y: list = []
        self.greedy_steps = 0
        self.acq_ms: list = []  # (k, selection wall time)

    def passive_phase(self):
        for k in range(self.cfg.N_i):
            t0 = time.perf_counter()
            y = self.sim.measure()
            i = int(self.passive.integers(len(self.pool_phys)))
            u = self.pool_phys[i]
            self.sim.apply(u)
            self.U.append(u)
            self.Y.append(y)
            self.trace.records.append(StepRecord(k, u, y, np.full_like(y, np.nan), float("nan"),
                                                 0.0, (time.perf_counter() - t0) * 1e3))
        self.su = fit_scaler(np.array(self.U))
        self.sy = fit_scaler(np.array(self.Y))
        self.pool = InputPool.from_physical(self.pool_phys, self.su)

    def penalty(self) -> PenaltyConfig:
        c = self.cfg
        if not c.constraints:
            return PenaltyConfig()
        return PenaltyConfig(self.sy.scale(np.atleast_1d(self.spec.y_min)),
                             self.sy.scale(np.atleast_1d(self.spec.y_max)), c.rho, c.penalty,
                             c.alpha_quantile, c.beta_cap)

    def passive_pick(self) -> int:
        return int(self.passive.integers(len(self.pool_phys)))

    def want_eval(self, k: int) -> bool:
        c = self.cfg
        return k == c.N or (k - c.N_i) % c.eval_every == 0

    def finish(self, fm: FittedModel, out=None):
        c = self.cfg
        tr = self.trace
        tr.model, tr.theta = fm.model, fm.theta
        tr.meta = {"plant": self.spec.name, "model": c.model, "strategy": c.strategy,
                   "seed": c.seed, "N_i": c.N_i, "N": c.N, "status": tr.status,
                   "greedy_steps": self.greedy_steps, "acq_ms": self.acq_ms,
                   "y_min": np.atleast_1d(self.spec.y_min).tolist(),
                   "y_max": np.atleast_1d(self.spec.y_max).tolist(), **fm.meta()}
        if tr.status == "ok":
            rep = evaluate(fm, self.test, tr, c.N_i, self.spec.y_min, self.spec.y_max)
        else:
            rep = MetricsReport(float("nan"), float("nan"), float("nan"), float("nan"))
            try:
                rep = evaluate(fm, self.test, tr, c.N_i, self.spec.y_min, self.spec.y_max)
            except (NumericalBreakdown, ValueError, FloatingPointError):
                pass
        rep.status, rep.seed, rep.strategy = tr.status, c.seed, c.strategy
        rep.extra["greedy_steps"] = self.greedy_steps
        if out is not None:
            write_run(out, c, tr, rep, self.test)
        return tr, rep


def _abort(run: _Run, k: int, exc: Exception):
    run.trace.status = f"aborted at k={k}: {exc}"
    log.warning("run seed=%d strategy=%s %s", run.cfg.seed, run.cfg.strategy, run.trace.status)


# --------------------------------------------------------------------------
# NARX loop
# --------------------------------------------------------------------------

def run_narx(cfg: ExperimentConfig, out=None):
    """Online identification of a NARX model (``narx-nn`` or ``linear-arx``)."""
    if cfg.state_space:
        raise ConfigError(f"{cfg.model} is a state-space model; use run_ss")
    R = _Run(cfg)
    R.passive_phase()
    su, sy = R.su, R.sy
    ds = Dataset(R.spec.n_u, R.spec.n_y, cfg.na, cfg.nb)
    for u, y in zip(R.U, R.Y):
        ds.append_sample(su.scale(u), sy.scale(y))
    if cfg.model == "narx-nn":
        model = make_model("narx-nn", n_x=ds.n_x, n1=cfg.n1, n2=cfg.n2, n_y=R.spec.n_y)
    else:
        model = make_model("linear-arx", n_x=ds.n_x, n_y=R.spec.n_y)
    h = EkfHyper.narx(model.n_theta, R.spec.n_y, cfg.P0, cfg.Q_theta, cfg.R)
    theta0 = model.init_theta(rngmod.stream(cfg.seed, rngmod.INIT))
    fm = FittedModel(model, theta0, su, sy, cfg.na, cfg.nb)

    Xt, Tt = narx_pairs(su.scale(R.test[0]), sy.scale(R.test[1]), cfg.na, cfg.nb)
    Tt = sy.unscale(Tt)

    def test_rmse(theta):
        return rmse(Tt, sy.unscale(model.predict(theta, Xt)))

    pen = R.penalty()
    committee = None
    k = cfg.N_i
    try:
        st = batch_init_narx(model, ds, h, cfg.N_e, theta0)
        fm.theta = st.theta
        R.trace.curve[: cfg.N_i] = test_rmse(st.theta)
        if cfg.strategy == "qbc":
            committee = Committee.from_state(st, cfg.K_qbc, randomized=cfg.qbc_randomized,
                                             rng=rngmod.stream(cfg.seed, rngmod.COMMITTEE))
        for k in range(cfg.N_i, cfg.N + 1):
            t0 = time.perf_counter()
            y = R.sim.measure()
            x_prev = ds.regressor_at(k - 1)
            yhat = sy.unscale(model.predict(st.theta, x_prev))
            ys = sy.scale(y)
            ds.push_output(ys)
            st = ekf_update_narx(model, st, h, x_prev, ys)
            if committee is not None:
                committee = committee_update(committee, model, h, x_prev, ys)
            fm.theta = st.theta
            if k == cfg.N:
                R.trace.curve[k] = test_rmse(st.theta)
                break
            if cfg.strategy == "passive":
                i, score, p = R.passive_pick(), float("nan"), 0.0
            else:
                ctx = AcquisitionContext(ds, model, st.theta, R.pool, cfg.delta, cfg.L, pen,
                                         cfg.kernel,
                                         committee.thetas() if committee else None, cfg.budget)
                t_acq = time.perf_counter()
                sel = select(ctx, cfg.strategy)
                R.acq_ms.append((k, (time.perf_counter() - t_acq) * 1e3))
                i, score, p = sel.index, sel.score, sel.penalty
                R.greedy_steps += sel.greedy
            ds.push_input(R.pool.candidates[i])
            u = R.pool_phys[i]
            R.sim.apply(u)
            ms = (time.perf_counter() - t0) * 1e3
            R.trace.records.append(StepRecord(k, u, y, yhat, score, p, ms))
            if R.want_eval(k):
                R.trace.curve[k] = test_rmse(st.theta)
    except NumericalBreakdown as exc:
        _abort(R, k, exc)
    return R.finish(fm, out)


# --------------------------------------------------------------------------
# state-space loop
# --------------------------------------------------------------------------

def _split(model, theta):
    return theta[: model.n_theta_x], theta[model.n_theta_x :]


def run_ss(cfg: ExperimentConfig, out=None):
    """Online identification of a state-space model with periodic state reconstruction."""
    if not cfg.state_space:
        raise ConfigError(f"{cfg.model} is not a state-space model; use run_narx")
    R = _Run(cfg)
    R.passive_phase()
    su, sy, spec = R.su, R.sy, R.spec
    Us = [su.scale(u) for u in R.U]
    Ys = [sy.scale(y) for y in R.Y]
    if cfg.model == "rnn-ss":
        model = make_model("rnn-ss", n_x=cfg.n_x, n_u=spec.n_u, n_y=spec.n_y, n1x=cfg.n1x,
                           n2x=cfg.n2x, n1y=cfg.n1y)
    else:
        model = make_model("linear-ss", n_x=cfg.n_x, n_u=spec.n_u, n_y=spec.n_y)
    h = EkfHyper.joint(model.n_x, model.n_theta, spec.n_y, cfg.P0_x, cfg.P0_theta, cfg.Q_x,
                       cfg.Q_theta, cfg.R)
    tx0, ty0 = model.init_theta(rngmod.stream(cfg.seed, rngmod.INIT))
    fm = FittedModel(model, np.concatenate([tx0, ty0]), su, sy, x0=np.zeros(model.n_x),
                     hyper=h)
    test_s = (su.scale(R.test[0]), sy.scale(R.test[1]))

    def test_rmse():
        tx, ty = _split(model, fm.theta)
        yh = predict_one_step_ss(model, tx, ty, *test_s, h, fm.x0)
        return rmse(R.test[1], sy.unscale(yh))

    pen = R.penalty()
    committee = None
    k = cfg.N_i
    try:
        tx, ty, x0, _ = batch_init_ss(model, np.array(Us), np.array(Ys), tx0, ty0,
                                      n_iter=cfg.N_b, l2=cfg.l2_theta, l2_x0=cfg.l2_x0)
        fm.theta, fm.x0 = np.concatenate([tx, ty]), x0
        st = init_state_joint(model, tx, ty, x0, h)
        filtered = []
        for u, y in zip(Us, Ys):
            st = joint_measurement_update(model, st, h, y)
            filtered.append(st.x.copy())
            st = joint_time_update(model, st, h, u)
        fm.theta = st.theta
        R.trace.curve[: cfg.N_i] = test_rmse()
        if cfg.strategy == "qbc":
            committee = Committee.from_state(st, cfg.K_qbc, randomized=cfg.qbc_randomized,
                                             rng=rngmod.stream(cfg.seed, rngmod.COMMITTEE))
        states, traj_time = None, None
        for k in range(cfg.N_i, cfg.N + 1):
            t0 = time.perf_counter()
            y = R.sim.measure()
            _, ty = _split(model, st.theta)
            yhat = sy.unscale(model.f_y(ty, st.x))
            ys = sy.scale(y)
            Ys.append(ys)
            st = joint_measurement_update(model, st, h, ys)
            filtered.append(st.x.copy())
            if committee is not None:
                committee = committee.update(
                    lambda s: joint_measurement_update(model, s, h, ys))
            fm.theta = st.theta
            if k == cfg.N:
                R.trace.curve[k] = test_rmse()
                break
            tx, ty = _split(model, st.theta)
            if cfg.strategy == "passive":
                i, score, p = R.passive_pick(), float("nan"), 0.0
            else:
                if states is None or (k - cfg.N_i) % cfg.m == 0:
                    traj = reconstruct_states(model, tx, ty, np.array(Us), np.array(Ys), h,
                                              x0=fm.x0, refine=cfg.refine)
                    if traj.stalled:
                        log.info("state refinement stalled at k=%d", k)
                    states, traj_time = list(traj.states), k
                else:
                    states.append(st.x.copy())
                cth = None
                if committee is not None:
                    cth = [_split(model, r.theta) for r in committee.replicas]
                ctx = StateSpaceContext(model, tx, ty, st.x, np.array(states), np.array(Us),
                                        np.array(Ys), R.pool, cfg.delta, cfg.alpha_state,
                                        cfg.L, pen, cfg.kernel, cth, traj_time, cfg.m, cfg.budget)
                t_acq = time.perf_counter()
                sel = select_ss(ctx, cfg.strategy)
                R.acq_ms.append((k, (time.perf_counter() - t_acq) * 1e3))
                i, score, p = sel.index, sel.score, sel.penalty
                R.greedy_steps += sel.greedy
            us = R.pool.candidates[i]
            Us.append(us)
            st = joint_time_update(model, st, h, us)
            if committee is not None:
                committee = replace(committee, replicas=[joint_time_update(model, r, h, us)
                                                         for r in committee.replicas])
            u = R.pool_phys[i]
            R.sim.apply(u)
            ms = (time.perf_counter() - t0) * 1e3
            R.trace.records.append(StepRecord(k, u, y, yhat, score, p, ms))
            if R.want_eval(k):
                R.trace.curve[k] = test_rmse()
    except NumericalBreakdown as exc:
        _abort(R, k, exc)
    return R.finish(fm, out)


def run(cfg: ExperimentConfig, out=None):
    """Dispatch to :func:`run_ss` or :func:`run_narx` by model kind."""
    return run_ss(cfg, out) if cfg.state_space else run_narx(cfg, out)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def write_run(out, cfg: ExperimentConfig, trace: RunTrace, rep: MetricsReport, test=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k", "rmse_test"))
        for k, v in enumerate(trace.curve):
            w.writerow((k, repr(float(v))))
    (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=2))
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    if trace.model is not None:
        save_checkpoint(out / "model.ckpt", trace.model, trace.theta, trace.meta)
    if test is not None:
        write_record(out / "test.csv", *test)


def write_record(path, U, Y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("u", "y"))
        for u, y in zip(U, Y):
            w.writerow((_fmt(u), _fmt(y)))


def read_record(path):
    U, Y = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            U.append(_parse(row["u"]))
            Y.append(_parse(row["y"]))
    return np.array(U), np.array(Y)


def read_curve(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(r["rmse_test"]) for r in csv.DictReader(fh)])


def metrics_from_files(trace_path, test_path) -> MetricsReport:
    """Recompute metrics from a saved trace, its sibling ``model.ckpt`` and a test record."""
    trace_path = Path(trace_path)
    fm, meta = FittedModel.from_checkpoint(trace_path.parent / "model.ckpt")
    rep = evaluate(fm, read_record(test_path), RunTrace.from_csv(trace_path), meta["N_i"],
                   np.asarray(meta["y_min"]), np.asarray(meta["y_max"]))
    rep.status, rep.seed, rep.strategy = meta.get("status", "ok"), meta.get("seed"), \
        meta.get("strategy")
    return rep


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def _sweep_job(args):
    cfg, out = args
    trace, rep = run(cfg, out)
    return rep, trace.curve


def sweep(cfg: ExperimentConfig, strategies, runs: int, out=None, jobs: int = 1) -> dict:
    """Run every strategy on seeds ``cfg.seed + r`` for ``r < runs``.

    Returns ``{strategy: {"reports", "aggregate", "curve_median", "curve_mad"}}``.
    Aborted runs are left out of the medians and counted in ``aggregate``.
    """
    jobs_list = []
    for s in strategies:
        for r in range(runs):
            c = cfg.replace(strategy=s, seed=cfg.seed + r)
            jobs_list.append((c, None if out is None else Path(out) / s / f"run_{r:03d}"))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_sweep_job, jobs_list))
    else:
        results = [_sweep_job(j) for j in jobs_list]
    summary = {}
    for n, s in enumerate(strategies):
        part = results[n * runs : (n + 1) * runs]
        reps = [r for r, _ in part]
        curves = np.array([c for r, c in part if r.status == "ok"])
        med, mad = median_mad(curves) if len(curves) else (None, None)
        summary[s] = {"reports": reps, "aggregate": aggregate(reps), "curve_median": med,
                      "curve_mad": mad}
    if out is not None:
        out = Path(out)
        blob = {s: {"per_run": [r.to_dict() for r in v["reports"]], "aggregate": v["aggregate"]}
                for s, v in summary.items()}
        (out / "summary.json").write_text(json.dumps(blob, indent=2))
        export_plots(out)
    return summary


def export_plots(sweep_dir) -> Path:
    """Write ``rmse_curves.csv`` (per-step median / MAD test RMSE per strategy)."""
    sweep_dir = Path(sweep_dir)
    cols, names = [], []
    for sdir in sorted(p for p in sweep_dir.iterdir() if p.is_dir()):
        curves = []
        for rdir in sorted(sdir.glob("run_*")):
            m = json.loads((rdir / "metrics.json").read_text())
            if m.get("status") == "ok":
                curves.append(read_curve(rdir / "curve.csv"))
        if curves:
            med, mad = median_mad(np.array(curves))
            cols += [med, mad]
            names += [f"{sdir.name}_median", f"{sdir.name}_mad"]
    if not cols:
        raise FileNotFoundError(f"no finished runs under {sweep_dir}")
    path = sweep_dir / "rmse_curves.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", *names])
        for k in range(len(cols[0])):
            w.writerow([k, *(repr(float(c[k])) for c in cols)])
    return path
