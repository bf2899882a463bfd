"""Kalman-filter based parameter and state estimation.

NARX models are trained by an EKF on the parameter vector alone (a
random walk ``theta+ = theta``).  State-space models use a joint EKF on
``[x, theta_x, theta_y]``; past hidden states are reconstructed with a
forward EKF / backward RTS pass, optionally refining the initial state
by minimizing the open-loop output error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import InsufficientData, NumericalBreakdown

log = logging.getLogger(__name__)


def _as_cov(a, n: int) -> np.ndarray:
    """Scalar -> ``a * I``, vector -> diag, matrix passes through."""
    a = np.asarray(a, float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    if a.shape != (n, n):
        raise ValueError(f"covariance shape {a.shape}, expected {(n, n)}")
    return a


@dataclass
class EkfHyper:
    """Filter tuning.

    In joint (state-space) mode ``P0`` covers ``[x, theta_x, theta_y]``
    and ``Q_theta`` the parameter block only.
    """

    P0: np.ndarray
    Q_theta: np.ndarray
    R: np.ndarray
    Q_x: np.ndarray | None = None

    @classmethod
    def narx(cls, n_theta: int, n_y: int, p0=1e-2, q=1e-10, r=1e-2) -> "EkfHyper":
        return cls(_as_cov(p0, n_theta), _as_cov(q, n_theta), _as_cov(r, n_y))

    @classmethod
    def joint(cls, n_x: int, n_theta: int, n_y: int, p0_x=4e-2, p0_theta=2e-1,
              q_x=1e-8, q_theta=1e-8, r=1.0) -> "EkfHyper":
        P0 = sla.block_diag(_as_cov(p0_x, n_x), _as_cov(p0_theta, n_theta))
        return cls(P0, _as_cov(q_theta, n_theta), _as_cov(r, n_y), _as_cov(q_x, n_x))

    def state_block(self, n_x: int):
        """``(P0_x, Q_x)`` used when parameters are frozen."""
        return self.P0[:n_x, :n_x], self.Q_x


@dataclass
class EkfState:
    theta: np.ndarray
    P: np.ndarray
    x: np.ndarray | None = None
    n_updates: int = 0

    def copy(self) -> "EkfState":
        return EkfState(self.theta.copy(), self.P.copy(),
                        None if self.x is None else self.x.copy(), self.n_updates)


def _symmetrize(P):
    return 0.5 * (P + P.T)


def _gain(P, PHt, S):
    """Kalman gain ``P H' S^-1`` via Cholesky of the innovation covariance."""
    try:
        cf = sla.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalBreakdown(f"innovation covariance not positive definite: {exc}") from exc
    return sla.cho_solve(cf, PHt.T).T


def _joseph(P, PHt, K, S):
    # (I - K H) P (I - K H)' + K R K', expanded to keep the cost O(n^2 n_y)
    KPHt = K @ PHt.T
    return _symmetrize(P - KPHt - KPHt.T + K @ S @ K.T)


def kalman_measurement(P, H, e, R):
    """Generic measurement update; returns ``(dz, P_new)``."""
    PHt = P @ H.T
    S = H @ PHt + R
    K = _gain(P, PHt, S)
    return K @ e, _joseph(P, PHt, K, S)


# --------------------------------------------------------------------------
# NARX parameter estimation
# --------------------------------------------------------------------------

def init_state_narx(theta0, h: EkfHyper) -> EkfState:
    return EkfState(np.array(theta0, float), h.P0.copy())


def ekf_update_narx(model, st: EkfState, h: EkfHyper, x, y) -> EkfState:
    """One measurement update on ``(x_{k-1}, y_k)`` followed by ``P += Q_theta``."""
    theta = st.theta
    e = np.atleast_1d(y) - model.predict(theta, x)
    H = model.jacobian(theta, x)
    dtheta, P = kalman_measurement(st.P, H, e, h.R)
    return EkfState(theta + dtheta, P + h.Q_theta, None, st.n_updates + 1)


def batch_init_narx(model, ds, h: EkfHyper, n_epochs: int, theta0) -> EkfState:
    """Run the EKF ``n_epochs`` times over the stored training pairs.

    Both ``theta`` and ``P`` carry over from one epoch to the next.
    """
    X, Y = ds.training_pairs()
    if len(Y) < 1:
        raise InsufficientData("no complete (regressor, target) pair in the dataset")
    st = init_state_narx(theta0, h)
    for _ in range(n_epochs):
        for x, y in zip(X, Y):
            st = ekf_update_narx(model, st, h, x, y)
    return st


# --------------------------------------------------------------------------
# joint state / parameter EKF
# --------------------------------------------------------------------------

def init_state_joint(model, theta_x, theta_y, x0, h: EkfHyper) -> EkfState:
    return EkfState(np.concatenate([theta_x, theta_y]).astype(float), h.P0.copy(),
                    np.array(x0, float))


def _split(model, theta):
    return theta[: model.n_theta_x], theta[model.n_theta_x :]


def joint_measurement_update(model, st: EkfState, h: EkfHyper, y) -> EkfState:
    """Correct ``[x, theta]`` with ``y_k``, linearizing ``y = f_y(x, theta_y)``."""
    nx, ntx = model.n_x, model.n_theta_x
    tx, ty = _split(model, st.theta)
    J = model.jacobians(tx, ty, st.x, np.zeros(model.n_u))
    P = st.P
    # H = [C, 0, D_theta]
    PHt = P[:, :nx] @ J.C.T + P[:, nx + ntx :] @ J.D_theta.T
    S = J.C @ PHt[:nx] + J.D_theta @ PHt[nx + ntx :] + h.R
    K = _gain(P, PHt, S)
    dz = K @ (np.atleast_1d(y) - model.f_y(ty, st.x))
    return EkfState(st.theta + dz[nx:], _joseph(P, PHt, K, S), st.x + dz[:nx], st.n_updates + 1)


def joint_time_update(model, st: EkfState, h: EkfHyper, u) -> EkfState:
    """Propagate ``x+ = f_x(x, u, theta_x)``; parameters follow a random walk."""
    nx, ntx = model.n_x, model.n_theta_x
    tx, ty = _split(model, st.theta)
    J = model.jacobians(tx, ty, st.x, u)
    P = st.P
    # F = [[A, B_theta, 0], [0, I, 0], [0, 0, I]]
    TP = J.A @ P[:nx] + J.B_theta @ P[nx : nx + ntx]
    Pn = P.copy()
    Pn[:nx, nx:] = TP[:, nx:]
    Pn[nx:, :nx] = TP[:, nx:].T
    Pn[:nx, :nx] = TP[:, :nx] @ J.A.T + TP[:, nx : nx + ntx] @ J.B_theta.T
    Pn[:nx, :nx] += h.Q_x
    Pn[nx:, nx:] += h.Q_theta
    return EkfState(st.theta.copy(), _symmetrize(Pn), model.f_x(tx, st.x, u), st.n_updates)


def ekf_update_joint(model, st: EkfState, h: EkfHyper, u, y) -> EkfState:
    """Measurement update with ``y_k`` then time update with ``u_k``."""
    return joint_time_update(model, joint_measurement_update(model, st, h, y), h, u)


# --------------------------------------------------------------------------
# hidden-state reconstruction
# --------------------------------------------------------------------------

@dataclass
class SmoothedTrajectory:
    """States ``x_{0|k} .. x_{k|k}`` for a record with outputs ``y_0 .. y_k``."""

    states: np.ndarray
    covariances: np.ndarray
    smoothed: np.ndarray
    smoothed_covariances: np.ndarray
    filtered: np.ndarray
    refined: bool = False
    stalled: bool = False
    time: int = field(default=-1)

    def __len__(self):
        return len(self.states)


def _state_filter(model, tx, ty, U, Y, m0, P0, Qx, R):
    n, nx = len(Y), model.n_x
    mf = np.empty((n, nx))
    Pf = np.empty((n, nx, nx))
    mp = np.empty((n, nx))
    Pp = np.empty((n, nx, nx))
    A = np.empty((n, nx, nx))
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    for i in range(n):
        mp[i], Pp[i] = m, P
        u = U[i] if i < len(U) else np.zeros(model.n_u)
        J = model.jacobians(tx, ty, m, u, need_theta=False)
        e = Y[i] - model.f_y(ty, m)
        dm, P = kalman_measurement(P, J.C, e, R)
        m = m + dm
        mf[i], Pf[i] = m, P
        if i + 1 < n:
            J = model.jacobians(tx, ty, m, u, need_theta=False)
            A[i] = J.A
            m = model.f_x(tx, m, u)
            P = _symmetrize(J.A @ P @ J.A.T + Qx)
    return mf, Pf, mp, Pp, A


def predict_one_step_ss(model, theta_x, theta_y, U, Y, h: EkfHyper, x0=None):
    """One-step-ahead outputs ``f_y(x_{i|i-1})`` from a state-only EKF with frozen parameters."""
    Y = np.asarray(Y, float).reshape(len(Y), model.n_y)
    U = np.asarray(U, float).reshape(len(U), model.n_u)
    P0, Qx = h.state_block(model.n_x)
    m0 = np.zeros(model.n_x) if x0 is None else np.asarray(x0, float)
    _, _, mp, _, _ = _state_filter(model, theta_x, theta_y, U, Y, m0, P0, Qx, h.R)
    return model.f_y(theta_y, mp)


def rts_smooth(mf, Pf, mp, Pp, A):
    """Backward pass; ``mp[i+1], Pp[i+1]`` are the one-step predictions from ``i``."""
    n = len(mf)
    ms, Ps = mf.copy(), Pf.copy()
    for i in range(n - 2, -1, -1):
        G = sla.solve(Pp[i + 1], (Pf[i] @ A[i].T).T, assume_a="pos").T
        ms[i] = mf[i] + G @ (ms[i + 1] - mp[i + 1])
        Ps[i] = _symmetrize(Pf[i] + G @ (Ps[i + 1] - Pp[i + 1]) @ G.T)
    return ms, Ps


def output_error(model, tx, ty, x0, U, Y):
    """Sum of squared open-loop output errors and its gradient w.r.t. ``x0``."""
    n, nx = len(Y), model.n_x
    X = np.empty((n, nx))
    X[0] = x0
    for i in range(n - 1):
        X[i + 1] = model.f_x(tx, X[i], U[i])
    E = Y - model.f_y(ty, X)
    J = float(np.sum(E * E))
    if not np.isfinite(J):
        return np.inf, np.zeros(nx)
    lam = np.zeros(nx)
    for i in range(n - 1, -1, -1):
        u = U[i] if i < len(U) else np.zeros(model.n_u)
        jac = model.jacobians(tx, ty, X[i], u, need_theta=False)
        lam = -2.0 * jac.C.T @ E[i] + (jac.A.T @ lam if i < n - 1 else 0.0)
    return J, lam


def reconstruct_states(model, theta_x, theta_y, U, Y, h: EkfHyper, x0=None,
                       refine: bool = True, max_iter: int = 50) -> SmoothedTrajectory:
    """EKF + RTS smoothing with parameters frozen, then refine ``x_0``.

    With ``refine=True`` the smoothed initial state is improved by a
    limited-memory quasi-Newton search on the open-loop output error and
    the returned states come from a final forward EKF started there.
    ``refine=False`` returns the RTS-smoothed states themselves.
    """
    Y = np.asarray(Y, float).reshape(len(Y), model.n_y)
    U = np.asarray(U, float).reshape(len(U), model.n_u)
    if len(Y) == 0:
        raise InsufficientData("cannot reconstruct states from an empty record")
    nx = model.n_x
    P0, Qx = h.state_block(nx)
    m0 = np.zeros(nx) if x0 is None else np.asarray(x0, float)
    mf, Pf, mp, Pp, A = _state_filter(model, theta_x, theta_y, U, Y, m0, P0, Qx, h.R)
    ms, Ps = rts_smooth(mf, Pf, mp, Pp, A)
    traj = SmoothedTrajectory(ms, Ps, ms, Ps, mf, time=len(Y) - 1)
    if not refine:
        return traj

    x_s = ms[0]
    J0, _ = output_error(model, theta_x, theta_y, x_s, U, Y)
    res = minimize(lambda x: output_error(model, theta_x, theta_y, x, U, Y), x_s, jac=True,
                   method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-15})
    if not (np.isfinite(res.fun) and res.fun < J0):
        log.debug("x0 refinement stalled (J=%g)", J0)
        traj.stalled = True
        x_r = x_s
    else:
        x_r = res.x
    mf2, Pf2, *_ = _state_filter(model, theta_x, theta_y, U, Y, x_r, P0, Qx, h.R)
    states, covs = mf2.copy(), Pf2.copy()
    states[0], covs[0] = x_r, P0
    traj.states, traj.covariances, traj.refined = states, covs, not traj.stalled
    return traj


# --------------------------------------------------------------------------
# batch initialization of state-space models
# --------------------------------------------------------------------------

def simulation_loss(model, params, U, Y, l2: float = 0.0, l2_x0: float = 0.0):
    """Mean squared open-loop simulation error over ``[theta_x, theta_y, x0]``.

    ``l2`` and ``l2_x0`` weigh ridge terms on the parameters and on ``x0``.
    Returns the loss and its gradient (back-propagated through time).
    """
    ntx, nty, nx = model.n_theta_x, model.n_theta_y, model.n_x
    tx, ty, x0 = params[:ntx], params[ntx : ntx + nty], params[ntx + nty :]
    n = len(Y)
    X = np.empty((n, nx))
    X[0] = x0
    for i in range(n - 1):
        X[i + 1] = model.f_x(tx, X[i], U[i])
    E = Y - model.f_y(ty, X)
    th = params[: ntx + nty]
    loss = float(np.sum(E * E)) / n + l2 * float(th @ th) + l2_x0 * float(x0 @ x0)
    if not np.isfinite(loss):
        return np.inf, np.zeros_like(params)
    g = np.zeros_like(params)
    lam = np.zeros(nx)
    for i in range(n - 1, -1, -1):
        u = U[i] if i < len(U) else np.zeros(model.n_u)
        jac = model.jacobians(tx, ty, X[i], u)
        r = -2.0 / n * E[i]
        g[ntx : ntx + nty] += jac.D_theta.T @ r
        # lam holds dL/dx_{i+1}; its pull-back through f_x at step i
        if i < n - 1:
            g[:ntx] += jac.B_theta.T @ lam
            lam = jac.C.T @ r + jac.A.T @ lam
        else:
            lam = jac.C.T @ r
    g[ntx + nty :] = lam + 2.0 * l2_x0 * x0
    g[: ntx + nty] += 2.0 * l2 * params[: ntx + nty]
    return loss, g


def batch_init_ss(model, U, Y, theta_x0, theta_y0, x0=None, n_iter: int = 1000,
                  l2: float = 0.0, l2_x0: float = 0.0, bound: float | None = None):
    """Fit ``(theta_x, theta_y, x0)`` by L-BFGS-B on the simulation error.

    ``n_iter`` caps the quasi-Newton iterations; convergence is declared
    at a gradient infinity-norm of 1e-8.  Returns ``(theta_x, theta_y, x0, loss)``.
    """
    Y = np.asarray(Y, float).reshape(len(Y), model.n_y)
    U = np.asarray(U, float).reshape(len(U), model.n_u)
    p0 = np.concatenate([theta_x0, theta_y0, np.zeros(model.n_x) if x0 is None else x0])
    bounds = None if bound is None else [(-bound, bound)] * p0.size
    res = minimize(lambda p: simulation_loss(model, p, U, Y, l2, l2_x0), p0, jac=True,
                   method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": n_iter, "gtol": 1e-8})
    ntx, nty = model.n_theta_x, model.n_theta_y
    p = res.x
    return p[:ntx].copy(), p[ntx : ntx + nty].copy(), p[ntx + nty :].copy(), float(res.fun)


# --------------------------------------------------------------------------
# query-by-committee replicas
# --------------------------------------------------------------------------

@dataclass
class Committee:
    """``K`` filters sharing a common start; one replica sits out each update.

    The skipped replica is chosen round-robin by default, or uniformly at
    random from ``rng`` when ``randomized`` is set.
    """

    replicas: list
    randomized: bool = False
    rng: np.random.Generator | None = None
    step: int = 0
    counts: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.replicas) < 2:
            raise ValueError("a committee needs at least 2 replicas")
        if not self.counts:
            self.counts = [0] * len(self.replicas)
        if self.randomized and self.rng is None:
            raise ValueError("randomized skipping needs an rng")

    @property
    def K(self) -> int:
        return len(self.replicas)

    @classmethod
    def from_state(cls, st: EkfState, K: int, **kw) -> "Committee":
        return cls([st.copy() for _ in range(K)], **kw)

    def next_skip(self) -> int:
        if self.randomized:
            return int(self.rng.integers(self.K))
        return self.step % self.K

    def update(self, fn) -> "Committee":
        """Apply ``fn(state) -> state`` to every replica except the scheduled one."""
        skip = self.next_skip()
        new = [r if j == skip else fn(r) for j, r in enumerate(self.replicas)]
        counts = [c + (j != skip) for j, c in enumerate(self.counts)]
        return replace(self, replicas=new, step=self.step + 1, counts=counts)

    def thetas(self):
        return [r.theta for r in self.replicas]


def committee_update(c: Committee, model, h: EkfHyper, x, y) -> Committee:
    return c.update(lambda st: ekf_update_narx(model, st, h, x, y))
