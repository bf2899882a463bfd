"""Pool-based acquisition: IDW variance/exploration, greedy and committee scores.

Every selector enumerates the whole input pool and returns the exact
argmax (lowest pool index on ties).  Scores are computed for all
candidates at once; nothing depends on evaluation order, so the choice
is the same however the work is split.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InsufficientData, StaleTrajectory
from .signals import Dataset, InputPool, candidate_regressors

HIT_TOL = 1e-12  # distance (not squared) below which x counts as a stored point
KERNELS = ("inverse-square", "exponential")
STRATEGIES = ("passive", "ideal", "gsx", "igs", "qbc")
_CHUNK = 262_144  # pairwise entries per scoring block (2 MiB of float64)


# --------------------------------------------------------------------------
# IDW primitives
# --------------------------------------------------------------------------

def sqdist(A, B) -> np.ndarray:
    """Pairwise squared Euclidean distances, exact zero for identical rows."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return cdist(A, B, "sqeuclidean")


def _weights(D2, kernel: str):
    """IDW coefficients ``v`` and weight sums from squared distances.

    Rows containing an exact hit get ``v`` concentrated on the hit(s)
    and a weight sum of ``inf``.  ``D2`` is consumed (may be overwritten).
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    hit = D2 <= HIT_TOL * HIT_TOL
    any_hit = hit.any(axis=1)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if kernel == "inverse-square":
            # in place: D2 is a scratch array here; hit rows are overwritten below
            V = np.reciprocal(D2, out=D2)
            wsum = V.sum(axis=1)
            V /= wsum[:, None]
        else:
            logW = -D2 - np.log(D2)
            logW[hit] = -np.inf
            top = logW.max(axis=1, keepdims=True)
            top[~np.isfinite(top)] = 0.0
            E = np.exp(logW - top)
            V = E / E.sum(axis=1, keepdims=True)
            wsum = np.exp(logW).sum(axis=1)
    if any_hit.any():
        H = hit[any_hit].astype(float)
        V[any_hit] = H / H.sum(axis=1, keepdims=True)
        wsum[any_hit] = np.inf
    return V, wsum, any_hit


def _z_from_wsum(wsum, any_hit):
    with np.errstate(divide="ignore"):
        z = (2.0 / np.pi) * np.arctan(1.0 / wsum)
    z = np.minimum(z, np.nextafter(1.0, 0.0))
    z[any_hit] = 0.0
    return z


def _rows(fn, Xq, nstored):
    """Apply ``fn`` to row blocks of ``Xq`` so pairwise arrays stay bounded."""
    step = max(1, _CHUNK // max(nstored, 1))
    if Xq.shape[0] <= step:
        return fn(Xq)
    parts = [fn(Xq[i : i + step]) for i in range(0, Xq.shape[0], step)]
    return tuple(np.concatenate(p) for p in zip(*parts))


def idw_coeffs(points, x, kernel: str = "inverse-square") -> np.ndarray:
    """IDW coefficients ``v_j(x)`` over ``points``; they sum to one."""
    P = np.atleast_2d(np.asarray(points, float))
    if P.shape[0] == 0:
        raise InsufficientData("IDW needs at least one stored point")
    V, _, _ = _weights(sqdist(np.atleast_1d(x)[None, :], P), kernel)
    return V[0]


def idw_exploration(points, x, kernel: str = "inverse-square"):
    """``z(x) = (2/pi) atan(1 / sum_j w_j(x))``, zero on the stored points.

    ``x`` may be a single vector or a stack of row vectors.
    """
    P = np.atleast_2d(np.asarray(points, float))
    X = np.asarray(x, float)
    single = X.ndim == 1
    X = np.atleast_2d(X)

    def f(Xb):
        _, wsum, hit = _weights(sqdist(Xb, P), kernel)
        return (_z_from_wsum(wsum, hit),)

    z, = _rows(f, X, P.shape[0])
    return z[0] if single else z


def idw_scores(points, residual_sq, x, kernel: str = "inverse-square"):
    """``(s2, z)`` at each row of ``x`` given per-point squared residuals."""
    P = np.atleast_2d(np.asarray(points, float))
    r = np.asarray(residual_sq, float)
    X = np.atleast_2d(np.asarray(x, float))

    def f(Xb):
        V, wsum, hit = _weights(sqdist(Xb, P), kernel)
        return V @ r, _z_from_wsum(wsum, hit)

    return _rows(f, X, P.shape[0])


def idw_variance_points(points, residual_sq, x, kernel: str = "inverse-square"):
    s2, _ = idw_scores(points, residual_sq, x, kernel)
    return s2[0] if np.asarray(x).ndim == 1 else s2


def narx_residuals(ds: Dataset, model, theta):
    """Stored regressors and ``||y_{j+1} - f(x_j, theta)||^2``."""
    X, Y = ds.training_pairs()
    R = Y - model.predict(theta, X) if len(X) else np.zeros((0, ds.n_y))
    return X, np.sum(R * R, axis=1)


def idw_variance(ds: Dataset, model, theta, x, kernel: str = "inverse-square"):
    """IDW variance proxy ``s^2(x) = sum_j v_j(x) ||y_{j+1} - f(x_j, theta)||^2``."""
    X, r = narx_residuals(ds, model, theta)
    if len(X) == 0:
        raise InsufficientData("dataset holds no training pair")
    return idw_variance_points(X, r, x, kernel)


def min_sqdist(points, x):
    """``min_j ||x - points_j||^2`` for each row of ``x``."""
    P = np.atleast_2d(np.asarray(points, float))
    X = np.atleast_2d(np.asarray(x, float))
    d, = _rows(lambda Xb: (sqdist(Xb, P).min(axis=1),), X, P.shape[0])
    return d


# --------------------------------------------------------------------------
# output-constraint penalties
# --------------------------------------------------------------------------

@dataclass
class PenaltyConfig:
    """Soft output bounds in scaled units.

    ``mode`` is ``"none"``, ``"plain"`` or ``"shrunk"``; the shrunk form
    tightens both bounds by ``min(kappa * s(x), beta_cap * (y_max - y_min))``.
    """

    y_min: np.ndarray | None = None
    y_max: np.ndarray | None = None
    rho: float = 0.0
    mode: str = "none"
    alpha_quantile: float = 0.90
    beta_cap: float = 1.0 / 3.0

    def __post_init__(self):
        if self.mode not in ("none", "plain", "shrunk"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not 0 < self.alpha_quantile <= 1:
            raise ValueError("alpha_quantile must lie in (0, 1]")
        if self.beta_cap <= 0:
            raise ValueError("beta_cap must be positive")
        if self.mode != "none":
            self.y_min = np.atleast_1d(np.asarray(self.y_min, float))
            self.y_max = np.atleast_1d(np.asarray(self.y_max, float))
            if np.any(self.y_min >= self.y_max):
                raise ValueError("need y_min < y_max")

    @property
    def active(self) -> bool:
        return self.mode != "none" and self.rho > 0


def penalty_values(cfg: PenaltyConfig, yhat, s=None, kappa: float = 0.0) -> np.ndarray:
    """Penalty for each row of predicted outputs ``yhat``.

    ``s`` (IDW standard deviation per row) and ``kappa`` are used in
    shrunk mode only.
    """
    Yh = np.atleast_2d(np.asarray(yhat, float))
    if cfg.mode == "none" or cfg.rho == 0:
        return np.zeros(Yh.shape[0])
    t = 0.0
    if cfg.mode == "shrunk" and s is not None:
        cap = cfg.beta_cap * (cfg.y_max - cfg.y_min)
        t = np.minimum(kappa * np.asarray(s, float)[:, None], cap[None, :])
    over = np.maximum(Yh - cfg.y_max + t, 0.0)
    under = np.maximum(cfg.y_min - Yh + t, 0.0)
    return cfg.rho * np.sum(over + under, axis=1)


def loo_ratios(points, pred, targets, extra=None, alpha: float = 0.0,
               kernel: str = "inverse-square"):
    """Leave-one-out ratios ``|CV_i| / s_{-i}(x_i)``.

    ``pred[i]`` is the model prediction at stored point ``i`` and
    ``targets[i]`` the measured output it should match.  ``s_{-i}^2``
    weighs the spread of the *other* targets around ``pred[i]``.  With
    ``extra = (state_pred, state_targets)`` the state term of the
    state-space variance is added with weight ``alpha``.
    """
    P = np.atleast_2d(np.asarray(points, float))
    k = P.shape[0]
    D2 = sqdist(P, P)
    np.fill_diagonal(D2, np.inf)
    V, _, _ = _weights(D2, kernel)
    np.fill_diagonal(V, 0.0)
    S2 = np.sum(V * sqdist(pred, targets), axis=1)
    if extra is not None:
        S2 = S2 + alpha * np.sum(V * sqdist(*extra), axis=1)
    cv = np.linalg.norm(np.asarray(targets) - np.asarray(pred), axis=1)
    s = np.sqrt(np.maximum(S2, 0.0))
    keep = s >= 1e-12
    return cv[keep] / s[keep] if k else np.zeros(0)


def kappa_from_ratios(ratios, alpha_quantile: float) -> float:
    if len(ratios) < 2:
        raise InsufficientData(f"only {len(ratios)} usable leave-one-out ratio(s)")
    return float(np.quantile(ratios, alpha_quantile))


def kappa_alpha(ds: Dataset, model, theta, kernel: str = "inverse-square",
                alpha_quantile: float = 0.90) -> float:
    """Confidence multiplier: upper ``alpha_quantile`` sample quantile of LOO ratios."""
    X, Y = ds.training_pairs()
    if len(X) < 2:
        raise InsufficientData("need at least 2 stored samples")
    return kappa_from_ratios(loo_ratios(X, model.predict(theta, X), Y, kernel=kernel),
                             alpha_quantile)


# --------------------------------------------------------------------------
# receding-horizon search over the pool
# --------------------------------------------------------------------------

def plan(L: int, M: int, hist0, expand, stage_score, budget: int = 100_000):
    """Maximize ``sum_j stage_score(j, ...)`` over input sequences of length ``L``.

    ``expand(hist) -> (features, yhat, next_hist)`` pairs every prefix
    state with every pool candidate (prefix-major order).  When ``M**L``
    exceeds ``budget`` the search goes stage by stage, keeping only the
    best prefix.  Returns ``(first_index, total_score, greedy)``.
    """
    exhaustive = float(M) ** L <= budget
    hist = hist0
    total = np.zeros(1)
    first = np.zeros(1, dtype=int)
    for j in range(L):
        feat, yhat, nxt = expand(hist)
        sc = np.repeat(total, M) + stage_score(j, feat, yhat)
        fi = np.repeat(first, M) if j else np.arange(M)
        if exhaustive or j == L - 1:
            total, hist, first = sc, nxt, fi
        else:
            b = int(np.argmax(sc))
            total, hist, first = sc[b : b + 1], nxt[b : b + 1], fi[b : b + 1]
    best = int(np.argmax(total))
    return int(first[best]), float(total[best]), not exhaustive


# --------------------------------------------------------------------------
# NARX acquisition
# --------------------------------------------------------------------------

@dataclass
class Selection:
    index: int
    u: np.ndarray
    score: float
    penalty: float
    greedy: bool = False


@dataclass
class AcquisitionContext:
    """Everything a NARX selector needs at time ``k = len(dataset) - 1``.

    ``committee`` holds the parameter vectors of QBC replicas; when set,
    penalties use the committee-mean prediction.
    """

    dataset: Dataset
    model: object
    theta: np.ndarray | None
    pool: InputPool
    delta: float = 0.0
    horizon: int = 1
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    kernel: str = "inverse-square"
    committee: list | None = None
    budget: int = 100_000

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def k(self) -> int:
        return len(self.dataset) - 1

    def predict(self, X):
        if self.committee is not None:
            return np.mean([self.model.predict(t, X) for t in self.committee], axis=0)
        return self.model.predict(self.theta, X)

    @cached_property
    def stored(self):
        """Stored regressors and their squared residuals under the current model."""
        X, Y = self.dataset.training_pairs()
        if len(X) == 0:
            raise InsufficientData("dataset holds no training pair")
        R = Y - self.predict(X)
        return X, np.sum(R * R, axis=1), Y

    @cached_property
    def candidates(self) -> np.ndarray:
        return candidate_regressors(self.dataset, self.k, self.pool.candidates)

    @cached_property
    def yhat(self) -> np.ndarray:
        return self.predict(self.candidates)

    @cached_property
    def kappa(self) -> float:
        if self.penalty.mode != "shrunk" or not self.penalty.active:
            return 0.0
        X, _, Y = self.stored
        return kappa_from_ratios(loo_ratios(X, self.predict(X), Y, kernel=self.kernel),
                                 self.penalty.alpha_quantile)

    def penalties(self, X, yhat, s2=None):
        if not self.penalty.active:
            return np.zeros(len(X))
        s = None
        if self.penalty.mode == "shrunk":
            if s2 is None:
                s2, _ = idw_scores(self.stored[0], self.stored[1], X, self.kernel)
            s = np.sqrt(np.maximum(s2, 0.0))
        return penalty_values(self.penalty, yhat, s, self.kappa)


def penalty_plain(ctx: AcquisitionContext, x) -> float:
    """``rho * sum_i [max(yhat_i - y_max_i, 0) + max(y_min_i - yhat_i, 0)]``."""
    cfg = ctx.penalty
    if cfg.mode == "none":
        return 0.0
    return float(penalty_values(PenaltyConfig(cfg.y_min, cfg.y_max, cfg.rho, "plain"),
                                ctx.predict(np.atleast_2d(x)))[0])


def penalty_shrunk(ctx: AcquisitionContext, x) -> float:
    cfg = ctx.penalty
    if cfg.mode == "none":
        return 0.0
    X = np.atleast_2d(x)
    s2, _ = idw_scores(ctx.stored[0], ctx.stored[1], X, ctx.kernel)
    X_, _, Y = ctx.stored
    kappa = kappa_from_ratios(loo_ratios(X_, ctx.predict(X_), Y, kernel=ctx.kernel),
                              cfg.alpha_quantile)
    return float(penalty_values(PenaltyConfig(cfg.y_min, cfg.y_max, cfg.rho, "shrunk",
                                              cfg.alpha_quantile, cfg.beta_cap),
                                ctx.predict(X), np.sqrt(s2), kappa)[0])


def _pick(ctx, scores, pen, greedy=False) -> Selection:
    i = int(np.argmax(scores))
    return Selection(i, ctx.pool.candidates[i].copy(), float(scores[i]), float(pen[i]), greedy)


def ideal_terms(ctx: AcquisitionContext):
    """Per-candidate ``(s2, z, p)`` for the one-step ideal score."""
    Xs, r, _ = ctx.stored
    s2, z = idw_scores(Xs, r, ctx.candidates, ctx.kernel)
    return s2, z, ctx.penalties(ctx.candidates, ctx.yhat, s2)


def select_ideal(ctx: AcquisitionContext) -> Selection:
    """argmax over the pool of ``s2 + delta * z - p``."""
    s2, z, p = ideal_terms(ctx)
    return _pick(ctx, s2 + ctx.delta * z - p, p)


def select_gsx(ctx: AcquisitionContext) -> Selection:
    X = ctx.candidates
    p = ctx.penalties(X, ctx.yhat)
    return _pick(ctx, min_sqdist(ctx.stored[0], X) - p, p)


def select_igs(ctx: AcquisitionContext) -> Selection:
    X = ctx.candidates
    p = ctx.penalties(X, ctx.yhat)
    dx = min_sqdist(ctx.stored[0], X)
    dy = min_sqdist(ctx.dataset.outputs, ctx.yhat)
    return _pick(ctx, dx * dy - p, p)


def committee_spread(preds) -> np.ndarray:
    """``sum_j ||yhat^j - mean_h yhat^h||^2`` per row; ``preds`` is ``(K, m, n_y)``."""
    preds = np.asarray(preds, float)
    dev = preds - preds.mean(axis=0, keepdims=True)
    return np.sum(dev * dev, axis=(0, 2))


def select_qbc(ctx: AcquisitionContext, committee=None) -> Selection:
    thetas = committee if committee is not None else ctx.committee
    if thetas is None or len(thetas) < 2:
        raise ValueError("QBC needs a committee of at least 2 parameter vectors")
    X = ctx.candidates
    preds = np.stack([ctx.model.predict(t, X) for t in thetas])
    p = ctx.penalties(X, preds.mean(axis=0))
    return _pick(ctx, committee_spread(preds) - p, p)


def _narx_expand(ctx: AcquisitionContext):
    ds, C = ctx.dataset, ctx.pool.candidates
    na, nb, ny, nu, M = ds.na, ds.nb, ds.n_y, ds.n_u, ctx.pool.M
    ylen, ulen = na * ny, max(nb - 1, 0) * nu

    def expand(hist):
        P = hist.shape[0]
        Yh, Uh = hist[:, :ylen], hist[:, ylen:]
        Cr = np.tile(C, (P, 1))
        parts = [np.repeat(Yh, M, axis=0)]
        if nb:
            parts += [Cr, np.repeat(Uh, M, axis=0)]
        X = np.concatenate(parts, axis=1)
        yhat = ctx.predict(X)
        # shift windows: newest output is the prediction, newest past input is u
        nxt_y = np.concatenate([yhat, X[:, : ylen - ny]], axis=1) if na else X[:, :0]
        nxt_u = np.concatenate([Cr, X[:, ylen + nu :]], axis=1)[:, :ulen] if nb else X[:, :0]
        return X, yhat, np.concatenate([nxt_y, nxt_u], axis=1)

    x0 = ctx.candidates[0]
    hist0 = np.concatenate([x0[:ylen], x0[ylen + nu :] if nb else x0[:0]])[None, :]
    return expand, hist0


def multistep_ideal_terms(ctx: AcquisitionContext):
    """Score pieces used by the multi-step search (exposed for inspection).

    Returns a function ``stage_score(j, X, yhat)``: at ``j = 0`` it gives
    ``s2 + delta*z - p``, at later stages ``delta*z - p`` (the variance
    term is zero on predicted outputs).
    """
    Xs, r, _ = ctx.stored

    def stage_score(j, X, yhat):
        s2, z = idw_scores(Xs, r, X, ctx.kernel)
        p = ctx.penalties(X, yhat, s2)
        return (s2 if j == 0 else 0.0) + ctx.delta * z - p

    return stage_score


def select_ideal_multistep(ctx: AcquisitionContext) -> Selection:
    """Receding-horizon ideal selection over ``L = ctx.horizon`` future inputs.

    Only the first input of the best sequence is returned.  With
    ``L = 1`` this is :func:`select_ideal`.
    """
    if ctx.horizon == 1:
        return select_ideal(ctx)
    expand, hist0 = _narx_expand(ctx)
    i, total, greedy = plan(ctx.horizon, ctx.pool.M, hist0, expand,
                            multistep_ideal_terms(ctx), ctx.budget)
    p = ctx.penalties(ctx.candidates[i : i + 1], ctx.yhat[i : i + 1])
    return Selection(i, ctx.pool.candidates[i].copy(), total, float(p[0]), greedy)


def select(ctx: AcquisitionContext, strategy: str) -> Selection:
    if strategy == "ideal":
        return select_ideal_multistep(ctx)
    if strategy == "gsx":
        return select_gsx(ctx)
    if strategy == "igs":
        return select_igs(ctx)
    if strategy == "qbc":
        return select_qbc(ctx)
    raise ValueError(f"no acquisition rule for strategy {strategy!r}")


# --------------------------------------------------------------------------
# state-space acquisition
# --------------------------------------------------------------------------

@dataclass
class StateSpaceContext:
    """Selector inputs for a state-space model at time ``k = len(outputs) - 1``.

    ``states`` holds ``x_{0|k} .. x_{k|k}`` (at least ``k + 1`` rows);
    ``x_now`` is the current estimate ``x_{k|k}``.  ``trajectory_time``
    is when ``states`` was last reconstructed; with ``max_age`` set, an
    older trajectory is refused.
    """

    model: object
    theta_x: np.ndarray
    theta_y: np.ndarray
    x_now: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    pool: InputPool
    delta: float = 0.0
    alpha: float = 1.0
    horizon: int = 1
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    kernel: str = "inverse-square"
    committee: list | None = None
    trajectory_time: int | None = None
    max_age: int | None = None
    budget: int = 100_000

    def __post_init__(self):
        k = len(self.outputs) - 1
        if len(self.inputs) < k or len(self.states) < k + 1:
            raise StaleTrajectory(f"trajectory covers {len(self.states)} states, need {k + 1}")
        if self.max_age is not None and self.trajectory_time is not None \
                and k - self.trajectory_time >= self.max_age:
            raise StaleTrajectory(f"trajectory from t={self.trajectory_time} too old at k={k}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def k(self) -> int:
        return len(self.outputs) - 1

    @cached_property
    def q_points(self) -> np.ndarray:
        k = self.k
        return np.hstack([self.states[:k], np.asarray(self.inputs[:k]).reshape(k, -1)])

    @cached_property
    def next_targets(self):
        """``(y_{j+1}, x_{j+1|k})`` for ``j = 0 .. k-1``."""
        k = self.k
        return np.asarray(self.outputs[1 : k + 1]), self.states[1 : k + 1]

    @cached_property
    def candidates(self) -> np.ndarray:
        C = self.pool.candidates
        return np.hstack([np.repeat(self.x_now[None, :], len(C), axis=0), C])

    def forward(self, Q, thetas=None):
        tx, ty = thetas if thetas is not None else (self.theta_x, self.theta_y)
        nx = self.model.n_x
        xn = self.model.f_x(tx, Q[:, :nx], Q[:, nx:])
        return xn, self.model.f_y(ty, xn)

    def predict(self, Q):
        if self.committee is not None:
            outs = [self.forward(Q, th) for th in self.committee]
            return np.mean([o[0] for o in outs], axis=0), np.mean([o[1] for o in outs], axis=0)
        return self.forward(Q)

    def variance(self, Q, xn, yhat):
        """``s2(q)`` and ``z(q)`` over the stored ``q_j``."""
        P = self.q_points
        Yt, Xt = self.next_targets

        def f(args):
            Qb, xb, yb = args
            V, wsum, hit = _weights(sqdist(Qb, P), self.kernel)
            s2 = np.sum(V * (sqdist(yb, Yt) + self.alpha * sqdist(xb, Xt)), axis=1)
            return s2, _z_from_wsum(wsum, hit)

        step = max(1, _CHUNK // max(len(P), 1))
        parts = [f((Q[i : i + step], xn[i : i + step], yhat[i : i + step]))
                 for i in range(0, len(Q), step)]
        return tuple(np.concatenate(p) for p in zip(*parts))

    @cached_property
    def kappa(self) -> float:
        if self.penalty.mode != "shrunk" or not self.penalty.active:
            return 0.0
        P = self.q_points
        xn, yhat = self.predict(P)
        Yt, Xt = self.next_targets
        r = loo_ratios(P, yhat, Yt, extra=(xn, Xt), alpha=self.alpha, kernel=self.kernel)
        return kappa_from_ratios(r, self.penalty.alpha_quantile)

    def penalties(self, Q, xn, yhat, s2=None):
        if not self.penalty.active:
            return np.zeros(len(Q))
        s = None
        if self.penalty.mode == "shrunk":
            if s2 is None:
                s2, _ = self.variance(Q, xn, yhat)
            s = np.sqrt(np.maximum(s2, 0.0))
        return penalty_values(self.penalty, yhat, s, self.kappa)


def ss_scores(ctx: StateSpaceContext, strategy: str):
    """Per-candidate ``(score, penalty)`` of a one-step state-space selector."""
    Q = ctx.candidates
    xn, yhat = ctx.predict(Q)
    if strategy == "ideal":
        s2, z = ctx.variance(Q, xn, yhat)
        p = ctx.penalties(Q, xn, yhat, s2)
        return s2 + ctx.delta * z - p, p
    p = ctx.penalties(Q, xn, yhat)
    dx = min_sqdist(ctx.q_points, Q)
    if strategy == "gsx":
        return dx - p, p
    if strategy == "igs":
        Yt, Xt = ctx.next_targets
        dy = min_sqdist(np.hstack([Yt, Xt]), np.hstack([yhat, xn]))
        return dx * dy - p, p
    if strategy == "qbc":
        if ctx.committee is None or len(ctx.committee) < 2:
            raise ValueError("QBC needs a committee of at least 2 parameter pairs")
        preds = np.stack([ctx.forward(Q, th)[1] for th in ctx.committee])
        return committee_spread(preds) - p, p
    raise ValueError(f"no acquisition rule for strategy {strategy!r}")


def select_ss(ctx: StateSpaceContext, strategy: str) -> Selection:
    """argmax over the pool of a state-space acquisition score minus penalty."""
    if strategy == "ideal" and ctx.horizon > 1:
        return _select_ss_multistep(ctx)
    scores, p = ss_scores(ctx, strategy)
    return _pick(ctx, scores, p)


def _select_ss_multistep(ctx: StateSpaceContext) -> Selection:
    C = ctx.pool.candidates
    M, nx = len(C), ctx.model.n_x

    def expand(hist):
        Q = np.hstack([np.repeat(hist, M, axis=0), np.tile(C, (hist.shape[0], 1))])
        xn, yhat = ctx.predict(Q)
        return Q, (xn, yhat), xn

    def stage_score(j, Q, pred):
        xn, yhat = pred
        s2, z = ctx.variance(Q, xn, yhat)
        p = ctx.penalties(Q, xn, yhat, s2)
        return (s2 if j == 0 else 0.0) + ctx.delta * z - p

    i, total, greedy = plan(ctx.horizon, M, ctx.x_now[None, :nx], expand, stage_score, ctx.budget)
    _, p = ss_scores(ctx, "ideal")
    return Selection(i, C[i].copy(), total, float(p[i]), greedy)
