"""Scaling, regressor construction, input pools and the sample store.

Everything downstream of this module works in *scaled* units: the
scaler is fitted once on the passively collected initial data and then
frozen, so distances stored in a :class:`Dataset` stay comparable for
the whole experiment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignal, DimensionMismatch, InsufficientHistory


@dataclass(frozen=True)
class Scaler:
    """Per-channel standard scaling ``(v - mean) / std``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape:
            raise DimensionMismatch(f"mean {mean.shape} vs std {std.shape}")
        if np.any(~(std > 0)):
            raise DegenerateSignal("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def scale(self, v):
        return scale(self, v)

    def unscale(self, v):
        return unscale(self, v)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def fit_scaler(samples) -> Scaler:
    """Fit a :class:`Scaler` from samples (population std, ``ddof=0``).

    ``samples`` is a sequence of scalars or vectors; a 1-D array is read
    as a sequence of scalar samples.
    """
    a = np.asarray(samples, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 2:
        raise DegenerateSignal("need at least 2 samples to fit a scaler")
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DegenerateSignal(f"zero variance in channel(s) {bad.tolist()}")
    return Scaler(mean, std)


def _check_dim(s: Scaler, v: np.ndarray):
    if v.shape[-1] != s.dim:
        raise DimensionMismatch(f"expected trailing dim {s.dim}, got {v.shape}")


def scale(s: Scaler, v) -> np.ndarray:
    """Elementwise ``(v - mean) / std``; broadcasts over leading axes."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v[None]
    _check_dim(s, v)
    return (v - s.mean) / s.std


def unscale(s: Scaler, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v[None]
    _check_dim(s, v)
    return v * s.std + s.mean


class InputPool:
    """Finite, duplicate-free set of admissible inputs (scaled units).

    ``candidates`` has shape ``(M, n_u)``; a 1-D array is read as ``M``
    scalar inputs.
    """

    def __init__(self, candidates):
        c = np.asarray(candidates, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("pool needs at least one candidate")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise ValueError("pool contains duplicate candidates")
        c.setflags(write=False)
        self.candidates = c

    @classmethod
    def from_physical(cls, values, scaler: Scaler) -> "InputPool":
        return cls(scale(scaler, np.asarray(values, float).reshape(len(values), -1)))

    @property
    def M(self) -> int:
        return self.candidates.shape[0]

    @property
    def n_u(self) -> int:
        return self.candidates.shape[1]

    def __len__(self):
        return self.M

    def __getitem__(self, i):
        return self.candidates[i]


def regressor_length(na: int, nb: int, n_u: int, n_y: int) -> int:
    return na * n_y + nb * n_u


class _RowBuffer:
    """Append-only 2-D array with amortized O(1) growth."""

    def __init__(self, width: int, capacity: int = 64):
        self._a = np.empty((capacity, width))
        self.n = 0

    def append(self, row):
        if self.n == self._a.shape[0]:
            grown = np.empty((2 * self._a.shape[0], self._a.shape[1]))
            grown[: self.n] = self._a[: self.n]
            self._a = grown
        self._a[self.n] = row
        self.n += 1

    @property
    def view(self) -> np.ndarray:
        v = self._a[: self.n]
        v.flags.writeable = False
        return v


class Dataset:
    """Growing history of scaled inputs, outputs and NARX regressors.

    Time runs ``k = 0, 1, ...``.  At time ``k`` the output ``y_k`` is
    measured first, then the input ``u_k`` is chosen, so
    ``len(outputs) - len(inputs)`` is always 0 or 1.

    The regressor ``x_k = [y_k ... y_{k-na+1}, u_k ... u_{k-nb+1}]`` is
    cached as soon as ``u_k`` is pushed and enough history exists.  It is
    the feature vector whose target is ``y_{k+1}``.
    """

    def __init__(self, n_u: int, n_y: int, na: int = 0, nb: int = 0):
        if na < 0 or nb < 0:
            raise ValueError("lag orders must be nonnegative")
        self.n_u, self.n_y, self.na, self.nb = n_u, n_y, na, nb
        self._u = _RowBuffer(n_u)
        self._y = _RowBuffer(n_y)
        self._x = _RowBuffer(max(self.n_x, 1))

    @property
    def n_x(self) -> int:
        return regressor_length(self.na, self.nb, self.n_u, self.n_y)

    @property
    def first_regressor(self) -> int:
        """Earliest time index with a complete regressor."""
        return max(self.na, self.nb, 1) - 1

    @property
    def inputs(self) -> np.ndarray:
        return self._u.view

    @property
    def outputs(self) -> np.ndarray:
        return self._y.view

    @property
    def regressors(self) -> np.ndarray:
        """Cached regressors ``x_j`` for ``j = first_regressor .. len(inputs)-1``."""
        return self._x.view[:, : self.n_x]

    def regressor_targets(self) -> np.ndarray:
        """Outputs ``y_{j+1}`` paired with each *measured* regressor.

        Only regressors whose successor output exists are returned; use
        :meth:`training_pairs` to get aligned arrays.
        """
        return self.training_pairs()[1]

    def training_pairs(self):
        """Aligned ``(X, Y)`` with ``Y[i] = y_{j+1}`` for regressor ``x_j``."""
        j0 = self.first_regressor
        n = max(0, min(self._x.n, self._y.n - 1 - j0))
        return self.regressors[:n], self.outputs[j0 + 1 : j0 + 1 + n]

    def __len__(self):
        return self._y.n

    def push_output(self, y):
        y = np.atleast_1d(np.asarray(y, float))
        if y.shape != (self.n_y,):
            raise DimensionMismatch(f"output shape {y.shape}, expected ({self.n_y},)")
        if self._y.n != self._u.n:
            raise ValueError("output pushed twice without an input in between")
        self._y.append(y)

    def push_input(self, u):
        u = np.atleast_1d(np.asarray(u, float))
        if u.shape != (self.n_u,):
            raise DimensionMismatch(f"input shape {u.shape}, expected ({self.n_u},)")
        if self._y.n != self._u.n + 1:
            raise ValueError("input u_k pushed before output y_k")
        k = self._u.n
        self._u.append(u)
        if k >= self.first_regressor:
            self._x.append(self._assemble(k, u) if self.n_x else np.zeros(1))

    def append_sample(self, u, y) -> "Dataset":
        """Record ``y_k`` then ``u_k`` for the next time index ``k``."""
        self.push_output(y)
        self.push_input(u)
        return self

    def regressor_at(self, k: int) -> np.ndarray:
        return self.regressors[k - self.first_regressor]

    def _assemble(self, k: int, u: np.ndarray) -> np.ndarray:
        Y, U = self._y._a, self._u._a
        parts = [Y[k - i] for i in range(self.na)]
        if self.nb:
            parts.append(u)
            parts.extend(U[k - i] for i in range(1, self.nb))
        return np.concatenate(parts) if parts else np.zeros(0)


def build_regressor(ds: Dataset, k: int, u) -> np.ndarray:
    """Regressor ``x_k(u)``: history at time ``k`` with ``u`` in the current-input slot.

    Needs ``y_k ... y_{k-na+1}`` and ``u_{k-1} ... u_{k-nb+1}`` on record.
    """
    u = np.atleast_1d(np.asarray(u, float))
    if u.shape != (ds.n_u,):
        raise DimensionMismatch(f"input shape {u.shape}, expected ({ds.n_u},)")
    if k < ds.first_regressor or k >= ds._y.n or k - 1 >= ds._u.n:
        raise InsufficientHistory(f"cannot build x_{k} from {ds._y.n} outputs, {ds._u.n} inputs")
    return ds._assemble(k, u)


def candidate_regressors(ds: Dataset, k: int, candidates: np.ndarray) -> np.ndarray:
    """Stack ``x_k(u)`` for every row ``u`` of ``candidates`` (shape ``(M, n_x)``)."""
    base = build_regressor(ds, k, candidates[0])
    X = np.repeat(base[None, :], candidates.shape[0], axis=0)
    if ds.nb:
        s = ds.na * ds.n_y
        X[:, s : s + ds.n_u] = candidates
    return X


def append_sample(ds: Dataset, u, y) -> Dataset:
    return ds.append_sample(u, y)
