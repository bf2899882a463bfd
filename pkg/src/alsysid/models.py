"""Parametric predictors with analytic parameter Jacobians.

Models are architecture descriptions only; the parameters live in a flat
``theta`` vector owned by the estimator.  NARX predictors map a
regressor to the next output, state-space models split ``theta`` into a
state-update part and an output part.
"""
from __future__ import annotations

import json
import struct
from collections import namedtuple
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch

# name, shape pairs laid out contiguously in the flat vector, in order
def _layout(shapes):
    slices, off = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        slices[name] = (slice(off, off + n), shape)
        off += n
    return slices, off


def _unpack(slices, theta):
    return {k: theta[s].reshape(shape) for k, (s, shape) in slices.items()}


def _pack(slices, n, params) -> np.ndarray:
    theta = np.empty(n)
    for k, (s, shape) in slices.items():
        w = np.asarray(params[k], float)
        if w.shape != shape:
            raise DimensionMismatch(f"{k}: expected {shape}, got {w.shape}")
        theta[s] = w.ravel()
    return theta


def _uniform_init(slices, n, fan_in, rng) -> np.ndarray:
    theta = np.empty(n)
    for k, (s, _) in slices.items():
        h = 1.0 / np.sqrt(max(fan_in[k], 1))
        theta[s] = rng.uniform(-h, h, s.stop - s.start)
    return theta


def _as_rows(x, n):
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != n:
        raise DimensionMismatch(f"expected feature dim {n}, got {x.shape}")
    return X, single


# --------------------------------------------------------------------------
# NARX predictors
# --------------------------------------------------------------------------

class LinearArx:
    """``y = Theta x`` with ``Theta`` of shape ``(n_y, n_x)`` stored row-major."""

    kind = "linear-arx"

    def __init__(self, n_x: int, n_y: int = 1):
        self.n_x, self.n_y = n_x, n_y
        self.n_theta = n_x * n_y

    def arch(self) -> dict:
        return {"n_x": self.n_x, "n_y": self.n_y}

    def unflatten(self, theta):
        return {"Theta": np.asarray(theta).reshape(self.n_y, self.n_x)}

    def flatten(self, params) -> np.ndarray:
        return np.asarray(params["Theta"], float).reshape(self.n_y, self.n_x).ravel().copy()

    def init_theta(self, rng) -> np.ndarray:
        return np.zeros(self.n_theta)

    def predict(self, theta, x):
        X, single = _as_rows(x, self.n_x)
        Y = X @ np.asarray(theta).reshape(self.n_y, self.n_x).T
        return Y[0] if single else Y

    def jacobian(self, theta, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.kron(np.eye(self.n_y), x[None, :])


class NarxNet:
    """Two-hidden-layer network with arctan activations.

    ``f(x) = W3 atan(W2 atan(W1 x + b1) + b2) + b3``; the flat vector
    holds ``W1, b1, W2, b2, W3, b3`` in that order, weights row-major.
    """

    kind = "narx-nn"

    def __init__(self, n_x: int, n1: int, n2: int, n_y: int = 1):
        self.n_x, self.n1, self.n2, self.n_y = n_x, n1, n2, n_y
        self._slices, self.n_theta = _layout([
            ("W1", (n1, n_x)), ("b1", (n1,)),
            ("W2", (n2, n1)), ("b2", (n2,)),
            ("W3", (n_y, n2)), ("b3", (n_y,)),
        ])
        self._fan_in = {"W1": n_x, "b1": n_x, "W2": n1, "b2": n1, "W3": n2, "b3": n2}

    def arch(self) -> dict:
        return {"n_x": self.n_x, "n1": self.n1, "n2": self.n2, "n_y": self.n_y}

    def unflatten(self, theta):
        return _unpack(self._slices, np.asarray(theta, float))

    def flatten(self, params) -> np.ndarray:
        return _pack(self._slices, self.n_theta, params)

    def init_theta(self, rng) -> np.ndarray:
        return _uniform_init(self._slices, self.n_theta, self._fan_in, rng)

    def predict(self, theta, x):
        X, single = _as_rows(x, self.n_x)
        p = self.unflatten(theta)
        H1 = np.arctan(X @ p["W1"].T + p["b1"])
        H2 = np.arctan(H1 @ p["W2"].T + p["b2"])
        Y = H2 @ p["W3"].T + p["b3"]
        return Y[0] if single else Y

    def jacobian(self, theta, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.shape != (self.n_x,):
            raise DimensionMismatch(f"expected ({self.n_x},), got {x.shape}")
        p = self.unflatten(theta)
        a1 = p["W1"] @ x + p["b1"]
        h1 = np.arctan(a1)
        a2 = p["W2"] @ h1 + p["b2"]
        h2 = np.arctan(a2)
        G2 = p["W3"] / (1.0 + a2 * a2)            # dy/da2
        G1 = (G2 @ p["W2"]) / (1.0 + a1 * a1)     # dy/da1
        ny = self.n_y
        J = np.empty((ny, self.n_theta))
        s = self._slices
        J[:, s["W1"][0]] = (G1[:, :, None] * x[None, None, :]).reshape(ny, -1)
        J[:, s["b1"][0]] = G1
        J[:, s["W2"][0]] = (G2[:, :, None] * h1[None, None, :]).reshape(ny, -1)
        J[:, s["b2"][0]] = G2
        J[:, s["W3"][0]] = np.kron(np.eye(ny), h2[None, :])
        J[:, s["b3"][0]] = np.eye(ny)
        return J


def predict_narx(model, theta, x):
    return model.predict(theta, x)


def jacobian_theta_narx(model, theta, x) -> np.ndarray:
    """``d f / d theta`` at ``(x, theta)``, shape ``(n_y, n_theta)``."""
    return model.jacobian(theta, x)


# --------------------------------------------------------------------------
# State-space predictors
# --------------------------------------------------------------------------

SSJacobians = namedtuple("SSJacobians", "A B_theta C D_theta B_u")
SSJacobians.__doc__ = """Linearization of a state-space model at ``(x, u)``.

A = df_x/dx, B_theta = df_x/dtheta_x, C = df_y/dx, D_theta = df_y/dtheta_y,
B_u = df_x/du.
"""


class RnnSS:
    """Recurrent state-space network.

    ``x+ = W3x tanh(W2x tanh(W1x [x; u] + b1x) + b2x) + b3x`` and
    ``y = W2y tanh(W1y x + b1y) + b2y``.  The output is read from the
    current state, so the model is strictly causal.
    """

    kind = "rnn-ss"

    def __init__(self, n_x: int, n_u: int, n_y: int, n1x: int, n2x: int, n1y: int):
        self.n_x, self.n_u, self.n_y = n_x, n_u, n_y
        self.n1x, self.n2x, self.n1y = n1x, n2x, n1y
        nz = n_x + n_u
        self._sx, self.n_theta_x = _layout([
            ("W1", (n1x, nz)), ("b1", (n1x,)),
            ("W2", (n2x, n1x)), ("b2", (n2x,)),
            ("W3", (n_x, n2x)), ("b3", (n_x,)),
        ])
        self._sy, self.n_theta_y = _layout([
            ("W1", (n1y, n_x)), ("b1", (n1y,)),
            ("W2", (n_y, n1y)), ("b2", (n_y,)),
        ])
        self._fx = {"W1": nz, "b1": nz, "W2": n1x, "b2": n1x, "W3": n2x, "b3": n2x}
        self._fy = {"W1": n_x, "b1": n_x, "W2": n1y, "b2": n1y}

    @property
    def n_theta(self) -> int:
        return self.n_theta_x + self.n_theta_y

    def arch(self) -> dict:
        return {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y,
                "n1x": self.n1x, "n2x": self.n2x, "n1y": self.n1y}

    def unflatten(self, theta_x, theta_y):
        return _unpack(self._sx, np.asarray(theta_x, float)), _unpack(self._sy, np.asarray(theta_y, float))

    def flatten(self, px, py):
        return _pack(self._sx, self.n_theta_x, px), _pack(self._sy, self.n_theta_y, py)

    def init_theta(self, rng):
        return (_uniform_init(self._sx, self.n_theta_x, self._fx, rng),
                _uniform_init(self._sy, self.n_theta_y, self._fy, rng))

    def f_x(self, theta_x, x, u):
        X, single = _as_rows(x, self.n_x)
        U, _ = _as_rows(u, self.n_u)
        p = _unpack(self._sx, theta_x)
        Z = np.concatenate([X, np.broadcast_to(U, (X.shape[0], self.n_u))], axis=1)
        H1 = np.tanh(Z @ p["W1"].T + p["b1"])
        H2 = np.tanh(H1 @ p["W2"].T + p["b2"])
        Xn = H2 @ p["W3"].T + p["b3"]
        return Xn[0] if single else Xn

    def f_y(self, theta_y, x):
        X, single = _as_rows(x, self.n_x)
        p = _unpack(self._sy, theta_y)
        Y = np.tanh(X @ p["W1"].T + p["b1"]) @ p["W2"].T + p["b2"]
        return Y[0] if single else Y

    def jacobians(self, theta_x, theta_y, x, u, need_theta: bool = True) -> SSJacobians:
        px = _unpack(self._sx, theta_x)
        py = _unpack(self._sy, theta_y)
        x = np.asarray(x, float)
        z = np.concatenate([x, np.atleast_1d(np.asarray(u, float))])
        nx, ny = self.n_x, self.n_y

        h1 = np.tanh(px["W1"] @ z + px["b1"])
        h2 = np.tanh(px["W2"] @ h1 + px["b2"])
        G2 = px["W3"] * (1.0 - h2 * h2)
        G1 = (G2 @ px["W2"]) * (1.0 - h1 * h1)
        Jz = G1 @ px["W1"]

        g = np.tanh(py["W1"] @ x + py["b1"])
        Hy = py["W2"] * (1.0 - g * g)
        C = Hy @ py["W1"]

        Bt = Dt = None
        if need_theta:
            s = self._sx
            Bt = np.empty((nx, self.n_theta_x))
            Bt[:, s["W1"][0]] = (G1[:, :, None] * z[None, None, :]).reshape(nx, -1)
            Bt[:, s["b1"][0]] = G1
            Bt[:, s["W2"][0]] = (G2[:, :, None] * h1[None, None, :]).reshape(nx, -1)
            Bt[:, s["b2"][0]] = G2
            Bt[:, s["W3"][0]] = np.kron(np.eye(nx), h2[None, :])
            Bt[:, s["b3"][0]] = np.eye(nx)
            s = self._sy
            Dt = np.empty((ny, self.n_theta_y))
            Dt[:, s["W1"][0]] = (Hy[:, :, None] * x[None, None, :]).reshape(ny, -1)
            Dt[:, s["b1"][0]] = Hy
            Dt[:, s["W2"][0]] = np.kron(np.eye(ny), g[None, :])
            Dt[:, s["b2"][0]] = np.eye(ny)
        return SSJacobians(Jz[:, :nx], Bt, C, Dt, Jz[:, nx:])


class LinearSS:
    """``x+ = A x + B u``, ``y = C x`` with ``theta_x = [vec A, vec B]``, ``theta_y = vec C``."""

    kind = "linear-ss"

    def __init__(self, n_x: int, n_u: int, n_y: int):
        self.n_x, self.n_u, self.n_y = n_x, n_u, n_y
        self.n_theta_x = n_x * (n_x + n_u)
        self.n_theta_y = n_y * n_x

    @property
    def n_theta(self) -> int:
        return self.n_theta_x + self.n_theta_y

    def arch(self) -> dict:
        return {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y}

    def unflatten(self, theta_x, theta_y):
        nx = self.n_x
        tx = np.asarray(theta_x, float)
        return ({"A": tx[: nx * nx].reshape(nx, nx), "B": tx[nx * nx :].reshape(nx, self.n_u)},
                {"C": np.asarray(theta_y, float).reshape(self.n_y, nx)})

    def flatten(self, px, py):
        return (np.concatenate([np.ravel(px["A"]), np.ravel(px["B"])]).astype(float),
                np.ravel(py["C"]).astype(float))

    def init_theta(self, rng):
        return (np.concatenate([0.5 * np.eye(self.n_x).ravel(),
                                rng.uniform(-0.5, 0.5, self.n_x * self.n_u)]),
                rng.uniform(-0.5, 0.5, self.n_theta_y))

    def f_x(self, theta_x, x, u):
        px, _ = self.unflatten(theta_x, np.zeros(self.n_theta_y))
        X, single = _as_rows(x, self.n_x)
        U, _ = _as_rows(u, self.n_u)
        Xn = X @ px["A"].T + U @ px["B"].T
        return Xn[0] if single else Xn

    def f_y(self, theta_y, x):
        X, single = _as_rows(x, self.n_x)
        Y = X @ np.asarray(theta_y, float).reshape(self.n_y, self.n_x).T
        return Y[0] if single else Y

    def jacobians(self, theta_x, theta_y, x, u, need_theta: bool = True) -> SSJacobians:
        px, py = self.unflatten(theta_x, theta_y)
        x = np.asarray(x, float)
        u = np.atleast_1d(np.asarray(u, float))
        Bt = Dt = None
        if need_theta:
            Bt = np.hstack([np.kron(np.eye(self.n_x), x[None, :]),
                            np.kron(np.eye(self.n_x), u[None, :])])
            Dt = np.kron(np.eye(self.n_y), x[None, :])
        return SSJacobians(px["A"].copy(), Bt, py["C"].copy(), Dt, px["B"].copy())


def step_ss(model, theta_x, theta_y, x, u):
    """One step of a state-space model: ``(x_next, y)`` with ``y`` read from ``x``."""
    x = np.asarray(x, float)
    if x.shape != (model.n_x,):
        raise DimensionMismatch(f"state shape {x.shape}, expected ({model.n_x},)")
    return model.f_x(theta_x, x, u), model.f_y(theta_y, x)


def jacobians_ss(model, theta_x, theta_y, x, u) -> SSJacobians:
    return model.jacobians(theta_x, theta_y, x, u)


def simulate_ss(model, theta_x, theta_y, x0, U):
    """Open-loop rollout; returns states ``x_0..x_n`` and outputs ``y_0..y_{n-1}``."""
    U = np.asarray(U, float).reshape(len(U), -1)
    X = np.empty((len(U) + 1, model.n_x))
    X[0] = x0
    for i, u in enumerate(U):
        X[i + 1] = model.f_x(theta_x, X[i], u)
    return X, model.f_y(theta_y, X[:-1]) if len(U) else np.empty((0, model.n_y))


# --------------------------------------------------------------------------
# construction and checkpoints
# --------------------------------------------------------------------------

MODEL_KINDS = {cls.kind: cls for cls in (LinearArx, NarxNet, RnnSS, LinearSS)}


def make_model(kind: str, **arch):
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**arch)


def is_state_space(model) -> bool:
    return hasattr(model, "f_x")


_MAGIC = b"ALSYSID\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, theta, meta: dict | None = None):
    """Write ``theta`` with an architecture header.

    Layout: 8-byte magic, ``<u4`` version, ``<u4`` header length, UTF-8
    JSON header, then ``n_theta`` little-endian float64 values.
    """
    theta = np.asarray(theta, dtype="<f8").ravel()
    if theta.size != model.n_theta:
        raise DimensionMismatch(f"theta has {theta.size} entries, model needs {model.n_theta}")
    header = json.dumps({"kind": model.kind, "arch": model.arch(),
                         "n_theta": int(theta.size), "meta": meta or {}}).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(theta.tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, theta, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode())
    theta = np.frombuffer(raw[16 + hlen :], dtype="<f8").astype(float)
    if theta.size != header["n_theta"]:
        raise ValueError(f"{path}: truncated parameter block")
    return make_model(header["kind"], **header["arch"]), theta, header["meta"]
