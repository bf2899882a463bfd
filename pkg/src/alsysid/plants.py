"""Ground-truth plants: adaptive Dormand-Prince integration and benchmark surrogates.

The three benchmarks reproduce the dimensions, initial states, sample
periods, input pools, output bounds and noise levels of the classic
two-tank, ethylene-oxidation and flexible robot-arm identification
problems.  Their right-hand sides are documented surrogates (see
``docs/plants.md``), not bit copies of any toolbox model.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, StepSizeUnderflow

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri_step(f, x, h, k1=None):
    """One Dormand-Prince step of size ``h`` for the autonomous ``x' = f(x)``.

    Returns ``(x5, err, k7)``: the 5th-order solution, the embedded error
    estimate ``x5 - x4`` and the last stage (equal to ``f(x5)``).
    """
    K = np.empty((7, x.shape[0]))
    K[0] = f(x) if k1 is None else k1
    for i in range(1, 7):
        K[i] = f(x + h * (np.asarray(_A[i]) @ K[:i]))
    x5 = x + h * (_B5 @ K)
    return x5, h * (_E @ K), K[6]


def integrate(f, x, T: float, rtol: float = 1e-8, atol: float = 1e-10, h0: float | None = None):
    """Integrate ``x' = f(x)`` over exactly ``T`` with adaptive DP5(4) steps.

    Returns ``(x(T), h_next)``; pass ``h_next`` back as ``h0`` on the next
    call to avoid re-probing the step size.
    """
    x = np.array(x, dtype=float)
    t = 0.0
    h = min(T, h0) if h0 else T
    k1 = f(x)
    hmin = 16 * np.finfo(float).eps * T
    while t < T:
        last = t + h >= T * (1 - 1e-12)
        step = T - t if last else h
        # a blown-up trial step is rejected below via the non-finite norm
        with np.errstate(over="ignore", invalid="ignore"):
            x5, err, k7 = dopri_step(f, x, step, k1)
        sc = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        en = math.sqrt(float(np.mean((err / sc) ** 2)))
        if not np.isfinite(en):
            en = 1e10
        if en <= 1.0:
            t = T if last else t + step
            x, k1 = x5, k7
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = step * fac if not last else max(h, step * fac)
        else:
            h = step * max(0.2, 0.9 * en ** -0.2)
            if h < hmin:
                raise StepSizeUnderflow(f"step {h:g} below {hmin:g} at t={t:g}")
    return x, h


# --------------------------------------------------------------------------
# plant specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantSpec:
    name: str
    n_x: int
    n_u: int
    n_y: int
    x0: np.ndarray
    Ts: float
    rhs: Callable
    output: Callable
    gamma: float
    pool: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    n_test: int = 2000
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.n_x, self.n_u, self.n_y) < 1 or self.Ts <= 0 or self.gamma < 0:
            raise ConfigError(f"invalid plant spec {self.name!r}")


def integrate_step(spec: PlantSpec, x, u, h0=None, rtol=1e-8, atol=1e-10):
    """State after one sample period with ``u`` held constant; returns ``(x_next, h_next)``."""
    u = np.atleast_1d(np.asarray(u, float))
    return integrate(lambda s: spec.rhs(s, u), x, spec.Ts, rtol, atol, h0)


@dataclass
class NoiseModel:
    """Multiplicative output noise ``y (1 + gamma * eps)``, ``eps ~ N(0, 1)``."""

    gamma: float
    rng: np.random.Generator

    def apply(self, y):
        y = np.asarray(y, float)
        if self.gamma == 0:
            return y.copy()
        return y * (1.0 + self.gamma * self.rng.standard_normal(y.shape))


def measure(spec: PlantSpec, x, noise: NoiseModel | None = None):
    y = np.atleast_1d(spec.output(np.asarray(x, float)))
    return y if noise is None else noise.apply(y)


class Simulator:
    """Stateful plant: ``measure()`` reads ``y_k``, ``apply(u)`` advances one period."""

    def __init__(self, spec: PlantSpec, noise: NoiseModel | None = None, x0=None):
        self.spec, self.noise = spec, noise
        self.x = np.array(spec.x0 if x0 is None else x0, float)
        self._h = None

    def measure(self):
        return measure(self.spec, self.x, self.noise)

    def apply(self, u):
        self.x, self._h = integrate_step(self.spec, self.x, u, self._h)
        return self.x


def simulate(spec: PlantSpec, inputs, noise: NoiseModel | None = None, x0=None):
    """Outputs ``y_0 .. y_{n-1}`` for inputs ``u_0 .. u_{n-1}`` (``y_k`` read before ``u_k``)."""
    sim = Simulator(spec, noise, x0)
    ys = []
    for u in np.asarray(inputs, float).reshape(len(inputs), -1):
        ys.append(sim.measure())
        sim.apply(u)
    return np.array(ys)


# --------------------------------------------------------------------------
# benchmark surrogates
# --------------------------------------------------------------------------

def _grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


def two_tank() -> PlantSpec:
    """Cascaded gravity-drain tanks; pump voltage in, lower level out."""
    p = dict(A1=0.5, A2=0.25, k=0.0035, a1=0.019, a2=0.016, g=9.81)
    c1 = p["a1"] * math.sqrt(2 * p["g"])
    c2 = p["a2"] * math.sqrt(2 * p["g"])

    def rhs(x, u):
        q1 = c1 * math.sqrt(max(x[0], 0.0))
        q2 = c2 * math.sqrt(max(x[1], 0.0))
        return np.array([(p["k"] * u[0] - q1) / p["A1"], (q1 - q2) / p["A2"]])

    return PlantSpec("two-tank", 2, 1, 1, np.array([0.0, 0.1]), 0.5, rhs,
                     lambda x: np.array([max(x[1], 0.0)]), 0.02, _grid(0.0, 10.0, 0.01),
                     np.array([0.03]), np.array([0.08]), 2000, p)


def oxidation() -> PlantSpec:
    """Dimensionless ethylene-oxidation CSTR; feed flow in, C2H4O concentration out.

    The C2H4 feed concentration is a fixed plant parameter (0.5).
    """
    p = dict(g1=-8.13, g2=-7.12, g3=-11.07, A1=92.8, A2=12.66, A3=2412.71,
             B1=7.32, B2=10.39, B3=2170.57, B4=7.02, Tc=1.0, v=0.5)

    def rhs(x, u):
        x1, x2, x3, x4 = x
        x4 = max(x4, 1e-6)
        r1 = p["A1"] * math.exp(p["g1"] / x4) * math.sqrt(max(x2 * x4, 0.0))
        r2 = p["A2"] * math.exp(p["g2"] / x4) * max(x2 * x4, 0.0) ** 0.25
        r3 = p["A3"] * math.exp(p["g3"] / x4) * math.sqrt(max(x3 * x4, 0.0))
        q = u[0]
        return np.array([
            q * (1.0 - x1 * x4),
            q * (p["v"] - x2 * x4) - r1 - r2,
            -q * x3 * x4 + r1 - r3,
            (q * (1.0 - x4) + (p["B1"] / p["A1"]) * r1 + (p["B2"] / p["A2"]) * r2 + (p["B3"] / p["A3"]) * r3
             - p["B4"] * (x4 - p["Tc"])) / x1,
        ])

    return PlantSpec("oxidation", 4, 1, 1, np.array([0.9981, 0.4291, 0.0303, 1.0019]), 5.0,
                     rhs, lambda x: np.array([x[2]]), 0.08, _grid(0.0704, 0.7042, 0.01),
                     np.array([0.02]), np.array([0.05]), 2000, p)


def robot_arm() -> PlantSpec:
    """Three-inertia flexible joint with hardening gear spring and motor friction.

    States: motor-gear twist, gear-arm twist, motor, gear and arm
    velocities.  Output: motor angular velocity.
    """
    p = dict(Jm=0.01, Jg=0.005, Ja=0.02, kg=330.0, kg3=1e5, dg=0.5, ka=100.0, da=0.2,
             Fv=0.3, Fc=0.2, beta=50.0, Fa=0.05)

    def rhs(x, u):
        tmg, tga, wm, wg, wa = x
        tau_g = p["kg"] * tmg + p["kg3"] * tmg ** 3 + p["dg"] * (wm - wg)
        tau_a = p["ka"] * tga + p["da"] * (wg - wa)
        fric = p["Fv"] * wm + p["Fc"] * math.tanh(p["beta"] * wm)
        return np.array([
            wm - wg,
            wg - wa,
            (u[0] - fric - tau_g) / p["Jm"],
            (tau_g - tau_a) / p["Jg"],
            (tau_a - p["Fa"] * wa) / p["Ja"],
        ])

    return PlantSpec("robot-arm", 5, 1, 1, np.zeros(5), 0.0005, rhs,
                     lambda x: np.array([x[2]]), 0.08, _grid(-3.0, 3.0, 0.01),
                     np.array([-0.4]), np.array([0.4]), 1000, p)


BENCHMARKS = {"two-tank": two_tank, "oxidation": oxidation, "robot-arm": robot_arm}


def make_benchmark(name: str) -> PlantSpec:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ConfigError(f"unknown plant {name!r}; choose from {sorted(BENCHMARKS)}") from None


# --------------------------------------------------------------------------
# user-defined plants
# --------------------------------------------------------------------------

_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "abs": abs, "min": min, "max": max}
_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _compile_expr(src: str, names: set):
    tree = ast.parse(src, mode="eval")
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Load)) or isinstance(node, _OPS):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in names or node.id in _FUNCS):
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            continue
        raise ConfigError(f"disallowed construct {type(node).__name__} in {src!r}")
    return compile(tree, "<plant>", "eval")


def plant_from_dict(d: dict) -> PlantSpec:
    """Build a plant from a definition with arithmetic right-hand sides.

    Expected keys: ``name``, ``states`` (names), ``inputs`` (names),
    ``parameters`` (name -> value), ``rhs`` (one expression per state),
    ``output`` (expressions), ``x0``, ``Ts``, ``gamma``, ``pool``
    (``{start, stop, step}`` or a list), ``y_min``, ``y_max``.
    Expressions may use ``+ - * / **``, numbers, the declared names and
    ``sqrt exp abs min max``.
    """
    try:
        states, inputs = list(d["states"]), list(d["inputs"])
        params = {k: float(v) for k, v in d.get("parameters", {}).items()}
        names = set(states) | set(inputs) | set(params)
        rhs_code = [_compile_expr(str(e), names) for e in d["rhs"]]
        out_code = [_compile_expr(str(e), names) for e in d["output"]]
        if len(rhs_code) != len(states):
            raise ConfigError("need one rhs expression per state")
        pool = d["pool"]
        pool = _grid(pool["start"], pool["stop"], pool["step"]) if isinstance(pool, dict) \
            else np.asarray(pool, float)
        env0 = {"__builtins__": {}, **_FUNCS, **params}

        def env(x, u):
            e = dict(env0)
            e.update(zip(states, map(float, x)))
            e.update(zip(inputs, map(float, np.atleast_1d(u))))
            return e

        def rhs(x, u):
            e = env(x, u)
            return np.array([eval(c, e) for c in rhs_code], float)

        def output(x):
            e = env(x, np.zeros(len(inputs)))
            return np.array([eval(c, e) for c in out_code], float)

        return PlantSpec(d.get("name", "custom"), len(states), len(inputs), len(out_code),
                         np.asarray(d["x0"], float), float(d["Ts"]), rhs, output,
                         float(d.get("gamma", 0.0)), pool,
                         np.atleast_1d(np.asarray(d.get("y_min", -np.inf), float)),
                         np.atleast_1d(np.asarray(d.get("y_max", np.inf), float)),
                         int(d.get("n_test", 1000)), params)
    except KeyError as exc:
        raise ConfigError(f"plant definition missing key {exc}") from None
