import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import solve_ivp

from alsysid.errors import ConfigError, StepSizeUnderflow
from alsysid.plants import (BENCHMARKS, NoiseModel, Simulator, dopri_step, integrate,
                            integrate_step, make_benchmark, measure, plant_from_dict, simulate)
from alsysid.rng import stream


def test_exponential_decay():
    x, _ = integrate(lambda x: -x, np.array([1.0]), 1.0)
    assert abs(x[0] - np.exp(-1.0)) < 1e-8


def test_zero_dynamics_is_identity():
    x0 = np.array([0.3, -2.0, 7.0])
    x, _ = integrate(lambda x: np.zeros_like(x), x0, 5.0)
    assert_array_equal(x, x0)


def test_harmonic_oscillator_energy():
    f = lambda x: np.array([x[1], -x[0]])
    x, h = np.array([1.0, 0.0]), None
    for _ in range(100):
        x, h = integrate(f, x, 0.1, h0=h)
    assert abs(0.5 * (x @ x) - 0.5) < 1e-6
    assert_allclose(x, [np.cos(10.0), -np.sin(10.0)], atol=1e-7)


def test_dopri_fifth_order():
    f = lambda x: np.array([x[1], -np.sin(x[0])])
    x0 = np.array([1.0, 0.0])
    ref = solve_ivp(lambda t, x: f(x), (0, 0.2), x0, rtol=1e-13, atol=1e-14).y[:, -1]
    ref2 = solve_ivp(lambda t, x: f(x), (0, 0.1), x0, rtol=1e-13, atol=1e-14).y[:, -1]
    e1 = np.linalg.norm(dopri_step(f, x0, 0.2)[0] - ref)
    e2 = np.linalg.norm(dopri_step(f, x0, 0.1)[0] - ref2)
    # local error O(h^6): halving h divides it by ~64
    assert 30 < e1 / e2 < 100
    # the embedded estimate is O(h^5): ratio ~32
    r = np.linalg.norm(dopri_step(f, x0, 0.2)[1]) / np.linalg.norm(dopri_step(f, x0, 0.1)[1])
    assert 20 < r < 45


@pytest.mark.parametrize("name", ["two-tank", "oxidation", "robot-arm"])
def test_benchmark_step_matches_solve_ivp(name):
    spec = make_benchmark(name)
    rng = np.random.default_rng(0)
    x = spec.x0.copy()
    for u in rng.choice(spec.pool, 20):
        u = np.atleast_1d(u)
        ref = solve_ivp(lambda t, s: spec.rhs(s, u), (0, spec.Ts), x, method="DOP853",
                        rtol=1e-12, atol=1e-13).y[:, -1]
        x, _ = integrate_step(spec, x, u)
        assert_allclose(x, ref, rtol=1e-6, atol=1e-8)
        x = ref


def test_noise_zero_gamma_exact():
    n = NoiseModel(0.0, np.random.default_rng(0))
    y = np.array([0.123, -4.5])
    assert_array_equal(n.apply(y), y)


def test_noise_deterministic_and_scaled():
    a = NoiseModel(0.05, stream(3, "noise")).apply(np.ones(100_000))
    b = NoiseModel(0.05, stream(3, "noise")).apply(np.ones(100_000))
    assert_array_equal(a, b)
    assert abs(np.std(a - 1.0) / 0.05 - 1.0) < 0.03
    assert abs(np.mean(a - 1.0)) < 3 * 0.05 / np.sqrt(1e5) * 2


@pytest.mark.parametrize("name,dims,pool,Ts", [
    ("two-tank", (2, 1, 1), 1001, 0.5),
    ("oxidation", (4, 1, 1), 64, 5.0),
    ("robot-arm", (5, 1, 1), 601, 0.0005),
])
def test_benchmark_specs(name, dims, pool, Ts):
    s = make_benchmark(name)
    assert (s.n_x, s.n_u, s.n_y) == dims
    assert len(s.pool) == pool and len(np.unique(s.pool)) == pool
    assert s.Ts == Ts
    assert s.x0.shape == (s.n_x,)
    assert np.all(s.y_min < s.y_max)
    assert s.name in BENCHMARKS


def test_two_tank_pool_grid():
    s = make_benchmark("two-tank")
    assert_allclose(np.diff(s.pool), np.diff(s.pool)[0], rtol=1e-6)


def test_unknown_benchmark():
    with pytest.raises(ConfigError):
        make_benchmark("three-tank")


@pytest.mark.parametrize("name,n,lo,hi", [
    ("two-tank", 10_000, 0.0, 0.2),
    ("oxidation", 2000, 0.0, 0.1),
    ("robot-arm", 2000, -1.0, 1.0),
])
def test_random_excitation_stays_bounded(name, n, lo, hi):
    s = make_benchmark(name)
    rng = np.random.default_rng(1)
    y = simulate(s, rng.choice(s.pool, n))
    assert np.isfinite(y).all()
    assert lo <= y.min() and y.max() <= hi


def test_simulator_reads_before_apply():
    s = make_benchmark("two-tank")
    sim = Simulator(s)
    y0 = sim.measure()
    assert_allclose(y0, measure(s, s.x0))
    sim.apply([0.5])
    assert not np.allclose(sim.x, s.x0)
    Y = simulate(s, [[0.5], [0.5]])
    assert_allclose(Y[0], y0)
    assert_allclose(Y[1], sim.measure(), rtol=1e-12)


def _custom():
    with open("configs/custom_plant.yaml") as fh:
        return yaml.safe_load(fh)


def test_custom_plant_loader():
    spec = plant_from_dict(_custom())
    assert spec.name == "single-tank" and spec.n_x == 1 and len(spec.pool) == 21
    # steady state where q = c sqrt(h)
    x, _ = integrate(lambda s: spec.rhs(s, [0.25]), np.array([0.1]), 200.0)
    assert_allclose(x, [0.25], rtol=1e-5)


@pytest.mark.parametrize("expr", ["__import__('os')", "h.real", "[h]", "open('x')", "lambda: 1",
                                  "h if q else 1"])
def test_custom_plant_rejects_unsafe(expr):
    d = _custom()
    d["rhs"] = [expr]
    with pytest.raises(ConfigError):
        plant_from_dict(d)


def test_custom_plant_missing_key():
    d = _custom()
    del d["x0"]
    with pytest.raises(ConfigError):
        plant_from_dict(d)


def test_step_size_underflow():
    # finite-time blow-up of x' = x^2 from x = 1 at t = 1
    with pytest.raises(StepSizeUnderflow):
        integrate(lambda x: x * x, np.array([1.0]), 2.0)
