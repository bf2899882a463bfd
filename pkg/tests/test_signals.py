import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from alsysid.errors import DegenerateSignal, DimensionMismatch, InsufficientHistory
from alsysid.signals import (Dataset, InputPool, Scaler, build_regressor, candidate_regressors,
                             fit_scaler, regressor_length, scale, unscale)


def test_fit_scaler_two_point_symmetry():
    s = fit_scaler([[0.0], [2.0]])
    assert_allclose(s.mean, [1.0])
    # population convention: std of {0, 2} is 1
    assert_allclose(s.std, [1.0])
    assert_allclose(scale(s, [2.0]) - scale(s, [0.0]), 2.0 / s.std)


def test_fit_scaler_constant_channel_raises():
    with pytest.raises(DegenerateSignal):
        fit_scaler(np.ones((10, 1)))
    with pytest.raises(DegenerateSignal):
        fit_scaler(np.c_[np.arange(5.0), np.zeros(5)])
    with pytest.raises(DegenerateSignal):
        fit_scaler([[1.0]])


def test_fit_scaler_statistics():
    x = np.random.default_rng(3).normal(5.0, 2.0, size=(10_000, 1))
    s = fit_scaler(x)
    assert abs(s.mean[0] - 5.0) < 0.1
    assert abs(s.std[0] - 2.0) < 0.1
    # oracle: direct statistics on the same draw
    assert_allclose(s.mean, x.mean(axis=0), rtol=0, atol=1e-12)
    assert_allclose(s.std, np.sqrt(np.mean((x - x.mean()) ** 2)), rtol=1e-12)


def test_scale_examples():
    ident = Scaler(np.zeros(2), np.ones(2))
    v = np.array([0.3, -4.0])
    assert_array_equal(scale(ident, v), v)
    s = Scaler(np.array([1.0, -2.0]), np.array([2.0, 0.5]))
    assert_array_equal(scale(s, s.mean), np.zeros(2))
    assert_allclose(scale(Scaler(np.array([1.0]), np.array([2.0])), [3.0]), [1.0])
    with pytest.raises(DimensionMismatch):
        scale(s, [1.0, 2.0, 3.0])


def test_scaler_rejects_nonpositive_std():
    with pytest.raises(ValueError):
        Scaler(np.zeros(1), np.zeros(1))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4).flatmap(
    lambda v: st.tuples(st.just(v),
                        st.lists(st.floats(-1e3, 1e3), min_size=len(v), max_size=len(v)),
                        st.lists(st.floats(1e-9, 1e3), min_size=len(v), max_size=len(v)))))
def test_scale_unscale_roundtrip(args):
    v, mean, std = (np.array(a) for a in args)
    s = Scaler(mean, std)
    back = unscale(s, scale(s, v))
    assert np.all(np.abs(back - v) <= 1e-12 * np.maximum(np.abs(v), np.abs(mean)) + 1e-300
                  + 1e-12 * np.abs(v - mean))


def test_input_pool():
    p = InputPool(np.array([[0.0], [0.5], [1.0]]))
    assert p.M == 3 and p.n_u == 1
    with pytest.raises(ValueError):
        InputPool(np.array([[0.0], [0.0]]))
    with pytest.raises(ValueError):
        InputPool(np.zeros((0, 1)))
    s = Scaler(np.array([5.0]), np.array([2.0]))
    q = InputPool.from_physical(np.array([1.0, 5.0, 9.0]), s)
    assert_allclose(q.candidates.ravel(), [-2.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        q.candidates[0, 0] = 1.0


def _filled(na, nb, n, nu=1, ny=1, seed=0):
    rng = np.random.default_rng(seed)
    ds = Dataset(nu, ny, na, nb)
    U, Y = rng.normal(size=(n, nu)), rng.normal(size=(n, ny))
    for u, y in zip(U, Y):
        ds.append_sample(u, y)
    return ds, U, Y


def test_build_regressor_direct_slotting():
    ds = Dataset(1, 1, 1, 1)
    ds.push_output([0.3])
    assert_allclose(build_regressor(ds, 0, [0.7]), [0.3, 0.7])


def test_build_regressor_inputs_only():
    ds, U, _ = _filled(0, 2, 4)
    ds.push_output([0.0])
    assert_allclose(build_regressor(ds, 4, [9.0]), [9.0, U[3, 0]])


def test_build_regressor_hand_unrolled():
    ds, U, Y = _filled(3, 3, 10)
    ds.push_output([1.5])
    y = np.r_[Y[:, 0], 1.5]
    k = 10
    expected = [y[k], y[k - 1], y[k - 2], -0.25, U[k - 1, 0], U[k - 2, 0]]
    x = build_regressor(ds, k, [-0.25])
    assert x.shape == (6,)
    assert_array_equal(x, expected)


def test_build_regressor_insufficient_history():
    ds = Dataset(1, 1, 3, 3)
    ds.append_sample([0.1], [0.2])
    ds.push_output([0.3])
    with pytest.raises(InsufficientHistory):
        build_regressor(ds, 1, [0.0])


def test_regressor_cache_coherence():
    ds, U, _ = _filled(3, 2, 30, seed=4)
    for k in range(ds.first_regressor, 30):
        assert_array_equal(build_regressor(ds, k, U[k]), ds.regressor_at(k))


def test_append_sample_grows_and_orders():
    ds = Dataset(1, 1, 2, 2)
    with pytest.raises(ValueError):
        ds.push_input([0.0])
    ds.push_output([1.0])
    with pytest.raises(ValueError):
        ds.push_output([1.0])
    ds.push_input([0.0])
    assert len(ds.inputs) == len(ds.outputs) == 1
    ds.push_output([2.0])
    assert len(ds.outputs) - len(ds.inputs) == 1


def test_training_pairs_alignment():
    ds, U, Y = _filled(2, 2, 12, seed=7)
    X, T = ds.training_pairs()
    j0 = ds.first_regressor
    assert len(X) == 12 - 1 - j0
    for i, (x, t) in enumerate(zip(X, T)):
        j = j0 + i
        assert_array_equal(x, [Y[j, 0], Y[j - 1, 0], U[j, 0], U[j - 1, 0]])
        assert_array_equal(t, Y[j + 1])


def test_candidate_regressors_matches_build():
    ds, _, _ = _filled(3, 3, 8)
    ds.push_output([0.5])
    C = np.linspace(-1, 1, 5)[:, None]
    X = candidate_regressors(ds, 8, C)
    for c, x in zip(C, X):
        assert_array_equal(x, build_regressor(ds, 8, c))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(1, 3), st.integers(1, 3))
def test_regressor_length_law(na, nb, nu, ny):
    if na == 0 and nb == 0:
        return
    ds, _, _ = _filled(na, nb, max(na, nb) + 3, nu, ny)
    assert ds.n_x == na * ny + nb * nu == regressor_length(na, nb, nu, ny)
    assert ds.regressors.shape[1] == ds.n_x
