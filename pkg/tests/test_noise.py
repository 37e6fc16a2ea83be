import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fredholm_games.errors import InvalidArgument, UnsupportedNoise
from fredholm_games.noise import (NoiseModel, conditional_expectation, idiosyncratic_model, noise_from_config,
                                  noise_to_config, simulate, simulate_drivers)
from fredholm_games.timekernel import make_grid


def test_counter_based_paths_do_not_depend_on_batching():
    g = make_grid(1.0, 16)
    m = idiosyncratic_model(g, 3, 0.5, 1.0, 0.3)
    full = simulate(m, 10, seed=42)
    tail = simulate(m, 4, seed=42, first_path=6)
    np.testing.assert_array_equal(full.drivers[6:], tail.drivers)
    other = simulate(m, 10, seed=43)
    assert not np.allclose(full.drivers, other.drivers)


def test_brownian_increment_statistics():
    g = make_grid(2.0, 8)
    m = idiosyncratic_model(g, 1, 0.0, 1.0)
    d = simulate_drivers(m, np.arange(20000), 0)[:, 0]
    assert np.all(d[:, 0] == 0)
    # Var(M_T-dt) = (n_t - 1) dt
    assert d[:, -1].var() == pytest.approx(g.points[-1], rel=0.05)


def test_constant_random_driver_is_frozen():
    g = make_grid(1.0, 6)
    m = NoiseModel(g, np.zeros((1, 6)), np.ones((1, 1, 6)), ("constant_random",))
    d = simulate(m, 5, 1).drivers
    assert np.all(d == d[:, :, :1])


def test_conditional_expectation_is_martingale_projection():
    g = make_grid(1.0, 10)
    m = idiosyncratic_model(g, 2, drift=np.tile(np.arange(10.0), (2, 1)), sigma=0.7, common_sigma=0.2)
    ens = simulate(m, 3, 5)
    path = ens[1]
    E = conditional_expectation(path, m, 4)
    np.testing.assert_array_equal(E[:, :5], path.values[:, :5])
    # after t the driver is frozen at its time-t value
    expected = m.drift[:, 5:] + (m.loadings[:, :, 5:] * path.drivers[None, :, 4:5]).sum(axis=1)
    np.testing.assert_allclose(E[:, 5:], expected)


def test_conditional_expectation_by_monte_carlo():
    # E_t[M_s] = M_t checked by branching many continuations from one prefix
    g = make_grid(1.0, 8)
    m = idiosyncratic_model(g, 1, 1.0, 1.0)
    prefix = simulate(m, 1, 3).drivers[0]
    rng = np.random.default_rng(0)
    t = 3
    cont = prefix[:, t] + np.cumsum(rng.standard_normal((40000, 8 - t - 1)) * np.sqrt(g.dt), axis=1)
    E = conditional_expectation(simulate(m, 1, 3)[0], m, t)
    assert cont.mean(axis=0)[-1] + 1.0 == pytest.approx(E[0, -1], abs=4 * np.sqrt(g.T) / 200)


def test_transform_shares_drivers():
    g = make_grid(1.0, 5)
    m = idiosyncratic_model(g, 3, 1.0, 1.0, 0.5)
    A = np.array([[1.0, -1.0, 0.0]])
    ens = simulate(m, 4, 0)
    np.testing.assert_allclose(m.transform(A).realize(ens.drivers), np.einsum("ji,pik->pjk", A, ens.values))


@settings(max_examples=25, deadline=None)
@given(dim=st.integers(1, 4), nd=st.integers(0, 3), nt=st.integers(2, 7), seed=st.integers(0, 2 ** 31 - 1),
       use_inc=st.booleans())
def test_config_round_trip(dim, nd, nt, seed, use_inc):
    rng = np.random.default_rng(seed)
    g = make_grid(1.0, nt)
    inc = rng.standard_normal((nt - 1, nd, nd)) if use_inc and nd else None
    kinds = tuple(rng.choice(["brownian", "constant_random"]) for _ in range(nd)) if inc is None else ("brownian",) * nd
    m = NoiseModel(g, rng.standard_normal((dim, nt)), rng.standard_normal((dim, nd, nt)), kinds,
                   tuple(bool(x) for x in rng.integers(0, 2, nd)), inc)
    back = noise_from_config(g, noise_to_config(m), dim)
    np.testing.assert_array_equal(back.drift, m.drift)
    np.testing.assert_array_equal(back.loadings, m.loadings)
    assert back.driver_kinds == m.driver_kinds and back.common_mask == m.common_mask
    if inc is not None:
        np.testing.assert_array_equal(back.increments, m.increments)


def test_config_errors():
    g = make_grid(1.0, 4)
    with pytest.raises(InvalidArgument):
        noise_from_config(g, {"sigma": 1.0}, 2)
    with pytest.raises(UnsupportedNoise):
        noise_from_config(g, {"idiosyncratic": 1.0, "kind": "poisson"}, 2)
    with pytest.raises(InvalidArgument):
        noise_from_config(g, {"idiosyncratic": 1.0, "drivers": []}, 2)
    with pytest.raises(InvalidArgument):
        NoiseModel(g, np.zeros((2, 3)), np.zeros((2, 0, 4)))
