import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fredholm_games.errors import CoercivityError, InvalidArgument
from fredholm_games.graphon import (GraphonGameSpec, GraphonGrid, graphon_foc_residual, graphon_from_function,
                                    graphon_noise, mode_noise, solve_graphon, solve_mode, solve_modes_batched,
                                    spectral_decompose, step_graphon)
from fredholm_games.noise import NoiseEnsemble, simulate
from fredholm_games.timekernel import indicator_kernel, make_grid

from oracles import midpoint_rank_one_eigenvalue


def test_graphon_grid_validation():
    with pytest.raises(InvalidArgument):
        GraphonGrid(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(InvalidArgument):
        GraphonGrid(np.array([[0.0, 2.0], [2.0, 0.0]]))


def test_rank_one_eigenvalue_frozen_value():
    # (1/n) sum ((k + 1/2)/n)^2 = 1/3 - 1/(12 n^2)
    for n in (8, 64, 256):
        th = spectral_decompose(graphon_from_function(lambda u, v: u * v, n), 1e-12).theta
        assert th.size == 1
        assert th[0] == pytest.approx(1 / 3 - 1 / (12 * n * n), rel=1e-12)
        assert th[0] == pytest.approx(midpoint_rank_one_eigenvalue(n), rel=1e-12)


def test_min_graphon_spectrum_against_continuum():
    # W = min(u, v) has eigenvalues 1 / ((k - 1/2)^2 pi^2)
    th = spectral_decompose(graphon_from_function(np.minimum, 512), 0.0).all_theta[:3]
    exact = 1.0 / (((np.arange(1, 4) - 0.5) * np.pi) ** 2)
    np.testing.assert_allclose(th, exact, rtol=1e-3)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2 ** 31 - 1), tol=st.sampled_from([0.0, 1e-3, 0.1]))
def test_spectral_properties(n, seed, tol):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, n))
    W = GraphonGrid(0.5 * (x + x.T))
    modes = spectral_decompose(W, tol)
    gram = modes.phi @ modes.phi.T / n
    assert np.abs(gram - np.eye(modes.rank)).max() <= 1e-10
    assert np.all(np.abs(modes.all_theta) <= np.sqrt(np.mean(W.values ** 2)) * (1 + 1e-12))
    assert modes.truncation_energy <= tol * modes.total_energy + 1e-12
    if tol == 0.0:
        rec = modes.phi.T @ np.diag(modes.theta) @ modes.phi
        np.testing.assert_allclose(rec, W.values, atol=1e-10)


def _spec(n_u=16, nt=16, W=None):
    g = make_grid(1.0, nt)
    W = W if W is not None else graphon_from_function(lambda u, v: 0.5 * (1 + u * v), n_u)
    noise = graphon_noise(g, n_u, drift=lambda u, t: 1 + u + 0 * t, sigma=0.5, common_sigma=0.3, blocks=4)
    return GraphonGameSpec(indicator_kernel(g, 0.5), indicator_kernel(g, 1.0), 1.0, W, noise)


def test_batched_modes_match_single_mode_solver():
    spec = _spec()
    ens = simulate(spec.noise, 30, 3)
    modes = spectral_decompose(spec.graphon, 0.0)
    mmodel = mode_noise(spec.noise, modes)
    alpha, res = solve_modes_batched(spec.A_tilde, spec.B_tilde, spec.lam, modes.theta, mmodel, ens.drivers)
    for i in (0, 3, modes.rank - 1):
        sub = mmodel.transform(np.eye(modes.rank)[i:i + 1])
        sol = solve_mode(spec.mode_kernel(modes.theta[i]), spec.lam,
                         NoiseEnsemble(sub, 3, ens.path_ids, ens.drivers), theta=float(modes.theta[i]))
        np.testing.assert_allclose(alpha[:, i], sol.alpha, atol=1e-12)
    assert res.max() <= 1e-10


def test_full_residual_and_truncation():
    spec = _spec()
    ens = simulate(spec.noise, 20, 4)
    full = solve_graphon(spec, ens, energy_tol=0.0, full_residual=True)
    assert full.foc_residual.max() <= 1e-9
    trunc = solve_graphon(spec, ens, energy_tol=1e-6, full_residual=True)
    assert trunc.modes.rank < full.modes.rank
    # dropped modes are solved with theta = 0 on the complement: still an exact solution of a nearby game
    assert np.abs(trunc.field - full.field).max() <= 1e-2
    assert graphon_foc_residual(spec, full, ens).max() <= 1e-9


def test_step_graphon_with_block_noise_gives_block_constant_field():
    g = make_grid(1.0, 16)
    w = np.array([[0.0, 0.6], [0.6, 0.3]])
    noise = graphon_noise(g, 16, drift=1.0, sigma=0.5, common_sigma=0.3, blocks=2)
    spec = GraphonGameSpec(indicator_kernel(g, 0.5), indicator_kernel(g, 1.0), 1.0, step_graphon(w, 16), noise)
    res = solve_graphon(spec, simulate(noise, 5, 0), energy_tol=0.0)
    f = res.field.reshape(5, 2, 8, -1)
    np.testing.assert_allclose(f, np.broadcast_to(f[:, :, :1], f.shape), atol=1e-10)
    assert not np.allclose(f[:, 0], f[:, 1])


def test_coercivity_failure_raises():
    g = make_grid(1.0, 16)
    n_u = 8
    W = graphon_from_function(lambda u, v: 1.0 + 0 * u, n_u)
    spec = GraphonGameSpec(indicator_kernel(g, 0.0), indicator_kernel(g, -20.0), 0.1, W,
                           graphon_noise(g, n_u, 1.0, 1.0))
    with pytest.raises(CoercivityError):
        solve_graphon(spec, simulate(spec.noise, 2, 0))
