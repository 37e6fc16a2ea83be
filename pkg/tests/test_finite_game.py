import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fredholm_games.errors import CoercivityError, InvalidArgument
from fredholm_games.finite_game import (FiniteGameSpec, build_from_graph, deterministic_oracle, nash_gap, precompute,
                                        solve_equilibrium)
from fredholm_games.noise import NoiseEnsemble, NoiseModel, idiosyncratic_model, simulate
from fredholm_games.timekernel import KernelGrid, indicator_kernel, make_grid, zero_kernel

from oracles import dense_deterministic_solution, random_volterra


def _spec(seed, N=3, nt=12, stochastic=True, scale=0.3):
    rng = np.random.default_rng(seed)
    g = make_grid(1.0, nt)
    B = random_volterra(rng, nt, N, scale)
    Bb = random_volterra(rng, nt, N, scale)
    for i in range(N):
        Bb[:, :, i, i] = B[:, :, i, i]
    if stochastic:
        model = idiosyncratic_model(g, N, drift=rng.standard_normal((N, 1)), sigma=0.8, common_sigma=0.4)
    else:
        model = NoiseModel(g, rng.standard_normal((N, nt)), np.zeros((N, 0, nt)))
    return FiniteGameSpec(KernelGrid(g, B, True), KernelGrid(g, Bb, True), rng.uniform(1.0, 2.0, N), model)


def test_empty_kernels_give_b_over_two_lambda():
    g = make_grid(1.0, 6)
    m = idiosyncratic_model(g, 2, 1.0, 1.0)
    spec = FiniteGameSpec(zero_kernel(g, 2), zero_kernel(g, 2), [1.0, 2.0], m)
    ens = simulate(m, 5, 0)
    res = solve_equilibrium(spec, ens)
    np.testing.assert_allclose(res.alpha, ens.values / (2 * np.array([1.0, 2.0]))[None, :, None], atol=1e-14)
    assert spec.coercivity().c0_estimate == pytest.approx(2.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), N=st.integers(1, 4), nt=st.integers(2, 16))
def test_deterministic_matches_dense_oracle(seed, N, nt):
    spec = _spec(seed, N, nt, stochastic=False, scale=0.2)
    if not spec.coercivity().passed:
        return
    res = solve_equilibrium(spec, simulate(spec.noise, 1, 0))
    ref = dense_deterministic_solution(spec.B.values, spec.Bbar.values, spec.Lambda, spec.noise.drift, spec.grid.dt)
    np.testing.assert_allclose(res.alpha[0], ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())
    np.testing.assert_allclose(deterministic_oracle(spec), ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_fast_gamma_matches_per_time_conditioning():
    spec = _spec(3, N=3, nt=10)
    ens = simulate(spec.noise, 20, 1)
    solver = precompute(spec)
    np.testing.assert_allclose(solver.gamma(ens), solver.gamma_loop(ens), atol=1e-12)


def test_two_inverse_routes_agree():
    spec = _spec(4)
    ens = simulate(spec.noise, 7, 2)
    res = solve_equilibrium(spec, ens)
    np.testing.assert_allclose(res.solver.apply_inverse_forward(res.gamma), res.alpha, atol=1e-11)


def test_solution_is_adapted():
    # changing the noise after time t leaves the controls up to t unchanged
    spec = _spec(5, N=2, nt=10)
    ens = simulate(spec.noise, 2, 0)
    solver = precompute(spec)
    d = ens.drivers.copy()
    d[1, :, 6:] = d[0, :, 6:] + 3.0
    d[1, :, :6] = d[0, :, :6]
    e2 = NoiseEnsemble(spec.noise, 0, ens.path_ids, d)
    alpha = solver.apply_inverse(solver.gamma(e2))
    np.testing.assert_allclose(alpha[0, :, :6], alpha[1, :, :6], atol=1e-12)
    assert not np.allclose(alpha[0, :, 6:], alpha[1, :, 6:])


def test_foc_residual_small_and_nash_gap_nonpositive():
    spec = _spec(6, N=3, nt=16)
    ens = simulate(spec.noise, 400, 9)
    res = solve_equilibrium(spec, ens)
    assert res.max_foc_residual <= 1e-10
    gap = nash_gap(spec, res, ens, n_probe=5, seed=1)
    assert gap.max_z <= 4.0


def test_graph_form_and_weight_checks():
    g = make_grid(1.0, 8)
    A, B = indicator_kernel(g, 0.5), indicator_kernel(g, 1.0)
    m = idiosyncratic_model(g, 3, 1.0, 1.0)
    w = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.2], [0.5, 0.2, 0.0]])
    spec = build_from_graph(A, B, 1.0, w, m)
    assert spec.N == 3
    # off-diagonal block (i, j) of B is w_ij B~ / N
    np.testing.assert_allclose(spec.B.values[:, :, 0, 1], B.values[:, :, 0, 0] * w[0, 1] / 3)
    bad = w.copy()
    bad[0, 0] = 1.0
    with pytest.raises(InvalidArgument):
        build_from_graph(A, B, 1.0, bad, m)
    with pytest.raises(InvalidArgument):
        build_from_graph(A, B, 1.0, 2.0 * w, m)


def test_spec_validation():
    g = make_grid(1.0, 5)
    m = idiosyncratic_model(g, 2)
    K = indicator_kernel(g, 1.0, 2)
    with pytest.raises(InvalidArgument):
        FiniteGameSpec(K, K, [1.0, -1.0], m)
    with pytest.raises(InvalidArgument):
        FiniteGameSpec(K, K, [1.0], m)
    other = np.array(K.values)
    other[:, :, 0, 0] *= 2
    with pytest.raises(InvalidArgument):
        FiniteGameSpec(K, KernelGrid(g, other, True), [1.0, 1.0], m)


def test_non_coercive_game_is_rejected():
    g = make_grid(1.0, 16)
    m = idiosyncratic_model(g, 1, 1.0, 1.0)
    K = indicator_kernel(g, -8.0)
    spec = FiniteGameSpec(K, K, [0.1], m)
    assert not spec.coercivity().passed
    with pytest.raises(CoercivityError):
        solve_equilibrium(spec, simulate(m, 2, 0))
