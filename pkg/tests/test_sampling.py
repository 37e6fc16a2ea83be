import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fredholm_games.errors import InvalidArgument
from fredholm_games.graphon import graphon_from_function
from fredholm_games.sampling import (SampledGraph, avella_bounds, block_average, cut_norm_step,
                                     graph_coercivity_constant, lemma_aux_check, operator_norm_diff, sample,
                                     step_graphon)
from fredholm_games.timekernel import indicator_kernel, make_grid

from oracles import brute_cut_norm


def test_cut_norm_known_values():
    assert cut_norm_step(np.array([[1.0, -1.0], [-1.0, 1.0]])).value == pytest.approx(0.25)
    assert cut_norm_step(np.ones((3, 3))).value == pytest.approx(1.0)
    assert cut_norm_step(np.zeros((4, 4))).value == 0.0


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 6), seed=st.integers(0, 2 ** 31 - 1))
def test_cut_norm_matches_double_enumeration(N, seed):
    w = np.random.default_rng(seed).uniform(-1, 1, (N, N))
    assert cut_norm_step(w).value == pytest.approx(brute_cut_norm(w), rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 10), seed=st.integers(0, 2 ** 31 - 1))
def test_cut_norm_invariances(N, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, (N, N))
    c = cut_norm_step(w).value
    p = rng.permutation(N)
    assert cut_norm_step(w[np.ix_(p, p)]).value == pytest.approx(c, rel=1e-12)
    assert cut_norm_step(-w).value == pytest.approx(c, rel=1e-12)
    # refining the partition does not change the step kernel
    assert cut_norm_step(np.kron(w, np.ones((2, 2)))).value == pytest.approx(c, rel=1e-12) if N <= 5 else True
    op = operator_norm_diff(w, 0.0)
    assert c <= op * (1 + 1e-12) <= np.sqrt(8 * c) * (1 + 1e-12) + 1e-15


def test_large_cut_norm_falls_back_to_operator_norm():
    w = np.random.default_rng(0).uniform(size=(30, 30))
    cn = cut_norm_step(w, max_exact=22)
    assert not cn.exact and cn.value == pytest.approx(operator_norm_diff(w, 0.0))


def test_operator_norm_on_common_refinement():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    # same step kernel at two resolutions
    assert operator_norm_diff(a, np.kron(a, np.ones((3, 3)))) == pytest.approx(0.0, abs=1e-14)
    assert operator_norm_diff(np.ones((3, 3)), 0.0) == pytest.approx(1.0)


def test_block_average_and_step_round_trip():
    w = np.array([[0.1, 0.4], [0.4, 0.9]])
    np.testing.assert_allclose(block_average(step_graphon(w, 6).values, 2), w)
    with pytest.raises(InvalidArgument):
        step_graphon(np.array([[0.0, 2.0], [2.0, 0.0]]))
    assert isinstance(step_graphon(np.array([[0.0, 2.0], [2.0, 0.0]]), allow_non_graphon=True), np.ndarray)


def test_s1_reads_the_block_of_each_player():
    # a step graphon sampled at i/N with N equal to its resolution gives back the matrix
    w = np.array([[0.2, 0.7, 0.1], [0.7, 0.5, 0.3], [0.1, 0.3, 0.9]])
    sg = sample(step_graphon(w, 12), 3, "S1")
    np.testing.assert_allclose(sg.matrix, w)
    np.testing.assert_allclose(sg.latents, [1 / 3, 2 / 3, 1.0])


@pytest.mark.parametrize("kind", ["S1", "S2", "S3", "S4"])
def test_sampling_shapes_and_determinism(kind):
    W = graphon_from_function(lambda u, v: 0.5 * (1 + u * v), 64)
    a = sample(W, 10, kind, 0.5, seed=3)
    b = sample(W, 10, kind, 0.5, seed=3)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert np.allclose(a.matrix, a.matrix.T)
    if kind in ("S3", "S4"):
        assert set(np.unique(a.matrix)) <= {0.0, 1.0} and np.all(np.diag(a.matrix) == 0)
        np.testing.assert_allclose(a.game_weights(), a.matrix / 0.5)
    back = SampledGraph.from_dict(a.to_dict())
    np.testing.assert_array_equal(back.matrix, a.matrix)


def test_sparse_sampling_edge_density():
    W = graphon_from_function(lambda u, v: 0.5 + 0 * u, 8)
    sg = sample(W, 400, "S3", 0.2, seed=1)
    density = sg.matrix.sum() / (400 * 399)
    assert density == pytest.approx(0.1, rel=0.05)


def test_sample_input_checks():
    W = graphon_from_function(lambda u, v: u * v, 8)
    with pytest.raises(InvalidArgument):
        sample(W, 5, "S9")
    with pytest.raises(InvalidArgument):
        sample(W, 1, "S1")
    with pytest.raises(InvalidArgument):
        sample(W, 5, "S3", 0.0)


def test_avella_bound_values():
    # frozen from the closed forms: deterministic latents use d = 1/N
    rho, rho_p = avella_bounds(100, 0.5, 1.0, 0.05, 0.5, "S1")
    d = 0.01
    assert rho == pytest.approx(2 * np.sqrt((0.25 - 1) * d * d + d), rel=1e-14)
    assert rho_p == pytest.approx(np.sqrt(8 * np.log(4000) / 100) + rho, rel=1e-14)
    rho2, _ = avella_bounds(50, 0.5, 1.0, 0.05, 1.0, "S2")
    d2 = 1 / 50 + np.sqrt(8 * np.log(1000) / 51)
    assert rho2 == pytest.approx(2 * np.sqrt(-0.75 * d2 * d2 + d2), rel=1e-14)
    with pytest.raises(InvalidArgument):
        avella_bounds(10, 1.0, 1.0, 0.05, 1.0, "S2")  # delta below N exp(-N/5)


def test_graph_coercivity_two_routes():
    g = make_grid(1.0, 16)
    A, B = indicator_kernel(g, 0.5), indicator_kernel(g, 1.0)
    rng = np.random.default_rng(2)
    for N in (2, 5, 9):
        w = np.triu(rng.uniform(size=(N, N)), 1)
        w = w + w.T
        dense = graph_coercivity_constant(A, B, 1.0, w, method="dense")
        modes = graph_coercivity_constant(A, B, 1.0, w, method="modes")
        assert modes == pytest.approx(dense, abs=1e-12)
    assert lemma_aux_check(A, B, 1.0, w, 1.0, modes)
    assert not lemma_aux_check(A, B, 1.0, w, 1.0, 10.0)
