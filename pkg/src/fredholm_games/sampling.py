"""Graphs sampled from graphons, step kernels, cut and operator norms.

Sampling procedures for ``N`` players:

* ``S1``: deterministic latents ``u_i = i / N``, weights ``w_ij = W(u_i, u_j)``;
* ``S2``: latents are the order statistics of ``N`` independent uniforms;
* ``S3`` / ``S4``: latents as in S1 / S2, and an undirected edge ``{i, j}``
  (``i > j``) is present independently with probability ``kappa * w_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from .errors import InvalidArgument
from .graphon import GraphonGrid
from .timekernel import KernelGrid, kernel_to_operator, min_symmetric_eigenvalue

KINDS = ("S1", "S2", "S3", "S4")


@dataclass(frozen=True, eq=False)
class SampledGraph:
    N: int
    kind: str
    matrix: np.ndarray
    latents: np.ndarray
    kappa: float = 1.0
    seed: Optional[int] = None

    @property
    def is_simple(self) -> bool:
        return self.kind in ("S3", "S4")

    def game_weights(self) -> np.ndarray:
        """Weights entering the game: ``w`` with zero diagonal (S1/S2) or ``s / kappa`` (S3/S4)."""
        w = np.array(self.matrix, dtype=float)
        np.fill_diagonal(w, 0.0)
        return w / self.kappa if self.is_simple else w

    def step_kernel(self) -> np.ndarray:
        """Cell values of the step kernel used in norm comparisons (``s / kappa`` for S3/S4)."""
        return self.matrix / self.kappa if self.is_simple else np.array(self.matrix)

    def to_dict(self) -> dict:
        return {"N": self.N, "kind": self.kind, "kappa": self.kappa, "seed": self.seed,
                "latents": self.latents.tolist(), "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SampledGraph":
        return cls(int(d["N"]), d["kind"], np.asarray(d["matrix"], dtype=float),
                   np.asarray(d["latents"], dtype=float), float(d.get("kappa", 1.0)), d.get("seed"))


def step_graphon(w: np.ndarray, n_u: Optional[int] = None, allow_non_graphon: bool = False):
    """Cell values of the step kernel of ``w`` on a label grid of size ``n_u``
    (a multiple of N, default N).

    Returns a :class:`GraphonGrid` when all entries lie in [0, 1]; otherwise,
    with ``allow_non_graphon``, a plain array (a step kernel that is not a
    graphon, e.g. ``s / kappa``).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidArgument("w must be a square matrix")
    if not np.allclose(w, w.T, rtol=0, atol=1e-12):
        raise InvalidArgument("w must be symmetric")
    N = w.shape[0]
    n_u = N if n_u is None else int(n_u)
    if n_u % N:
        raise InvalidArgument(f"n_u={n_u} must be a multiple of N={N}")
    r = n_u // N
    v = np.kron(w, np.ones((r, r)))
    if np.all(w >= 0) and np.all(w <= 1):
        return GraphonGrid(v)
    if not allow_non_graphon:
        raise InvalidArgument("entries outside [0, 1]: pass allow_non_graphon=True for a step kernel")
    return v


def block_average(values: np.ndarray, N: int) -> np.ndarray:
    """Average a label-grid kernel over the N x N blocks of the uniform partition."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n % N:
        raise InvalidArgument(f"grid size {n} is not a multiple of N={N}")
    r = n // N
    return v.reshape(N, r, N, r).mean(axis=(1, 3))


def _graphon_callable(W) -> Callable:
    if callable(W):
        return W
    vals = W.values if isinstance(W, GraphonGrid) else np.asarray(W, dtype=float)
    n = vals.shape[0]

    # cells are right-closed, ((k - 1)/n, k/n], so the latent i/N of S1/S3
    # falls in the cell block of player i
    def f(u, v):
        iu = np.clip(np.ceil(np.asarray(u) * n - 1e-9).astype(int) - 1, 0, n - 1)
        iv = np.clip(np.ceil(np.asarray(v) * n - 1e-9).astype(int) - 1, 0, n - 1)
        return vals[iu, iv]

    return f


def sample(W: Union[GraphonGrid, Callable], N: int, kind: str = "S1", kappa: float = 1.0,
           seed: Optional[int] = None) -> SampledGraph:
    """Sample an N-player graph from ``W`` (a grid graphon or a function ``W(u, v)``)."""
    if kind not in KINDS:
        raise InvalidArgument(f"kind must be one of {KINDS}, got {kind!r}")
    if int(N) != N or N < 2:
        raise InvalidArgument(f"N must be an integer >= 2, got {N}")
    if not (0 < kappa <= 1):
        raise InvalidArgument(f"kappa must lie in (0, 1], got {kappa}")
    N = int(N)
    rng = np.random.default_rng(seed)
    if kind in ("S1", "S3"):
        u = np.arange(1, N + 1) / N
    else:
        u = np.sort(rng.uniform(size=N))
    f = _graphon_callable(W)
    w = np.asarray(f(u[:, None], u[None, :]), dtype=float) * np.ones((N, N))
    w = 0.5 * (w + w.T)
    if np.any(w < -1e-12) or np.any(w > 1 + 1e-12):
        raise InvalidArgument("graphon values must lie in [0, 1]")
    w = np.clip(w, 0.0, 1.0)
    if kind in ("S3", "S4"):
        coin = rng.uniform(size=(N, N))
        s = np.tril(coin < kappa * w, -1).astype(float)
        w = s + s.T
    return SampledGraph(N, kind, w, u, float(kappa), seed)


def _cells(x) -> np.ndarray:
    if isinstance(x, GraphonGrid):
        return x.values
    return np.asarray(x, dtype=float)


def operator_norm_diff(W, V) -> float:
    """``||W - V||_op`` of two step kernels (cell-value arrays or :class:`GraphonGrid`).

    Both are refined to a common grid (the least common multiple of the two
    sizes), where the norm is the largest singular value of ``(W - V) / n_u``.
    A scalar ``V`` (e.g. 0) is treated as a constant kernel.
    """
    a = _cells(W)
    b = _cells(V)
    if b.ndim == 0:
        b = np.full_like(a, float(b))
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise InvalidArgument("step kernels must be square arrays")
    n1, n2 = a.shape[0], b.shape[0]
    n = n1 * n2 // gcd(n1, n2)
    if n > 20000:
        raise InvalidArgument(f"common refinement of sizes {n1} and {n2} too large ({n})")
    a = np.kron(a, np.ones((n // n1, n // n1)))
    b = np.kron(b, np.ones((n // n2, n // n2)))
    d = (a - b) / n
    if np.allclose(d, d.T, rtol=0, atol=1e-14):
        ev = scipy.linalg.eigvalsh(0.5 * (d + d.T))
        return float(np.abs(ev).max())
    return float(scipy.linalg.svdvals(d)[0])


@dataclass(frozen=True)
class CutNorm:
    value: float
    exact: bool


def cut_norm_step(w: np.ndarray, max_exact: int = 22) -> CutNorm:
    """Cut norm ``sup_{S1,S2} |int_{S1 x S2} W|`` of the step kernel of ``w``.

    For ``N <= max_exact`` the value is exact: the bilinear form ``x^T w y`` over
    ``[0,1]^N x [0,1]^N`` is maximal at vertices, so all ``x in {0,1}^N`` are
    enumerated and ``y`` is chosen by sign. Larger inputs return the operator
    norm, an upper bound, with ``exact=False``.
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    if N == 0:
        return CutNorm(0.0, True)
    if N > max_exact:
        return CutNorm(operator_norm_diff(w, 0.0), False)
    best = 0.0
    bits = np.arange(N)
    chunk = 1 << min(N, 16)
    for start in range(0, 1 << N, chunk):
        codes = np.arange(start, min(start + chunk, 1 << N))
        X = ((codes[:, None] >> bits) & 1).astype(float)
        r = X @ w
        pos = np.where(r > 0, r, 0.0).sum(axis=1)
        neg = np.where(r < 0, -r, 0.0).sum(axis=1)
        best = max(best, pos.max(), neg.max())
    return CutNorm(float(best / N ** 2), True)


def avella_bounds(N: int, L0: float, K0: float, delta: float = 0.05, kappa: float = 1.0,
                  latent_kind: str = "deterministic") -> tuple:
    """``(rho, rho_prime)`` for the operator-norm distance of sampled step graphons.

    ``latent_kind`` is ``deterministic`` (S1/S3) or ``stochastic`` (S2/S4).
    """
    if N < 1:
        raise InvalidArgument("N must be positive")
    if not (0 < kappa <= 1):
        raise InvalidArgument("kappa must lie in (0, 1]")
    if not (0 < delta < 1):
        raise InvalidArgument("delta must lie in (0, 1)")
    if latent_kind in ("deterministic", "S1", "S3"):
        d = 1.0 / N
    elif latent_kind in ("stochastic", "S2", "S4"):
        lo, hi = N * np.exp(-N / 5.0), np.exp(-1.0)
        if not (lo < delta < hi):
            raise InvalidArgument(f"delta={delta} outside ({lo:.3g}, {hi:.3g}) for stochastic latents")
        d = 1.0 / N + np.sqrt(8.0 * np.log(N / delta) / (N + 1))
    else:
        raise InvalidArgument(f"unknown latent kind {latent_kind!r}")
    inner = (L0 ** 2 - K0 ** 2) * d ** 2 + K0 * d
    rho = 2.0 * np.sqrt(max(inner, 0.0))
    rho_p = np.sqrt(4.0 / kappa * np.log(2.0 * N / delta) / N) + rho
    return float(rho), float(rho_p)


def graph_coercivity_constant(A_tilde: KernelGrid, B_tilde: KernelGrid, lam: float, w: np.ndarray,
                              method: str = "modes") -> float:
    """Largest ``c`` with ``<f, lam f + A~ f + (1/N) w . B~ f> >= c <f, f>`` on the grid.

    ``modes`` diagonalizes the symmetric ``w``: the form splits into scalar
    forms with kernels ``A~ + theta B~``, ``theta`` ranging over the
    eigenvalues of ``w / N``, and the smallest eigenvalue is concave in
    ``theta``, so the two extreme ``theta`` suffice. ``dense`` assembles the
    full (N n_t)-dimensional form.
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    if method == "dense":
        from .finite_game import build_from_graph
        from .noise import NoiseModel

        model = NoiseModel(A_tilde.grid, np.zeros((N, A_tilde.n_t)), np.zeros((N, 0)))
        spec = build_from_graph(A_tilde, B_tilde, lam, w, model, check_weights=False)
        # the finite-game form is twice the graph form
        return 0.5 * spec.coercivity(-np.inf).c0_estimate
    if method != "modes":
        raise InvalidArgument(f"unknown method {method!r}")
    if not np.allclose(w, w.T, rtol=0, atol=1e-14):
        raise InvalidArgument("w must be symmetric")
    theta = scipy.linalg.eigvalsh(0.5 * (w + w.T)) / N
    MA = kernel_to_operator(A_tilde).matrix
    MB = kernel_to_operator(B_tilde).matrix
    SA = 0.5 * (MA + MA.T)
    SB = 0.5 * (MB + MB.T)
    eye = np.eye(SA.shape[0])
    return float(min(min_symmetric_eigenvalue(lam * eye + SA + th * SB) for th in (theta[0], theta[-1])))


def lemma_aux_check(A_tilde: KernelGrid, B_tilde: KernelGrid, lam: float, s: np.ndarray, kappa: float,
                    c0: float, tol: float = 0.0) -> bool:
    """Coercivity of the sampled game with weights ``s / kappa`` at level ``c0 / 2``."""
    s = np.array(s, dtype=float)
    np.fill_diagonal(s, 0.0)
    return bool(graph_coercivity_constant(A_tilde, B_tilde, lam, s / kappa) >= c0 / 2.0 - tol)
