"""Application families reduced to the finite-player game.

Every family is first written as a *Volterra game*: player ``i`` controls the
two-dimensional state

    Y^i_t = d^i_t + int_0^t G^i(t,s) alpha_s ds,   G^i = (G_1^{i.}, G_2^{i.}),

and maximizes ``E[int_0^T f^i(Y^i_t, alpha^i_t) dt + g^i(Y^i_T)]`` with

    f^i(y, a) = -p_i a^2 - y^T Q_i y + a q_i^T y,   g^i(y) = -y^T S_i y + y^T s_i.

:func:`volterra_reduce` turns this into a :class:`FiniteGameSpec`. The
reduction is exact for the discretized objective (left-rectangle running cost
plus terminal cost at ``T``). The quadratic form then carries a time-diagonal
part, so the reduced ``B`` and ``Bbar`` are causal kernels rather than
strictly Volterra ones.

The state needs ``G`` and ``d`` at ``T`` itself, one step past the last game
grid point, so these live on the extended grid ``t_0, ..., t_{n_t} = T``
(see :func:`extended_grid`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidArgument, UnsupportedNoise
from .finite_game import FiniteGameSpec, objective_values
from .noise import NoiseEnsemble, NoiseModel, simulate_drivers
from .timekernel import (KernelGrid, TimeGrid, adjoint, delay_measure_kernel, make_grid,
                         star_product, volterra_resolvent)


def extended_grid(grid: TimeGrid) -> TimeGrid:
    """Grid with one extra point so that its last point is ``T``."""
    return make_grid(grid.T + grid.dt, grid.n_t + 1)


def _per_player(x, N, shape, name):
    a = np.asarray(x, dtype=float)
    try:
        return np.array(np.broadcast_to(a, (N,) + shape))
    except ValueError:
        raise InvalidArgument(f"{name} of shape {a.shape} does not fit {(N,) + shape}")


@dataclass(frozen=True, eq=False)
class VolterraGameInput:
    """Coefficients of an N-player Volterra game.

    ``G1``, ``G2`` are N x N block kernels on the extended grid (block
    ``(i, j)`` holds ``G_1^{ij}``, ``G_2^{ij}``). ``d`` is a noise model of
    dimension 2N on the extended grid: coordinates ``0..N-1`` are ``P`` and
    ``N..2N-1`` are ``R``. The terminal random vector is
    ``s_i = s0[i] + s1[i] @ M_T`` with ``M`` the drivers of ``d``.
    ``origin`` optionally holds the model the game was built from; it
    simulates the original dynamics and costs.
    """

    grid: TimeGrid
    G1: KernelGrid
    G2: KernelGrid
    d: NoiseModel
    Q: np.ndarray
    q: np.ndarray
    S: np.ndarray
    p: np.ndarray
    s0: Optional[np.ndarray] = None
    s1: Optional[np.ndarray] = None
    origin: object = None
    warnings: tuple = ()

    def __post_init__(self):
        if not isinstance(self.d, NoiseModel):
            raise UnsupportedNoise("d must be a martingale-affine NoiseModel")
        N = self.G1.n
        ext = extended_grid(self.grid)
        for name, G in (("G1", self.G1), ("G2", self.G2)):
            if G.n != N or G.n_t != ext.n_t:
                raise InvalidArgument(f"{name} must be an {N} x {N} block kernel with {ext.n_t} grid points")
            if not G.is_volterra:
                raise InvalidArgument(f"{name} must be a Volterra kernel")
        if self.d.dim != 2 * N or self.d.grid.n_t != ext.n_t:
            raise InvalidArgument(f"d must have dimension {2 * N} on the extended grid")
        p = _per_player(self.p, N, (), "p")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise InvalidArgument("all p^i must be strictly positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "Q", _per_player(self.Q, N, (2, 2), "Q"))
        object.__setattr__(self, "S", _per_player(self.S, N, (2, 2), "S"))
        object.__setattr__(self, "q", _per_player(self.q, N, (2,), "q"))
        nd = self.d.n_drivers
        s0 = np.zeros((N, 2)) if self.s0 is None else _per_player(self.s0, N, (2,), "s0")
        s1 = np.zeros((N, 2, nd)) if self.s1 is None else _per_player(self.s1, N, (2, nd), "s1")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "s1", s1)

    @property
    def N(self) -> int:
        return self.G1.n

    def player_kernel(self, i: int) -> np.ndarray:
        """``G^i`` on the extended grid, shape (n_t + 1, n_t + 1, 2, N)."""
        return np.stack([self.G1.values[:, :, i, :], self.G2.values[:, :, i, :]], axis=2)

    def player_d(self, i: int):
        """Drift (2, n_t + 1) and loadings (2, n_drivers, n_t + 1) of ``d^i``."""
        idx = [i, self.N + i]
        return self.d.drift[idx], self.d.loadings[idx]


@dataclass
class GamePaths:
    """Paths on the extended grid and the matching ensemble for the reduced game."""

    ext: NoiseEnsemble
    game: NoiseEnsemble


@dataclass(eq=False)
class ReducedGame:
    inp: VolterraGameInput
    spec: FiniteGameSpec
    Gamma: KernelGrid
    b_full: NoiseModel

    def simulate(self, n_paths: int, seed: int, first_path: int = 0) -> GamePaths:
        ids = np.arange(first_path, first_path + int(n_paths))
        drivers = simulate_drivers(self.inp.d, ids, seed)
        ext = NoiseEnsemble(self.inp.d, int(seed), ids, drivers)
        nt = self.inp.grid.n_t
        game = NoiseEnsemble(self.spec.noise, int(seed), ids, drivers[..., :nt])
        return GamePaths(ext, game)

    def c_values(self, paths: GamePaths) -> np.ndarray:
        """Constant terms ``c^i`` per path, shape (n_paths, N)."""
        inp = self.inp
        N, nt, dt = inp.N, inp.grid.n_t, inp.grid.dt
        dv = paths.ext.values
        MT = paths.ext.drivers[..., -1]
        out = np.empty((len(paths.ext), N))
        for i in range(N):
            di = dv[:, [i, N + i], :]
            run = np.einsum("pam,ab,pbm->p", di[..., :nt], inp.Q[i], di[..., :nt])
            dT = di[..., nt]
            s = inp.s0[i] + MT @ inp.s1[i].T
            out[:, i] = -dt * run - np.einsum("pa,ab,pb->p", dT, inp.S[i], dT) + np.sum(dT * s, axis=1)
        return out

    def objectives(self, alpha: np.ndarray, paths: GamePaths, player: int) -> np.ndarray:
        """Pathwise objective of the reduced game (expectation matches the original)."""
        cb = self.spec.cross_b.realize(paths.game.drivers)
        return objective_values(self.spec, alpha, paths.game.values, player, cb, self.c_values(paths))

    def direct_objectives(self, alpha: np.ndarray, paths: GamePaths, player: int) -> np.ndarray:
        """Objective evaluated on the simulated state ``Y^i = d^i + int G^i alpha``."""
        inp = self.inp
        i = int(player)
        nt, dt = inp.grid.n_t, inp.grid.dt
        Gi = inp.player_kernel(i)[:, :nt]
        di = paths.ext.values[:, [i, inp.N + i], :]
        Y = di + dt * np.einsum("mkaj,pjk->pam", Gi, alpha)
        a = alpha[:, i, :]
        Yr = Y[..., :nt]
        run = (-inp.p[i] * a * a - np.einsum("pam,ab,pbm->pm", Yr, inp.Q[i], Yr)
               + a * np.einsum("a,pam->pm", inp.q[i], Yr))
        YT = Y[..., nt]
        s = inp.s0[i] + paths.ext.drivers[..., -1] @ inp.s1[i].T
        return dt * run.sum(axis=1) - np.einsum("pa,ab,pb->p", YT, inp.S[i], YT) + np.sum(YT * s, axis=1)


def volterra_reduce(inp: VolterraGameInput) -> ReducedGame:
    """Write the Volterra game as a finite-player game.

    Player ``i``'s objective becomes ``-<alpha, F^i alpha> - p_i |alpha^i|^2
    + <b^i, alpha> + c^i`` with, on the grid (``G = G^i``, ``m`` running over
    the running-cost points and ``G_T = G(T, .)``),

        F^i[j,k] = dt sum_{m>j} G[m,j]^T (Q+Q^T) G[m,k] + G_T[j]^T (S+S^T) G_T[k]
                   - e_i q^T G[j,k]                                     (j > k)
        F^i[j,j] = dt sum_{m>j} G[m,j]^T Q G[m,j] + G_T[j]^T S G_T[j]     (symmetrized)
        b^i_k    = -dt sum_{m>k} G[m,k]^T (Q+Q^T) E_k[d_m] + e_i q^T d_k
                   + G_T[k]^T (E_k[s] - (S+S^T) E_k[d_T]).

    ``B^{ik} = F^i_{ik}``, ``Bbar^{ji} = F^i_{ji}``, ``C^{ijk} = F^i_{jk}``,
    ``Lambda = p``. ``b^i`` is affine in the drivers of ``d``; its ``i``-th
    coordinate is the game noise and the rest go to ``cross_b``.
    """
    N, nt = inp.N, inp.grid.n_t
    dt = inp.grid.dt
    nd = inp.d.n_drivers
    Bv = np.zeros((nt, nt, N, N))
    Bbv = np.zeros((nt, nt, N, N))
    C = {}
    b_drift = np.zeros((N, N, nt))
    b_load = np.zeros((N, N, nd, nt))
    for i in range(N):
        G = inp.player_kernel(i)
        Gr = G[:nt, :nt]  # running-cost rows m < n_t
        GT = G[nt, :nt]  # (nt, 2, N)
        Q, S, q = inp.Q[i], inp.S[i], inp.q[i]
        # symmetric-in-time form: Fs[j,k] = dt sum_m G[m,j]^T Q G[m,k] + G_T[j]^T S G_T[k]
        QG = np.einsum("ab,mkbN->mkaN", Q, Gr)
        Fs = dt * np.tensordot(Gr, QG, axes=([0, 2], [0, 2])).transpose(0, 2, 1, 3)
        Fs += np.einsum("jaM,ab,kbN->jkMN", GT, S, GT)
        F = Fs + Fs.transpose(1, 0, 3, 2)
        jj = np.arange(nt)
        F[jj, jj] = 0.5 * (Fs[jj, jj] + Fs[jj, jj].transpose(0, 2, 1))
        F[np.triu_indices(nt, 1)] = 0.0
        F[:, :, i, :] -= np.einsum("a,jkaN->jkN", q, Gr)
        Bv[:, :, i, :] = F[:, :, i, :]
        Bbv[:, :, :, i] = F[:, :, :, i]
        C[i] = KernelGrid(inp.grid, F, False)
        # b^i: affine in the drivers
        dm, dl = inp.player_d(i)
        W = -dt * np.einsum("mkaN,ab->mkNb", Gr, Q + Q.T)
        drift = np.einsum("mkNa,am->Nk", W, dm[:, :nt])
        load = np.einsum("mkNa,adm->Ndk", W, dl[:, :, :nt])
        drift[i] += q @ dm[:, :nt]
        load[i] += np.einsum("a,adk->dk", q, dl[:, :, :nt])
        SS = S + S.T
        drift += np.einsum("kaN,a->Nk", GT, inp.s0[i] - SS @ dm[:, nt])
        load += np.einsum("kaN,ad->Ndk", GT, inp.s1[i] - SS @ dl[:, :, nt])
        b_drift[i] = drift
        b_load[i] = load
    B = KernelGrid(inp.grid, Bv, False)
    Bbar = KernelGrid(inp.grid, Bbv, False)
    d = inp.d
    inc = None if d.increments is None else d.increments[: nt - 1]
    kinds, common = d.driver_kinds, d.common_mask
    b_full = NoiseModel(inp.grid, b_drift.reshape(N * N, nt), b_load.reshape(N * N, nd, nt),
                        kinds, common, inc)
    diag = np.arange(N) * (N + 1)
    noise = NoiseModel(inp.grid, b_full.drift[diag], b_full.loadings[diag], kinds, common, inc)
    spec = FiniteGameSpec(B, Bbar, inp.p, noise, C_kernels=C, cross_b=b_full)
    Gamma = KernelGrid(inp.grid, Bv + adjoint(Bbar).values, False)
    return ReducedGame(inp, spec, Gamma, b_full)


# ---------------------------------------------------------------------------
# Linear Volterra states


@dataclass
class LinearVolterraStates:
    X: np.ndarray
    resolvent: KernelGrid
    control_kernel: Optional[KernelGrid] = None


def _diag_kernel(K, N, grid, name):
    if K is None:
        return np.zeros((grid.n_t, grid.n_t, N))
    if not K.is_volterra:
        raise InvalidArgument(f"{name} must be a Volterra kernel")
    if K.n == 1:
        return np.repeat(K.values[:, :, 0, :1], N, axis=2)
    if K.n != N:
        raise InvalidArgument(f"{name} must be scalar or have N = {N} blocks")
    return np.einsum("jkii->jki", K.values)


def linear_volterra_states(H: Optional[KernelGrid], K: Optional[KernelGrid], w, M: np.ndarray,
                           L: Optional[KernelGrid] = None, grid: Optional[TimeGrid] = None) -> LinearVolterraStates:
    """Solve ``X^i = M^i + int H^i X^i + int K^i (w X)^i`` as ``X = M - int R M``.

    ``H`` and ``K`` hold the scalar kernels ``H^i``, ``K^i`` on their block
    diagonals (or one shared scalar kernel); ``M`` has shape (..., N, n_t).
    With a control kernel ``L`` (so that ``M = N + int L alpha``) the
    effective control kernel ``L - R * L`` is returned as well.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    N = w.shape[0]
    if w.shape != (N, N):
        raise InvalidArgument("w must be square")
    grid = grid or (H.grid if H is not None else K.grid)
    h = _diag_kernel(H, N, grid, "H")
    k = _diag_kernel(K, N, grid, "K")
    eff = h[..., None] * np.eye(N) + k[..., None] * w
    R = volterra_resolvent(KernelGrid(grid, eff, True))
    M = np.asarray(M, dtype=float)
    X = M - grid.dt * np.einsum("jkab,...bk->...aj", R.values, M)
    ctrl = None
    if L is not None:
        ctrl = KernelGrid(grid, L.values - star_product(R, L).values, True)
    return LinearVolterraStates(X, R, ctrl)


# ---------------------------------------------------------------------------
# Systemic risk with delayed repayments


@dataclass(frozen=True, eq=False)
class SystemicRiskInput:
    """Inter-bank lending model ``dX^i = (int alpha^i_{t-s} nu^i(ds) + h^i) dt + dV^i``.

    ``atoms`` is one list of ``(time, weight)`` pairs shared by all banks or a
    list of such lists, one per bank. ``V`` is a noise model of dimension N on
    the extended grid (``None`` for no noise); ``h`` broadcasts to
    (N, n_t + 1).
    """

    grid: TimeGrid
    atoms: list
    w_sys: np.ndarray
    kappa: np.ndarray
    eps: np.ndarray
    c: np.ndarray
    h: object = 0.0
    V: Optional[NoiseModel] = None
    xi: object = 0.0

    def __post_init__(self):
        w = np.asarray(self.w_sys, dtype=float)
        N = w.shape[0]
        if w.ndim != 2 or w.shape != (N, N) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgument("w_sys must be a square matrix with nonnegative entries")
        object.__setattr__(self, "w_sys", w)
        kappa = _per_player(self.kappa, N, (), "kappa")
        eps = _per_player(self.eps, N, (), "eps")
        c = _per_player(self.c, N, (), "c")
        if np.any(kappa < 0) or np.any(eps <= 0) or np.any(c < 0):
            raise InvalidArgument("need kappa >= 0, eps > 0 and c >= 0")
        if np.any(kappa ** 2 >= eps):
            raise InvalidArgument("need kappa_i^2 < eps_i for every bank")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "c", c)
        atoms = self.atoms
        if len(atoms) and not isinstance(atoms[0][0], (list, tuple)):
            atoms = [atoms] * N
        if len(atoms) != N:
            raise InvalidArgument(f"need one delay measure per bank, got {len(atoms)}")
        atoms = [[(float(t), float(a)) for t, a in nu] for nu in atoms]
        for nu in atoms:
            if any(t < 0 or t > self.grid.T + 1e-12 for t, _ in nu):
                raise InvalidArgument("delay atoms must lie in [0, T]")
        object.__setattr__(self, "atoms", atoms)
        if self.V is not None and (self.V.dim != N or self.V.grid.n_t != self.grid.n_t + 1):
            raise InvalidArgument(f"V must have dimension {N} on the extended grid")

    @property
    def N(self) -> int:
        return self.w_sys.shape[0]


def _snap_atoms(atoms, grid):
    """Grid lags for the atoms; off-grid times are rounded with a warning."""
    out, msgs = [], []
    for nu in atoms:
        lags = []
        for t, a in nu:
            L = int(round(t / grid.dt))
            if abs(L * grid.dt - t) > 1e-9 * max(1.0, grid.T):
                msgs.append(f"delay atom {t:g} snapped to grid time {L * grid.dt:g}")
            lags.append((L, a))
        out.append(lags)
    return out, msgs


@dataclass(eq=False)
class SystemicModel:
    """Direct simulation of the inter-bank model (costs are minimized)."""

    inp: SystemicRiskInput
    lags: list

    def states(self, alpha: np.ndarray, P: np.ndarray) -> np.ndarray:
        """``X`` on the extended grid; ``P`` has shape (n_paths, N, n_t + 1).

        The delayed drift is accumulated step by step: over ``[t_m, t_{m+1})``
        bank ``i`` receives ``sum_a w_a alpha^i_{m + 1 - max(L_a, 1)} dt``, so
        a control is repaid exactly ``L_a`` steps after it was drawn.
        """
        dt = self.inp.grid.dt
        nt = alpha.shape[-1]
        X = P.copy()
        for i, lags in enumerate(self.lags):
            acc = np.zeros(alpha.shape[0])
            for m in range(nt):
                for L, a in lags:
                    k = m + 1 - max(L, 1)
                    if k >= 0:
                        acc = acc + dt * a * alpha[:, i, k]
                X[:, i, m + 1] += acc
        return X

    def costs(self, alpha: np.ndarray, d_values: np.ndarray) -> np.ndarray:
        inp = self.inp
        N, nt, dt = inp.N, alpha.shape[-1], inp.grid.dt
        X = self.states(alpha, d_values[:, :N])
        gap = np.einsum("ij,pjm->pim", inp.w_sys, X) - X
        k, e, c = inp.kappa[:, None], inp.eps[:, None], inp.c
        run = 0.5 * alpha ** 2 - k * alpha * gap[..., :nt] + 0.5 * e * gap[..., :nt] ** 2
        return dt * run.sum(axis=2) + 0.5 * c * gap[..., nt] ** 2


def systemic_risk_build(inp: SystemicRiskInput) -> VolterraGameInput:
    """Volterra form of the inter-bank model.

    ``G_1^{ii}(t,s) = 1_{t>s} nu^i([0, t-s])``, ``G_2^{ij} = w_ij G_1^{jj}``,
    ``P^i = xi^i + int h^i + V^i``, ``R = w P``; costs are negated so that
    ``p = 1/2``, ``Q = (eps/2)[[1,-1],[-1,1]]``, ``q = kappa (-1, 1)``,
    ``S = (c/eps) Q``, ``s = 0``.
    """
    N = inp.N
    grid = inp.grid
    ext = extended_grid(grid)
    lags, msgs = _snap_atoms(inp.atoms, grid)
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    G1 = np.zeros((ext.n_t, ext.n_t, N, N))
    for i, nu in enumerate(lags):
        times = [L * grid.dt for L, _ in nu]
        wts = [a for _, a in nu]
        G1[:, :, i, i] = delay_measure_kernel(ext, times, wts).values[:, :, 0, 0]
    G2 = np.einsum("ij,mkj->mkij", inp.w_sys, np.einsum("mkjj->mkj", G1))
    n1 = ext.n_t
    h = _expand_time(inp.h, N, n1, "h")
    drift = _per_player(inp.xi, N, (), "xi")[:, None] + np.concatenate(
        [np.zeros((N, 1)), grid.dt * np.cumsum(h[:, :-1], axis=1)], axis=1)
    if inp.V is not None:
        Pm = NoiseModel(ext, drift + inp.V.drift, inp.V.loadings, inp.V.driver_kinds,
                        inp.V.common_mask, inp.V.increments)
    else:
        Pm = NoiseModel(ext, drift, np.zeros((N, 0, n1)))
    d = Pm.transform(np.vstack([np.eye(N), inp.w_sys]))
    J = np.array([[1.0, -1.0], [-1.0, 1.0]])
    Q = 0.5 * inp.eps[:, None, None] * J
    S = (inp.c / inp.eps)[:, None, None] * Q
    q = inp.kappa[:, None] * np.array([-1.0, 1.0])
    return VolterraGameInput(grid, KernelGrid(ext, G1, True), KernelGrid(ext, G2, True), d, Q, q, S,
                             np.full(N, 0.5), origin=SystemicModel(inp, lags), warnings=tuple(msgs))


def _expand_time(x, N, n, name):
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and a.shape[0] == N:
        a = a[:, None]
    try:
        return np.array(np.broadcast_to(a, (N, n)))
    except ValueError:
        raise InvalidArgument(f"{name} of shape {a.shape} does not broadcast to {(N, n)}")


@dataclass
class SystemicCheckReport:
    psd_eps: bool
    psd_c: bool
    kappa_condition: bool
    branch: str
    min_eig_eps: float
    min_eig_c: float
    kappa_norm: float
    critical_T: float
    T: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _min_sym_eig(A):
    return float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())


def systemic_assumption_check(inp: SystemicRiskInput, T: Optional[float] = None, tol: float = 1e-12) -> SystemicCheckReport:
    """Sufficient coercivity conditions for single-repayment delays.

    With ``Dw = diag(w)``: ``diag(eps)(I - Dw)(I - w)`` and
    ``diag(c)(I - Dw)(I - w)`` nonnegative definite, and, for
    ``nu = delta_0 - delta_tau``, ``(T/2) ||diag(kappa)(2I - w - Dw)||_F < 1``
    (critical horizon ``2 / ||.||_F``). For ``nu = delta_0`` the last
    condition becomes nonnegative definiteness of ``diag(kappa)(2I - w - Dw)``.
    """
    T = inp.grid.T if T is None else float(T)
    N = inp.N
    branch = None
    for nu in inp.atoms:
        items = sorted((t, a) for t, a in nu if a != 0)
        if items == [(0.0, 1.0)]:
            b = "no_delay"
        elif len(items) == 2 and items[0] == (0.0, 1.0) and items[1][1] == -1.0:
            b = "delay"
        else:
            raise InvalidArgument("the check covers nu = delta_0 or nu = delta_0 - delta_tau only")
        branch = b if branch in (None, b) else "delay"
    w = inp.w_sys
    I = np.eye(N)
    Dw = np.diag(np.diag(w))
    base = (I - Dw) @ (I - w)
    me = _min_sym_eig(np.diag(inp.eps) @ base)
    mc = _min_sym_eig(np.diag(inp.c) @ base)
    Kmat = np.diag(inp.kappa) @ (2 * I - w - Dw)
    knorm = float(np.linalg.norm(Kmat, "fro"))
    crit = 2.0 / knorm if knorm > 0 else np.inf
    if branch == "no_delay":
        kc = _min_sym_eig(Kmat) >= -tol
    else:
        kc = 0.5 * T * knorm < 1.0
    psd_e, psd_c = me >= -tol, mc >= -tol
    return SystemicCheckReport(bool(psd_e), bool(psd_c), bool(kc), branch, me, mc, knorm, float(crit), T,
                               bool(psd_e and psd_c and kc))


# ---------------------------------------------------------------------------
# Linear SDE network games (network SDE and simple graphs)


def _sqrt_psd(A):
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def step_covariance(A: np.ndarray, Sigma: np.ndarray, dt: float) -> np.ndarray:
    """``int_0^dt exp(A u) Sigma Sigma^T exp(A^T u) du`` by the block exponential of Van Loan."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = Sigma @ Sigma.T
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * dt)
    Phi_T = E[n:, n:]
    return Phi_T.T @ E[:n, n:]


@dataclass(eq=False)
class LinearSDEModel:
    """``dX = (A X + Bm alpha) dt + Sigma dW``, ``Z = Zmat X``, quadratic costs
    ``f = x^T C_f x / 2`` with ``x = (X^i, alpha^i, Z^i)`` and
    ``g = y^T C_g y / 2`` with ``y = (X^i_T, Z^i_T)`` (minimized).

    The Gaussian part of ``X`` is ``exp(A t) M_t`` with the martingale
    ``M_t = int_0^t exp(-A s) Sigma dW_s`` whose exact per-step increments
    drive the noise model.
    """

    grid: TimeGrid
    A: np.ndarray
    Bm: np.ndarray
    Zmat: np.ndarray
    C_f: np.ndarray
    C_g: np.ndarray
    xi: np.ndarray
    Sigma: np.ndarray
    lags: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        ext = extended_grid(self.grid)
        self.lags = np.array([scipy.linalg.expm(self.A * (m * self.grid.dt)) for m in range(ext.n_t)])

    def noise(self) -> NoiseModel:
        """Model of ``P = exp(A t) xi + exp(A t) M_t`` on the extended grid (dimension N)."""
        ext = extended_grid(self.grid)
        N = self.A.shape[0]
        drift = np.einsum("mab,b->am", self.lags, self.xi)
        load = self.lags.transpose(1, 2, 0)
        C = _sqrt_psd(step_covariance(-self.A, self.Sigma, self.grid.dt))
        inv_lags = np.array([scipy.linalg.expm(-self.A * (m * self.grid.dt)) for m in range(ext.n_t - 1)])
        inc = np.einsum("kab,bc->kac", inv_lags, C)
        return NoiseModel(ext, drift, load, ("brownian",) * N, (False,) * N, inc)

    def states(self, alpha: np.ndarray, drivers: np.ndarray) -> np.ndarray:
        """Exponential stepping ``X_{k+1} = e^{A dt}(X_k + dt Bm alpha_k) + e^{A t_{k+1}} dM_k``."""
        P, N, nt = alpha.shape[0], self.A.shape[0], alpha.shape[-1]
        E1 = self.lags[1]
        X = np.empty((P, N, nt + 1))
        X[:, :, 0] = self.xi
        for k in range(nt):
            dM = drivers[:, :, k + 1] - drivers[:, :, k]
            X[:, :, k + 1] = ((X[:, :, k] + self.grid.dt * alpha[:, :, k] @ self.Bm.T) @ E1.T
                              + dM @ self.lags[k + 1].T)
        return X

    def costs(self, alpha: np.ndarray, drivers: np.ndarray) -> np.ndarray:
        nt, dt = alpha.shape[-1], self.grid.dt
        X = self.states(alpha, drivers)
        Z = np.einsum("ij,pjm->pim", self.Zmat, X)
        x = np.stack([X[..., :nt], alpha, Z[..., :nt]], axis=-1)
        run = 0.5 * np.einsum("pima,iab,pimb->pi", x, self.C_f, x)
        y = np.stack([X[..., nt], Z[..., nt]], axis=-1)
        return dt * run + 0.5 * np.einsum("pia,iab,pib->pi", y, self.C_g, y)


def _linear_sde_input(model: LinearSDEModel) -> VolterraGameInput:
    grid = model.grid
    ext = extended_grid(grid)
    N = model.A.shape[0]
    G1 = np.zeros((ext.n_t, ext.n_t, N, N))
    GB = np.einsum("mab,bc->mac", model.lags, model.Bm)
    for j in range(1, ext.n_t):
        G1[j, :j] = GB[j - np.arange(j)]
    G2 = np.einsum("ab,mkbc->mkac", model.Zmat, G1)
    d = model.noise().transform(np.vstack([np.eye(N), model.Zmat]))
    Cf, Cg = model.C_f, model.C_g
    p = 0.5 * Cf[:, 1, 1]
    Q = 0.5 * Cf[:, [0, 2]][:, :, [0, 2]]
    q = -np.stack([Cf[:, 0, 1], Cf[:, 1, 2]], axis=1)
    S = 0.5 * Cg
    return VolterraGameInput(grid, KernelGrid(ext, G1, True), KernelGrid(ext, G2, True), d, Q, q, S, p,
                             origin=model)


def _sigma_matrix(sigma, N):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        return float(s) * np.eye(N)
    if s.ndim == 1:
        return np.diag(_per_player(s, N, (), "sigma"))
    if s.ndim == 2 and s.shape[0] == N:
        return s
    raise InvalidArgument("sigma must be a scalar, a length-N vector or an N x k matrix")


def network_sde_build(grid: TimeGrid, a, b, c, w_net, C_f, C_g, xi=0.0, sigma=1.0) -> VolterraGameInput:
    """Network game ``dX^i = (a_i X^i + b_i alpha^i + c_i Z^i) dt + dW^i``, ``Z^i = (1/N) sum_j w_ij X^j``.

    ``sigma`` may be an N x k loading matrix, which adds common noise.
    """
    w = np.asarray(w_net, dtype=float)
    N = w.shape[0]
    if w.ndim != 2 or w.shape != (N, N) or not np.all(np.isfinite(w)):
        raise InvalidArgument("w_net must be a square matrix")
    Cf = _per_player(C_f, N, (3, 3), "C_f")
    Cg = _per_player(C_g, N, (2, 2), "C_g")
    if np.any(Cf[:, 1, 1] <= 0):
        raise InvalidArgument("[C_f]_22 must be positive for every player")
    A = np.diag(_per_player(a, N, (), "a")) + np.diag(_per_player(c, N, (), "c")) @ w / N
    Bm = np.diag(_per_player(b, N, (), "b"))
    model = LinearSDEModel(grid, A, Bm, w / N, Cf, Cg, _per_player(xi, N, (), "xi"), _sigma_matrix(sigma, N))
    return _linear_sde_input(model)


def normalized_laplacian(N: int, edges: Sequence) -> np.ndarray:
    """``1`` on the diagonal and ``-(d_i d_j)^{-1/2}`` for adjacent vertices."""
    adj = np.zeros((N, N))
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j or not (0 <= i < N and 0 <= j < N):
            raise InvalidArgument(f"invalid edge {tuple(e)}")
        adj[i, j] = adj[j, i] = 1.0
    deg = adj.sum(axis=1)
    if np.any(deg == 0) or not _connected(adj):
        raise InvalidArgument("the graph must be connected")
    s = 1.0 / np.sqrt(deg)
    return np.eye(N) - s[:, None] * adj * s[None, :]


def _connected(adj):
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in np.nonzero(adj[v])[0]:
            if u not in seen:
                seen.add(int(u))
                stack.append(int(u))
    return len(seen) == adj.shape[0]


def simple_graph_build(grid: TimeGrid, N: int, edges, a_bar: float, sigma_bar: float, q_sim: float,
                       eps_sim: float, c_sim: float, xi=0.0) -> VolterraGameInput:
    """Game on a connected simple graph: ``dX = (-a L X + alpha) dt + sigma dW``, ``Z = (I - L) X``."""
    if min(q_sim, eps_sim, c_sim, a_bar) < 0:
        raise InvalidArgument("q_sim, eps_sim, c_sim and a_bar must be nonnegative")
    if q_sim ** 2 > eps_sim:
        raise InvalidArgument("need q_sim^2 <= eps_sim")
    L = normalized_laplacian(N, edges)
    e, qs, cs = float(eps_sim), float(q_sim), float(c_sim)
    Cf = np.array([[e, qs, -e], [qs, 1.0, -qs], [-e, -qs, e]])
    Cg = cs * np.array([[1.0, -1.0], [-1.0, 1.0]])
    model = LinearSDEModel(grid, -a_bar * L, np.eye(N), np.eye(N) - L, np.broadcast_to(Cf, (N, 3, 3)).copy(),
                           np.broadcast_to(Cg, (N, 2, 2)).copy(), _per_player(xi, N, (), "xi"),
                           float(sigma_bar) * np.eye(N))
    return _linear_sde_input(model)


def origin_objectives(game: ReducedGame, alpha: np.ndarray, paths: GamePaths) -> np.ndarray:
    """Negated original costs per path and player (to compare with the reduced objectives)."""
    org = game.inp.origin
    if org is None:
        raise InvalidArgument("the game was not built from a model with its own dynamics")
    if isinstance(org, SystemicModel):
        N = game.inp.N
        return -org.costs(alpha, paths.ext.values[:, :N])
    return -org.costs(alpha, paths.ext.drivers)
