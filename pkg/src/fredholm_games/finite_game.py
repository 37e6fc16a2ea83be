"""N-player linear-quadratic game with Volterra interaction kernels.

Player ``i`` maximizes

    E[ -<a^i, (B^ii + lam_i) a^i> - sum_{j != i} <a^i, (B^ij + Bbar^ji*) a^j>
       - sum_{j,k != i} <a^j, C^ijk a^k> + <b^ii, a^i> + sum_{j != i} <b^ij, a^j> + c^i ].

The unique open-loop equilibrium solves the stochastic Fredholm system

    2 Lam a_t = b_t - int_0^t B(t,s) a_s ds - int_t^T Bbar(s,t)^T E_t[a_s] ds

and is computed on the grid as ``a = (I + E)^{-1} gamma`` where ``gamma`` and
``E`` are built from the factorizations of the restricted operators
``D_t = 2 Lam + B_t + Bbar_t*`` on ``(t, T]``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import CoercivityError, InvalidArgument, NumericalError, SolverInconsistency
from .noise import NoiseEnsemble, NoiseModel
from .timekernel import (CoercivityReport, KernelGrid, adjoint, coercivity_check,
                         kernel_to_operator, sup_slice_norm)


@dataclass(frozen=True, eq=False)
class FiniteGameSpec:
    """Game data. ``C_kernels[i]`` (optional) is an N x N block kernel holding
    ``C^{ijk}`` at block ``(j, k)``; ``cross_b`` (optional) models ``b^{ij}`` at
    coordinate ``i * N + j`` and shares its drivers with ``noise``; ``c_terms``
    are per-player (shape (N,)) or per-path (shape (n_paths, N)) constants."""

    B: KernelGrid
    Bbar: KernelGrid
    Lambda: np.ndarray
    noise: NoiseModel
    C_kernels: Optional[dict] = None
    cross_b: Optional[NoiseModel] = None
    c_terms: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.asarray(self.Lambda, dtype=float).reshape(-1)
        object.__setattr__(self, "Lambda", lam)
        N = self.B.n
        if self.Bbar.n != N or self.Bbar.grid != self.B.grid:
            raise InvalidArgument("B and Bbar must share grid and block dimension")
        for name, K in (("B", self.B), ("Bbar", self.Bbar)):
            if not (K.is_volterra or is_causal(K)):
                raise InvalidArgument(f"{name} must be a Volterra kernel (zero for s > t)")
        if lam.size != N:
            raise InvalidArgument(f"Lambda needs {N} entries, got {lam.size}")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise InvalidArgument("all lambda^i must be strictly positive")
        if self.noise.dim != N or self.noise.grid != self.B.grid:
            raise InvalidArgument(f"noise must have dimension {N} on the game grid")
        diag_b = np.einsum("jkii->jki", self.B.values)
        diag_bb = np.einsum("jkii->jki", self.Bbar.values)
        if not np.allclose(diag_b, diag_bb, rtol=1e-12, atol=1e-12):
            raise InvalidArgument("diagonal blocks B^ii and Bbar^ii must coincide")
        if self.cross_b is not None:
            if self.cross_b.dim != N * N or self.cross_b.n_drivers != self.noise.n_drivers:
                raise InvalidArgument("cross_b must have dimension N*N and share the noise drivers")
        if self.C_kernels is not None:
            for i, C in self.C_kernels.items():
                if not 0 <= int(i) < N or C.n != N or C.grid != self.B.grid:
                    raise InvalidArgument(f"C_kernels[{i}] must be an N x N block kernel on the game grid")

    @property
    def N(self) -> int:
        return self.B.n

    @property
    def grid(self):
        return self.B.grid

    def sym_operator(self):
        """Operator matrix of ``B + Bbar*``."""
        M = kernel_to_operator(self.B)
        Mb = kernel_to_operator(adjoint(self.Bbar))
        return type(M)(M.grid, M.n, M.matrix + Mb.matrix)

    def coercivity(self, tol: float = 1e-8) -> CoercivityReport:
        return coercivity_check(self.sym_operator(), self.Lambda, tol)


def is_causal(K: KernelGrid) -> bool:
    """True when ``K[j, k] = 0`` for all ``k > j``. Causal kernels may carry a
    time-diagonal block, which the reduction of Volterra games produces."""
    j, k = np.triu_indices(K.n_t, 1)
    return not np.any(K.values[j, k])


def build_from_graph(A_tilde: KernelGrid, B_tilde: KernelGrid, lam: float, w, noise: NoiseModel,
                     kappa: float = 1.0, check_weights: bool = True) -> FiniteGameSpec:
    """Game on a weighted graph: ``B = Bbar = Id * A~ + (1/(kappa N)) w * B~``, ``Lam = lam Id``.

    ``kappa`` rescales the aggregate for sparse sampled graphs (``kappa = 1``
    is the dense case).
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    if w.ndim != 2 or w.shape != (N, N):
        raise InvalidArgument("w must be a square matrix")
    if not np.allclose(w, w.T, rtol=0, atol=1e-14):
        raise InvalidArgument("w must be symmetric")
    if np.any(np.diag(w) != 0):
        raise InvalidArgument("w must have zero diagonal")
    if check_weights and (np.any(w < 0) or np.any(w > 1)):
        raise InvalidArgument("w entries must lie in [0, 1]")
    if A_tilde.n != 1 or B_tilde.n != 1:
        raise InvalidArgument("A~ and B~ must be scalar kernels")
    if not (kappa > 0):
        raise InvalidArgument("kappa must be positive")
    a = A_tilde.values[:, :, 0, 0]
    b = B_tilde.values[:, :, 0, 0]
    v = a[:, :, None, None] * np.eye(N) + b[:, :, None, None] * (w / (kappa * N))
    Bk = KernelGrid(A_tilde.grid, v, True)
    return FiniteGameSpec(Bk, Bk, np.full(N, float(lam)), noise)


# ---------------------------------------------------------------------------
# Solver


def _flat(x: np.ndarray) -> np.ndarray:
    """(..., N, n_t) -> (..., n_t * N) in (time, player) order."""
    return np.swapaxes(x, -1, -2).reshape(x.shape[:-2] + (-1,))


def _unflat(x: np.ndarray, N: int) -> np.ndarray:
    return np.swapaxes(x.reshape(x.shape[:-1] + (-1, N)), -1, -2)


@dataclass(eq=False)
class FiniteSolver:
    """Path-independent objects of the equilibrium formula, built once per spec."""

    spec: FiniteGameSpec
    coercivity: CoercivityReport
    MB: np.ndarray
    MBbar_adj: np.ndarray
    L: list
    E_op: np.ndarray
    W_lu: tuple
    G: np.ndarray
    Dinv: list
    MBa_diag: np.ndarray
    timings: dict = field(default_factory=dict)
    _res_cache: Optional[tuple] = None

    @property
    def E_kernel(self) -> np.ndarray:
        """Kernel values ``E[j, k]`` (shape (n_t, n_t, N, N)); nonzero only for ``k <= j``."""
        N, nt = self.spec.N, self.spec.grid.n_t
        return self.E_op.reshape(nt, N, nt, N).transpose(0, 2, 1, 3) / self.spec.grid.dt

    def gamma(self, ens: NoiseEnsemble) -> np.ndarray:
        """``gamma`` per path, shape (n_paths, N, n_t).

        Row ``t`` of ``G`` only reads ``E_t[b_s]`` for ``s >= t``, which is
        ``m(s) + sum_d sigma_d(s) M^d_t``. Hence ``gamma_t = (G m)_t +
        sum_d (G sigma_d)_t M^d_t`` and no per-time conditioning is needed.
        :meth:`gamma_loop` evaluates the defining formula directly.
        """
        N = self.spec.N
        model = ens.model
        gm = _unflat(_flat(model.drift) @ self.G.T, N)
        out = np.broadcast_to(gm, (len(ens),) + gm.shape).copy()
        if model.n_drivers:
            gs = _unflat(_flat(model.loadings.transpose(1, 0, 2)) @ self.G.T, N)  # (nd, N, nt)
            out += np.einsum("dik,pdk->pik", gs, ens.drivers)
        return out

    def gamma_loop(self, ens: NoiseEnsemble) -> np.ndarray:
        """``gamma`` by conditioning on every grid time in turn (reference route)."""
        N, nt = self.spec.N, self.spec.grid.n_t
        b = _flat(ens.values)
        g = np.empty_like(b)
        for j in range(nt):
            rows = slice(j * N, (j + 1) * N)
            r = b[:, rows]
            if j < nt - 1:
                Eb = _flat(ens.conditional_expectation(j))[:, (j + 1) * N:]
                r = r - Eb @ self.L[j].T
            g[:, rows] = r @ self.Dinv[j].T
        return _unflat(g, N)

    def apply_inverse(self, gamma: np.ndarray) -> np.ndarray:
        """``(I + E)^{-1} gamma`` for gamma of shape (..., N, n_t)."""
        N = self.spec.N
        g = _flat(gamma)
        shp = g.shape
        x = scipy.linalg.lu_solve(self.W_lu, g.reshape(-1, shp[-1]).T).T
        return _unflat(x.reshape(shp), N)

    def apply_inverse_forward(self, gamma: np.ndarray) -> np.ndarray:
        """Block forward substitution for ``(I + E) x = gamma`` (cross-check route)."""
        N, nt = self.spec.N, self.spec.grid.n_t
        gamma = np.asarray(gamma, dtype=float)
        g = _flat(gamma).reshape(-1, nt * N)
        x = np.zeros_like(g)
        W = np.eye(nt * N) + self.E_op
        for j in range(nt):
            rows = slice(j * N, (j + 1) * N)
            rhs = g[:, rows] - x[:, : j * N] @ W[rows, : j * N].T
            x[:, rows] = np.linalg.solve(W[rows, rows], rhs.T).T
        return _unflat(x.reshape(_flat(gamma).shape), N)

    def _residual_maps(self):
        """Per-t matrices giving ``int_t^T Bbar(s,t)^T E_t[a_s] ds`` for the solver output."""
        if self._res_cache is None:
            N, nt = self.spec.N, self.spec.grid.n_t
            Winv = scipy.linalg.lu_solve(self.W_lu, np.eye(nt * N))
            A_maps, C_maps = [], []
            for j in range(nt):
                fut = slice((j + 1) * N, nt * N)
                Q = self.MBbar_adj[j * N:(j + 1) * N, fut]
                A_maps.append(Q @ Winv[fut, : (j + 1) * N])
                C_maps.append(Q @ Winv[fut, fut] @ self.G[fut, :])
            self._res_cache = (A_maps, C_maps)
        return self._res_cache

    def equilibrium_residual(self, ens: NoiseEnsemble, alpha: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Sup-norm FOC defect per path for the solver's own output.

        ``E_t[a_s]`` uses the affine structure: ``E_t[gamma_r]`` for ``r > t`` is
        ``G E_t[b]`` by the tower property, and ``E_t[a] = (I + E)^{-1}`` applied
        to gamma realized up to ``t`` and conditioned after ``t``.
        """
        N, nt = self.spec.N, self.spec.grid.n_t
        A_maps, C_maps = self._residual_maps()
        a = _flat(alpha)
        g = _flat(gamma)
        b = _flat(ens.values)
        lam2 = np.tile(2.0 * self.spec.Lambda, nt)
        res = lam2 * a - b + a @ self.MB.T + a @ self.MBa_diag.T
        model = ens.model
        m = _flat(model.drift)
        k = _flat(model.loadings.transpose(1, 0, 2)) if model.n_drivers else None  # (nd, n_t * N)
        for j in range(nt - 1):
            rows = slice(j * N, (j + 1) * N)
            # C_maps[j] only reads times after t_j, where E_t[b] is affine in M_t
            res[:, rows] += g[:, : (j + 1) * N] @ A_maps[j].T + C_maps[j] @ m
            if model.n_drivers:
                res[:, rows] += ens.drivers[:, :, j] @ (k @ C_maps[j].T)
        return np.abs(res).max(axis=1)


def precompute(spec: FiniteGameSpec, coercivity_tol: float = 1e-8, require_coercive: bool = True) -> FiniteSolver:
    """Factor ``D_t`` on ``(t, T]`` for every grid index and assemble ``E`` and ``(I + E)``."""
    t0 = time.perf_counter()
    report = spec.coercivity(coercivity_tol)
    if require_coercive and not report.passed:
        raise CoercivityError(f"coercivity check failed: c0_estimate={report.c0_estimate:.6g} <= tol={coercivity_tol:g}")
    N, nt = spec.N, spec.grid.n_t
    MB = kernel_to_operator(spec.B).matrix
    MBa = kernel_to_operator(adjoint(spec.Bbar)).matrix
    lam2 = np.tile(2.0 * spec.Lambda, nt)
    D = np.diag(lam2) + MB + MBa
    # time-diagonal blocks of causal kernels; zero for strictly Volterra B, Bbar
    MB_off = MB.copy()
    MBa_diag = np.zeros_like(MBa)
    Dinv = []
    Dinv_full = np.zeros((nt * N, nt * N))
    for j in range(nt):
        rows = slice(j * N, (j + 1) * N)
        MB_off[rows, rows] = 0.0
        MBa_diag[rows, rows] = MBa[rows, rows]
        try:
            Dinv.append(np.linalg.inv(D[rows, rows]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"diagonal block of D singular at t index {j}: {exc}")
        Dinv_full[rows, rows] = Dinv[j]
    L = []
    E_op = np.zeros((nt * N, nt * N))
    Lfull = np.zeros((nt * N, nt * N))
    for j in range(nt):
        rows = slice(j * N, (j + 1) * N)
        fut = slice((j + 1) * N, nt * N)
        past = slice(0, (j + 1) * N)
        if j < nt - 1:
            Dj = D[fut, fut]
            Q = MBa[rows, fut]
            try:
                lu = scipy.linalg.lu_factor(Dj.T, check_finite=True)
            except (ValueError, scipy.linalg.LinAlgError) as exc:
                raise NumericalError(f"restricted D_t factorization failed at t index {j}: {exc}")
            if np.any(np.abs(np.diag(lu[0])) < 1e-14 * max(1.0, np.abs(Dj).max())):
                raise NumericalError(f"restricted D_t singular at t index {j}")
            Lj = scipy.linalg.lu_solve(lu, Q.T).T
            L.append(Lj)
            Lfull[rows, fut] = Lj
            E_op[rows, past] = -Dinv[j] @ (Lj @ MB[fut, past] - MB_off[rows, past])
        else:
            L.append(np.zeros((N, 0)))
            E_op[rows, past] = Dinv[j] @ MB_off[rows, past]
    W = np.eye(nt * N) + E_op
    W_lu = scipy.linalg.lu_factor(W)
    if not np.all(np.isfinite(W_lu[0])):
        raise NumericalError("factorization of I + E produced non-finite values")
    G = Dinv_full @ (np.eye(nt * N) - Lfull)
    solver = FiniteSolver(spec, report, MB, MBa, L, E_op, W_lu, G, Dinv, MBa_diag)
    solver.timings["precompute_s"] = time.perf_counter() - t0
    return solver


@dataclass(eq=False)
class EquilibriumResult:
    alpha: np.ndarray
    gamma: np.ndarray
    foc_residual: np.ndarray
    path_ids: np.ndarray
    solver: FiniteSolver
    tol: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def max_foc_residual(self) -> float:
        return float(self.foc_residual.max()) if self.foc_residual.size else 0.0


def default_tolerance(b_values: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    """``rel * (1 + ||b||_sup)`` per path."""
    return rel * (1.0 + np.abs(b_values).reshape(b_values.shape[0], -1).max(axis=1))


def solve_equilibrium(spec: FiniteGameSpec, paths: NoiseEnsemble, tol: Optional[float] = None,
                      solver: Optional[FiniteSolver] = None, check: bool = True,
                      coercivity_tol: float = 1e-8, batch: int = 500) -> EquilibriumResult:
    """Equilibrium controls for every path of ``paths``.

    ``tol`` is an absolute sup-norm bound on the FOC defect; by default
    ``1e-8 * (1 + ||b||_sup)`` per path. Raises :class:`SolverInconsistency`
    with the offending path id if a path exceeds it.
    """
    if paths.model is not spec.noise and (paths.model.dim != spec.N or paths.model.grid != spec.grid):
        raise InvalidArgument("noise ensemble does not match the game")
    if solver is None:
        solver = precompute(spec, coercivity_tol)
    t0 = time.perf_counter()
    alphas, gammas, res = [], [], []
    for start in range(0, len(paths), batch):
        ens = paths[start:start + batch]
        g = solver.gamma(ens)
        a = solver.apply_inverse(g)
        alphas.append(a)
        gammas.append(g)
        res.append(solver.equilibrium_residual(ens, a, g) if check else np.zeros(len(ens)))
    alpha = np.concatenate(alphas)
    gamma = np.concatenate(gammas)
    residual = np.concatenate(res)
    tols = default_tolerance(paths.values) if tol is None else np.full(len(paths), float(tol))
    if not np.all(np.isfinite(alpha)):
        raise NumericalError("non-finite equilibrium controls")
    result = EquilibriumResult(alpha, gamma, residual, paths.path_ids, solver, tols)
    result.diagnostics = {
        "c0_estimate": solver.coercivity.c0_estimate,
        "coercivity_warnings": list(solver.coercivity.warnings),
        "max_foc_residual": result.max_foc_residual,
        "sup_slice_norm_B": sup_slice_norm(spec.B),
        "sup_slice_norm_Bbar": sup_slice_norm(spec.Bbar),
        "timings": dict(solver.timings, solve_s=time.perf_counter() - t0),
    }
    if check:
        bad = np.nonzero(residual > tols)[0]
        if bad.size:
            p = bad[np.argmax(residual[bad] - tols[bad])]
            raise SolverInconsistency(
                f"FOC residual {residual[p]:.3e} exceeds tolerance {tols[p]:.3e} on path {int(paths.path_ids[p])}")
    return result


def deterministic_oracle(spec: FiniteGameSpec, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense solve of ``(2 Lam + M_B + M_Bbar*) a = b`` for deterministic ``b`` (shape (N, n_t))."""
    if b is None:
        if not spec.noise.is_deterministic:
            raise InvalidArgument("the dense oracle needs deterministic noise")
        b = spec.noise.drift
    N, nt = spec.N, spec.grid.n_t
    D = np.diag(np.tile(2.0 * spec.Lambda, nt)) + spec.sym_operator().matrix
    return _unflat(np.linalg.solve(D, _flat(np.asarray(b, dtype=float))), N)


def foc_residual(spec: FiniteGameSpec, alpha: np.ndarray, b: np.ndarray, cond_alpha=None) -> float:
    """Sup-norm defect of the FOC system for a candidate profile on one path.

    ``alpha`` and ``b`` have shape (N, n_t). ``cond_alpha(t_index)`` returns
    ``E_t[alpha]`` as an (N, n_t) array; when omitted ``alpha`` is treated as
    deterministic (``E_t[alpha_s] = alpha_s``).
    """
    N, nt = spec.N, spec.grid.n_t
    MB = kernel_to_operator(spec.B).matrix
    MBa = kernel_to_operator(adjoint(spec.Bbar)).matrix
    a = _flat(np.asarray(alpha, dtype=float))
    res = np.tile(2.0 * spec.Lambda, nt) * a - _flat(np.asarray(b, dtype=float)) + MB @ a
    last = slice((nt - 1) * N, nt * N)
    res[last] += MBa[last, last] @ a[last]
    for j in range(nt - 1):
        rows = slice(j * N, (j + 1) * N)
        fut = slice((j + 1) * N, nt * N)
        ca = a if cond_alpha is None else _flat(np.asarray(cond_alpha(j), dtype=float))
        res[rows] += MBa[rows, rows] @ a[rows] + MBa[rows, fut] @ ca[fut]
    return float(np.abs(res).max())


# ---------------------------------------------------------------------------
# Objectives and Nash gap


def _bilinear(f: np.ndarray, Kop: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """``<f, K g>`` per path for flattened f, g of shape (P, m) and operator matrix Kop."""
    return dt * np.einsum("pm,pm->p", f, g @ Kop.T)


def objective_values(spec: FiniteGameSpec, alpha: np.ndarray, b_values: np.ndarray, player: int,
                     cross_b_values: Optional[np.ndarray] = None, c_values=None) -> np.ndarray:
    """Pathwise quadrature of player ``player``'s objective for profiles ``alpha`` (P, N, n_t)."""
    N, nt, dt = spec.N, spec.grid.n_t, spec.grid.dt
    i = int(player)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 2:
        alpha = alpha[None]
    b_values = np.asarray(b_values, dtype=float)
    if b_values.ndim == 2:
        b_values = b_values[None]
    ai = alpha[:, i, :]
    lam = spec.Lambda[i]
    # -<a^i, B^ij a^j> over all j, including the self term B^ii
    Bi = spec.B.values[:, :, i, :]  # (nt, nt, N)
    Ba = dt * np.tensordot(alpha, Bi, axes=([1, 2], [2, 1]))
    J = -lam * dt * np.sum(ai * ai, axis=1) - dt * np.sum(ai * Ba, axis=1)
    # -<a^j, Bbar^ji a^i> for j != i
    Bb = spec.Bbar.values[:, :, :, i]  # (nt, nt, N)
    Bba = dt * np.tensordot(ai, Bb, axes=([1], [1])).transpose(0, 2, 1)
    mask = np.ones(N, dtype=bool)
    mask[i] = False
    J -= dt * np.sum(alpha[:, mask, :] * Bba[:, mask, :], axis=(1, 2))
    if spec.C_kernels is not None and i in spec.C_kernels:
        Cv = spec.C_kernels[i].values.copy()
        Cv[:, :, i, :] = 0.0
        Cv[:, :, :, i] = 0.0
        Ca = dt * np.tensordot(alpha, Cv, axes=([1, 2], [3, 1])).transpose(0, 2, 1)
        J -= dt * np.sum(alpha * Ca, axis=(1, 2))
    J += dt * np.sum(b_values[:, i, :] * ai, axis=1)
    if cross_b_values is not None:
        cb = np.asarray(cross_b_values, dtype=float).reshape(alpha.shape[0], N, N, nt)[:, i]
        J += dt * np.sum(cb[:, mask, :] * alpha[:, mask, :], axis=(1, 2))
    if c_values is not None:
        c = np.asarray(c_values, dtype=float)
        J += c[..., i] if c.ndim else c
    return J


def objective_value(spec: FiniteGameSpec, alpha: np.ndarray, path, player: int) -> float:
    """Objective of one path (a :class:`NoisePath`) including optional cross terms."""
    cb = None
    if spec.cross_b is not None:
        cb = spec.cross_b.realize(path.drivers)
    c = None
    if spec.c_terms is not None:
        c = np.asarray(spec.c_terms, dtype=float)
        if c.ndim == 2:
            c = c[path.path_id]
    return float(objective_values(spec, alpha, path.values, player, cb, c)[0])


def _ensemble_objectives(spec, alpha, ens, player):
    cb = spec.cross_b.realize(ens.drivers) if spec.cross_b is not None else None
    c = None
    if spec.c_terms is not None:
        c = np.asarray(spec.c_terms, dtype=float)
        if c.ndim == 2:
            c = c[ens.path_ids]
    return objective_values(spec, alpha, ens.values, player, cb, c)


def random_adapted_deviation(rng: np.random.Generator, model: NoiseModel, drivers: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Adapted perturbation ``h_t = g(t) + sum_d k_d(t) M^d_t`` with random smooth g, k.

    Returns an array (n_paths, n_t); ``h_t`` depends on drivers at time t only.
    """
    nt = model.grid.n_t
    x = model.grid.points / model.grid.T
    basis = np.stack([np.ones(nt), x, np.sin(np.pi * x), np.cos(np.pi * x)])
    g = rng.standard_normal(4) @ basis
    h = np.broadcast_to(g, (drivers.shape[0], nt)).copy()
    if model.n_drivers:
        k = rng.standard_normal((model.n_drivers, 4)) @ basis
        h += np.einsum("dk,pdk->pk", k, drivers)
    return scale * h


@dataclass
class NashGapReport:
    max_gap: float
    max_z: float
    gaps: np.ndarray
    stderrs: np.ndarray
    n_probe: int
    n_paths: int

    def to_dict(self) -> dict:
        return {"max_gap": self.max_gap, "max_z": self.max_z, "n_probe": self.n_probe,
                "n_paths": self.n_paths}


def nash_gap(spec: FiniteGameSpec, result: EquilibriumResult, paths: NoiseEnsemble, n_probe: int = 20,
             seed: int = 0, scale: float = 1.0, players=None) -> NashGapReport:
    """Largest ensemble-mean improvement ``J(beta; a^-i) - J(a^i; a^-i)`` over random adapted deviations.

    ``gaps[i, q]`` and their standard errors are reported per player and probe;
    ``max_z`` is the largest gap in units of its Monte Carlo standard error.
    """
    rng = np.random.default_rng(seed)
    players = range(spec.N) if players is None else players
    alpha = result.alpha
    P = alpha.shape[0]
    gaps = np.zeros((spec.N, n_probe))
    ses = np.zeros((spec.N, n_probe))
    for i in players:
        base = _ensemble_objectives(spec, alpha, paths, i)
        for q in range(n_probe):
            h = random_adapted_deviation(rng, spec.noise, paths.drivers, scale)
            dev = alpha.copy()
            dev[:, i, :] += h
            diff = _ensemble_objectives(spec, dev, paths, i) - base
            gaps[i, q] = diff.mean()
            ses[i, q] = diff.std(ddof=1) / np.sqrt(P) if P > 1 else 0.0
    sel = gaps[list(players)]
    se_sel = ses[list(players)]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_sel > 0, sel / se_sel, np.where(sel > 0, np.inf, -np.inf))
    return NashGapReport(float(sel.max()), float(z.max()), gaps, ses, n_probe, P)
