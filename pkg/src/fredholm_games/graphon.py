"""Graphon games on a finite label grid, solved mode by mode.

Labels sit at cell midpoints ``u_j = (j + 1/2) / n_u`` with weight ``1/n_u``,
so the graphon operator is ``(W f)(u_j) = (1/n_u) sum_k W[j, k] f(u_k)``.
Projecting the equilibrium system onto the eigenfunctions ``phi_i`` of ``W``
gives one scalar Fredholm equation per mode,

    2 lam a^i_t = b~^i_t - int_0^t K_i(t,s) a^i_s ds - int_t^T K_i(s,t) E_t[a^i_s] ds,

with ``K_i = A~ + theta_i B~``. Each is a one-player instance of the finite
game solver. Modes dropped by truncation are solved jointly with
``theta = 0`` on the orthogonal complement of the kept modes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import CoercivityError, InvalidArgument, SolverInconsistency
from .finite_game import FiniteGameSpec, FiniteSolver, default_tolerance, precompute
from .noise import NoiseEnsemble, NoiseModel
from .timekernel import (CoercivityReport, KernelGrid, TimeGrid, kernel_to_operator,
                         min_symmetric_eigenvalue, sup_slice_norm)


@dataclass(frozen=True, eq=False)
class GraphonGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise InvalidArgument(f"graphon values must be a square matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("graphon values must be finite")
        if not np.allclose(v, v.T, rtol=0, atol=1e-12):
            raise InvalidArgument("graphon values must be symmetric")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise InvalidArgument("graphon values must lie in [0, 1]")
        v = 0.5 * (v + v.T)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_u(self) -> int:
        return self.values.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return (np.arange(self.n_u) + 0.5) / self.n_u

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``(W f)(u)`` for ``f`` with labels on axis -2 (shape (..., n_u, n_t)) or a vector."""
        f = np.asarray(f, dtype=float)
        if f.ndim == 1:
            return self.values @ f / self.n_u
        return np.matmul(self.values, f) / self.n_u

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values ** 2)))


def graphon_from_function(func, n_u: int) -> GraphonGrid:
    u = (np.arange(n_u) + 0.5) / n_u
    return GraphonGrid(np.asarray(func(u[:, None], u[None, :]), dtype=float) * np.ones((n_u, n_u)))


def step_graphon(w: np.ndarray, n_u: int) -> GraphonGrid:
    """Step graphon of an N x N matrix on a label grid with ``n_u`` a multiple of N."""
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    if n_u % N:
        raise InvalidArgument(f"n_u={n_u} must be a multiple of N={N}")
    r = n_u // N
    return GraphonGrid(np.kron(w, np.ones((r, r))))


@dataclass(frozen=True, eq=False)
class SpectralModes:
    theta: np.ndarray
    phi: np.ndarray  # shape (M, n_u), (1/n_u) sum phi_i phi_j = delta_ij
    truncation_energy: float
    total_energy: float
    all_theta: np.ndarray
    order_by_magnitude: np.ndarray

    @property
    def rank(self) -> int:
        return self.theta.size

    @property
    def n_u(self) -> int:
        return self.phi.shape[1]

    @property
    def complete(self) -> bool:
        return self.rank == self.n_u

    def project(self, f: np.ndarray) -> np.ndarray:
        """Mode coefficients ``(1/n_u) sum_u phi_i(u) f(u)`` along the label axis -2."""
        return np.matmul(self.phi, f) / self.n_u

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return np.matmul(self.phi.T, coeffs)

    def complement_projector(self) -> np.ndarray:
        """Matrix of ``f -> f - sum_i phi_i <f, phi_i>`` on the label grid."""
        return np.eye(self.n_u) - self.phi.T @ self.phi / self.n_u


def spectral_decompose(W: GraphonGrid, energy_tol: float = 1e-6, max_rank: Optional[int] = None) -> SpectralModes:
    """Eigen-decomposition of the graphon operator with energy truncation.

    Modes are selected by decreasing ``|theta|`` until the squared mass of the
    dropped eigenvalues is at most ``energy_tol * ||W||_{L2}^2`` (or ``max_rank``
    modes are kept), then reported in decreasing signed order.
    """
    if not isinstance(W, GraphonGrid):
        W = GraphonGrid(W)
    n = W.n_u
    theta, vec = scipy.linalg.eigh(W.values / n)
    total = float(np.sum(theta ** 2))
    by_mag = np.argsort(-np.abs(theta), kind="stable")
    sq = theta[by_mag] ** 2
    dropped = total - np.concatenate([[0.0], np.cumsum(sq)])
    if energy_tol <= 0:
        keep = n
    else:
        keep = int(np.nonzero(dropped <= energy_tol * total)[0][0])
    if max_rank is not None:
        keep = min(keep, int(max_rank))
    kept = by_mag[:keep]
    kept = kept[np.argsort(-theta[kept], kind="stable")]
    phi = np.sqrt(n) * vec[:, kept].T
    # fix signs for reproducible output: first sizable entry positive
    for i in range(phi.shape[0]):
        k = np.argmax(np.abs(phi[i]) > 1e-8)
        if phi[i, k] < 0:
            phi[i] = -phi[i]
    dropped = float(total - np.sum(theta[kept] ** 2))
    return SpectralModes(theta[kept].copy(), phi, max(dropped, 0.0), total,
                         np.sort(theta)[::-1], by_mag)


@dataclass(frozen=True, eq=False)
class GraphonGameSpec:
    A_tilde: KernelGrid
    B_tilde: KernelGrid
    lam: float
    graphon: GraphonGrid
    noise: NoiseModel
    C_tilde: Optional[KernelGrid] = None
    b_star: Optional[NoiseModel] = None

    def __post_init__(self):
        if self.A_tilde.n != 1 or self.B_tilde.n != 1:
            raise InvalidArgument("A~ and B~ must be scalar kernels")
        if self.A_tilde.grid != self.B_tilde.grid:
            raise InvalidArgument("A~ and B~ must share the time grid")
        if not (self.A_tilde.is_volterra and self.B_tilde.is_volterra):
            raise InvalidArgument("A~ and B~ must be Volterra kernels")
        if not (float(self.lam) > 0):
            raise InvalidArgument("lambda must be positive")
        if self.noise.dim != self.graphon.n_u or self.noise.grid != self.A_tilde.grid:
            raise InvalidArgument("noise must live on the label grid (dim = n_u) and the game grid")

    @property
    def grid(self) -> TimeGrid:
        return self.A_tilde.grid

    def mode_kernel(self, theta: float) -> KernelGrid:
        return KernelGrid(self.grid, self.A_tilde.values + theta * self.B_tilde.values, True)


def graphon_noise(grid: TimeGrid, n_u: int, drift=0.0, sigma: float = 1.0, common_sigma: float = 0.0,
                  blocks: Optional[int] = None, kind: str = "brownian") -> NoiseModel:
    """Label noise with one idiosyncratic driver per label (or per block of
    ``n_u / blocks`` consecutive labels) and an optional common driver.

    ``drift`` may be a scalar, a function of ``(u, t)`` or an array (n_u, n_t).
    """
    u = (np.arange(n_u) + 0.5) / n_u
    if callable(drift):
        m = np.asarray(drift(u[:, None], grid.points[None, :]), dtype=float) * np.ones((n_u, grid.n_t))
    else:
        m = np.asarray(drift, dtype=float) * np.ones((n_u, grid.n_t))
    nb = n_u if blocks is None else int(blocks)
    if n_u % nb:
        raise InvalidArgument("n_u must be a multiple of the number of blocks")
    load = np.kron(np.eye(nb), np.ones((n_u // nb, 1))) * sigma
    kinds = [kind] * nb
    common = [False] * nb
    if common_sigma:
        load = np.hstack([load, np.full((n_u, 1), float(common_sigma))])
        kinds.append(kind)
        common.append(True)
    return NoiseModel(grid, m, load, tuple(kinds), tuple(common))


def coercivity_check_graphon(spec: GraphonGameSpec, modes: SpectralModes, tol: float = 1e-8) -> CoercivityReport:
    """``c_W``: smallest over modes of the minimal eigenvalue of
    ``lam + 0.5 (M_A + M_A^T) + theta_i 0.5 (M_B + M_B^T)`` plus a check that
    ``A~`` is nonnegative definite.

    Besides the kept modes the extreme eigenvalues of the full spectrum (and
    ``theta = 0`` when modes were dropped) are included; the form is concave
    in ``theta`` so this covers every eigenvalue.
    """
    MA = kernel_to_operator(spec.A_tilde).matrix
    MB = kernel_to_operator(spec.B_tilde).matrix
    SA = 0.5 * (MA + MA.T)
    SB = 0.5 * (MB + MB.T)
    lam = float(spec.lam)
    thetas = list(modes.theta)
    if modes.all_theta.size:
        thetas += [modes.all_theta.max(), modes.all_theta.min()]
    if not modes.complete:
        thetas.append(0.0)
    thetas = np.unique(np.asarray(thetas, dtype=float))
    n = MA.shape[0]
    c_w = min(min_symmetric_eigenvalue(lam * np.eye(n) + SA + th * SB) for th in thetas) if thetas.size else lam
    a_min = min_symmetric_eigenvalue(SA)
    # left-rectangle Volterra kernels miss the diagonal of the continuous form,
    # which shifts the discrete spectrum by at most dt * sup|A~|
    a_slack = tol + spec.grid.dt * float(np.abs(spec.A_tilde.values).max())
    a_ok = a_min >= -a_slack
    warnings = []
    if not a_ok:
        warnings.append(f"A~ is not nonnegative definite: min eigenvalue {a_min:.3e}")
    elif a_min < -tol:
        warnings.append(f"A~ nonnegative only up to grid slack: min eigenvalue {a_min:.3e}")
    if c_w > lam:
        warnings.append(f"c_W={c_w:.6g} clamped to lambda={lam:.6g}")
    c_rep = min(c_w, lam)
    passed = bool(c_w > tol and a_ok)
    if passed and c_w < 10 * tol:
        warnings.append(f"borderline coercivity: c_W={c_w:.3e}")
    return CoercivityReport(float(c_rep), passed, float(c_w - tol), float(tol), tuple(warnings))


def mode_noise(model: NoiseModel, modes: SpectralModes) -> NoiseModel:
    """Model of ``b~^i = (1/n_u) sum_u phi_i(u) b^u``; shares the label drivers."""
    return model.transform(modes.phi / modes.n_u)


def mode_paths(ens: NoiseEnsemble, model: NoiseModel) -> NoiseEnsemble:
    return NoiseEnsemble(model, ens.seed, ens.path_ids, ens.drivers)


@dataclass(eq=False)
class ModeSolution:
    theta: float
    solver: FiniteSolver
    alpha: np.ndarray  # (n_paths, n_t)
    gamma: np.ndarray
    foc_residual: np.ndarray


def solve_mode(C_i: KernelGrid, lam: float, paths: NoiseEnsemble, tol=None, solver: Optional[FiniteSolver] = None,
               theta: float = float("nan"), check: bool = True) -> ModeSolution:
    """Scalar equilibrium for one mode with ``K_i = A~ + theta_i B~`` (passed as ``C_i``).

    ``paths`` is a one-dimensional (or multi-dimensional, solved coordinate-wise)
    ensemble of mode noise. Equivalent to the normalized form with
    ``C~^i = K_i / (2 lam)``, ``D^i_t = I + C~^i_t + (C~^i_t)*`` and right-hand side
    ``b~^i / (2 lam)``.
    """
    model = paths.model
    if solver is None:
        one = FiniteGameSpec(C_i, C_i, np.array([lam]), model.transform(np.ones((1, model.dim)))
                             if model.dim != 1 else model)
        solver = precompute(one)
    alphas, gammas, res = [], [], []
    for i in range(model.dim):
        sub = model.transform(np.eye(model.dim)[i:i + 1]) if model.dim != 1 else model
        ens = NoiseEnsemble(sub, paths.seed, paths.path_ids, paths.drivers)
        g = solver.gamma(ens)
        a = solver.apply_inverse(g)
        r = solver.equilibrium_residual(ens, a, g) if check else np.zeros(len(ens))
        alphas.append(a[:, 0])
        gammas.append(g[:, 0])
        res.append(r)
    alpha = np.stack(alphas, axis=1)
    gamma = np.stack(gammas, axis=1)
    residual = np.max(np.stack(res, axis=1), axis=1)
    if check:
        tols = default_tolerance(paths.values) if tol is None else np.full(len(paths), float(tol))
        bad = np.nonzero(residual > tols)[0]
        if bad.size:
            p = bad[0]
            raise SolverInconsistency(f"mode FOC residual {residual[p]:.3e} exceeds {tols[p]:.3e} on path {int(paths.path_ids[p])}")
    if model.dim == 1:
        alpha, gamma = alpha[:, 0], gamma[:, 0]
    return ModeSolution(theta, solver, alpha, gamma, residual)


def solve_modes_batched(A_tilde: KernelGrid, B_tilde: KernelGrid, lam: float, thetas, model: NoiseModel,
                        drivers: np.ndarray, tol=None, check: bool = True) -> tuple:
    """Scalar equilibria for many modes at once; ``model`` has one coordinate per mode.

    Same discrete system as :func:`solve_mode` for the strictly Volterra
    kernels ``K_i = A~ + theta_i B~``, with the time recursion vectorized over
    modes: ``D = 2 lam + M + M^T``, ``L_t = M[(t,T], t]^T D_(t,T]^{-1}``,
    ``gamma_t = (b_t - L_t E_t[b_(t,T]]) / (2 lam)`` and
    ``(I + E) a = gamma``. Returns ``(alpha, residual)`` with alpha of shape
    (n_paths, n_modes, n_t) and the sup FOC defect per path.
    """
    thetas = np.asarray(thetas, dtype=float)
    n = thetas.size
    if model.dim != n:
        raise InvalidArgument(f"noise dimension {model.dim} differs from the number of modes {n}")
    if not (A_tilde.is_volterra and B_tilde.is_volterra):
        raise InvalidArgument("batched mode solve needs Volterra kernels")
    nt, dt = A_tilde.n_t, A_tilde.grid.dt
    lam2 = 2.0 * float(lam)
    M = (A_tilde.values[None, :, :, 0, 0] + thetas[:, None, None] * B_tilde.values[None, :, :, 0, 0]) * dt
    Mt = np.swapaxes(M, 1, 2)
    D = lam2 * np.eye(nt) + M + Mt
    L = np.zeros((n, nt, nt))
    E = np.zeros((n, nt, nt))
    for j in range(nt):
        if j < nt - 1:
            x = np.linalg.solve(D[:, j + 1:, j + 1:], M[:, j + 1:, j:j + 1])[..., 0]
            L[:, j, j + 1:] = x
            E[:, j, : j + 1] = -(np.einsum("nm,nmk->nk", x, M[:, j + 1:, : j + 1]) - M[:, j, : j + 1]) / lam2
        else:
            E[:, j, : j + 1] = M[:, j, : j + 1] / lam2
    G = (np.eye(nt) - L) / lam2
    Winv = np.linalg.inv(np.eye(nt) + E)
    if not np.all(np.isfinite(Winv)):
        raise SolverInconsistency("batched mode factorization produced non-finite values")
    m = model.drift  # (n, nt)
    k = model.loadings  # (n, nd, nt)
    dr = np.swapaxes(drivers, 0, 1)  # (nd, P, nt)
    gm = np.einsum("nts,ns->nt", G, m)
    gk = np.einsum("nts,nds->ndt", G, k)
    # mode-major layout (n, P, nt) so the time maps are batched matrix products
    gamma = np.broadcast_to(gm[:, None, :], (n, len(drivers), nt)).copy()
    for d in range(k.shape[1]):
        gamma += gk[:, d][:, None, :] * dr[d][None]
    alpha = np.matmul(gamma, np.swapaxes(Winv, 1, 2))
    res = np.zeros(len(drivers))
    if check:
        b = np.swapaxes(model.realize(drivers), 0, 1)
        # sum_{s > t} M[s, t] E_t[a_s] with E_t[gamma_r] = gm_r + gk_r M_t for r > t
        Z = np.matmul(Mt, Winv)
        Zl = np.tril(Z)
        Zu = Z - Zl
        r = lam2 * alpha - b + np.matmul(alpha, Mt) + np.matmul(gamma, np.swapaxes(Zl, 1, 2))
        r += np.einsum("nts,ns->nt", Zu, gm)[:, None, :]
        zk = np.einsum("nts,nds->ndt", Zu, gk)
        for d in range(k.shape[1]):
            r += zk[:, d][:, None, :] * dr[d][None]
        res = np.abs(np.swapaxes(r, 0, 1)).reshape(len(drivers), -1).max(axis=1)
        tols = default_tolerance(np.swapaxes(b, 0, 1)) if tol is None else np.full(len(drivers), float(tol))
        bad = np.nonzero(res > tols)[0]
        if bad.size:
            p = bad[0]
            raise SolverInconsistency(f"mode FOC residual {res[p]:.3e} exceeds {tols[p]:.3e} on path {p}")
    return np.swapaxes(alpha, 0, 1), res


@dataclass(eq=False)
class GraphonResult:
    field: np.ndarray  # (n_paths, n_u, n_t)
    modes: SpectralModes
    mode_alpha: np.ndarray  # (n_paths, M, n_t)
    mode_residual: np.ndarray  # (n_paths,)
    coercivity: CoercivityReport
    path_ids: np.ndarray
    remainder: Optional[np.ndarray] = None
    foc_residual: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    solvers: list = field(default_factory=list)
    zero_solver: Optional[FiniteSolver] = None


def reconstruct(modes: SpectralModes, mode_alpha: np.ndarray) -> np.ndarray:
    """``a^u_t = sum_i phi_i(u) a^i_t`` for mode solutions of shape (n_paths, M, n_t)."""
    return modes.reconstruct(mode_alpha)


def solve_graphon(spec: GraphonGameSpec, paths: NoiseEnsemble, energy_tol: float = 1e-6,
                  max_rank: Optional[int] = None, modes: Optional[SpectralModes] = None,
                  tol=None, coercivity_tol: float = 1e-8, check: bool = True,
                  full_residual: bool = False) -> GraphonResult:
    """Equilibrium field of the graphon game for every path."""
    t0 = time.perf_counter()
    if modes is None:
        modes = spectral_decompose(spec.graphon, energy_tol, max_rank)
    report = coercivity_check_graphon(spec, modes, coercivity_tol)
    if not report.passed:
        raise CoercivityError(f"graphon coercivity check failed: c_W={report.margin + report.tol:.6g}; "
                              + "; ".join(report.warnings))
    mmodel = mode_noise(spec.noise, modes)
    P, nt = len(paths), spec.grid.n_t
    mode_alpha = np.zeros((P, modes.rank, nt))
    mode_res = np.zeros(P)
    solvers = []
    for i, th in enumerate(modes.theta):
        sub = mmodel.transform(np.eye(modes.rank)[i:i + 1])
        ens = NoiseEnsemble(sub, paths.seed, paths.path_ids, paths.drivers)
        sol = solve_mode(spec.mode_kernel(th), spec.lam, ens, tol, theta=float(th), check=check)
        mode_alpha[:, i] = sol.alpha
        mode_res = np.maximum(mode_res, sol.foc_residual)
        solvers.append(sol.solver)
    field_ = reconstruct(modes, mode_alpha)
    remainder = None
    zero_solver = None
    if not modes.complete:
        rmodel = spec.noise.transform(modes.complement_projector())
        rens = NoiseEnsemble(rmodel, paths.seed, paths.path_ids, paths.drivers)
        sol = solve_mode(spec.mode_kernel(0.0), spec.lam, rens, tol, theta=0.0, check=check)
        remainder = sol.alpha
        zero_solver = sol.solver
        mode_res = np.maximum(mode_res, sol.foc_residual)
        field_ = field_ + remainder
    res = GraphonResult(field_, modes, mode_alpha, mode_res, report, paths.path_ids, remainder,
                        solvers=solvers, zero_solver=zero_solver)
    if full_residual:
        res.foc_residual = graphon_foc_residual(spec, res, paths)
    res.diagnostics = {
        "c_W": report.c0_estimate,
        "coercivity_warnings": list(report.warnings),
        "rank": modes.rank,
        "truncation_energy": modes.truncation_energy,
        "max_mode_foc_residual": float(mode_res.max()) if P else 0.0,
        "sup_slice_norm": float(sup_slice_norm(spec.A_tilde) + sup_slice_norm(spec.B_tilde)),
        "timings": {"solve_s": time.perf_counter() - t0},
    }
    if res.foc_residual is not None:
        res.diagnostics["max_foc_residual"] = float(res.foc_residual.max())
    return res


def _conditional_alpha_all(solver: FiniteSolver, ens: NoiseEnsemble, gamma: np.ndarray) -> np.ndarray:
    """``E_t[a_s]`` for a scalar mode: array (n_paths, n_t [t], n_t [s])."""
    nt = solver.spec.grid.n_t
    P = len(ens)
    X = np.empty((P, nt, nt))
    tri = np.tril(np.ones((nt, nt), dtype=bool))  # s <= t
    for j in range(nt):
        Eb = ens.conditional_expectation(j)[:, 0, :]
        X[:, j, :] = Eb @ solver.G.T
    X = np.where(tri[None], gamma[:, None, :], X)
    Y = scipy.linalg.lu_solve(solver.W_lu, X.reshape(P * nt, nt).T).T
    return Y.reshape(P, nt, nt)


def graphon_foc_residual(spec: GraphonGameSpec, result: GraphonResult, paths: NoiseEnsemble,
                         field_override: Optional[np.ndarray] = None) -> np.ndarray:
    """Sup over (u, t) of the defect of the label-space FOC system, per path.

    The graphon integral uses label-grid quadrature and the future terms use
    ``E_t[a^u_s]`` reconstructed from the modes' affine representation. With
    ``field_override`` the given field is checked instead, treating it as
    known in advance (``E_t[a_s] = a_s``), which is exact for deterministic
    data.
    """
    nt = spec.grid.n_t
    MA = kernel_to_operator(spec.A_tilde).matrix
    MB = kernel_to_operator(spec.B_tilde).matrix
    lam = float(spec.lam)
    b = paths.values
    a = result.field if field_override is None else np.asarray(field_override, dtype=float)
    Wa = spec.graphon.apply(a)
    res = 2 * lam * a - b + a @ MA.T + Wa @ MB.T
    # future terms: sum_{s > t} dt K(s, t) E_t[x_s] with K = A~ (on a) and B~ (on W a)
    if field_override is not None:
        cond = np.broadcast_to(a[:, :, None, :], a.shape[:2] + (nt, nt))
    else:
        parts = []
        mmodel = mode_noise(spec.noise, result.modes)
        for i, solver in enumerate(result.solvers):
            sub = mmodel.transform(np.eye(result.modes.rank)[i:i + 1])
            ens = NoiseEnsemble(sub, paths.seed, paths.path_ids, paths.drivers)
            g = solver.gamma(ens)
            parts.append(_conditional_alpha_all(solver, ens, g[:, 0]))
        cond = np.einsum("iu,pits->puts", result.modes.phi, np.stack(parts, axis=1), optimize=True) if parts else \
            np.zeros(a.shape[:2] + (nt, nt))
        if result.zero_solver is not None:
            rmodel = spec.noise.transform(result.modes.complement_projector())
            zs = result.zero_solver
            rem = np.zeros_like(cond)
            for u in range(spec.graphon.n_u):
                sub = rmodel.transform(np.eye(spec.graphon.n_u)[u:u + 1])
                ens = NoiseEnsemble(sub, paths.seed, paths.path_ids, paths.drivers)
                g = zs.gamma(ens)
                rem[:, u] = _conditional_alpha_all(zs, ens, g[:, 0])
            cond = cond + rem
    fut = np.triu(np.ones((nt, nt), dtype=bool), 1)  # s > t
    MAf = np.where(fut, MA.T, 0.0)  # [t, s] -> dt A(s, t) for s > t
    MBf = np.where(fut, MB.T, 0.0)
    Wc = spec.graphon.apply(cond.reshape(cond.shape[0], cond.shape[1], -1)).reshape(cond.shape)
    res = res + np.einsum("ts,puts->put", MAf, cond, optimize=True) + np.einsum("ts,puts->put", MBf, Wc, optimize=True)
    return np.abs(res).reshape(res.shape[0], -1).max(axis=1)
