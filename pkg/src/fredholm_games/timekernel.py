"""Time grids, matrix-valued kernels on a grid and the integral-operator algebra.

Conventions
-----------
The horizon ``[0, T]`` is discretized by the left-endpoint grid
``t_k = k * dt`` for ``k = 0..n_t-1`` with ``dt = T / n_t``. Every integral
uses the left-rectangle rule ``int_0^T f ~ dt * sum_k f(t_k)``.

A function of time with values in ``R^n`` is stored as an array of shape
``(n_t, n)``. A kernel is stored as an array ``K[j, k, a, b]`` of shape
``(n_t, n_t, n, n)`` holding ``K_ab(t_j, t_k)``. The dense operator matrix
flattens ``(j, a)`` to ``j * n + a``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidArgument


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_t: int

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.n_t == other.n_t and abs(self.T - other.T) <= 1e-12 * max(self.T, other.T)

    def __hash__(self):
        return hash((round(self.T, 12), self.n_t))


def make_grid(T: float, n_t: int) -> TimeGrid:
    """Uniform left-endpoint grid on ``[0, T]`` with ``n_t`` points."""
    try:
        T = float(T)
    except (TypeError, ValueError):
        raise InvalidArgument(f"horizon must be a real number, got {T!r}")
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgument(f"horizon must be positive, got {T}")
    if int(n_t) != n_t or n_t < 2:
        raise InvalidArgument(f"n_t must be an integer >= 2, got {n_t}")
    return TimeGrid(T, int(n_t))


@dataclass(frozen=True, eq=False)
class KernelGrid:
    grid: TimeGrid
    values: np.ndarray
    is_volterra: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None, None]
        nt = self.grid.n_t
        if v.ndim != 4 or v.shape[0] != nt or v.shape[1] != nt or v.shape[2] != v.shape[3]:
            raise InvalidArgument(f"kernel values must have shape (n_t, n_t, n, n), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("kernel values must be finite")
        if self.is_volterra:
            upper = np.triu(np.ones((nt, nt), dtype=bool))
            if np.any(v[upper] != 0.0):
                raise InvalidArgument("Volterra kernel must vanish for k >= j")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[2]

    @property
    def n_t(self) -> int:
        return self.grid.n_t

    def __add__(self, other: "KernelGrid") -> "KernelGrid":
        _check_compatible(self, other)
        return KernelGrid(self.grid, self.values + other.values, self.is_volterra and other.is_volterra)

    def __sub__(self, other: "KernelGrid") -> "KernelGrid":
        _check_compatible(self, other)
        return KernelGrid(self.grid, self.values - other.values, self.is_volterra and other.is_volterra)

    def __neg__(self) -> "KernelGrid":
        return KernelGrid(self.grid, -self.values, self.is_volterra)

    def scale(self, c: float) -> "KernelGrid":
        return KernelGrid(self.grid, c * self.values, self.is_volterra)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Quadrature of ``t -> int K(t, s) f(s) ds``; ``f`` has shape (n_t, n) or (..., n_t, n)."""
        f = np.asarray(f, dtype=float)
        if f.ndim == 1 and self.n == 1:
            return self.apply(f[:, None])[:, 0]
        return self.grid.dt * np.einsum("jkab,...kb->...ja", self.values, f)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    grid: TimeGrid
    n: int
    matrix: np.ndarray

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return (self.matrix @ f.reshape(-1)).reshape(f.shape)


@dataclass(frozen=True)
class CoercivityReport:
    c0_estimate: float
    passed: bool
    margin: float
    tol: float = 0.0
    warnings: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"c0_estimate": self.c0_estimate, "passed": self.passed,
                "margin": self.margin, "tol": self.tol, "warnings": list(self.warnings)}


def _check_compatible(G: KernelGrid, H: KernelGrid) -> None:
    if G.grid != H.grid or G.n != H.n:
        raise InvalidArgument(
            f"kernel mismatch: grids ({G.grid.T}, {G.n_t}) vs ({H.grid.T}, {H.n_t}), "
            f"block dims {G.n} vs {H.n}")


def strict_lower_mask(n_t: int) -> np.ndarray:
    """Boolean mask of shape (n_t, n_t) that is True where ``k < j``."""
    return np.tril(np.ones((n_t, n_t), dtype=bool), -1)


def zero_kernel(grid: TimeGrid, n: int = 1, volterra: bool = True) -> KernelGrid:
    return KernelGrid(grid, np.zeros((grid.n_t, grid.n_t, n, n)), volterra)


def kernel_from_function(grid: TimeGrid, func: Callable, n: int = 1, volterra: bool = True) -> KernelGrid:
    """Sample ``func(t, s)`` (returning a scalar or an n x n matrix) on the grid.

    ``func`` is called with broadcast arrays ``t`` and ``s`` of shape (n_t, n_t)
    and must return an array of shape (n_t, n_t) or (n_t, n_t, n, n). For Volterra
    kernels the values with ``s >= t`` are discarded.
    """
    t = grid.points[:, None] * np.ones((1, grid.n_t))
    s = grid.points[None, :] * np.ones((grid.n_t, 1))
    v = np.asarray(func(t, s), dtype=float)
    if v.ndim == 0:
        v = np.full((grid.n_t, grid.n_t), float(v))
    if v.ndim == 2:
        v = v[:, :, None, None] * np.eye(n)
    v = np.array(np.broadcast_to(v, (grid.n_t, grid.n_t, n, n)))
    if volterra:
        v[~strict_lower_mask(grid.n_t)] = 0.0
    return KernelGrid(grid, v, volterra)


def kernel_to_operator(K: KernelGrid) -> OperatorMatrix:
    """Dense matrix ``M[(j,a),(k,b)] = K_ab(t_j, t_k) * dt``."""
    nt, n = K.n_t, K.n
    M = K.values.transpose(0, 2, 1, 3).reshape(nt * n, nt * n) * K.grid.dt
    return OperatorMatrix(K.grid, n, M)


def operator_to_kernel(M: OperatorMatrix, volterra: bool = False) -> KernelGrid:
    nt, n = M.grid.n_t, M.n
    v = M.matrix.reshape(nt, n, nt, n).transpose(0, 2, 1, 3) / M.grid.dt
    return KernelGrid(M.grid, v, volterra)


def adjoint(K: KernelGrid) -> KernelGrid:
    """Adjoint kernel ``K*(t, s) = K(s, t)^T``."""
    return KernelGrid(K.grid, K.values.transpose(1, 0, 3, 2), False)


def truncate(K: KernelGrid, t_index: int) -> KernelGrid:
    """Zero the kernel for second argument ``t_k <= t_{t_index}``."""
    if not 0 <= t_index < K.n_t:
        raise InvalidArgument(f"t_index {t_index} outside [0, {K.n_t})")
    v = np.array(K.values)
    v[:, : t_index + 1] = 0.0
    return KernelGrid(K.grid, v, K.is_volterra)


def star_product(G: KernelGrid, H: KernelGrid) -> KernelGrid:
    """``(G * H)(t, s) = int G(t, r) H(r, s) dr`` on the grid."""
    _check_compatible(G, H)
    v = G.grid.dt * np.einsum("jmab,mkbc->jkac", G.values, H.values, optimize=True)
    volterra = G.is_volterra and H.is_volterra
    if volterra:
        v[~strict_lower_mask(G.n_t)] = 0.0
    return KernelGrid(G.grid, v, volterra)


def volterra_resolvent(K: KernelGrid) -> KernelGrid:
    """Resolvent ``R`` with ``R = -K + K * R``.

    Then ``x = m - int R m`` solves ``x = m + int K x``. Computed row by row
    (forward substitution in the first time index).
    """
    if not K.is_volterra:
        raise InvalidArgument("volterra_resolvent requires a Volterra kernel")
    nt, dt = K.n_t, K.grid.dt
    Kv = K.values
    R = np.zeros_like(Kv)
    for j in range(1, nt):
        # only m < j contributes, and R[m] already known
        R[j] = -Kv[j] + dt * np.einsum("mab,mkbc->kac", Kv[j, :j], R[:j])
    R[~strict_lower_mask(nt)] = 0.0
    return KernelGrid(K.grid, R, True)


def inner(f: np.ndarray, g: np.ndarray, grid: TimeGrid) -> float:
    """``<f, g>_{L^2}`` by left-rectangle quadrature."""
    return float(grid.dt * np.sum(np.asarray(f) * np.asarray(g)))


def sup_slice_norm(K: KernelGrid) -> float:
    """Discrete ``max(sup_t ||K(t, .)||_{L^2}, sup_s ||K(., s)||_{L^2})``."""
    sq = np.sum(K.values ** 2, axis=(2, 3))
    rows = np.sqrt(K.grid.dt * sq.sum(axis=1)).max()
    cols = np.sqrt(K.grid.dt * sq.sum(axis=0)).max()
    return float(max(rows, cols))


def min_symmetric_eigenvalue(A: np.ndarray) -> float:
    S = 0.5 * (A + A.T)
    return float(scipy.linalg.eigvalsh(S, subset_by_index=[0, 0])[0])


def coercivity_check(sym_part: OperatorMatrix, lambda_diag: Sequence[float], tol: float = 1e-10) -> CoercivityReport:
    """Coercivity constant of ``B + Bbar* + 2 Lambda`` on the grid.

    ``sym_part`` discretizes ``B + Bbar*`` with the quadrature weight folded in.
    Since ``<f, K f> = dt f^T M f`` and ``<f, f> = dt f^T f``, the constant per
    unit L2 mass is the smallest eigenvalue of ``0.5 (M + M^T) + diag(2 lambda)``.
    ``lambda_diag`` has one entry per block component (broadcast over time) or
    one per grid row.
    """
    lam = np.asarray(lambda_diag, dtype=float).reshape(-1)
    n, nt = sym_part.n, sym_part.grid.n_t
    if lam.size == n:
        lam = np.tile(lam, nt)
    if lam.size != n * nt:
        raise InvalidArgument(f"lambda_diag needs {n} or {n * nt} entries, got {lam.size}")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidArgument("lambda entries must be strictly positive")
    A = sym_part.matrix + np.diag(2.0 * lam)
    c0 = min_symmetric_eigenvalue(A)
    passed = bool(c0 > tol)
    warnings = []
    if passed and c0 < 10 * tol:
        warnings.append(f"borderline coercivity: c0={c0:.3e} within 10x of tol={tol:.1e}")
    return CoercivityReport(c0, passed, c0 - tol, float(tol), tuple(warnings))


# ---------------------------------------------------------------------------
# Named closed-form kernels

def _as_matrix(x, n: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return a * np.eye(n)
    if a.shape != (n, n):
        raise InvalidArgument(f"expected scalar or {n}x{n} matrix, got shape {a.shape}")
    return a


def indicator_kernel(grid: TimeGrid, scale=1.0, n: int = 1) -> KernelGrid:
    """``scale * 1_{t > s}``."""
    S = _as_matrix(scale, n)
    return kernel_from_function(grid, lambda t, s: (t > s)[..., None, None] * S, n, True)


def constant_kernel(grid: TimeGrid, value=1.0, n: int = 1, volterra: bool = False) -> KernelGrid:
    V = _as_matrix(value, n)
    return kernel_from_function(grid, lambda t, s: np.ones_like(t)[..., None, None] * V, n, volterra)


def delay_measure_kernel(grid: TimeGrid, atoms: Sequence[float], weights: Sequence[float], scale=1.0, n: int = 1) -> KernelGrid:
    """``scale * 1_{t > s} nu([0, t - s])`` for the discrete measure ``nu = sum_k w_k delta_{tau_k}``."""
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if atoms.shape != weights.shape or np.any(atoms < 0):
        raise InvalidArgument("delay measure needs matching nonnegative atoms and weights")
    S = _as_matrix(scale, n)
    eps = 1e-12 * grid.T

    def f(t, s):
        lag = t - s
        mass = np.zeros_like(lag)
        for tau, w in zip(atoms, weights):
            mass += w * (tau <= lag + eps)
        return ((t > s) * mass)[..., None, None] * S

    return kernel_from_function(grid, f, n, True)


def exp_matrix_kernel(grid: TimeGrid, A, Bmat=None) -> KernelGrid:
    """``1_{t > s} exp(A (t - s)) Bmat``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    Bm = np.eye(n) if Bmat is None else _as_matrix(Bmat, n)
    nt, dt = grid.n_t, grid.dt
    lags = np.array([scipy.linalg.expm(A * (d * dt)) @ Bm for d in range(nt)])
    v = np.zeros((nt, nt, n, n))
    for j in range(1, nt):
        v[j, :j] = lags[j - np.arange(j)]
    return KernelGrid(grid, v, True)


KERNEL_REGISTRY = {
    "indicator": indicator_kernel,
    "constant": constant_kernel,
    "delay_measure": delay_measure_kernel,
    "exp_matrix": exp_matrix_kernel,
}


def kernel_from_config(grid: TimeGrid, cfg, n: int = 1) -> KernelGrid:
    """Build a kernel from a config entry.

    Accepted forms: ``{"name": <registry name>, "params": {...}}``,
    ``{"grid": nested list of shape (n_t, n_t[, n, n])[, "volterra": bool]}``,
    ``{"csv": path[, "volterra": bool]}``, or ``0`` / ``None`` for the zero kernel.
    """
    if cfg is None or (isinstance(cfg, (int, float)) and cfg == 0):
        return zero_kernel(grid, n)
    if not isinstance(cfg, dict):
        raise InvalidArgument(f"kernel config must be an object, got {type(cfg).__name__}")
    keys = set(cfg)
    if "name" in cfg:
        unknown = keys - {"name", "params"}
        if unknown:
            raise InvalidArgument(f"unknown kernel keys {sorted(unknown)}")
        name = cfg["name"]
        if name not in KERNEL_REGISTRY:
            raise InvalidArgument(f"unknown kernel name {name!r}; known: {sorted(KERNEL_REGISTRY)}")
        params = dict(cfg.get("params", {}))
        if name != "exp_matrix":
            params.setdefault("n", n)
        try:
            K = KERNEL_REGISTRY[name](grid, **params)
        except TypeError as exc:
            raise InvalidArgument(f"bad parameters for kernel {name!r}: {exc}")
    elif "grid" in cfg or "csv" in cfg:
        unknown = keys - {"grid", "csv", "volterra"}
        if unknown:
            raise InvalidArgument(f"unknown kernel keys {sorted(unknown)}")
        if "csv" in cfg:
            return read_kernel_csv(cfg["csv"], grid, bool(cfg.get("volterra", False)))
        K = KernelGrid(grid, np.asarray(cfg["grid"], dtype=float), bool(cfg.get("volterra", False)))
    else:
        raise InvalidArgument("kernel config needs 'name', 'grid' or 'csv'")
    if K.n != n:
        raise InvalidArgument(f"kernel block dim {K.n} does not match expected {n}")
    return K


def write_kernel_csv(K: KernelGrid, path) -> None:
    """Write ``K`` as rows ``j,k,a,b,value`` (nonzero entries only)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "k", "a", "b", "value"])
        for (j, k, a, b) in zip(*np.nonzero(K.values)):
            w.writerow([j, k, a, b, repr(float(K.values[j, k, a, b]))])


def read_kernel_csv(path, grid: TimeGrid, volterra: bool = False, n: int | None = None) -> KernelGrid:
    rows = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != ["j", "k", "a", "b", "value"]:
            raise InvalidArgument(f"kernel CSV header must be j,k,a,b,value, got {r.fieldnames}")
        for row in r:
            rows.append((int(row["j"]), int(row["k"]), int(row["a"]), int(row["b"]), float(row["value"])))
    if n is None:
        n = 1 + max([max(a, b) for (_, _, a, b, _) in rows], default=0)
    v = np.zeros((grid.n_t, grid.n_t, n, n))
    for j, k, a, b, x in rows:
        v[j, k, a, b] = x
    return KernelGrid(grid, v, volterra)
