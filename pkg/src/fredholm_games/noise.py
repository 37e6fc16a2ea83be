"""Martingale-affine noise processes with closed-form conditional expectations.

A model of dimension ``dim`` driven by ``n_drivers`` martingales ``M^d`` is

    b^i_t = m_i(t) + sum_d sigma_{i,d}(t) M^d_t,

so that ``E_t[b^i_s] = m_i(s) + sum_d sigma_{i,d}(s) M^d_t`` for ``s >= t``.
Two driver kinds are supported: ``brownian`` (``M_0 = 0``, independent
Gaussian increments of variance ``dt``) and ``constant_random`` (a standard
normal variable revealed at time 0 and constant afterwards). Brownian drivers
may instead be given correlated, time-varying Gaussian increments through
``increments[k]`` (an (n_drivers, n_drivers) factor applied to standard
normals on step ``k -> k + 1``); they stay martingales.

Each path ``p`` draws its variates from a Philox generator keyed by the
``SeedSequence([seed, p])``, so ensembles do not depend on evaluation order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidArgument, UnsupportedNoise
from .timekernel import TimeGrid

DRIVER_KINDS = ("brownian", "constant_random")


@dataclass(frozen=True, eq=False)
class NoiseModel:
    grid: TimeGrid
    drift: np.ndarray
    loadings: np.ndarray
    driver_kinds: tuple = ()
    common_mask: tuple = ()
    increments: np.ndarray = None

    def __post_init__(self):
        nt = self.grid.n_t
        m = np.asarray(self.drift, dtype=float)
        if m.ndim == 1:
            m = np.repeat(m[:, None], nt, axis=1)
        if m.ndim != 2 or m.shape[1] != nt:
            raise InvalidArgument(f"drift must have shape (dim, n_t={nt}), got {m.shape}")
        dim = m.shape[0]
        s = np.asarray(self.loadings, dtype=float)
        if s.size == 0:
            s = np.zeros((dim, 0, nt))
        if s.ndim == 2:
            s = np.repeat(s[:, :, None], nt, axis=2)
        if s.ndim != 3 or s.shape[0] != dim or s.shape[2] != nt:
            raise InvalidArgument(f"loadings must have shape (dim, n_drivers, n_t), got {s.shape}")
        nd = s.shape[1]
        kinds = tuple(self.driver_kinds) if self.driver_kinds else ("brownian",) * nd
        common = tuple(bool(c) for c in self.common_mask) if self.common_mask else (False,) * nd
        if len(kinds) != nd or len(common) != nd:
            raise InvalidArgument("driver_kinds and common_mask need one entry per driver")
        for k in kinds:
            if k not in DRIVER_KINDS:
                raise UnsupportedNoise(f"driver kind {k!r} has no closed-form conditional expectation")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise InvalidArgument("drift and loadings must be finite")
        if self.increments is not None:
            inc = np.asarray(self.increments, dtype=float)
            if inc.shape != (nt - 1, nd, nd) or not np.all(np.isfinite(inc)):
                raise InvalidArgument(f"increments must be finite with shape ({nt - 1}, {nd}, {nd})")
            if any(k != "brownian" for k in kinds):
                raise InvalidArgument("increment factors need all drivers to be brownian")
            inc = inc.copy()
            inc.setflags(write=False)
            object.__setattr__(self, "increments", inc)
        m = m.copy()
        s = s.copy()
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "drift", m)
        object.__setattr__(self, "loadings", s)
        object.__setattr__(self, "driver_kinds", kinds)
        object.__setattr__(self, "common_mask", common)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_drivers(self) -> int:
        return self.loadings.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return self.n_drivers == 0 or not np.any(self.loadings)

    def realize(self, drivers: np.ndarray) -> np.ndarray:
        """Values ``b`` of shape (..., dim, n_t) from driver paths of shape (..., n_drivers, n_t)."""
        return self.drift + np.einsum("idk,...dk->...ik", self.loadings, drivers)

    def transform(self, A: np.ndarray) -> "NoiseModel":
        """The model of ``A b`` for a fixed matrix ``A`` of shape (new_dim, dim)."""
        A = np.asarray(A, dtype=float)
        return NoiseModel(self.grid, A @ self.drift, np.einsum("ji,idk->jdk", A, self.loadings),
                          self.driver_kinds, self.common_mask, self.increments)


@dataclass(frozen=True, eq=False)
class NoisePath:
    path_id: int
    drivers: np.ndarray
    values: np.ndarray
    seed: int


class NoiseEnsemble(Sequence):
    """Batch of simulated paths; indexing yields :class:`NoisePath` objects."""

    def __init__(self, model: NoiseModel, seed: int, path_ids: np.ndarray, drivers: np.ndarray):
        self.model = model
        self.seed = seed
        self.path_ids = np.asarray(path_ids, dtype=int)
        self.drivers = drivers
        self.values = model.realize(drivers)

    def __len__(self) -> int:
        return len(self.path_ids)

    def __getitem__(self, p):
        if isinstance(p, slice):
            idx = np.arange(len(self))[p]
            return NoiseEnsemble(self.model, self.seed, self.path_ids[idx], self.drivers[idx])
        return NoisePath(int(self.path_ids[p]), self.drivers[p], self.values[p], self.seed)

    def __iter__(self) -> Iterator[NoisePath]:
        for p in range(len(self)):
            yield self[p]

    def conditional_expectation(self, t_index: int) -> np.ndarray:
        """``E_t[b]`` for every path: array of shape (n_paths, dim, n_t)."""
        return conditional_expectation_batch(self.model, self.drivers, self.values, t_index)


def path_generator(seed: int, path_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_id)])))


def simulate_drivers(model: NoiseModel, path_ids, seed: int) -> np.ndarray:
    nd, nt, dt = model.n_drivers, model.grid.n_t, model.grid.dt
    out = np.zeros((len(path_ids), nd, nt))
    if nd == 0:
        return out
    brown = np.array([k == "brownian" for k in model.driver_kinds])
    for row, p in enumerate(path_ids):
        z = path_generator(seed, p).standard_normal((nd, nt))
        if model.increments is not None:
            out[row, :, 1:] = np.cumsum(np.einsum("kde,ek->dk", model.increments, z[:, 1:]), axis=1)
            continue
        inc = z[:, 1:] * np.sqrt(dt)
        out[row, brown, 1:] = np.cumsum(inc[brown], axis=1)
        out[row, ~brown, :] = z[~brown, :1]
    return out


def simulate(model: NoiseModel, n_paths: int, seed: int, first_path: int = 0) -> NoiseEnsemble:
    """Simulate paths ``first_path .. first_path + n_paths - 1``."""
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidArgument(f"n_paths must be a positive integer, got {n_paths}")
    ids = np.arange(first_path, first_path + int(n_paths))
    return NoiseEnsemble(model, int(seed), ids, simulate_drivers(model, ids, seed))


def conditional_expectation_batch(model: NoiseModel, drivers: np.ndarray, values: np.ndarray, t_index: int) -> np.ndarray:
    nt = model.grid.n_t
    if not 0 <= t_index < nt:
        raise InvalidArgument(f"t_index {t_index} outside [0, {nt})")
    Mt = drivers[..., t_index]
    out = model.drift + np.einsum("idk,...d->...ik", model.loadings, Mt)
    out[..., : t_index + 1] = values[..., : t_index + 1]
    return out


def conditional_expectation(path: NoisePath, model: NoiseModel, t_index: int) -> np.ndarray:
    """Matrix (dim, n_t) with entry ``(i, k) = E_{t}[b^i_{t_k}]``; realized values for ``k <= t_index``."""
    return conditional_expectation_batch(model, path.drivers, path.values, t_index)


def idiosyncratic_model(grid: TimeGrid, dim: int, drift=0.0, sigma: float = 1.0,
                        common_sigma: float = 0.0, kind: str = "brownian",
                        common_kind: str = "brownian") -> NoiseModel:
    """One independent driver per coordinate plus an optional common driver."""
    m = _expand(drift, (dim, grid.n_t), "drift")
    nd = dim + (1 if common_sigma else 0)
    s = np.zeros((dim, nd))
    s[:, :dim] = sigma * np.eye(dim) if sigma else 0.0
    kinds = [kind] * dim
    common = [False] * dim
    if common_sigma:
        s[:, dim] = common_sigma
        kinds.append(common_kind)
        common.append(True)
    return NoiseModel(grid, m, s, tuple(kinds), tuple(common))


def _expand(spec, shape, name):
    a = np.asarray(spec, dtype=float)
    try:
        if a.ndim == len(shape) - 1:
            a = np.repeat(a[..., None], shape[-1], axis=-1)
        return np.array(np.broadcast_to(a, shape))
    except ValueError:
        raise InvalidArgument(f"{name} of shape {np.shape(spec)} cannot be broadcast to {shape}")


def noise_from_config(grid: TimeGrid, cfg: dict, dim: int) -> NoiseModel:
    """Build a model from ``{"drift": ..., "drivers": [...], "loadings": ...}``.

    ``drift`` broadcasts to (dim, n_t); ``loadings`` broadcasts to
    (dim, n_drivers) or (dim, n_drivers, n_t). Instead of explicit drivers and
    loadings, ``{"idiosyncratic": sigma, "common": sigma0}`` builds one driver
    per coordinate plus a common one.
    """
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise InvalidArgument("noise config must be an object")
    allowed = {"drift", "drivers", "loadings", "idiosyncratic", "common", "kind", "increments"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidArgument(f"unknown noise keys {sorted(unknown)}")
    drift = _expand(cfg.get("drift", 0.0), (dim, grid.n_t), "drift")
    if "idiosyncratic" in cfg or "common" in cfg:
        if "drivers" in cfg or "loadings" in cfg or "increments" in cfg:
            raise InvalidArgument("use either idiosyncratic/common or drivers/loadings")
        kind = cfg.get("kind", "brownian")
        if kind not in DRIVER_KINDS:
            raise UnsupportedNoise(f"driver kind {kind!r} not supported")
        return idiosyncratic_model(grid, dim, drift, float(cfg.get("idiosyncratic", 0.0)),
                                   float(cfg.get("common", 0.0)), kind, kind)
    drivers = cfg.get("drivers", [])
    kinds, common = [], []
    for d in drivers:
        if not isinstance(d, dict) or set(d) - {"kind", "common"}:
            raise InvalidArgument(f"driver entry must be {{'kind', 'common'}}, got {d!r}")
        k = d.get("kind", "brownian")
        if k not in DRIVER_KINDS:
            raise UnsupportedNoise(f"driver kind {k!r} not supported")
        kinds.append(k)
        common.append(bool(d.get("common", False)))
    nd = len(kinds)
    load = cfg.get("loadings", 0.0)
    la = np.asarray(load, dtype=float)
    if la.ndim == 3:
        s = _expand(la, (dim, nd, grid.n_t), "loadings")
    else:
        s = _expand(la, (dim, nd), "loadings")
    inc = cfg.get("increments")
    return NoiseModel(grid, drift, s, tuple(kinds), tuple(common),
                      None if inc is None else np.asarray(inc, dtype=float))


def noise_to_config(model: NoiseModel) -> dict:
    """Explicit config of ``model``, read back exactly by :func:`noise_from_config`."""
    cfg = {"drift": model.drift.tolist(),
           "drivers": [{"kind": k, "common": bool(c)} for k, c in zip(model.driver_kinds, model.common_mask)],
           "loadings": model.loadings.tolist()}
    if model.increments is not None:
        cfg["increments"] = model.increments.tolist()
    return cfg


def write_paths_csv(ens: NoiseEnsemble, path) -> None:
    """Rows ``path_id,t,coordinate,value`` for the realized values."""
    pts = ens.model.grid.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "coordinate", "value"])
        for p, pid in enumerate(ens.path_ids):
            for i in range(ens.model.dim):
                for k in range(len(pts)):
                    w.writerow([int(pid), repr(float(pts[k])), i, repr(float(ens.values[p, i, k]))])
