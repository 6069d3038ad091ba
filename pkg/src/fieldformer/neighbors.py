"""Velocity-scaled neighbor retrieval over longitudinal grid observations.

The offset table lists integer displacements (di, dj, dk) from a query's nearest
lattice point, sorted by the scaled squared distance

    gamma_x^2 (di dx)^2 + gamma_y^2 (dj dy)^2 + gamma_t^2 (dk dt)^2

with ties broken lexicographically by (dk, di, dj). Gathering walks the table and
keeps the first ``m`` entries that land on an observed training point. The table
is truncated at the smallest distance that could reach outside its box, so any
gather that succeeds returns exactly the brute-force k nearest observations.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .simulators.grid import GridSpec

LOG_DIMS = ("x", "y", "t")


class NeighborError(ValueError):
    pass


@dataclass(frozen=True)
class VelocityScales:
    """Log-scales theta = (theta_x, theta_y, theta_t); gamma = exp(theta)."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.array(self.theta, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("log-scales must be finite")

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.theta)

    @classmethod
    def ones(cls, dims: int = 3) -> "VelocityScales":
        return cls(np.zeros(dims))

    @classmethod
    def cell_isotropic(cls, grid: GridSpec, time_weight: float = 1.0) -> "VelocityScales":
        """Scales under which one cell step costs the same along every axis."""
        return cls(np.log(np.array([1.0 / grid.dx, 1.0 / grid.dy, time_weight / grid.dt])))


def scaled_distance(zq, zi, s: VelocityScales) -> np.ndarray:
    """Sum_k gamma_k^2 (zq_k - zi_k)^2 over the spatial axes and time."""
    zq = np.asarray(zq, dtype=np.float64)
    zi = np.asarray(zi, dtype=np.float64)
    if zq.shape[-1] != s.theta.size or zi.shape[-1] != s.theta.size:
        raise NeighborError(f"coordinates need {s.theta.size} components, got {zq.shape[-1]} and {zi.shape[-1]}")
    return np.sum((s.gamma * (zq - zi)) ** 2, axis=-1)


def _offset_distance(di, dj, dk, gamma: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    # Shared by table construction and the brute-force oracle so that ties compare equal bit-for-bit.
    return ((gamma[0] * (di * spacing[0])) ** 2 + (gamma[1] * (dj * spacing[1])) ** 2
            + (gamma[2] * (dk * spacing[2])) ** 2)


def _axis_range(n: int, radius: int, periodic: bool) -> tuple[np.ndarray, bool]:
    """Offsets along one spatial axis and whether they cover every reachable cell."""
    if periodic:
        lo, hi = -(n // 2), n - n // 2 - 1
        full = radius >= max(-lo, hi)
        return np.arange(max(lo, -radius), min(hi, radius) + 1), full
    full = radius >= n - 1
    r = min(radius, n - 1)
    return np.arange(-r, r + 1), full


@dataclass(frozen=True)
class Caps:
    spatial_radius: int
    temporal_depth: int = 512

    @classmethod
    def default(cls, grid: GridSpec) -> "Caps":
        return cls(spatial_radius=max(grid.nx, grid.ny) // 2 if grid.periodic else max(grid.nx, grid.ny) - 1,
                   temporal_depth=512)


@dataclass
class OffsetTable:
    offsets: np.ndarray          # (L, 3) int: di, dj, dk
    dist: np.ndarray             # (L,) nondecreasing
    theta: np.ndarray            # scales snapshot used to build the table
    caps: Caps
    cutoff: float                # entries at or beyond this distance were dropped
    build_seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.dist)

    @property
    def scales(self) -> VelocityScales:
        return VelocityScales(self.theta)


def build_offset_table(s: VelocityScales, grid: GridSpec, caps: Caps | None = None) -> OffsetTable:
    caps = caps or Caps.default(grid)
    if caps.spatial_radius < 0 or caps.temporal_depth < 0:
        raise NeighborError("offset table is empty; enlarge the caps")
    start = time.perf_counter()
    di, full_i = _axis_range(grid.nx, caps.spatial_radius, grid.periodic)
    dj, full_j = _axis_range(grid.ny, caps.spatial_radius, grid.periodic)
    depth = min(caps.temporal_depth, grid.nt - 1)
    dk = np.arange(-depth, depth + 1)
    full_k = depth >= grid.nt - 1
    gamma = s.gamma
    sp = grid.spacing
    cutoff = np.inf
    if not full_i:
        cutoff = min(cutoff, _offset_distance(di.max() + 1, 0, 0, gamma, sp))
    if not full_j:
        cutoff = min(cutoff, _offset_distance(0, dj.max() + 1, 0, gamma, sp))
    if not full_k:
        cutoff = min(cutoff, _offset_distance(0, 0, depth + 1, gamma, sp))
    I, J, K = np.meshgrid(di, dj, dk, indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    d = _offset_distance(I, J, K, gamma, sp)
    keep = d < cutoff
    I, J, K, d = I[keep], J[keep], K[keep], d[keep]
    if d.size == 0:
        raise NeighborError("offset table is empty; enlarge the caps")
    order = np.lexsort((J, I, K, d))
    offsets = np.stack([I[order], J[order], K[order]], axis=1).astype(np.int32)
    return OffsetTable(offsets, d[order], s.theta.copy(), caps, float(cutoff), time.perf_counter() - start)


def needs_refresh(old: VelocityScales, new: VelocityScales, tau: float) -> bool:
    return bool(np.max(np.abs(new.theta - old.theta)) > tau)


@dataclass
class ObservationIndex:
    """Occupancy of the (nt, nx, ny) lattice by training observations."""

    grid: GridSpec
    cells: np.ndarray            # (M, 2)
    values: np.ndarray           # (M, nt, q)
    mask: np.ndarray             # (M, nt) bool
    occ: np.ndarray = field(init=False)
    sensor_of_cell: np.ndarray = field(init=False)
    prev_obs: np.ndarray = field(init=False)
    next_obs: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.grid
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.sensor_of_cell = np.full((g.nx, g.ny), -1, dtype=np.int64)
        self.sensor_of_cell[self.cells[:, 0], self.cells[:, 1]] = np.arange(len(self.cells))
        self.occ = np.zeros((g.nt, g.nx, g.ny), dtype=bool)
        s, k = np.nonzero(self.mask)
        self.occ[k, self.cells[s, 0], self.cells[s, 1]] = True
        any_t = self.mask.any(axis=0)
        idx = np.arange(g.nt)
        prev = np.where(any_t, idx, -1)
        self.prev_obs = np.maximum.accumulate(prev)
        nxt = np.where(any_t, idx, g.nt + 10 ** 9)
        self.next_obs = np.minimum.accumulate(nxt[::-1])[::-1]

    @classmethod
    def from_dataset(cls, sd, grid: GridSpec, which: str = "train", noisy: bool = True) -> "ObservationIndex":
        mask = {"train": sd.train_mask, "all": np.ones_like(sd.train_mask), "test": ~sd.train_mask}[which]
        return cls(grid, sd.cells, sd.noisy if noisy else sd.clean, mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def snap(self, queries: np.ndarray) -> np.ndarray:
        """Nearest lattice indices (i, j, k) for physical queries (..., 3)."""
        g = self.grid
        q = np.asarray(queries, dtype=np.float64)
        i = np.rint((q[..., 0] - g.x0) / g.dx).astype(np.int64)
        j = np.rint((q[..., 1] - g.y0) / g.dy).astype(np.int64)
        k = np.clip(np.rint((q[..., 2] - g.t0) / g.dt).astype(np.int64), 0, g.nt - 1)
        if g.periodic:
            i %= g.nx
            j %= g.ny
        else:
            i = np.clip(i, 0, g.nx - 1)
            j = np.clip(j, 0, g.ny - 1)
        return np.stack([i, j, k], axis=-1)

    def nearest_gap(self, k: np.ndarray, limit: np.ndarray) -> np.ndarray:
        """Temporal distance from slice ``k`` to the closest observed slice at or before ``limit``."""
        g = self.grid
        lim = np.minimum(limit, g.nt - 1)
        before = self.prev_obs[np.clip(np.minimum(k, lim), 0, g.nt - 1)]
        before = np.where((lim >= 0) & (before >= 0), before, -(10 ** 9))
        after = self.next_obs[k]
        after = np.where(after <= lim, after, 10 ** 9 + g.nt)
        return np.minimum(k - before, after - k)


@dataclass
class NeighborSet:
    """``m`` neighbors per query; leading batch axis when gathered in bulk."""

    deltas: np.ndarray           # (..., m, 3) neighbor minus query, physical units
    values: np.ndarray           # (..., m, q)
    sensor: np.ndarray           # (..., m)
    time_index: np.ndarray       # (..., m)
    offsets: np.ndarray          # (..., m, 3) lattice offsets from the snapped query
    dist: np.ndarray             # (..., m)
    walk: np.ndarray | None = None   # table entries examined per query
    query: np.ndarray | None = None  # (..., 3) coordinates the deltas are relative to

    @property
    def m(self) -> int:
        return self.deltas.shape[-2]

    def __getitem__(self, b) -> "NeighborSet":
        return NeighborSet(self.deltas[b], self.values[b], self.sensor[b], self.time_index[b],
                           self.offsets[b], self.dist[b], None if self.walk is None else self.walk[b],
                           None if self.query is None else self.query[b])

    def permuted(self, perm: np.ndarray) -> "NeighborSet":
        return NeighborSet(self.deltas[..., perm, :], self.values[..., perm, :], self.sensor[..., perm],
                           self.time_index[..., perm], self.offsets[..., perm, :], self.dist[..., perm], self.walk,
                           self.query)


def _assemble(index: ObservationIndex, queries: np.ndarray, snapped: np.ndarray, offsets: np.ndarray,
              dist: np.ndarray, walk=None) -> NeighborSet:
    g = index.grid
    ti = snapped[:, None, 0] + offsets[..., 0]
    tj = snapped[:, None, 1] + offsets[..., 1]
    tk = snapped[:, None, 2] + offsets[..., 2]
    ci, cj = (ti % g.nx, tj % g.ny) if g.periodic else (ti, tj)
    sensor = index.sensor_of_cell[ci, cj]
    if g.periodic:
        # measure from the unwrapped lattice point so queries outside [x0, x0 + Lx) see true deltas
        ti = np.rint((queries[:, None, 0] - g.x0) / g.dx).astype(np.int64) + offsets[..., 0]
        tj = np.rint((queries[:, None, 1] - g.y0) / g.dy).astype(np.int64) + offsets[..., 1]
    coords = np.stack([g.x0 + ti * g.dx, g.y0 + tj * g.dy, g.t0 + tk * g.dt], axis=-1)
    deltas = coords - queries[:, None, :]
    return NeighborSet(deltas, index.values[sensor, tk], sensor, tk, offsets, dist, walk, queries.copy())


def _prepare(queries, index: ObservationIndex, time_limit):
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[-1] != 3:
        raise NeighborError(f"queries need (x, y, t) coordinates, got shape {q.shape}")
    snapped = index.snap(q)
    if time_limit is None:
        limit = np.full(len(q), index.grid.nt - 1, dtype=np.int64)
    else:
        limit = np.broadcast_to(np.asarray(time_limit, dtype=np.int64), (len(q),)).copy()
    return q, single, snapped, limit


GATHER_BLOCK = 2048
GATHER_BUDGET = 1 << 21   # table entries examined per round across a block


def gather_neighbors(queries, index: ObservationIndex, tbl: OffsetTable, m: int,
                     exclude_cell: bool | np.ndarray = False, time_limit=None,
                     chunk: int = 256) -> NeighborSet:
    """Walk the offset table from each query's nearest lattice point.

    ``exclude_cell`` skips observations in the query's own spatial cell (per query
    when given as an array); ``time_limit`` keeps only observations with time index
    at or below the limit. Queries are processed in blocks to bound memory.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1 or len(q) <= GATHER_BLOCK:
        return _gather_block(q, index, tbl, m, exclude_cell, time_limit, chunk)
    B = len(q)
    excl = np.broadcast_to(np.asarray(exclude_cell, dtype=bool), (B,))
    lim = None if time_limit is None else np.broadcast_to(np.asarray(time_limit), (B,))
    parts = [_gather_block(q[s:s + GATHER_BLOCK], index, tbl, m, excl[s:s + GATHER_BLOCK],
                           None if lim is None else lim[s:s + GATHER_BLOCK], chunk)
             for s in range(0, B, GATHER_BLOCK)]
    return NeighborSet(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("deltas", "values", "sensor", "time_index", "offsets", "dist", "walk", "query")))


def _gather_block(queries, index, tbl, m, exclude_cell, time_limit, chunk) -> NeighborSet:
    q, single, snapped, limit = _prepare(queries, index, time_limit)
    g = index.grid
    B = len(q)
    excl = np.broadcast_to(np.asarray(exclude_cell, dtype=bool), (B,))
    L = len(tbl)
    gap = index.nearest_gap(snapped[:, 2], limit)
    if np.any(gap > g.nt):
        raise NeighborError("no observations satisfy the time limit")
    gamma = tbl.scales.gamma
    start = np.searchsorted(tbl.dist, _offset_distance(0, 0, gap, gamma, g.spacing), side="left")
    ptr = start.astype(np.int64)
    found = np.zeros(B, dtype=np.int64)
    picked = np.full((B, m), -1, dtype=np.int64)
    active = np.arange(B)
    size = chunk
    off = tbl.offsets
    while active.size:
        if np.any(ptr[active] >= L):
            raise NeighborError(f"fewer than m={m} observations within the table caps; enlarge the caps")
        pos = ptr[active, None] + np.arange(size)[None, :]
        inside = pos < L
        pos_c = np.minimum(pos, L - 1)
        o = off[pos_c]
        ti = snapped[active, None, 0] + o[..., 0]
        tj = snapped[active, None, 1] + o[..., 1]
        tk = snapped[active, None, 2] + o[..., 2]
        ok = inside & (tk >= 0) & (tk <= limit[active, None])
        if g.periodic:
            ti %= g.nx
            tj %= g.ny
        else:
            ok &= (ti >= 0) & (ti < g.nx) & (tj >= 0) & (tj < g.ny)
        tk_c = np.clip(tk, 0, g.nt - 1)
        ok &= index.occ[tk_c, np.clip(ti, 0, g.nx - 1), np.clip(tj, 0, g.ny - 1)]
        ex = excl[active]
        if ex.any():
            ok &= ~(ex[:, None] & (o[..., 0] == 0) & (o[..., 1] == 0))
        need = m - found[active]
        cum = np.cumsum(ok, axis=1)
        sel = ok & (cum <= need[:, None])
        rows, cols = np.nonzero(sel)
        dest = found[active][rows] + cum[rows, cols] - 1
        picked[active[rows], dest] = pos[rows, cols]
        found[active] += sel.sum(axis=1)
        done = found[active] >= m
        # Advance unfinished queries past the scanned chunk; finished ones stop at their last hit.
        last = np.where(done, 0, size)
        ptr[active] += last
        finished = active[done]
        if finished.size:
            hit_last = picked[finished, m - 1]
            ptr[finished] = hit_last + 1
        active = active[~done]
        size = min(size * 2, 1 << 16, max(chunk, GATHER_BUDGET // max(active.size, 1)))
    walk = ptr - start
    offsets = off[picked].astype(np.int64)
    ns = _assemble(index, q, snapped, offsets, tbl.dist[picked], walk)
    return ns[0] if single else ns


def brute_force_knn(queries, index: ObservationIndex, s: VelocityScales, m: int,
                    exclude_cell: bool | np.ndarray = False, time_limit=None) -> NeighborSet:
    """Exact scan over every training observation with the table's tie-break (oracle)."""
    q, single, snapped, limit = _prepare(queries, index, time_limit)
    g = index.grid
    sens, tk = np.nonzero(index.mask)
    if m > len(sens):
        raise NeighborError(f"m={m} exceeds the {len(sens)} available observations")
    gamma = s.gamma
    excl = np.broadcast_to(np.asarray(exclude_cell, dtype=bool), (len(q),))
    out_off = np.empty((len(q), m, 3), dtype=np.int64)
    out_d = np.empty((len(q), m))
    for b in range(len(q)):
        di = index.cells[sens, 0] - snapped[b, 0]
        dj = index.cells[sens, 1] - snapped[b, 1]
        if g.periodic:
            di = (di + g.nx // 2) % g.nx - g.nx // 2
            dj = (dj + g.ny // 2) % g.ny - g.ny // 2
        dk = tk - snapped[b, 2]
        keep = tk <= limit[b]
        if excl[b]:
            keep &= ~((di == 0) & (dj == 0))
        di, dj, dk = di[keep], dj[keep], dk[keep]
        if len(di) < m:
            raise NeighborError(f"m={m} exceeds the {len(di)} admissible observations")
        d = _offset_distance(di, dj, dk, gamma, g.spacing)
        order = np.lexsort((dj, di, dk, d))[:m]
        out_off[b] = np.stack([di[order], dj[order], dk[order]], axis=1)
        out_d[b] = d[order]
    ns = _assemble(index, q, snapped, out_off, out_d)
    return ns[0] if single else ns
