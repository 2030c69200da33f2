"""Torus geometry: instance sampling, block partition, and the visibility graph."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .errors import DegenerateGrid, DegenerateGrid as _DG  # noqa: F401
from .errors import Disconnected, DomainError, InfeasibleRegime
from .model import Distribution, ModelSpec, unit_ball_volume

CHI_SAFETY = 0.99
DELTA_SAFETY = 0.99
_BISECT_TOL = 1e-9


def toroidal_distance(u: np.ndarray, v: np.ndarray, side: float) -> float:
    """Euclidean norm of per-coordinate wrapped differences on the torus."""
    diff = np.abs(np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64))
    diff = np.minimum(diff, side - diff)
    return float(np.sqrt(np.sum(diff * diff, axis=-1)))


@dataclass(frozen=True)
class Vertex:
    id: int
    position: np.ndarray


@dataclass
class Instance:
    """A sampled model instance: positions, ground-truth labels, observations.

    Observations are stored as a lexicographically sorted (u < v) pair array
    plus a symmetric CSR adjacency built on demand.
    """

    spec: ModelSpec
    positions: np.ndarray  # (N, d) float64 in [-side/2, side/2)
    truth: np.ndarray  # (N,) int64 actual label values
    pairs: np.ndarray  # (M, 2) int64, u < v, lexsorted
    values: np.ndarray  # (M,) float64
    seed: int

    @property
    def num_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def side(self) -> float:
        return self.spec.n ** (1.0 / self.spec.d)

    @property
    def radius(self) -> float:
        return math.log(self.spec.n) ** (1.0 / self.spec.d)

    @cached_property
    def truth_idx(self) -> np.ndarray:
        """Ground-truth labels as indices into spec.labels."""
        lut = {z: i for i, z in enumerate(self.spec.labels)}
        return np.array([lut[int(z)] for z in self.truth], dtype=np.int64)

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric CSR (indptr, neighbor, value), neighbors sorted per vertex."""
        n = self.num_vertices
        if self.pairs.size == 0:
            return (
                np.zeros(n + 1, dtype=np.int64),
                np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.float64),
            )
        src = np.concatenate([self.pairs[:, 0], self.pairs[:, 1]])
        dst = np.concatenate([self.pairs[:, 1], self.pairs[:, 0]])
        val = np.concatenate([self.values, self.values])
        order = np.lexsort((dst, src))
        src, dst, val = src[order], dst[order], val[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst, val

    def vertex(self, i: int) -> Vertex:
        return Vertex(id=i, position=self.positions[i])

    def neighbors(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        indptr, nbr, val = self.adjacency
        return nbr[indptr[u] : indptr[u + 1]], val[indptr[u] : indptr[u + 1]]

    def observation_count(self) -> int:
        return self.pairs.shape[0]


def _half_offsets(d: int) -> np.ndarray:
    """Offsets in {-1,0,1}^d that are lexicographically positive."""
    grids = np.meshgrid(*([np.array([-1, 0, 1])] * d), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    keep = []
    for o in offs:
        for c in o:
            if c > 0:
                keep.append(o)
                break
            if c < 0:
                break
    return np.array(keep, dtype=np.int64).reshape(-1, d)


def _bucket_pairs(positions: np.ndarray, side: float, radius: float) -> np.ndarray:
    """All unordered vertex pairs within `radius`, via a uniform bucket grid."""
    n, d = positions.shape
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    m = max(1, int(side // radius))
    cell_side = side / m
    coords = np.floor((positions + side / 2.0) / cell_side).astype(np.int64)
    np.clip(coords, 0, m - 1, out=coords)
    dims = np.full(d, m, dtype=np.int64)
    flat = coords[:, 0].copy()
    for a in range(1, d):
        flat = flat * m + coords[:, a]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    ncells = m**d
    ptr = np.zeros(ncells + 1, dtype=np.int64)
    np.add.at(ptr, flat + 1, 1)
    np.cumsum(ptr, out=ptr)
    offsets = _half_offsets(d)
    cap = max(1024, int(4 * n * (1 + 0.6 * unit_ball_volume(d) * radius**d)))
    while True:
        out = np.empty((cap, 2), dtype=np.int64)
        count = _kernels.collect_pairs(
            positions, flat, ptr, order, offsets, dims, side, radius, out
        )
        if count >= 0:
            break
        cap *= 2
    pairs = out[:count]
    # wrap aliasing on tiny grids can duplicate pairs
    if m < 3:
        pairs = np.unique(pairs, axis=0)
    else:
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return pairs


def brute_force_pairs(positions: np.ndarray, side: float, radius: float) -> np.ndarray:
    """Quadratic all-pairs oracle used by tests to validate the bucket grid."""
    n = positions.shape[0]
    out = []
    for u in range(n):
        for v in range(u + 1, n):
            if toroidal_distance(positions[u], positions[v], side) <= radius:
                out.append((u, v))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def sample_instance(spec: ModelSpec, seed: int) -> Instance:
    """Sample positions, labels, and in-radius pairwise observations.

    Poisson(lambda * n) vertices uniform on the torus, labels i.i.d. from the
    prior, one observation per mutually visible pair, all driven by a single
    seeded generator in a fixed order.
    """
    if spec.n < 8:
        raise DomainError("need n >= 8 so that log n > 2")
    rng = np.random.default_rng(seed)
    d = spec.d
    side = spec.n ** (1.0 / d)
    radius = math.log(spec.n) ** (1.0 / d)
    count = int(rng.poisson(spec.lam * spec.n))
    positions = rng.uniform(-side / 2.0, side / 2.0, size=(count, d))
    labels = np.asarray(spec.labels, dtype=np.int64)
    truth_idx = rng.choice(spec.k, size=count, p=np.asarray(spec.prior))
    truth = labels[truth_idx]
    pairs = _bucket_pairs(positions, side, radius)
    values = np.empty(pairs.shape[0], dtype=np.float64)
    li = truth_idx[pairs[:, 0]] if pairs.size else np.empty(0, dtype=np.int64)
    lj = truth_idx[pairs[:, 1]] if pairs.size else np.empty(0, dtype=np.int64)
    lo = np.minimum(li, lj)
    hi = np.maximum(li, lj)
    for i in range(spec.k):
        for j in range(i, spec.k):
            mask = (lo == i) & (hi == j)
            m = int(mask.sum())
            if m:
                values[mask] = spec.P[i][j].sample(rng, m)
    return Instance(
        spec=spec, positions=positions, truth=truth, pairs=pairs, values=values,
        seed=int(seed),
    )


@dataclass
class BlockGrid:
    """Partition of the torus into m^d equal blocks of volume <= chi * log n."""

    chi: float
    blocks_per_axis: int
    block_side: float
    d: int
    side: float
    log_n: float
    block_of_vertex: np.ndarray  # (N,) flat block id
    block_ptr: np.ndarray  # CSR over blocks
    block_vertices: np.ndarray  # vertex ids grouped by block, ascending

    @property
    def num_blocks(self) -> int:
        return self.blocks_per_axis**self.d

    def members(self, block: int) -> np.ndarray:
        return self.block_vertices[self.block_ptr[block] : self.block_ptr[block + 1]]

    def count(self, block: int) -> int:
        return int(self.block_ptr[block + 1] - self.block_ptr[block])

    def block_coords(self, block: int) -> tuple[int, ...]:
        m = self.blocks_per_axis
        out = []
        for _ in range(self.d):
            out.append(block % m)
            block //= m
        return tuple(reversed(out))


def build_grid(instance: Instance, chi: float, block_volume: Optional[float] = None) -> BlockGrid:
    """Bin vertices into blocks of volume chi * log n (shrunk to tile exactly)."""
    if chi <= 0:
        raise DomainError("chi must be positive")
    n = instance.spec.n
    d = instance.spec.d
    log_n = math.log(n)
    target = block_volume if block_volume is not None else chi * log_n
    if target >= n:
        raise DegenerateGrid("block volume must be below n")
    side = instance.side
    m = int(math.ceil(side / target ** (1.0 / d)))
    if m < 2:
        raise DegenerateGrid(f"only {m} block(s) per axis")
    block_side = side / m
    coords = np.floor((instance.positions + side / 2.0) / block_side).astype(np.int64)
    np.clip(coords, 0, m - 1, out=coords)
    flat = coords[:, 0].copy()
    for a in range(1, d):
        flat = flat * m + coords[:, a]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    ptr = np.zeros(m**d + 1, dtype=np.int64)
    np.add.at(ptr, flat + 1, 1)
    np.cumsum(ptr, out=ptr)
    return BlockGrid(
        chi=chi,
        blocks_per_axis=m,
        block_side=block_side,
        d=d,
        side=side,
        log_n=log_n,
        block_of_vertex=flat,
        block_ptr=ptr,
        block_vertices=order,
    )


def compute_chi(lam: float, d: int) -> float:
    """Largest feasible block-volume constant, scaled by a 0.99 safety margin.

    The binding constraints are
      nu_d * (1 - 3 sqrt(d) chi^(1/d) / 2)^d >= (nu_d + 1/lambda) / 2
    and chi < ((1 if d == 1 else nu_d) - 1/lambda) / 2.
    """
    nu = unit_ball_volume(d)
    if d == 1:
        if lam <= 1.0:
            raise InfeasibleRegime("d=1 requires lambda > 1")
    elif lam * nu <= 1.0:
        raise InfeasibleRegime("d>=2 requires lambda * nu_d > 1")
    target = (nu + 1.0 / lam) / 2.0

    def shrink(chi: float) -> float:
        base = 1.0 - 3.0 * math.sqrt(d) * chi ** (1.0 / d) / 2.0
        return nu * base**d - target if base > 0 else -target

    hi = (2.0 / (3.0 * math.sqrt(d))) ** d
    lo = 0.0
    while hi - lo > _BISECT_TOL:
        mid = (lo + hi) / 2.0
        if shrink(mid) >= 0:
            lo = mid
        else:
            hi = mid
    chi_shape = lo
    chi_cap = ((1.0 if d == 1 else nu) - 1.0 / lam) / 2.0
    return CHI_SAFETY * min(chi_shape, chi_cap)


def _occupancy_gamma(lam_nu: float) -> float:
    """Solve g(gamma) = (1 + lam_nu)/2 for the Poisson lower-tail exponent.

    g(x) = x (log x - log(lam_nu)) + lam_nu - x decreases from lam_nu to 0 on
    (0, lam_nu]; a root exists whenever lam_nu > 1.
    """
    if lam_nu <= 1.0:
        raise InfeasibleRegime("visible volume times lambda must exceed 1")
    target = (1.0 + lam_nu) / 2.0

    def g(x: float) -> float:
        return x * (math.log(x) - math.log(lam_nu)) + lam_nu - x

    lo, hi = 1e-300, lam_nu
    while True:
        mid = (lo + hi) / 2.0
        val = g(mid)
        if abs(val - target) < _BISECT_TOL:
            return mid
        if val > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * max(1.0, hi):
            return mid


def compute_delta(lam: float, d: int, chi: float) -> float:
    """Occupancy threshold paired with `chi`, scaled by a 0.99 safety margin."""
    nu_d = unit_ball_volume(d)
    if d == 1:
        nu = 1.0 - 2.0 * chi
    else:
        r_prime = 1.0 - 3.0 * math.sqrt(d) * chi ** (1.0 / d) / 2.0
        nu = nu_d * r_prime**d - chi
    gamma = _occupancy_gamma(lam * nu)
    if d == 1:
        return DELTA_SAFETY * gamma * chi
    r_d = 1.0 - math.sqrt(d) * chi ** (1.0 / d) / 2.0
    return DELTA_SAFETY * gamma * chi / (nu_d * r_d**d)


@dataclass
class VisibilityGraph:
    """Occupied blocks plus edges between mutually visible occupied blocks."""

    delta: float
    occupied: np.ndarray  # sorted flat block ids
    edges: np.ndarray  # (E, 2) flat ids, i < j
    grid: BlockGrid

    @cached_property
    def _pos_of(self) -> dict[int, int]:
        return {int(b): q for q, b in enumerate(self.occupied)}

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR over occupied-block positions, neighbors ascending."""
        nocc = self.occupied.shape[0]
        if self.edges.size == 0:
            return np.zeros(nocc + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
        pos = self._pos_of
        a = np.array([pos[int(x)] for x in self.edges[:, 0]], dtype=np.int64)
        b = np.array([pos[int(x)] for x in self.edges[:, 1]], dtype=np.int64)
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(nocc + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst

    def neighbors(self, block: int) -> np.ndarray:
        indptr, dst = self.adjacency
        q = self._pos_of[int(block)]
        return self.occupied[dst[indptr[q] : indptr[q + 1]]]


def _visible_offsets(grid: BlockGrid, radius: float) -> np.ndarray:
    """Block-coordinate offsets whose worst-case point distance fits the radius."""
    s = grid.block_side
    side = grid.side
    m = grid.blocks_per_axis
    d = grid.d
    reach = min(int(math.floor(radius / s)) + 1, m - 1)
    axis = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    centers = np.abs(offs) * s
    t = np.minimum(centers, side - centers)
    sup = np.minimum(t + s, side / 2.0)
    keep = (np.sum(sup * sup, axis=1) <= radius * radius) & np.any(offs != 0, axis=1)
    return offs[keep].astype(np.int64)


def build_visibility_graph(grid: BlockGrid, delta: float) -> VisibilityGraph:
    """Occupied blocks (count > delta * log n) with exact sup-distance edges."""
    counts = np.diff(grid.block_ptr)
    threshold = delta * grid.log_n
    occupied = np.flatnonzero(counts > threshold).astype(np.int64)
    radius = grid.log_n ** (1.0 / grid.d)
    if occupied.size == 0:
        return VisibilityGraph(
            delta=delta, occupied=occupied, edges=np.empty((0, 2), dtype=np.int64),
            grid=grid,
        )
    offsets = _visible_offsets(grid, radius)
    m = grid.blocks_per_axis
    d = grid.d
    occ_coords = np.empty((occupied.size, d), dtype=np.int64)
    rem = occupied.copy()
    for a in range(d - 1, -1, -1):
        occ_coords[:, a] = rem % m
        rem //= m
    occ_index = np.full(grid.num_blocks, -1, dtype=np.int64)
    occ_index[occupied] = np.arange(occupied.size)
    cap = max(1024, occupied.size * max(8, offsets.shape[0] // 8))
    while True:
        out = np.empty((cap, 2), dtype=np.int64)
        dims = np.full(d, m, dtype=np.int64)
        count = _kernels.visibility_edges(occupied, occ_coords, occ_index, offsets, dims, out)
        if count >= 0:
            break
        cap *= 2
    edges = out[:count]
    if 2 * offsets.shape[0] > (2 * (m - 1) + 1) ** d:
        edges = np.unique(edges, axis=0)
    else:
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return VisibilityGraph(delta=delta, occupied=occupied, edges=edges, grid=grid)


def bfs_spanning_order(vg: VisibilityGraph) -> list[tuple[int, Optional[int]]]:
    """Breadth-first spanning order rooted at the lowest-index occupied block.

    Raises Disconnected when the visibility graph has multiple components.
    """
    nocc = vg.occupied.shape[0]
    if nocc == 0:
        raise Disconnected("no occupied blocks")
    indptr, dst = vg.adjacency
    seen = np.zeros(nocc, dtype=bool)
    order: list[tuple[int, Optional[int]]] = [(int(vg.occupied[0]), None)]
    seen[0] = True
    queue = [0]
    head = 0
    while head < len(queue):
        q = queue[head]
        head += 1
        for t in dst[indptr[q] : indptr[q + 1]]:
            if not seen[t]:
                seen[t] = True
                order.append((int(vg.occupied[t]), int(vg.occupied[q])))
                queue.append(int(t))
    if len(order) != nocc:
        raise Disconnected(f"{nocc - len(order)} occupied block(s) unreachable")
    return order


def connected_components(vg: VisibilityGraph) -> list[list[int]]:
    """Components of the visibility graph, as lists of flat block ids.

    For d=1 each component is rotated so its leftmost block (the one after the
    largest cyclic gap) comes first, giving the segment order used by the
    one-dimensional recovery variant.
    """
    nocc = vg.occupied.shape[0]
    indptr, dst = vg.adjacency
    seen = np.zeros(nocc, dtype=bool)
    comps = []
    for start in range(nocc):
        if seen[start]:
            continue
        seen[start] = True
        queue = [start]
        head = 0
        while head < len(queue):
            q = queue[head]
            head += 1
            for t in dst[indptr[q] : indptr[q + 1]]:
                if not seen[t]:
                    seen[t] = True
                    queue.append(int(t))
        comps.append(sorted(int(vg.occupied[q]) for q in queue))
    if vg.grid.d == 1:
        comps = [_rotate_segment(c, vg.grid.num_blocks) for c in comps]
    comps.sort(key=lambda c: c[0])
    return comps


def _rotate_segment(blocks: list[int], num_blocks: int) -> list[int]:
    if len(blocks) <= 1:
        return blocks
    gaps = []
    for i, b in enumerate(blocks):
        nxt = blocks[(i + 1) % len(blocks)]
        gap = (nxt - b) % num_blocks
        gaps.append(gap)
    widest = max(range(len(gaps)), key=lambda i: gaps[i])
    if gaps[widest] <= 1:
        return blocks
    start = (widest + 1) % len(blocks)
    return blocks[start:] + blocks[:start]


def vertex_visibility_connected(instance: Instance) -> bool:
    """Whether the vertex-level visibility graph is a single component."""
    import scipy.sparse
    import scipy.sparse.csgraph

    n = instance.num_vertices
    if n <= 1:
        return True
    if instance.pairs.size == 0:
        return False
    adj = scipy.sparse.coo_matrix(
        (
            np.ones(instance.pairs.shape[0], dtype=np.int8),
            (instance.pairs[:, 0], instance.pairs[:, 1]),
        ),
        shape=(n, n),
    )
    ncomp, _ = scipy.sparse.csgraph.connected_components(adj, directed=False)
    return int(ncomp) == 1
