"""Numba kernels for the performance-critical inner loops.

Everything here is deterministic: iteration orders are fixed by array order,
and no randomness is consumed inside a kernel.
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _torus_dist2(pos, u, v, side):
    acc = 0.0
    for a in range(pos.shape[1]):
        diff = abs(pos[u, a] - pos[v, a])
        if diff > side - diff:
            diff = side - diff
        acc += diff * diff
    return acc


@numba.njit(cache=True)
def collect_pairs(pos, cell_of, cell_ptr, cell_order, offsets, dims, side, radius, out):
    """Enumerate vertex pairs within `radius` using the bucket grid.

    `offsets` is the half-neighborhood of cell offsets (same cell excluded);
    `out` is a preallocated (cap, 2) buffer. Returns the number of pairs
    written, or -1 on overflow. Pairs may repeat when the grid wraps onto
    itself; the caller deduplicates.
    """
    d = dims.shape[0]
    ncells = cell_ptr.shape[0] - 1
    r2 = radius * radius
    count = 0
    coord = np.empty(d, dtype=np.int64)
    for c in range(ncells):
        lo = cell_ptr[c]
        hi = cell_ptr[c + 1]
        if lo == hi:
            continue
        # in-cell pairs
        for ii in range(lo, hi):
            for jj in range(ii + 1, hi):
                u = cell_order[ii]
                v = cell_order[jj]
                if _torus_dist2(pos, u, v, side) <= r2:
                    if count >= out.shape[0]:
                        return -1
                    if u < v:
                        out[count, 0] = u
                        out[count, 1] = v
                    else:
                        out[count, 0] = v
                        out[count, 1] = u
                    count += 1
        # decode cell coordinate
        rem = c
        for a in range(d - 1, -1, -1):
            coord[a] = rem % dims[a]
            rem //= dims[a]
        for o in range(offsets.shape[0]):
            nc = 0
            for a in range(d):
                ca = (coord[a] + offsets[o, a]) % dims[a]
                nc = nc * dims[a] + ca
            if nc == c:
                continue
            nlo = cell_ptr[nc]
            nhi = cell_ptr[nc + 1]
            if nlo == nhi:
                continue
            for ii in range(lo, hi):
                for jj in range(nlo, nhi):
                    u = cell_order[ii]
                    v = cell_order[jj]
                    if u == v:
                        continue
                    if _torus_dist2(pos, u, v, side) <= r2:
                        if count >= out.shape[0]:
                            return -1
                        if u < v:
                            out[count, 0] = u
                            out[count, 1] = v
                        else:
                            out[count, 0] = v
                            out[count, 1] = u
                        count += 1
    return count


@numba.njit(cache=True)
def visibility_edges(occupied, occ_coords, occ_index, offsets, dims, out):
    """Edges of the block visibility graph.

    `occupied` holds flat ids of occupied blocks (sorted ascending),
    `occ_coords` their grid coordinates, and `occ_index` maps a flat block id
    to its position in `occupied` (-1 if unoccupied). `offsets` is the list of
    coordinate offsets whose sup-distance condition holds. Returns the edge
    count, or -1 on overflow; edges are (i, j) flat ids with i < j and may
    repeat under wrap aliasing.
    """
    d = dims.shape[0]
    count = 0
    for q in range(occupied.shape[0]):
        c = occupied[q]
        for o in range(offsets.shape[0]):
            nc = 0
            for a in range(d):
                ca = (occ_coords[q, a] + offsets[o, a]) % dims[a]
                nc = nc * dims[a] + ca
            if nc <= c:
                continue
            if occ_index[nc] < 0:
                continue
            if count >= out.shape[0]:
                return -1
            out[count, 0] = c
            out[count, 1] = nc
            count += 1
    return count


@numba.njit(cache=True)
def propagate_blocks(
    indptr,
    nbr,
    is_bern,
    obs_idx,
    val,
    block_of,
    order_child,
    order_parent,
    block_ptr,
    block_vertices,
    loglik_bern,
    means,
    variances,
    label_idx,
    skip_root_members,
):
    """Label every block along the spanning order by likelihood propagation.

    For each (child, parent) pair in order, each unlabeled vertex u of the
    child block gets argmax_r sum over parent-block neighbors v labeled j of
    log p_{j r}(y_uv), where j is the largest labeled community of the parent
    block (ties to the smaller label index). `label_idx` holds -1 for
    unlabeled vertices and is updated in place. `skip_root_members` guards the
    already-labeled seed subset of the root block.
    """
    k = loglik_bern.shape[0]
    scores = np.empty(k, dtype=np.float64)
    counts = np.empty(k, dtype=np.int64)
    for step in range(order_child.shape[0]):
        child = order_child[step]
        parent = order_parent[step]
        # majority label j among labeled vertices of the parent block
        for r in range(k):
            counts[r] = 0
        for t in range(block_ptr[parent], block_ptr[parent + 1]):
            lv = label_idx[block_vertices[t]]
            if lv >= 0:
                counts[lv] += 1
        j = 0
        for r in range(1, k):
            if counts[r] > counts[j]:
                j = r
        for t in range(block_ptr[child], block_ptr[child + 1]):
            u = block_vertices[t]
            if skip_root_members and label_idx[u] >= 0:
                continue
            for r in range(k):
                scores[r] = 0.0
            for e in range(indptr[u], indptr[u + 1]):
                v = nbr[e]
                if block_of[v] != parent or v == u:
                    continue
                if label_idx[v] != j:
                    continue
                if is_bern:
                    y = obs_idx[e]
                    for r in range(k):
                        scores[r] += loglik_bern[j, r, y]
                else:
                    y = val[e]
                    for r in range(k):
                        mu = means[j, r]
                        scores[r] += -((y - mu) * (y - mu)) / (
                            2.0 * variances[j, r]
                        ) - 0.5 * np.log(2.0 * np.pi * variances[j, r])
            best = 0
            for r in range(1, k):
                if scores[r] > scores[best]:
                    best = r
            label_idx[u] = best
