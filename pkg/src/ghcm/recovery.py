"""Two-phase community recovery: seed, propagate along blocks, then refine."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    Disconnected,
    DistinctnessViolated,
    DomainError,
    EmptyReference,
    InfeasibleRegime,
    MapBudgetExceeded,
)
from .geometry import (
    BlockGrid,
    Instance,
    VisibilityGraph,
    bfs_spanning_order,
    build_grid,
    build_visibility_graph,
    compute_chi,
    compute_delta,
)
from .model import (
    Relabeling,
    enumerate_relabelings,
    log_likelihood,
    log_likelihood_vec,
)

# Sentinel for vertices the algorithm declines to label.
UNKNOWN = -(2**31)

MAP_BUDGET = 2**26
_MAP_CHUNK = 2**15

STATUS_OK = "ok"
STATUS_VISIBILITY_DISCONNECTED = "visibility_disconnected"
STATUS_ONE_DIMENSIONAL = "one_dimensional_fallback"


@dataclass
class RecoveryReport:
    """Output of a recovery run.

    Labels are actual community labels from the model spec, with UNKNOWN for
    vertices left unlabeled. `agreement` is the best match fraction against
    the ground truth over all permissible relabelings.
    """

    phase1: np.ndarray
    final: np.ndarray
    agreement: float
    best_relabeling: Relabeling
    mistakes_per_block: dict[int, int]
    status: str
    timings_ms: dict[str, float] = field(default_factory=dict)


def _pair_loglik_tables(instance: Instance) -> np.ndarray:
    """(k, k, 2) Bernoulli log-likelihood lookup, or empty for non-Bernoulli."""
    spec = instance.spec
    k = spec.k
    table = np.zeros((k, k, 2), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            table[i, j, 0] = log_likelihood_vec(spec.P[i][j], np.array([0.0]))[0]
            table[i, j, 1] = log_likelihood_vec(spec.P[i][j], np.array([1.0]))[0]
    return table


def _gaussian_tables(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    spec = instance.spec
    k = spec.k
    means = np.zeros((k, k), dtype=np.float64)
    variances = np.ones((k, k), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            if spec.P[i][j].kind == "gaussian":
                means[i, j] = spec.P[i][j].mean
                variances[i, j] = spec.P[i][j].variance
    return means, variances


def map_initial_block(instance: Instance, vertices: np.ndarray) -> np.ndarray:
    """Exhaustive posterior maximization over labelings of a small vertex set.

    Scores every assignment by prior log-probabilities plus observation
    log-likelihoods over visible pairs inside the set, enumerated in
    lexicographic order so ties resolve to the lexicographically first
    maximizer. Returns label indices.
    """
    spec = instance.spec
    k = spec.k
    m = int(vertices.shape[0])
    if m == 0:
        raise EmptyReference("initial block subset is empty")
    if k**m > MAP_BUDGET:
        raise MapBudgetExceeded(f"{k}^{m} labelings exceed the budget of 2^26")
    vertices = np.asarray(vertices, dtype=np.int64)
    pos_of = {int(u): i for i, u in enumerate(vertices)}
    vset = set(pos_of)
    sub_pairs = []
    sub_vals = []
    indptr, nbr, val = instance.adjacency
    for u in vertices:
        for e in range(indptr[u], indptr[u + 1]):
            v = int(nbr[e])
            if v > u and v in vset:
                sub_pairs.append((pos_of[int(u)], pos_of[v]))
                sub_vals.append(val[e])
    log_prior = np.log(np.asarray(spec.prior, dtype=np.float64))
    npairs = len(sub_pairs)
    pair_tab = np.zeros((npairs, k, k), dtype=np.float64)
    for t, y in enumerate(sub_vals):
        for a in range(k):
            for b in range(k):
                pair_tab[t, a, b] = log_likelihood_vec(
                    spec.P[a][b], np.array([y])
                )[0]
    iu = np.array([p[0] for p in sub_pairs], dtype=np.int64)
    iv = np.array([p[1] for p in sub_pairs], dtype=np.int64)
    total = k**m
    best_score = -np.inf
    powers = k ** np.arange(m - 1, -1, -1, dtype=np.int64)
    candidates: list[tuple[int, float]] = []
    for start in range(0, total, _MAP_CHUNK):
        codes = np.arange(start, min(start + _MAP_CHUNK, total), dtype=np.int64)
        digits = (codes[:, None] // powers[None, :]) % k
        scores = log_prior[digits].sum(axis=1)
        if npairs:
            scores += pair_tab[
                np.arange(npairs)[None, :], digits[:, iu], digits[:, iv]
            ].sum(axis=1)
        chunk_best = float(scores.max())
        if chunk_best > best_score:
            best_score = chunk_best
        tol = 1e-9 * (1.0 + abs(best_score))
        near = np.flatnonzero(scores >= best_score - tol)
        candidates.extend((int(codes[c]), float(scores[c])) for c in near)
    # resolve near-ties with a fixed sequential summation so the argmax (and
    # its lexicographic-first tie rule) does not depend on chunked fp rounding
    tol = 1e-9 * (1.0 + abs(best_score))
    finalists = sorted(c for c, s in candidates if s >= best_score - tol)
    prior_f = [math.log(p) for p in spec.prior]
    best_code = finalists[0]
    if len(finalists) > 1:
        best_exact = -math.inf
        for code in finalists:
            digits_f = [(code // int(p)) % k for p in powers]
            score = sum(prior_f[c] for c in digits_f)
            for t in range(npairs):
                score += log_likelihood(
                    spec.P[digits_f[iu[t]]][digits_f[iv[t]]], float(sub_vals[t])
                )
            if score > best_exact:
                best_exact = score
                best_code = code
    return ((best_code // powers) % k).astype(np.int64)


def propagate(
    instance: Instance,
    label_idx: np.ndarray,
    reference_block: np.ndarray,
    targets: np.ndarray,
) -> np.ndarray:
    """Label `targets` from the labeled vertices of one reference block.

    Uses the largest labeled community of the reference (ties to the smaller
    label index) and assigns each target the likelihood-maximizing community
    given its observations toward that reference community. Returns the new
    label indices for `targets` without mutating `label_idx`.
    """
    spec = instance.spec
    k = spec.k
    ref_labels = label_idx[reference_block]
    labeled = ref_labels >= 0
    if not labeled.any():
        raise EmptyReference("reference block has no labeled vertices")
    counts = np.bincount(ref_labels[labeled], minlength=k)
    j = int(np.argmax(counts))
    ref_j = set(int(v) for v in np.asarray(reference_block)[ref_labels == j])
    indptr, nbr, val = instance.adjacency
    out = np.empty(len(targets), dtype=np.int64)
    for t, u in enumerate(targets):
        scores = np.zeros(k, dtype=np.float64)
        for e in range(indptr[u], indptr[u + 1]):
            v = int(nbr[e])
            if v in ref_j and v != u:
                for r in range(k):
                    scores[r] += log_likelihood_vec(
                        spec.P[j][r], np.array([val[e]])
                    )[0]
        out[t] = int(np.argmax(scores))
    return out


def refine_scores(instance: Instance, label_idx: np.ndarray) -> np.ndarray:
    """(N, k) matrix of per-community refinement scores given current labels."""
    spec = instance.spec
    k = spec.k
    n = instance.num_vertices
    indptr, nbr, val = instance.adjacency
    edge_src = np.repeat(np.arange(n), np.diff(indptr))
    lab = label_idx[nbr]
    labeled = lab >= 0
    scores = np.zeros((n, k), dtype=np.float64)
    for c in range(k):
        mask = labeled & (lab == c)
        if not mask.any():
            continue
        yv = val[mask]
        src = edge_src[mask]
        for i in range(k):
            contrib = log_likelihood_vec(spec.P[i][c], yv)
            scores[:, i] += np.bincount(src, weights=contrib, minlength=n)
    return scores


def refine_all(instance: Instance, label_idx: np.ndarray) -> np.ndarray:
    """One simultaneous refinement pass over every vertex.

    Each vertex takes the community maximizing the summed log-likelihood of
    its observations toward currently labeled neighbors; vertices with no
    labeled neighbor fall back to the prior argmax. Ties go to the smaller
    label index.
    """
    k = instance.spec.k
    n = instance.num_vertices
    indptr, nbr, _ = instance.adjacency
    scores = refine_scores(instance, label_idx)
    edge_src = np.repeat(np.arange(n), np.diff(indptr))
    labeled_nbr = label_idx[nbr] >= 0
    deg = np.bincount(edge_src[labeled_nbr], minlength=n)
    out = np.argmax(scores, axis=1).astype(np.int64)
    if (deg == 0).any():
        fallback = int(np.argmax(instance.spec.prior))
        out[deg == 0] = fallback
    return out


def refine_vertex(instance: Instance, label_idx: np.ndarray, u: int) -> int:
    """Refinement update for a single vertex (sequential-variant primitive)."""
    spec = instance.spec
    k = spec.k
    indptr, nbr, val = instance.adjacency
    scores = np.zeros(k, dtype=np.float64)
    any_labeled = False
    # group observations by neighbor community and accumulate in the same
    # order as the vectorized pass so ties resolve identically
    for c in range(k):
        edges = [
            e
            for e in range(indptr[u], indptr[u + 1])
            if label_idx[nbr[e]] == c
        ]
        if not edges:
            continue
        any_labeled = True
        yv = val[np.asarray(edges, dtype=np.int64)]
        for i in range(k):
            contrib = log_likelihood_vec(spec.P[i][c], yv)
            acc = 0.0
            for term in contrib:
                acc += float(term)
            scores[i] += acc
    if not any_labeled:
        return int(np.argmax(spec.prior))
    return int(np.argmax(scores))


def genie_labels(instance: Instance) -> np.ndarray:
    """Refinement applied against the ground truth: the oracle-aided estimate."""
    return refine_all(instance, instance.truth_idx)


def agreement(
    estimate: np.ndarray,
    truth: np.ndarray,
    relabelings: Sequence[Relabeling],
    labels: Sequence[int],
) -> tuple[float, Relabeling]:
    """Best match fraction of estimate against truth over permissible relabelings.

    UNKNOWN entries never match. Both arrays hold actual label values.
    """
    if len(estimate) != len(truth):
        raise DomainError("estimate and truth must have equal length")
    if len(truth) == 0:
        return 1.0, relabelings[0]
    lut = {int(z): i for i, z in enumerate(labels)}
    est_idx = np.array([lut.get(int(z), -1) for z in estimate], dtype=np.int64)
    tru_idx = np.array([lut[int(z)] for z in truth], dtype=np.int64)
    best = -1.0
    best_omega = relabelings[0]
    for omega in relabelings:
        perm = np.array([lut[omega(int(z))] for z in labels], dtype=np.int64)
        mapped = np.where(est_idx >= 0, perm[np.clip(est_idx, 0, None)], -1)
        frac = float(np.mean(mapped == tru_idx))
        if frac > best:
            best = frac
            best_omega = omega
    return best, best_omega


def _run_propagation(
    instance: Instance,
    grid: BlockGrid,
    order: list[tuple[int, Optional[int]]],
    label_idx: np.ndarray,
) -> None:
    """Phase I propagation along the block spanning order, in place."""
    spec = instance.spec
    root = order[0][0]
    steps = [(root, root)] + [(c, p) for c, p in order[1:]]
    order_child = np.array([s[0] for s in steps], dtype=np.int64)
    order_parent = np.array([s[1] for s in steps], dtype=np.int64)
    indptr, nbr, val = instance.adjacency
    kinds = {dist.kind for row in spec.P for dist in row}
    if len(kinds) == 1:
        is_bern = kinds == {"bernoulli"}
        obs_idx = val.astype(np.int8) if is_bern else np.zeros(1, dtype=np.int8)
        loglik_bern = _pair_loglik_tables(instance)
        means, variances = _gaussian_tables(instance)
        _kernels.propagate_blocks(
            indptr,
            nbr,
            is_bern,
            obs_idx,
            val,
            grid.block_of_vertex,
            order_child,
            order_parent,
            grid.block_ptr,
            grid.block_vertices,
            loglik_bern,
            means,
            variances,
            label_idx,
            True,
        )
        return
    for child, parent in steps:
        ref = grid.members(parent)
        members = grid.members(child)
        targets = members[label_idx[members] < 0]
        if targets.size:
            label_idx[targets] = propagate(instance, label_idx, ref, targets)


def _finalize(
    instance: Instance,
    grid: Optional[BlockGrid],
    phase1_idx: np.ndarray,
    final_idx: np.ndarray,
    status: str,
    timings: dict[str, float],
) -> RecoveryReport:
    spec = instance.spec
    labels_arr = np.asarray(spec.labels, dtype=np.int64)

    def to_labels(idx: np.ndarray) -> np.ndarray:
        out = np.full(idx.shape[0], UNKNOWN, dtype=np.int64)
        mask = idx >= 0
        out[mask] = labels_arr[idx[mask]]
        return out

    phase1 = to_labels(phase1_idx)
    final = to_labels(final_idx)
    relabelings = enumerate_relabelings(spec)
    frac, omega = agreement(final, instance.truth, relabelings, spec.labels)
    mistakes: dict[int, int] = {}
    if grid is not None:
        lut = {int(z): i for i, z in enumerate(spec.labels)}
        perm = np.array([lut[omega(int(z))] for z in spec.labels], dtype=np.int64)
        mapped = np.where(final_idx >= 0, perm[np.clip(final_idx, 0, None)], -1)
        wrong_blocks = grid.block_of_vertex[mapped != instance.truth_idx]
        blocks, counts = np.unique(wrong_blocks, return_counts=True)
        mistakes = {int(b): int(c) for b, c in zip(blocks, counts)}
    return RecoveryReport(
        phase1=phase1,
        final=final,
        agreement=frac,
        best_relabeling=omega,
        mistakes_per_block=mistakes,
        status=status,
        timings_ms=timings,
    )


def recover(
    instance: Instance,
    chi: Optional[float] = None,
    delta: Optional[float] = None,
    epsilon0: Optional[float] = None,
    refine_rounds: int = 1,
    gauss_seidel: bool = False,
) -> RecoveryReport:
    """Full two-phase recovery: seed an initial block, propagate, refine.

    Falls back to the one-dimensional segmented variant when the block
    visibility graph is disconnected, d == 1, the relabeling group is trivial,
    and the observation matrix is strongly distinct; otherwise a disconnected
    visibility graph yields an all-UNKNOWN report with a distinct status.
    """
    spec = instance.spec
    if not spec.is_distinct():
        raise DistinctnessViolated("observation matrix has indistinguishable columns")
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    def can_fall_through() -> bool:
        return (
            spec.d == 1
            and len(enumerate_relabelings(spec)) == 1
            and spec.is_strongly_distinct()
        )

    try:
        chi_v = chi if chi is not None else compute_chi(spec.lam, spec.d)
        delta_v = delta if delta is not None else compute_delta(
            spec.lam, spec.d, chi_v
        )
    except InfeasibleRegime:
        if can_fall_through():
            report = recover_1d(instance)
            report.status = STATUS_ONE_DIMENSIONAL
            return report
        raise
    grid = build_grid(instance, chi_v)
    vg = build_visibility_graph(grid, delta_v)
    timings["grid_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    try:
        order = bfs_spanning_order(vg)
    except Disconnected:
        if can_fall_through():
            report = recover_1d(instance)
            report.status = STATUS_ONE_DIMENSIONAL
            return report
        n = instance.num_vertices
        empty = np.full(n, -1, dtype=np.int64)
        return _finalize(
            instance, grid, empty, empty, STATUS_VISIBILITY_DISCONNECTED, timings
        )
    label_idx = np.full(instance.num_vertices, -1, dtype=np.int64)
    log_n = math.log(spec.n)
    eps0 = epsilon0 if epsilon0 is not None else min(
        1.0 / (2.0 * math.log(spec.k)), delta_v
    )
    root = order[0][0]
    root_members = grid.members(root)
    seed_count = max(1, min(int(math.ceil(eps0 * log_n)), root_members.size))
    seed = root_members[:seed_count]
    label_idx[seed] = map_initial_block(instance, seed)
    timings["seed_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    _run_propagation(instance, grid, order, label_idx)
    phase1_idx = label_idx.copy()
    timings["propagate_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    final_idx = label_idx
    for _ in range(max(0, refine_rounds)):
        if gauss_seidel:
            final_idx = final_idx.copy()
            for u in range(instance.num_vertices):
                final_idx[u] = refine_vertex(instance, final_idx, u)
        else:
            final_idx = refine_all(instance, final_idx)
    timings["refine_ms"] = (time.perf_counter() - t0) * 1000.0
    return _finalize(instance, grid, phase1_idx, final_idx, STATUS_OK, timings)


def _segments_1d(nonempty: np.ndarray, num_blocks: int) -> list[list[int]]:
    """Maximal runs of cyclically adjacent nonempty blocks, leftmost first."""
    if nonempty.size == 0:
        return []
    present = set(int(b) for b in nonempty)
    if len(present) == num_blocks:
        return [sorted(present)]
    segments = []
    seen: set[int] = set()
    for b in sorted(present):
        if b in seen:
            continue
        if (b - 1) % num_blocks in present:
            continue  # not a run start
        run = []
        cur = b
        while cur in present and cur not in seen:
            run.append(cur)
            seen.add(cur)
            cur = (cur + 1) % num_blocks
        segments.append(run)
    segments.sort(key=lambda s: s[0])
    return segments


def recover_1d(instance: Instance, refine: bool = False) -> RecoveryReport:
    """Segmented recovery on the circle.

    Partitions the circle into blocks of length log(n)/2, finds maximal runs
    of adjacent nonempty blocks, and within each run seeds the leftmost block
    and propagates left to right. Requires a trivial relabeling group and a
    strongly distinct observation matrix so segment labelings are mutually
    consistent.
    """
    spec = instance.spec
    if spec.d != 1:
        raise DomainError("segmented recovery only applies in one dimension")
    if not spec.is_strongly_distinct():
        raise DistinctnessViolated(
            "segmented recovery needs pairwise distinct observation distributions"
        )
    if len(enumerate_relabelings(spec)) != 1:
        raise DomainError("segmented recovery requires a trivial relabeling group")
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    grid = build_grid(instance, chi=0.5, block_volume=math.log(spec.n) / 2.0)
    counts = np.diff(grid.block_ptr)
    nonempty = np.flatnonzero(counts > 0).astype(np.int64)
    segments = _segments_1d(nonempty, grid.num_blocks)
    timings["grid_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    label_idx = np.full(instance.num_vertices, -1, dtype=np.int64)
    log_n = math.log(spec.n)
    eps0 = spec.lam / (4.0 * math.log(spec.k))
    for run in segments:
        root = run[0]
        members = grid.members(root)
        seed_count = max(1, min(int(math.ceil(eps0 * log_n)), members.size))
        seed = members[:seed_count]
        label_idx[seed] = map_initial_block(instance, seed)
        steps = [(root, root)] + [(run[i], run[i - 1]) for i in range(1, len(run))]
        order = [(steps[0][0], None)] + [(c, p) for c, p in steps[1:]]
        _run_propagation(instance, grid, order, label_idx)
    phase1_idx = label_idx.copy()
    timings["propagate_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    final_idx = refine_all(instance, label_idx) if refine else label_idx
    timings["refine_ms"] = (time.perf_counter() - t0) * 1000.0
    return _finalize(instance, grid, phase1_idx, final_idx, STATUS_OK, timings)
