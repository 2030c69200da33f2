"""Monotone observation corruption and a robust two-community recovery variant."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (
    Disconnected,
    DomainError,
    EmptyReference,
    MonotonicityViolated,
    NotBernoulli,
    NotTwoCommunities,
)
from .geometry import (
    BlockGrid,
    Instance,
    bfs_spanning_order,
    build_grid,
    build_visibility_graph,
    compute_chi,
    compute_delta,
)
from .recovery import (
    STATUS_OK,
    STATUS_VISIBILITY_DISCONNECTED,
    RecoveryReport,
    _finalize,
    map_initial_block,
    refine_all,
)

NONE = "none"
SIMULATE_UNIFORM = "simulate_uniform"
RANDOM_MONOTONE = "random_monotone"


@dataclass(frozen=True)
class AdversaryPolicy:
    """A monotone corruption policy for Bernoulli observations.

    `simulate_uniform` rewires intra-community rates up to `a` and
    inter-community rates down to `b`, making every community pair look like a
    two-parameter model. `random_monotone` flips each intra non-edge on with
    probability `add_frac` and each inter edge off with probability
    `del_frac`, independently. `none` leaves observations untouched.
    """

    kind: str
    seed: int = 0
    a: float = 0.0
    b: float = 0.0
    add_frac: float = 0.0
    del_frac: float = 0.0

    @staticmethod
    def none() -> "AdversaryPolicy":
        return AdversaryPolicy(kind=NONE)

    @staticmethod
    def simulate_uniform(a: float, b: float, seed: int = 0) -> "AdversaryPolicy":
        if not (0.0 <= b <= a <= 1.0):
            raise DomainError("need 0 <= b <= a <= 1")
        return AdversaryPolicy(
            kind=SIMULATE_UNIFORM, a=float(a), b=float(b), seed=int(seed)
        )

    @staticmethod
    def random_monotone(
        add_frac: float, del_frac: float, seed: int = 0
    ) -> "AdversaryPolicy":
        if not (0.0 <= add_frac <= 1.0 and 0.0 <= del_frac <= 1.0):
            raise DomainError("flip fractions must lie in [0, 1]")
        return AdversaryPolicy(
            kind=RANDOM_MONOTONE,
            add_frac=float(add_frac),
            del_frac=float(del_frac),
            seed=int(seed),
        )

    def to_json(self) -> dict:
        if self.kind == NONE:
            return {"kind": self.kind}
        if self.kind == SIMULATE_UNIFORM:
            return {"kind": self.kind, "a": self.a, "b": self.b, "seed": self.seed}
        return {
            "kind": self.kind,
            "add_frac": self.add_frac,
            "del_frac": self.del_frac,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(doc: dict) -> "AdversaryPolicy":
        kind = doc.get("kind")
        seed = int(doc.get("seed", 0))
        if kind == NONE:
            return AdversaryPolicy.none()
        if kind == SIMULATE_UNIFORM:
            return AdversaryPolicy.simulate_uniform(doc["a"], doc["b"], seed)
        if kind == RANDOM_MONOTONE:
            return AdversaryPolicy.random_monotone(
                doc["add_frac"], doc["del_frac"], seed
            )
        raise DomainError(f"unknown adversary kind {kind!r}")


def _check_assortative(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Validate all-Bernoulli assortative structure; return (diag, offdiag) probs."""
    spec = instance.spec
    if not spec.all_bernoulli():
        raise NotBernoulli("adversarial corruption requires Bernoulli observations")
    k = spec.k
    diag = np.array([spec.P[i][i].p for i in range(k)])
    off = np.array(
        [spec.P[i][j].p for i in range(k) for j in range(k) if i != j]
    )
    if off.size and diag.min() <= off.max():
        raise DomainError(
            "every intra-community rate must exceed every inter-community rate"
        )
    return diag, off


def corrupt(instance: Instance, policy: AdversaryPolicy) -> Instance:
    """Apply a monotone corruption policy, returning a new instance.

    Only observation values change: intra-community zeros may become ones and
    inter-community ones may become zeros. Positions, labels, and the visible
    pair set are untouched. The policy carries its own seed.
    """
    if policy.kind == NONE:
        return replace(instance, values=instance.values.copy())
    diag, off = _check_assortative(instance)
    spec = instance.spec
    rng = np.random.default_rng(policy.seed)
    values = instance.values.copy()
    li = instance.truth_idx[instance.pairs[:, 0]]
    lj = instance.truth_idx[instance.pairs[:, 1]]
    intra = li == lj
    ones = values == 1.0
    if policy.kind == SIMULATE_UNIFORM:
        a, b = policy.a, policy.b
        if a < diag.max():
            raise MonotonicityViolated(
                f"target intra rate {a} below an existing rate {diag.max()}"
            )
        if off.size and b > off.min():
            raise MonotonicityViolated(
                f"target inter rate {b} above an existing rate {off.min()}"
            )
        u = rng.random(values.shape[0])
        for i in range(spec.k):
            aii = diag[i]
            if aii < 1.0:
                add_p = (a - aii) / (1.0 - aii)
                mask = intra & ~ones & (li == i)
                values[mask & (u < add_p)] = 1.0
        for i in range(spec.k):
            for j in range(spec.k):
                if i >= j:
                    continue
                aij = spec.P[i][j].p
                if aij > 0.0:
                    del_p = 1.0 - b / aij
                    mask = ones & (np.minimum(li, lj) == i) & (np.maximum(li, lj) == j)
                    values[mask & (u < del_p)] = 0.0
    else:
        u = rng.random(values.shape[0])
        add_mask = intra & ~ones & (u < policy.add_frac)
        del_mask = ~intra & ones & (u < policy.del_frac)
        values[add_mask] = 1.0
        values[del_mask] = 0.0
    out = replace(instance, values=values)
    return out


def derive_rates(spec) -> tuple[float, float]:
    """Conservative (a, b) for the robust propagation threshold.

    `a` is the smallest intra-community rate, `b` the largest inter-community
    rate; the half-sum threshold then separates the two regardless of which
    communities meet across a block boundary.
    """
    k = spec.k
    a = min(spec.P[i][i].p for i in range(k))
    b = max(spec.P[i][j].p for i in range(k) for j in range(k) if i != j)
    return a, b


def propagate_two_community(
    instance: Instance,
    label_idx: np.ndarray,
    reference_block: np.ndarray,
    targets: np.ndarray,
    a: float,
    b: float,
) -> np.ndarray:
    """Degree-threshold propagation for two communities.

    A target joins the reference majority community when its edge count into
    that community's reference vertices is at least (a + b)/2 times the
    reference size; otherwise it takes the other community.
    """
    spec = instance.spec
    if spec.k != 2:
        raise NotTwoCommunities("threshold propagation needs exactly two communities")
    ref_labels = label_idx[reference_block]
    labeled = ref_labels >= 0
    if not labeled.any():
        raise EmptyReference("reference block has no labeled vertices")
    counts = np.bincount(ref_labels[labeled], minlength=2)
    j = int(np.argmax(counts))
    ref_j = np.zeros(instance.num_vertices, dtype=bool)
    ref_j[np.asarray(reference_block)[ref_labels == j]] = True
    threshold = 0.5 * (a + b) * int(ref_j.sum())
    indptr, nbr, val = instance.adjacency
    out = np.empty(len(targets), dtype=np.int64)
    for t, u in enumerate(targets):
        sl = slice(indptr[u], indptr[u + 1])
        cnt = int(np.count_nonzero(ref_j[nbr[sl]] & (val[sl] == 1.0)))
        out[t] = j if cnt >= threshold else 1 - j
    return out


def recover_robust(
    corrupted: Instance,
    a: Optional[float] = None,
    b: Optional[float] = None,
    chi: Optional[float] = None,
    delta: Optional[float] = None,
    epsilon0: Optional[float] = None,
    refine_rounds: int = 1,
) -> RecoveryReport:
    """Two-community recovery hardened against monotone corruption.

    Same pipeline as the standard recovery but propagation uses the edge-count
    threshold rule, which only improves under monotone changes. The seed block
    is still labeled by posterior maximization against the clean model.
    """
    spec = corrupted.spec
    if spec.k != 2:
        raise NotTwoCommunities("robust recovery needs exactly two communities")
    _check_assortative(corrupted)
    if a is None or b is None:
        da, db = derive_rates(spec)
        a = da if a is None else a
        b = db if b is None else b
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    chi_v = chi if chi is not None else compute_chi(spec.lam, spec.d)
    delta_v = delta if delta is not None else compute_delta(spec.lam, spec.d, chi_v)
    grid = build_grid(corrupted, chi_v)
    vg = build_visibility_graph(grid, delta_v)
    timings["grid_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    try:
        order = bfs_spanning_order(vg)
    except Disconnected:
        n = corrupted.num_vertices
        empty = np.full(n, -1, dtype=np.int64)
        return _finalize(
            corrupted, grid, empty, empty, STATUS_VISIBILITY_DISCONNECTED, timings
        )
    label_idx = np.full(corrupted.num_vertices, -1, dtype=np.int64)
    log_n = math.log(spec.n)
    eps0 = epsilon0 if epsilon0 is not None else min(
        1.0 / (2.0 * math.log(spec.k)), delta_v
    )
    root = order[0][0]
    root_members = grid.members(root)
    seed_count = max(1, min(int(math.ceil(eps0 * log_n)), root_members.size))
    seed = root_members[:seed_count]
    label_idx[seed] = map_initial_block(corrupted, seed)
    timings["seed_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    steps = [(root, root)] + [(c, p) for c, p in order[1:]]
    for child, parent in steps:
        ref = grid.members(parent)
        members = grid.members(child)
        targets = members[label_idx[members] < 0]
        if targets.size:
            label_idx[targets] = propagate_two_community(
                corrupted, label_idx, ref, targets, a, b
            )
    phase1_idx = label_idx.copy()
    timings["propagate_ms"] = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    final_idx = label_idx
    for _ in range(max(0, refine_rounds)):
        final_idx = refine_all(corrupted, final_idx)
    timings["refine_ms"] = (time.perf_counter() - t0) * 1000.0
    return _finalize(corrupted, grid, phase1_idx, final_idx, STATUS_OK, timings)
