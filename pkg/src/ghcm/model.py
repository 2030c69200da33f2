"""Observation models, relabeling symmetries, and the Chernoff-Hellinger divergence.

The divergence between two rows of the observation matrix, weighted by the
community prior, controls the exact-recovery threshold: recovery is possible
above ``lambda * nu_d * min_pairwise_divergence == 1`` and impossible below.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, KindMismatch, TooManyCommunities

PARAM_TOL = 1e-12
# Probability clamp for degenerate Bernoulli parameters: keeps log-likelihood
# arithmetic finite while preserving argmax ordering.
PROB_CLAMP = 1e-12

_T_GRID_POINTS = 257
_T_REFINE_TOL = 1e-10
_QUAD_NODES = 256


@dataclass(frozen=True, eq=False)
class Distribution:
    """A Bernoulli(p) or Gaussian(mean, variance) observation distribution."""

    kind: str
    p: float = 0.0
    mean: float = 0.0
    variance: float = 1.0

    @staticmethod
    def bernoulli(p: float) -> "Distribution":
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"Bernoulli parameter {p} outside [0, 1]")
        return Distribution(kind="bernoulli", p=float(p))

    @staticmethod
    def gaussian(mean: float, variance: float = 1.0) -> "Distribution":
        if variance <= 0.0:
            raise DomainError(f"Gaussian variance {variance} must be positive")
        return Distribution(kind="gaussian", mean=float(mean), variance=float(variance))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.kind == "bernoulli":
            return abs(self.p - other.p) <= PARAM_TOL
        return (
            abs(self.mean - other.mean) <= PARAM_TOL
            and abs(self.variance - other.variance) <= PARAM_TOL
        )

    def __hash__(self) -> int:
        return hash(self.kind)

    def to_json(self) -> dict:
        if self.kind == "bernoulli":
            return {"kind": "bernoulli", "p": self.p}
        return {"kind": "gaussian", "mean": self.mean, "variance": self.variance}

    @staticmethod
    def from_json(doc: dict) -> "Distribution":
        kind = doc.get("kind")
        if kind == "bernoulli":
            return Distribution.bernoulli(doc["p"])
        if kind == "gaussian":
            return Distribution.gaussian(doc["mean"], doc.get("variance", 1.0))
        raise DomainError(f"unknown distribution kind {kind!r}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "bernoulli":
            return (rng.random(size) < self.p).astype(np.float64)
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(size)


def unit_ball_volume(d: int) -> float:
    """Volume of the unit Euclidean ball in d dimensions (exactly 2 for d=1)."""
    if d == 1:
        return 2.0
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class ModelSpec:
    """Full model parameterization: intensity, scale, dimension, prior, and P."""

    lam: float
    n: float
    d: int
    labels: tuple[int, ...]
    prior: tuple[float, ...]
    P: tuple[tuple[Distribution, ...], ...]

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise DomainError("intensity lambda must be positive")
        if self.n <= 0:
            raise DomainError("scaling parameter n must be positive")
        if self.d < 1:
            raise DomainError("dimension d must be a positive integer")
        k = len(self.labels)
        if k < 2:
            raise DomainError("need at least two community labels")
        if len(set(self.labels)) != k:
            raise DomainError("community labels must be distinct")
        if len(self.prior) != k:
            raise DomainError("prior length must match number of labels")
        if any(p <= 0 for p in self.prior):
            raise DomainError("all prior entries must be positive")
        if abs(sum(self.prior) - 1.0) > PARAM_TOL:
            raise DomainError("prior must sum to 1")
        if len(self.P) != k or any(len(row) != k for row in self.P):
            raise DomainError("P must be a k x k matrix of distributions")
        for i in range(k):
            for j in range(i + 1, k):
                if self.P[i][j] != self.P[j][i]:
                    raise DomainError("P must be symmetric: P[i][j] == P[j][i]")

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def nu_d(self) -> float:
        return unit_ball_volume(self.d)

    def row(self, i: int) -> tuple[Distribution, ...]:
        """Row i of P: the distribution vector of community labels[i]."""
        return self.P[i]

    def is_distinct(self) -> bool:
        """Column distinctness: P[i][r] != P[i][s] for every i and r != s."""
        k = self.k
        return all(
            self.P[i][r] != self.P[i][s]
            for i in range(k)
            for r in range(k)
            for s in range(r + 1, k)
        )

    def is_strongly_distinct(self) -> bool:
        """All upper-triangle entries of P pairwise distinct."""
        entries = [self.P[i][j] for i in range(self.k) for j in range(i, self.k)]
        return all(
            entries[a] != entries[b]
            for a in range(len(entries))
            for b in range(a + 1, len(entries))
        )

    def all_bernoulli(self) -> bool:
        return all(dist.kind == "bernoulli" for row in self.P for dist in row)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "n": self.n,
            "d": self.d,
            "labels": list(self.labels),
            "prior": list(self.prior),
            "P": [[dist.to_json() for dist in row] for row in self.P],
        }

    @staticmethod
    def from_json(doc: dict) -> "ModelSpec":
        return ModelSpec(
            lam=float(doc["lambda"]),
            n=float(doc["n"]),
            d=int(doc["d"]),
            labels=tuple(int(z) for z in doc["labels"]),
            prior=tuple(float(p) for p in doc["prior"]),
            P=tuple(
                tuple(Distribution.from_json(cell) for cell in row) for row in doc["P"]
            ),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @staticmethod
    def loads(text: str) -> "ModelSpec":
        return ModelSpec.from_json(json.loads(text))


@dataclass(frozen=True)
class Relabeling:
    """A community permutation preserving the prior and the distribution matrix."""

    perm: tuple[tuple[int, int], ...]  # sorted (label, image) pairs

    @staticmethod
    def from_mapping(mapping: dict[int, int]) -> "Relabeling":
        return Relabeling(perm=tuple(sorted(mapping.items())))

    @staticmethod
    def identity(labels: Sequence[int]) -> "Relabeling":
        return Relabeling.from_mapping({z: z for z in labels})

    def as_dict(self) -> dict[int, int]:
        return dict(self.perm)

    def __call__(self, label: int) -> int:
        return self.as_dict()[label]

    def compose(self, other: "Relabeling") -> "Relabeling":
        """self after other: (self . other)(z) = self(other(z))."""
        om = other.as_dict()
        sm = self.as_dict()
        return Relabeling.from_mapping({z: sm[om[z]] for z in om})

    def is_identity(self) -> bool:
        return all(z == w for z, w in self.perm)


@dataclass(frozen=True)
class DivergenceResult:
    value: float
    argmin_t: float


def _phi_grid(p: Distribution, q: Distribution, t: np.ndarray) -> np.ndarray:
    """phi_t(p, q) evaluated on an array of t values in [0, 1]."""
    if p.kind != q.kind:
        raise KindMismatch(f"cannot mix {p.kind} and {q.kind}")
    if p.kind == "bernoulli":
        a, b = p.p, q.p
        with np.errstate(divide="ignore", invalid="ignore"):
            # 0^t = 0 for t > 0; 0^0 = 1 by the t in [0,1] endpoint convention.
            ones = np.power(a, t) * np.power(b, 1.0 - t)
            zeros = np.power(1.0 - a, t) * np.power(1.0 - b, 1.0 - t)
        return np.nan_to_num(ones, nan=0.0) + np.nan_to_num(zeros, nan=0.0)
    if abs(p.variance - q.variance) <= PARAM_TOL:
        sigma2 = p.variance
        diff = p.mean - q.mean
        return np.exp(-t * (1.0 - t) * diff * diff / (2.0 * sigma2))
    return _phi_quadrature(p, q, t)


def _phi_quadrature(p: Distribution, q: Distribution, t: np.ndarray) -> np.ndarray:
    """Gauss-Legendre quadrature for unequal-variance Gaussian pairs."""
    sig_max = math.sqrt(max(p.variance, q.variance))
    lo = min(p.mean, q.mean) - 10.0 * sig_max
    hi = max(p.mean, q.mean) + 10.0 * sig_max
    nodes, weights = np.polynomial.legendre.leggauss(_QUAD_NODES)
    x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    scale = 0.5 * (hi - lo)
    log_p = -((x - p.mean) ** 2) / (2 * p.variance) - 0.5 * math.log(
        2 * math.pi * p.variance
    )
    log_q = -((x - q.mean) ** 2) / (2 * q.variance) - 0.5 * math.log(
        2 * math.pi * q.variance
    )
    t_col = np.atleast_1d(t)[:, None]
    integrand = np.exp(t_col * log_p + (1.0 - t_col) * log_q)
    out = scale * integrand @ weights
    return out if np.ndim(t) else out[0]


def phi_t(p: Distribution, q: Distribution, t: float) -> float:
    """Hellinger-type integral of p^t q^(1-t); equals 1 at t in {0, 1}."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    return float(_phi_grid(p, q, np.asarray(float(t))))


def _mixture_phi(
    theta_i: Sequence[Distribution],
    theta_j: Sequence[Distribution],
    prior: Sequence[float],
    t: np.ndarray,
) -> np.ndarray:
    total = np.zeros_like(np.atleast_1d(t), dtype=np.float64)
    for pi_r, p, q in zip(prior, theta_i, theta_j):
        total += pi_r * np.atleast_1d(_phi_grid(p, q, t))
    return total


def ch_divergence(
    theta_i: Sequence[Distribution],
    theta_j: Sequence[Distribution],
    prior: Sequence[float],
) -> DivergenceResult:
    """Chernoff-Hellinger divergence between two distribution vectors.

    Minimizes the prior-weighted mixture of phi_t over t in [0, 1] on a
    257-point grid, then sharpens the best bracket with golden-section search
    until the interval is below 1e-10.
    """
    if not (len(theta_i) == len(theta_j) == len(prior)):
        raise DomainError("distribution vectors and prior must share length k")
    grid = np.linspace(0.0, 1.0, _T_GRID_POINTS)
    values = _mixture_phi(theta_i, theta_j, prior, grid)
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, _T_GRID_POINTS - 1)]

    def f(t: float) -> float:
        return float(_mixture_phi(theta_i, theta_j, prior, np.asarray(t))[0])

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > _T_REFINE_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    t_star = (a + b) / 2.0
    f_star = f(t_star)
    # Keep the grid point if refinement did not improve on it.
    if values[best] < f_star:
        t_star, f_star = float(grid[best]), float(values[best])
    value = min(max(1.0 - f_star, 0.0), 1.0)
    return DivergenceResult(value=value, argmin_t=t_star)


def min_pairwise_divergence(spec: ModelSpec) -> float:
    """Smallest CH divergence over unordered pairs of communities."""
    k = spec.k
    best = math.inf
    for i in range(k):
        for j in range(i + 1, k):
            result = ch_divergence(spec.row(i), spec.row(j), spec.prior)
            best = min(best, result.value)
    return best


def threshold_margin(spec: ModelSpec) -> float:
    """lambda * nu_d * min-divergence; exact recovery needs this above 1."""
    return spec.lam * spec.nu_d * min_pairwise_divergence(spec)


def enumerate_relabelings(spec: ModelSpec) -> list[Relabeling]:
    """All permutations of Z preserving the prior and P, in lexicographic order."""
    k = spec.k
    if k > 8:
        raise TooManyCommunities(f"k={k} exceeds the enumeration guard of 8")
    labels = spec.labels
    index = {z: i for i, z in enumerate(labels)}
    found = []
    for images in itertools.permutations(labels):
        perm = {z: w for z, w in zip(labels, images)}
        ok = all(
            abs(spec.prior[index[z]] - spec.prior[index[perm[z]]]) <= PARAM_TOL
            for z in labels
        )
        if ok:
            ok = all(
                spec.P[index[zi]][index[zj]] == spec.P[index[perm[zi]]][index[perm[zj]]]
                for zi in labels
                for zj in labels
            )
        if ok:
            found.append(Relabeling.from_mapping(perm))
    return found


def log_likelihood(dist: Distribution, y: float) -> float:
    """log p(y), with degenerate Bernoulli probabilities clamped to [1e-12, 1-1e-12]."""
    if dist.kind == "bernoulli":
        if y not in (0.0, 1.0):
            raise DomainError(f"Bernoulli observation {y} not in {{0, 1}}")
        p = min(max(dist.p, PROB_CLAMP), 1.0 - PROB_CLAMP)
        return math.log(p) if y == 1.0 else math.log(1.0 - p)
    return -((y - dist.mean) ** 2) / (2.0 * dist.variance) - 0.5 * math.log(
        2.0 * math.pi * dist.variance
    )


def log_likelihood_vec(dist: Distribution, y: np.ndarray) -> np.ndarray:
    """Vectorized log p(y) over an observation array."""
    y = np.asarray(y, dtype=np.float64)
    if dist.kind == "bernoulli":
        p = min(max(dist.p, PROB_CLAMP), 1.0 - PROB_CLAMP)
        return y * math.log(p) + (1.0 - y) * math.log(1.0 - p)
    return -((y - dist.mean) ** 2) / (2.0 * dist.variance) - 0.5 * math.log(
        2.0 * math.pi * dist.variance
    )
