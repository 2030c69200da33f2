import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghcm import (
    Distribution,
    DomainError,
    KindMismatch,
    ModelSpec,
    Relabeling,
    TooManyCommunities,
    ch_divergence,
    enumerate_relabelings,
    log_likelihood,
    min_pairwise_divergence,
    phi_t,
    threshold_margin,
    unit_ball_volume,
)

B = Distribution.bernoulli
G = Distribution.gaussian


def symmetric_bernoulli_spec(a, b, lam=2.0, n=1e4, d=1):
    return ModelSpec(
        lam=lam, n=n, d=d, labels=(1, 2), prior=(0.5, 0.5),
        P=((B(a), B(b)), (B(b), B(a))),
    )


class TestDistribution:
    def test_bernoulli_domain(self):
        with pytest.raises(DomainError):
            B(1.5)
        with pytest.raises(DomainError):
            B(-0.1)

    def test_gaussian_domain(self):
        with pytest.raises(DomainError):
            G(0.0, 0.0)

    def test_equality_tolerance(self):
        assert B(0.3) == B(0.3 + 1e-13)
        assert B(0.3) != B(0.3 + 1e-9)
        assert G(1.0, 2.0) == G(1.0 + 1e-13, 2.0)
        assert B(0.5) != G(0.5)

    def test_json_round_trip(self):
        for dist in (B(0.25), G(-1.0, 0.5)):
            assert Distribution.from_json(dist.to_json()) == dist

    def test_json_unknown_kind(self):
        with pytest.raises(DomainError):
            Distribution.from_json({"kind": "poisson", "rate": 3})

    def test_sample_bernoulli_support(self):
        rng = np.random.default_rng(0)
        values = B(0.4).sample(rng, 500)
        assert set(np.unique(values)) <= {0.0, 1.0}

    def test_sample_gaussian_moments(self):
        rng = np.random.default_rng(0)
        values = G(2.0, 4.0).sample(rng, 200_000)
        assert abs(values.mean() - 2.0) < 0.05
        assert abs(values.var() - 4.0) < 0.1


class TestUnitBallVolume:
    def test_d1_exact(self):
        assert unit_ball_volume(1) == 2.0

    def test_d2_d3(self):
        assert unit_ball_volume(2) == pytest.approx(math.pi, abs=1e-15)
        assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3, abs=1e-14)


class TestModelSpec:
    def test_validation(self):
        with pytest.raises(DomainError):
            symmetric_bernoulli_spec(0.9, 0.1, lam=-1)
        with pytest.raises(DomainError):
            ModelSpec(lam=1, n=100, d=1, labels=(1,), prior=(1.0,), P=((B(0.5),),))
        with pytest.raises(DomainError):
            ModelSpec(
                lam=1, n=100, d=1, labels=(1, 2), prior=(0.6, 0.5),
                P=((B(0.9), B(0.1)), (B(0.1), B(0.9))),
            )

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(DomainError):
            ModelSpec(
                lam=1, n=100, d=1, labels=(1, 2), prior=(0.5, 0.5),
                P=((B(0.9), B(0.1)), (B(0.2), B(0.9))),
            )

    def test_json_round_trip(self):
        spec = symmetric_bernoulli_spec(0.9, 0.1)
        assert ModelSpec.loads(spec.dumps()) == spec
        doc = spec.to_json()
        assert "lambda" in doc and doc["lambda"] == 2.0

    def test_distinctness(self):
        assert symmetric_bernoulli_spec(0.9, 0.1).is_distinct()
        same = ModelSpec(
            lam=1, n=100, d=1, labels=(1, 2), prior=(0.5, 0.5),
            P=((B(0.5), B(0.5)), (B(0.5), B(0.5))),
        )
        assert not same.is_distinct()

    def test_strong_distinctness(self):
        # symmetric two-community: P11 == P22, so only plain distinctness holds
        assert not symmetric_bernoulli_spec(0.9, 0.1).is_strongly_distinct()
        strong = ModelSpec(
            lam=1, n=100, d=1, labels=(1, 2), prior=(0.3, 0.7),
            P=((B(0.9), B(0.2)), (B(0.2), B(0.6))),
        )
        assert strong.is_strongly_distinct()


class TestPhi:
    def test_endpoints_are_one(self):
        assert phi_t(B(0.3), B(0.8), 0.0) == pytest.approx(1.0, abs=1e-12)
        assert phi_t(B(0.3), B(0.8), 1.0) == pytest.approx(1.0, abs=1e-12)
        assert phi_t(G(0.0), G(2.0), 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            phi_t(B(0.3), B(0.8), 1.5)

    def test_kind_mismatch(self):
        with pytest.raises(KindMismatch):
            phi_t(B(0.3), G(0.0), 0.5)

    def test_degenerate_bernoulli(self):
        # 0^t = 0 for t > 0 keeps the integral finite
        assert phi_t(B(1.0), B(0.0), 0.5) == pytest.approx(0.0, abs=1e-12)
        assert phi_t(B(1.0), B(1.0), 0.5) == pytest.approx(1.0, abs=1e-12)

    @given(
        p=st.floats(0.01, 0.99), q=st.floats(0.01, 0.99), t=st.floats(0.0, 1.0)
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetry(self, p, q, t):
        assert phi_t(B(p), B(q), t) == pytest.approx(
            phi_t(B(q), B(p), 1.0 - t), abs=1e-12
        )

    @given(p=st.floats(0.01, 0.99), q=st.floats(0.01, 0.99), t=st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, p, q, t):
        value = phi_t(B(p), B(q), t)
        assert 0.0 < value <= 1.0 + 1e-12

    def test_unequal_variance_quadrature_vs_quad(self):
        from scipy.integrate import quad

        p, q = G(0.0, 1.0), G(1.5, 2.5)
        for t in (0.2, 0.5, 0.8):
            def integrand(x):
                fp = math.exp(-(x**2) / 2) / math.sqrt(2 * math.pi)
                fq = math.exp(-((x - 1.5) ** 2) / 5) / math.sqrt(5 * math.pi)
                return fp**t * fq ** (1 - t)

            expected, _ = quad(integrand, -30, 30)
            assert phi_t(p, q, t) == pytest.approx(expected, abs=1e-9)


class TestDivergence:
    def test_two_community_bernoulli_closed_form(self):
        # symmetric prior, rows (a,b)/(b,a): minimum lands at t=1/2
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = rng.uniform(0.02, 0.98, size=2)
            spec = symmetric_bernoulli_spec(a, b)
            expected = 1 - math.sqrt(a * b) - math.sqrt((1 - a) * (1 - b))
            result = ch_divergence(spec.row(0), spec.row(1), spec.prior)
            assert result.value == pytest.approx(expected, abs=1e-9)
            assert result.argmin_t == pytest.approx(0.5, abs=1e-6)

    def test_gaussian_sync_closed_form(self):
        for sigma in (0.3, 1.0, 2.7):
            v = sigma * sigma
            rows = ((G(1.0, v), G(-1.0, v)), (G(-1.0, v), G(1.0, v)))
            result = ch_divergence(rows[0], rows[1], (0.5, 0.5))
            assert result.value == pytest.approx(
                1 - math.exp(-1 / (2 * v)), abs=1e-9
            )

    def test_identical_rows_zero(self):
        row = (B(0.4), B(0.4))
        assert ch_divergence(row, row, (0.5, 0.5)).value == pytest.approx(
            0.0, abs=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            ch_divergence((B(0.5),), (B(0.5), B(0.5)), (0.5, 0.5))

    def test_threshold_margin(self):
        # d=1: margin = lambda * 2 * divergence
        spec = symmetric_bernoulli_spec(0.9, 0.1, lam=2.0, d=1)
        expected = 2.0 * 2.0 * (1 - 2 * math.sqrt(0.09))
        assert threshold_margin(spec) == pytest.approx(expected, abs=1e-9)

    def test_min_pairwise_three_communities(self):
        spec = ModelSpec(
            lam=1, n=1e4, d=1, labels=(0, 1, 2), prior=(1 / 3, 1 / 3, 1 / 3),
            P=(
                (B(0.9), B(0.1), B(0.2)),
                (B(0.1), B(0.8), B(0.3)),
                (B(0.2), B(0.3), B(0.7)),
            ),
        )
        values = [
            ch_divergence(spec.row(i), spec.row(j), spec.prior).value
            for i in range(3)
            for j in range(i + 1, 3)
        ]
        assert min_pairwise_divergence(spec) == pytest.approx(min(values), abs=0)


class TestRelabelings:
    def test_symmetric_spec_has_swap(self):
        spec = symmetric_bernoulli_spec(0.9, 0.1)
        omegas = enumerate_relabelings(spec)
        assert len(omegas) == 2
        assert omegas[0].is_identity()
        assert omegas[1].as_dict() == {1: 2, 2: 1}

    def test_asymmetric_prior_trivial_group(self):
        spec = ModelSpec(
            lam=1, n=1e4, d=1, labels=(1, 2), prior=(0.3, 0.7),
            P=((B(0.9), B(0.1)), (B(0.1), B(0.9))),
        )
        omegas = enumerate_relabelings(spec)
        assert len(omegas) == 1 and omegas[0].is_identity()

    def test_group_closure(self):
        spec = ModelSpec(
            lam=1, n=1e4, d=1, labels=(0, 1, 2), prior=(1 / 3, 1 / 3, 1 / 3),
            P=(
                (B(0.9), B(0.1), B(0.1)),
                (B(0.1), B(0.9), B(0.1)),
                (B(0.1), B(0.1), B(0.9)),
            ),
        )
        omegas = enumerate_relabelings(spec)
        assert len(omegas) == 6  # full symmetric group on three labels
        found = set(o.perm for o in omegas)
        for o1 in omegas:
            for o2 in omegas:
                assert o1.compose(o2).perm in found

    def test_guard(self):
        k = 9
        labels = tuple(range(k))
        spec = ModelSpec(
            lam=1, n=1e4, d=1, labels=labels, prior=tuple([1 / k] * k),
            P=tuple(
                tuple(B(0.9) if i == j else B(0.1) for j in range(k))
                for i in range(k)
            ),
        )
        with pytest.raises(TooManyCommunities):
            enumerate_relabelings(spec)


class TestLogLikelihood:
    def test_bernoulli(self):
        assert log_likelihood(B(0.25), 1.0) == pytest.approx(math.log(0.25))
        assert log_likelihood(B(0.25), 0.0) == pytest.approx(math.log(0.75))

    def test_bernoulli_domain(self):
        with pytest.raises(DomainError):
            log_likelihood(B(0.25), 0.5)

    def test_degenerate_clamp_finite(self):
        assert math.isfinite(log_likelihood(B(1.0), 0.0))
        assert math.isfinite(log_likelihood(B(0.0), 1.0))

    def test_gaussian(self):
        expected = -0.5 - 0.5 * math.log(2 * math.pi)
        assert log_likelihood(G(0.0, 1.0), 1.0) == pytest.approx(expected)
