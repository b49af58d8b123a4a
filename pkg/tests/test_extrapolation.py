import math

import numpy as np
import pytest
import scipy.linalg

from latlab.extrapolation import (
    ExtrapolationSpace,
    GeneratorMatrix,
    extrapolation_norm,
    generator_from_json,
    generator_to_json,
    lambda_equivalence_report,
    multiplication_example_check,
    multiplication_generator,
    neumann_laplacian_1d,
    resolvent,
    resolvent_scheme,
    theorem41_sup,
)
from latlab.ordered_space import NormSpec, OrderedSpaceSpec, PolyhedralCone
from latlab.sobolev_grid import GridDomain


def grid_space(domain, p=2.0):
    w = np.full(domain.node_count, domain.cell_measure)
    return OrderedSpaceSpec.standard_lp(w, p)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

class TestGeneratorMatrix:
    def test_lam0_must_dominate_spectrum(self):
        with pytest.raises(ValueError):
            GeneratorMatrix(np.array([[1.0]]), lam0=0.5)

    def test_negative_offdiagonal_rejected(self):
        A = np.array([[-1.0, -0.5], [0.0, -1.0]])
        with pytest.raises(ValueError):
            GeneratorMatrix(A, lam0=1.0)

    def test_multiplication_generator(self):
        gen = multiplication_generator([0.0, 1.0, 3.0])
        assert gen.positivity_certificate
        assert np.array_equal(np.diag(gen.A), [0.0, -1.0, -3.0])
        with pytest.raises(ValueError):
            multiplication_generator([-1.0])

    def test_neumann_rows(self):
        gen = neumann_laplacian_1d(3, 1.0)
        expected = np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]])
        assert np.array_equal(gen.A, expected)

    def test_neumann_row_sums_zero(self):
        gen = neumann_laplacian_1d(17, 1.0 / 16.0)
        assert np.max(np.abs(gen.A @ np.ones(17))) == 0.0

    def test_neumann_needs_three_nodes(self):
        with pytest.raises(ValueError):
            neumann_laplacian_1d(2, 1.0)

    def test_semigroup_converges_to_mean(self):
        gen = neumann_laplacian_1d(9, 1.0 / 8.0)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(9)
        # eigen-decomposition oracle: projection onto constants is the mean
        evolved = scipy.linalg.expm(1000.0 * gen.A) @ x
        assert np.max(np.abs(evolved - x.mean())) <= 1e-6


# ---------------------------------------------------------------------------
# resolvents
# ---------------------------------------------------------------------------

class TestResolvent:
    def test_diagonal_formula(self):
        m = np.array([0.0, 1.0, 3.0])
        gen = multiplication_generator(m)
        R = resolvent(gen, 1.0)
        assert np.allclose(R, np.diag(1.0 / (1.0 + m)), atol=1e-14)

    def test_neumann_entrywise_positive(self):
        gen = neumann_laplacian_1d(12, 1.0 / 11.0)
        for mu in (1.0, 2.0):
            assert np.min(resolvent(gen, mu)) >= -1e-12

    def test_constants_scaled_by_inverse_mu(self):
        gen = neumann_laplacian_1d(8, 1.0 / 7.0)
        for mu in (1.0, 2.5):
            assert np.allclose(resolvent(gen, mu) @ np.ones(8), 1.0 / mu, atol=1e-12)

    def test_mu_below_lam0_rejected(self):
        gen = neumann_laplacian_1d(5, 0.25)
        with pytest.raises(ValueError):
            resolvent(gen, 0.25)

    def test_resolvent_identity(self):
        gen = neumann_laplacian_1d(16, 1.0 / 15.0)
        R1, R2 = resolvent(gen, 1.0), resolvent(gen, 2.0)
        resid = np.max(np.abs(R1 - R2 - (2.0 - 1.0) * (R1 @ R2)))
        assert resid <= 1e-9


# ---------------------------------------------------------------------------
# extrapolation norms
# ---------------------------------------------------------------------------

class TestExtrapolationNorm:
    def test_zero(self):
        space = ExtrapolationSpace.build(
            OrderedSpaceSpec.standard_lp(np.ones(4), 2.0),
            multiplication_generator(np.arange(4.0)))
        assert extrapolation_norm(space, np.zeros(4)) == 0.0

    def test_multiplication_closed_form(self):
        space = ExtrapolationSpace(
            OrderedSpaceSpec.standard_lp(np.ones(3), 2.0),
            multiplication_generator([0.0, 1.0, 3.0]), lam=1.0)
        val = extrapolation_norm(space, np.ones(3))
        assert val == pytest.approx(math.sqrt(21.0) / 4.0, abs=1e-14)

    def test_lambda_equivalence_within_bound(self):
        dom = GridDomain.interval(0.0, 1.0, 32)
        gen = neumann_laplacian_1d(32, dom.h)
        space = ExtrapolationSpace(grid_space(dom), gen, lam=1.0)
        report = lambda_equivalence_report(space, 2.0, n_samples=100, seed=0)
        assert report.passed
        assert report.bound is not None
        assert report.ratio_max <= report.bound * (1 + 1e-9)
        assert report.ratio_min >= 1.0 / report.bound * (1 - 1e-9)

    def test_lam_must_exceed_lam0(self):
        with pytest.raises(ValueError):
            ExtrapolationSpace(OrderedSpaceSpec.standard_lp(np.ones(3), 2.0),
                               multiplication_generator([0.0, 1.0, 2.0]), lam=0.2)


class TestExtrapolationCone:
    def test_membership_matches_componentwise_sign(self):
        for gen in (multiplication_generator(np.linspace(0, 3, 8)),
                    neumann_laplacian_1d(8, 1.0 / 7.0)):
            space = ExtrapolationSpace.build(
                OrderedSpaceSpec.standard_lp(np.ones(8), 2.0), gen)
            rng = np.random.default_rng(1)
            agree = 0
            for _ in range(1000):
                x = rng.standard_normal(8)
                if rng.uniform() < 0.5:
                    x = np.abs(x)
                agree += space.in_extrapolation_cone(x) == bool(np.all(x >= 0))
            assert agree == 1000


# ---------------------------------------------------------------------------
# resolvent scheme and the supremum construction
# ---------------------------------------------------------------------------

class TestResolventScheme:
    def test_approximants_positive(self):
        gen = neumann_laplacian_1d(16, 1.0 / 15.0)
        scheme = resolvent_scheme(gen, n_max=64)
        for n in scheme.indices():
            assert np.min(scheme.R(n)) >= -1e-12

    def test_convergence_envelope(self):
        dom = GridDomain.interval(0.0, 1.0, 32)
        gen = neumann_laplacian_1d(32, dom.h)
        scheme = resolvent_scheme(gen, n_max=256)
        space = grid_space(dom)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.standard_normal(32)
            errs = [space.norm.value(scheme.R(n) @ x - x) for n in scheme.indices()]
            assert all(b < a for a, b in zip(errs, errs[1:]))
            assert errs[-1] <= 1e-2 * space.norm.value(gen.A @ x)

    def test_theorem41_positive_vector(self):
        dom = GridDomain.interval(0.0, 1.0, 32)
        gen = neumann_laplacian_1d(32, dom.h)
        space = ExtrapolationSpace.build(grid_space(dom), gen)
        z = np.abs(np.sin(2 * np.pi * dom.axis(0))) + 0.5
        s = theorem41_sup(space, z, tol=1e-6)
        assert np.max(np.abs(s - z)) <= 1e-5

    def test_theorem41_matches_modulus_neumann(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        gen = neumann_laplacian_1d(64, dom.h)
        space = ExtrapolationSpace.build(grid_space(dom), gen)
        z = np.sin(2 * np.pi * dom.axis(0))
        s = theorem41_sup(space, z, tol=1e-6)
        assert np.max(np.abs(s - np.abs(z))) <= 1e-6

    def test_theorem41_matches_modulus_multiplication(self):
        m = np.linspace(0.0, 3.0, 16)
        gen = multiplication_generator(m)
        space = ExtrapolationSpace.build(
            OrderedSpaceSpec.standard_lp(np.ones(16), 2.0), gen)
        rng = np.random.default_rng(3)
        z = rng.standard_normal(16)
        tol = 1e-6
        s = theorem41_sup(space, z, tol=tol)
        # diagonal computation: n/(n + m_i) -> 1 monotonically
        assert np.max(np.abs(s - np.abs(z))) <= 10 * tol


# ---------------------------------------------------------------------------
# the multiplication example
# ---------------------------------------------------------------------------

class TestMultiplicationExample:
    def test_zero_multiplier_reduces_to_base_norm(self):
        rep = multiplication_example_check(np.zeros(5), p=2.0, seed=4)
        assert rep.passed and rep.identity_gap <= 1e-12

    def test_reference_vector(self):
        rep = multiplication_example_check(np.array([0.0, 1.0, 3.0]), p=2.0)
        assert rep.passed

    def test_weighted_measure(self):
        rng = np.random.default_rng(5)
        rep = multiplication_example_check(
            rng.uniform(0, 4, size=6), p=3.0, mu_weights=rng.uniform(0.5, 2, size=6))
        assert rep.passed

    def test_semigroup_entrywise_nonnegative(self):
        rep = multiplication_example_check(np.array([0.0, 2.0, 5.0]))
        assert rep.semigroup_min_entry >= -1e-12

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            multiplication_example_check(np.ones(3), mu_weights=np.array([1.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

class TestSerialization:
    def test_multiplication_round_trip(self):
        gen = multiplication_generator([0.0, 1.5, 2.0])
        text = generator_to_json(gen, "multiplication", lam=1.0)
        gen2, lam = generator_from_json(text)
        assert lam == 1.0
        assert np.allclose(gen2.A, gen.A)

    def test_neumann_round_trip(self):
        gen = neumann_laplacian_1d(9, 0.125)
        text = generator_to_json(gen, "neumann_laplacian", lam=1.0, n=9, h=0.125)
        gen2, lam = generator_from_json(text)
        assert np.allclose(gen2.A, gen.A)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            generator_from_json('{"n": 3, "h": 1.0, "kind": "nope", "m": null, "lambda": 1.0}')
