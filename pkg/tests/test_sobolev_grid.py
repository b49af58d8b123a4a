import numpy as np
import pytest
import scipy.optimize

from latlab.sobolev_grid import (
    BoundaryApproxOp,
    ChartError,
    GridDomain,
    GridFunction,
    GridTooCoarseError,
    Mollifier,
    approx_identity_with_boundary,
    build_boundary_chart,
    bump,
    default_chart_cover,
    diff_operator,
    gridfunction_from_csv,
    gridfunction_to_csv,
    mollify,
    negative_sobolev_norm,
    positive_dominant_w0,
    pushin_operator,
    sobolev_norm,
)


# ---------------------------------------------------------------------------
# domains and grid functions
# ---------------------------------------------------------------------------

class TestGridDomain:
    def test_too_few_points(self):
        with pytest.raises(ValueError):
            GridDomain.interval(0.0, 1.0, 3)

    def test_spacing_conventions(self):
        assert GridDomain.interval(0.0, 1.0, 11).h == pytest.approx(0.1)
        assert GridDomain.torus(1.0, 10).h == pytest.approx(0.1)

    def test_rectangle_nodes(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 2.0, 5)
        pts = dom.points()
        assert pts.shape == (25, 2)
        assert dom.node_count == 25

    def test_boundary_distance(self):
        dom = GridDomain.interval(0.0, 1.0, 5)
        d = dom.boundary_distance(np.array([[0.25], [0.9]]))
        assert np.allclose(d, [0.25, 0.1])
        with pytest.raises(ValueError):
            GridDomain.torus(1.0, 8).boundary_distance(np.array([[0.5]]))

    def test_csv_round_trip(self, tmp_path):
        dom = GridDomain.interval(0.0, 1.0, 9)
        f = GridFunction(dom, np.sin(np.arange(9.0)))
        path = tmp_path / "f.csv"
        gridfunction_to_csv(f, path)
        g = gridfunction_from_csv(path)
        assert g.domain == dom
        assert np.array_equal(g.values, f.values)

    def test_csv_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0\n2.0\n")
        with pytest.raises(ValueError):
            gridfunction_from_csv(path)

    def test_value_count_mismatch(self):
        with pytest.raises(ValueError):
            GridFunction(GridDomain.interval(0, 1, 5), np.zeros(4))


# ---------------------------------------------------------------------------
# Sobolev norms
# ---------------------------------------------------------------------------

class TestSobolevNorm:
    def test_zero(self):
        dom = GridDomain.interval(0.0, 1.0, 8)
        assert sobolev_norm(GridFunction(dom, np.zeros(8)), 1, 2.0) == 0.0

    def test_constant_on_torus(self):
        dom = GridDomain.torus(1.0, 16)
        f = GridFunction(dom, np.full(16, 3.0))
        for p in (1.5, 2.0, 3.0):
            # difference term vanishes exactly; measure is the full period
            assert sobolev_norm(f, 1, p) == pytest.approx(3.0, abs=1e-12)

    def test_linear_function_closed_form(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        t = dom.axis(0)
        val = sobolev_norm(GridFunction(dom, t), 1, 2.0)
        assert abs(val - np.sqrt(1.0 / 3.0 + 1.0)) <= 2 * dom.h

    def test_order_too_large(self):
        dom = GridDomain.interval(0.0, 1.0, 4)
        with pytest.raises(ValueError):
            sobolev_norm(GridFunction(dom, np.zeros(4)), 3, 2.0)

    def test_rectangle_mixed_indices(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 8)
        f = GridFunction(dom, np.ones(64))
        # constants keep only the order-zero term
        assert sobolev_norm(f, 2, 2.0) == pytest.approx(1.0 * (dom.h * 8 / (dom.h * 8)),
                                                        rel=0.3)


class TestNegativeSobolevNorm:
    def test_zero(self):
        dom = GridDomain.interval(0.0, 1.0, 8)
        assert negative_sobolev_norm(GridFunction(dom, np.zeros(8)), 1, 2.0) == 0.0

    def test_torus_constant_equals_l2_norm(self):
        dom = GridDomain.torus(1.0, 32)
        g = GridFunction(dom, np.ones(32))
        # constants are in the kernel of D, so the optimizer is f = const
        assert negative_sobolev_norm(g, 1, 2.0) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("p,q", [(2.0, 2.0), (3.0, 1.5)])
    def test_spike_against_ascent_oracle(self, p, q):
        dom = GridDomain.interval(0.0, 1.0, 24)
        g = np.zeros(24)
        g[10] = 1.0
        val = negative_sobolev_norm(GridFunction(dom, g), 1, p)
        h = dom.h

        def neg_ratio(f):
            nf = sobolev_norm(GridFunction(dom, f), 1, q)
            return -h * np.dot(f, g) / nf if nf > 0 else 0.0

        rng = np.random.default_rng(3)
        best = max((rng.standard_normal(24) for _ in range(200)),
                   key=lambda f: -neg_ratio(f))
        res = scipy.optimize.minimize(neg_ratio, best, method="BFGS",
                                      options={"maxiter": 5000, "gtol": 1e-14})
        assert val == pytest.approx(-res.fun, rel=1e-6)

    def test_requires_positive_order(self):
        dom = GridDomain.interval(0.0, 1.0, 8)
        with pytest.raises(ValueError):
            negative_sobolev_norm(GridFunction(dom, np.ones(8)), 0, 2.0)


# ---------------------------------------------------------------------------
# mollifiers
# ---------------------------------------------------------------------------

class TestMollify:
    def test_bump_integral_one(self):
        t = np.linspace(-1.5, 1.5, 30001)
        assert np.trapezoid(bump(t), t) == pytest.approx(1.0, abs=1e-8)

    def test_kernel_weights_normalized(self):
        w = Mollifier(0.1).weights(0.01)
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(w > 0)

    def test_constant_fixed_exactly_on_torus(self):
        dom = GridDomain.torus(1.0, 64)
        f = GridFunction(dom, np.full(64, 2.5))
        out = mollify(f, 0.1)
        assert np.max(np.abs(out.values - 2.5)) <= 1e-12

    def test_positivity(self):
        dom = GridDomain.torus(1.0, 64)
        rng = np.random.default_rng(0)
        f = GridFunction(dom, np.abs(rng.standard_normal(64)))
        assert np.all(mollify(f, 0.1).values >= 0)

    @pytest.mark.parametrize("delta", [0.1, 0.05, 0.025])
    def test_lipschitz_bound(self, delta):
        dom = GridDomain.torus(1.0, 128)
        t = dom.axis(0)
        f = GridFunction(dom, np.abs(t - 0.5))  # Lipschitz constant 1
        err = np.max(np.abs(mollify(f, delta).values - f.values))
        assert err <= delta

    def test_second_order_rate(self):
        dom = GridDomain.torus(1.0, 128)
        t = dom.axis(0)
        f = GridFunction(dom, np.sin(2 * np.pi * t) + 0.5 * np.cos(4 * np.pi * t))
        errs = [np.max(np.abs(mollify(f, d).values - f.values))
                for d in (0.1, 0.05, 0.025)]
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 1.8

    def test_scale_below_grid_rejected(self):
        dom = GridDomain.torus(1.0, 16)
        with pytest.raises(GridTooCoarseError):
            mollify(GridFunction(dom, np.ones(16)), 0.05)

    def test_rectangle_separable(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 32)
        rng = np.random.default_rng(1)
        f = GridFunction(dom, np.abs(rng.standard_normal(dom.node_count)))
        out = mollify(f, 0.1)
        assert np.all(out.values >= 0)


# ---------------------------------------------------------------------------
# boundary charts
# ---------------------------------------------------------------------------

class TestBoundaryChart:
    def test_interior_compression_example(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        chart = build_boundary_chart(dom, [0.5], r=0.25, ns=(2,))
        lo, hi = chart.image_box(2, dom)
        assert lo[0] == pytest.approx(0.375) and hi[0] == pytest.approx(0.625)

    def test_left_endpoint_map_coefficients(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        r = 0.4
        chart = build_boundary_chart(dom, [0.0], r=r, ns=(2,))
        B, b = chart.matrix(2)
        assert B[0] == pytest.approx(0.5) and b[0] == pytest.approx(r / 8.0)
        # V = (-r/4, 3r/4) and c = r/4 as in the flat-boundary construction
        assert chart.v_lo[0] == pytest.approx(-r / 4.0)
        assert chart.v_hi[0] == pytest.approx(3.0 * r / 4.0)
        assert chart.c[0] == pytest.approx(r / 4.0)

    def test_maps_converge_to_identity(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        chart = build_boundary_chart(dom, [0.0], r=0.4, ns=(2, 1024))
        B, b = chart.matrix(1024)
        assert abs(B[0] - 1.0) <= 1e-3 and abs(b[0]) <= 1e-3

    def test_square_edge_chart_containment(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 16)
        chart = build_boundary_chart(dom, [0.5, 0.0], r=0.4, ns=(2, 4, 8),
                                     n_samples=10_000)
        rng = np.random.default_rng(5)
        lo = np.maximum(chart.v_lo, dom.lo)
        hi = np.minimum(chart.v_hi, dom.hi)
        pts = rng.uniform(lo, hi, size=(10_000, 2))
        for n in (2, 4, 8):
            img = chart.apply(n, pts)
            assert np.all((img > dom.lo) & (img < dom.hi))

    def test_square_corner_chart(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 16)
        chart = build_boundary_chart(dom, [0.0, 0.0], r=0.4, ns=(2, 4))
        assert chart.compress == (True, True)

    def test_center_outside_rejected(self):
        dom = GridDomain.interval(0.0, 1.0, 16)
        with pytest.raises(ChartError):
            build_boundary_chart(dom, [1.5])

    def test_torus_has_no_charts(self):
        with pytest.raises(ChartError):
            build_boundary_chart(GridDomain.torus(1.0, 16), [0.5])


# ---------------------------------------------------------------------------
# push-in operators
# ---------------------------------------------------------------------------

class TestPushin:
    def test_support_strictly_inside(self):
        dom = GridDomain.interval(0.0, 1.0, 257)
        op = pushin_operator(dom, 4)
        f = GridFunction(dom, np.ones(257))
        sf = op.apply(f)
        support = np.nonzero(sf.values)[0]
        pts = dom.points()[support]
        assert dom.boundary_distance(pts).min() > 0
        assert np.all(op.node_in_k(pts))

    def test_vanishes_outside_k_exactly(self):
        rng = np.random.default_rng(2)
        for dom in (GridDomain.interval(0.0, 1.0, 257),
                    GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 32)):
            for n in (2, 4, 8):
                op = pushin_operator(dom, n)
                outside = ~op.node_in_k(dom.points())
                assert outside.any()
                for _ in range(5):
                    f = rng.standard_normal(dom.node_count)
                    assert np.max(np.abs((op.matrix @ f)[outside])) == 0.0

    def test_positivity(self):
        dom = GridDomain.interval(0.0, 1.0, 129)
        op = pushin_operator(dom, 2)
        rng = np.random.default_rng(3)
        for _ in range(10):
            f = np.abs(rng.standard_normal(129))
            assert np.min(op.matrix @ f) >= 0.0

    def test_lp_error_decreases(self):
        dom = GridDomain.interval(0.0, 1.0, 513)
        t = dom.axis(0)
        f = GridFunction(dom, np.sin(np.pi * t))
        errs = []
        for n in (2, 4, 8, 16):
            op = pushin_operator(dom, n)
            errs.append(sobolev_norm(
                GridFunction(dom, op.matrix @ f.values - f.values), 0, 2.0))
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_sobolev_error_decreases_for_compact_support(self):
        dom = GridDomain.interval(0.0, 1.0, 513)
        t = dom.axis(0)
        f = GridFunction(dom, np.sin(np.pi * t) ** 4)  # vanishes to high order
        errs = []
        for n in (2, 4, 8, 16):
            op = pushin_operator(dom, n)
            errs.append(sobolev_norm(
                GridFunction(dom, op.matrix @ f.values - f.values), 1, 2.0))
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_torus_rejected(self):
        with pytest.raises(ValueError):
            pushin_operator(GridDomain.torus(1.0, 64), 2)


class TestBoundaryApproxIdentity:
    def test_positive_and_vanishing_on_boundary(self):
        dom = GridDomain.interval(0.0, 1.0, 1025)
        op = approx_identity_with_boundary(dom, 4)
        rng = np.random.default_rng(4)
        for _ in range(5):
            f = GridFunction(dom, np.abs(rng.standard_normal(1025)))
            out = op.apply(f)
            assert np.all(out.values >= 0)
            assert out.values[0] == 0.0 and out.values[-1] == 0.0

    def test_support_margin(self):
        dom = GridDomain.interval(0.0, 1.0, 1025)
        op = approx_identity_with_boundary(dom, 4)
        rng = np.random.default_rng(5)
        for _ in range(20):
            f = GridFunction(dom, rng.standard_normal(1025))
            out = op.apply(f)
            support = np.nonzero(out.values)[0]
            dist = dom.boundary_distance(dom.points()[support]).min()
            assert dist >= op.delta - dom.h

    def test_constant_converges_on_interior(self):
        dom = GridDomain.interval(0.0, 1.0, 2561)
        f = GridFunction(dom, np.ones(2561))
        interior = dom.boundary_distance(dom.points()) >= 0.2
        errs = []
        for n in (2, 4, 8, 16):
            out = approx_identity_with_boundary(dom, n).apply(f)
            diff = (out.values - 1.0)[interior]
            errs.append(np.sqrt(dom.h * np.sum(diff ** 2)))
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.5 * errs[0]

    def test_grid_too_coarse(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        with pytest.raises(GridTooCoarseError):
            approx_identity_with_boundary(dom, 32)


# ---------------------------------------------------------------------------
# positive dominant construction
# ---------------------------------------------------------------------------

class TestPositiveDominant:
    def test_zero_maps_to_zero(self):
        dom = GridDomain.interval(0.0, 1.0, 65)
        g = positive_dominant_w0(GridFunction(dom, np.zeros(65)), 1)
        assert np.array_equal(g.values, np.zeros(65))

    def test_sine_first_order(self):
        dom = GridDomain.interval(0.0, 1.0, 257)
        t = dom.axis(0)
        f = GridFunction(dom, np.sin(2 * np.pi * t))
        g = positive_dominant_w0(f, 1)
        assert np.min(g.values) >= 0.0
        assert np.min(g.values - np.maximum(f.values, 0.0)) >= -1e-12
        assert g.values[0] == 0.0 and g.values[-1] == 0.0

    def test_nonnegative_input_still_dominated(self):
        dom = GridDomain.interval(0.0, 1.0, 257)
        t = dom.axis(0)
        rng = np.random.default_rng(6)
        for _ in range(5):
            a = rng.uniform(0.5, 2.0)
            f = GridFunction(dom, a * np.sin(np.pi * t) ** 2)
            g = positive_dominant_w0(f, 1)
            assert np.min(g.values - f.values) >= -1e-10

    def test_second_order_vanishing(self):
        dom = GridDomain.interval(0.0, 1.0, 257)
        t = dom.axis(0)
        f = GridFunction(dom, (t * (1.0 - t)) ** 9 * 4.0 ** 9)
        g = positive_dominant_w0(f, 2)
        D = diff_operator(dom, (1,))
        assert np.min(g.values) >= 0.0
        assert np.min(g.values - f.values) >= -1e-10
        assert abs(g.values[0]) <= 1e-12 and abs(g.values[-1]) <= 1e-12
        dg = D @ g.values
        assert abs(dg[0]) <= 1e-10 and abs(dg[-1]) <= 1e-10

    def test_precondition_checked(self):
        dom = GridDomain.interval(0.0, 1.0, 65)
        t = dom.axis(0)
        with pytest.raises(ValueError):
            positive_dominant_w0(GridFunction(dom, np.cos(np.pi * t)), 1)
        # vanishes at the endpoints but not to first order
        with pytest.raises(ValueError):
            positive_dominant_w0(GridFunction(dom, np.sin(np.pi * t)), 2)

    def test_one_dimensional_only(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 8)
        with pytest.raises(ValueError):
            positive_dominant_w0(GridFunction(dom, np.zeros(64)), 1)

    def test_discrete_fundamental_theorem(self):
        # the k-fold cumulative sums invert the forward differences exactly
        dom = GridDomain.interval(0.0, 1.0, 65)
        t = dom.axis(0)
        f = (t * (1.0 - t)) ** 8
        D = diff_operator(dom, (1,))
        from latlab.sobolev_grid import _cumint_left
        recovered = _cumint_left(D @ f, dom.h)
        assert np.max(np.abs(recovered - f)) <= 1e-13


class TestChartCover:
    def test_interval_cover_has_three_charts(self):
        dom = GridDomain.interval(0.0, 1.0, 64)
        charts = default_chart_cover(dom, ns=(2, 4))
        assert len(charts) == 3

    def test_square_cover_has_nine_charts(self):
        dom = GridDomain.rectangle(0.0, 1.0, 0.0, 1.0, 16)
        charts = default_chart_cover(dom, ns=(2,))
        assert len(charts) == 9
