import numpy as np
import pytest

from hypexp.frames import check_domination
from hypexp.systems import (
    CatSuspension,
    ChartError,
    GeodesicSurface,
    commutator_basis,
    make_chart,
    octagon_generators,
    wrap01,
    wrap_pm,
)

Q0 = np.array([0.1234, 0.271, 0.55])


@pytest.fixture(scope="module")
def cat():
    return CatSuspension()


@pytest.fixture(scope="module")
def geo():
    return GeodesicSurface()


class TestTorusArithmetic:
    def test_wrap01_folds(self):
        out = wrap01(np.array([1.25, -0.25, 0.75]))
        assert np.allclose(out, [0.25, 0.75, 0.75])

    def test_wrap01_boundary_tolerance(self):
        # values within an ulp of the seam fold to 0, not to 1-eps
        assert wrap01(np.array([1.0 - 1e-16]))[0] == 0.0

    def test_wrap_pm_range(self):
        d = wrap_pm(np.array([0.7, -0.7, 0.2]))
        assert np.allclose(d, [-0.3, 0.3, 0.2])


class TestCatSuspension:
    def test_roof_validation(self):
        with pytest.raises(ValueError):
            CatSuspension(roof=2.5)
        with pytest.raises(ValueError):
            CatSuspension(roof=0.9)

    def test_eigendata(self, cat):
        assert cat.lam_u == pytest.approx((3 + np.sqrt(5)) / 2, rel=1e-15)
        assert abs(cat.v_s @ cat.v_u) < 1e-15
        assert np.allclose(cat.A @ cat.v_u, cat.lam_u * cat.v_u, atol=1e-14)

    def test_no_crossing_step(self, cat):
        q = np.array([0.3, 0.4, 0.1])
        q1 = cat.apply(q)
        assert np.array_equal(q1, [0.3, 0.4, 1.1])
        assert cat.crossing_count(q) == 0
        assert np.array_equal(cat.frame_differential(q).mat, np.eye(3))

    def test_crossing_step(self, cat):
        q = np.array([0.3, 0.4, 0.5])
        q1 = cat.apply(q)
        assert q1[2] == pytest.approx(1.5 - cat.roof)
        assert np.allclose(q1[:2], wrap01(cat.A @ q[:2]))
        d = cat.frame_differential(q).mat
        assert np.array_equal(np.diag(d), [cat.lam_s, 1.0, cat.lam_u])

    def test_round_trip(self, cat):
        rng = np.random.default_rng(1)
        for _ in range(10000):
            q = np.array([rng.random(), rng.random(),
                          rng.random() * cat.roof])
            p = cat.inverse(cat.apply(q))
            assert cat.distance(p, q) < 1e-12

    def test_rational_roof_freezes_fiber(self):
        sys1 = CatSuspension(roof=1.0)
        q = np.array([0.3, 0.4, 0.7])
        q1 = sys1.apply(q)
        assert q1[2] == q[2]
        assert sys1.crossing_count(q) == 1

    def test_domination_on_orbit_samples(self, cat):
        q = Q0.copy()
        samples = []
        for _ in range(200):
            samples.append((cat.frame_differential(q), cat.crossing_count(q)))
            q = cat.apply(q)
        rep = check_domination(cat.spec, samples)
        assert rep.ok
        assert rep.block_norm_max["c"] == 1.0

    def test_fiber_equidistribution(self, cat):
        # the fiber factor is a circle rotation by 1 mod roof; visit
        # frequency of an interval converges to its length fraction
        n = 10 ** 6
        s = np.remainder(0.55 + np.arange(n, dtype=float), cat.roof)
        lo, hi = 0.3, 0.5
        p = (hi - lo) / cat.roof
        freq = np.count_nonzero((s >= lo) & (s < hi)) / n
        se = np.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= 3 * se

    def test_volume_preservation_marginals(self, cat):
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.random(10 ** 5), rng.random(10 ** 5),
                               rng.random(10 ** 5) * cat.roof])
        for _ in range(1000):
            pts = cat.apply_batch(pts)
        scales = [1.0, 1.0, cat.roof]
        for j in range(3):
            u = np.sort(pts[:, j] / scales[j])
            k = np.arange(1, len(u) + 1)
            ks = max(np.max(k / len(u) - u), np.max(u - (k - 1) / len(u)))
            assert ks <= 0.01

    def test_batch_matches_scalar(self, cat):
        rng = np.random.default_rng(3)
        Q = np.column_stack([rng.random(64), rng.random(64),
                             rng.random(64) * cat.roof])
        batch = cat.apply_batch(Q)
        for i in range(64):
            assert np.array_equal(batch[i], cat.apply(Q[i]))


class TestCatChart:
    def test_base_point_maps_to_origin(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        assert np.allclose(chart.from_chart([0, 0, 0]), Q0, atol=1e-15)
        assert np.allclose(chart.to_chart(Q0), [0, 0, 0], atol=1e-15)

    def test_round_trip(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        rng = np.random.default_rng(4)
        for _ in range(2000):
            p = rng.uniform(-0.19, 0.19, size=3)
            back = chart.to_chart(chart.from_chart(p))
            assert back is not None
            assert np.max(np.abs(back - p)) < 1e-12

    def test_unstable_line_alignment(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        for tau in (-0.15, 0.02, 0.11):
            q = chart.from_chart([0.0, 0.0, tau])
            assert q[2] == pytest.approx(Q0[2])
            assert np.allclose(wrap_pm(q[:2] - Q0[:2]), tau * cat.v_u,
                               atol=1e-14)

    def test_flow_line_alignment(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        q = chart.from_chart([0.0, 0.13, 0.0])
        assert np.array_equal(q[:2], Q0[:2])
        assert q[2] == pytest.approx(Q0[2] + 0.13)

    def test_outside_box_is_none(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        far = np.array([Q0[0] + 0.5, Q0[1], Q0[2]])
        assert chart.to_chart(far) is None

    def test_image_separation_bound(self, cat):
        # fiber shift per step is sqrt(2)-1; boxes of radius 0.2 clear
        # it, radius 0.21 does not
        chart = make_chart(cat, Q0, 0.2)
        assert chart.separated
        with pytest.raises(ChartError):
            make_chart(cat, Q0, 0.21)

    def test_separation_waiver_for_control_roof(self):
        sys1 = CatSuspension(roof=1.0)
        with pytest.raises(ChartError):
            make_chart(sys1, Q0, 0.2)
        chart = make_chart(sys1, Q0, 0.2, require_separation=False)
        assert not chart.separated

    def test_periodic_base_rejected(self):
        sys1 = CatSuspension(roof=1.0)
        with pytest.raises(ChartError):
            make_chart(sys1, np.array([0.0, 0.0, 0.3]), 0.2,
                       require_separation=False)

    def test_linear_chart_has_identity_frame_derivative(self, cat):
        chart = make_chart(cat, Q0, 0.2)
        assert np.array_equal(chart.dpsi([0.1, -0.05, 0.02]), np.eye(3))


class TestOctagonGroup:
    def test_generator_determinants(self):
        for g in octagon_generators():
            assert abs(np.linalg.det(g) - 1.0) < 1e-12

    def test_generator_traces(self):
        # the side-pairing translations all share the octagon's
        # translation length: trace 2 cosh(l/2) = 2 (1 + sqrt 2)
        for g in octagon_generators():
            assert abs(np.trace(g)) == pytest.approx(2.0 * (1 + np.sqrt(2.0)),
                                                     rel=1e-12)

    def test_commutator_relation(self):
        a, b, c, d = commutator_basis(octagon_generators())
        inv = np.linalg.inv
        rel = a @ b @ inv(a) @ inv(b) @ c @ d @ inv(c) @ inv(d)
        res = min(np.max(np.abs(rel - np.eye(2))),
                  np.max(np.abs(rel + np.eye(2))))
        assert res < 1e-8

    def test_basis_elements_are_hyperbolic(self):
        for m in commutator_basis(octagon_generators()):
            assert abs(np.trace(m)) > 2.0 + 1e-9


class TestGeodesicSurface:
    def test_relation_reduces_to_identity(self, geo):
        a, b, c, d = commutator_basis(geo.gens)
        inv = np.linalg.inv
        rel = a @ b @ inv(a) @ inv(b) @ c @ d @ inv(c) @ inv(d)
        red = geo.reduce(rel)
        assert geo.distance(red, np.eye(2)) < 1e-8

    def test_identity_is_interior(self, geo):
        p = geo.reduce(np.eye(2) @ geo.a1)
        # one flow step from the origin stays inside the fundamental
        # domain: no generator move can shrink it
        assert np.allclose(p, geo._canon(geo.a1), atol=1e-14)

    def test_round_trip(self, geo):
        rng = np.random.default_rng(5)
        q = geo.reduce(_random_psl(rng))
        for _ in range(50):
            p = geo.inverse(geo.apply(q))
            assert geo.distance(p, q) < 1e-10
            q = geo.apply(q)

    def test_frame_differential_is_exponential_diagonal(self, geo):
        d = geo.frame_differential(np.eye(2)).mat
        assert np.array_equal(np.diag(d), [np.exp(-1.0), 1.0, np.exp(1.0)])
        n_step = np.linalg.matrix_power(d, 7)
        assert np.allclose(np.diag(n_step),
                           [np.exp(-7.0), 1.0, np.exp(7.0)], rtol=1e-12)

    def test_domination_samples(self, geo):
        rep = check_domination(
            geo.spec, [geo.frame_differential(np.eye(2)) for _ in range(5)])
        assert rep.ok

    def test_reduction_shrinks_displacement(self, geo):
        rng = np.random.default_rng(6)
        for _ in range(20):
            m = _random_psl(rng)
            w = geo.gens[rng.integers(4)] @ geo.gens[rng.integers(4)] @ m
            red = geo.reduce(w)
            assert np.sum(red * red) <= np.sum(w * w) + 1e-12


def _random_psl(rng):
    # small random displacement from the identity, unimodularised
    m = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
    return m / np.sqrt(abs(np.linalg.det(m)))


class TestGeodesicChart:
    def _base(self, geo):
        upper = np.array([[1.0, 0.0321], [0.0, 1.0]])
        diag = np.diag([np.exp(0.0123 / 2), np.exp(-0.0123 / 2)])
        lower = np.array([[1.0, 0.0], [0.0457, 1.0]])
        return upper @ diag @ lower

    def test_round_trip(self, geo):
        chart = make_chart(geo, self._base(geo), 0.2)
        rng = np.random.default_rng(7)
        for _ in range(500):
            p = rng.uniform(-0.19, 0.19, size=3)
            back = chart.to_chart(chart.from_chart(p))
            assert back is not None
            assert np.max(np.abs(back - p)) < 1e-12

    def test_chart_derivative_matches_differences(self, geo):
        chart = make_chart(geo, self._base(geo), 0.2)
        rng = np.random.default_rng(8)
        h = 1e-7
        for _ in range(25):
            p = rng.uniform(-0.15, 0.15, size=3)
            dp = chart.dpsi(p)
            base = chart.from_chart(p)
            base_inv = np.linalg.inv(base)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                forward = chart.from_chart(p + e)
                if np.sum(forward * base) < 0:
                    forward = -forward
                x = (base_inv @ forward - np.eye(2)) / h
                col = np.array([x[0, 1], x[0, 0] - x[1, 1], x[1, 0]])
                assert np.allclose(col, dp[:, j], atol=5e-6)

    def test_center_line_is_flow_orbit(self, geo):
        chart = make_chart(geo, self._base(geo), 0.2)
        p0 = chart.from_chart([0.0, 0.0, 0.0])
        q = chart.from_chart([0.0, 0.17, 0.0])
        flow = p0 @ np.diag([np.exp(0.17 / 2), np.exp(-0.17 / 2)])
        assert geo.distance(q, geo._canon(flow)) < 1e-13

    def test_unstable_line_is_lower_horocycle(self, geo):
        chart = make_chart(geo, self._base(geo), 0.2)
        p0 = chart.from_chart([0.0, 0.0, 0.0])
        q = chart.from_chart([0.0, 0.0, 0.11])
        horo = p0 @ np.array([[1.0, 0.0], [0.11, 1.0]])
        assert geo.distance(q, geo._canon(horo)) < 1e-13

    def test_origin_derivative_is_identity(self, geo):
        chart = make_chart(geo, self._base(geo), 0.2)
        assert np.array_equal(chart.dpsi([0.0, 0.0, 0.0]), np.eye(3))

    def test_oversized_radius_rejected(self, geo):
        with pytest.raises(ChartError):
            make_chart(geo, self._base(geo), 0.3)
