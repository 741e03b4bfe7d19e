import numpy as np
import pytest

from hypexp.bump import BumpProfile
from hypexp.perturbation import (
    PerturbationParams,
    closeness_audit,
    g_apply,
    g_inverse,
    g_jacobian,
    h_apply,
    h_invert,
    h_jacobian,
    in_support,
    inversion_audit,
    t_schedule,
)
from hypexp.systems import CatSuspension, GeodesicSurface, make_chart

Q0 = np.array([0.1234, 0.271, 0.55])
EPS = 0.05
GAMMA = 0.2


@pytest.fixture(scope="module")
def profile():
    return BumpProfile()


@pytest.fixture(scope="module")
def cat():
    return CatSuspension()


@pytest.fixture(scope="module")
def chart(cat):
    return make_chart(cat, Q0, GAMMA)


@pytest.fixture(scope="module")
def params(cat, chart, profile):
    cert = profile.certificate()
    return PerturbationParams(chart, profile, EPS,
                              t_schedule(EPS, cert["C"]))


@pytest.fixture(scope="module")
def params_strong(cat, chart, profile):
    cert = profile.certificate()
    return PerturbationParams(chart, profile, EPS,
                              0.9 / (4.0 * cert["C"]))


class TestSchedule:
    def test_cube_regime(self):
        assert t_schedule(0.1, 2.0) == 0.1 ** 3
        assert t_schedule(0.1, 2.0) == pytest.approx(1e-3)

    def test_ceiling_regime(self):
        t = t_schedule(0.9, 0.1)
        assert t == pytest.approx(0.729)

    def test_strictly_below_ceiling(self):
        # eps**3 above the ceiling: the result backs off by one ulp
        t = t_schedule(2.0, 0.1)
        assert t < 2.5
        assert t == np.nextafter(2.5, 0.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            t_schedule(0.0, 1.0)
        with pytest.raises(ValueError):
            t_schedule(0.1, -1.0)


class TestParamsValidation:
    def test_eps_range(self, chart, profile):
        with pytest.raises(ValueError):
            PerturbationParams(chart, profile, 0.3, 1e-4)
        with pytest.raises(ValueError):
            PerturbationParams(chart, profile, 0.0, 1e-4)

    def test_eps_vs_chart_radius(self, chart, profile):
        with pytest.raises(ValueError):
            PerturbationParams(chart, profile, 0.06, 1e-4)

    def test_t_range(self, chart, profile):
        ceiling = 1.0 / (4.0 * profile.certificate()["C"])
        with pytest.raises(ValueError):
            PerturbationParams(chart, profile, EPS, -1e-6)
        with pytest.raises(ValueError):
            PerturbationParams(chart, profile, EPS, ceiling)
        assert PerturbationParams(chart, profile, EPS, 0.0).t == 0.0

    def test_separation_required(self, profile):
        sys1 = CatSuspension(roof=1.0)
        chart1 = make_chart(sys1, Q0, GAMMA, require_separation=False)
        with pytest.raises(ValueError):
            PerturbationParams(chart1, profile, EPS, 1e-4)
        p = PerturbationParams(chart1, profile, EPS, 1e-4,
                               require_separation=False)
        assert p.t == 1e-4

    def test_derived_constants(self, params, profile):
        cert = profile.certificate()
        assert params.C == cert["C"]
        assert params.kick_axis == 2
        assert params.support_halfwidth == 2 * EPS


class TestShear:
    def test_outside_support_is_identity(self, params):
        p = np.array([0.15, 0.0, -0.12])
        assert np.array_equal(h_apply(params, p), p)

    def test_zero_center_is_fixed(self, params):
        p = np.array([0.0, 0.0, 0.03])
        assert np.array_equal(h_apply(params, p), p)

    def test_plateau_kick_is_exact(self, params):
        p = np.array([0.0, EPS / 2, 0.0])
        out = h_apply(params, p)
        assert out[2] == params.t * EPS / 2
        assert out[0] == 0.0 and out[1] == EPS / 2

    def test_outside_chart_box_rejected(self, params):
        with pytest.raises(ValueError):
            h_apply(params, [0.25, 0.0, 0.0])

    def test_jacobian_outside_support(self, params):
        mat = h_jacobian(params, [0.15, 0.1, 0.0]).mat
        assert np.array_equal(mat, np.eye(3))

    def test_jacobian_on_plateau(self, params):
        mat = h_jacobian(params, [0.0, EPS / 2, 0.0]).mat
        expect = np.eye(3)
        expect[2, 1] = params.t
        assert np.allclose(mat, expect, atol=1e-15)

    def test_jacobian_matches_differences(self, params_strong):
        rng = np.random.default_rng(10)
        h = 1e-6
        for _ in range(1000):
            p = rng.uniform(-2 * EPS, 2 * EPS, size=3)
            mat = h_jacobian(params_strong, p).mat
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                quot = (h_apply(params_strong, p + e)
                        - h_apply(params_strong, p - e)) / (2 * h)
                expect = np.eye(3)[:, j] + (mat[:, j] - np.eye(3)[:, j])
                assert np.max(np.abs(quot - expect)) < 1e-6

    def test_determinant_floor_on_grid(self, params_strong):
        axis = np.linspace(-2 * EPS, 2 * EPS, 32)
        worst = 1.0
        for x in axis[::4]:
            for y in axis:
                for z in axis:
                    d = np.linalg.det(
                        h_jacobian(params_strong, [x, y, z]).mat)
                    worst = min(worst, d)
        assert worst >= 1.0 - 2.0 * params_strong.C * params_strong.t
        assert worst >= 0.5


class TestInversion:
    def test_round_trip(self, params_strong):
        assert inversion_audit(params_strong, n=10 ** 3, seed=1) <= 1e-12

    def test_outside_support_passthrough(self, params):
        p = np.array([0.12, 0.15, 0.0])
        assert np.array_equal(h_invert(params, p), p)

    def test_divergent_strength_is_hard_error(self, chart, profile):
        p = PerturbationParams(chart, profile, EPS, 1e-3)
        p.t = 10.0  # past the contraction regime on purpose
        with pytest.raises(RuntimeError):
            h_invert(p, np.array([0.0, EPS / 2, 0.0]))


class TestPerturbedMap:
    def test_agrees_with_base_outside(self, cat, params):
        q = np.array([0.7, 0.9, 0.3])
        assert params.chart.to_chart(q) is None
        assert np.array_equal(g_apply(cat, params, q), cat.apply(q))

    def test_zero_strength_is_bitwise_base(self, cat, chart, profile):
        p0 = PerturbationParams(chart, profile, EPS, 0.0)
        q = chart.from_chart([0.01, 0.02, -0.015])
        assert np.array_equal(g_apply(cat, p0, q), cat.apply(q))
        assert np.array_equal(g_jacobian(cat, p0, q).mat,
                              cat.frame_differential(q).mat)
        x = cat.apply(q)
        assert np.array_equal(g_inverse(cat, p0, x), cat.inverse(x))

    def test_manual_composition_in_support(self, cat, params_strong):
        chart = params_strong.chart
        p = np.array([0.01, 0.03, -0.02])
        q = chart.from_chart(p)
        expect = cat.apply(chart.from_chart(h_apply(params_strong, p)))
        assert np.allclose(g_apply(cat, params_strong, q), expect,
                           atol=1e-15)

    def test_image_leaves_chart(self, cat, params_strong):
        # one application moves the chart image off itself, so no
        # orbit segment sees the shear twice in a row
        chart = params_strong.chart
        rng = np.random.default_rng(11)
        for _ in range(200):
            q = chart.from_chart(rng.uniform(-GAMMA * 0.9, GAMMA * 0.9, 3))
            assert chart.to_chart(g_apply(cat, params_strong, q)) is None

    def test_inverse_round_trip(self, cat, params_strong):
        chart = params_strong.chart
        rng = np.random.default_rng(12)
        for _ in range(300):
            q = chart.from_chart(rng.uniform(-2 * EPS, 2 * EPS, 3))
            back = g_inverse(cat, params_strong,
                             g_apply(cat, params_strong, q))
            assert cat.distance(back, q) < 1e-12

    def test_support_membership(self, cat, params):
        chart = params.chart
        assert in_support(params, chart.from_chart([0.0, 0.05, 0.0]))
        assert not in_support(params, chart.from_chart([0.15, 0.0, 0.0]))
        assert not in_support(params, np.array([0.7, 0.9, 0.3]))


class TestFramePreservation:
    def test_unstable_and_cu_preserved(self, cat, params_strong):
        chart = params_strong.chart
        rng = np.random.default_rng(13)
        for _ in range(200):
            q = chart.from_chart(rng.uniform(-2 * EPS, 2 * EPS, 3))
            m = g_jacobian(cat, params_strong, q).mat
            u_image = m @ np.array([0.0, 0.0, 1.0])
            assert abs(u_image[0]) <= 1e-12 and abs(u_image[1]) <= 1e-12
            c_image = m @ np.array([0.0, 1.0, 0.0])
            assert abs(c_image[0]) <= 1e-12

    def test_center_is_tilted_on_positive_measure(self, cat, params_strong):
        chart = params_strong.chart
        rng = np.random.default_rng(14)
        tilted = 0
        for _ in range(500):
            q = chart.from_chart(rng.uniform(-EPS, EPS, 3))
            m = g_jacobian(cat, params_strong, q).mat
            if abs((m @ [0.0, 1.0, 0.0])[2]) > 1e-12:
                tilted += 1
        assert tilted > 350


class TestClosenessAudit:
    def test_zero_strength(self, cat, chart, profile):
        rep = closeness_audit(cat, PerturbationParams(chart, profile, EPS,
                                                      0.0), grid=8)
        assert rep.c0 == rep.c1 == rep.c2 == 0.0
        assert rep.det_min == 1.0
        assert rep.ok

    def test_bounds_hold_at_schedule(self, cat, params):
        rep = closeness_audit(cat, params, grid=32)
        assert rep.c1 <= rep.c1_bound
        assert rep.c2 <= rep.c2_bound
        assert rep.det_min >= max(0.5, rep.det_floor)
        assert rep.ok

    def test_crude_second_order_line_is_exceeded(self, cat, params):
        # the y factor's product-rule terms push the true C2 distance
        # past C2*t/eps; the certified constant absorbs them
        rep = closeness_audit(cat, params, grid=32)
        assert rep.c2 > rep.c2_line_naive
        assert rep.c2_bound > rep.c2_line_naive

    def test_as_dict_round_trip(self, cat, params):
        d = closeness_audit(cat, params, grid=8).as_dict()
        assert d["ok"] == (d["c1_ok"] and d["c2_ok"] and d["det_ok"])
        assert d["eps"] == EPS

    def test_system_mismatch_rejected(self, params):
        with pytest.raises(ValueError):
            closeness_audit(CatSuspension(), params, grid=8)

    def test_grid_validation(self, cat, params):
        with pytest.raises(ValueError):
            closeness_audit(cat, params, grid=1)


@pytest.fixture(scope="module")
def geo_setup(profile):
    geo = GeodesicSurface()
    upper = np.array([[1.0, 0.0321], [0.0, 1.0]])
    diag = np.diag([np.exp(0.0123 / 2), np.exp(-0.0123 / 2)])
    lower = np.array([[1.0, 0.0], [0.0457, 1.0]])
    chart = make_chart(geo, upper @ diag @ lower, GAMMA)
    cert = profile.certificate()
    params = PerturbationParams(chart, profile, EPS,
                                0.9 / (4.0 * cert["C"]))
    return geo, params


class TestGeodesicShear:
    def test_round_trip_through_curved_chart(self, geo_setup):
        geo, params = geo_setup
        chart = params.chart
        rng = np.random.default_rng(15)
        for _ in range(50):
            q = chart.from_chart(rng.uniform(-2 * EPS, 2 * EPS, 3))
            back = g_inverse(geo, params, g_apply(geo, params, q))
            assert geo.distance(back, q) < 1e-11

    def test_frame_preservation_with_curved_chart(self, geo_setup):
        geo, params = geo_setup
        chart = params.chart
        rng = np.random.default_rng(16)
        for _ in range(50):
            q = chart.from_chart(rng.uniform(-2 * EPS, 2 * EPS, 3))
            m = g_jacobian(geo, params, q).mat
            u_image = m @ np.array([0.0, 0.0, 1.0])
            assert abs(u_image[0]) <= 1e-10 and abs(u_image[1]) <= 1e-10
            c_image = m @ np.array([0.0, 1.0, 0.0])
            assert abs(c_image[0]) <= 1e-10
