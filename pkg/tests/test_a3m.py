import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesseltwin import a3m, twinio
from vesseltwin.a3m import AugmentParams, bend, perturb_radius, rotate, smooth, sweep, synthesize
from vesseltwin.geometry import (
    Centerline,
    GeometryError,
    normalize_scale,
    resample,
    resample_profile,
    section_areas,
    validate_twin,
)

from conftest import line, quarter_circle


def turning(c: Centerline) -> float:
    d = np.diff(c.points, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return float(np.sum(np.arccos(np.clip(np.sum(d[1:] * d[:-1], axis=1), -1, 1))))


class TestParams:
    @pytest.mark.parametrize("kw", [{"bend_amplitude": -1}, {"target_n": 1}, {"target_k": 2},
                                    {"euler_angles": (0, 0)}, {"radius_noise_sigma": -0.1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            AugmentParams(**kw)


class TestRotate:
    def test_identity(self):
        c = quarter_circle(20)
        np.testing.assert_allclose(rotate(c, (0, 0, 0)).points, c.points, atol=1e-12)

    def test_half_turn_about_z(self):
        c = Centerline([[-1, 0, 0], [1, 0, 0], [0, 0, 1], [0, 0, -1]])
        r = rotate(c, (np.pi, 0, 0))
        np.testing.assert_allclose(r.points[1], [-1, 0, 0], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.tuples(*[st.floats(-np.pi, np.pi)] * 3))
    def test_isometry(self, angles):
        c = Centerline(np.random.default_rng(1).normal(size=(15, 3)))
        r = rotate(c, angles)
        d0 = np.linalg.norm(c.points[:, None] - c.points[None], axis=2)
        d1 = np.linalg.norm(r.points[:, None] - r.points[None], axis=2)
        np.testing.assert_allclose(d1, d0, atol=1e-9)


class TestBend:
    def test_zero_amplitude(self):
        c = quarter_circle(30)
        np.testing.assert_allclose(bend(c, 0.0, 1.0, np.random.default_rng(0)).points, c.points)

    def test_endpoints_fixed_and_peak(self):
        c = line(401)
        b = bend(c, 0.1, 1.0, np.random.default_rng(3))
        disp = np.linalg.norm(b.points - c.points, axis=1)
        assert disp[0] < 1e-12 and disp[-1] < 1e-12
        assert disp.max() == pytest.approx(0.1, rel=0.02)
        assert abs(np.argmax(disp) / 400 - 0.25) < 0.01 or abs(np.argmax(disp) / 400 - 0.75) < 0.01
        # displacement orthogonal to the chord
        assert np.max(np.abs((b.points - c.points)[:, 2])) < 1e-12

    def test_closed_loop(self):
        th = np.linspace(0, 2 * np.pi, 50)
        c = Centerline(np.column_stack([np.cos(th), np.sin(th), np.zeros(50)]))
        with pytest.raises(GeometryError):
            bend(c, 0.1, 1.0, np.random.default_rng(0))

    def test_preserves_count(self):
        assert len(bend(line(33), 0.05, 2, np.random.default_rng(0))) == 33


class TestSmooth:
    def test_zero_sigma(self):
        c = quarter_circle(30)
        np.testing.assert_array_equal(smooth(c, 0).points, c.points)

    def test_constant_channel(self):
        c = quarter_circle(30)
        assert np.all(smooth(c, 2.0).points[:, 2] == 0)

    def test_zigzag_turning_decreases(self):
        x = np.arange(40, dtype=float)
        c = Centerline(np.column_stack([x, 0.5 * (-1) ** np.arange(40), np.zeros(40)]))
        assert turning(smooth(c, 2.0)) < turning(c)


class TestPerturb:
    def test_zero_sigma(self):
        r = np.linspace(0.1, 0.2, 20)
        np.testing.assert_array_equal(perturb_radius(r, 0.0, np.random.default_rng(0)), r)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 3))
    def test_positive(self, seed, sigma):
        r = perturb_radius(np.full(50, 0.15), sigma, np.random.default_rng(seed))
        assert np.all(r > 0)

    def test_noise_moment(self):
        r = np.full(10_000, 0.2)
        out = perturb_radius(r, 0.05, np.random.default_rng(5))
        assert np.std(out / r - 1) == pytest.approx(0.05, rel=0.1)

    def test_absolute_mode(self):
        r = np.full(10_000, 1.0)
        out = perturb_radius(r, 0.05, np.random.default_rng(5), absolute=True)
        assert np.std(out - r) == pytest.approx(0.05, rel=0.1)


class TestSweep:
    def test_unit_circle_k4(self):
        t = sweep(line(5, 4.0), np.ones(5), 4)
        b = t.boundary[2] - [0, 0, 2.0]
        assert np.allclose(b[:, 2], 0, atol=1e-12)
        # four points 90 degrees apart on the unit circle in the xy-plane
        np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(b[0], -b[2], atol=1e-12)
        np.testing.assert_allclose(b[1], -b[3], atol=1e-12)
        assert abs(b[0] @ b[1]) < 1e-12

    def test_distance_and_area(self):
        c = resample(quarter_circle(80, 3.0), 60)
        r = np.linspace(0.2, 0.1, 60)
        t = sweep(c, r, 12)
        dist = np.linalg.norm(t.boundary - c.points[:, None], axis=2)
        np.testing.assert_allclose(dist, np.broadcast_to(r[:, None], dist.shape), atol=1e-9)
        np.testing.assert_allclose(section_areas(t), 6 * r**2 * np.sin(2 * np.pi / 12), rtol=1e-9)
        assert t.boundary.shape == (60, 12, 3)

    def test_length_mismatch(self):
        with pytest.raises(GeometryError):
            sweep(line(5), np.ones(4), 8)

    def test_default_mask_from_radius(self):
        r = np.full(300, 0.2)
        r[140:160] = 0.1
        t = sweep(line(300), r, 8)
        assert t.lesion_mask[140:160].all() and t.lesion_mask.sum() == 20


class TestSynthesize:
    def test_identity_pipeline(self, donors):
        d = donors[0]
        p = AugmentParams(target_n=d.n, target_k=d.k, seed=4)
        t = synthesize(d, d, p)
        c = resample(d.centerline, d.n)
        ref = normalize_scale(sweep(c, resample_profile(d.radii, d.centerline.arc_length, d.n), d.k, d.lesion_mask))
        np.testing.assert_allclose(t.centerline.points, ref.centerline.points, atol=1e-9)
        np.testing.assert_allclose(t.radii, ref.radii, atol=1e-9)
        np.testing.assert_allclose(t.boundary, ref.boundary, atol=1e-9)

    def test_deterministic_bytes(self, donors):
        p = a3m.sample_params(np.random.default_rng(3), 80, 12, seed=11)
        a = twinio.dumps_twin(synthesize(donors[0], donors[1], p))
        b = twinio.dumps_twin(synthesize(donors[0], donors[1], p))
        assert a == b

    def test_valid_and_recorded(self, donors):
        p = a3m.sample_params(np.random.default_rng(3), 80, 12, seed=11)
        t = synthesize(donors[2], donors[3], p)
        assert validate_twin(t) == []
        assert t.meta["seed"] == 11 and t.meta["radius_donor"] == donors[3].meta["id"]
        assert t.centerline.length == pytest.approx(1.0)
        assert (t.n, t.k) == (80, 12)

    def test_radius_ratio_preserved(self, donors):
        d = donors[1]
        p = AugmentParams(euler_angles=(1, 0.5, -0.2), bend_amplitude=0.03, bend_frequency=1.2,
                          smoothing_sigma=1.5, target_n=d.n, target_k=8, seed=2)
        t = synthesize(donors[0], d, p)
        assert t.radii.min() / t.radii.max() == pytest.approx(d.radii.min() / d.radii.max(), rel=1e-9)

    def test_mask_inherited(self, donors):
        d = next(x for x in donors if x.lesion_mask.any())
        t = synthesize(donors[0], d, AugmentParams(target_n=d.n, target_k=8))
        np.testing.assert_array_equal(t.lesion_mask, d.lesion_mask)

    def test_donor_too_short(self, donors):
        short = donors[0].copy()
        short.centerline = Centerline(short.centerline.points[:2])
        short.centerline.points = short.centerline.points[:1]
        with pytest.raises(GeometryError):
            synthesize(short, donors[0], AugmentParams())


class TestCorpus:
    def test_seeds_and_subset_stability(self, donors):
        full = a3m.plan_corpus(4, 6, 100, 50, 8)
        assert [it.seed for it in full] == list(range(100, 106))
        part = a3m.plan_corpus(4, 3, 100, 50, 8)
        assert [it.params for it in part] == [it.params for it in full[:3]]

    def test_generated_valid(self, donors):
        twins = a3m.generate_corpus(donors, 8, 7, 60, 12)
        assert all(validate_twin(t) == [] for t in twins)
        assert [t.meta["id"] for t in twins] == [f"synth-{s}" for s in range(7, 15)]

    def test_ranges_respected(self):
        for it in a3m.plan_corpus(3, 20, 0, 50, 8):
            p = it.params
            assert 0 <= p.bend_amplitude <= 0.05 and 0.5 <= p.bend_frequency <= 2
            assert 0 <= p.smoothing_sigma <= 3 and 0 <= p.radius_noise_sigma <= 0.05

    def test_phantom(self):
        t = a3m.phantom_twin(3, n=150, k=16, stenoses=1)
        assert validate_twin(t) == []
        assert t.lesion_mask.any()
        assert 4 <= t.centerline.length <= 8
