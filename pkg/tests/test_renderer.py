import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdf_uncertainty.camera import generate_rays, look_at_camera
from sdf_uncertainty.deformation import DeformationGrid
from sdf_uncertainty.errors import ConfigurationError, InvalidInputError
from sdf_uncertainty.geometry import Aabb, SdfScene, eval_sdf, sphere_trace
from sdf_uncertainty.hessian import HessianGrid
from sdf_uncertainty.renderer import (RenderOptions, composite, composite_batch, opacity, render_view, sample_ray,
                                      transmittance)

from conftest import sphere, textured_scene, unit_sphere_scene


def brute_force_composite(alphas, colors, ts):
    """Naive front-to-back loop in 50-digit arithmetic."""
    with mpmath.workdps(50):
        T = mpmath.mpf(1)
        rgb = [mpmath.mpf(0)] * 3
        wsum = mpmath.mpf(0)
        wt = mpmath.mpf(0)
        for a, c, t in zip(alphas, colors, ts):
            a = mpmath.mpf(float(a))
            w = T * a
            rgb = [r + w * mpmath.mpf(float(ci)) for r, ci in zip(rgb, c)]
            wsum += w
            wt += w * mpmath.mpf(float(t))
            T *= 1 - a
        depth = wt / wsum if wsum > mpmath.mpf("1e-6") else mpmath.mpf(0)
        return np.array([float(r) for r in rgb]), float(depth), float(wsum)


class TestOpacity:
    def test_zero_is_half(self):
        for s in (0.1, 1.0, 64.0, 1e4):
            assert opacity(0.0, s) == 0.5

    def test_reference_values(self):
        assert opacity(1.0, 10.0) == pytest.approx(0.9999546021312976, rel=1e-15)
        assert opacity(-1.0, 10.0) == pytest.approx(4.5397868702434395e-05, rel=1e-13)

    @settings(max_examples=100, deadline=None)
    @given(f=st.floats(-50, 50), s=st.floats(0.01, 200))
    def test_symmetry(self, f, s):
        assert opacity(f, s) + opacity(-f, s) == pytest.approx(1.0, abs=1e-15)

    def test_no_overflow(self):
        assert opacity(-1e6, 1e3) == 0.0
        assert opacity(1e6, 1e3) == 1.0

    def test_nonpositive_sharpness(self):
        with pytest.raises(InvalidInputError):
            opacity(0.0, 0.0)


class TestComposite:
    def test_single_opaque_sample(self):
        c = np.array([0.2, 0.4, 0.6])
        a = 1.0 - 1e-12
        rgb, depth, wsum = composite([a], [c], [3.5])
        np.testing.assert_allclose(rgb, c, atol=1e-11)
        assert depth == 3.5
        assert wsum == pytest.approx(1.0, abs=1e-11)
        assert transmittance(np.array([a]))[0] == 1.0

    def test_two_half_samples(self):
        c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
        rgb, depth, wsum = composite([0.5, 0.5], [c1, c2], [1.0, 2.0])
        np.testing.assert_allclose(rgb, 0.5 * c1 + 0.25 * c2, atol=1e-15)
        assert wsum == 0.75
        assert depth == pytest.approx(4.0 / 3.0, abs=1e-15)

    def test_transparent_ray(self):
        rgb, depth, wsum = composite(np.zeros(5), np.ones((5, 3)), np.arange(5.0))
        np.testing.assert_array_equal(rgb, 0.0)
        assert depth == 0.0 and wsum == 0.0

    def test_invariants_and_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            alphas = rng.uniform(0.0, 1.0, size=n) ** rng.uniform(0.2, 5.0)
            alphas = np.minimum(alphas, 1.0 - 1e-9)
            colors = rng.uniform(0, 1, size=(n, 3))
            ts = np.sort(rng.uniform(0.1, 10.0, size=n))
            T = transmittance(alphas)
            assert T[0] == 1.0
            assert np.all(np.diff(T) <= 0)
            rgb, depth, wsum = composite(alphas, colors, ts)
            assert wsum <= 1.0 + 1e-9
            ref_rgb, ref_depth, ref_wsum = brute_force_composite(alphas, colors, ts)
            np.testing.assert_allclose(rgb, ref_rgb, atol=1e-10, rtol=0)
            assert abs(depth - ref_depth) <= 1e-10
            assert abs(wsum - ref_wsum) <= 1e-10

    def test_batch_matches_single(self, rng):
        a = rng.uniform(0, 0.9, size=(6, 10))
        c = rng.uniform(0, 1, size=(6, 10, 3))
        t = np.sort(rng.uniform(0, 5, size=(6, 10)), axis=1)
        rgb, depth, wsum, _, _ = composite_batch(a, c, t)
        for r in range(6):
            r_rgb, r_depth, r_wsum = composite(a[r], c[r], t[r])
            np.testing.assert_array_equal(rgb[r], r_rgb)
            assert depth[r] == r_depth and wsum[r] == r_wsum


class TestSampling:
    RAY = ([0.0, 0.0, 1.9], [0.0, 0.0, -1.0], 0.0, 3.8)

    def test_stratified_without_fine(self):
        opts = RenderOptions(n_coarse=16, n_fine=0, seed=3)
        samples = sample_ray(unit_sphere_scene(2.0), self.RAY, opts)
        assert len(samples) == 16
        edges = np.linspace(0.0, 3.8, 17)
        for k, smp in enumerate(samples):
            assert edges[k] <= smp.t < edges[k + 1] + 1e-12

    def test_sorted_and_positive_intervals(self):
        samples = sample_ray(unit_sphere_scene(2.0), self.RAY, RenderOptions(n_coarse=24, n_fine=16))
        t = np.array([s.t for s in samples])
        assert np.all(np.diff(t) > 0)
        assert all(s.delta > 0 for s in samples)
        np.testing.assert_allclose([s.x for s in samples], [[0, 0, 1.9 - ti] for ti in t], atol=1e-14)

    def test_fine_samples_concentrate_at_surface(self):
        scene = unit_sphere_scene(2.0)
        opts = RenderOptions(n_coarse=48, n_fine=32, seed=0)
        coarse_only = {round(s.t, 12) for s in sample_ray(scene, self.RAY, RenderOptions(n_coarse=48, n_fine=0))}
        samples = sample_ray(scene, self.RAY, opts)
        fine = np.array([s.x for s in samples if round(s.t, 12) not in coarse_only])
        assert len(fine) == 32
        near_surface = np.abs(eval_sdf(scene, fine)) < 0.1
        assert near_surface.mean() >= 0.7

    def test_empty_scene_falls_back_to_uniform(self):
        scene = SdfScene([sphere((50.0, 50.0, 50.0), 0.5)], Aabb([-2] * 3, [2] * 3))
        opts = RenderOptions(n_coarse=8, n_fine=400, seed=5)
        coarse = {round(s.t, 12) for s in sample_ray(scene, self.RAY, RenderOptions(n_coarse=8, n_fine=0, seed=5))}
        t = np.array([s.t for s in sample_ray(scene, self.RAY, opts) if round(s.t, 12) not in coarse])
        hist, _ = np.histogram(t, bins=4, range=(0.0, 3.8))
        assert hist.min() > 60

    def test_deterministic(self):
        opts = RenderOptions(seed=11)
        a = [s.t for s in sample_ray(textured_scene(), self.RAY, opts)]
        b = [s.t for s in sample_ray(textured_scene(), self.RAY, opts)]
        assert a == b

    def test_invalid_interval(self):
        with pytest.raises(InvalidInputError):
            sample_ray(unit_sphere_scene(), ([0, 0, 3], [0, 0, -1], 2.0, 1.0), RenderOptions())

    def test_options_validation(self):
        with pytest.raises(InvalidInputError):
            RenderOptions(s=0.0)
        with pytest.raises(InvalidInputError):
            RenderOptions(n_coarse=1)
        with pytest.raises(InvalidInputError):
            RenderOptions(n_fine=-1)


class TestRenderView:
    def setup_method(self):
        self.scene = unit_sphere_scene(1.5)
        self.cam = look_at_camera([0.0, 0.0, 3.0], [0.0, 0.0, 0.0], 17, 17)
        self.grid = DeformationGrid(3, self.scene.aabb)

    def test_zero_grid_matches_no_deformation(self):
        opts = RenderOptions(n_coarse=24, n_fine=8)
        a = render_view(self.scene, self.grid, None, self.cam, opts)
        b = render_view(self.scene, self.grid, None, self.cam,
                        RenderOptions(n_coarse=24, n_fine=8, apply_deformation=False))
        for name in ("rgb", "depth", "uncertainty", "weight_sum"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_center_depth_against_sphere_trace(self):
        opts = RenderOptions(n_coarse=48, n_fine=32)
        out = render_view(self.scene, self.grid, None, self.cam, opts)
        origins, dirs, near, far = generate_rays(self.cam)
        c = 8 * 17 + 8
        t_true = sphere_trace(self.scene, origins[c], dirs[c], near[c], far[c])
        t0, t1 = self.scene.aabb.clip_rays(origins[c:c + 1], dirs[c:c + 1], near[c:c + 1], far[c:c + 1])
        assert abs(out.depth[8, 8] - t_true) <= 2.0 / 48 * (t1[0] - t0[0])

    def test_zero_hessian_gives_zero_uncertainty(self):
        h = HessianGrid(3, self.scene.aabb)
        out = render_view(self.scene, self.grid, h, self.cam, RenderOptions(n_coarse=16, n_fine=8))
        assert not np.any(out.uncertainty)

    def test_output_ranges(self):
        out = render_view(textured_scene(), DeformationGrid(3, textured_scene().aabb), None,
                          look_at_camera([2.0, 1.0, 3.0], [0, 0, 0], 12, 10), RenderOptions(n_coarse=16, n_fine=8))
        assert out.rgb.shape == (10, 12, 3) and out.depth.shape == (10, 12)
        assert np.all((out.weight_sum >= 0) & (out.weight_sum <= 1))
        assert np.all((out.rgb >= 0) & (out.rgb <= 1))
        assert np.all(out.depth[out.weight_sum < 1e-6] == 0)

    def test_aabb_mismatch(self):
        with pytest.raises(ConfigurationError):
            render_view(self.scene, DeformationGrid(3, Aabb([-1] * 3, [1] * 3)), None, self.cam, RenderOptions())
        with pytest.raises(ConfigurationError):
            render_view(self.scene, self.grid, HessianGrid(3, Aabb([-1] * 3, [1] * 3)), self.cam, RenderOptions())

    def test_deterministic(self):
        opts = RenderOptions(n_coarse=16, n_fine=8, seed=4)
        a = render_view(textured_scene(), DeformationGrid(2, textured_scene().aabb), None, self.cam, opts)
        b = render_view(textured_scene(), DeformationGrid(2, textured_scene().aabb), None, self.cam, opts)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_literal_sigmoid_inverts_coverage(self):
        cam = look_at_camera([0.0, 0.0, 1.4], [0.0, 0.0, 0.0], 9, 9, fov_deg=20)
        opts = RenderOptions(n_coarse=32, n_fine=0)
        normal = render_view(self.scene, self.grid, None, cam, opts)
        literal = render_view(self.scene, self.grid, None, cam, RenderOptions(n_coarse=32, n_fine=0,
                                                                              literal_sigmoid=True))
        # the camera sits outside the sphere; the verbatim formula is opaque there and terminates at once
        assert literal.depth[4, 4] < normal.depth[4, 4]
        assert literal.depth[4, 4] < 0.3

    def test_uncertainty_composites_sigma_with_render_weights(self):
        h = HessianGrid(3, self.scene.aabb, np.full((9, 9, 9), 4.0))
        out = render_view(self.scene, self.grid, h, self.cam, RenderOptions(n_coarse=16, n_fine=8))
        np.testing.assert_allclose(out.uncertainty, 2.0 * out.weight_sum, atol=1e-12)
