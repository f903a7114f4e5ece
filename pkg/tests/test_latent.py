import numpy as np
import pytest

from locogan.geometry import FootprintMap
from locogan.latent import (
    CoordinateSpec,
    LatentSpec,
    MarginTooSmall,
    PeriodMismatch,
    RegionOutOfBounds,
    crop_with_noise_padding,
    geometry_for_sample,
    interpolate_latents,
    latent_field,
    make_coordinate_grid,
    plan_crop,
    sample_latent,
    sample_window_latent,
    tile_periodic,
    transplant,
)
from tests.conftest import narrow_spec


@pytest.fixture(scope="module")
def fmap(default_layers=None):
    from locogan.model import GeneratorConfig
    return FootprintMap.build(GeneratorConfig.build(LatentSpec()).layers)


class TestCoordinateGrid:
    def test_full_window_corners(self, fmap):
        spec = CoordinateSpec("linear", (128, 128))
        win = plan_crop((0, 0), (128, 128), (128, 128), fmap, pad=0)
        grid = make_coordinate_grid(spec, win, 128, 128)
        assert grid.values.shape == (2, 128, 128)
        assert grid.values[:, 0, 0] == pytest.approx([-1.0, -1.0], abs=0)
        assert grid.values[:, 127, 127] == pytest.approx([1.0, 1.0], abs=0)

    def test_odd_window_center(self, fmap):
        spec = CoordinateSpec("linear", (127, 127))
        win = plan_crop((0, 0), (127, 127), (127, 127), fmap, pad=0)
        grid = make_coordinate_grid(spec, win, 127, 127)
        assert grid.values[0, 63, 63] == 0.0
        assert grid.values[1, 63, 63] == 0.0

    def test_periodic_x_at_zero_angle(self, fmap):
        spec = CoordinateSpec("periodic_x", (129, 129), period=64)
        win = plan_crop((0, 0), (129, 129), (129, 129), fmap, pad=0)
        grid = make_coordinate_grid(spec, win, 129, 129)
        # world x = 0 at the center column
        col = 64
        assert grid.values[0, 0, col] == pytest.approx(1.0, abs=1e-12)
        assert grid.values[1, 0, col] == pytest.approx(0.0, abs=1e-12)
        assert grid.channels == 3

    def test_resampled_target(self, fmap):
        spec = CoordinateSpec("linear", (128, 128))
        win = plan_crop((0, 0), (128, 128), (128, 128), fmap, pad=0)
        grid = make_coordinate_grid(spec, win, 65, 65)
        assert grid.values.shape == (2, 65, 65)
        assert grid.values[0, 0, 0] == pytest.approx(-1.0)
        assert grid.values[0, 64, 64] == pytest.approx(1.0)
        assert grid.values[0, 32, 32] == pytest.approx(0.0, abs=1e-12)

    def test_mode_channel_counts(self):
        assert CoordinateSpec("linear", (128, 128)).channels == 2
        assert CoordinateSpec("periodic_x", (128, 128), 64).channels == 3
        assert CoordinateSpec("periodic_xy", (128, 128), 64).channels == 4

    def test_periodic_requires_period(self):
        with pytest.raises(ValueError):
            CoordinateSpec("periodic_x", (128, 128))


class TestSampleLatent:
    def test_global_spatially_constant(self, fmap):
        spec = LatentSpec()
        lat = sample_latent(spec, 10, 10, np.random.default_rng(0), fmap=fmap)
        field = lat.global_field()
        assert field.shape == (16, 10, 10)
        span = field.max(axis=(1, 2)) - field.min(axis=(1, 2))
        assert np.all(span == 0.0)

    def test_channel_counts(self, fmap):
        spec = LatentSpec()
        lat = sample_latent(spec, 10, 10, np.random.default_rng(0), fmap=fmap)
        assert lat.value_channels().shape == (18, 10, 10)
        assert lat.spec.input_channels == 20

    def test_moments_of_local_noise(self, fmap):
        spec = LatentSpec(0, 1, CoordinateSpec())
        lat = sample_latent(spec, 1000, 1000, np.random.default_rng(123), fmap=fmap)
        vals = lat.local.astype(np.float64)
        assert abs(vals.mean()) < 0.01
        assert abs(vals.var() - 1.0) < 0.02

    def test_deterministic_under_seed(self, fmap):
        spec = LatentSpec()
        a = sample_latent(spec, 6, 6, np.random.default_rng(7), fmap=fmap)
        b = sample_latent(spec, 6, 6, np.random.default_rng(7), fmap=fmap)
        assert np.array_equal(a.local, b.local)
        assert np.array_equal(a.global_values, b.global_values)


class TestCropWithNoisePadding:
    def test_overlapping_windows_share_values(self, fmap):
        spec = narrow_spec()
        rng = np.random.default_rng(3)
        field = latent_field(spec, (128, 160), fmap, rng)
        wa = plan_crop((16, 32), (64, 64), (128, 160), fmap)
        wb = plan_crop((40, 32), (64, 64), (128, 160), fmap)
        la = crop_with_noise_padding(field, wa, fmap, rng)
        lb = crop_with_noise_padding(field, wb, fmap, rng)
        # field-frame intersection of the two latent rectangles
        x_lo = max(wa.lat_x0, wb.lat_x0)
        x_hi = min(wa.lat_x0 + wa.lat_w, wb.lat_x0 + wb.lat_w)
        fy0, fx0 = field.geometry.latent_origin
        # restrict to columns inside the field (outside is fresh noise)
        x_lo = max(x_lo, fx0)
        x_hi = min(x_hi, fx0 + field.width)
        sa = la.local[:, :, x_lo - wa.lat_x0:x_hi - wa.lat_x0]
        sb = lb.local[:, :, x_lo - wb.lat_x0:x_hi - wb.lat_x0]
        rows = slice(max(wa.lat_y0, fy0) - wa.lat_y0,
                     min(wa.lat_y0 + wa.lat_h, fy0 + field.height) - wa.lat_y0)
        assert np.array_equal(sa[:, rows], sb[:, rows])

    def test_copied_values_bitwise(self, fmap):
        spec = narrow_spec()
        rng = np.random.default_rng(4)
        field = latent_field(spec, (128, 128), fmap, rng)
        win = plan_crop((32, 48), (64, 64), (128, 128), fmap)
        lat = crop_with_noise_padding(field, win, fmap, rng)
        fy0, fx0 = field.geometry.latent_origin
        for dy in range(lat.height):
            fy = win.lat_y0 + dy - fy0
            if not (0 <= fy < field.height):
                continue
            for dx in range(lat.width):
                fx = win.lat_x0 + dx - fx0
                if 0 <= fx < field.width:
                    assert np.array_equal(lat.local[:, dy, dx], field.local[:, fy, fx])
        assert np.array_equal(lat.global_values, field.global_values)

    def test_margin_too_small(self, fmap):
        spec = narrow_spec()
        rng = np.random.default_rng(5)
        field = latent_field(spec, (128, 128), fmap, rng)
        win = plan_crop((32, 48), (64, 64), (128, 128), fmap)
        win.lat_w = win.lat_w - 3  # latent window no longer covers the footprints
        with pytest.raises(MarginTooSmall):
            crop_with_noise_padding(field, win, fmap, rng)

    def test_fresh_window_latent_deterministic(self, fmap):
        spec = narrow_spec()
        win = plan_crop((5, 9), (64, 64), (128, 128), fmap)
        a = sample_window_latent(spec, win, fmap, np.random.default_rng(11))
        b = sample_window_latent(spec, win, fmap, np.random.default_rng(11))
        assert np.array_equal(a.local, b.local)


class TestTilePeriodic:
    def make_periodic_latent(self, fmap, p=4, periods=3, mode="periodic_x"):
        spec = narrow_spec(mode, period=16 * p)
        size = p * periods
        return spec, sample_latent(spec, size, size, np.random.default_rng(0), fmap=fmap)

    def test_tile_is_noop_when_period_is_width(self, fmap):
        p = 4
        spec = narrow_spec("periodic_x", period=16 * p)
        lat = sample_latent(spec, 4, p, np.random.default_rng(0), fmap=fmap)
        tiled = tile_periodic(lat, p, "x", fmap)
        assert np.array_equal(tiled.local, lat.local)

    def test_columns_repeat(self, fmap):
        spec, lat = self.make_periodic_latent(fmap)
        tiled = tile_periodic(lat, 4, "x", fmap)
        for i in range(tiled.width - 4):
            assert np.array_equal(tiled.local[:, :, i], tiled.local[:, :, i + 4])

    def test_shift_by_period_is_identity(self, fmap):
        spec, lat = self.make_periodic_latent(fmap)
        tiled = tile_periodic(lat, 4, "x", fmap)
        assert np.array_equal(np.roll(tiled.local, 4, axis=2), tiled.local)

    def test_xy_tiling(self, fmap):
        spec, lat = self.make_periodic_latent(fmap, mode="periodic_xy")
        tiled = tile_periodic(lat, 4, "xy", fmap)
        assert np.array_equal(np.roll(tiled.local, 4, axis=1), tiled.local)
        assert np.array_equal(np.roll(tiled.local, 4, axis=2), tiled.local)

    def test_alpha_mismatch_rejected(self, fmap):
        spec, lat = self.make_periodic_latent(fmap, p=4)
        with pytest.raises(PeriodMismatch):
            tile_periodic(lat, 3, "x", fmap)  # 3*16 != configured 64px period

    def test_indivisible_extent_rejected(self, fmap):
        spec = narrow_spec("periodic_x", period=16 * 5)
        lat = sample_latent(spec, 4, 12, np.random.default_rng(0), fmap=fmap)
        with pytest.raises(PeriodMismatch):
            tile_periodic(lat, 5, "x", fmap)

    def test_linear_mode_rejected(self, fmap):
        lat = sample_latent(narrow_spec(), 8, 8, np.random.default_rng(0), fmap=fmap)
        with pytest.raises(PeriodMismatch):
            tile_periodic(lat, 4, "x", fmap)


class TestTransplant:
    def build_pair(self, fmap):
        spec = narrow_spec()
        a = sample_latent(spec, 8, 8, np.random.default_rng(1), fmap=fmap)
        b = sample_latent(spec, 8, 8, np.random.default_rng(2), fmap=fmap)
        return a, b

    def test_whole_region_both_equals_src(self, fmap):
        dst, src = self.build_pair(fmap)
        out = transplant(dst, src, (0, 0, 8, 8), "both")
        assert np.array_equal(out.local, src.local)
        assert np.array_equal(out.global_values, src.global_values)
        assert not out.edited

    def test_empty_region_equals_dst(self, fmap):
        dst, src = self.build_pair(fmap)
        out = transplant(dst, src, (0, 0, 0, 0), "both")
        assert np.array_equal(out.local, dst.local)
        assert np.array_equal(out.global_values, dst.global_values)

    def test_half_plane_global_mixes_master_plans(self, fmap):
        dst, src = self.build_pair(fmap)
        out = transplant(dst, src, (0, 0, 8, 4), "global")
        assert out.edited
        field = out.global_field()
        assert np.array_equal(field[:, :, :4], src.global_field()[:, :, :4])
        assert np.array_equal(field[:, :, 4:], dst.global_field()[:, :, 4:])
        assert np.array_equal(out.local, dst.local)

    def test_local_only(self, fmap):
        dst, src = self.build_pair(fmap)
        out = transplant(dst, src, (2, 3, 4, 2), "local")
        assert np.array_equal(out.local[:, 2:6, 3:5], src.local[:, 2:6, 3:5])
        assert np.array_equal(out.global_values, dst.global_values)

    def test_idempotent_on_self(self, fmap):
        dst, _ = self.build_pair(fmap)
        for region in [(0, 0, 8, 8), (1, 2, 3, 4), (0, 0, 0, 0)]:
            for chans in ("global", "local", "both"):
                out = transplant(dst, dst, region, chans)
                assert np.array_equal(out.local, dst.local)
                assert np.array_equal(out.global_field(), dst.global_field())

    def test_region_out_of_bounds(self, fmap):
        dst, src = self.build_pair(fmap)
        with pytest.raises(RegionOutOfBounds):
            transplant(dst, src, (4, 4, 8, 2), "both")
        with pytest.raises(RegionOutOfBounds):
            transplant(dst, src, (-1, 0, 2, 2), "both")


class TestInterpolateLatents:
    def endpoints(self, fmap, seed_a=1, seed_b=2, size_a=(128, 192), size_b=(160, 160)):
        spec = narrow_spec()
        geom_a, (nha, nwa) = geometry_for_sample(spec.coordinate, *size_a, fmap)
        geom_b, (nhb, nwb) = geometry_for_sample(spec.coordinate, *size_b, fmap)
        a = sample_latent(spec, nha, nwa, np.random.default_rng(seed_a), geometry=geom_a)
        b = sample_latent(spec, nhb, nwb, np.random.default_rng(seed_b), geometry=geom_b)
        return a, b

    def test_endpoints_exact(self, fmap):
        a, b = self.endpoints(fmap)
        out0, size0 = interpolate_latents(a, b, 0.0, (128, 192), (160, 160), fmap)
        assert size0 == (128, 192)
        assert np.array_equal(out0.local, a.local)
        assert np.array_equal(out0.global_values, a.global_values)
        out1, size1 = interpolate_latents(a, b, 1.0, (128, 192), (160, 160), fmap)
        assert size1 == (160, 160)
        assert np.array_equal(out1.local, b.local)

    def test_midpoint_size(self, fmap):
        a, b = self.endpoints(fmap)
        _, size = interpolate_latents(a, b, 0.5, (128, 192), (160, 160), fmap)
        assert size == (144, 176)

    def test_continuity_in_t(self, fmap):
        a, b = self.endpoints(fmap)
        t, eps = 0.3, 1e-4
        x, sx = interpolate_latents(a, b, t, (128, 192), (160, 160), fmap)
        y, sy = interpolate_latents(a, b, t + eps, (128, 192), (160, 160), fmap)
        assert sx == sy  # no size boundary crossed
        slope = np.abs(x.local.astype(np.float64) - y.local.astype(np.float64)).max() / eps
        # the t-derivative of the mix is (resampled b - resampled a)
        bound = (np.abs(a.local).max() + np.abs(b.local).max()) + 1.0
        assert slope <= bound

    def test_spec_mismatch(self, fmap):
        a, _ = self.endpoints(fmap)
        other = sample_latent(LatentSpec(2, 2, CoordinateSpec()), 6, 6,
                              np.random.default_rng(0), fmap=fmap)
        with pytest.raises(ValueError):
            interpolate_latents(a, other, 0.5, (64, 64), (64, 64), fmap)

    def test_edited_latents_mix_per_pixel(self, fmap):
        spec = narrow_spec()
        geom, (nh, nw) = geometry_for_sample(spec.coordinate, 64, 64, fmap)
        a = sample_latent(spec, nh, nw, np.random.default_rng(1), geometry=geom)
        b = sample_latent(spec, nh, nw, np.random.default_rng(2), geometry=geom)
        edited = transplant(a, b, (0, 0, nh, nw // 2), "global")
        mixed, size = interpolate_latents(edited, b, 0.25, (64, 64), (64, 64), fmap)
        assert size == (64, 64)
        assert mixed.edited
        expect = 0.75 * edited.global_field() + 0.25 * b.global_field()
        assert np.abs(mixed.global_field() - expect).max() < 1e-6
