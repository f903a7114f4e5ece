import numpy as np
import pytest
import torch

from locogan.geometry import (
    FootprintMap,
    Grid,
    LayerSpec,
    NonPositiveOutput,
    generator_output_size,
    latent_size_for_target,
    layer_output_size,
    min_latent_size,
    resample_grid,
    stack_output_size,
)

T = dict(transposed=True)


def torch_layer_size(n, layer):
    """Shape probe through a real conv layer, independent of the formula."""
    x = torch.zeros(1, 1, n, n)
    if layer.transposed:
        mod = torch.nn.ConvTranspose2d(1, 1, layer.kernel, layer.stride, layer.padding)
    else:
        mod = torch.nn.Conv2d(1, 1, layer.kernel, layer.stride, layer.padding)
    with torch.no_grad():
        return mod(x).shape[2]


class TestLayerOutputSize:
    def test_transposed_examples(self):
        layer = LayerSpec(1, 1, 4, 2, 3, **T)
        assert layer_output_size(10, layer) == 16
        assert layer_output_size(16, layer) == 28

    def test_identity_layer(self):
        layer = LayerSpec(1, 1, 1, 1, 0, **T)
        for n in (1, 7, 33):
            assert layer_output_size(n, layer) == n

    def test_against_torch_probe(self):
        cases = [
            LayerSpec(1, 1, 4, 2, 3, **T),
            LayerSpec(1, 1, 4, 1, 3, **T),
            LayerSpec(1, 1, 3, 2, 0, **T),
            LayerSpec(1, 1, 4, 2, 1),
            LayerSpec(1, 1, 4, 1, 0),
            LayerSpec(1, 1, 5, 3, 2),
        ]
        for layer in cases:
            for n in (5, 10, 17):
                try:
                    predicted = layer_output_size(n, layer)
                except NonPositiveOutput:
                    continue
                assert predicted == torch_layer_size(n, layer), layer

    def test_non_positive_raises(self):
        with pytest.raises(NonPositiveOutput):
            layer_output_size(2, LayerSpec(1, 1, 4, 2, 3, **T))
        with pytest.raises(NonPositiveOutput):
            layer_output_size(3, LayerSpec(1, 1, 8, 2, 0))


class TestGeneratorOutputSize:
    def test_composition_chain(self, default_layers):
        sizes = [stack_output_size(10, default_layers[:k]) for k in range(1, 6)]
        assert sizes == [16, 28, 52, 100, 97]

    def test_values(self, default_layers):
        assert generator_output_size(10, default_layers) == 97
        assert generator_output_size(12, default_layers) == 129

    def test_closed_form(self, default_layers):
        for n in range(4, 33):
            assert generator_output_size(n, default_layers) == 16 * n - 63

    def test_error_carries_layer_index(self, default_layers):
        with pytest.raises(NonPositiveOutput) as err:
            generator_output_size(3, default_layers)
        assert err.value.layer_index == 2

    def test_min_latent_size(self, default_layers):
        assert min_latent_size(default_layers) == 4


class TestLatentSizeForTarget:
    def test_stock_pairing(self, default_layers):
        assert latent_size_for_target(64, default_layers) == (10, 16)

    def test_unpadded(self, default_layers):
        assert latent_size_for_target(128, default_layers, pad=0) == (12, 0)
        assert latent_size_for_target(1, default_layers, pad=0) == (4, 0)

    def test_monotone_and_covering(self, default_layers):
        prev = 0
        for target in range(1, 200):
            n, off = latent_size_for_target(target, default_layers)
            raw = generator_output_size(n, default_layers)
            assert raw >= target
            assert off == (raw - target) // 2
            assert n >= prev
            prev = n

    def test_bad_target(self, default_layers):
        with pytest.raises(ValueError):
            latent_size_for_target(0, default_layers)


class TestFootprintMap:
    def test_identity_stack(self):
        fmap = FootprintMap.build([LayerSpec(1, 1, 1, 1, 0, **T)])
        for j in (0, 3, 9):
            assert fmap.latent_interval(j) == (j, j)

    def test_end_to_end_map(self, default_fmap):
        assert int(default_fmap.scale) == 16
        assert int(default_fmap.offset) == -24

    def test_intervals_monotone_nonempty(self, default_fmap):
        prev = (0, 0)
        for j in range(0, 200):
            lo, hi = default_fmap.latent_interval(j)
            assert lo <= hi
            assert lo >= prev[0] and hi >= prev[1]
            prev = (lo, hi)

    def test_forward_backward_consistency(self, default_fmap):
        # latent i influences output j  <=>  i in the latent interval of j
        for j in range(0, 160):
            lo, hi = default_fmap.latent_interval(j)
            for i in (lo - 1, lo, hi, hi + 1):
                olo, ohi = default_fmap.output_interval(i)
                assert (olo <= j <= ohi) == (lo <= i <= hi)

    def test_margin_bounds_footprints(self, default_fmap):
        # outputs farther than scale*margin from a latent pixel's center
        # cannot depend on it
        m = default_fmap.margin
        assert m == 2
        for i in range(0, 12):
            center = float(default_fmap.layer_maps[0](i))
            olo, ohi = default_fmap.output_interval(i)
            assert center - olo <= 16 * m
            assert ohi - center <= 16 * m

    def test_layer_maps_compose_to_end_to_end(self, default_fmap):
        from locogan.geometry import _layer_center_map
        maps = default_fmap.layer_maps
        for i, layer in enumerate(default_fmap.layers[:-1]):
            step = _layer_center_map(layer)
            composed = maps[i + 1].compose(step)
            assert composed.scale == maps[i].scale
            assert composed.offset == maps[i].offset

    def test_plan_crop_nonuniform_margins_valid(self, default_fmap):
        from locogan.latent import LatentSpec, plan_crop, sample_window_latent
        spec = LatentSpec(2, 1)
        rng = np.random.default_rng(0)
        for x in (0, 5, 16, 23):
            win_u = plan_crop((x, 0), (64, 64), (128, 128), default_fmap, pad=0)
            win_n = plan_crop((x, 0), (64, 64), (128, 128), default_fmap,
                              pad=0, uniform=False)
            assert win_n.lat_w <= win_u.lat_w
            # both satisfy the footprint requirement
            sample_window_latent(spec, win_u, default_fmap, rng)
            sample_window_latent(spec, win_n, default_fmap, rng)

    def test_layer_positions_compose(self, default_fmap):
        # layer 0 positions are the latent indices themselves
        pos0 = default_fmap.layer_latent_positions(0, 10)
        assert np.allclose(pos0, np.arange(10))
        # moving one pixel at layer l moves 1/scale_l latent pixels
        pos2 = default_fmap.layer_latent_positions(2, 28)
        steps = np.diff(pos2)
        assert np.allclose(steps, steps[0])


class TestPerturbationOracle:
    """The analytic footprints must equal what an actual forward pass shows."""

    def test_table_stack_footprints(self):
        from tests.conftest import narrow_generator, narrow_spec
        from locogan.latent import sample_latent
        from locogan.model import generate

        spec = narrow_spec()
        net = narrow_generator(spec)
        fmap = FootprintMap.build(net.cfg.layers)
        n = 9
        rng = np.random.default_rng(5)
        base = sample_latent(spec, n, n, rng, fmap=fmap)
        ref = generate(net, base).values
        raw = ref.shape[1]
        for y, x in [(0, 0), (3, 5), (8, 8), (4, 0), (0, 7)]:
            bumped = sample_latent(spec, n, n, np.random.default_rng(5), fmap=fmap)
            bumped.local[0, y, x] += 3.0
            out = generate(net, bumped).values
            changed = np.any(out != ref, axis=0)
            ry = fmap.output_interval(y)
            rx = fmap.output_interval(x)
            expect = np.zeros((raw, raw), dtype=bool)
            expect[max(ry[0], 0):min(ry[1], raw - 1) + 1,
                   max(rx[0], 0):min(rx[1], raw - 1) + 1] = True
            assert np.array_equal(changed, expect), (y, x)


class TestResampleGrid:
    def test_identity(self):
        g = Grid(np.random.default_rng(0).standard_normal((3, 5, 7)))
        out = resample_grid(g, 5, 7)
        assert np.array_equal(out.values, g.values)

    def test_two_point_line(self):
        g = Grid(np.array([[[-1.0, 1.0]]]))
        out = resample_grid(g, 1, 3)
        assert np.allclose(out.values[0, 0], [-1.0, 0.0, 1.0])

    def test_constant_stays_constant(self):
        g = Grid(np.full((2, 4, 3), 2.5))
        for th, tw in [(1, 1), (9, 9), (3, 17)]:
            out = resample_grid(g, th, tw)
            assert np.allclose(out.values, 2.5)

    def test_affine_exactness(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            th, tw = int(rng.integers(1, 15)), int(rng.integers(1, 15))
            a, b, c = rng.standard_normal(3)
            ys, xs = np.mgrid[0:h, 0:w]
            g = Grid((a * xs + b * ys + c)[None])
            out = resample_grid(g, th, tw)
            ty = np.arange(th) * ((h - 1) / (th - 1)) if th > 1 else np.array([(h - 1) / 2])
            tx = np.arange(tw) * ((w - 1) / (tw - 1)) if tw > 1 else np.array([(w - 1) / 2])
            expect = a * tx[None, :] + b * ty[:, None] + c
            assert np.abs(out.values[0] - expect).max() < 1e-6

    def test_channels_preserved(self):
        g = Grid(np.random.default_rng(1).standard_normal((4, 3, 3)))
        assert resample_grid(g, 7, 2).channels == 4
