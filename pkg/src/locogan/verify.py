"""Structural property checks.

These hold for any weights, trained or fresh: output-size law, receptive
footprints, shift equivariance, crop stitching, tiled periodicity, the
spectral bound, and seeded determinism.  Each check returns a small
result record; the CLI aggregates them into a machine-readable report.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch

from .geometry import FootprintMap, latent_size_for_target, stack_output_size
from .latent import (
    AxisWorld,
    CoordinateSpec,
    LatentGeometry,
    LatentImage,
    LatentSpec,
    crop_with_noise_padding,
    latent_field,
    plan_crop,
    sample_latent,
)
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    GeneratorNet,
    SpectralConv2d,
    build_discriminator,
    build_generator,
    generate,
    spectral_normalize,
)

EQUIVARIANCE_TOL = 1e-4
STITCHING_TOL = 1e-4
PERIODICITY_TOL = 1e-3
SPECTRAL_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    skipped: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _narrow_spec(coord_mode: str = "linear", period: int | None = None) -> LatentSpec:
    cspec = CoordinateSpec(coord_mode, (128, 128), period)
    return LatentSpec(4, 2, cspec)


def _narrow_generator(spec: LatentSpec, seed: int = 7) -> GeneratorNet:
    cfg = GeneratorConfig.build(spec, widths=(16, 16, 8, 8))
    return build_generator(cfg, spec, np.random.default_rng(seed))


def perturbation_mask(
    net: GeneratorNet, base: LatentImage, fmap: FootprintMap, y: int, x: int,
    delta: float = 3.0,
) -> np.ndarray:
    """Which raw-output pixels change when one local latent pixel is bumped."""
    ref = generate(net, base).values
    bumped = LatentImage(
        base.spec, base.height, base.width, base.local.copy(),
        None if base.global_values is None else base.global_values.copy(),
        base.geometry,
        None if base.global_map is None else base.global_map.copy(),
    )
    bumped.local[0, y, x] += delta
    out = generate(net, bumped).values
    return np.any(out != ref, axis=0)


def analytic_mask(fmap: FootprintMap, shape_hw: tuple[int, int], y: int, x: int) -> np.ndarray:
    raw_h = stack_output_size(shape_hw[0], fmap.layers)
    raw_w = stack_output_size(shape_hw[1], fmap.layers)
    ry = fmap.output_interval(y)
    rx = fmap.output_interval(x)
    mask = np.zeros((raw_h, raw_w), dtype=bool)
    mask[max(ry[0], 0):min(ry[1], raw_h - 1) + 1,
         max(rx[0], 0):min(rx[1], raw_w - 1) + 1] = True
    return mask


def check_shape_law(net: GeneratorNet, lo: int = 4, hi: int = 12) -> CheckResult:
    fmap = FootprintMap.build(net.cfg.layers)
    rng = np.random.default_rng(0)
    for n in range(lo, hi + 1):
        predicted = stack_output_size(n, net.cfg.layers)
        lat = sample_latent(net.latent_spec, n, n, rng, fmap=fmap)
        img = generate(net, lat)
        if (img.height, img.width) != (predicted, predicted):
            return CheckResult(
                "shape_law", False,
                f"n={n}: predicted {predicted}, forward gave {img.height}x{img.width}",
            )
    return CheckResult("shape_law", True, f"sizes match forward passes for n in [{lo},{hi}]")


def check_latent_pairing() -> CheckResult:
    layers = GeneratorConfig.build(LatentSpec()).layers
    n, off = latent_size_for_target(64, layers)
    ok = (n, off) == (10, 16)
    return CheckResult("latent_pairing", ok, f"latent_size_for_target(64) = ({n}, {off})")


def check_footprint(net: GeneratorNet, n: int = 8, samples: int = 20) -> CheckResult:
    fmap = FootprintMap.build(net.cfg.layers)
    rng = np.random.default_rng(1)
    base = sample_latent(net.latent_spec, n, n, rng, fmap=fmap)
    pairs = [(int(rng.integers(n)), int(rng.integers(n))) for _ in range(samples)]
    for y, x in pairs:
        probed = perturbation_mask(net, base, fmap, y, x)
        expect = analytic_mask(fmap, (n, n), y, x)
        if not np.array_equal(probed, expect):
            return CheckResult("footprint", False, f"mismatch for latent pixel ({y}, {x})")
    return CheckResult("footprint", True, f"{samples} perturbation probes match analytically")


def shifted_pair(
    spec: LatentSpec, fmap: FootprintMap, n: int, rng: np.random.Generator
) -> tuple[LatentImage, LatentImage]:
    """Two latents cut one pixel apart from a shared (n+1)-wide field."""
    wide = sample_latent(spec, n, n + 1, rng, fmap=fmap)
    geo = wide.geometry
    a = LatentImage(spec, n, n, np.ascontiguousarray(wide.local[:, :, :n]),
                    wide.global_values.copy(), geo)
    shifted = LatentGeometry(
        AxisWorld(geo.x_world.scale, geo.x_world.offset + geo.x_world.scale),
        geo.y_world, geo.crop, None,
    )
    b = LatentImage(spec, n, n, np.ascontiguousarray(wide.local[:, :, 1:]),
                    wide.global_values.copy(), shifted)
    return a, b


def check_equivariance(
    net: GeneratorNet, trials: int = 3, tol: float = EQUIVARIANCE_TOL, seed: int = 2
) -> CheckResult:
    fmap = FootprintMap.build(net.cfg.layers)
    scale = int(fmap.scale)
    rng = np.random.default_rng(seed)
    n = 8
    worst = 0.0
    for _ in range(trials):
        a, b = shifted_pair(net.latent_spec, fmap, n, rng)
        out_a = generate(net, a).values
        out_b = generate(net, b).values
        width = out_a.shape[2]
        span = width - scale  # columns whose shifted twin also exists
        diff = np.abs(out_b[:, :, :span] - out_a[:, :, scale:scale + span]).max()
        worst = max(worst, float(diff))
    ok = worst < tol
    return CheckResult(
        "shift_equivariance", ok,
        f"max |shifted - reference| = {worst:.3e} over {trials} trials (tol {tol:g})",
    )


def check_stitching(
    net: GeneratorNet, trials: int = 3, tol: float = STITCHING_TOL, seed: int = 3
) -> CheckResult:
    fmap = FootprintMap.build(net.cfg.layers)
    spec = net.latent_spec
    rng = np.random.default_rng(seed)
    extent = (128, 160)
    crop = 64
    worst = 0.0
    for _ in range(trials):
        field = latent_field(spec, extent, fmap, rng)
        x1 = int(rng.integers(0, extent[1] - crop - 40))
        y1 = int(rng.integers(0, extent[0] - crop + 1))
        x2 = x1 + int(rng.integers(8, 40))
        wa = plan_crop((x1, y1), (crop, crop), extent, fmap)
        wb = plan_crop((x2, y1), (crop, crop), extent, fmap)
        la = crop_with_noise_padding(field, wa, fmap, rng)
        lb = crop_with_noise_padding(field, wb, fmap, rng)
        ia = generate(net, la).values
        ib = generate(net, lb).values
        ov = crop - (x2 - x1)
        diff = np.abs(ia[:, :, x2 - x1:] - ib[:, :, :ov]).max()
        worst = max(worst, float(diff))
    ok = worst < tol
    return CheckResult(
        "stitching", ok,
        f"max overlap difference = {worst:.3e} over {trials} trials (tol {tol:g})",
    )


def periodic_strip(
    net: GeneratorNet, p: int, periods: int, rng: np.random.Generator, height: int = 6
) -> np.ndarray:
    """Raw strip decoded from locally tiled noise and matching coordinates."""
    from .latent import tile_periodic

    fmap = FootprintMap.build(net.cfg.layers)
    lat = sample_latent(net.latent_spec, height, p * periods, rng, fmap=fmap)
    lat = tile_periodic(lat, p, "x", fmap)
    return generate(net, lat).values


def check_periodicity(
    net: GeneratorNet | None = None,
    p: int = 4,
    periods: int = 3,
    tol: float = PERIODICITY_TOL,
    seed: int = 4,
) -> CheckResult:
    if net is None or net.latent_spec.coordinate.mode == "linear":
        spec = _narrow_spec("periodic_x", period=16 * p)
        net = _narrow_generator(spec, seed=11)
    cspec = net.latent_spec.coordinate
    scale = int(FootprintMap.build(net.cfg.layers).scale)
    if cspec.period is None or cspec.period % scale != 0:
        return CheckResult("periodicity", True, "no latent-aligned period", skipped=True)
    p = cspec.period // scale
    strip = periodic_strip(net, p, periods, np.random.default_rng(seed))
    T = scale * p
    width = strip.shape[2]
    diff = np.abs(strip[:, :, : width - T] - strip[:, :, T:]).max()
    ok = float(diff) < tol
    return CheckResult(
        "periodicity", ok,
        f"max |col(x) - col(x+{T})| = {float(diff):.3e} (tol {tol:g})",
    )


def converged_spectral_norm(
    weight: torch.Tensor, u: torch.Tensor, rel_tol: float = 1e-13, max_rounds: int = 400
) -> tuple[torch.Tensor, torch.Tensor]:
    """Power-iterate until the sigma estimate stabilizes; returns (W/sigma, sigma)."""
    w64 = weight.to(torch.float64)
    u64 = u.to(torch.float64)
    sigma_prev = None
    for _ in range(max_rounds):
        normed, u64, sigma = spectral_normalize(w64, u64, iterations=25)
        s = float(sigma)
        if sigma_prev is not None and abs(s - sigma_prev) <= rel_tol * abs(s):
            break
        sigma_prev = s
    return normed, sigma


def check_spectral(d_net, tol: float = SPECTRAL_TOL) -> CheckResult:
    layers = [m for m in d_net.modules() if isinstance(m, SpectralConv2d)]
    if not layers:
        return CheckResult("spectral", True, "spectral normalization disabled", skipped=True)
    worst = 0.0
    for m in layers:
        w2 = m.weight.detach().view(m.weight.shape[0], -1)
        normed, _ = converged_spectral_norm(w2, m.u.detach())
        sv = torch.linalg.svdvals(normed)[0].item()
        worst = max(worst, abs(sv - 1.0))
    ok = worst < tol
    return CheckResult(
        "spectral", ok,
        f"max |sigma_max(W/sigma) - 1| = {worst:.3e} over {len(layers)} layers (tol {tol:g})",
    )


def check_determinism(net: GeneratorNet, seed: int = 5) -> CheckResult:
    fmap = FootprintMap.build(net.cfg.layers)

    def run():
        rng = np.random.default_rng(seed)
        lat = sample_latent(net.latent_spec, 8, 8, rng, fmap=fmap)
        return generate(net, lat).values.tobytes()

    ok = run() == run()
    return CheckResult("determinism", ok, "two seeded generations are byte-identical")


def run_checks(
    g_net: GeneratorNet | None = None, d_net=None
) -> list[CheckResult]:
    """Run every structural suite, on provided nets or fresh narrow ones."""
    if g_net is None:
        g_net = _narrow_generator(_narrow_spec())
    if d_net is None:
        dcfg = DiscriminatorConfig.build(
            g_net.latent_spec.coordinate.channels, widths=(16, 32, 32, 32)
        )
        d_net = build_discriminator(dcfg, np.random.default_rng(8))
    results = [
        check_shape_law(g_net),
        check_latent_pairing(),
        check_footprint(g_net),
        check_equivariance(g_net),
        check_stitching(g_net),
        check_periodicity(g_net),
        check_spectral(d_net),
        check_determinism(g_net),
    ]
    return results
