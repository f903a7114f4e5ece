"""Noise-image latents and their coordinate channels.

A latent is a small image: a few globally-constant channels (the master
plan), per-pixel gaussian noise channels (the local plan), and position
channels derived from where the latent sits in a reference pixel frame.
Crops of a latent field carry enough surrounding noise that every output
pixel of the decoded crop sees a full receptive footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .geometry import (
    FootprintMap,
    Grid,
    NonPositiveOutput,
    latent_size_for_target,
    resample_grid,
    stack_output_size,
)

CoordMode = Literal["linear", "periodic_x", "periodic_xy"]

COORD_CHANNELS = {"linear": 2, "periodic_x": 3, "periodic_xy": 4}


class MarginTooSmall(ValueError):
    """A crop window's latent rectangle does not cover the output footprints."""


class PeriodMismatch(ValueError):
    """Tiling period and coordinate period disagree."""


class RegionOutOfBounds(ValueError):
    """An edit region does not fit inside the latent extent."""


@dataclass(frozen=True)
class CoordinateSpec:
    """Coordinate channel construction.

    ``reference_extent`` is the (height, width) pixel frame whose span is
    normalized to [-1, 1].  Periodic modes replace an axis coordinate u by
    (cos(alpha*u), sin(alpha*u)) where ``period`` is the repeat length in
    output pixels and alpha spans one full turn per period.
    """

    mode: CoordMode = "linear"
    reference_extent: tuple[int, int] = (128, 128)
    period: int | None = None

    def __post_init__(self):
        if self.mode not in COORD_CHANNELS:
            raise ValueError(f"unknown coordinate mode {self.mode!r}")
        if self.reference_extent[0] < 1 or self.reference_extent[1] < 1:
            raise ValueError("reference extent must be >= 1x1")
        if self.mode != "linear":
            if self.period is None or self.period < 1:
                raise ValueError("periodic modes require a positive period (pixels)")

    @property
    def channels(self) -> int:
        return COORD_CHANNELS[self.mode]

    def alpha(self, axis: Literal["x", "y"]) -> float:
        """Radians per world unit along one axis."""
        if self.period is None:
            raise ValueError("alpha is only defined for periodic specs")
        ref = self.reference_extent[1] if axis == "x" else self.reference_extent[0]
        world_per_pixel = 2.0 / (ref - 1) if ref > 1 else 2.0
        return 2.0 * math.pi / (self.period * world_per_pixel)


@dataclass(frozen=True)
class LatentSpec:
    global_channels: int = 16
    local_channels: int = 2
    coordinate: CoordinateSpec = CoordinateSpec()

    def __post_init__(self):
        if self.global_channels < 0 or self.local_channels < 0:
            raise ValueError("channel counts must be >= 0")
        if self.global_channels + self.local_channels < 1:
            raise ValueError("need at least one value channel")

    @property
    def value_channels(self) -> int:
        return self.global_channels + self.local_channels

    @property
    def input_channels(self) -> int:
        return self.value_channels + self.coordinate.channels


@dataclass(frozen=True)
class AxisWorld:
    """Affine map from (fractional) latent index to world coordinate."""

    scale: float
    offset: float

    def __call__(self, pos):
        return self.scale * np.asarray(pos, dtype=np.float64) + self.offset


@dataclass(frozen=True)
class LatentGeometry:
    """Where a latent lives: world maps, raw-output crop, field alignment."""

    x_world: AxisWorld
    y_world: AxisWorld
    crop: tuple[int, int, int, int] | None = None  # (y0, x0, h, w) in raw-output pixels
    latent_origin: tuple[int, int] | None = None  # (iy0, ix0) in a shared field frame


@dataclass
class CropWindow:
    """A crop in full-image pixels plus its derived latent rectangle."""

    x: int
    y: int
    h: int
    w: int
    full_extent: tuple[int, int]  # (H, W) of the image frame
    lat_x0: int
    lat_y0: int
    lat_w: int
    lat_h: int
    margin: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError("window size must be >= 1x1")
        if self.lat_w < 1 or self.lat_h < 1:
            raise ValueError("latent window must be >= 1x1")


def _extent_world(extent: int) -> AxisWorld:
    if extent > 1:
        return AxisWorld(2.0 / (extent - 1), -1.0)
    return AxisWorld(0.0, 0.0)


def coordinate_channels(spec: CoordinateSpec, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    """Evaluate coordinate channels at world positions (wx per column, wy per row)."""
    h, w = len(wy), len(wx)
    xs = np.broadcast_to(wx[None, :], (h, w))
    ys = np.broadcast_to(wy[:, None], (h, w))
    if spec.mode == "linear":
        chans = [xs, ys]
    elif spec.mode == "periodic_x":
        ax = spec.alpha("x")
        chans = [np.cos(ax * xs), np.sin(ax * xs), ys]
    else:
        ax, ay = spec.alpha("x"), spec.alpha("y")
        chans = [np.cos(ax * xs), np.sin(ax * xs), np.cos(ay * ys), np.sin(ay * ys)]
    return np.stack(chans).astype(np.float64)


def make_coordinate_grid(
    spec: CoordinateSpec, window: CropWindow, target_h: int, target_w: int
) -> Grid:
    """Coordinate channels for a crop window, optionally resized.

    The native grid is evaluated at the window's pixel centers in the
    world frame of ``window.full_extent``; a differing target size is
    produced by bilinear resampling of that grid.
    """
    hx = _extent_world(window.full_extent[1])
    hy = _extent_world(window.full_extent[0])
    wx = hx(window.x + np.arange(window.w))
    wy = hy(window.y + np.arange(window.h))
    grid = Grid(coordinate_channels(spec, wx, wy))
    if (target_h, target_w) != (window.h, window.w):
        grid = resample_grid(grid, target_h, target_w)
    return grid


@dataclass
class LatentImage:
    """A concrete noise-image latent.

    ``global_values`` is one scalar per global channel; after an edit that
    mixes master plans it is replaced by a per-pixel ``global_map`` and the
    latent is flagged as edited.
    """

    spec: LatentSpec
    height: int
    width: int
    local: np.ndarray  # (local_channels, h, w) float32
    global_values: np.ndarray | None  # (global_channels,) float32, None if edited
    geometry: LatentGeometry
    global_map: np.ndarray | None = None  # (global_channels, h, w) when edited

    def __post_init__(self):
        if self.local.shape != (self.spec.local_channels, self.height, self.width):
            raise ValueError(f"local channels have shape {self.local.shape}")
        if (self.global_values is None) == (self.global_map is None):
            raise ValueError("exactly one of global_values / global_map must be set")

    @property
    def edited(self) -> bool:
        return self.global_map is not None

    def global_field(self) -> np.ndarray:
        """Global channels broadcast to the spatial extent."""
        if self.global_map is not None:
            return self.global_map
        return np.broadcast_to(
            self.global_values[:, None, None],
            (self.spec.global_channels, self.height, self.width),
        )

    def value_channels(self) -> np.ndarray:
        """Global + local channels, in that order, as (c, h, w) float32."""
        return np.concatenate(
            [self.global_field(), self.local], axis=0, dtype=np.float32
        )

    def coordinate_grid_at(self, x_pos: np.ndarray, y_pos: np.ndarray) -> Grid:
        """Coordinate channels at fractional latent positions."""
        return Grid(
            coordinate_channels(
                self.spec.coordinate,
                self.geometry.x_world(x_pos),
                self.geometry.y_world(y_pos),
            )
        )

    def latent_grid(self) -> Grid:
        return self.coordinate_grid_at(np.arange(self.width), np.arange(self.height))

    def output_grid(self, fmap: FootprintMap) -> Grid:
        """Coordinate channels at the raw-output pixels selected by the crop."""
        raw_h = stack_output_size(self.height, fmap.layers)
        raw_w = stack_output_size(self.width, fmap.layers)
        y0, x0, h, w = self.geometry.crop or (0, 0, raw_h, raw_w)
        inv_s = 1.0 / float(fmap.scale)
        off = float(fmap.offset)
        xs = (x0 + np.arange(w, dtype=np.float64) - off) * inv_s
        ys = (y0 + np.arange(h, dtype=np.float64) - off) * inv_s
        return self.coordinate_grid_at(xs, ys)


def _default_geometry(spec: CoordinateSpec, raw_h: int, raw_w: int, fmap: FootprintMap):
    """World maps placing the raw output over [-1, 1] (linear axes) or the
    native reference scale anchored at pixel 0 (periodic axes)."""
    s = float(fmap.scale)
    b = float(fmap.offset)

    def axis(raw: int, ref: int, periodic: bool) -> AxisWorld:
        world = _extent_world(ref if periodic else raw)
        return AxisWorld(world.scale * s, world.scale * b + world.offset)

    px = spec.mode in ("periodic_x", "periodic_xy")
    py = spec.mode == "periodic_xy"
    return LatentGeometry(
        x_world=axis(raw_w, spec.reference_extent[1], px),
        y_world=axis(raw_h, spec.reference_extent[0], py),
        crop=None,
    )


def sample_latent(
    spec: LatentSpec,
    h: int,
    w: int,
    rng: np.random.Generator,
    fmap: FootprintMap | None = None,
    geometry: LatentGeometry | None = None,
) -> LatentImage:
    """Draw a fresh latent: one normal value per global channel, i.i.d.
    normal local noise, deterministically from ``rng``."""
    if h < 1 or w < 1:
        raise ValueError("latent size must be >= 1x1")
    gvals = rng.standard_normal(spec.global_channels, dtype=np.float32)
    local = rng.standard_normal((spec.local_channels, h, w), dtype=np.float32)
    if geometry is None:
        if fmap is None:
            geometry = LatentGeometry(AxisWorld(0.0, 0.0), AxisWorld(0.0, 0.0))
        else:
            raw_h = stack_output_size(h, fmap.layers)
            raw_w = stack_output_size(w, fmap.layers)
            geometry = _default_geometry(spec.coordinate, raw_h, raw_w, fmap)
    return LatentImage(spec, h, w, local, gvals, geometry)


def geometry_for_sample(
    spec: CoordinateSpec, out_h: int, out_w: int, fmap: FootprintMap, pad: int = 1
) -> tuple[LatentGeometry, tuple[int, int]]:
    """Latent geometry and size for a standalone sample of a requested size.

    Linear axes stretch [-1, 1] across the requested extent; periodic axes
    keep the native reference scale so the texture period is preserved.
    """
    (nh, off_y) = latent_size_for_target(out_h, fmap.layers, pad)
    (nw, off_x) = latent_size_for_target(out_w, fmap.layers, pad)
    s = float(fmap.scale)
    b = float(fmap.offset)

    def axis(target: int, off: int, ref: int, periodic: bool) -> AxisWorld:
        world = _extent_world(ref if periodic else target)
        # latent i -> raw s*i + b -> image pixel (raw - off) -> world
        return AxisWorld(world.scale * s, world.scale * (b - off) + world.offset)

    px = spec.mode in ("periodic_x", "periodic_xy")
    py = spec.mode == "periodic_xy"
    geom = LatentGeometry(
        x_world=axis(out_w, off_x, spec.reference_extent[1], px),
        y_world=axis(out_h, off_y, spec.reference_extent[0], py),
        crop=(off_y, off_x, out_h, out_w),
    )
    return geom, (nh, nw)


def plan_crop(
    origin_xy: tuple[int, int],
    size_hw: tuple[int, int],
    full_extent: tuple[int, int],
    fmap: FootprintMap,
    pad: int = 1,
    uniform: bool = True,
) -> CropWindow:
    """Derive the latent rectangle backing a crop window.

    The rectangle covers the receptive footprint of every output pixel in
    the window plus ``pad`` latent pixels of noise padding per side.  With
    ``uniform`` the rectangle size depends only on the crop size, so crops
    of equal size can be batched regardless of alignment.
    """
    x, y = origin_xy
    h, w = size_hw
    scale = int(fmap.scale)

    def axis(start: int, size: int) -> tuple[int, int]:
        lat0 = start // scale - pad
        worst = (scale - 1) if uniform else (start - scale * (start // scale))
        need = worst + size + 2 * pad * scale
        for n in range(1, need + scale * 8):
            try:
                if stack_output_size(n, fmap.layers) >= need:
                    return lat0, n
            except NonPositiveOutput:
                continue
        raise ValueError(f"no latent size covers a {size}px window for this stack")

    lat_x0, lat_w = axis(x, w)
    lat_y0, lat_h = axis(y, h)
    return CropWindow(
        x=x, y=y, h=h, w=w, full_extent=full_extent,
        lat_x0=lat_x0, lat_y0=lat_y0, lat_w=lat_w, lat_h=lat_h, margin=pad,
    )


def _check_window_margin(window: CropWindow, fmap: FootprintMap) -> None:
    scale = int(fmap.scale)
    for start, size, lat0, latn in (
        (window.x, window.w, window.lat_x0, window.lat_w),
        (window.y, window.h, window.lat_y0, window.lat_h),
    ):
        lo, hi = fmap.window_latent_interval(start, start + size - 1)
        if lat0 > lo or lat0 + latn - 1 < hi:
            raise MarginTooSmall(
                f"latent window [{lat0}, {lat0 + latn - 1}] does not cover the "
                f"footprint [{lo}, {hi}] of output pixels [{start}, {start + size - 1}]"
            )
        ofs = start - scale * lat0
        if ofs < 0 or ofs + size > stack_output_size(latn, fmap.layers):
            raise MarginTooSmall(
                f"raw output of a {latn}px latent cannot cover the window "
                f"(offset {ofs}, size {size})"
            )


def _window_geometry(window: CropWindow, spec: CoordinateSpec, fmap: FootprintMap) -> LatentGeometry:
    scale = float(fmap.scale)
    off = float(fmap.offset)
    wxm = _extent_world(window.full_extent[1])
    wym = _extent_world(window.full_extent[0])
    # latent j -> image pixel scale*(j + lat0) + off -> world
    x_world = AxisWorld(wxm.scale * scale, wxm.scale * (scale * window.lat_x0 + off) + wxm.offset)
    y_world = AxisWorld(wym.scale * scale, wym.scale * (scale * window.lat_y0 + off) + wym.offset)
    crop = (
        window.y - int(scale) * window.lat_y0,
        window.x - int(scale) * window.lat_x0,
        window.h,
        window.w,
    )
    return LatentGeometry(x_world, y_world, crop, latent_origin=(window.lat_y0, window.lat_x0))


def sample_window_latent(
    spec: LatentSpec, window: CropWindow, fmap: FootprintMap, rng: np.random.Generator
) -> LatentImage:
    """Fresh latent for one crop window (no underlying field)."""
    _check_window_margin(window, fmap)
    gvals = rng.standard_normal(spec.global_channels, dtype=np.float32)
    local = rng.standard_normal(
        (spec.local_channels, window.lat_h, window.lat_w), dtype=np.float32
    )
    geom = _window_geometry(window, spec.coordinate, fmap)
    return LatentImage(spec, window.lat_h, window.lat_w, local, gvals, geom)


def crop_with_noise_padding(
    field: LatentImage, window: CropWindow, fmap: FootprintMap, rng: np.random.Generator
) -> LatentImage:
    """Cut a window latent out of a field, padding with fresh noise.

    Local values inside the field are copied bitwise; positions outside it
    (the noise padding) are sampled fresh.  Global channels extend
    constantly.  The window must carry enough margin to cover the
    footprints of all its output pixels.
    """
    if field.edited:
        raise ValueError("cannot crop an edited latent field")
    if field.geometry.latent_origin is None:
        raise ValueError("field latent has no field-frame alignment")
    _check_window_margin(window, fmap)
    spec = field.spec
    local = rng.standard_normal(
        (spec.local_channels, window.lat_h, window.lat_w), dtype=np.float32
    )
    fy0, fx0 = field.geometry.latent_origin
    # overlap in the shared field frame
    y_lo = max(window.lat_y0, fy0)
    y_hi = min(window.lat_y0 + window.lat_h, fy0 + field.height)
    x_lo = max(window.lat_x0, fx0)
    x_hi = min(window.lat_x0 + window.lat_w, fx0 + field.width)
    if y_lo < y_hi and x_lo < x_hi:
        local[:, y_lo - window.lat_y0:y_hi - window.lat_y0,
              x_lo - window.lat_x0:x_hi - window.lat_x0] = \
            field.local[:, y_lo - fy0:y_hi - fy0, x_lo - fx0:x_hi - fx0]
    geom = _window_geometry(window, spec.coordinate, fmap)
    return LatentImage(
        spec, window.lat_h, window.lat_w, local, field.global_values.copy(), geom
    )


def latent_field(
    spec: LatentSpec,
    extent: tuple[int, int],
    fmap: FootprintMap,
    rng: np.random.Generator,
) -> LatentImage:
    """A latent field covering the footprints of an entire image extent."""
    H, W = extent
    y0, y1 = fmap.window_latent_interval(0, H - 1)
    x0, x1 = fmap.window_latent_interval(0, W - 1)
    h, w = y1 - y0 + 1, x1 - x0 + 1
    gvals = rng.standard_normal(spec.global_channels, dtype=np.float32)
    local = rng.standard_normal((spec.local_channels, h, w), dtype=np.float32)
    s = float(fmap.scale)
    b = float(fmap.offset)
    wxm = _extent_world(W)
    wym = _extent_world(H)
    geom = LatentGeometry(
        x_world=AxisWorld(wxm.scale * s, wxm.scale * (s * x0 + b) + wxm.offset),
        y_world=AxisWorld(wym.scale * s, wym.scale * (s * y0 + b) + wym.offset),
        crop=None,
        latent_origin=(y0, x0),
    )
    return LatentImage(spec, h, w, local, gvals, geom)


def tile_periodic(
    latent: LatentImage, period: int, axes: Literal["x", "xy"], fmap: FootprintMap
) -> LatentImage:
    """Make the local channels repeat with a given latent-pixel period.

    The coordinate spec must be periodic along the tiled axes with a world
    period matching ``scale * period`` output pixels.
    """
    if axes not in ("x", "xy"):
        raise ValueError(f"axes must be 'x' or 'xy', got {axes!r}")
    cspec = latent.spec.coordinate
    if axes == "x" and cspec.mode not in ("periodic_x", "periodic_xy"):
        raise PeriodMismatch("x tiling needs x-periodic coordinates")
    if axes == "xy" and cspec.mode != "periodic_xy":
        raise PeriodMismatch("xy tiling needs xy-periodic coordinates")
    if period < 1:
        raise PeriodMismatch(f"period must be >= 1, got {period}")

    two_pi = 2.0 * math.pi
    turn = cspec.alpha("x") * period * latent.geometry.x_world.scale
    if abs(turn - two_pi) > 1e-9 * two_pi:
        raise PeriodMismatch(
            f"coordinate period {cspec.period}px does not match latent period "
            f"{period} under the stack scale {fmap.scale}"
        )
    if latent.width % period != 0:
        raise PeriodMismatch(
            f"period {period} does not divide the latent width {latent.width}"
        )
    if axes == "xy":
        turn_y = cspec.alpha("y") * period * latent.geometry.y_world.scale
        if abs(turn_y - two_pi) > 1e-9 * two_pi:
            raise PeriodMismatch("y coordinate period does not match the latent period")
        if latent.height % period != 0:
            raise PeriodMismatch(
                f"period {period} does not divide the latent height {latent.height}"
            )

    local = np.tile(latent.local[:, :, :period], (1, 1, latent.width // period))
    if axes == "xy":
        local = np.tile(local[:, :period, :], (1, latent.height // period, 1))
    return replace(latent, local=np.ascontiguousarray(local))


def transplant(
    dst: LatentImage,
    src: LatentImage,
    region: tuple[int, int, int, int],
    channel_set: Literal["global", "local", "both"] = "both",
) -> LatentImage:
    """Copy the selected channels of ``src`` into ``dst`` inside a latent region.

    ``region`` is (y, x, h, w) in latent indices.  Copying global channels
    over a partial region turns the result into an edited latent whose
    master plan is stored per pixel.
    """
    if channel_set not in ("global", "local", "both"):
        raise ValueError(f"bad channel_set {channel_set!r}")
    if (dst.height, dst.width) != (src.height, src.width):
        raise ValueError("transplant requires equal latent shapes")
    ry, rx, rh, rw = region
    if rh < 0 or rw < 0 or ry < 0 or rx < 0 or ry + rh > dst.height or rx + rw > dst.width:
        raise RegionOutOfBounds(f"region {region} outside {dst.height}x{dst.width}")

    local = dst.local.copy()
    if channel_set in ("local", "both") and rh > 0 and rw > 0:
        local[:, ry:ry + rh, rx:rx + rw] = src.local[:, ry:ry + rh, rx:rx + rw]

    gvals = None if dst.global_values is None else dst.global_values.copy()
    gmap = None if dst.global_map is None else dst.global_map.copy()
    if channel_set in ("global", "both") and rh > 0 and rw > 0:
        whole = rh == dst.height and rw == dst.width
        if whole and not src.edited and not dst.edited:
            gvals, gmap = src.global_values.copy(), None
        else:
            gmap = dst.global_field().copy()
            gmap[:, ry:ry + rh, rx:rx + rw] = src.global_field()[:, ry:ry + rh, rx:rx + rw]
            gvals = None
    return LatentImage(dst.spec, dst.height, dst.width, local, gvals, dst.geometry, gmap)


def interpolate_latents(
    a: LatentImage,
    b: LatentImage,
    t: float,
    size_a: tuple[int, int],
    size_b: tuple[int, int],
    fmap: FootprintMap,
    pad: int = 1,
) -> tuple[LatentImage, tuple[int, int]]:
    """Blend two latents while sliding between two output sizes.

    The target output size is the rounded linear mix of the endpoint
    sizes; both latents are bilinearly resampled to the latent size that
    backs the target, then mixed with weight ``t``.
    """
    if a.spec != b.spec:
        raise ValueError("latents must share a spec")
    th = int(round((1.0 - t) * size_a[0] + t * size_b[0]))
    tw = int(round((1.0 - t) * size_a[1] + t * size_b[1]))
    geom, (nh, nw) = geometry_for_sample(a.spec.coordinate, th, tw, fmap, pad)

    def resize(arr: np.ndarray) -> np.ndarray:
        return resample_grid(Grid(arr), nh, nw).values

    local = ((1.0 - t) * resize(a.local) + t * resize(b.local)).astype(np.float32)
    if a.edited or b.edited:
        gmap = ((1.0 - t) * resize(a.global_field()) + t * resize(b.global_field()))
        out = LatentImage(a.spec, nh, nw, local, None, geom, gmap.astype(np.float32))
    else:
        gvals = ((1.0 - t) * a.global_values + t * b.global_values).astype(np.float32)
        out = LatentImage(a.spec, nh, nw, local, gvals, geom)
    return out, (th, tw)
