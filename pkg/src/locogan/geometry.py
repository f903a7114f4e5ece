"""Spatial arithmetic for fully convolutional stacks.

Everything here is exact integer / rational bookkeeping: output sizes of
(transposed) convolution layers, the affine maps from each layer's pixel
grid to the final output grid, receptive footprints of output pixels in
the latent, and bilinear grid resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


class NonPositiveOutput(ValueError):
    """A layer (or a stack of layers) would produce an empty output."""

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


@dataclass(frozen=True)
class LayerSpec:
    """One convolutional layer: channel plan plus spatial parameters."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")


def layer_output_size(n: int, layer: LayerSpec) -> int:
    """Spatial output size of one layer applied to an input of size ``n``."""
    if n < 1:
        raise NonPositiveOutput(f"input size must be >= 1, got {n}")
    if layer.transposed:
        out = (n - 1) * layer.stride - 2 * layer.padding + layer.kernel
    else:
        out = (n + 2 * layer.padding - layer.kernel) // layer.stride + 1
    if out < 1:
        raise NonPositiveOutput(
            f"layer (k={layer.kernel} s={layer.stride} p={layer.padding} "
            f"transposed={layer.transposed}) maps size {n} to {out}"
        )
    return out


def stack_output_size(n: int, layers: Sequence[LayerSpec]) -> int:
    """Compose layer_output_size over a stack; errors carry the 1-based layer index."""
    size = n
    for i, layer in enumerate(layers):
        try:
            size = layer_output_size(size, layer)
        except NonPositiveOutput as e:
            raise NonPositiveOutput(
                f"size became non-positive at layer {i + 1}: {e}", layer_index=i + 1
            ) from None
    return size


def generator_output_size(n: int, layers: Sequence[LayerSpec]) -> int:
    return stack_output_size(n, layers)


def min_latent_size(layers: Sequence[LayerSpec]) -> int:
    """Smallest input size for which every intermediate size is >= 1."""
    n = 1
    while True:
        try:
            stack_output_size(n, layers)
            return n
        except NonPositiveOutput:
            n += 1
            if n > 10_000:
                raise ValueError("stack admits no valid input size")


def latent_size_for_target(
    target: int, layers: Sequence[LayerSpec], pad: int = 1
) -> tuple[int, int]:
    """Latent size and centered crop offset for a requested output size.

    Returns the smallest latent ``n`` whose raw output covers ``target``
    plus ``pad`` latent pixels worth of noise padding on each side, and
    the offset of the centered target window inside the raw output.
    ``pad=1`` reproduces the stock pairing of a 10px latent with a 64px
    output for the default generator stack.
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    fmap = FootprintMap.build(layers)
    scale = fmap.scale
    if scale.denominator != 1:
        raise ValueError("latent sizing requires an integer output/latent scale")
    needed = target + 2 * pad * int(scale)
    n = min_latent_size(layers)
    while stack_output_size(n, layers) < needed:
        n += 1
    raw = stack_output_size(n, layers)
    return n, (raw - target) // 2


@dataclass(frozen=True)
class AffineMap:
    """Exact affine map x -> scale*x + offset between pixel frames."""

    scale: Fraction
    offset: Fraction

    def __call__(self, x: Fraction | int | float) -> Fraction:
        return self.scale * Fraction(x) + self.offset

    def compose(self, inner: "AffineMap") -> "AffineMap":
        # self(inner(x))
        return AffineMap(self.scale * inner.scale, self.scale * inner.offset + self.offset)

    def inverse(self, y: Fraction | int | float) -> Fraction:
        return (Fraction(y) - self.offset) / self.scale


def _layer_center_map(layer: LayerSpec) -> AffineMap:
    half = Fraction(layer.kernel - 1, 2)
    if layer.transposed:
        # input pixel i spreads over output [s*i - p, s*i - p + k - 1]
        return AffineMap(Fraction(layer.stride), half - layer.padding)
    # output pixel j reads input [s*j - p, s*j - p + k - 1]
    return AffineMap(Fraction(1, layer.stride), (Fraction(layer.padding) - half) / layer.stride)


def _backward_interval(layer: LayerSpec, lo: int, hi: int) -> tuple[int, int]:
    """Input-index interval feeding output pixels [lo, hi] (unclipped)."""
    k, s, p = layer.kernel, layer.stride, layer.padding
    if layer.transposed:
        new_lo = math.ceil((lo + p - k + 1) / s)
        new_hi = math.floor((hi + p) / s)
    else:
        new_lo = s * lo - p
        new_hi = s * hi - p + k - 1
    return new_lo, new_hi


def _forward_interval(layer: LayerSpec, lo: int, hi: int) -> tuple[int, int]:
    """Output-index interval influenced by input pixels [lo, hi] (unclipped)."""
    k, s, p = layer.kernel, layer.stride, layer.padding
    if layer.transposed:
        return s * lo - p, s * hi - p + k - 1
    return math.ceil((lo + p - k + 1) / s), math.floor((hi + p) / s)


@dataclass(frozen=True)
class FootprintMap:
    """Receptive-field geometry of a layer stack.

    ``layer_maps[l]`` sends a pixel index at the input of layer ``l`` to the
    coordinate of its footprint center in the final output frame.  ``scale``
    and ``offset`` are the end-to-end (latent -> output) map.  ``margin`` is
    the smallest whole number of latent pixels such that an output pixel
    farther than ``scale * margin`` from a latent pixel's output-frame
    center cannot be influenced by that latent pixel.
    """

    layers: tuple[LayerSpec, ...]
    layer_maps: tuple[AffineMap, ...]
    margin: int

    @property
    def scale(self) -> Fraction:
        return self.layer_maps[0].scale

    @property
    def offset(self) -> Fraction:
        return self.layer_maps[0].offset

    @staticmethod
    def build(layers: Sequence[LayerSpec]) -> "FootprintMap":
        if not layers:
            raise ValueError("empty layer stack")
        layers = tuple(layers)
        maps: list[AffineMap] = []
        tail = AffineMap(Fraction(1), Fraction(0))
        for layer in reversed(layers):
            tail = tail.compose(_layer_center_map(layer))
            maps.append(tail)
        maps.reverse()
        full = maps[0]
        lo, hi = 0, 0
        for layer in layers:
            lo, hi = _forward_interval(layer, lo, hi)
        # forward footprint of latent pixel 0 is [lo, hi]; its center is full(0)
        half = max(full(0) - lo, hi - full(0))
        margin = math.ceil(half / full.scale)
        return FootprintMap(layers, tuple(maps), margin)

    def latent_interval(self, out_index: int) -> tuple[int, int]:
        """Closed interval of latent indices influencing one output pixel."""
        lo = hi = out_index
        for layer in reversed(self.layers):
            lo, hi = _backward_interval(layer, lo, hi)
        return lo, hi

    def output_interval(self, latent_index: int) -> tuple[int, int]:
        """Closed interval of output pixels influenced by one latent pixel (unclipped)."""
        lo = hi = latent_index
        for layer in self.layers:
            lo, hi = _forward_interval(layer, lo, hi)
        return lo, hi

    def window_latent_interval(self, out_lo: int, out_hi: int) -> tuple[int, int]:
        """Latent interval covering the footprints of output pixels [out_lo, out_hi]."""
        a = self.latent_interval(out_lo)[0]
        b = self.latent_interval(out_hi)[1]
        return a, b

    def layer_latent_positions(self, layer_index: int, size: int) -> np.ndarray:
        """Positions of layer ``layer_index`` input pixels in latent units.

        Index 0 is the latent itself (identity).  Positions are fractional
        latent coordinates, exact up to float64.
        """
        m = self.layer_maps[layer_index]
        first = self.layer_maps[0]
        scale = float(m.scale / first.scale)
        offset = float((m.offset - first.offset) / first.scale)
        return scale * np.arange(size, dtype=np.float64) + offset

    def layer_sizes(self, latent: int) -> list[int]:
        """Input spatial size of every layer for a given latent size."""
        sizes = [latent]
        for layer in self.layers[:-1]:
            sizes.append(layer_output_size(sizes[-1], layer))
        return sizes

    def meta(self) -> dict:
        return {
            "scale": str(self.scale),
            "offset": str(self.offset),
            "margin": self.margin,
            "layer_maps": [[str(m.scale), str(m.offset)] for m in self.layer_maps],
        }


def receptive_footprint(layers: Sequence[LayerSpec]) -> FootprintMap:
    """Receptive-field geometry of a stack; see FootprintMap."""
    return FootprintMap.build(layers)


@dataclass
class Grid:
    """A channels-first spatial array of real values."""

    values: np.ndarray  # (channels, height, width)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"grid values must be (c, h, w), got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def _axis_positions(src: int, dst: int) -> np.ndarray:
    if dst == 1:
        return np.array([(src - 1) / 2.0])
    return np.arange(dst, dtype=np.float64) * ((src - 1) / (dst - 1))


def _interp_axis(values: np.ndarray, positions: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation of ``values`` at fractional ``positions`` along ``axis``."""
    n = values.shape[axis]
    pos = np.clip(positions, 0.0, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    vlo = np.take(values, lo, axis=axis)
    vhi = np.take(values, hi, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = len(positions)
    w = frac.reshape(shape)
    return vlo * (1.0 - w) + vhi * w


def resample_grid(grid: Grid, target_h: int, target_w: int) -> Grid:
    """Bilinear resampling with pixel-center (endpoint) alignment."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be >= 1x1")
    if target_h == grid.height and target_w == grid.width:
        return Grid(grid.values.copy())
    vals = grid.values.astype(np.float64, copy=False)
    vals = _interp_axis(vals, _axis_positions(grid.height, target_h), axis=1)
    vals = _interp_axis(vals, _axis_positions(grid.width, target_w), axis=2)
    return Grid(vals.astype(grid.values.dtype, copy=False))
