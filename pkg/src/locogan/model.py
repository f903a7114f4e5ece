"""Generator and discriminator networks.

The generator is a stack of transposed convolutions; coordinate channels
are appended to the feature map in front of every layer, resized to that
layer's grid via the footprint maps so a latent shift moves the output by
exactly the stack's stride product.  The discriminator is a plain strided
convolution stack with spectral normalization on its early layers and
coordinate channels appended to its input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import FootprintMap, Grid, LayerSpec
from .latent import LatentImage, LatentSpec

INIT_STD = 0.02
LEAKY_SLOPE = 0.2


class ConfigMismatch(ValueError):
    """Network configuration is internally inconsistent."""


class ShapeMismatch(ValueError):
    """Input tensors do not fit the network's expected shapes."""


class DegenerateMatrix(ValueError):
    """Spectral normalization of an all-zero matrix."""


@dataclass(frozen=True)
class GeneratorConfig:
    layers: tuple[LayerSpec, ...]
    coord_channels: int

    @staticmethod
    def build(
        latent_spec: LatentSpec, widths: Sequence[int] = (1024, 512, 256, 128)
    ) -> "GeneratorConfig":
        """Transposed stack (4,2,3) x N then (4,1,3), coordinates at every layer."""
        cc = latent_spec.coordinate.channels
        chans = [latent_spec.value_channels] + list(widths) + [3]
        layers = []
        for i in range(len(chans) - 1):
            last = i == len(chans) - 2
            layers.append(
                LayerSpec(
                    in_channels=chans[i] + cc,
                    out_channels=chans[i + 1],
                    kernel=4,
                    stride=1 if last else 2,
                    padding=3,
                    transposed=True,
                )
            )
        return GeneratorConfig(tuple(layers), cc)


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: tuple[LayerSpec, ...]
    coord_channels: int
    spectral: tuple[bool, ...]
    leaky_slope: float = LEAKY_SLOPE

    @staticmethod
    def build(
        coord_channels: int,
        widths: Sequence[int] = (64, 128, 256, 512),
        spectral_norm: bool = True,
    ) -> "DiscriminatorConfig":
        """Strided stack (4,2,1) x N then (4,1,0) mapping 64px to a scalar."""
        chans = [3 + coord_channels] + list(widths) + [1]
        layers = []
        for i in range(len(chans) - 1):
            last = i == len(chans) - 2
            layers.append(
                LayerSpec(
                    in_channels=chans[i],
                    out_channels=chans[i + 1],
                    kernel=4,
                    stride=1 if last else 2,
                    padding=0 if last else 1,
                )
            )
        spectral = tuple(spectral_norm and not i == len(layers) - 1 for i in range(len(layers)))
        return DiscriminatorConfig(tuple(layers), coord_channels, spectral)


@dataclass
class GeneratedImage:
    """A decoded image: 3 channels, values saturating in [-1, 1]."""

    values: np.ndarray  # (3, h, w) float32

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def spectral_normalize(
    weight: torch.Tensor, u: torch.Tensor, iterations: int = 1
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Divide a 2-D weight by its leading singular value via power iteration.

    Alternates v ~ W^T u, u ~ W v; the estimate is sigma = u^T W v.  The
    returned u feeds the next call, so one iteration per training step
    tracks the singular vector as the weight drifts.
    """
    if weight.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D weight, got shape {tuple(weight.shape)}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not torch.any(weight != 0):
        raise DegenerateMatrix("cannot spectrally normalize an all-zero matrix")
    u = F.normalize(u.to(weight.dtype), dim=0)
    for _ in range(iterations):
        v = F.normalize(weight.t() @ u, dim=0)
        u = F.normalize(weight @ v, dim=0)
    sigma = u @ weight @ v
    return weight / sigma, u, sigma


class SpectralConv2d(nn.Module):
    """Conv2d whose weight is divided by a power-iteration estimate of its
    spectral norm.  The estimate treats the singular vectors as constants,
    so gradients flow through the raw weight only."""

    def __init__(self, in_channels, out_channels, kernel, stride, padding):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.register_buffer("u", torch.zeros(out_channels))

    def forward(self, x: torch.Tensor, update_u: bool = True) -> torch.Tensor:
        w2 = self.weight.view(self.weight.shape[0], -1)
        with torch.no_grad():
            v = F.normalize(w2.t() @ self.u, dim=0, eps=1e-12)
            if update_u and self.training:
                self.u.copy_(F.normalize(w2 @ v, dim=0, eps=1e-12))
        # u and v are constants here; the gradient flows through w2 only
        sigma = torch.dot(self.u, torch.mv(w2, v))
        weight = self.weight / sigma
        return F.conv2d(x, weight, self.bias, stride=self.stride, padding=self.padding)


class GeneratorNet(nn.Module):
    def __init__(self, cfg: GeneratorConfig, latent_spec: LatentSpec):
        super().__init__()
        _validate_generator(cfg, latent_spec)
        self.cfg = cfg
        self.latent_spec = latent_spec
        self.convs = nn.ModuleList(
            nn.ConvTranspose2d(
                l.in_channels, l.out_channels, l.kernel, l.stride, l.padding, bias=False
            )
            for l in cfg.layers
        )
        self.norms = nn.ModuleList(
            nn.BatchNorm2d(l.out_channels, momentum=0.1) for l in cfg.layers[:-1]
        )

    def forward(self, values: torch.Tensor, coord_grids: Sequence[torch.Tensor]) -> torch.Tensor:
        x = values
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            x = torch.cat([x, coord_grids[i]], dim=1)
            x = conv(x)
            if i < last:
                x = F.relu(self.norms[i](x))
            else:
                x = torch.tanh(x)
        return x


class DiscriminatorNet(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        _validate_discriminator(cfg)
        self.cfg = cfg
        convs = []
        for spec, sn in zip(cfg.layers, cfg.spectral):
            if sn:
                convs.append(
                    SpectralConv2d(spec.in_channels, spec.out_channels, spec.kernel,
                                   spec.stride, spec.padding)
                )
            else:
                convs.append(
                    nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel,
                              spec.stride, spec.padding, bias=True)
                )
        self.convs = nn.ModuleList(convs)

    def forward(self, images: torch.Tensor, coords: torch.Tensor,
                update_u: bool = True) -> torch.Tensor:
        """Returns pre-sigmoid logit maps of shape (batch, 1, h', w')."""
        if images.ndim != 4 or coords.ndim != 4:
            raise ShapeMismatch("images and coords must be (b, c, h, w)")
        if images.shape[0] != coords.shape[0] or images.shape[2:] != coords.shape[2:]:
            raise ShapeMismatch(
                f"images {tuple(images.shape)} and coords {tuple(coords.shape)} disagree"
            )
        if images.shape[1] + coords.shape[1] != self.cfg.layers[0].in_channels:
            raise ShapeMismatch(
                f"expected {self.cfg.layers[0].in_channels} input channels, got "
                f"{images.shape[1]} + {coords.shape[1]}"
            )
        x = torch.cat([images, coords], dim=1)
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            x = conv(x, update_u=update_u) if isinstance(conv, SpectralConv2d) else conv(x)
            if i < last:
                x = F.leaky_relu(x, self.cfg.leaky_slope)
        return x


def _validate_generator(cfg: GeneratorConfig, spec: LatentSpec) -> None:
    if not cfg.layers:
        raise ConfigMismatch("generator needs at least one layer")
    if cfg.coord_channels != spec.coordinate.channels:
        raise ConfigMismatch(
            f"config injects {cfg.coord_channels} coordinate channels but the "
            f"latent spec provides {spec.coordinate.channels}"
        )
    if not all(l.transposed for l in cfg.layers):
        raise ConfigMismatch("generator layers must be transposed convolutions")
    expect = spec.value_channels + cfg.coord_channels
    for i, l in enumerate(cfg.layers):
        if l.in_channels != expect:
            raise ConfigMismatch(
                f"layer {i + 1} expects {l.in_channels} input channels, "
                f"channel plan provides {expect}"
            )
        expect = l.out_channels + cfg.coord_channels
    if cfg.layers[-1].out_channels != 3:
        raise ConfigMismatch("final generator layer must emit 3 color channels")


def _validate_discriminator(cfg: DiscriminatorConfig) -> None:
    if not cfg.layers:
        raise ConfigMismatch("discriminator needs at least one layer")
    if len(cfg.spectral) != len(cfg.layers):
        raise ConfigMismatch("spectral flags must match the layer count")
    if any(l.transposed for l in cfg.layers):
        raise ConfigMismatch("discriminator layers must be plain convolutions")
    if cfg.layers[0].in_channels != 3 + cfg.coord_channels:
        raise ConfigMismatch(
            f"first layer must take 3 + {cfg.coord_channels} channels, "
            f"got {cfg.layers[0].in_channels}"
        )
    for prev, nxt in zip(cfg.layers, cfg.layers[1:]):
        if nxt.in_channels != prev.out_channels:
            raise ConfigMismatch("discriminator channel plan is not chained")
    if cfg.layers[-1].out_channels != 1:
        raise ConfigMismatch("final discriminator layer must emit one channel")


def _init_conv_weights(net: nn.Module, rng: np.random.Generator) -> None:
    """Kernel entries from N(0, 0.02); biases zero; unit-norm power vectors."""
    for module in net.modules():
        if isinstance(module, (nn.ConvTranspose2d, nn.Conv2d, SpectralConv2d)):
            w = rng.standard_normal(tuple(module.weight.shape), dtype=np.float32) * INIT_STD
            with torch.no_grad():
                module.weight.copy_(torch.from_numpy(w))
                if getattr(module, "bias", None) is not None:
                    module.bias.zero_()
        if isinstance(module, SpectralConv2d):
            u = rng.standard_normal(tuple(module.u.shape), dtype=np.float32)
            u /= np.linalg.norm(u)
            with torch.no_grad():
                module.u.copy_(torch.from_numpy(u))


def build_generator(
    cfg: GeneratorConfig,
    spec: LatentSpec,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float32,
) -> GeneratorNet:
    net = GeneratorNet(cfg, spec)
    _init_conv_weights(net, rng)
    return net.to(dtype)


def build_discriminator(
    cfg: DiscriminatorConfig,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float32,
) -> DiscriminatorNet:
    net = DiscriminatorNet(cfg)
    _init_conv_weights(net, rng)
    return net.to(dtype)


def layer_coordinate_grids(
    latents: Sequence[LatentImage], fmap: FootprintMap, dtype: torch.dtype = torch.float32
) -> list[torch.Tensor]:
    """Per-layer coordinate tensors for a batch of same-shaped latents.

    Layer ``l`` receives the coordinate channels evaluated at the world
    positions of its pixels' output-footprint centers, which is the
    latent grid resampled along the footprint maps.
    """
    h, w = latents[0].height, latents[0].width
    if any((lat.height, lat.width) != (h, w) for lat in latents):
        raise ShapeMismatch("batched latents must share a spatial size")
    sizes_h = fmap.layer_sizes(h)
    sizes_w = fmap.layer_sizes(w)
    grids = []
    for l in range(len(fmap.layers)):
        xs = fmap.layer_latent_positions(l, sizes_w[l])
        ys = fmap.layer_latent_positions(l, sizes_h[l])
        per = [lat.coordinate_grid_at(xs, ys).values for lat in latents]
        grids.append(torch.from_numpy(np.stack(per)).to(dtype))
    return grids


def generator_forward(
    net: GeneratorNet,
    latents: Sequence[LatentImage],
    fmap: FootprintMap,
    mode: Literal["train", "eval"] = "eval",
) -> torch.Tensor:
    """Run a batch of latents through the generator; differentiable.

    Returns the raw outputs cropped to each latent's crop region, which
    must agree in size across the batch.
    """
    if not latents:
        raise ShapeMismatch("empty latent batch")
    dtype = next(net.parameters()).dtype
    net.train(mode == "train")
    values = torch.from_numpy(np.stack([lat.value_channels() for lat in latents])).to(dtype)
    grids = layer_coordinate_grids(latents, fmap, dtype)
    raw = net(values, grids)
    crops = []
    size = None
    for b, lat in enumerate(latents):
        y0, x0, h, w = lat.geometry.crop or (0, 0, raw.shape[2], raw.shape[3])
        if y0 < 0 or x0 < 0 or y0 + h > raw.shape[2] or x0 + w > raw.shape[3]:
            raise ShapeMismatch(
                f"crop {(y0, x0, h, w)} outside raw output {tuple(raw.shape[2:])}"
            )
        if size is None:
            size = (h, w)
        elif size != (h, w):
            raise ShapeMismatch("batched latents must share a crop size")
        crops.append(raw[b, :, y0:y0 + h, x0:x0 + w])
    return torch.stack(crops)


def generate(
    net: GeneratorNet,
    latent: LatentImage,
    mode: Literal["train", "eval"] = "eval",
) -> GeneratedImage:
    """Decode one latent into an image (values in [-1, 1])."""
    fmap = FootprintMap.build(net.cfg.layers)
    with torch.no_grad():
        out = generator_forward(net, [latent], fmap, mode)
    return GeneratedImage(out[0].to(torch.float32).numpy())


def discriminate(
    net: DiscriminatorNet,
    images: torch.Tensor | np.ndarray,
    coords: torch.Tensor | np.ndarray | Grid,
) -> np.ndarray:
    """Probability that each image (with its coordinates) is real.

    Accepts a single (3, h, w) image or a (b, 3, h, w) batch; returns one
    scalar per example (spatial logit maps are averaged after sigmoid).
    """
    if isinstance(coords, Grid):
        coords = coords.values
    img_t = torch.as_tensor(np.asarray(images))
    crd_t = torch.as_tensor(np.asarray(coords))
    single = img_t.ndim == 3
    if single:
        img_t = img_t[None]
        crd_t = crd_t[None]
    dtype = next(net.parameters()).dtype
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            logits = net(img_t.to(dtype), crd_t.to(dtype), update_u=False)
            probs = torch.sigmoid(logits).mean(dim=(1, 2, 3))
    finally:
        net.train(was_training)
    out = probs.to(torch.float32).numpy()
    return out[0] if single else out
