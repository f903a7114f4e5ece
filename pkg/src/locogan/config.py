"""Plain-text key=value run configuration.

Every knob of the training setup has a documented default; the stock
defaults reproduce the standard setup (16 master-plan channels, 2 local
channels, linear coordinates over a 128x128 frame, 64x64 crops).
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .latent import CoordinateSpec, LatentSpec
from .model import DiscriminatorConfig, GeneratorConfig
from .training import DatasetSource, TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_widths(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


@dataclass
class RunConfig:
    # dataset
    data_path: str = ""                  # folder of images, or one pattern image
    data_mode: str = "folder"            # folder | pattern
    crop_h: int = 64                     # training crop height
    crop_w: int = 64                     # training crop width
    shorter_edge: int = 128              # folder mode: rescale shorter edge to this
    # latent
    global_channels: int = 16
    local_channels: int = 2
    coord_mode: str = "linear"           # linear | periodic_x | periodic_xy
    reference_h: int = 128               # extent scaled to [-1, 1]
    reference_w: int = 128
    period: int = 64                     # periodic modes: repeat length in pixels
    # networks
    g_widths: tuple[int, ...] = (1024, 512, 256, 128)
    d_widths: tuple[int, ...] = (64, 128, 256, 512)
    spectral_norm: bool = True
    # optimization
    batch_size: int = 16
    steps: int = 1000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 200
    latent_pad: int = 1                  # noise-padding margin in latent pixels
    threads: int = 0                     # 0 = leave the torch default

    def coordinate_spec(self, source_extent: tuple[int, int] | None = None) -> CoordinateSpec:
        """Pattern-mode periodic training anchors the frame to the source image."""
        extent = (self.reference_h, self.reference_w)
        if source_extent is not None and self.coord_mode != "linear":
            extent = source_extent
        period = self.period if self.coord_mode != "linear" else None
        return CoordinateSpec(self.coord_mode, extent, period)

    def latent_spec(self, source_extent: tuple[int, int] | None = None) -> LatentSpec:
        return LatentSpec(
            self.global_channels, self.local_channels, self.coordinate_spec(source_extent)
        )

    def dataset_source(self) -> DatasetSource:
        if not self.data_path:
            raise ConfigError("data_path: no dataset path configured")
        return DatasetSource(
            self.data_mode, self.data_path, (self.crop_h, self.crop_w), self.shorter_edge
        )

    def train_config(self, source_extent: tuple[int, int] | None = None) -> TrainConfig:
        spec = self.latent_spec(source_extent)
        gcfg = GeneratorConfig.build(spec, self.g_widths)
        dcfg = DiscriminatorConfig.build(
            spec.coordinate.channels, self.d_widths, self.spectral_norm
        )
        return TrainConfig(
            latent_spec=spec,
            g_config=gcfg,
            d_config=dcfg,
            batch_size=self.batch_size,
            total_steps=self.steps,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            beta1=self.beta1,
            beta2=self.beta2,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            latent_pad=self.latent_pad,
            threads=self.threads,
        )


_PARSERS = {
    "data_path": str,
    "data_mode": str,
    "crop_h": int,
    "crop_w": int,
    "shorter_edge": int,
    "global_channels": int,
    "local_channels": int,
    "coord_mode": str,
    "reference_h": int,
    "reference_w": int,
    "period": int,
    "g_widths": _parse_widths,
    "d_widths": _parse_widths,
    "spectral_norm": _parse_bool,
    "batch_size": int,
    "steps": int,
    "lr_g": float,
    "lr_d": float,
    "beta1": float,
    "beta2": float,
    "seed": int,
    "checkpoint_every": int,
    "latent_pad": int,
    "threads": int,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value.strip()))
        except ValueError as e:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key!r}: {e}") from None
    if cfg.data_mode not in ("folder", "pattern"):
        raise ConfigError(f"{origin}: data_mode must be folder or pattern")
    if cfg.coord_mode not in ("linear", "periodic_x", "periodic_xy"):
        raise ConfigError(f"{origin}: coord_mode must be linear, periodic_x or periodic_xy")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    return parse_config_text(text, origin=str(p))
