"""Crop-local adversarial training.

Real crops and fake crops share their window positions each step, so the
discriminator always compares like coordinates with like.  Every random
draw comes from one seeded generator whose state is checkpointed, which
makes the whole trajectory a pure function of (config, dataset, seed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
import torch
from PIL import Image

from .geometry import FootprintMap
from .latent import (
    CropWindow,
    LatentSpec,
    make_coordinate_grid,
    plan_crop,
    sample_window_latent,
)
from .model import (
    DiscriminatorConfig,
    DiscriminatorNet,
    GeneratorConfig,
    GeneratorNet,
    build_discriminator,
    build_generator,
    generator_forward,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
PROB_EPS = 1e-6  # sigmoid outputs are clamped into (0, 1) before the log losses


class EmptyDataset(ValueError):
    pass


class CropLargerThanImage(ValueError):
    pass


class DomainError(ValueError):
    """Loss argument outside the open interval (0, 1)."""


def load_image(path: str | Path) -> np.ndarray:
    """Read an RGB image as (3, h, w) float32 scaled to [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


def _rescale_shorter_edge(path: Path, edge: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        if min(w, h) != edge:
            if w <= h:
                nw, nh = edge, max(1, round(h * edge / w))
            else:
                nh, nw = edge, max(1, round(w * edge / h))
            im = im.resize((nw, nh), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


@dataclass
class DatasetSource:
    """Folder of images (shorter edge rescaled) or a single pattern image."""

    mode: str  # "folder" | "pattern"
    path: str
    crop: tuple[int, int] = (64, 64)  # (h, w)
    shorter_edge: int = 128

    def __post_init__(self):
        if self.mode not in ("folder", "pattern"):
            raise ValueError(f"unknown dataset mode {self.mode!r}")
        if self.crop[0] < 1 or self.crop[1] < 1:
            raise ValueError("crop size must be >= 1x1")
        self._images: list[np.ndarray] | None = None

    def images(self) -> list[np.ndarray]:
        if self._images is None:
            p = Path(self.path)
            if self.mode == "pattern":
                if not p.is_file():
                    raise EmptyDataset(f"pattern image not found: {p}")
                self._images = [load_image(p)]
            else:
                if not p.is_dir():
                    raise EmptyDataset(f"dataset folder not found: {p}")
                files = sorted(
                    f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES
                )
                if not files:
                    raise EmptyDataset(f"no images under {p}")
                self._images = [_rescale_shorter_edge(f, self.shorter_edge) for f in files]
            ch, cw = self.crop
            for i, img in enumerate(self._images):
                if img.shape[1] < ch or img.shape[2] < cw:
                    raise CropLargerThanImage(
                        f"image {i} is {img.shape[1]}x{img.shape[2]}, crop is {ch}x{cw}"
                    )
        return self._images

    def sample_real_crop(
        self,
        rng: np.random.Generator,
        fmap: FootprintMap,
        pad: int = 1,
    ) -> tuple[np.ndarray, CropWindow]:
        """A uniformly placed crop plus the window that locates it."""
        images = self.images()
        idx = int(rng.integers(len(images))) if self.mode == "folder" else 0
        img = images[idx]
        ch, cw = self.crop
        H, W = img.shape[1], img.shape[2]
        x = int(rng.integers(W - cw + 1))
        y = int(rng.integers(H - ch + 1))
        window = plan_crop((x, y), (ch, cw), (H, W), fmap, pad=pad)
        return img[:, y:y + ch, x:x + cw], window


def _as_prob_tensor(values) -> torch.Tensor:
    t = values if isinstance(values, torch.Tensor) else torch.as_tensor(np.asarray(values, dtype=np.float64))
    if torch.any(t <= 0) or torch.any(t >= 1):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    return t


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """-(log d_real + log(1 - d_fake)), averaged over the batch."""
    real = _as_prob_tensor(d_real)
    fake = _as_prob_tensor(d_fake)
    return -(torch.log(real).mean() + torch.log1p(-fake).mean())


def generator_loss(d_fake) -> torch.Tensor:
    """Non-saturating form: -log d_fake, averaged over the batch."""
    fake = _as_prob_tensor(d_fake)
    return -torch.log(fake).mean()


@dataclass
class TrainConfig:
    latent_spec: LatentSpec
    g_config: GeneratorConfig
    d_config: DiscriminatorConfig
    batch_size: int = 16
    total_steps: int = 1000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 200
    latent_pad: int = 1
    threads: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch size must be >= 1 and steps >= 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class TrainState:
    cfg: TrainConfig
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    fmap: FootprintMap
    step: int = 0
    last_metrics: dict = field(default_factory=dict)


def init_train_state(cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    gen = build_generator(cfg.g_config, cfg.latent_spec, rng)
    dis = build_discriminator(cfg.d_config, rng)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(dis.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))
    fmap = FootprintMap.build(cfg.g_config.layers)
    return TrainState(cfg, gen, dis, opt_g, opt_d, rng, fmap)


def train_step(state: TrainState, src: DatasetSource) -> dict:
    """One discriminator update and one generator update on shared windows."""
    cfg = state.cfg
    ch, cw = src.crop
    reals, windows = [], []
    for _ in range(cfg.batch_size):
        crop, window = src.sample_real_crop(state.rng, state.fmap, cfg.latent_pad)
        reals.append(crop)
        windows.append(window)
    latents = [
        sample_window_latent(cfg.latent_spec, win, state.fmap, state.rng)
        for win in windows
    ]
    coords_np = np.stack(
        [
            make_coordinate_grid(cfg.latent_spec.coordinate, win, ch, cw).values
            for win in windows
        ]
    )
    coords = torch.from_numpy(coords_np).to(torch.float32)
    real_t = torch.from_numpy(np.stack(reals))

    fake = generator_forward(state.generator, latents, state.fmap, mode="train")

    # discriminator update; one combined forward advances each u vector once
    state.discriminator.train()
    logits = state.discriminator(
        torch.cat([real_t, fake.detach()]), torch.cat([coords, coords]), update_u=True
    )
    probs = torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)
    d_real_p, d_fake_p = probs[: cfg.batch_size], probs[cfg.batch_size:]
    d_loss = discriminator_loss(d_real_p, d_fake_p)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    # generator update against the refreshed discriminator
    logits_f = state.discriminator(fake, coords, update_u=False)
    fake_p = torch.sigmoid(logits_f).clamp(PROB_EPS, 1.0 - PROB_EPS)
    g_loss = generator_loss(fake_p)
    state.opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    state.opt_g.step()

    state.step += 1
    state.last_metrics = {
        "step": state.step,
        "d_loss": float(d_loss.detach()),
        "g_loss": float(g_loss.detach()),
        "d_real": float(d_real_p.mean().detach()),
        "d_fake": float(d_fake_p.mean().detach()),
    }
    return state.last_metrics


def train(
    cfg: TrainConfig,
    src: DatasetSource,
    out_dir: str | Path,
    resume: TrainState | None = None,
    log_name: str = "metrics.log",
) -> tuple[TrainState, list[Path]]:
    """Run the loop, checkpointing at the configured cadence.

    Always writes the step-0 (or resume-point) checkpoint and the final
    one; a seeded run resumed from any emitted checkpoint continues
    bit-exactly.
    """
    from .checkpoint import save_checkpoint  # cycle: checkpoint serializes TrainState

    if cfg.threads > 0:
        torch.set_num_threads(cfg.threads)
    env_threads = os.environ.get("LOCOGAN_THREADS")
    if env_threads:
        torch.set_num_threads(min(torch.get_num_threads(), int(env_threads)))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = resume if resume is not None else init_train_state(cfg)
    state.cfg = cfg
    src.images()  # fail early, before any file is written

    written: list[Path] = []

    def emit(tag: int) -> Path:
        path = out / f"ckpt-{tag:06d}.bin"
        save_checkpoint(path, state)
        written.append(path)
        return path

    emit(state.step)
    log_path = out / log_name
    with open(log_path, "a") as log:
        while state.step < cfg.total_steps:
            rec = train_step(state, src)
            log.write(
                f"{rec['step']} {rec['d_loss']:.6f} {rec['g_loss']:.6f} "
                f"{rec['d_real']:.6f} {rec['d_fake']:.6f}\n"
            )
            log.flush()
            if cfg.checkpoint_every > 0 and state.step % cfg.checkpoint_every == 0:
                emit(state.step)
    if not written or written[-1].name != f"ckpt-{state.step:06d}.bin":
        emit(state.step)
    return state, written
