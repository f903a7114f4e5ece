"""Patch-statistics distance: a desk-scale training progress metric.

Sliced one-dimensional transport: flatten each patch, project both patch
sets onto shared random unit directions, sort, and average the absolute
differences of the order statistics over all projections.  Deterministic
given the projection seed; a pseudometric on equal-size patch multisets.
"""

from __future__ import annotations

import numpy as np

from .geometry import FootprintMap
from .latent import LatentSpec, sample_window_latent
from .model import GeneratorNet, generator_forward
from .training import DatasetSource


class EmptySet(ValueError):
    pass


def patch_statistics_distance(
    real: np.ndarray,
    generated: np.ndarray,
    projections: int = 64,
    seed: int = 0,
) -> float:
    """Distance between two equally sized multisets of patches.

    Inputs are (n, ...) arrays of patches with matching trailing shapes.
    """
    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if real.size == 0 or generated.size == 0:
        raise EmptySet("both patch sets must be non-empty")
    x = real.reshape(real.shape[0], -1)
    y = generated.reshape(generated.shape[0], -1)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"patch sizes differ: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] != y.shape[0]:
        raise ValueError(
            f"order statistics need equal counts, got {x.shape[0]} vs {y.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((projections, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = np.sort(x @ dirs.T, axis=0)
    py = np.sort(y @ dirs.T, axis=0)
    return float(np.abs(px - py).mean())


def real_crop_set(
    src: DatasetSource, n: int, fmap: FootprintMap, rng: np.random.Generator, pad: int = 0
) -> np.ndarray:
    crops = [src.sample_real_crop(rng, fmap, pad)[0] for _ in range(n)]
    return np.stack(crops)


def generated_crop_set(
    net: GeneratorNet,
    spec: LatentSpec,
    src: DatasetSource,
    n: int,
    fmap: FootprintMap,
    rng: np.random.Generator,
    pad: int = 0,
    batch: int = 16,
) -> np.ndarray:
    """Crops decoded at freshly sampled windows of the dataset's frames."""
    import torch

    out = []
    remaining = n
    while remaining > 0:
        k = min(batch, remaining)
        windows = [src.sample_real_crop(rng, fmap, pad)[1] for _ in range(k)]
        latents = [sample_window_latent(spec, w, fmap, rng) for w in windows]
        with torch.no_grad():
            fake = generator_forward(net, latents, fmap, mode="eval")
        out.append(fake.to(torch.float32).numpy())
        remaining -= k
    return np.concatenate(out)
