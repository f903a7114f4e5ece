"""Fully convolutional GAN over noise-image latents.

The latent is itself a small image: globally constant master-plan
channels, per-pixel noise channels, and coordinate channels.  Training
only ever sees fixed-size crops padded with fresh noise, so a trained
generator decodes images of arbitrary resolution, stitches crops
seamlessly, tiles periodic textures, and supports local latent edits.
"""

from .geometry import (
    FootprintMap,
    Grid,
    LayerSpec,
    NonPositiveOutput,
    generator_output_size,
    latent_size_for_target,
    layer_output_size,
    receptive_footprint,
    resample_grid,
    stack_output_size,
)
from .latent import (
    CoordinateSpec,
    CropWindow,
    LatentImage,
    LatentSpec,
    MarginTooSmall,
    PeriodMismatch,
    RegionOutOfBounds,
    crop_with_noise_padding,
    interpolate_latents,
    latent_field,
    make_coordinate_grid,
    plan_crop,
    sample_latent,
    sample_window_latent,
    tile_periodic,
    transplant,
)
from .model import (
    ConfigMismatch,
    DegenerateMatrix,
    DiscriminatorConfig,
    GeneratedImage,
    GeneratorConfig,
    ShapeMismatch,
    build_discriminator,
    build_generator,
    discriminate,
    generate,
    spectral_normalize,
)
from .training import (
    DatasetSource,
    DomainError,
    EmptyDataset,
    TrainConfig,
    TrainState,
    discriminator_loss,
    generator_loss,
    init_train_state,
    train,
    train_step,
)
from .checkpoint import CheckpointError, load_checkpoint, load_generator, save_checkpoint
from .metrics import EmptySet, patch_statistics_distance

__version__ = "0.1.0"
