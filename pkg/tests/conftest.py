import numpy as np
import pytest
from PIL import Image

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from locogan.geometry import FootprintMap
from locogan.latent import CoordinateSpec, LatentSpec
from locogan.model import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)


def narrow_spec(coord_mode="linear", period=None, reference=(128, 128)):
    return LatentSpec(4, 2, CoordinateSpec(coord_mode, reference, period))


def narrow_generator(spec=None, widths=(16, 16, 8, 8), seed=0):
    spec = spec or narrow_spec()
    cfg = GeneratorConfig.build(spec, widths=widths)
    return build_generator(cfg, spec, np.random.default_rng(seed))


def narrow_discriminator(coord_channels=2, widths=(8, 16, 16, 16), seed=1, spectral=True):
    cfg = DiscriminatorConfig.build(coord_channels, widths=widths, spectral_norm=spectral)
    return build_discriminator(cfg, np.random.default_rng(seed))


def write_texture(path, size=256, period=32, seed=42):
    """Colored stripes with additive noise; x-periodic with the given period."""
    rng = np.random.default_rng(seed)
    x = np.arange(size)
    ph = 2 * np.pi * x / period
    chans = [0.7 * np.sign(np.sin(ph)), 0.7 * np.sign(np.sin(ph + np.pi / 2)), 0.5 * np.sin(ph)]
    img = np.stack([np.tile(c, (size, 1)) for c in chans])
    img = np.clip(img + rng.uniform(-0.1, 0.1, img.shape), -1, 1)
    arr = ((img.transpose(1, 2, 0) + 1) * 127.5).round().clip(0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return path


@pytest.fixture(scope="session")
def default_layers():
    from locogan.latent import LatentSpec as LS
    return GeneratorConfig.build(LS()).layers


@pytest.fixture(scope="session")
def default_fmap(default_layers):
    return FootprintMap.build(default_layers)


@pytest.fixture(scope="session")
def texture_file(tmp_path_factory):
    return write_texture(tmp_path_factory.mktemp("texture") / "stripes.png")
