"""Versioned checkpoint container.

One file: a magic line, a length-prefixed JSON metadata block, then the
named array payloads as little-endian float32 in sorted-name order.  The
metadata carries every config plus the RNG state, so loading a checkpoint
reproduces the training trajectory bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .geometry import LayerSpec
from .latent import AxisWorld, CoordinateSpec, LatentGeometry, LatentImage, LatentSpec
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    GeneratorNet,
    build_discriminator,
    build_generator,
)
from .training import TrainConfig, TrainState, init_train_state

MAGIC = b"LOCOGANCKPT 1\n"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "int64": np.int64}


class CheckpointError(ValueError):
    pass


def save_container(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype == np.float32:
            dtype = "float32"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        data = arr.astype("<f4").tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype,
             "offset": offset, "nbytes": len(data)}
        )
        payloads.append(data)
        offset += len(data)
    meta = dict(meta)
    meta["format"] = FORMAT_VERSION
    meta["arrays"] = entries
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for data in payloads:
            f.write(data)


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint or unsupported version")
    pos = len(MAGIC)
    meta_len = int.from_bytes(raw[pos:pos + 8], "little")
    pos += 8
    try:
        meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt metadata block: {e}") from None
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {meta.get('format')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    base = pos + meta_len
    arrays: dict[str, np.ndarray] = {}
    for ent in meta["arrays"]:
        start = base + ent["offset"]
        stop = start + ent["nbytes"]
        if stop > len(raw):
            raise CheckpointError(f"{path}: truncated payload for array {ent['name']!r}")
        flat = np.frombuffer(raw[start:stop], dtype="<f4")
        if flat.size != int(np.prod(ent["shape"], dtype=np.int64)):
            raise CheckpointError(f"{path}: size mismatch for array {ent['name']!r}")
        arr = flat.reshape(ent["shape"]).astype(_DTYPES[ent["dtype"]])
        arrays[ent["name"]] = arr
    return meta, arrays


# --- config (de)serialization -------------------------------------------------

def _layer_dict(l: LayerSpec) -> dict:
    return {"in": l.in_channels, "out": l.out_channels, "k": l.kernel,
            "s": l.stride, "p": l.padding, "t": l.transposed}


def _layer_from(d: dict) -> LayerSpec:
    return LayerSpec(d["in"], d["out"], d["k"], d["s"], d["p"], d["t"])


def latent_spec_meta(spec: LatentSpec) -> dict:
    c = spec.coordinate
    return {
        "global_channels": spec.global_channels,
        "local_channels": spec.local_channels,
        "coordinate": {
            "mode": c.mode,
            "reference_extent": list(c.reference_extent),
            "period": c.period,
        },
    }


def latent_spec_from(meta: dict) -> LatentSpec:
    c = meta["coordinate"]
    return LatentSpec(
        meta["global_channels"],
        meta["local_channels"],
        CoordinateSpec(c["mode"], tuple(c["reference_extent"]), c["period"]),
    )


def _gcfg_meta(cfg: GeneratorConfig) -> dict:
    return {"layers": [_layer_dict(l) for l in cfg.layers],
            "coord_channels": cfg.coord_channels}


def _gcfg_from(meta: dict) -> GeneratorConfig:
    return GeneratorConfig(tuple(_layer_from(d) for d in meta["layers"]),
                           meta["coord_channels"])


def _dcfg_meta(cfg: DiscriminatorConfig) -> dict:
    return {"layers": [_layer_dict(l) for l in cfg.layers],
            "coord_channels": cfg.coord_channels,
            "spectral": list(cfg.spectral),
            "leaky_slope": cfg.leaky_slope}


def _dcfg_from(meta: dict) -> DiscriminatorConfig:
    return DiscriminatorConfig(tuple(_layer_from(d) for d in meta["layers"]),
                               meta["coord_channels"],
                               tuple(bool(x) for x in meta["spectral"]),
                               meta["leaky_slope"])


def train_config_meta(cfg: TrainConfig) -> dict:
    return {
        "latent_spec": latent_spec_meta(cfg.latent_spec),
        "g_config": _gcfg_meta(cfg.g_config),
        "d_config": _dcfg_meta(cfg.d_config),
        "batch_size": cfg.batch_size,
        "total_steps": cfg.total_steps,
        "lr_g": cfg.lr_g,
        "lr_d": cfg.lr_d,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "seed": cfg.seed,
        "checkpoint_every": cfg.checkpoint_every,
        "latent_pad": cfg.latent_pad,
        "threads": cfg.threads,
    }


def train_config_from(meta: dict) -> TrainConfig:
    return TrainConfig(
        latent_spec=latent_spec_from(meta["latent_spec"]),
        g_config=_gcfg_from(meta["g_config"]),
        d_config=_dcfg_from(meta["d_config"]),
        batch_size=meta["batch_size"],
        total_steps=meta["total_steps"],
        lr_g=meta["lr_g"],
        lr_d=meta["lr_d"],
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        seed=meta["seed"],
        checkpoint_every=meta["checkpoint_every"],
        latent_pad=meta["latent_pad"],
        threads=meta["threads"],
    )


# --- train state --------------------------------------------------------------

def _rng_state_meta(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_from_meta(meta: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        "bit_generator": meta["bit_generator"],
        "state": dict(meta["state"]),
        "has_uint32": meta["has_uint32"],
        "uinteger": meta["uinteger"],
    }
    return rng


def _net_arrays(prefix: str, net: torch.nn.Module, arrays: dict) -> None:
    for name, tensor in net.state_dict().items():
        arrays[f"{prefix}:{name}"] = tensor.detach().cpu().numpy()


def _opt_arrays(prefix: str, net: torch.nn.Module, opt: torch.optim.Adam, arrays: dict) -> None:
    for name, param in net.named_parameters():
        state = opt.state.get(param)
        if not state:
            continue
        step = state["step"]
        if not isinstance(step, torch.Tensor):
            step = torch.tensor(float(step), dtype=torch.float32)
        arrays[f"{prefix}:{name}:step"] = step.detach().cpu().numpy()
        arrays[f"{prefix}:{name}:exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        arrays[f"{prefix}:{name}:exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    arrays: dict[str, np.ndarray] = {}
    _net_arrays("g", state.generator, arrays)
    _net_arrays("d", state.discriminator, arrays)
    _opt_arrays("optg", state.generator, state.opt_g, arrays)
    _opt_arrays("optd", state.discriminator, state.opt_d, arrays)
    meta = {
        "kind": "train_state",
        "step": state.step,
        "train_config": train_config_meta(state.cfg),
        "rng_state": _rng_state_meta(state.rng),
        "footprint": state.fmap.meta(),
    }
    save_container(path, arrays, meta)


def _load_net_state(prefix: str, net: torch.nn.Module, arrays: dict, path) -> None:
    sd = net.state_dict()
    fresh = {}
    for name, tensor in sd.items():
        key = f"{prefix}:{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing array {key!r}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: array {key!r} has shape {arr.shape}, expected {tuple(tensor.shape)}"
            )
        fresh[name] = torch.from_numpy(np.array(arr, copy=True)).to(tensor.dtype)
    net.load_state_dict(fresh)


def _load_opt_state(prefix: str, net: torch.nn.Module, opt: torch.optim.Adam,
                    arrays: dict) -> None:
    for name, param in net.named_parameters():
        key = f"{prefix}:{name}:exp_avg"
        if key not in arrays:
            continue
        opt.state[param] = {
            "step": torch.from_numpy(
                np.array(arrays[f"{prefix}:{name}:step"], copy=True)
            ).to(torch.float32),
            "exp_avg": torch.from_numpy(np.array(arrays[key], copy=True)),
            "exp_avg_sq": torch.from_numpy(
                np.array(arrays[f"{prefix}:{name}:exp_avg_sq"], copy=True)
            ),
        }


def load_checkpoint(path: str | Path) -> TrainState:
    meta, arrays = load_container(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path}: not a train-state checkpoint")
    cfg = train_config_from(meta["train_config"])
    state = init_train_state(cfg)
    _load_net_state("g", state.generator, arrays, path)
    _load_net_state("d", state.discriminator, arrays, path)
    _load_opt_state("optg", state.generator, state.opt_g, arrays)
    _load_opt_state("optd", state.discriminator, state.opt_d, arrays)
    state.rng = _rng_from_meta(meta["rng_state"])
    state.step = meta["step"]
    return state


def load_generator(path: str | Path) -> tuple[GeneratorNet, TrainConfig, int]:
    """Load only what sampling needs: the generator, its configs, the step."""
    meta, arrays = load_container(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path}: not a train-state checkpoint")
    cfg = train_config_from(meta["train_config"])
    net = build_generator(cfg.g_config, cfg.latent_spec, np.random.default_rng(0))
    _load_net_state("g", net, arrays, path)
    net.eval()
    return net, cfg, meta["step"]


# --- latent images ------------------------------------------------------------

def save_latent(path: str | Path, latent: LatentImage) -> None:
    geo = latent.geometry
    arrays = {"local": latent.local}
    if latent.global_map is not None:
        arrays["global_map"] = latent.global_map
    else:
        arrays["global_values"] = latent.global_values
    meta = {
        "kind": "latent",
        "spec": latent_spec_meta(latent.spec),
        "height": latent.height,
        "width": latent.width,
        "geometry": {
            "x_world": [geo.x_world.scale, geo.x_world.offset],
            "y_world": [geo.y_world.scale, geo.y_world.offset],
            "crop": list(geo.crop) if geo.crop else None,
            "latent_origin": list(geo.latent_origin) if geo.latent_origin else None,
        },
    }
    save_container(path, arrays, meta)


def load_latent(path: str | Path) -> LatentImage:
    meta, arrays = load_container(path)
    if meta.get("kind") != "latent":
        raise CheckpointError(f"{path}: not a latent container")
    g = meta["geometry"]
    geometry = LatentGeometry(
        x_world=AxisWorld(*g["x_world"]),
        y_world=AxisWorld(*g["y_world"]),
        crop=tuple(g["crop"]) if g["crop"] else None,
        latent_origin=tuple(g["latent_origin"]) if g["latent_origin"] else None,
    )
    return LatentImage(
        spec=latent_spec_from(meta["spec"]),
        height=meta["height"],
        width=meta["width"],
        local=arrays["local"],
        global_values=arrays.get("global_values"),
        geometry=geometry,
        global_map=arrays.get("global_map"),
    )
