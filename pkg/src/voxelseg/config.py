"""JSON pipeline configuration: one document drives every stage.

Sections mirror the pipeline stages (normalization, patch, model, train,
phantom, io). Validation is strict: unknown keys anywhere are rejected
before any work starts, and every section falls back to its dataclass
defaults when omitted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid, InvalidConfig, InvalidParams, InvalidWindow
from .losses import TverskyParams
from .normalize import NormalizationSpec
from .patches import HANN, UNIFORM, PatchSpec
from .phantom import PhantomConfig
from .training import TrainConfig
from .vnet import VNetConfig


@dataclass(frozen=True)
class IoPaths:
    train_images: tuple[str, ...] = ()
    train_labels: tuple[str, ...] = ()
    heldout_images: tuple[str, ...] = ()
    heldout_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    patch: PatchSpec = field(default_factory=PatchSpec)
    overlap: tuple[int, int, int] | None = None  # None -> half a patch
    window: str = HANN
    model: VNetConfig = field(default_factory=VNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    io: IoPaths = field(default_factory=IoPaths)


def _check_keys(section: str, data: dict, allowed: set[str]):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown keys in {section!r}: {sorted(unknown)}")


def _triple(section: str, value) -> tuple[int, int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigInvalid(f"{section} must be a list of 3 integers, got {value!r}")
    return tuple(int(v) for v in value)


def _normalization(data: dict) -> NormalizationSpec:
    _check_keys("normalization", data, {"mode", "clip_lo", "clip_hi", "out_lo", "out_hi"})
    spec = NormalizationSpec(
        mode=data.get("mode", NormalizationSpec.mode),
        clip_lo=data.get("clip_lo"),
        clip_hi=data.get("clip_hi"),
        out_lo=float(data.get("out_lo", -1.0)),
        out_hi=float(data.get("out_hi", 1.0)),
    )
    return spec


def _patch(data: dict) -> tuple[PatchSpec, tuple[int, int, int] | None, str]:
    _check_keys(
        "patch",
        data,
        {"size", "fg_fraction", "pad_value_image", "pad_value_label", "overlap", "window"},
    )
    defaults = PatchSpec()
    spec = PatchSpec(
        size=_triple("patch.size", data["size"]) if "size" in data else defaults.size,
        fg_fraction=float(data.get("fg_fraction", defaults.fg_fraction)),
        pad_value_image=float(data.get("pad_value_image", defaults.pad_value_image)),
        pad_value_label=float(data.get("pad_value_label", defaults.pad_value_label)),
    )
    overlap = _triple("patch.overlap", data["overlap"]) if "overlap" in data else None
    window = data.get("window", HANN)
    if window not in (UNIFORM, HANN):
        raise ConfigInvalid(f"patch.window must be 'uniform' or 'hann', got {window!r}")
    return spec, overlap, window


def _model(data: dict) -> VNetConfig:
    _check_keys(
        "model",
        data,
        {"in_channels", "stage_channels", "convs_per_stage", "kernel", "nonlinearity", "output"},
    )
    defaults = VNetConfig()
    return VNetConfig(
        in_channels=int(data.get("in_channels", defaults.in_channels)),
        stage_channels=tuple(int(c) for c in data.get("stage_channels", defaults.stage_channels)),
        convs_per_stage=int(data.get("convs_per_stage", defaults.convs_per_stage)),
        kernel=tuple(int(k) for k in data.get("kernel", defaults.kernel)),
        nonlinearity=data.get("nonlinearity", defaults.nonlinearity),
        output=data.get("output", defaults.output),
    )


def _train(data: dict, patch: PatchSpec) -> TrainConfig:
    _check_keys(
        "train",
        data,
        {"loss", "alpha", "epsilon", "learning_rate", "momentum", "batch_size", "steps", "seed", "eval_every"},
    )
    defaults = TrainConfig()
    alpha = float(data.get("alpha", 0.5))
    epsilon = float(data.get("epsilon", 1e-6))
    return TrainConfig(
        loss=data.get("loss", defaults.loss),
        tversky=TverskyParams.from_alpha(alpha, epsilon=epsilon),
        learning_rate=float(data.get("learning_rate", defaults.learning_rate)),
        momentum=float(data.get("momentum", defaults.momentum)),
        batch_size=int(data.get("batch_size", defaults.batch_size)),
        steps=int(data.get("steps", defaults.steps)),
        patch=patch,
        seed=int(data.get("seed", defaults.seed)),
        eval_every=int(data.get("eval_every", defaults.eval_every)),
    )


def _phantom(data: dict) -> PhantomConfig:
    _check_keys(
        "phantom",
        data,
        {"extents", "n_blobs", "radius_range", "fg_intensity", "bg_intensity", "noise_sigma", "seed"},
    )
    defaults = PhantomConfig()
    radius = data.get("radius_range", defaults.radius_range)
    if not isinstance(radius, (list, tuple)) or len(radius) != 2:
        raise ConfigInvalid(f"phantom.radius_range must be [lo, hi], got {radius!r}")
    return PhantomConfig(
        extents=_triple("phantom.extents", data["extents"]) if "extents" in data else defaults.extents,
        n_blobs=int(data.get("n_blobs", defaults.n_blobs)),
        radius_range=(float(radius[0]), float(radius[1])),
        fg_intensity=float(data.get("fg_intensity", defaults.fg_intensity)),
        bg_intensity=float(data.get("bg_intensity", defaults.bg_intensity)),
        noise_sigma=float(data.get("noise_sigma", defaults.noise_sigma)),
        seed=int(data.get("seed", defaults.seed)),
    )


def _io(data: dict) -> IoPaths:
    _check_keys("io", data, {"train_images", "train_labels", "heldout_images", "heldout_labels"})
    def paths(key):
        value = data.get(key, [])
        if not isinstance(value, list) or not all(isinstance(p, str) for p in value):
            raise ConfigInvalid(f"io.{key} must be a list of paths")
        return tuple(value)

    io = IoPaths(
        train_images=paths("train_images"),
        train_labels=paths("train_labels"),
        heldout_images=paths("heldout_images"),
        heldout_labels=paths("heldout_labels"),
    )
    if len(io.train_images) != len(io.train_labels) or len(io.heldout_images) != len(io.heldout_labels):
        raise ConfigInvalid("io image and label lists must have matching lengths")
    return io


def from_dict(doc: dict) -> PipelineConfig:
    """Validate a parsed JSON document into a PipelineConfig."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config root must be a JSON object")
    _check_keys("config", doc, {"normalization", "patch", "model", "train", "phantom", "io"})
    try:
        patch, overlap, window = _patch(doc.get("patch", {}))
        return PipelineConfig(
            normalization=_normalization(doc.get("normalization", {})),
            patch=patch,
            overlap=overlap,
            window=window,
            model=_model(doc.get("model", {})),
            train=_train(doc.get("train", {}), patch),
            phantom=_phantom(doc.get("phantom", {})),
            io=_io(doc.get("io", {})),
        )
    except (ValueError, TypeError, InvalidConfig, InvalidParams, InvalidWindow) as exc:
        raise ConfigInvalid(f"invalid config value: {exc}") from exc


def load(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return from_dict(doc)
