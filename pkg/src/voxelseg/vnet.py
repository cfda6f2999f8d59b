"""A desk-scale VNet: residual encoder-decoder over 3D patches.

Encoder stages run same-padded convolutions and add the stage input back
(learning a residual), then halve resolution with a 2x2x2 stride-2
convolution instead of pooling. The decoder mirrors this with transposed
convolutions, concatenating the matching encoder output at each scale, and
a final 1x1x1 convolution plus sigmoid yields a per-voxel foreground
probability. Residual inputs whose channel count differs from the stage
output go through a learned 1x1x1 projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import decode as checkpoint_decode
from .checkpoint import encode as checkpoint_encode
from .errors import InvalidConfig, ManifestCorrupt, ShapeMismatch
from .rng import RngStream

RELU = "relu"
PRELU = "prelu"
PRELU_INIT_SLOPE = 0.25


@dataclass(frozen=True)
class VNetConfig:
    in_channels: int = 1
    stage_channels: tuple[int, ...] = (8, 16, 32)
    convs_per_stage: int = 2
    kernel: tuple[int, int, int] = (3, 3, 3)
    nonlinearity: str = PRELU
    output: str = "sigmoid"

    def __post_init__(self):
        if len(self.stage_channels) < 2:
            raise InvalidConfig(f"need at least 2 stages, got {self.stage_channels}")
        if any(c < 1 for c in self.stage_channels) or self.in_channels < 1:
            raise InvalidConfig("channel counts must be positive")
        if self.convs_per_stage < 1:
            raise InvalidConfig(f"convs_per_stage must be >= 1, got {self.convs_per_stage}")
        if len(self.kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise InvalidConfig(f"kernel must be 3 odd extents for same padding, got {self.kernel}")
        if self.nonlinearity not in (RELU, PRELU):
            raise InvalidConfig(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.output != "sigmoid":
            raise InvalidConfig(f"unknown output head {self.output!r}")

    @property
    def n_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def divisor(self) -> int:
        """Input spatial extents must be divisible by this."""
        return 2 ** (self.n_stages - 1)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "stage_channels": list(self.stage_channels),
            "convs_per_stage": self.convs_per_stage,
            "kernel": list(self.kernel),
            "nonlinearity": self.nonlinearity,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VNetConfig":
        try:
            return cls(
                in_channels=int(d["in_channels"]),
                stage_channels=tuple(int(c) for c in d["stage_channels"]),
                convs_per_stage=int(d["convs_per_stage"]),
                kernel=tuple(int(k) for k in d["kernel"]),
                nonlinearity=str(d["nonlinearity"]),
                output=str(d["output"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"malformed model config: {exc}") from exc


@dataclass
class Model:
    """A VNet with an ordered parameter registry (name -> trainable Tensor)."""

    config: VNetConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def _parameter_shapes(config: VNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter name and shape, in registry (= checkpoint) order."""
    ch = config.stage_channels
    k = tuple(config.kernel)
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def conv_block(prefix: str, c_in: int, c_out: int):
        shapes.append((f"{prefix}.weight", (c_out, c_in, *k)))
        shapes.append((f"{prefix}.bias", (c_out,)))
        if config.nonlinearity == PRELU:
            shapes.append((f"{prefix}.slope", ()))

    for i, c in enumerate(ch):
        # the downsampling conv below already widened features to ch[i]
        c_in = config.in_channels if i == 0 else c
        for j in range(config.convs_per_stage):
            conv_block(f"enc{i}.conv{j}", c_in if j == 0 else c, c)
        if c_in != c:
            shapes.append((f"enc{i}.proj.weight", (c, c_in, 1, 1, 1)))
        if i < len(ch) - 1:
            shapes.append((f"down{i}.weight", (ch[i + 1], c, 2, 2, 2)))
            shapes.append((f"down{i}.bias", (ch[i + 1],)))
            if config.nonlinearity == PRELU:
                shapes.append((f"down{i}.slope", ()))

    for i in range(len(ch) - 2, -1, -1):
        c_above = ch[i + 1]
        c = ch[i]
        shapes.append((f"up{i}.weight", (c_above, c, 2, 2, 2)))
        shapes.append((f"up{i}.bias", (c,)))
        if config.nonlinearity == PRELU:
            shapes.append((f"up{i}.slope", ()))
        cat = 2 * c  # upsampled features concatenated with the encoder skip
        for j in range(config.convs_per_stage):
            conv_block(f"dec{i}.conv{j}", cat if j == 0 else c, c)
        shapes.append((f"dec{i}.proj.weight", (c, cat, 1, 1, 1)))

    shapes.append(("head.weight", (1, ch[0], 1, 1, 1)))
    shapes.append(("head.bias", (1,)))
    return shapes


def build(config: VNetConfig, rng: RngStream) -> Model:
    """Initialize parameters: weights ~ N(0, 1/fan_in), biases 0, slopes 0.25.

    Draw order follows the registry, so a seed pins every parameter.
    """
    params: dict[str, Tensor] = {}
    for name, shape in _parameter_shapes(config):
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            data = rng.gen.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:  # prelu slope
            data = np.asarray(PRELU_INIT_SLOPE)
        params[name] = Tensor(data, requires_grad=True)
    return Model(config=config, params=params)


def parameter_count(config: VNetConfig) -> int:
    return sum(int(np.prod(s, dtype=np.int64)) if s else 1 for _, s in _parameter_shapes(config))


def _activate(model: Model, prefix: str, x: Tensor) -> Tensor:
    if model.config.nonlinearity == PRELU:
        return ad.prelu(x, model.params[f"{prefix}.slope"])
    return ad.relu(x)


def _conv_block(model: Model, prefix: str, x: Tensor, padding) -> Tensor:
    out = ad.conv3d(x, model.params[f"{prefix}.weight"], stride=1, padding=padding)
    out = ad.add_bias(out, model.params[f"{prefix}.bias"])
    return _activate(model, prefix, out)


def _residual_stage(model: Model, prefix: str, x: Tensor) -> Tensor:
    cfg = model.config
    padding = tuple(k // 2 for k in cfg.kernel)
    out = x
    for j in range(cfg.convs_per_stage):
        out = _conv_block(model, f"{prefix}.conv{j}", out, padding)
    proj_name = f"{prefix}.proj.weight"
    shortcut = x if proj_name not in model.params else ad.conv3d(x, model.params[proj_name])
    return ad.add(out, shortcut)


def forward(model: Model, x: Tensor) -> Tensor:
    """Probability map with the input's extents; values in (0, 1)."""
    cfg = model.config
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 5 or x.data.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"expected (N, {cfg.in_channels}, D, H, W), got {x.data.shape}")
    if any(s % cfg.divisor for s in x.data.shape[2:]):
        raise ShapeMismatch(
            f"spatial extents {x.data.shape[2:]} must be divisible by {cfg.divisor} "
            f"for {cfg.n_stages} stages"
        )

    skips = []
    out = x
    for i in range(cfg.n_stages):
        out = _residual_stage(model, f"enc{i}", out)
        if i < cfg.n_stages - 1:
            skips.append(out)
            out = ad.conv3d_down(out, model.params[f"down{i}.weight"])
            out = ad.add_bias(out, model.params[f"down{i}.bias"])
            out = _activate(model, f"down{i}", out)

    for i in range(cfg.n_stages - 2, -1, -1):
        out = ad.conv_transpose3d(out, model.params[f"up{i}.weight"], stride=2)
        out = ad.add_bias(out, model.params[f"up{i}.bias"])
        out = _activate(model, f"up{i}", out)
        out = ad.concat([out, skips[i]], axis=1)
        out = _residual_stage(model, f"dec{i}", out)

    out = ad.conv3d(out, model.params["head.weight"])
    out = ad.add_bias(out, model.params["head.bias"])
    return ad.sigmoid(out)


def save(model: Model) -> bytes:
    """Checkpoint bytes; load(save(m)) reproduces parameters bitwise."""
    return checkpoint_encode(model.parameter_arrays(), model.config.to_dict())


def load(data: bytes) -> Model:
    params, config_dict = checkpoint_decode(data)
    config = VNetConfig.from_dict(config_dict)
    expected = _parameter_shapes(config)
    expected_names = {name for name, _ in expected}
    if set(params) != expected_names:
        missing = expected_names - set(params)
        extra = set(params) - expected_names
        raise ManifestCorrupt(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    model = Model(config=config)
    for name, shape in expected:
        arr = params[name]
        if arr.shape != shape:
            raise ManifestCorrupt(f"parameter {name!r} has shape {arr.shape}, expected {shape}")
        model.params[name] = Tensor(arr, requires_grad=True)
    return model
