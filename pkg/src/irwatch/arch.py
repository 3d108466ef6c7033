"""Architecture configs for the CNN template family and their cost model.

The template: one or two 3x3 conv layers (ReLU), optional single 2x2 max
pool after the last conv, flatten, then one or two fully connected layers
(hidden width 64 with ReLU when two; final layer is a single sigmoid unit).
Inputs are 8x8 thermal frames with 1 channel (single-frame variant) or W
channels (windowed variant, W consecutive frames).

Canonical name grammar (see README for the formal version):

    <n>F-C<ch>[-C<ch>][-P]-FC[-FC]      e.g.  1F-C8-P-FC,  8F-C32-FC-FC
"""
from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field

INPUT_HW = 8
HIDDEN_FC = 64
CHANNEL_CHOICES = (8, 16, 32, 64)
DEFAULT_WINDOW = 8

_NAME_RE = re.compile(r"^(\d+)F((?:-C\d+){1,2})(-P)?((?:-FC){1,2})$")


class InvalidArchError(ValueError):
    """Config outside the template family or with underflowing shapes."""


@dataclass(frozen=True)
class LayerPlan:
    kind: str  # conv | pool | flatten | dense
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    activation: str | None = None  # relu | sigmoid | None
    weight_shape: tuple[int, ...] | None = None
    bias_shape: tuple[int, ...] | None = None

    @property
    def macs(self) -> int:
        if self.kind == "conv":
            oh, ow, cout = self.out_shape
            cin = self.in_shape[2]
            return oh * ow * cout * 9 * cin
        if self.kind == "dense":
            return self.in_shape[0] * self.out_shape[0]
        return 0

    @property
    def weight_count(self) -> int:
        return _prod(self.weight_shape) if self.weight_shape else 0

    @property
    def bias_count(self) -> int:
        return _prod(self.bias_shape) if self.bias_shape else 0


def _prod(shape: tuple[int, ...]) -> int:
    out = 1
    for s in shape:
        out *= s
    return out


@dataclass(frozen=True)
class ArchConfig:
    """One member of the template family.

    window=1 is the single-frame input variant; window>1 stacks that many
    consecutive frames as input channels.
    """

    window: int = 1
    conv_channels: tuple[int, ...] = (8,)
    use_pool: bool = True
    fc_layers: int = 1

    def __post_init__(self):
        if self.window < 1:
            raise InvalidArchError(f"window must be >= 1, got {self.window}")
        channels = tuple(self.conv_channels)
        object.__setattr__(self, "conv_channels", channels)
        if not 1 <= len(channels) <= 2:
            raise InvalidArchError("template allows one or two conv layers")
        for ch in channels:
            if ch not in CHANNEL_CHOICES:
                raise InvalidArchError(
                    f"conv channels must be one of {CHANNEL_CHOICES}, got {ch}"
                )
        if self.fc_layers not in (1, 2):
            raise InvalidArchError("template allows one or two FC layers")

    @property
    def name(self) -> str:
        parts = [f"{self.window}F"] + [f"C{c}" for c in self.conv_channels]
        if self.use_pool:
            parts.append("P")
        parts.extend(["FC"] * self.fc_layers)
        return "-".join(parts)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (INPUT_HW, INPUT_HW, self.window)

    def shape_plan(self) -> tuple[LayerPlan, ...]:
        return shape_plan(self)

    def param_count(self) -> int:
        return param_count(self)

    def mac_count(self) -> int:
        return mac_count(self)

    def quantized_size_bytes(self) -> int:
        return quantized_size_bytes(self)


def parse_name(name: str) -> ArchConfig:
    m = _NAME_RE.match(name)
    if not m:
        raise InvalidArchError(f"cannot parse architecture name {name!r}")
    window = int(m.group(1))
    channels = tuple(int(c[2:]) for c in m.group(2).split("-")[1:])
    use_pool = m.group(3) is not None
    fc_layers = m.group(4).count("FC")
    cfg = ArchConfig(window, channels, use_pool, fc_layers)
    shape_plan(cfg)  # reject underflowing shapes up front
    return cfg


@functools.lru_cache(maxsize=None)
def shape_plan(arch: ArchConfig) -> tuple[LayerPlan, ...]:
    """Every layer with its input/output shape, in execution order."""
    layers: list[LayerPlan] = []
    shape = arch.input_shape
    for cout in arch.conv_channels:
        h, w, cin = shape
        if h < 3 or w < 3:
            raise InvalidArchError(
                f"{arch.name}: spatial size {h}x{w} underflows a 3x3 conv"
            )
        out = (h - 2, w - 2, cout)
        layers.append(
            LayerPlan("conv", shape, out, "relu", (3, 3, cin, cout), (cout,))
        )
        shape = out
    if arch.use_pool:
        h, w, c = shape
        if h < 2 or w < 2:
            raise InvalidArchError(
                f"{arch.name}: spatial size {h}x{w} underflows 2x2 pooling"
            )
        out = (h // 2, w // 2, c)
        layers.append(LayerPlan("pool", shape, out))
        shape = out
    flat = (_prod(shape),)
    layers.append(LayerPlan("flatten", shape, flat))
    shape = flat
    widths = [HIDDEN_FC, 1] if arch.fc_layers == 2 else [1]
    for i, width in enumerate(widths):
        final = i == len(widths) - 1
        out = (width,)
        layers.append(
            LayerPlan(
                "dense",
                shape,
                out,
                "sigmoid" if final else "relu",
                (shape[0], width),
                (width,),
            )
        )
        shape = out
    return tuple(layers)


def param_count(arch: ArchConfig) -> int:
    return sum(l.weight_count + l.bias_count for l in shape_plan(arch))


def mac_count(arch: ArchConfig) -> int:
    return sum(l.macs for l in shape_plan(arch))


def quantized_size_bytes(arch: ArchConfig) -> int:
    """Serialized size of the 8-bit model: 1 byte per weight, 4 per bias."""
    return sum(l.weight_count + 4 * l.bias_count for l in shape_plan(arch))


def format_k(value: int) -> str:
    """Human display in units of 1024 (0.18k / 2.6k / 74.7k style)."""
    k = value / 1024.0
    return f"{k:.2f}k" if k < 1 else f"{k:.1f}k"


def default_grid(window: int = DEFAULT_WINDOW) -> list[ArchConfig]:
    """Full exploration grid: both input variants x one or two convs (all
    channel choices) x pool on/off x one or two FC layers. 160 configs."""
    grid: list[ArchConfig] = []
    for win in (1, window):
        for n_conv in (1, 2):
            channel_sets = (
                [(c,) for c in CHANNEL_CHOICES]
                if n_conv == 1
                else [(c1, c2) for c1 in CHANNEL_CHOICES for c2 in CHANNEL_CHOICES]
            )
            for channels in channel_sets:
                for use_pool in (True, False):
                    for fc_layers in (1, 2):
                        cfg = ArchConfig(win, channels, use_pool, fc_layers)
                        try:
                            shape_plan(cfg)
                        except InvalidArchError:
                            continue
                        grid.append(cfg)
    return grid


def paper96_grid(window: int = DEFAULT_WINDOW) -> list[ArchConfig]:
    """96-config preset approximating the published sweep size.

    The published total of 96 networks implies a restriction on two-conv
    channel pairs that is not recoverable from the text; this preset keeps
    the first conv at 8 or 16 channels, which restores the count. It is an
    approximation, not a reconstruction — see README.
    """
    return [
        cfg
        for cfg in default_grid(window)
        if len(cfg.conv_channels) == 1 or cfg.conv_channels[0] in (8, 16)
    ]
