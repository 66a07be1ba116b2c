"""Frozen classification CNN used to tap hidden activations.

Weights come from a safetensors archive with tensors named
``vgg.conv{block}_{index}.{weight,bias}``. The network is never trained;
all of its tensors have ``requires_grad=False`` and it always runs in eval
mode, but gradients do flow *through* it to the images being compared.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from .archive import save_archive
from .errors import ConfigError, NumericError, WeightLoadError

# (kind, name, in_channels, out_channels); relu/pool carry no channels
LayerSpec = Tuple[str, str, int, int]

VGG19_BLOCKS = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)]

VAE123_TAPS = ["relu1_1", "relu2_1", "relu3_1"]
VAE345_TAPS = ["relu3_1", "relu4_1", "relu5_1"]


def build_layer_table(blocks: Sequence[Tuple[int, int]], in_channels: int = 3) -> List[LayerSpec]:
    """Layer list for a VGG-style stack: ``blocks`` is (width, n_convs) per
    block, with a 2x2 max-pool between blocks (none after the last)."""
    table: List[LayerSpec] = []
    c_in = in_channels
    for b, (width, n) in enumerate(blocks, start=1):
        for i in range(1, n + 1):
            table.append(("conv", f"conv{b}_{i}", c_in, width))
            table.append(("relu", f"relu{b}_{i}", width, width))
            c_in = width
        if b < len(blocks):
            table.append(("pool", f"pool{b}", c_in, c_in))
    return table


def vgg19_layers() -> List[LayerSpec]:
    return build_layer_table(VGG19_BLOCKS)


@dataclass
class Preprocessing:
    """Maps [0,1] RGB images into the input space the weights expect:
    ``(reorder(x * input_scale) - mean) / std``.

    Defaults are the constants shipped with the original Caffe VGG-19
    release (BGR order, 0-255 range, per-channel means in BGR order).
    """

    mean: List[float] = field(default_factory=lambda: [103.939, 116.779, 123.68])
    std: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    channel_order: str = "BGR"
    input_scale: float = 255.0

    def __post_init__(self):
        self.mean = [float(v) for v in self.mean]
        self.std = [float(v) for v in self.std]
        self.input_scale = float(self.input_scale)
        if self.channel_order not in ("RGB", "BGR"):
            raise ConfigError(f"channel_order must be RGB or BGR, got {self.channel_order!r}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("mean and std need exactly 3 entries")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std entries must be positive")

    def to_metadata(self) -> Dict[str, str]:
        return {
            "loss_network.mean": ",".join(repr(v) for v in self.mean),
            "loss_network.std": ",".join(repr(v) for v in self.std),
            "loss_network.channel_order": self.channel_order,
            "loss_network.input_scale": repr(self.input_scale),
        }

    @classmethod
    def from_metadata(cls, meta: Mapping[str, str]) -> Optional["Preprocessing"]:
        if "loss_network.mean" not in meta:
            return None
        return cls(
            mean=[float(v) for v in meta["loss_network.mean"].split(",")],
            std=[float(v) for v in meta.get("loss_network.std", "1,1,1").split(",")],
            channel_order=meta.get("loss_network.channel_order", "BGR"),
            input_scale=float(meta.get("loss_network.input_scale", "255")),
        )


TORCHVISION_PREPROCESSING = Preprocessing(
    mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225], channel_order="RGB", input_scale=1.0
)


class LossNetwork(nn.Module):
    def __init__(
        self,
        layers: Sequence[LayerSpec],
        taps: Iterable[str],
        preprocessing: Optional[Preprocessing] = None,
    ):
        super().__init__()
        self.layers = list(layers)
        self.preprocessing = preprocessing or Preprocessing()
        self.convs = nn.ModuleDict()
        for kind, name, c_in, c_out in self.layers:
            if kind == "conv":
                self.convs[name] = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.relu_tags = [name for kind, name, _, _ in self.layers if kind == "relu"]
        self.set_taps(taps)
        self.layers_executed = 0
        self.requires_grad_(False)
        self.eval()

        p = self.preprocessing
        self.register_buffer("_mean", torch.tensor(p.mean).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("_std", torch.tensor(p.std).view(1, 3, 1, 1), persistent=False)

    def set_taps(self, taps: Iterable[str]) -> None:
        taps = list(taps)
        if not taps:
            raise ConfigError("at least one tap tag is required")
        unknown = [t for t in taps if t not in self.relu_tags]
        if unknown:
            raise ConfigError(
                f"unknown tap tag(s) {unknown}; valid tags: {', '.join(self.relu_tags)}"
            )
        order = {t: i for i, t in enumerate(self.relu_tags)}
        self.taps = sorted(dict.fromkeys(taps), key=order.__getitem__)

    def train(self, mode: bool = True):
        # always eval; there is no batch norm or dropout to switch anyway
        return super().train(False)

    def preprocess(self, x: torch.Tensor) -> torch.Tensor:
        p = self.preprocessing
        x = x * p.input_scale
        if p.channel_order == "BGR":
            x = x.flip(1)
        return (x - self._mean.to(x.dtype)) / self._std.to(x.dtype)

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ConfigError(f"loss network expects (B, 3, H, W), got {tuple(x.shape)}")
        h = self.preprocess(x)
        remaining = set(self.taps)
        out: Dict[str, torch.Tensor] = {}
        for kind, name, _, _ in self.layers:
            if not remaining:
                break
            if kind == "conv":
                h = self.convs[name](h)
            elif kind == "relu":
                h = F.relu(h)
            else:
                h = F.max_pool2d(h, 2, 2)
            self.layers_executed += 1
            if name in remaining:
                if not torch.isfinite(h).all():
                    raise NumericError(f"non-finite activations at loss-network layer {name}")
                out[name] = h
                remaining.discard(name)
        return out

    def weight_names(self) -> List[str]:
        names = []
        for name in self.convs:
            names += [f"vgg.{name}.weight", f"vgg.{name}.bias"]
        return names

    def named_weights(self) -> Dict[str, torch.Tensor]:
        out = {}
        for name, conv in self.convs.items():
            out[f"vgg.{name}.weight"] = conv.weight
            out[f"vgg.{name}.bias"] = conv.bias
        return out


def extract_features(net: LossNetwork, batch: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Tapped activations of ``batch``; returns tag -> (B, C, H, W)."""
    return net(batch)


def load_loss_network(
    weights_path: str,
    tap_tags: Iterable[str],
    layers: Optional[Sequence[LayerSpec]] = None,
    preprocessing: Optional[Preprocessing] = None,
    dtype: torch.dtype = torch.float32,
) -> LossNetwork:
    """Build the network and fill it from a named-tensor archive.

    Preprocessing precedence: explicit argument, then constants stored in the
    archive metadata, then the Caffe VGG-19 defaults.
    """
    from safetensors import SafetensorError
    from safetensors.torch import load_file, safe_open

    layers = list(layers) if layers is not None else vgg19_layers()
    if not os.path.exists(weights_path):
        raise WeightLoadError(f"loss-network weights not found: {weights_path}")
    try:
        with safe_open(weights_path, framework="pt") as f:
            meta = f.metadata() or {}
        tensors = load_file(weights_path)
    except (SafetensorError, OSError, ValueError) as exc:
        raise WeightLoadError(f"cannot read loss-network archive {weights_path}: {exc}") from exc

    if preprocessing is None:
        preprocessing = Preprocessing.from_metadata(meta)
    net = LossNetwork(layers, tap_tags, preprocessing)
    with torch.no_grad():
        for name, target in net.named_weights().items():
            if name not in tensors:
                raise WeightLoadError(f"loss-network archive lacks tensor {name!r}")
            src = tensors[name]
            if tuple(src.shape) != tuple(target.shape):
                raise WeightLoadError(
                    f"tensor {name!r} has shape {tuple(src.shape)}, expected {tuple(target.shape)}"
                )
            target.copy_(src)
    return net.to(dtype)


def random_weights(layers: Sequence[LayerSpec], seed: int = 0) -> Dict[str, torch.Tensor]:
    """He-initialized stand-in weights (for tests and smoke runs when no
    pretrained archive is available)."""
    g = torch.Generator().manual_seed(seed)
    out = {}
    for kind, name, c_in, c_out in layers:
        if kind != "conv":
            continue
        std = (2.0 / (c_in * 9)) ** 0.5
        out[f"vgg.{name}.weight"] = torch.randn(c_out, c_in, 3, 3, generator=g) * std
        out[f"vgg.{name}.bias"] = torch.zeros(c_out)
    return out


def save_weights(
    tensors: Mapping[str, torch.Tensor],
    path: str,
    preprocessing: Optional[Preprocessing] = None,
) -> None:
    meta = preprocessing.to_metadata() if preprocessing is not None else {}
    save_archive({k: v.contiguous() for k, v in tensors.items()}, path, meta)


def convert_torchvision_state_dict(state: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """Rename a torchvision ``vgg19`` state dict (``features.N.*``) to the
    archive naming. Pair the result with ``TORCHVISION_PREPROCESSING``."""
    out = {}
    idx = 0
    for kind, name, _, _ in vgg19_layers():
        if kind == "conv":
            for suffix in ("weight", "bias"):
                key = f"features.{idx}.{suffix}"
                if key not in state:
                    raise WeightLoadError(f"state dict lacks {key!r}")
                out[f"vgg.{name}.{suffix}"] = state[key].detach().clone()
        idx += 1
    return out
