"""KL regularizer, feature perceptual loss, pixel baseline and the weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch

from .errors import ConfigError, ContractError, NumericError
from .loss_network import VAE123_TAPS, LossNetwork


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.5
    mode: str = "dfc"
    tap_tags: List[str] = field(default_factory=lambda: list(VAE123_TAPS))
    batch_reduction: str = "mean"

    def __post_init__(self):
        self.alpha = float(self.alpha)
        self.beta = float(self.beta)
        self.tap_tags = list(self.tap_tags)
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ConfigError("alpha and beta must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if self.mode not in ("dfc", "pixel"):
            raise ConfigError(f"loss mode must be 'dfc' or 'pixel', got {self.mode!r}")
        if self.mode == "dfc" and not self.tap_tags:
            raise ConfigError("dfc mode needs at least one tap tag")
        if self.batch_reduction != "mean":
            raise ConfigError("only 'mean' batch reduction is supported")


@dataclass
class LossBreakdown:
    """Loss components. Values are tensors so ``total`` can be
    backpropagated; use :meth:`as_floats` for logging."""

    kl: torch.Tensor
    per_layer_rec: Dict[str, torch.Tensor]
    rec_total: torch.Tensor
    total: torch.Tensor
    alpha: float
    beta: float

    def as_floats(self) -> Dict[str, float]:
        row = {"kl": self.kl.item()}
        for tag, v in self.per_layer_rec.items():
            row[f"rec_{tag}"] = v.item()
        row["rec_total"] = self.rec_total.item()
        row["total"] = self.total.item()
        return row


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, mean over batch."""
    if mu.shape != logvar.shape:
        raise ContractError(f"mu {tuple(mu.shape)} and logvar {tuple(logvar.shape)} differ")
    per_sample = -0.5 * torch.sum(1 + logvar - mu.pow(2) - logvar.exp(), dim=-1)
    return per_sample.mean()


def feature_layer_loss(a: torch.Tensor, b: torch.Tensor, tag_a: str = None, tag_b: str = None):
    """Squared distance between two activation blocks, normalized by
    ``2 * C * H * W`` per sample, averaged over the batch.

    Inputs are (B, C, H, W); an unbatched (C, H, W) block is treated as B=1.
    """
    if tag_a is not None and tag_b is not None and tag_a != tag_b:
        raise ContractError(f"feature maps come from different layers: {tag_a} vs {tag_b}")
    if a.shape != b.shape:
        raise ContractError(f"feature map shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    if a.dim() != 4:
        raise ContractError(f"feature maps must be (B, C, H, W), got {tuple(a.shape)}")
    n = a[0].numel()
    return ((a - b).pow(2).flatten(1).sum(1) / (2 * n)).mean()


def pixel_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel and channel, mean over batch."""
    if x.shape != x_rec.shape:
        raise ContractError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).pow(2).flatten(1).mean(1).mean()


def total_loss(
    x: torch.Tensor,
    x_rec: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    net: Optional[LossNetwork],
    cfg: LossConfig,
    target_features: Optional[Dict[str, torch.Tensor]] = None,
) -> LossBreakdown:
    """``alpha * kl + beta * rec`` where rec is the summed per-tap feature
    loss (dfc mode) or pixel MSE (pixel mode).

    ``target_features`` lets callers reuse precomputed activations of ``x``.
    """
    kl = kl_loss(mu, logvar)
    per_layer: Dict[str, torch.Tensor] = {}
    if cfg.mode == "dfc":
        if net is None:
            raise ConfigError("dfc mode requires a loss network")
        if set(net.taps) != set(cfg.tap_tags):
            raise ConfigError(f"loss network taps {net.taps} differ from config {cfg.tap_tags}")
        if target_features is None:
            with torch.no_grad():
                target_features = net(x)
        rec_features = net(x_rec)
        for tag in net.taps:
            per_layer[tag] = feature_layer_loss(target_features[tag], rec_features[tag])
        rec_total = sum(per_layer.values())
    else:
        rec_total = pixel_loss(x, x_rec)
    total = cfg.alpha * kl + cfg.beta * rec_total
    if not torch.isfinite(total):
        raise NumericError(f"non-finite loss: kl={float(kl)}, rec={float(rec_total)}")
    return LossBreakdown(kl, per_layer, rec_total, total, cfg.alpha, cfg.beta)


def feature_distance(
    x: torch.Tensor, x_rec: torch.Tensor, net: LossNetwork
) -> torch.Tensor:
    """Summed per-tap feature loss, with no KL term (for comparing models)."""
    with torch.no_grad():
        fa, fb = net(x), net(x_rec)
        return sum(feature_layer_loss(fa[t], fb[t]) for t in net.taps)
