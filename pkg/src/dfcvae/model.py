"""Convolutional VAE: strided-conv encoder, upsample+conv decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, NumericError


@dataclass
class ModelConfig:
    latent_dim: int = 100
    image_side: int = 64
    encoder_channels: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
    decoder_channels: List[int] = field(default_factory=lambda: [256, 128, 64, 32])
    leaky_slope: float = 0.2
    output_activation: str = "sigmoid"

    def __post_init__(self):
        self.encoder_channels = [int(c) for c in self.encoder_channels]
        self.decoder_channels = [int(c) for c in self.decoder_channels]
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def bottleneck_side(self) -> int:
        return self.image_side // 2**self.depth

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not self.encoder_channels:
            raise ConfigError("encoder_channels must be nonempty")
        if len(self.decoder_channels) != len(self.encoder_channels):
            raise ConfigError(
                "encoder_channels and decoder_channels must have equal length, got "
                f"{len(self.encoder_channels)} and {len(self.decoder_channels)}"
            )
        if any(c < 1 for c in self.encoder_channels + self.decoder_channels):
            raise ConfigError("all channel counts must be >= 1")
        if self.image_side < 1 or self.image_side % 2**self.depth:
            raise ConfigError(
                f"image_side {self.image_side} must be divisible by 2^{self.depth}"
            )
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.output_activation not in ("sigmoid", "none"):
            raise ConfigError(
                f"output_activation must be 'sigmoid' or 'none', got {self.output_activation!r}"
            )


def _check_finite(t: torch.Tensor, layer: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite activations after {layer}")


class Encoder(nn.Module):
    """4x4 stride-2 convs, each followed by batch norm and LeakyReLU, then
    two linear heads for the posterior mean and log-variance."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        in_ch = 3
        for i, out_ch in enumerate(cfg.encoder_channels, start=1):
            self.add_module(f"conv{i}", nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            self.add_module(f"bn{i}", nn.BatchNorm2d(out_ch, eps=1e-5, momentum=0.1))
            in_ch = out_ch
        flat = in_ch * cfg.bottleneck_side**2
        self.fc_mu = nn.Linear(flat, cfg.latent_dim)
        self.fc_logvar = nn.Linear(flat, cfg.latent_dim)

    def forward(self, x: torch.Tensor, check: bool = False):
        side = self.cfg.image_side
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != side or x.shape[3] != side:
            raise ConfigError(
                f"encoder expects a batch of shape (B, 3, {side}, {side}), got {tuple(x.shape)}"
            )
        h = x
        for i in range(1, self.cfg.depth + 1):
            h = getattr(self, f"conv{i}")(h)
            h = getattr(self, f"bn{i}")(h)
            h = F.leaky_relu(h, self.cfg.leaky_slope)
            if check:
                _check_finite(h, f"encoder.conv{i}")
        h = h.flatten(1)
        mu, logvar = self.fc_mu(h), self.fc_logvar(h)
        if check:
            _check_finite(mu, "encoder.fc_mu")
            _check_finite(logvar, "encoder.fc_logvar")
        return mu, logvar


class Decoder(nn.Module):
    """Linear projection to a small feature map, then repeated
    (nearest 2x upsample, replication-padded 3x3 conv) blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.decoder_channels
        side = cfg.bottleneck_side
        self.fc = nn.Linear(cfg.latent_dim, ch[0] * side * side)
        outs = list(ch[1:]) + [3]
        for i, (c_in, c_out) in enumerate(zip(ch, outs), start=1):
            self.add_module(f"conv{i}", nn.Conv2d(c_in, c_out, 3, stride=1, padding=0))
            if i < len(ch):
                self.add_module(f"bn{i}", nn.BatchNorm2d(c_out, eps=1e-5, momentum=0.1))

    def upsample_conv(self, i: int, h: torch.Tensor) -> torch.Tensor:
        """Nearest 2x upsample, replicate-pad by one, then conv ``i``."""
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.pad(h, (1, 1, 1, 1), mode="replicate")
        return getattr(self, f"conv{i}")(h)

    def forward(self, z: torch.Tensor, check: bool = False) -> torch.Tensor:
        cfg = self.cfg
        if z.dim() != 2 or z.shape[1] != cfg.latent_dim:
            raise ConfigError(
                f"decoder expects latents of shape (B, {cfg.latent_dim}), got {tuple(z.shape)}"
            )
        side = cfg.bottleneck_side
        h = self.fc(z).view(z.shape[0], cfg.decoder_channels[0], side, side)
        n = cfg.depth
        for i in range(1, n + 1):
            h = self.upsample_conv(i, h)
            if i < n:
                h = getattr(self, f"bn{i}")(h)
                h = F.leaky_relu(h, cfg.leaky_slope)
            if check:
                _check_finite(h, f"decoder.conv{i}")
        if cfg.output_activation == "sigmoid":
            h = torch.sigmoid(h)
        return h


def init_weights(module: nn.Module) -> None:
    """N(0, 0.02) conv kernels, zero biases; batch norm starts at identity."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class VAE(nn.Module):
    def __init__(self, cfg: Optional[ModelConfig] = None, init: bool = True):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(self.cfg)
        if init:
            init_weights(self)

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None):
        mu, logvar = self.encoder(x)
        z, _ = reparameterize(mu, logvar, generator=generator)
        return self.decoder(z), mu, logvar, z


def _set_mode(module: nn.Module, mode: str) -> None:
    if mode == "train":
        module.train()
    elif mode == "eval":
        module.eval()
    else:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


def encode(encoder: Encoder, batch: torch.Tensor, mode: str = "eval"):
    """Return ``(mu, logvar)``, each of shape (B, latent_dim).

    In eval mode batch norm uses running statistics and no graph is built;
    in train mode batch statistics are used and running stats updated.
    """
    _set_mode(encoder, mode)
    if mode == "eval":
        with torch.no_grad():
            return encoder(batch, check=True)
    return encoder(batch, check=True)


def decode(decoder: Decoder, z: torch.Tensor, mode: str = "eval") -> torch.Tensor:
    _set_mode(decoder, mode)
    if mode == "eval":
        with torch.no_grad():
            return decoder(z, check=True)
    return decoder(z, check=True)


def reparameterize(
    mu: torch.Tensor,
    logvar: torch.Tensor,
    generator: Optional[torch.Generator] = None,
    eps: Optional[torch.Tensor] = None,
):
    """Draw ``z = mu + exp(logvar / 2) * eps`` with ``eps ~ N(0, I)``.

    Returns ``(z, eps)`` so the noise used for the draw can be recorded or
    replayed by passing it back in as ``eps``.
    """
    if not (torch.isfinite(mu).all() and torch.isfinite(logvar).all()):
        raise NumericError("reparameterize received non-finite mu or logvar")
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * logvar) * eps, eps


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def sample_latents(n: int, latent_dim: int, seed: int, dtype=torch.float32) -> torch.Tensor:
    """Standard-normal latents drawn row by row, so the first k rows do not
    depend on n."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    g = seeded_generator(seed)
    # one draw per row: torch fills large tensors in chunks, so a single
    # randn(n, d) call does not keep a stable prefix as n changes
    return torch.stack([torch.randn(latent_dim, generator=g, dtype=dtype) for _ in range(n)])


def sample_images(decoder: Decoder, n: int, seed: int) -> torch.Tensor:
    dtype = next(decoder.parameters()).dtype
    z = sample_latents(n, decoder.cfg.latent_dim, seed, dtype=dtype)
    return decode(decoder, z, mode="eval")


def spatial_sizes(cfg: ModelConfig) -> Sequence[int]:
    """Encoder feature-map sides after each strided conv."""
    return [cfg.image_side // 2**i for i in range(1, cfg.depth + 1)]
