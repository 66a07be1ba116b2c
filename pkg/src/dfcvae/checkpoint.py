"""Checkpoint archives: named tensors plus a plain-text metadata block.

Files are safetensors archives. The metadata holds ``format_version`` and a
``config`` block of ``section.key = value`` lines (model, loss, train and
loss-network settings, plus ``trainer.*`` counters when trainer state is
included). Batch-norm tensors are stored as ``scale``/``shift``/
``running_mean``/``running_var``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import torch

from .archive import save_archive
from .config import KEYS, format_kv_text, parse_kv_text, parse_value
from .errors import CheckpointVersionError, CorruptArchiveError, MissingTensorError
from .losses import LossConfig
from .model import VAE, ModelConfig

FORMAT_VERSION = 1

_BN_RENAME = {"weight": "scale", "bias": "shift"}


@dataclass
class Checkpoint:
    model: VAE
    loss_config: LossConfig
    trainer_state: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def model_config(self) -> ModelConfig:
        return self.model.cfg

    @property
    def encoder(self):
        return self.model.encoder

    @property
    def decoder(self):
        return self.model.decoder


def _is_bn(module_name: str) -> bool:
    return module_name.rsplit(".", 1)[-1].startswith("bn")


def model_tensors(model: VAE) -> Dict[str, torch.Tensor]:
    """Archive-named view of every parameter and batch-norm statistic."""
    out = {}
    for key, value in model.state_dict().items():
        module_name, leaf = key.rsplit(".", 1)
        if leaf == "num_batches_tracked":
            continue
        if _is_bn(module_name):
            leaf = _BN_RENAME.get(leaf, leaf)
        out[f"{module_name}.{leaf}"] = value
    return out


def expected_tensor_names(cfg: ModelConfig) -> List[str]:
    return list(model_tensors(VAE(cfg, init=False)).keys())


def _config_values(ckpt: Checkpoint) -> Dict[str, Any]:
    cfg = ckpt.model.cfg
    values = {
        "model.latent_dim": cfg.latent_dim,
        "model.image_side": cfg.image_side,
        "model.encoder_channels": cfg.encoder_channels,
        "model.decoder_channels": cfg.decoder_channels,
        "model.leaky_slope": cfg.leaky_slope,
        "model.output_activation": cfg.output_activation,
        "loss.alpha": ckpt.loss_config.alpha,
        "loss.beta": ckpt.loss_config.beta,
        "loss.mode": ckpt.loss_config.mode,
        "loss.taps": ckpt.loss_config.tap_tags,
    }
    for k, v in ckpt.metadata.items():
        values.setdefault(k, v)
    return values


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    tensors = {k: v.detach().contiguous() for k, v in model_tensors(ckpt.model).items()}
    values = _config_values(ckpt)
    if ckpt.trainer_state is not None:
        for k, v in ckpt.trainer_state.items():
            if isinstance(v, torch.Tensor):
                tensors[f"trainer.{k}"] = v.detach().contiguous()
            else:
                values[f"trainer.{k}"] = v
    meta = {"format_version": str(ckpt.format_version), "config": format_kv_text(values)}
    save_archive(tensors, path, meta)


def _parse_meta_value(key: str, text: str) -> Any:
    if key in KEYS:
        return parse_value(KEYS[key].kind, text)
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return None if text == "none" else text


def load_checkpoint(path: str, dtype: Optional[torch.dtype] = None) -> Checkpoint:
    from safetensors import SafetensorError
    from safetensors.torch import load_file, safe_open

    try:
        with safe_open(path, framework="pt") as f:
            meta = f.metadata() or {}
        tensors = load_file(path)
    except (SafetensorError, ValueError) as exc:
        raise CorruptArchiveError(f"cannot read checkpoint {path}: {exc}") from exc

    if "format_version" not in meta or "config" not in meta:
        raise CorruptArchiveError(f"checkpoint {path} has no metadata block")
    try:
        version = int(meta["format_version"])
    except ValueError as exc:
        raise CorruptArchiveError(f"bad format_version {meta['format_version']!r}") from exc
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format_version {version}, this build reads {FORMAT_VERSION}"
        )

    raw = parse_kv_text(meta["config"], path)
    values = {k: _parse_meta_value(k, v) for k, v in raw.items()}
    model_cfg = ModelConfig(
        **{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("model.")}
    )
    loss_cfg = LossConfig(
        alpha=values["loss.alpha"],
        beta=values["loss.beta"],
        mode=values["loss.mode"],
        tap_tags=values["loss.taps"] or [],
    )

    model = VAE(model_cfg, init=False)
    state = model.state_dict()
    for key in list(state):
        module_name, leaf = key.rsplit(".", 1)
        if leaf == "num_batches_tracked":
            continue
        name = f"{module_name}.{_BN_RENAME.get(leaf, leaf) if _is_bn(module_name) else leaf}"
        if name not in tensors:
            raise MissingTensorError(name, path)
        if tensors[name].shape != state[key].shape:
            raise CorruptArchiveError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, "
                f"expected {tuple(state[key].shape)}"
            )
        state[key] = tensors[name]
    model = model.to(tensors["encoder.conv1.weight"].dtype)
    model.load_state_dict(state)
    if dtype is not None:
        model = model.to(dtype)

    trainer_state = None
    trainer_keys = {k[len("trainer."):]: v for k, v in values.items() if k.startswith("trainer.")}
    trainer_tensors = {k[len("trainer."):]: v for k, v in tensors.items() if k.startswith("trainer.")}
    if trainer_keys or trainer_tensors:
        trainer_state = {**trainer_keys, **trainer_tensors}
    extra = {
        k: v
        for k, v in values.items()
        if not k.startswith(("model.", "trainer.")) and k not in ("loss.alpha", "loss.beta", "loss.mode", "loss.taps")
    }
    return Checkpoint(model, loss_cfg, trainer_state, extra, version)
