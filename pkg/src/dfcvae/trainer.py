"""Adam optimization of the weighted KL + reconstruction objective."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, model_tensors, save_checkpoint
from .data import DatasetSpec, batches
from .errors import ConfigError, NonFiniteLossError, NumericError
from .loss_network import LossNetwork
from .losses import LossBreakdown, LossConfig, total_loss
from .model import VAE, ModelConfig, reparameterize

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr0: float = 5e-4
    lr_decay: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 1
    max_steps: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


def lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch: ``lr0 * lr_decay ** (epoch - 1)``."""
    if epoch < 1:
        raise ConfigError(f"epochs are 1-based, got {epoch}")
    return cfg.lr0 * cfg.lr_decay ** (epoch - 1)


def lr_schedule(cfg: TrainConfig) -> List[float]:
    return [lr_for_epoch(cfg, e) for e in range(1, cfg.epochs + 1)]


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def build_model(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> VAE:
    """Fresh VAE whose initialization depends only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = VAE(cfg)
    return model.to(dtype)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 1
    batch_in_epoch: int = 0
    lr: float = 0.0


class Trainer:
    """Owns the model, the frozen loss network, the optimizer and the
    reparameterization noise generator. Single writer: do not call
    :meth:`train_step` concurrently."""

    def __init__(
        self,
        model: VAE,
        loss_net: Optional[LossNetwork],
        cfg: TrainConfig,
        snapshot_dir: Optional[str] = None,
    ):
        if cfg.loss.mode == "dfc" and loss_net is None:
            raise ConfigError("dfc mode requires a loss network")
        self.model = model
        self.loss_net = loss_net
        self.cfg = cfg
        self.snapshot_dir = snapshot_dir
        self.state = TrainState(lr=lr_for_epoch(cfg, 1))
        self.optimizer = torch.optim.Adam(
            model.parameters(),
            lr=self.state.lr,
            betas=(cfg.adam_beta1, cfg.adam_beta2),
            eps=cfg.adam_eps,
        )
        self.generator = torch.Generator().manual_seed(cfg.seed + 1)

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch
        self.state.lr = lr_for_epoch(self.cfg, epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = self.state.lr

    def forward_loss(self, x: torch.Tensor) -> LossBreakdown:
        self.model.train()
        mu, logvar = self.model.encoder(x, check=True)
        z, _ = reparameterize(mu, logvar, generator=self.generator)
        x_rec = self.model.decoder(z, check=True)
        return total_loss(x, x_rec, mu, logvar, self.loss_net, self.cfg.loss)

    def train_step(self, x: torch.Tensor) -> LossBreakdown:
        """One forward/backward pass and one Adam update of encoder and
        decoder. The update is skipped when the gradient is exactly zero."""
        x = x.to(next(self.model.parameters()).dtype)
        try:
            breakdown = self.forward_loss(x)
        except NumericError as exc:
            raise NonFiniteLossError(
                f"step {self.state.step + 1}: {exc}", self._write_snapshot()
            ) from exc
        self.optimizer.zero_grad(set_to_none=True)
        breakdown.total.backward()
        grads = [p.grad for p in self.model.parameters() if p.grad is not None]
        sq_norm = sum(float(g.pow(2).sum()) for g in grads)
        if not np.isfinite(sq_norm):
            raise NonFiniteLossError(
                f"step {self.state.step + 1}: non-finite gradient", self._write_snapshot()
            )
        if sq_norm > 0.0:
            self.optimizer.step()
        self.state.step += 1
        return breakdown

    def _write_snapshot(self) -> Optional[str]:
        if self.snapshot_dir is None:
            return None
        os.makedirs(self.snapshot_dir, exist_ok=True)
        path = os.path.join(self.snapshot_dir, f"nonfinite_step{self.state.step + 1}.safetensors")
        save_checkpoint(self.checkpoint(), path)
        return path

    # -- persistence -------------------------------------------------------

    def trainer_state(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "step": self.state.step,
            "epoch": self.state.epoch,
            "batch_in_epoch": self.state.batch_in_epoch,
            "lr": self.state.lr,
            "rng_state": self.generator.get_state(),
        }
        names = {id(p): n for n, p in self.model.named_parameters()}
        for p, st in self.optimizer.state.items():
            name = names[id(p)]
            out[f"adam.{name}.exp_avg"] = st["exp_avg"]
            out[f"adam.{name}.exp_avg_sq"] = st["exp_avg_sq"]
            out[f"adam.{name}.step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(())
        return out

    def restore(self, state: Dict[str, object]) -> None:
        self.set_epoch(int(state["epoch"]))
        self.state.step = int(state["step"])
        self.state.batch_in_epoch = int(state["batch_in_epoch"])
        self.generator.set_state(state["rng_state"])
        for name, p in self.model.named_parameters():
            key = f"adam.{name}.exp_avg"
            if key in state:
                self.optimizer.state[p] = {
                    "step": state[f"adam.{name}.step"].clone(),
                    "exp_avg": state[key].clone().to(p.dtype),
                    "exp_avg_sq": state[f"adam.{name}.exp_avg_sq"].clone().to(p.dtype),
                }

    def checkpoint(self, metadata: Optional[Dict[str, object]] = None) -> Checkpoint:
        return Checkpoint(
            self.model, self.cfg.loss, self.trainer_state(), dict(metadata or {})
        )


METRICS_FILE = "metrics.csv"
LATEST = "latest.safetensors"
FINAL = "final.safetensors"


def metrics_header(loss_cfg: LossConfig, taps: Iterable[str]) -> List[str]:
    rec = [f"rec_{t}" for t in taps] if loss_cfg.mode == "dfc" else []
    return ["step", "kl", *rec, "rec_total", "total", "lr"]


def _truncate_metrics(path: str, last_step: int) -> None:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= last_step]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(kept)


def fit(
    model: VAE,
    loss_net: Optional[LossNetwork],
    data: DatasetSpec,
    cfg: TrainConfig,
    out_dir: str,
    resume: bool = True,
    metadata: Optional[Dict[str, object]] = None,
    ids: Optional[List[str]] = None,
) -> Tuple[Checkpoint, str]:
    """Train for ``cfg.epochs`` epochs (or ``cfg.max_steps`` steps).

    Writes ``metrics.csv``, ``latest.safetensors`` every
    ``cfg.checkpoint_every`` steps and at each epoch end, and
    ``final.safetensors``. With ``resume`` an existing ``latest`` checkpoint
    in ``out_dir`` is continued from its step counter.
    """
    os.makedirs(out_dir, exist_ok=True)
    trainer = Trainer(model, loss_net, cfg, snapshot_dir=out_dir)
    taps = loss_net.taps if loss_net is not None else []
    header = metrics_header(cfg.loss, taps)
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    latest = os.path.join(out_dir, LATEST)

    if resume and os.path.exists(latest):
        ckpt = load_checkpoint(latest)
        model.load_state_dict(ckpt.model.state_dict())
        trainer.restore(ckpt.trainer_state)
        log.info("resumed from %s at step %d", latest, trainer.state.step)
        if os.path.exists(metrics_path):
            _truncate_metrics(metrics_path, trainer.state.step)
    else:
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f).writerow(header)

    def save(path):
        save_checkpoint(trainer.checkpoint(metadata), path)

    with open(metrics_path, "a", newline="") as f:
        writer = csv.writer(f)
        done = False
        while trainer.state.epoch <= cfg.epochs and not done:
            epoch = trainer.state.epoch
            trainer.set_epoch(epoch)
            stream = batches(
                data, cfg.batch_size, epoch_seed(cfg.seed, epoch), ids=ids,
                skip=trainer.state.batch_in_epoch,
            )
            for x, _ in stream:
                expected = trainer.state.step + 1
                breakdown = trainer.train_step(x)
                assert trainer.state.step == expected, "step counter lost continuity"
                trainer.state.batch_in_epoch += 1
                step = trainer.state.step
                if step % max(cfg.log_every, 1) == 0:
                    row = breakdown.as_floats()
                    writer.writerow(
                        [step, repr(row["kl"])]
                        + [repr(row[f"rec_{t}"]) for t in taps if cfg.loss.mode == "dfc"]
                        + [repr(row["rec_total"]), repr(row["total"]), repr(trainer.state.lr)]
                    )
                    f.flush()
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save(latest)
                if cfg.max_steps and step >= cfg.max_steps:
                    done = True
                    break
            if not done:
                trainer.state.batch_in_epoch = 0
                trainer.state.epoch = epoch + 1
                save(latest)
                log.info("epoch %d done at step %d", epoch, trainer.state.step)

    final = trainer.checkpoint(metadata)
    save_checkpoint(final, os.path.join(out_dir, FINAL))
    save(latest)
    return final, metrics_path


def loss_network_is_unchanged(before: Dict[str, torch.Tensor], net: LossNetwork) -> bool:
    return all(torch.equal(before[k], v) for k, v in net.named_weights().items())


def snapshot_weights(net: LossNetwork) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in net.named_weights().items()}


def model_snapshot(model: VAE) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model_tensors(model).items()}
