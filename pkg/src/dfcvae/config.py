"""Flat ``section.key = value`` run configuration.

Every key is declared in :data:`SCHEMA`; files and flag overrides naming
anything else are rejected. Values are kept as parsed Python objects and
turned into the typed config dataclasses on demand.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, str, ints, floats, strs, path
    default: Any
    help: str


SCHEMA: List[Key] = [
    Key("model.latent_dim", "int", 100, "latent vector dimension"),
    Key("model.image_side", "int", 64, "square image side in pixels"),
    Key("model.encoder_channels", "ints", [32, 64, 128, 256], "encoder conv widths"),
    Key("model.decoder_channels", "ints", [256, 128, 64, 32], "decoder conv input widths"),
    Key("model.leaky_slope", "float", 0.2, "LeakyReLU negative slope"),
    Key("model.output_activation", "str", "sigmoid", "decoder output activation: sigmoid|none"),
    Key("loss.alpha", "float", 1.0, "KL weight"),
    Key("loss.beta", "float", 0.5, "reconstruction weight"),
    Key("loss.mode", "str", "dfc", "reconstruction loss: dfc|pixel"),
    Key("loss.taps", "strs", ["relu1_1", "relu2_1", "relu3_1"], "loss-network layers"),
    Key("train.epochs", "int", 5, "training epochs"),
    Key("train.batch_size", "int", 64, "batch size"),
    Key("train.lr0", "float", 5e-4, "initial learning rate"),
    Key("train.lr_decay", "float", 0.5, "per-epoch learning-rate factor after epoch 1"),
    Key("train.adam_beta1", "float", 0.9, "Adam beta1"),
    Key("train.adam_beta2", "float", 0.999, "Adam beta2"),
    Key("train.adam_eps", "float", 1e-8, "Adam epsilon"),
    Key("train.seed", "int", 0, "seed for init, shuffling and sampling"),
    Key("train.checkpoint_every", "int", 1000, "steps between checkpoints (0: epoch ends only)"),
    Key("train.log_every", "int", 1, "steps between metrics rows"),
    Key("train.max_steps", "int", 0, "stop after this many steps (0: no limit)"),
    Key("train.dtype", "str", "float32", "parameter dtype: float32|float64"),
    Key("data.root", "path", None, "CelebA root holding the images and annotation files"),
    Key("data.image_dir", "path", None, "aligned image directory (default root/img_align_celeba)"),
    Key("data.attr_path", "path", None, "attribute file (default root/list_attr_celeba.txt)"),
    Key("data.landmark_path", "path", None, "landmark file (default root/list_landmarks_align_celeba.txt)"),
    Key("data.partition_path", "path", None, "optional official partition file"),
    Key("data.crop", "str", "center_148", "crop mode: center_148|landmark_box"),
    Key("data.center_crop", "int", 148, "center crop side before resizing"),
    Key("data.landmark_margin", "float", 0.4, "landmark box margin per side, as a fraction of box size"),
    Key("data.test_size", "int", 20000, "number of lexicographically last ids held out"),
    Key("data.limit", "int", 0, "use only the first N ids of each split (0: all)"),
    Key("data.workers", "int", 0, "image decode threads (0: decode inline)"),
    Key("loss_network.weights", "path", None, "loss-network weight archive"),
    Key("loss_network.taps", "strs", None, "override loss.taps for the loss network"),
    Key("loss_network.mean", "floats", None, "per-channel means (archive/Caffe default)"),
    Key("loss_network.std", "floats", None, "per-channel stds (archive/Caffe default)"),
    Key("loss_network.channel_order", "str", None, "RGB|BGR (archive/Caffe default)"),
    Key("loss_network.input_scale", "float", None, "multiplier applied to [0,1] pixels"),
    Key("classifier.lambda", "float", 1e-4, "hinge-loss L2 regularization"),
    Key("classifier.epochs", "int", 20, "passes of stochastic subgradient descent"),
    Key("classifier.seed", "int", 0, "classifier shuffling seed"),
    Key("classifier.train_size", "int", 0, "training ids used for classifiers (0: all)"),
    Key("latent.attributes", "strs",
        ["Attractive", "Heavy_Makeup", "Male", "Gray_Hair", "Bald", "Eyeglasses", "Young",
         "Smiling", "Pale_Skin", "Wearing_Lipstick", "No_Beard", "Blond_Hair", "Wearing_Hat"],
        "attributes used for the correlation study"),
]

KEYS: Dict[str, Key] = {k.name: k for k in SCHEMA}

CHECKPOINT_SECTIONS = ("model.", "loss.", "train.", "loss_network.")


def parse_value(kind: str, text: str) -> Any:
    text = text.strip()
    if text.lower() == "none" or (kind in ("path", "str") and not text):
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind in ("str", "path"):
            return text
        items = [t.strip() for t in text.replace(" ", ",").split(",") if t.strip()]
        if kind == "ints":
            return [int(t) for t in items]
        if kind == "floats":
            return [float(t) for t in items]
        if kind == "strs":
            return items
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as {kind}") from exc
    raise ConfigError(f"unknown value kind {kind!r}")


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_kv_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv_text(values: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


class RunConfig:
    """Resolved configuration: schema defaults < config file < overrides."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self.values: Dict[str, Any] = {k.name: k.default for k in SCHEMA}
        if values:
            self.update(values)

    def update(self, values: Mapping[str, Any], source: str = "<overrides>") -> None:
        unknown = sorted(k for k in values if k not in KEYS)
        if unknown:
            raise ConfigError(f"{source}: unknown config key(s): {', '.join(unknown)}")
        for k, v in values.items():
            if isinstance(v, str):
                v = parse_value(KEYS[k].kind, v)
            self.values[k] = v

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None):
        cfg = cls()
        if path is not None:
            with open(path) as f:
                cfg.update(parse_kv_text(f.read(), path), source=path)
        if overrides:
            cfg.update(overrides)
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __setitem__(self, key: str, value: Any) -> None:
        self.update({key: value})

    def dump(self, prefixes: Iterable[str] = ()) -> str:
        prefixes = tuple(prefixes)
        return format_kv_text(
            {k: v for k, v in self.values.items() if not prefixes or k.startswith(prefixes)}
        )

    def section(self, prefix: str) -> Dict[str, Any]:
        return {k[len(prefix) + 1:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    # -- typed views -------------------------------------------------------

    def model_config(self):
        from .model import ModelConfig

        s = self.section("model")
        return ModelConfig(**s)

    def loss_config(self):
        from .losses import LossConfig

        s = self.section("loss")
        return LossConfig(alpha=s["alpha"], beta=s["beta"], mode=s["mode"], tap_tags=s["taps"])

    def train_config(self):
        from .trainer import TrainConfig

        s = self.section("train")
        return TrainConfig(loss=self.loss_config(), **s)

    def preprocessing(self):
        """Explicit preprocessing from config keys, or None to defer to the archive."""
        from .loss_network import Preprocessing

        s = self.section("loss_network")
        given = {k: s[k] for k in ("mean", "std", "channel_order", "input_scale") if s[k] is not None}
        return Preprocessing(**given) if given else None

    def weights_path(self) -> Optional[str]:
        return self["loss_network.weights"] or os.environ.get("DFCVAE_WEIGHTS")

    def loss_taps(self) -> List[str]:
        return self["loss_network.taps"] or self["loss.taps"]

    def dataset_spec(self):
        from .data import DatasetSpec

        s = self.section("data")
        return DatasetSpec.from_root(
            root=s["root"],
            image_dir=s["image_dir"],
            attr_path=s["attr_path"],
            landmark_path=s["landmark_path"],
            partition_path=s["partition_path"],
            crop=s["crop"],
            center_crop=s["center_crop"],
            landmark_margin=s["landmark_margin"],
            test_size=s["test_size"],
            limit=s["limit"],
            image_side=self["model.image_side"],
            seed=self["train.seed"],
            workers=s["workers"],
        )
