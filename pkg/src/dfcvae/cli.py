"""``dfcvae`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from . import __version__
from .config import SCHEMA, RunConfig
from .errors import ConfigError, DFCVAEError

log = logging.getLogger("dfcvae")

MODES = {
    "dfc123": ("dfc", ["relu1_1", "relu2_1", "relu3_1"]),
    "dfc345": ("dfc", ["relu3_1", "relu4_1", "relu5_1"]),
    "pixel": ("pixel", ["relu1_1", "relu2_1", "relu3_1"]),
}


class _ArgumentParser(argparse.ArgumentParser):
    """Raise instead of exiting so :func:`dispatch` can return a code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _config_parent() -> argparse.ArgumentParser:
    p = _ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="key = value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    g.add_argument("--seed", type=int, help="seed for all randomness (train.seed, classifier.seed)")
    g.add_argument("--data", metavar="DIR", help="CelebA root (data.root)")
    g.add_argument("--weights", metavar="FILE",
                   help="loss-network weight archive (loss_network.weights; env DFCVAE_WEIGHTS)")
    g.add_argument("--mode", choices=sorted(MODES), help="dfc123 | dfc345 | pixel (sets loss.mode, loss.taps)")
    keys = p.add_argument_group("config keys (each overrides the matching key)")
    for key in SCHEMA:
        keys.add_argument(f"--{key.name}", dest=f"key:{key.name}", metavar=key.kind.upper(),
                          help=f"{key.help} (default: {key.default})")
    return p


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = _ArgumentParser(prog="dfcvae", description="VAE with a perceptual feature loss, plus latent-space tools")
    parser.add_argument("--version", action="version", version=f"dfcvae {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_ArgumentParser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[parent])

    p = add("train", "train a VAE")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--no-resume", action="store_true", help="ignore an existing latest checkpoint")

    p = add("reconstruct", "encode and decode images into a comparison sheet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, nargs="+")
    p.add_argument("--grid", required=True, metavar="PNG")

    p = add("sample", "decode standard-normal latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--grid", required=True, metavar="PNG")

    p = add("interpolate", "decode a linear path between two latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True, help="image path or integer seed")
    p.add_argument("--right", required=True, help="image path or integer seed")
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--grid", required=True, metavar="PNG")

    p = add("attr-vector", "mean latent difference for one attribute")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attribute", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("attr-apply", "add scaled attribute vectors to latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attr", required=True, metavar="FILE")
    p.add_argument("--base", nargs="+", default=["0"], help="image paths or integer seeds, one row each")
    p.add_argument("--alpha-range", default="0:1:0.1", metavar="START:STOP:STEP")
    p.add_argument("--grid", required=True, metavar="PNG")

    p = add("attr-corr", "Pearson correlation between attribute vectors")
    p.add_argument("--attrs", required=True, nargs="+", metavar="FILE")
    p.add_argument("--csv", required=True, metavar="FILE")

    p = add("embed-export", "export latent means and thumbnails for embedding tools")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1600)
    p.add_argument("--out", required=True, metavar="DIR")

    p = add("predict-attrs", "train/evaluate linear attribute classifiers on latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", action="store_true", help="train classifiers on the train split")
    p.add_argument("--eval", action="store_true", help="evaluate classifiers on the test split")
    p.add_argument("--classifiers", metavar="FILE", help="classifier archive to write/read")
    p.add_argument("--attributes", nargs="+", help="subset of attributes (default: all 40)")
    p.add_argument("--report", metavar="CSV")

    p = add("init-weights", "write a randomly initialized 19-layer loss-network archive (testing aid)")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("synth-data", "write a synthetic CelebA-layout dataset (testing aid)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--n", type=int, default=256)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides: Dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in SCHEMA:
        v = getattr(args, f"key:{key.name}", None)
        if v is not None:
            overrides[key.name] = v
    cfg.update(overrides)
    if args.seed is not None:
        cfg.update({"train.seed": args.seed, "classifier.seed": args.seed})
    if args.data is not None:
        cfg.update({"data.root": args.data})
    if args.weights is not None:
        cfg.update({"loss_network.weights": args.weights})
    if args.mode is not None:
        mode, taps = MODES[args.mode]
        cfg.update({"loss.mode": mode, "loss.taps": taps})
    return cfg


# -- helpers ----------------------------------------------------------------


def _load_loss_network(cfg: RunConfig, dtype=torch.float32, required: bool = True):
    from .loss_network import load_loss_network

    path = cfg.weights_path()
    if path is None:
        if required:
            raise ConfigError("no loss-network weights: pass --weights or set DFCVAE_WEIGHTS")
        return None
    return load_loss_network(path, cfg.loss_taps(), preprocessing=cfg.preprocessing(), dtype=dtype)


def _load_model(path: str):
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(path)
    ckpt.model.eval()
    return ckpt


def _latent_for(token: str, ckpt, cfg: RunConfig) -> torch.Tensor:
    """Posterior mean of an image file, or a seeded N(0, I) draw for an integer."""
    from .data import prepare_image
    from .model import encode, sample_latents

    mcfg = ckpt.model_config
    dtype = next(ckpt.model.parameters()).dtype
    if os.path.exists(token):
        with Image.open(token) as img:
            x = prepare_image(img, mcfg.image_side, cfg["data.center_crop"]).unsqueeze(0)
        mu, _ = encode(ckpt.encoder, x.to(dtype), mode="eval")
        return mu[0]
    try:
        seed = int(token)
    except ValueError:
        raise ConfigError(f"{token!r} is neither an existing image nor an integer seed")
    return sample_latents(1, mcfg.latent_dim, seed, dtype=dtype)[0]


def _decode_rows(ckpt, rows: Sequence[Sequence[np.ndarray]]):
    from .model import decode

    dtype = next(ckpt.model.parameters()).dtype
    out = []
    for row in rows:
        z = torch.as_tensor(np.stack(row)).to(dtype)
        out.append(list(decode(ckpt.decoder, z, mode="eval")))
    return out


def _parse_range(text: str) -> List[float]:
    from .latent import alpha_steps

    try:
        start, stop, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise ConfigError(f"--alpha-range expects START:STOP:STEP, got {text!r}")
    return alpha_steps(start, stop, step)


# -- subcommands ------------------------------------------------------------


def cmd_train(args, cfg: RunConfig) -> None:
    from .trainer import build_model, fit

    tcfg = cfg.train_config()
    data = cfg.dataset_spec()
    net = _load_loss_network(cfg, tcfg.torch_dtype, required=tcfg.loss.mode == "dfc")
    model = build_model(cfg.model_config(), tcfg.seed, tcfg.torch_dtype)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "run.cfg"), "w") as f:
        f.write(cfg.dump())
    metadata = {k: v for k, v in cfg.values.items() if k.startswith(("train.", "loss_network."))}
    if net is not None:
        metadata.update(net.preprocessing.to_metadata())
    ckpt, metrics = fit(model, net, data, tcfg, args.out, resume=not args.no_resume, metadata=metadata)
    print(f"final checkpoint: {os.path.join(args.out, 'final.safetensors')}")
    print(f"metrics: {metrics}")


def cmd_reconstruct(args, cfg: RunConfig) -> None:
    from .data import prepare_image
    from .grid import save_grid
    from .model import decode, encode

    ckpt = _load_model(args.checkpoint)
    side = ckpt.model_config.image_side
    dtype = next(ckpt.model.parameters()).dtype
    xs = []
    for path in args.images:
        with Image.open(path) as img:
            xs.append(prepare_image(img, side, cfg["data.center_crop"]))
    x = torch.stack(xs).to(dtype)
    mu, _ = encode(ckpt.encoder, x, mode="eval")
    rec = decode(ckpt.decoder, mu, mode="eval")
    save_grid([list(x), list(rec)], args.grid)


def cmd_sample(args, cfg: RunConfig) -> None:
    from .grid import save_grid, square_rows
    from .model import sample_images

    ckpt = _load_model(args.checkpoint)
    images = sample_images(ckpt.decoder, args.n, cfg["train.seed"])
    save_grid(square_rows(images), args.grid)


def cmd_interpolate(args, cfg: RunConfig) -> None:
    from .grid import save_grid
    from .latent import interpolate

    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    ckpt = _load_model(args.checkpoint)
    left = _latent_for(args.left, ckpt, cfg).double().numpy()
    right = _latent_for(args.right, ckpt, cfg).double().numpy()
    alphas = [i / (args.steps - 1) for i in range(args.steps)]
    save_grid(_decode_rows(ckpt, [interpolate(left, right, alphas)]), args.grid)


def cmd_attr_vector(args, cfg: RunConfig) -> None:
    from .latent import attribute_vector, select_attribute_ids

    ckpt = _load_model(args.checkpoint)
    data = cfg.dataset_spec()
    pos, neg = select_attribute_ids(data, args.attribute, args.n, cfg["train.seed"])
    attr = attribute_vector(ckpt.encoder, pos, neg, data, args.attribute)
    attr.save(args.out)
    print(f"{args.attribute}: {attr.n_pos} positive, {attr.n_neg} negative, |v| = {np.linalg.norm(attr.vector):.4f}")


def cmd_attr_apply(args, cfg: RunConfig) -> None:
    from .grid import save_grid
    from .latent import AttributeVector, apply_attribute

    ckpt = _load_model(args.checkpoint)
    attr = AttributeVector.load(args.attr)
    alphas = _parse_range(args.alpha_range)
    rows = [apply_attribute(_latent_for(b, ckpt, cfg).double().numpy(), attr, alphas) for b in args.base]
    save_grid(_decode_rows(ckpt, rows), args.grid)


def cmd_attr_corr(args, cfg: RunConfig) -> None:
    from .latent import AttributeVector, pearson_correlation

    matrix = pearson_correlation([AttributeVector.load(p) for p in args.attrs])
    matrix.to_csv(args.csv)


def cmd_embed_export(args, cfg: RunConfig) -> None:
    from .latent import export_embedding_inputs

    ckpt = _load_model(args.checkpoint)
    data = cfg.dataset_spec()
    pool = data.train_ids + data.test_ids
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    rng = np.random.default_rng(cfg["train.seed"])
    ids = [pool[i] for i in sorted(rng.choice(len(pool), min(args.n, len(pool)), replace=False))]
    path = export_embedding_inputs(ckpt.encoder, ids, data, args.out)
    print(f"wrote {len(ids)} rows to {path}")


def cmd_predict_attrs(args, cfg: RunConfig) -> None:
    from .classifier import (
        check_disjoint, evaluate, load_classifiers, save_classifiers, train_attribute_classifiers,
    )
    from .latent import encode_ids

    if not (args.train or args.eval):
        raise ConfigError("predict-attrs needs --train and/or --eval")
    ckpt = _load_model(args.checkpoint)
    data = cfg.dataset_spec()
    check_disjoint(data.train_ids, data.test_ids)
    crop_data = data.with_crop("landmark_box") if data.landmark_path else data
    table = data.attributes
    names = args.attributes or table.attribute_names
    cols = [table.attribute_names.index(n) for n in names]
    classifiers_path = args.classifiers or os.path.join(
        os.path.dirname(os.path.abspath(args.report or args.checkpoint)), "classifiers.safetensors"
    )
    if args.train:
        train_ids = data.train_ids
        if cfg["classifier.train_size"]:
            train_ids = train_ids[: cfg["classifier.train_size"]]
        x = encode_ids(ckpt.encoder, crop_data, train_ids)
        classifiers = train_attribute_classifiers(
            x, table.matrix(train_ids)[:, cols], names,
            cfg["classifier.lambda"], cfg["classifier.epochs"], cfg["classifier.seed"],
        )
        save_classifiers(classifiers, classifiers_path)
        print(f"classifiers: {classifiers_path}")
    else:
        classifiers = [c for c in load_classifiers(classifiers_path) if c.attribute_name in names]
    if args.eval:
        x = encode_ids(ckpt.encoder, crop_data, data.test_ids)
        labels = table.matrix(data.test_ids)[:, [table.attribute_names.index(c.attribute_name) for c in classifiers]]
        report = evaluate(classifiers, x, labels)
        if args.report:
            report.to_csv(args.report)
        for name, acc in report.accuracies.items():
            print(f"{name:22s} {acc:6.2f}")
        print(f"{'Average':22s} {report.average:6.2f}")


def cmd_init_weights(args, cfg: RunConfig) -> None:
    from .loss_network import random_weights, save_weights, vgg19_layers

    save_weights(random_weights(vgg19_layers(), cfg["train.seed"]), args.out, cfg.preprocessing())


def cmd_synth_data(args, cfg: RunConfig) -> None:
    from .synthetic import make_celeba_fixture

    make_celeba_fixture(args.out, args.n, cfg["train.seed"])


COMMANDS = {
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "sample": cmd_sample,
    "interpolate": cmd_interpolate,
    "attr-vector": cmd_attr_vector,
    "attr-apply": cmd_attr_apply,
    "attr-corr": cmd_attr_corr,
    "embed-export": cmd_embed_export,
    "predict-attrs": cmd_predict_attrs,
    "init-weights": cmd_init_weights,
    "synth-data": cmd_synth_data,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except DFCVAEError as exc:
        print(f"dfcvae {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dfcvae {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
