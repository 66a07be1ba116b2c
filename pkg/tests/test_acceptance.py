"""Acceptance suite: one test per numbered criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and immediately, when run with ``-s``). Criteria 5, 6, 7 and 9 train real
64x64 models against a full-depth VGG-19 with random stand-in weights and
are marked ``slow``; on a single CPU core the whole file takes about ten
minutes.
"""

import math
import re
import time

import numpy as np
import pytest
import torch

from dfcvae.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from dfcvae.classifier import accuracy, evaluate, train_attribute_classifiers, train_linear_svm
from dfcvae.data import DatasetSpec, batches, load_and_preprocess, parse_attribute_text, parse_landmark_text
from dfcvae.errors import ParseError
from dfcvae.latent import AttributeVector, attribute_vector_from_latents, encode_ids, interpolate, pearson_correlation
from dfcvae.loss_network import load_loss_network
from dfcvae.losses import LossConfig, feature_distance, feature_layer_loss, kl_loss, pixel_loss
from dfcvae.model import ModelConfig, decode, encode
from dfcvae.trainer import (
    TrainConfig,
    Trainer,
    build_model,
    epoch_seed,
    loss_network_is_unchanged,
    lr_schedule,
    model_snapshot,
    snapshot_weights,
)

from conftest import ACCEPTANCE
from corpus import ATTRIBUTE_BAD, ATTRIBUTE_GOOD, LANDMARK_BAD, LANDMARK_GOOD
from gradcheck import ZERO_ATOL, check
from test_losses import mc_kl


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
    return bool(ok)


def test_1_gradient_oracle():
    start = time.perf_counter()
    parts, ok = [], True
    for mode in ("dfc", "pixel"):
        rel, zero_abs = check(mode, n_samples=400, seed=1)
        good = len(rel) >= 200 and rel.max() < 1e-4 and (len(zero_abs) == 0 or zero_abs.max() < ZERO_ATOL)
        ok &= good
        parts.append(f"{mode}: {len(rel)} entries, max rel {rel.max():.1e}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert record(1, ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_2_kl_oracle():
    start = time.perf_counter()
    g = torch.Generator().manual_seed(11)
    worst = 0.0
    for _ in range(20):
        mu = torch.randn(8, generator=g, dtype=torch.float64)
        logvar = torch.rand(8, generator=g, dtype=torch.float64) * 2 - 1
        closed = kl_loss(mu[None], logvar[None]).item()
        worst = max(worst, abs(mc_kl(mu, logvar, 100_000, g) - closed) / closed)
    at_prior = kl_loss(torch.zeros(4, 100), torch.zeros(4, 100)).item()
    # per-draw scales from 1e-6 to ~3 so many draws sit right next to the prior
    scales = 10 ** (torch.rand(1000, 1, 1, generator=g, dtype=torch.float64) * 6.5 - 6)
    draws = torch.randn(1000, 2, 16, generator=g, dtype=torch.float64) * scales
    lowest = min(kl_loss(d[0][None], d[1][None]).item() for d in draws)
    elapsed = time.perf_counter() - start
    ok = worst < 0.01 and at_prior == 0.0 and lowest >= -1e-9 and elapsed < 60
    assert record(2, ok, f"max MC rel err {worst:.2e}, prior {at_prior}, min over 1000 draws {lowest:.3g}, {elapsed:.1f}s")


def test_3_feature_loss_unit_values():
    shapes = [(1, 1, 1, 1), (2, 3, 4, 5), (4, 64, 32, 32), (1, 512, 4, 4)]
    a = torch.rand(2, 3, 4, 5, generator=torch.Generator().manual_seed(0))
    ok = feature_layer_loss(a, a.clone()).item() == 0.0
    ok &= all(feature_layer_loss(torch.ones(s), torch.zeros(s)).item() == 0.5 for s in shapes)
    assert record(3, ok, f"identical -> 0; ones vs zeros -> 0.5 for shapes {shapes}")


def test_4_schedule():
    got = lr_schedule(TrainConfig())
    want = [5e-4 * f for f in (1, 0.5, 0.25, 0.125, 0.0625)]
    assert record(4, got == want, f"{got}")


STEPS = 500
REPLAY = 20
TAPS = ["relu1_1", "relu2_1", "relu3_1"]


def _train(x, mode, net, steps, hooks=None):
    cfg = TrainConfig(batch_size=len(x), seed=0, loss=LossConfig(mode=mode, tap_tags=TAPS))
    trainer = Trainer(build_model(ModelConfig(), seed=0), net if mode == "dfc" else None, cfg)
    totals = []
    for _ in range(steps):
        totals.append(trainer.train_step(x).total.item())
        for fn in (hooks or {}).get(trainer.state.step, []):
            fn(trainer)
    return trainer, totals


def _reconstruct(model, x):
    mu, _ = encode(model.encoder, x)
    return decode(model.decoder, mu)


@pytest.fixture(scope="module")
def overfit(celeba_root, vgg_weights_path):
    """Equal-step dfc and pixel runs on the same 16 images, full batch.

    500 steps run at full count here (about 7 minutes for dfc on one CPU
    core), so no step reduction is needed."""
    spec = DatasetSpec.from_root(celeba_root, test_size=0)
    x = load_and_preprocess(spec, spec.train_ids[:16])
    net = load_loss_network(vgg_weights_path, TAPS)
    frozen = snapshot_weights(net)
    seen = {}
    hooks = {
        REPLAY: [lambda t: seen.update(prefix=model_snapshot(t.model))],
        100: [lambda t: seen.update(frozen_at_100=loss_network_is_unchanged(frozen, net))],
    }
    dfc, dfc_totals = _train(x, "dfc", net, STEPS, hooks)
    seen["frozen_at_end"] = loss_network_is_unchanged(frozen, net)
    pixel, pixel_totals = _train(x, "pixel", net, STEPS)
    return dict(x=x, net=net, dfc=dfc, dfc_totals=dfc_totals, pixel=pixel, pixel_totals=pixel_totals, **seen)


@pytest.mark.slow
def test_5_overfit_convergence(overfit):
    totals = overfit["dfc_totals"]
    ratio = totals[-1] / totals[0]
    # determinism: an independent replay of the first steps matches bitwise
    replay, replay_totals = _train(overfit["x"], "dfc", overfit["net"], REPLAY)
    now = model_snapshot(replay.model)
    same = replay_totals == totals[:REPLAY] and all(torch.equal(now[k], v) for k, v in overfit["prefix"].items())
    ok = ratio < 0.5 and same
    assert record(5, ok, f"L_total {totals[0]:.1f} -> {totals[-1]:.1f} (ratio {ratio:.3f}) over {STEPS} steps; "
                         f"{REPLAY}-step replay bitwise equal: {same}")


def _separation(overfit):
    x, net = overfit["x"], overfit["net"]
    out = {}
    for mode in ("dfc", "pixel"):
        rec = _reconstruct(overfit[mode].model, x)
        out[mode] = (pixel_loss(x, rec).item(), feature_distance(x, rec, net).item())
    return out


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="with alpha=1, beta=0.5, KL summed over 100 dims and per-pixel mean MSE, the pixel-mode "
    "optimum is posterior collapse: the whole reconstruction term is worth at most beta*MSE(mean image) "
    "~0.02 while identifying 16 images costs ~log(16) nats of KL, so it cannot beat the dfc model's pixel MSE",
)
def test_6_mode_separation(overfit):
    m = _separation(overfit)
    pixel_wins_mse = m["pixel"][0] < m["dfc"][0]
    dfc_wins_features = m["dfc"][1] < m["pixel"][1]
    assert record(6, pixel_wins_mse and dfc_wins_features,
                  f"pixel MSE dfc={m['dfc'][0]:.4f} pixel={m['pixel'][0]:.4f}; "
                  f"feature distance dfc={m['dfc'][1]:.1f} pixel={m['pixel'][1]:.1f}")


@pytest.mark.slow
def test_6_dfc_half_and_collapse_diagnosis(overfit):
    """The half of criterion 6 that holds, plus the collapse that explains the other half."""
    m = _separation(overfit)
    assert m["dfc"][1] < m["pixel"][1]
    x = overfit["x"]
    mu, logvar = encode(overfit["pixel"].model.encoder, x)
    assert kl_loss(mu, logvar).item() < 0.05
    mean_image_mse = pixel_loss(x, x.mean(0, keepdim=True).expand_as(x)).item()
    # the largest reconstruction gain available is far below the KL price of telling the images apart
    assert 0.5 * mean_image_mse < math.log(16)


@pytest.mark.slow
def test_7_loss_network_frozen(overfit):
    ok = overfit["frozen_at_100"] and overfit["frozen_at_end"]
    assert record(7, ok, f"bitwise unchanged after 100 steps: {overfit['frozen_at_100']}, "
                         f"after {STEPS}: {overfit['frozen_at_end']}")


def test_8_latent_algebra():
    rng = np.random.default_rng(8)
    left, right = rng.normal(size=100), rng.normal(size=100)
    ends = interpolate(left, right, [0.0, 1.0])
    exact = np.array_equal(ends[0], left) and np.array_equal(ends[1], right)

    d = rng.normal(size=100)
    d *= 10 / np.linalg.norm(d)
    est = attribute_vector_from_latents("planted", rng.normal(size=(1000, 100)) + d, rng.normal(size=(1000, 100)))
    err = np.linalg.norm(est.vector - d) / np.linalg.norm(d)

    vecs = [AttributeVector(str(i), rng.normal(size=100), 1, 1) for i in range(13)]
    m = pearson_correlation(vecs).values
    asym, diag = np.abs(m - m.T).max(), np.abs(np.diag(m) - 1).max()
    ok = exact and err < 0.1 and asym <= 1e-12 and diag <= 1e-12
    assert record(8, ok, f"endpoints exact: {exact}; planted rel err {err:.3f}; asymmetry {asym:.1e}, diagonal {diag:.1e}")


CLF_STEPS = 40


@pytest.mark.slow
def test_9_linear_classifier(celeba_large, vgg_weights_path):
    rng = np.random.default_rng(0)
    y = np.where(np.arange(400) % 2 == 0, 1, -1)
    x = rng.normal(size=(400, 2))
    x[:, 0] += 5 * y
    toy = accuracy(train_linear_svm(x, y).predict(x), y)

    spec = DatasetSpec.from_root(celeba_large, test_size=200)
    assert (len(spec.train_ids), len(spec.test_ids)) == (500, 200)
    net = load_loss_network(vgg_weights_path, TAPS)
    cfg = TrainConfig(batch_size=32, seed=0, loss=LossConfig(tap_tags=TAPS))
    trainer = Trainer(build_model(ModelConfig(), seed=0), net, cfg)
    epoch = 1
    while trainer.state.step < CLF_STEPS:
        for batch, _ in batches(spec, cfg.batch_size, epoch_seed(cfg.seed, epoch)):
            if trainer.state.step >= CLF_STEPS:
                break
            trainer.train_step(batch)
        epoch += 1

    names = ["Eyeglasses", "Male"]
    cols = [spec.attributes.attribute_names.index(n) for n in names]
    z_train = encode_ids(trainer.model.encoder, spec, spec.train_ids)
    z_test = encode_ids(trainer.model.encoder, spec, spec.test_ids)
    y_train = spec.attributes.matrix(spec.train_ids)[:, cols]
    y_test = spec.attributes.matrix(spec.test_ids)[:, cols]
    report = evaluate(train_attribute_classifiers(z_train, y_train, names), z_test, y_test)
    ok, parts = toy == 100.0, [f"toy {toy:.1f}%"]
    for j, name in enumerate(names):
        majority = 100 * max((y_test[:, j] == 1).mean(), (y_test[:, j] == -1).mean())
        ok &= report.accuracies[name] > majority + 2
        parts.append(f"{name} {report.accuracies[name]:.1f}% vs majority {majority:.1f}%")
    assert record(9, ok, "; ".join(parts) + f" (encoder trained {CLF_STEPS} steps)")


def test_10_checkpoint_round_trip(tmp_path):
    cfg = TrainConfig(batch_size=8, seed=2, loss=LossConfig(mode="pixel"))
    trainer = Trainer(build_model(ModelConfig(), seed=2), None, cfg)
    g = torch.Generator().manual_seed(10)
    for _ in range(3):
        trainer.train_step(torch.rand(8, 3, 64, 64, generator=g))
    path = str(tmp_path / "c.safetensors")
    save_checkpoint(Checkpoint(trainer.model, cfg.loss), path)
    loaded = load_checkpoint(path)
    x = torch.rand(6, 3, 64, 64, generator=g)
    mu_a, lv_a = encode(trainer.model.encoder, x)
    mu_b, lv_b = encode(loaded.encoder, x)
    ok = torch.equal(mu_a, mu_b) and torch.equal(lv_a, lv_b)
    ok = ok and torch.equal(decode(trainer.model.decoder, mu_a), decode(loaded.decoder, mu_b))
    assert record(10, ok, "eval-mode mu, logvar and decoded images bitwise identical")


def _fails_at(parse, text, line, pattern):
    try:
        parse(text, "fixture.txt")
    except ParseError as exc:
        return exc.line == line and re.search(pattern, str(exc)) is not None
    return False


def test_11_parser_corpus():
    attrs = parse_attribute_text(ATTRIBUTE_GOOD)
    marks = parse_landmark_text(LANDMARK_GOOD)
    good = len(attrs.rows) == 3 and len(marks.rows) == 3
    bad = [(name, _fails_at(parse_attribute_text, t, line, p)) for name, t, line, p in ATTRIBUTE_BAD]
    bad += [(name, _fails_at(parse_landmark_text, t, line, p)) for name, t, line, p in LANDMARK_BAD]
    wrong = [name for name, hit in bad if not hit]
    ok = good and not wrong
    assert record(11, ok, f"well-formed parse: {good}; {len(bad) - len(wrong)}/{len(bad)} malformed variants "
                          f"rejected at the right line" + (f"; wrong: {wrong}" if wrong else ""))
