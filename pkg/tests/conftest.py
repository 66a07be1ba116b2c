
import pytest
import torch

from dfcvae.loss_network import (
    LossNetwork,
    Preprocessing,
    build_layer_table,
    random_weights,
    save_weights,
    vgg19_layers,
)
from dfcvae.model import ModelConfig
from dfcvae.synthetic import make_celeba_fixture

torch.set_num_threads(1)

TINY_LAYERS = build_layer_table([(4, 1), (6, 1)])
TINY_TAPS = ["relu1_1", "relu2_1"]
TINY_PRE = Preprocessing(mean=[0.5, 0.5, 0.5], std=[0.25, 0.25, 0.25], channel_order="RGB", input_scale=1.0)


def tiny_config(**kw):
    base = dict(latent_dim=4, image_side=8, encoder_channels=[4, 6, 8], decoder_channels=[8, 6, 4])
    base.update(kw)
    return ModelConfig(**base)


def tiny_loss_network(dtype=torch.float64, seed=3):
    """2-conv stand-in loss network with random frozen weights."""
    net = LossNetwork(TINY_LAYERS, TINY_TAPS, TINY_PRE)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, t in net.named_weights().items():
            t.copy_(torch.randn(t.shape, generator=g) * (0.5 if name.endswith("weight") else 0.1))
    return net.to(dtype)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_net():
    return tiny_loss_network()


@pytest.fixture(scope="session")
def vgg_weights_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vgg19_random.safetensors"
    save_weights(random_weights(vgg19_layers(), seed=0), str(path))
    return str(path)


@pytest.fixture(scope="session")
def celeba_root(tmp_path_factory):
    """Synthetic CelebA-layout dataset with 120 images."""
    root = tmp_path_factory.mktemp("celeba")
    make_celeba_fixture(str(root), 120, seed=7)
    return str(root)


@pytest.fixture(scope="session")
def celeba_large(tmp_path_factory):
    """700 synthetic images for the 500/200 classifier smoke property."""
    root = tmp_path_factory.mktemp("celeba_large")
    make_celeba_fixture(str(root), 700, seed=11)
    return str(root)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
