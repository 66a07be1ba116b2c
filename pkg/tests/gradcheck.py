"""Central finite-difference check of total_loss gradients on a tiny VAE."""

import numpy as np
import torch

from dfcvae.losses import LossConfig, total_loss
from dfcvae.model import reparameterize
from dfcvae.trainer import build_model

from conftest import TINY_TAPS, tiny_config, tiny_loss_network


def make_problem(mode, seed=0, batch=4):
    cfg = tiny_config()
    model = build_model(cfg, seed=seed, dtype=torch.float64)
    # default init is tiny (std 0.02); widen it so every path carries signal
    g = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.3 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    net = tiny_loss_network(torch.float64)
    loss_cfg = LossConfig(mode=mode, tap_tags=TINY_TAPS)
    x = torch.rand(batch, 3, 8, 8, generator=g, dtype=torch.float64)
    eps = torch.randn(batch, cfg.latent_dim, generator=g, dtype=torch.float64)

    def loss():
        model.train()
        mu, logvar = model.encoder(x)
        z, _ = reparameterize(mu, logvar, eps=eps)
        return total_loss(x, model.decoder(z), mu, logvar, net, loss_cfg).total

    return model, net, loss


ZERO_SCALE = 1e-7  # below this both gradients count as structurally zero
ZERO_ATOL = 1e-8


def check(mode, n_samples=400, h=1e-5, seed=0):
    """Compare analytic and central-difference gradients on ``n_samples``
    parameter entries drawn uniformly over all parameters.

    Returns ``(rel, zero_abs)``: relative errors for entries with a
    nonzero gradient, and absolute errors for entries whose gradient is
    zero by construction (conv biases feeding batch norm, kernel taps that
    only ever see padding), where a relative error is meaningless.
    """
    model, net, loss = make_problem(mode, seed)
    params = list(model.parameters())
    model.zero_grad()
    loss().backward()
    analytic = [p.grad.detach().clone() for p in params]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    rel, zero_abs = [], []
    with torch.no_grad():
        for f in rng.choice(sizes.sum(), size=n_samples, replace=False):
            k = int(np.searchsorted(offsets, f, side="right") - 1)
            i = int(f - offsets[k])
            view = params[k].view(-1)
            orig = view[i].item()
            view[i] = orig + h
            up = loss().item()
            view[i] = orig - h
            down = loss().item()
            view[i] = orig
            num = (up - down) / (2 * h)
            a = analytic[k].view(-1)[i].item()
            scale = max(abs(a), abs(num))
            if scale < ZERO_SCALE:
                zero_abs.append(abs(a - num))
            else:
                rel.append(abs(a - num) / scale)
    return np.array(rel), np.array(zero_abs)


def check_each_tensor(mode, h=1e-5, seed=0):
    """Relative error at the largest-gradient entry of every parameter
    tensor whose gradient is not identically zero."""
    model, net, loss = make_problem(mode, seed)
    model.zero_grad()
    loss().backward()
    out = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            g = p.grad.view(-1)
            i = int(g.abs().argmax())
            a = g[i].item()
            if abs(a) < ZERO_SCALE:
                continue
            view = p.view(-1)
            orig = view[i].item()
            view[i] = orig + h
            up = loss().item()
            view[i] = orig - h
            down = loss().item()
            view[i] = orig
            num = (up - down) / (2 * h)
            out[name] = abs(a - num) / max(abs(a), abs(num))
    return out
