"""Finite-difference gradient oracle and small fixtures shared by the test modules."""

import numpy as np
import torch

from vivreid.backbone import BackboneConfig
from vivreid.data import generate_identity_bank, sample_batch
from vivreid.model import ModelConfig, ReIDNet


def tiny_model(num_classes=4, seed=0, dtype=torch.float64, **switches):
    torch.manual_seed(seed)
    cfg = ModelConfig(num_classes=num_classes, backbone=BackboneConfig(), **switches)
    return ReIDNet(cfg).to(dtype)


def tiny_batch(num_ids=4, P=2, K_seq=1, T=2, seed=0, dtype=torch.float64):
    bank = generate_identity_bank(num_ids, 0)
    return sample_batch(bank, P, K_seq, T, np.random.default_rng(seed)).tensors(dtype)


def finite_difference_check(loss_fn, params, n_coords=24, n_dirs=2, eps=1e-6, seed=0, coords=None):
    """Compare autograd against central differences.

    Returns a list of (analytic, numeric) pairs: ``n_coords`` single
    coordinates drawn at random from ``params`` plus ``n_dirs`` random
    directional derivatives over all of ``params`` at once. An explicit
    ``coords`` list of (tensor index, flat index) replaces the random draw.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    gen = np.random.default_rng(seed)
    pairs = []
    sizes = np.array([p.numel() for p in params], dtype=float)
    if coords is None:
        coords = []
        for _ in range(n_coords):
            k = int(gen.choice(len(params), p=sizes / sizes.sum()))
            coords.append((k, int(gen.integers(params[k].numel()))))
    for k, j in coords:
        flat = params[k].data.view(-1)
        orig = flat[j].item()
        with torch.no_grad():
            flat[j] = orig + eps
            lp = loss_fn().item()
            flat[j] = orig - eps
            lm = loss_fn().item()
            flat[j] = orig
        pairs.append((grads[k].view(-1)[j].item(), (lp - lm) / (2 * eps)))
    for _ in range(n_dirs):
        dirs = [torch.from_numpy(gen.standard_normal(p.shape)).to(p.dtype) for p in params]
        norm = torch.sqrt(sum((d * d).sum() for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum((g * d).sum() for g, d in zip(grads, dirs)).item()
        with torch.no_grad():
            for p, d in zip(params, dirs):
                p.add_(eps * d)
            lp = loss_fn().item()
            for p, d in zip(params, dirs):
                p.sub_(2 * eps * d)
            lm = loss_fn().item()
            for p, d in zip(params, dirs):
                p.add_(eps * d)
        pairs.append((analytic, (lp - lm) / (2 * eps)))
    return pairs


def roundoff_floor(loss_value, eps=1e-6, safety=10.0):
    """Absolute error a central difference can show from float64 rounding alone."""
    return safety * np.finfo(np.float64).eps * max(1.0, abs(loss_value)) / eps


def max_relative_error(pairs, atol=1e-8):
    """Largest |a - n| / max(|a|, |n|) over pairs whose gap exceeds ``atol``."""
    worst = 0.0
    for a, n in pairs:
        gap = abs(a - n)
        if gap <= atol:
            continue
        worst = max(worst, gap / max(abs(a), abs(n)))
    return worst
