"""Gradient attacks under an l-infinity budget, in pixel space.

Both attacks maximize a loss over the intersection of the epsilon-ball
around the clean batch and the [0, 1] pixel box. The iterated attack clamps
to precomputed per-pixel bounds after every step, so feasibility holds by
construction, up to half an ulp from forming ``x + epsilon`` in the working
dtype; nothing the model does can push an output outside the bounds.

Configured with ``steps=1``, ``alpha=epsilon`` and no random start, the
iterated attack reproduces the single-step one bit for bit, which the tests
pin down.

Attacks never touch model parameters: weights are flagged out of the
gradient pass for the duration (skipping their backward GEMMs) and restored
after.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import forward

KINDS = ("fgsm", "pgd")
OBJECTIVES = ("cross_entropy_vs_label", "kl_vs_clean_logits")


@dataclass
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 20
    random_start: bool = False
    objective: str = "cross_entropy_vs_label"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(
                f"attack objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind == "pgd":
            if self.alpha <= 0:
                raise ValueError(f"pgd alpha must be > 0, got {self.alpha}")
            if self.steps < 1:
                raise ValueError(f"pgd steps must be >= 1, got {self.steps}")


@contextmanager
def frozen_params(model):
    """Drop parameters out of the gradient pass; restore flags on exit."""
    flags = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad = flag


def input_gradient(model, x, loss_of_logits):
    """Gradient of a scalar loss of the logits with respect to the pixels."""
    xt = T.Tensor(np.asarray(x), requires_grad=True)
    loss_of_logits(forward(model, xt)).backward()
    return xt.grad


def _check_batch(x, y):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        raise TypeError(f"attack input must be floating point, got {x.dtype}")
    if x.ndim != 4:
        raise ValueError(f"attack input must be (B,C,H,W), got shape {x.shape}")
    if y is not None:
        y = np.asarray(y)
        if y.shape != (x.shape[0],):
            raise ValueError(
                f"labels shape {y.shape} does not match batch of {x.shape[0]}"
            )
    return x, y


def fgsm(model, x, y, cfg: AttackConfig):
    """Single signed-gradient step: clip(x + eps * sign(grad), 0, 1)."""
    if cfg.kind != "fgsm":
        raise ValueError(f"fgsm called with kind={cfg.kind!r} config")
    if cfg.objective != "cross_entropy_vs_label":
        raise ValueError("fgsm maximizes cross_entropy_vs_label only")
    x, y = _check_batch(x, y)
    with frozen_params(model):
        g = input_gradient(model, x, lambda z: T.cross_entropy(z, y))
    return np.clip(x + cfg.epsilon * np.sign(g), 0.0, 1.0)


def _ascend(model, x, cfg, rng, loss_of_logits, kick=0.0):
    """Shared projected-ascent loop over the ball/box intersection."""
    lo = np.maximum(x - cfg.epsilon, 0.0)
    hi = np.minimum(x + cfg.epsilon, 1.0)
    if cfg.random_start:
        if rng is None:
            raise ValueError("random_start=True requires an rng")
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape)
        x_adv = np.clip(x + noise, lo, hi).astype(x.dtype)
    elif kick:
        x_adv = np.clip(x + kick * rng.standard_normal(x.shape), lo, hi).astype(x.dtype)
    else:
        x_adv = x.copy()
    with frozen_params(model):
        for _ in range(cfg.steps):
            g = input_gradient(model, x_adv, loss_of_logits)
            x_adv = np.clip(x_adv + cfg.alpha * np.sign(g), lo, hi)
    return x_adv


def pgd(model, x, y, cfg: AttackConfig, rng=None):
    """Iterated signed-gradient ascent on the label cross-entropy."""
    if cfg.kind != "pgd":
        raise ValueError(f"pgd called with kind={cfg.kind!r} config")
    if cfg.objective != "cross_entropy_vs_label":
        raise ValueError(
            "pgd maximizes cross_entropy_vs_label; use trades_inner for the "
            "kl objective"
        )
    x, y = _check_batch(x, y)
    return _ascend(model, x, cfg, rng, lambda z: T.cross_entropy(z, y))


def trades_inner(model, x, cfg: AttackConfig, rng=None):
    """Ascend KL(softmax f(x) || softmax f(x')) in x'; f(x) held constant.

    The kl objective is stationary at the clean point (its gradient vanishes
    where x' == x), so the iterate must not start there: with random_start
    the start is uniform in the ball, otherwise a 1e-3 normal kick is
    applied. Either way an rng is required.
    """
    if cfg.kind != "pgd":
        raise ValueError("trades_inner runs the iterated attack (kind='pgd')")
    if cfg.objective != "kl_vs_clean_logits":
        raise ValueError(
            f"trades_inner requires objective='kl_vs_clean_logits', "
            f"got {cfg.objective!r}"
        )
    if rng is None:
        raise ValueError("trades_inner requires an rng for its start offset")
    x, _ = _check_batch(x, None)
    with T.no_grad():
        clean_logits = forward(model, x).data.copy()
    ref = T.Tensor(clean_logits)
    return _ascend(
        model, x, cfg, rng, lambda z: T.kl_divergence(ref, z), kick=1e-3
    )


def attack(model, x, y, cfg: AttackConfig, rng=None):
    """Dispatch on cfg.kind for callers that treat the attack as data."""
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg)
    return pgd(model, x, y, cfg, rng=rng)
