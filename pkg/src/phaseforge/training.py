"""Training loops: plain classification, adversarial training, and the
distribution-matching (TRADES-style) objective, each composable with
frequency-domain batch synthesis.

A step works on one batch. What the model actually sees is decided by
``mode``:

  clean        the batch as loaded
  adv          attacked copies
  aa           attacked, then the adversarial amplitude is recombined with
               the clean phase
  ap           attacked, then the clean amplitude with the adversarial phase
  c_and_adv    clean batch and attacked batch concatenated (labels repeat
               in the same order); c_and_aa / c_and_ap likewise
  apr_p        every image's amplitude is replaced by a random batch
               partner's amplitude (self-pairing allowed); under the adv
               objective the attack runs on those swapped images
  swap_label_policy
               partner swaps as above, but the label comes from the policy:
               the phase donor, the amplitude donor, or both (each image
               duplicated with both labels)

Objectives: ``standard`` is plain cross-entropy; ``adv`` is cross-entropy on
the synthesized batch; ``trades`` is cross-entropy on the base batch plus
beta times KL between its logits and the logits of an inner-maximized x'.
With beta = 0 the trades loss reduces to the plain cross-entropy and no x'
is generated.

The optimizer is SGD with momentum:  v <- momentum v + g + weight_decay w,
then w <- w - lr v. The learning rate at epoch e (1-indexed) is the base lr
times factor^(number of decay epochs <= e).

Shuffling is keyed by (seed, epoch) and all per-epoch randomness (augment
offsets, attack starts, swap partners) comes from one (seed, epoch) stream,
so a (config, seed) pair reproduces the run bit for bit. Epoch wall time is
measured, but the canonical CSV form zeroes that column; see TrainLog.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, attack, fgsm, frozen_params, trades_inner
from .data import augment as augment_batch
from .models import forward, predict
from .spectrum import aa_image, ap_image, swap_image

OBJECTIVES = ("standard", "adv", "trades")
MODES = (
    "clean", "adv", "aa", "ap", "c_and_adv", "c_and_aa", "c_and_ap",
    "apr_p", "swap_label_policy",
)
LABEL_POLICIES = ("phase_label", "amplitude_label", "both")

VALID_MODES = {
    "standard": ("clean", "apr_p", "swap_label_policy"),
    "adv": ("adv", "aa", "ap", "c_and_adv", "c_and_aa", "c_and_ap", "apr_p"),
    "trades": ("adv", "aa", "ap", "apr_p"),
}


def _default_train_attack():
    return AttackConfig(
        kind="pgd", epsilon=8 / 255, alpha=2 / 255, steps=10, random_start=True
    )


def _default_eval_attack():
    return AttackConfig(
        kind="pgd", epsilon=8 / 255, alpha=2 / 255, steps=20, random_start=False
    )


@dataclass
class TrainConfig:
    objective: str = "standard"
    mode: str = "clean"
    beta: float = 1.0
    attack: AttackConfig = field(default_factory=_default_train_attack)
    eval_attack: AttackConfig = field(default_factory=_default_eval_attack)
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.01
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    label_policy: str = "phase_label"
    augment: bool = False
    eval_limit: int = 256

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        allowed = VALID_MODES[self.objective]
        if self.mode not in allowed:
            raise ValueError(
                f"mode {self.mode!r} is not valid under objective "
                f"{self.objective!r}; allowed: {allowed}"
            )
        if self.label_policy not in LABEL_POLICIES:
            raise ValueError(f"label_policy must be one of {LABEL_POLICIES}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError(
                f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}"
            )
        if any(int(e) < 1 for e in self.lr_decay_epochs):
            raise ValueError("lr_decay_epochs entries must be >= 1")
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.eval_limit < 1:
            raise ValueError(f"eval_limit must be >= 1, got {self.eval_limit}")
        needs_attack = self.objective == "adv" or (
            self.objective == "trades" and self.beta > 0
        )
        if self.objective == "adv" and self.attack.objective != "cross_entropy_vs_label":
            raise ValueError(
                "adv objective requires attack.objective='cross_entropy_vs_label'"
            )
        if self.objective == "trades" and needs_attack:
            if self.attack.objective != "kl_vs_clean_logits":
                raise ValueError(
                    "trades objective requires attack.objective='kl_vs_clean_logits'"
                )
            if self.attack.kind != "pgd":
                raise ValueError("trades inner maximization requires kind='pgd'")
        if self.eval_attack.kind != "pgd" or self.eval_attack.random_start:
            raise ValueError(
                "eval_attack must be a pgd config without random start so "
                "logged accuracies are deterministic"
            )


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in force during `epoch` (1-indexed)."""
    drops = sum(1 for d in cfg.lr_decay_epochs if epoch >= d)
    return cfg.lr * cfg.lr_decay_factor ** drops


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    clean_acc: float
    fgsm_acc: float
    pgd_acc: float
    lr: float
    seconds: float


CSV_HEADER = "epoch,loss,clean_acc,fgsm_acc,pgd_acc,lr,seconds"


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self, timing=False) -> str:
        """Canonical CSV. Floats are shortest round-trip reprs. The seconds
        column is zeroed unless `timing` is set: wall time differs between
        runs of the same (config, seed), and the canonical form is the one
        that must be byte-identical across reruns. Timed copies go to
        sidecar files, never to the canonical artifact."""
        lines = [CSV_HEADER]
        for r in self.records:
            secs = repr(float(r.seconds)) if timing else "0.0"
            lines.append(
                f"{r.epoch},{float(r.loss)!r},{float(r.clean_acc)!r},"
                f"{float(r.fgsm_acc)!r},{float(r.pgd_acc)!r},{float(r.lr)!r},{secs}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        lines = [ln for ln in text.strip().split("\n") if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError(
                f"training log must start with {CSV_HEADER!r}, "
                f"got {lines[0] if lines else 'empty input'!r}"
            )
        records = []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != 7:
                raise ValueError(f"malformed training log row: {ln!r}")
            records.append(
                EpochRecord(
                    int(parts[0]), *(float(p) for p in parts[1:])
                )
            )
        return cls(records)


def _to_f32(a):
    return np.ascontiguousarray(a, dtype=np.float32)


def make_batch_images(x, y, model, cfg: TrainConfig, rng):
    """Realize the configured mode on one batch; returns (images, labels).

    Modes that draw swap partners draw them first from `rng` (one uniform
    index per image, replacement allowed), then any attack consumes the
    stream; callers relying on reproducibility must pass the epoch stream.
    """
    if cfg.mode == "clean":
        return x, y
    if cfg.mode == "adv":
        return attack(model, x, y, cfg.attack, rng=rng), y
    if cfg.mode in ("aa", "ap"):
        x_adv = attack(model, x, y, cfg.attack, rng=rng)
        crossed = (aa_image if cfg.mode == "aa" else ap_image)(x, x_adv)
        return _to_f32(crossed.image), y
    if cfg.mode in ("c_and_adv", "c_and_aa", "c_and_ap"):
        sub = replace(cfg, mode=cfg.mode[len("c_and_"):])
        extra, _ = make_batch_images(x, y, model, sub, rng)
        return np.concatenate([x, extra]), np.concatenate([y, y])
    if cfg.mode == "apr_p":
        partner = rng.integers(0, len(x), len(x))
        base = _to_f32(swap_image(x, x[partner]).image)
        if cfg.objective == "adv":
            return attack(model, base, y, cfg.attack, rng=rng), y
        return base, y
    # swap_label_policy
    partner = rng.integers(0, len(x), len(x))
    swapped = _to_f32(swap_image(x, x[partner]).image)
    if cfg.label_policy == "phase_label":
        return swapped, y
    if cfg.label_policy == "amplitude_label":
        return swapped, y[partner]
    return np.concatenate([swapped, swapped]), np.concatenate([y, y[partner]])


def _trades_loss(model, x, y, cfg, rng):
    """Cross-entropy plus beta * KL against the inner-maximized batch."""
    if cfg.mode == "apr_p":
        partner = rng.integers(0, len(x), len(x))
        x = _to_f32(swap_image(x, x[partner]).image)
    if cfg.beta == 0.0:
        return T.cross_entropy(forward(model, x), y)
    x_prime = trades_inner(model, x, cfg.attack, rng=rng)
    if cfg.mode in ("aa", "ap"):
        crossed = (aa_image if cfg.mode == "aa" else ap_image)(x, x_prime)
        x_prime = _to_f32(crossed.image)
    logits_nat = forward(model, x)
    ce = T.cross_entropy(logits_nat, y)
    kl = T.kl_divergence(logits_nat, forward(model, x_prime))
    return T.add(ce, T.mul(kl, cfg.beta))


def train_step(model, x, y, cfg: TrainConfig, velocity, lr, rng) -> float:
    """One optimization step; returns the scalar loss that was minimized."""
    try:
        if cfg.objective == "trades":
            loss = _trades_loss(model, x, y, cfg, rng)
        else:
            images, labels = make_batch_images(x, y, model, cfg, rng)
            loss = T.cross_entropy(forward(model, images), labels)
    except ValueError as e:
        if "finite" not in str(e):
            raise
        raise RuntimeError(
            "training diverged: non-finite values in the forward pass; "
            "lower lr or epsilon"
        ) from e
    value = float(loss.item())
    if not np.isfinite(value):
        raise RuntimeError(
            f"training diverged: loss became {value}; lower lr or epsilon"
        )
    T.zero_grad(model.parameters())
    loss.backward()
    sgd_step(model, velocity, lr, cfg.momentum, cfg.weight_decay)
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise RuntimeError(
                f"training diverged: parameter {name} became non-finite "
                f"after the update; lower lr or epsilon"
            )
    return value


def sgd_step(model, velocity, lr, momentum, weight_decay):
    """v <- momentum v + grad + weight_decay w ;  w <- w - lr v."""
    for name, p in model.params.items():
        v = velocity[name]
        v *= momentum
        if p.grad is not None:
            v += p.grad
        if weight_decay:
            v += weight_decay * p.data
        p.data = p.data - lr * v


def _accuracy_pct(model, images, labels):
    return 100.0 * float(np.mean(predict(model, images) == labels))


def evaluate_epoch(model, images, labels, eval_attack: AttackConfig):
    """(clean, fgsm, pgd) accuracies in percent under frozen parameters.

    The fgsm column reuses the eval attack's epsilon with the single-step
    attack; the pgd column runs the eval attack as configured.
    """
    clean = _accuracy_pct(model, images, labels)
    fgsm_cfg = replace(eval_attack, kind="fgsm")
    adv1 = fgsm(model, images, labels, fgsm_cfg)
    adv2 = attack(model, images, labels, eval_attack)
    return clean, _accuracy_pct(model, adv1, labels), _accuracy_pct(model, adv2, labels)


def train(model, train_ds, cfg: TrainConfig, eval_ds=None) -> TrainLog:
    """Run the configured loop, mutating `model`; returns the epoch log.

    Evaluation uses the first `eval_limit` examples of `eval_ds` (the
    training set when no held-out split is given) with the fixed eval
    attack, so logged accuracies are comparable across epochs.
    """
    if train_ds.num_classes != model.arch["classes"]:
        raise ValueError(
            f"model has {model.arch['classes']} classes but dataset has "
            f"{train_ds.num_classes}"
        )
    if len(train_ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    source = eval_ds if eval_ds is not None else train_ds
    k = min(cfg.eval_limit, len(source))
    eval_images = source.images[:k].copy()
    eval_labels = source.labels[:k].copy()

    velocity = {n: np.zeros_like(p.data) for n, p in model.params.items()}
    log = TrainLog()
    n = len(train_ds)
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        lr = lr_at(cfg, epoch)
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        rng = np.random.default_rng([cfg.seed, epoch, 1])
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x = train_ds.images[idx]
            y = train_ds.labels[idx]
            if cfg.augment:
                x = augment_batch(x, rng)
            total += train_step(model, x, y, cfg, velocity, lr, rng) * len(idx)
        try:
            with frozen_params(model):
                clean, f_acc, p_acc = evaluate_epoch(
                    model, eval_images, eval_labels, cfg.eval_attack
                )
        except ValueError as e:
            if "finite" not in str(e):
                raise
            raise RuntimeError(
                f"training diverged: non-finite activations while evaluating "
                f"epoch {epoch}; lower lr or epsilon"
            ) from e
        log.records.append(
            EpochRecord(
                epoch, total / n, clean, f_acc, p_acc, lr,
                time.perf_counter() - started,
            )
        )
    return log
