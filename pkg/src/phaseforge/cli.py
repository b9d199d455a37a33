"""Command-line entry points wiring the library into reproducible runs.

Four subcommands cover the workflow end to end: `augment` rewrites an image
file through the spectral recombination modes, `train` runs a configured
training loop into a self-describing run directory, `eval` scores a
checkpoint against clean, attacked, and corrupted data, and `report`
renders a training log into curves plus overfitting findings.

Every run directory is named `<config-hash>-s<seed>` and receives the fully
resolved configuration as `config.resolved`, so any output can be
reproduced byte for byte from its own directory. Canonical artifacts
(trainlog.csv, report.csv/json, checkpoints, SVGs) are deterministic for a
fixed config and seed; wall-clock timings go only to the `timing.log`
sidecar, which is the one file allowed to differ between identical runs.

Exit codes: 0 success, 1 usage or configuration error (bad flags, unknown
keys, unreadable inputs, invalid combinations), 2 runtime failure (e.g.
training divergence). Worker parallelism is capped by the PHASEFORGE_THREADS
environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import config as run_config
from . import models
from .attacks import attack
from .config import ConfigError
from .data import CifarFormatError, Dataset, load_cifar, write_cifar_binary
from .report import emit, evaluate_model, overfit_scan
from .spectrum import aa_image, ap_image, decompose, phase_image, swap_image
from .training import TrainLog, train
from .utils import THREADS_ENV


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the documented contract
    # reserves 2 for runtime failures
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--preset", help="named preset providing base values")
    sub.add_argument("--seed", type=int, help="run seed (overrides config)")
    sub.add_argument("--out", help="parent directory for outputs")
    sub.add_argument(
        "--set", action="append", metavar="KEY=VALUE", default=[],
        help="override one config key (repeatable)",
    )


def _overlays(args, extra=None):
    """Config layers in precedence order: preset < file < flags < extra."""
    chain = []
    if args.preset:
        chain.append(run_config.preset(args.preset))
    if args.config:
        chain.append(run_config.parse_file(args.config))
    flags = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value.strip()
    if args.seed is not None:
        flags["seed"] = str(args.seed)
    if args.out is not None:
        flags["out"] = args.out
    chain.append(flags)
    if extra:
        chain.append(extra)
    return chain


def _run_dir(rc) -> Path:
    out = Path(rc["out"]) / rc.run_name()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(rc.render(), encoding="utf-8")
    return out


def _check_compatible(model, ds: Dataset):
    want = tuple(model.arch["input_shape"])
    have = tuple(ds.images.shape[1:])
    if want != have:
        raise ConfigError(
            f"checkpoint expects input shape {want} but the data is {have}"
        )
    if model.arch["classes"] != ds.num_classes:
        raise ConfigError(
            f"checkpoint has {model.arch['classes']} classes but the data "
            f"has {ds.num_classes}"
        )


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    rc = run_config.resolve(*_overlays(args))
    tc = rc.train_config()
    model = rc.model()
    train_ds = rc.dataset()
    eval_ds = rc.eval_dataset()
    if train_ds.num_classes != model.arch["classes"]:
        raise ConfigError(
            f"model preset {rc['model.preset']!r} has "
            f"{model.arch['classes']} classes but the data has "
            f"{train_ds.num_classes}"
        )
    out = _run_dir(rc)

    log = train(model, train_ds, tc, eval_ds=eval_ds)

    (out / "trainlog.csv").write_bytes(log.to_csv().encode())
    (out / "timing.log").write_text(log.to_csv(timing=True), encoding="utf-8")
    if log.records:
        (out / "curves.svg").write_bytes(emit(log, "svg"))
        last = log.records[-1]
        print(
            f"epoch {last.epoch}: loss {last.loss:.4f} "
            f"clean {last.clean_acc:.1f} fgsm {last.fgsm_acc:.1f} "
            f"pgd {last.pgd_acc:.1f}",
            file=sys.stderr,
        )
    models.save_checkpoint(model, out / "checkpoint.ckpt")
    print(out)
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    rc = run_config.resolve(*_overlays(args, {"eval.checkpoint": args.checkpoint}))
    ckpt_path = Path(rc["eval.checkpoint"])
    raw = ckpt_path.read_bytes()
    try:
        model = models.load_checkpoint_bytes(raw)
    except ValueError as e:
        raise ConfigError(f"cannot load checkpoint {ckpt_path}: {e}") from e

    ds = rc.eval_dataset()
    if ds is None:
        ds = rc.dataset()
    limit = rc["eval.limit"]
    if limit > 0:
        ds = ds.take(np.arange(min(limit, len(ds))))
    _check_compatible(model, ds)

    attacks = rc.eval_attacks()
    provenance = {
        "checkpoint": str(ckpt_path),
        "checkpoint_sha256": hashlib.sha256(raw).hexdigest()[:16],
        "config_hash": rc.run_hash(),
        "seed": rc["seed"],
        "attacks": {
            name: dataclasses.asdict(cfg) for name, cfg in attacks.items()
        },
        "corruption_seed": rc["corruption.seed"],
        "dataset": {
            "kind": rc["data.kind"],
            "n": len(ds),
            "classes": ds.num_classes,
            "split": ds.split,
        },
    }
    rep = evaluate_model(
        model, ds, attacks,
        kinds=rc["corruption.kinds"],
        severities=rc["corruption.severities"],
        corruption_seed=rc["corruption.seed"],
        provenance=provenance,
    )

    out = _run_dir(rc)
    for fmt in ("csv", "json", "svg"):
        (out / f"report.{fmt}").write_bytes(emit(rep, fmt))
    print(
        f"clean {rep.clean_acc:.1f} "
        + " ".join(f"{n} {v:.1f}" for n, v in sorted(rep.attack_accs.items()))
        + (f" corr_mean {rep.corr_mean:.1f}" if rep.corr_mean is not None else ""),
        file=sys.stderr,
    )
    print(out)
    return 0


# -- augment -----------------------------------------------------------------


def _spectra_csv(values: np.ndarray) -> str:
    """Wide per-image dump: one row per (index, channel, row) of the grid."""
    n, c, h, w = values.shape
    header = "index,channel,row," + ",".join(f"c{j}" for j in range(w))
    lines = [header]
    for i in range(n):
        for ch in range(c):
            for r in range(h):
                cells = ",".join(repr(float(v)) for v in values[i, ch, r])
                lines.append(f"{i},{ch},{r},{cells}")
    return "\n".join(lines) + "\n"


def _augment_adversary(rc, ds: Dataset):
    """Adversarial partners for aa/ap mode: a precomputed file, or fresh
    attacks against a checkpoint."""
    if rc["augment.partner"]:
        partner = load_cifar(rc["augment.partner"], split=ds.split)
        if partner.images.shape != ds.images.shape:
            raise ConfigError(
                f"partner shape {partner.images.shape} does not match input "
                f"{ds.images.shape}"
            )
        return partner.images.astype(np.float64)
    if not rc["augment.checkpoint"]:
        raise ConfigError(
            f"augment.mode={rc['augment.mode']} needs augment.partner "
            "(precomputed adversarial images) or augment.checkpoint "
            "(a model to attack)"
        )
    model = models.load_checkpoint(rc["augment.checkpoint"])
    want = tuple(model.arch["input_shape"])
    if tuple(ds.images.shape[1:]) != want:
        raise ConfigError(
            f"checkpoint expects input shape {want} but the images are "
            f"{tuple(ds.images.shape[1:])}"
        )
    # only the labels that actually occur must fit the model's head
    if len(ds) and int(ds.labels.max()) >= model.arch["classes"]:
        raise ConfigError(
            f"labels reach {int(ds.labels.max())} but the checkpoint has "
            f"{model.arch['classes']} classes"
        )
    cfg = rc.train_attack()
    rng = np.random.default_rng(rc["seed"])
    chunks = []
    for lo in range(0, len(ds), 256):
        chunks.append(
            attack(
                model, ds.images[lo : lo + 256], ds.labels[lo : lo + 256],
                cfg, rng=rng,
            )
        )
    return np.concatenate(chunks, axis=0).astype(np.float64)


def cmd_augment(args) -> int:
    extra = {"augment.input": args.input}
    if args.mode:
        extra["augment.mode"] = args.mode
    if args.partner:
        extra["augment.partner"] = args.partner
    if args.checkpoint:
        extra["augment.checkpoint"] = args.checkpoint
    if args.dump_spectra:
        extra["augment.dump_spectra"] = "true"
    rc = run_config.resolve(*_overlays(args, extra))

    ds = load_cifar(rc["augment.input"], split="train")
    x = ds.images.astype(np.float64)
    mode = rc["augment.mode"]
    if mode == "phase":
        result = phase_image(x)
    elif mode == "swap":
        if not rc["augment.partner"]:
            raise ConfigError("augment.mode=swap requires augment.partner")
        partner = load_cifar(rc["augment.partner"], split=ds.split)
        if partner.images.shape != ds.images.shape:
            raise ConfigError(
                f"partner shape {partner.images.shape} does not match input "
                f"{ds.images.shape}"
            )
        result = swap_image(x, partner.images.astype(np.float64))
    else:
        x_adv = _augment_adversary(rc, ds)
        result = (aa_image if mode == "aa" else ap_image)(x, x_adv)

    out_ds = Dataset(
        result.image.astype(np.float32), ds.labels, ds.class_names, ds.split
    )
    out = _run_dir(rc)
    (out / "augmented.bin").write_bytes(write_cifar_binary(out_ds))
    if rc["augment.dump_spectra"]:
        spec = decompose(result.image)
        (out / "amplitude.csv").write_text(
            _spectra_csv(spec.amplitude), encoding="utf-8"
        )
        (out / "phase.csv").write_text(
            _spectra_csv(spec.phase), encoding="utf-8"
        )
    print(out)
    return 0


# -- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    path = Path(args.trainlog)
    log = TrainLog.from_csv(path.read_text(encoding="utf-8"))
    findings = overfit_scan(
        log, catastrophic_gap=args.catastrophic_gap, robust_drop=args.robust_drop
    )
    out = Path(args.out) if args.out is not None else path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.svg").write_bytes(emit(log, "svg"))
    (out / "findings.json").write_text(
        json.dumps(
            {
                "catastrophic": findings.catastrophic,
                "robust": findings.robust,
                "thresholds": {
                    "catastrophic_gap": args.catastrophic_gap,
                    "robust_drop": args.robust_drop,
                },
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"catastrophic={findings.catastrophic if findings.catastrophic is not None else 'none'} "
        f"robust={findings.robust if findings.robust is not None else 'none'}"
    )
    return 0


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="phaseforge",
        description="Frequency-domain adversarial augmentation toolkit.",
        epilog=f"Set {THREADS_ENV} to cap worker-thread parallelism.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser(
        "augment", parents=[], help="rewrite an image file through a spectral mode"
    )
    p.add_argument("input", help="CIFAR-binary image file to augment")
    p.add_argument("--mode", choices=("phase", "swap", "aa", "ap"))
    p.add_argument("--partner", help="partner image file (swap, or aa/ap donors)")
    p.add_argument("--checkpoint", help="model to attack for aa/ap partners")
    p.add_argument(
        "--dump-spectra", action="store_true",
        help="also write amplitude.csv and phase.csv of the outputs",
    )
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("train", help="run a configured training loop")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a checkpoint into report files")
    p.add_argument("checkpoint", help="checkpoint file to evaluate")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser(
        "report", help="render a training log into curves and findings"
    )
    p.add_argument("trainlog", help="trainlog.csv produced by train")
    p.add_argument("--out", help="output directory (default: beside the log)")
    p.add_argument(
        "--catastrophic-gap", type=float, default=50.0,
        help="one-step minus iterated accuracy threshold, in points",
    )
    p.add_argument(
        "--robust-drop", type=float, default=5.0,
        help="post-decay drop below the running best, in points",
    )
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        CifarFormatError,
        FileNotFoundError,
        IsADirectoryError,
        PermissionError,
        ValueError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # divergence, I/O mid-run: runtime failures
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
