"""Frequency-domain adversarial augmentation toolkit.

The package splits into small, separately testable layers:

- `fft2d`: hand-rolled 2-D DFT with exact conventions (unnormalized
  forward, 1/(HW) inverse) and a radix-2 fast path.
- `spectrum`: amplitude/phase decomposition and the cross-image
  recombinations (swap, adversarial-amplitude, adversarial-phase).
- `tensor`: a closure-based reverse-mode autodiff engine over numpy.
- `models`: tiny conv-net presets, forward pass, checkpoint format.
- `attacks`: FGSM and PGD-l-inf with frozen-parameter discipline.
- `training`: the training objectives (standard, adversarial, divergence-
  regularized) across clean/adversarial/recombined batch modes.
- `data`: CIFAR-10 binary container, synthetic datasets, basic augments.
- `corruptions`: a seeded local corruption suite at five severities.
- `report`: accuracy grids, spread statistics, overfitting detection,
  CSV/JSON/SVG emission.
- `config` + `cli`: flat key=value run configs, presets, and the
  `phaseforge` command wiring everything into reproducible run dirs.
"""

from .attacks import AttackConfig, attack, fgsm, pgd, trades_inner
from .config import ConfigError, RunConfig, resolve
from .data import CifarFormatError, Dataset, load_cifar, synth_dataset
from .fft2d import ComplexGrid, dft2, idft2
from .models import build_preset, load_checkpoint, predict, save_checkpoint
from .report import (
    EvalReport,
    OverfitFindings,
    accuracy,
    build_report,
    emit,
    evaluate_model,
    overfit_scan,
    uniformity_gap,
)
from .spectrum import (
    AmpPhase,
    SpectralImage,
    aa_image,
    aas,
    ap_image,
    decompose,
    phase_image,
    recompose,
    swap_image,
)
from .training import TrainConfig, TrainLog, train

__version__ = "0.1.0"

__all__ = [
    "AmpPhase",
    "AttackConfig",
    "CifarFormatError",
    "ComplexGrid",
    "ConfigError",
    "Dataset",
    "EvalReport",
    "OverfitFindings",
    "RunConfig",
    "SpectralImage",
    "TrainConfig",
    "TrainLog",
    "aa_image",
    "aas",
    "accuracy",
    "ap_image",
    "attack",
    "build_preset",
    "build_report",
    "decompose",
    "dft2",
    "emit",
    "evaluate_model",
    "fgsm",
    "idft2",
    "load_cifar",
    "load_checkpoint",
    "overfit_scan",
    "pgd",
    "phase_image",
    "predict",
    "recompose",
    "resolve",
    "save_checkpoint",
    "swap_image",
    "synth_dataset",
    "train",
    "trades_inner",
    "uniformity_gap",
]
