"""Evaluation reports: accuracy grids, spread analysis, overfitting scans,
and emission as CSV, JSON, and self-contained SVG charts.

An EvalReport collects one model's numbers: clean accuracy, per-attack
accuracy, and a (kind, severity) grid of corruption accuracies. Two spread
statistics summarize the grid. `corr_mean` is the plain average over every
cell. `uniformity_gap` is the difference between the best and the worst
per-kind mean (severities averaged within each kind first); a small gap
means the model degrades evenly across corruption families instead of
excelling on a few and collapsing on others. `kind_gap` reports the same
difference for two *named* kinds, for write-ups that quote a specific
best/worst pairing rather than the max/min.

`overfit_scan` inspects a training log for the two classic failure shapes
of adversarial training: an epoch where single-step accuracy races ahead of
iterated-attack accuracy (the model has fit the single-step attack, not the
threat model), and an epoch after a learning-rate decay where iterated-attack
accuracy falls well below its own running peak and never comes back. The
thresholds (50 and 5 points) are reporting conventions with documented
defaults, not measured constants.

All CSV and JSON numbers are shortest round-trip reprs, so emit -> parse is
numerically exact, and emission is deterministic (sorted keys throughout).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .attacks import AttackConfig, attack
from .corruptions import corruption_suite
from .data import Dataset
from .models import predict
from .training import TrainLog
from .utils import parallel_map

REPORT_CSV_HEADER = "section,name,severity,value"

# summary rows a CSV parse re-derives and cross-checks
_DERIVED_TOL = 1e-9


# -- accuracy drivers ------------------------------------------------------


def accuracy(model, dataset: Dataset) -> float:
    """Percent of dataset examples whose argmax prediction hits the label."""
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    hits = predict(model, dataset.images) == dataset.labels
    return 100.0 * float(np.mean(hits))


def attack_accuracy(model, dataset: Dataset, cfg: AttackConfig, rng=None,
                    batch_size=256) -> float:
    """Accuracy on attacked copies of the dataset (labels feed the attack)."""
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    hits = 0
    for lo in range(0, len(dataset), batch_size):
        x = dataset.images[lo : lo + batch_size]
        y = dataset.labels[lo : lo + batch_size]
        adv = attack(model, x, y, cfg, rng=rng)
        hits += int(np.sum(predict(model, adv) == y))
    return 100.0 * hits / len(dataset)


# -- the report type -------------------------------------------------------


def _check_pct(label, v):
    if not np.isfinite(v) or v < 0.0 or v > 100.0:
        raise ValueError(f"{label} must be a percentage in [0, 100], got {v}")


def _check_name(label, name):
    if not name or any(ch in name for ch in ",\n\r"):
        raise ValueError(f"{label} {name!r} is empty or not CSV-safe")


@dataclass
class EvalReport:
    """One model's evaluation numbers plus derived spread statistics.

    `corruption_accs` maps (kind, severity) to a percentage. `corr_mean` and
    `uniformity_gap` must equal the values derived from the cells (use
    `build_report` instead of filling them by hand); both are None when the
    grid cannot support them. `provenance` is free-form JSON-able context
    (checkpoint id, resolved configs, seeds) carried into the JSON form.
    """

    clean_acc: float | None
    attack_accs: dict
    corruption_accs: dict
    corr_mean: float | None
    uniformity_gap: float | None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clean_acc is not None:
            self.clean_acc = float(self.clean_acc)
            _check_pct("clean_acc", self.clean_acc)
        self.attack_accs = {
            str(k): float(v) for k, v in dict(self.attack_accs).items()
        }
        for name, v in self.attack_accs.items():
            _check_name("attack name", name)
            _check_pct(f"attack_accs[{name!r}]", v)
        cells = {}
        for key, v in dict(self.corruption_accs).items():
            kind, sev = key
            kind, sev = str(kind), int(sev)
            _check_name("corruption kind", kind)
            _check_pct(f"corruption_accs[{kind!r}, {sev}]", float(v))
            cells[(kind, sev)] = float(v)
        self.corruption_accs = cells

        # fsum is exactly rounded, so the mean ignores cell-insertion order
        want_mean = (
            math.fsum(cells.values()) / len(cells) if cells else None
        )
        if (self.corr_mean is None) != (want_mean is None) or (
            want_mean is not None
            and abs(float(self.corr_mean) - want_mean) > _DERIVED_TOL
        ):
            raise ValueError(
                f"corr_mean {self.corr_mean} does not match the cell mean "
                f"{want_mean}"
            )
        self.corr_mean = want_mean

        kinds = {k for k, _ in cells}
        want_gap = uniformity_gap(cells) if len(kinds) >= 2 else None
        if (self.uniformity_gap is None) != (want_gap is None) or (
            want_gap is not None
            and abs(float(self.uniformity_gap) - want_gap) > _DERIVED_TOL
        ):
            raise ValueError(
                f"uniformity_gap {self.uniformity_gap} does not match the "
                f"per-kind spread {want_gap}"
            )
        self.uniformity_gap = want_gap
        self.provenance = dict(self.provenance)


def build_report(clean_acc=None, attack_accs=None, corruption_accs=None,
                 provenance=None) -> EvalReport:
    """Assemble an EvalReport, deriving corr_mean and uniformity_gap."""
    cells = {
        (str(k), int(s)): float(v)
        for (k, s), v in dict(corruption_accs or {}).items()
    }
    corr_mean = math.fsum(cells.values()) / len(cells) if cells else None
    kinds = {k for k, _ in cells}
    gap = uniformity_gap(cells) if len(kinds) >= 2 else None
    return EvalReport(
        clean_acc, dict(attack_accs or {}), cells, corr_mean, gap,
        dict(provenance or {}),
    )


# -- spread statistics ------------------------------------------------------


def _cells_of(report_or_cells):
    if isinstance(report_or_cells, EvalReport):
        return report_or_cells.corruption_accs
    return dict(report_or_cells)


def per_kind_mean(report_or_cells) -> dict:
    """Severity-averaged accuracy per corruption kind, sorted by kind."""
    cells = _cells_of(report_or_cells)
    if not cells:
        raise ValueError("no corruption cells to average")
    by_kind = {}
    for (kind, _sev), v in cells.items():
        by_kind.setdefault(kind, []).append(float(v))
    # fsum keeps the means independent of cell-insertion order
    return {k: math.fsum(vs) / len(vs) for k, vs in sorted(by_kind.items())}


def uniformity_gap(report_or_cells) -> float:
    """Best minus worst per-kind mean accuracy, in percentage points."""
    means = per_kind_mean(report_or_cells)
    if len(means) < 2:
        raise ValueError(
            f"uniformity gap needs at least 2 corruption kinds, got {len(means)}"
        )
    return max(means.values()) - min(means.values())


def kind_gap(report_or_cells, hi_kind, lo_kind) -> float:
    """Per-kind mean difference for a named pairing (hi minus lo).

    Complements `uniformity_gap` for write-ups that quote two specific
    kinds instead of the overall max/min pair.
    """
    means = per_kind_mean(report_or_cells)
    missing = [k for k in (hi_kind, lo_kind) if k not in means]
    if missing:
        raise KeyError(
            f"kinds {missing} not present; have {sorted(means)}"
        )
    return means[hi_kind] - means[lo_kind]


# -- overfitting detection --------------------------------------------------


@dataclass
class OverfitFindings:
    """Epoch numbers (as logged) of detected failure shapes, else None."""

    catastrophic: int | None
    robust: int | None


def overfit_scan(log: TrainLog, catastrophic_gap=50.0,
                 robust_drop=5.0) -> OverfitFindings:
    """Scan a training log for the two adversarial-training failure shapes.

    catastrophic: first epoch whose single-step (fgsm) accuracy exceeds the
    iterated (pgd) accuracy by more than `catastrophic_gap` points; the
    model fits the one-step attack while losing the actual threat model.

    robust: first epoch strictly after a learning-rate decay where pgd
    accuracy sits more than `robust_drop` points below its running maximum
    and never climbs back within that margin for the rest of the log.
    """
    recs = log.records
    if not recs:
        raise ValueError("overfit_scan needs a nonempty training log")

    catastrophic = None
    for r in recs:
        if r.fgsm_acc - r.pgd_acc > catastrophic_gap:
            catastrophic = r.epoch
            break

    pgd = [r.pgd_acc for r in recs]
    suffix_max = [0.0] * len(pgd)
    m = -np.inf
    for i in range(len(pgd) - 1, -1, -1):
        m = max(m, pgd[i])
        suffix_max[i] = m

    robust = None
    run_max, lr_max = -np.inf, -np.inf
    for i, r in enumerate(recs):
        lr_max = max(lr_max, r.lr)
        run_max = max(run_max, pgd[i])
        decayed = r.lr < lr_max
        if decayed and suffix_max[i] < run_max - robust_drop:
            robust = r.epoch
            break
    return OverfitFindings(catastrophic, robust)


# -- emission: CSV ----------------------------------------------------------


def report_csv(report: EvalReport) -> str:
    """One row per metric cell; summary rows carry the derived statistics."""
    lines = [REPORT_CSV_HEADER]
    if report.clean_acc is not None:
        lines.append(f"clean,clean,,{report.clean_acc!r}")
    for name in sorted(report.attack_accs):
        lines.append(f"attack,{name},,{report.attack_accs[name]!r}")
    for kind, sev in sorted(report.corruption_accs):
        lines.append(
            f"corruption,{kind},{sev},{report.corruption_accs[(kind, sev)]!r}"
        )
    if report.corr_mean is not None:
        lines.append(f"summary,corr_mean,,{report.corr_mean!r}")
    if report.uniformity_gap is not None:
        lines.append(f"summary,uniformity_gap,,{report.uniformity_gap!r}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> EvalReport:
    """Inverse of report_csv; summary rows are cross-checked, not trusted."""
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != REPORT_CSV_HEADER:
        raise ValueError(
            f"report CSV must start with {REPORT_CSV_HEADER!r}, "
            f"got {lines[0] if lines else 'empty input'!r}"
        )
    clean = None
    attacks, cells, summary = {}, {}, {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"malformed report row: {ln!r}")
        section, name, sev, value = parts
        if section == "clean":
            clean = float(value)
        elif section == "attack":
            attacks[name] = float(value)
        elif section == "corruption":
            cells[(name, int(sev))] = float(value)
        elif section == "summary":
            summary[name] = float(value)
        else:
            raise ValueError(f"unknown report section {section!r}")
    report = build_report(clean, attacks, cells)
    for key in ("corr_mean", "uniformity_gap"):
        if key in summary:
            have = getattr(report, key)
            if have is None or abs(have - summary[key]) > _DERIVED_TOL:
                raise ValueError(
                    f"report CSV {key} {summary[key]} disagrees with the "
                    f"cells ({have})"
                )
    return report


# -- emission: JSON ---------------------------------------------------------


def report_json(report: EvalReport) -> str:
    payload = {
        "clean_acc": report.clean_acc,
        "attack_accs": report.attack_accs,
        "corruption_accs": {
            f"{kind}:{sev}": v
            for (kind, sev), v in report.corruption_accs.items()
        },
        "corr_mean": report.corr_mean,
        "uniformity_gap": report.uniformity_gap,
        "provenance": report.provenance,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def parse_report_json(text: str) -> EvalReport:
    d = json.loads(text)
    cells = {}
    for key, v in (d.get("corruption_accs") or {}).items():
        kind, _, sev = key.rpartition(":")
        cells[(kind, int(sev))] = float(v)
    report = build_report(
        d.get("clean_acc"), d.get("attack_accs"), cells, d.get("provenance")
    )
    for key in ("corr_mean", "uniformity_gap"):
        stored, have = d.get(key), getattr(report, key)
        if (stored is None) != (have is None) or (
            stored is not None and abs(have - float(stored)) > _DERIVED_TOL
        ):
            raise ValueError(
                f"report JSON {key} {stored} disagrees with the cells ({have})"
            )
    return report


# -- emission: SVG ----------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_SVG_FONT = 'font-family="sans-serif"'


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt(v):
    return f"{v:.6g}"


def svg_curves(series: dict, x=None, title="", xlabel="epoch",
               ylabel="accuracy (%)", width=640, height=400) -> str:
    """Line chart with one polyline per series, plus axes and a legend.

    `series` maps a legend name to a list of y values; all series share `x`
    (defaults to 1..n). Axes and ticks are <line>/<text> elements, so the
    polyline count equals the series count exactly.
    """
    if not series:
        raise ValueError("svg_curves needs at least one series")
    lengths = {len(v) for v in series.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise ValueError("all series must share one nonzero length")
    npts = lengths.pop()
    xs = list(range(1, npts + 1)) if x is None else list(x)
    if len(xs) != npts:
        raise ValueError(f"x has {len(xs)} values for series of {npts}")

    ml, mr, mt, mb = 56, 16, 30, 46
    pw, ph = width - ml - mr, height - mt - mb
    ally = [v for vals in series.values() for v in vals]
    ylo, yhi = min(ally), max(ally)
    if yhi == ylo:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = min(xs), max(xs)
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1

    def px(v):
        return ml + pw * (v - xlo) / (xhi - xlo)

    def py(v):
        return mt + ph * (1.0 - (v - ylo) / (yhi - ylo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
        f'font-size="14" {_SVG_FONT}>{escape(title)}</text>' if title else "",
    ]
    for tv in _ticks(ylo, yhi):
        y = py(tv)
        out.append(
            f'<line x1="{ml}" y1="{y:.1f}" x2="{width - mr}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="11" {_SVG_FONT}>{_fmt(tv)}</text>'
        )
    xticks = xs if npts <= 8 else np.linspace(xlo, xhi, 8)
    for tv in xticks:
        xpx = px(tv)
        out.append(
            f'<line x1="{xpx:.1f}" y1="{mt + ph}" x2="{xpx:.1f}" '
            f'y2="{mt + ph + 4}" stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{xpx:.1f}" y="{mt + ph + 17}" text-anchor="middle" '
            f'font-size="11" {_SVG_FONT}>{_fmt(tv)}</text>'
        )
    # axes
    out.append(
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
        f'stroke="#333333" stroke-width="1.5"/>'
    )
    out.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{width - mr}" y2="{mt + ph}" '
        f'stroke="#333333" stroke-width="1.5"/>'
    )
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-size="12" {_SVG_FONT}>{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'font-size="12" {_SVG_FONT} '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (name, vals) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(xv):.2f},{py(yv):.2f}" for xv, yv in zip(xs, vals))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        ly = mt + 14 + 16 * i
        out.append(
            f'<line x1="{width - mr - 110}" y1="{ly - 4}" '
            f'x2="{width - mr - 86}" y2="{ly - 4}" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        out.append(
            f'<text x="{width - mr - 80}" y="{ly}" font-size="11" '
            f'{_SVG_FONT}>{escape(str(name))}</text>'
        )
    out.append("</svg>")
    return "\n".join(ln for ln in out if ln) + "\n"


def svg_bars(values: dict, title="", ylabel="accuracy (%)",
             height=400) -> str:
    """Bar chart of name -> value with axes and per-bar labels."""
    if not values:
        raise ValueError("svg_bars needs at least one value")
    names = list(values)
    n = len(names)
    bw, gap = 34, 14
    ml, mr, mt, mb = 56, 16, 30, 92
    width = ml + mr + n * (bw + gap) + gap
    ph = height - mt - mb
    yhi = max(100.0, max(values.values()))

    def py(v):
        return mt + ph * (1.0 - v / yhi)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
        f'font-size="14" {_SVG_FONT}>{escape(title)}</text>' if title else "",
    ]
    for tv in _ticks(0.0, yhi):
        y = py(tv)
        out.append(
            f'<line x1="{ml}" y1="{y:.1f}" x2="{width - mr}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="11" {_SVG_FONT}>{_fmt(tv)}</text>'
        )
    for i, name in enumerate(names):
        v = float(values[name])
        x0 = ml + gap + i * (bw + gap)
        y0 = py(v)
        color = _PALETTE[i % len(_PALETTE)]
        out.append(
            f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{bw}" '
            f'height="{mt + ph - y0:.1f}" fill="{color}"/>'
        )
        out.append(
            f'<text x="{x0 + bw / 2:.1f}" y="{y0 - 4:.1f}" '
            f'text-anchor="middle" font-size="10" {_SVG_FONT}>{_fmt(v)}</text>'
        )
        lx, lyy = x0 + bw / 2, mt + ph + 12
        out.append(
            f'<text x="{lx:.1f}" y="{lyy:.1f}" text-anchor="end" '
            f'font-size="10" {_SVG_FONT} transform="rotate(-45 {lx:.1f} '
            f'{lyy:.1f})">{escape(str(name))}</text>'
        )
    out.append(
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
        f'stroke="#333333" stroke-width="1.5"/>'
    )
    out.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{width - mr}" y2="{mt + ph}" '
        f'stroke="#333333" stroke-width="1.5"/>'
    )
    out.append(
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'font-size="12" {_SVG_FONT} '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    out.append("</svg>")
    return "\n".join(ln for ln in out if ln) + "\n"


def svg_train_curves(log: TrainLog) -> str:
    """Accuracy-vs-epoch curves for the three logged evaluation columns."""
    if not log.records:
        raise ValueError("empty training log")
    series = {
        "clean": [r.clean_acc for r in log.records],
        "fgsm": [r.fgsm_acc for r in log.records],
        "pgd": [r.pgd_acc for r in log.records],
    }
    return svg_curves(
        series, x=[r.epoch for r in log.records], title="evaluation accuracy"
    )


def emit(obj, fmt: str) -> bytes:
    """Serialize a TrainLog (csv, svg) or EvalReport (csv, json, svg)."""
    if isinstance(obj, TrainLog):
        if fmt == "csv":
            return obj.to_csv().encode()
        if fmt == "svg":
            return svg_train_curves(obj).encode()
        raise ValueError(f"training logs emit csv or svg, not {fmt!r}")
    if isinstance(obj, EvalReport):
        if fmt == "csv":
            return report_csv(obj).encode()
        if fmt == "json":
            return report_json(obj).encode()
        if fmt == "svg":
            if obj.corruption_accs:
                bars = per_kind_mean(obj)
                title = "corruption accuracy (severity-averaged)"
            else:
                bars = {}
                if obj.clean_acc is not None:
                    bars["clean"] = obj.clean_acc
                bars.update(obj.attack_accs)
                title = "accuracy"
            return svg_bars(bars, title=title).encode()
        raise ValueError(f"reports emit csv, json, or svg, not {fmt!r}")
    raise TypeError(f"emit takes a TrainLog or EvalReport, got {type(obj)!r}")


# -- one-stop evaluation ----------------------------------------------------


def evaluate_model(model, dataset: Dataset, attack_cfgs=None, kinds=(),
                   severities=(), corruption_seed=0,
                   provenance=None) -> EvalReport:
    """Clean + named-attack + corruption-grid accuracies as an EvalReport.

    Corruption cells evaluate in parallel against the frozen model; the
    cell keys and per-image corruption seeds are order-independent, so the
    report does not depend on the worker count.
    """
    clean = accuracy(model, dataset)
    attacks_out = {
        name: attack_accuracy(model, dataset, cfg)
        for name, cfg in sorted(dict(attack_cfgs or {}).items())
    }
    cells = {}
    if kinds and severities:
        suite = corruption_suite(
            dataset, tuple(kinds), tuple(severities), seed=corruption_seed
        )
        keys = sorted(suite)
        accs = parallel_map(lambda key: accuracy(model, suite[key]), keys)
        cells = dict(zip(keys, accs))
    return build_report(clean, attacks_out, cells, provenance)
