"""Report assembly: accuracy oracles, spread statistics on frozen benchmark
rows, overfitting detection on hand-built logs, and emit/parse round trips."""

import numpy as np
import pytest

from phaseforge import models, report
from phaseforge.attacks import AttackConfig
from phaseforge.data import Dataset, synth_dataset
from phaseforge.report import (
    EvalReport,
    accuracy,
    attack_accuracy,
    build_report,
    emit,
    evaluate_model,
    kind_gap,
    overfit_scan,
    parse_report_csv,
    parse_report_json,
    per_kind_mean,
    report_csv,
    report_json,
    svg_bars,
    svg_curves,
    uniformity_gap,
)
from phaseforge.training import CSV_HEADER, EpochRecord, TrainLog

# severity-3 rows of a published per-corruption accuracy table, used as
# frozen fixtures for the spread statistics
BENCH_KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur",
    "glass_blur", "motion_blur", "zoom_blur", "snow", "frost", "fog",
    "brightness", "contrast", "elastic", "pixelate", "jpeg",
)
ROW_STD = (75.5, 80.4, 76.0, 92.2, 70.6, 89.3, 90.9, 86.0, 86.7, 91.6,
           93.3, 92.2, 86.3, 88.3, 79.3)
ROW_AMP_SWAPPED = (87.6, 87.9, 82.9, 86.9, 81.4, 85.2, 87.0, 85.6, 87.4,
                   81.7, 89.0, 84.4, 84.5, 87.2, 86.6)


def _row_cells(values, severity=3):
    return {(k, severity): v for k, v in zip(BENCH_KINDS, values)}


def _record(epoch, fgsm=60.0, pgd=55.0, lr=0.1):
    return EpochRecord(epoch, 1.0, 80.0, fgsm, pgd, lr, 0.0)


class TestAccuracy:
    def test_forced_match_scores_100(self):
        model = models.build_preset("linear-k2", seed=5)
        images = np.random.default_rng(0).random((40, 3, 32, 32)).astype(np.float32)
        labels = models.predict(model, images)
        ds = Dataset(images, labels, ("a", "b"), split="test")
        assert accuracy(model, ds) == 100.0

    def test_constant_logits_score_majority_fraction(self):
        model = models.build_preset("linear-k2", seed=0)
        for p in model.parameters():
            p.data[...] = 0.0
        images = np.random.default_rng(1).random((40, 3, 32, 32)).astype(np.float32)
        labels = np.array([0] * 28 + [1] * 12, dtype=np.int64)
        ds = Dataset(images, labels, ("a", "b"), split="test")
        # ties resolve to class 0, the majority here
        assert accuracy(model, ds) == pytest.approx(100.0 * 28 / 40)

    def test_random_model_on_balanced_k4_is_near_chance(self):
        ds = synth_dataset("bars", 1000, 4, seed=11, split="test")
        model = models.build_preset("smallcnn-k4", seed=97)
        acc = accuracy(model, ds)
        # binomial 4-sigma band around 25% for n=1000
        assert 18.0 <= acc <= 32.0

    def test_permutation_invariant(self):
        ds = synth_dataset("bars", 64, 4, seed=3, split="test")
        model = models.build_preset("smallcnn-k4", seed=4)
        perm = np.random.default_rng(9).permutation(len(ds))
        assert accuracy(model, ds) == accuracy(model, ds.take(perm))

    def test_empty_dataset_rejected(self):
        model = models.build_preset("linear-k2", seed=0)
        empty = Dataset(
            np.zeros((0, 3, 32, 32), np.float32), np.zeros((0,), np.int64),
            ("a", "b"),
        )
        with pytest.raises(ValueError, match="empty"):
            accuracy(model, empty)
        with pytest.raises(ValueError, match="empty"):
            attack_accuracy(model, empty, AttackConfig(kind="fgsm"))

    def test_zero_epsilon_attack_equals_clean(self):
        ds = synth_dataset("bars", 48, 4, seed=6, split="test")
        model = models.build_preset("smallcnn-k4", seed=7)
        clean = accuracy(model, ds)
        cfg = AttackConfig(kind="pgd", epsilon=0.0, alpha=1 / 255, steps=3)
        assert attack_accuracy(model, ds, cfg) == clean


class TestSpreadStatistics:
    def test_equal_kinds_give_zero_gap(self):
        cells = {("noise", s): 50.0 for s in (1, 2, 3)}
        cells.update({("blur", s): 50.0 for s in (1, 2, 3)})
        assert uniformity_gap(cells) == 0.0

    def test_published_std_row_gap(self):
        r = build_report(corruption_accs=_row_cells(ROW_STD))
        assert abs(r.uniformity_gap - 22.7) < 1e-12
        means = per_kind_mean(r)
        assert means["brightness"] == 93.3 and means["glass_blur"] == 70.6

    def test_published_amp_swapped_row_gaps(self):
        r = build_report(corruption_accs=_row_cells(ROW_AMP_SWAPPED))
        # max/min framing: brightness 89.0 over glass blur 81.4
        assert abs(r.uniformity_gap - 7.6) < 1e-12
        # named-pairing framing quoted alongside it: shot noise over glass blur
        assert abs(kind_gap(r, "shot_noise", "glass_blur") - 6.5) < 1e-12

    def test_gap_averages_severities_within_kind(self):
        cells = {
            ("noise", 1): 90.0, ("noise", 2): 70.0,
            ("blur", 1): 60.0, ("blur", 2): 40.0,
        }
        assert uniformity_gap(cells) == pytest.approx(30.0)

    def test_single_kind_rejected(self):
        with pytest.raises(ValueError, match="2 corruption kinds"):
            uniformity_gap({("noise", 1): 50.0, ("noise", 2): 40.0})

    def test_kind_gap_unknown_kind_rejected(self):
        r = build_report(corruption_accs=_row_cells(ROW_STD))
        with pytest.raises(KeyError, match="smudge"):
            kind_gap(r, "smudge", "glass_blur")


class TestEvalReportValidation:
    def test_corr_mean_must_match_cells(self):
        cells = _row_cells(ROW_STD)
        with pytest.raises(ValueError, match="corr_mean"):
            EvalReport(None, {}, cells, 12.0, 22.7)

    def test_uniformity_gap_must_match_cells(self):
        cells = _row_cells(ROW_STD)
        mean = sum(cells.values()) / len(cells)
        with pytest.raises(ValueError, match="uniformity_gap"):
            EvalReport(None, {}, cells, mean, 1.0)

    def test_percentages_bounded(self):
        with pytest.raises(ValueError, match="clean_acc"):
            build_report(clean_acc=101.0)
        with pytest.raises(ValueError, match="pgd"):
            build_report(attack_accs={"pgd": -0.5})

    def test_derived_stats_none_without_cells(self):
        r = build_report(clean_acc=80.0)
        assert r.corr_mean is None and r.uniformity_gap is None


class TestOverfitScan:
    def test_monotone_log_is_clean(self):
        log = TrainLog([_record(e, pgd=40.0 + e) for e in range(1, 10)])
        found = overfit_scan(log)
        assert found.catastrophic is None and found.robust is None

    def test_catastrophic_collapse_flagged_at_its_epoch(self):
        recs = [_record(e) for e in range(1, 10)]
        recs.append(_record(10, fgsm=97.1, pgd=1.5))
        recs.append(_record(11, fgsm=98.0, pgd=1.2))
        found = overfit_scan(TrainLog(recs))
        assert found.catastrophic == 10
        assert found.robust is None

    def test_post_decay_slump_flagged_at_first_crossing(self):
        recs = [_record(e, pgd=50.0 + e) for e in range(1, 6)]  # peak 55
        recs += [_record(e, pgd=44.0, lr=0.01) for e in range(6, 12)]
        found = overfit_scan(TrainLog(recs))
        assert found.robust == 6

    def test_recovering_slump_not_flagged(self):
        recs = [_record(e, pgd=50.0 + e) for e in range(1, 6)]
        recs.append(_record(6, pgd=44.0, lr=0.01))
        recs.append(_record(7, pgd=54.0, lr=0.01))
        assert overfit_scan(TrainLog(recs)).robust is None

    def test_no_decay_means_no_robust_finding(self):
        recs = [_record(e, pgd=55.0) for e in range(1, 5)]
        recs += [_record(e, pgd=30.0) for e in range(5, 9)]
        assert overfit_scan(TrainLog(recs)).robust is None

    def test_thresholds_are_parameters(self):
        recs = [_record(1), _record(2, fgsm=80.0, pgd=50.0)]
        assert overfit_scan(TrainLog(recs)).catastrophic is None
        assert overfit_scan(TrainLog(recs), catastrophic_gap=20.0).catastrophic == 2

    def test_empty_log_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            overfit_scan(TrainLog([]))


class TestEmission:
    def _full_report(self):
        return build_report(
            84.25, {"fgsm": 52.5, "pgd": 41.125}, _row_cells(ROW_STD),
            provenance={"checkpoint": "abc123", "seed": 7},
        )

    def test_empty_report_csv_is_header_only(self):
        r = build_report()
        assert report_csv(r) == "section,name,severity,value\n"

    def test_csv_round_trip_is_numerically_identical(self):
        r = self._full_report()
        back = parse_report_csv(report_csv(r))
        assert back.clean_acc == r.clean_acc
        assert back.attack_accs == r.attack_accs
        assert back.corruption_accs == r.corruption_accs
        assert back.corr_mean == r.corr_mean
        assert back.uniformity_gap == r.uniformity_gap

    def test_csv_summary_rows_cross_checked(self):
        lines = report_csv(self._full_report()).splitlines()
        doctored = [
            ln if not ln.startswith("summary,corr_mean") else "summary,corr_mean,,5.0"
            for ln in lines
        ]
        with pytest.raises(ValueError, match="corr_mean"):
            parse_report_csv("\n".join(doctored) + "\n")

    def test_csv_header_and_shape_validated(self):
        with pytest.raises(ValueError, match="must start with"):
            parse_report_csv("nope\n")
        with pytest.raises(ValueError, match="malformed"):
            parse_report_csv("section,name,severity,value\nclean,clean\n")
        with pytest.raises(ValueError, match="unknown report section"):
            parse_report_csv("section,name,severity,value\nbogus,x,,1.0\n")

    def test_json_round_trip_carries_provenance(self):
        r = self._full_report()
        back = parse_report_json(report_json(r))
        assert back.corruption_accs == r.corruption_accs
        assert back.provenance == r.provenance
        assert back.corr_mean == r.corr_mean

    def test_two_series_svg_has_exactly_two_polylines(self):
        svg = svg_curves({"clean": [70.0, 75.0, 80.0], "pgd": [40.0, 42.0, 41.0]})
        assert svg.count("<polyline") == 2
        assert "<svg" in svg and "</svg>" in svg

    def test_train_log_svg_has_three_series_and_legend(self):
        log = TrainLog([_record(e) for e in range(1, 6)])
        svg = emit(log, "svg").decode()
        assert svg.count("<polyline") == 3
        for name in ("clean", "fgsm", "pgd"):
            assert f">{name}</text>" in svg

    def test_report_svg_bars_match_kind_count(self):
        svg = emit(self._full_report(), "svg").decode()
        assert svg.count("<rect") == len(BENCH_KINDS) + 1  # +1 background

    def test_bar_names_are_xml_escaped(self):
        svg = svg_bars({"a<b": 50.0, "c&d": 60.0})
        assert "a&lt;b" in svg and "c&amp;d" in svg and "<rect" in svg

    def test_emit_train_log_csv_matches_canonical_form(self):
        log = TrainLog([_record(e) for e in range(1, 4)])
        data = emit(log, "csv").decode()
        assert data == log.to_csv()
        assert data.startswith(CSV_HEADER)

    def test_emit_rejects_unknown_formats_and_types(self):
        with pytest.raises(ValueError, match="csv, json, or svg"):
            emit(self._full_report(), "pdf")
        with pytest.raises(ValueError, match="csv or svg"):
            emit(TrainLog([_record(1)]), "json")
        with pytest.raises(TypeError, match="TrainLog or EvalReport"):
            emit({"not": "a report"}, "csv")

    def test_svg_curves_input_validation(self):
        with pytest.raises(ValueError, match="at least one series"):
            svg_curves({})
        with pytest.raises(ValueError, match="one nonzero length"):
            svg_curves({"a": [1.0, 2.0], "b": [1.0]})


class TestEvaluateModel:
    def test_grid_report_is_deterministic_and_complete(self):
        ds = synth_dataset("bars", 32, 4, seed=21, split="test")
        model = models.build_preset("smallcnn-k4", seed=22)
        cfgs = {"fgsm": AttackConfig(kind="fgsm", epsilon=2 / 255)}
        kinds = ("gaussian_noise", "brightness")
        first = evaluate_model(
            model, ds, cfgs, kinds=kinds, severities=(1, 3),
            corruption_seed=5, provenance={"run": "t"},
        )
        again = evaluate_model(
            model, ds, cfgs, kinds=kinds, severities=(1, 3), corruption_seed=5
        )
        assert first.clean_acc == accuracy(model, ds)
        assert set(first.corruption_accs) == {
            (k, s) for k in kinds for s in (1, 3)
        }
        assert first.corruption_accs == again.corruption_accs
        assert first.attack_accs == again.attack_accs
        assert first.provenance == {"run": "t"}
        assert emit(first, "csv") == emit(
            build_report(first.clean_acc, first.attack_accs,
                         first.corruption_accs, first.provenance),
            "csv",
        )
