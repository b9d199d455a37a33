"""Corruption statistics against their nominal parameters, determinism
split between stochastic and deterministic kinds, suite reproducibility."""

import numpy as np
import pytest

from phaseforge import corruptions
from phaseforge.corruptions import (
    KINDS,
    SEVERITIES,
    CorruptionSpec,
    corrupt,
    corruption_suite,
    disk_kernel,
    line_kernel,
)
from phaseforge.data import synth_dataset


def flat_image(value=0.5, shape=(3, 32, 32)):
    return np.full(shape, value, dtype=np.float32)


class TestSpec:
    def test_all_cells_have_parameters(self):
        for kind in KINDS:
            for sev in SEVERITIES:
                assert CorruptionSpec(kind, sev).parameter is not None

    def test_rejects_unknown_kind_and_severity(self):
        with pytest.raises(ValueError, match="kind"):
            CorruptionSpec("fog", 1)
        with pytest.raises(ValueError, match="severity"):
            CorruptionSpec("brightness", 0)
        with pytest.raises(ValueError, match="severity"):
            CorruptionSpec("brightness", 6)


class TestStochasticKinds:
    def test_gaussian_noise_std_matches_parameter(self):
        spec = CorruptionSpec("gaussian_noise", 1)  # std 0.04, far from clip
        x = flat_image()
        diffs = np.concatenate(
            [(corrupt(x, spec, seed=s) - x).ravel() for s in range(20)]
        )
        assert np.std(diffs) == pytest.approx(0.04, rel=0.05)
        assert np.mean(diffs) == pytest.approx(0.0, abs=0.002)

    def test_shot_noise_poisson_variance(self):
        spec = CorruptionSpec("shot_noise", 1)  # 500 photons per unit
        x = flat_image()
        diffs = np.concatenate(
            [(corrupt(x, spec, seed=s) - x).ravel() for s in range(20)]
        )
        # var of Poisson(500 * 0.5)/500 is 0.5/500
        assert np.var(diffs) == pytest.approx(0.5 / 500, rel=0.1)

    def test_impulse_count_is_binomial(self):
        spec = CorruptionSpec("impulse_noise", 3)  # p = 0.06
        x = flat_image()  # interior value: every hit is visible as 0 or 1
        n = x.size
        trials = 100
        total = sum(
            int(np.sum(np.isin(corrupt(x, spec, seed=s), (0.0, 1.0))))
            for s in range(trials)
        )
        mean = trials * n * 0.06
        sigma = np.sqrt(trials * n * 0.06 * 0.94)
        assert abs(total - mean) <= 4 * sigma

    def test_impulse_salt_pepper_split(self):
        spec = CorruptionSpec("impulse_noise", 5)
        x = flat_image()
        out = np.concatenate([corrupt(x, spec, seed=s).ravel() for s in range(20)])
        salt = np.sum(out == 1.0)
        pepper = np.sum(out == 0.0)
        assert abs(salt - pepper) / (salt + pepper) < 0.05

    def test_seed_controls_stochastic_kinds(self):
        x = flat_image()
        for kind in corruptions.STOCHASTIC_KINDS:
            spec = CorruptionSpec(kind, 2)
            a = corrupt(x, spec, seed=1)
            b = corrupt(x, spec, seed=1)
            c = corrupt(x, spec, seed=2)
            assert a.tobytes() == b.tobytes(), kind
            assert a.tobytes() != c.tobytes(), kind


class TestDeterministicKinds:
    @pytest.mark.parametrize(
        "kind", ["defocus_blur", "motion_blur", "brightness", "contrast", "pixelate"]
    )
    def test_seed_is_ignored(self, kind, rng):
        x = rng.random((3, 32, 32)).astype(np.float32)
        spec = CorruptionSpec(kind, 3)
        a = corrupt(x, spec, seed=1)
        b = corrupt(x, spec, seed=999)
        assert a.tobytes() == b.tobytes()

    def test_brightness_formula(self, rng):
        x = rng.random((3, 8, 8)).astype(np.float32)
        out = corrupt(x, CorruptionSpec("brightness", 2), seed=0)
        np.testing.assert_allclose(out, np.clip(x + 0.2, 0, 1), atol=1e-7)

    def test_contrast_preserves_channel_means(self, rng):
        x = (0.3 + 0.4 * rng.random((3, 16, 16))).astype(np.float32)  # no clipping
        out = corrupt(x, CorruptionSpec("contrast", 4), seed=0)
        np.testing.assert_allclose(
            out.mean(axis=(1, 2)), x.mean(axis=(1, 2)), atol=1e-6
        )
        ratio = out.std(axis=(1, 2)) / x.std(axis=(1, 2))
        np.testing.assert_allclose(ratio, 0.30, rtol=1e-5)

    def test_blur_kernels_normalized(self):
        for sev in SEVERITIES:
            assert disk_kernel(
                corruptions.SEVERITY_TABLE["defocus_blur"][sev - 1]
            ).sum() == pytest.approx(1.0)
            assert line_kernel(
                corruptions.SEVERITY_TABLE["motion_blur"][sev - 1]
            ).sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", ["defocus_blur", "motion_blur"])
    def test_blur_fixes_constants_and_shrinks_variance(self, kind, rng):
        flat = flat_image(0.4)
        out = corrupt(flat, CorruptionSpec(kind, 5), seed=0)
        np.testing.assert_allclose(out, flat, atol=1e-7)
        x = rng.random((3, 32, 32)).astype(np.float32)
        blurred = corrupt(x, CorruptionSpec(kind, 5), seed=0)
        assert blurred.var() < x.var()

    def test_motion_blur_is_directional(self):
        # a vertical edge smears along the diagonal but a 45-degree diagonal
        # stripe survives better than under an isotropic blur of the same size
        x = np.zeros((1, 32, 32), dtype=np.float32)
        x[0, :, 16] = 1.0  # vertical line
        out = corrupt(x, CorruptionSpec("motion_blur", 5), seed=0)
        assert out.max() < 0.5  # streaked out

        diag = np.zeros((1, 32, 32), dtype=np.float32)
        idx = np.arange(32)
        diag[0, idx, idx] = 1.0  # aligned with the streak direction
        out_diag = corrupt(diag, CorruptionSpec("motion_blur", 5), seed=0)
        assert out_diag.max() > 0.9  # nearly untouched along its own direction

    def test_pixelate_block_structure_with_ragged_edge(self, rng):
        x = rng.random((3, 32, 32)).astype(np.float32)
        out = corrupt(x, CorruptionSpec("pixelate", 4), seed=0)  # block 6
        # interior block is constant at the block mean
        block = x[:, 0:6, 0:6].mean(axis=(1, 2))
        for c in range(3):
            np.testing.assert_allclose(out[c, 0:6, 0:6], block[c], atol=1e-6)
        # ragged last block is 2 wide (32 = 5*6 + 2) and still constant
        tail = x[:, 30:32, 30:32].mean(axis=(1, 2))
        for c in range(3):
            np.testing.assert_allclose(out[c, 30:32, 30:32], tail[c], atol=1e-6)

    def test_severity_monotone_distortion(self, rng):
        x = rng.random((3, 32, 32)).astype(np.float32) * 0.8 + 0.1
        for kind in KINDS:
            prev = -1.0
            for sev in SEVERITIES:
                d = float(
                    np.mean((corrupt(x, CorruptionSpec(kind, sev), seed=7) - x) ** 2)
                )
                assert d >= prev - 1e-9, (kind, sev)
                prev = d


class TestSuite:
    def test_suite_covers_grid_and_reproduces(self):
        ds = synth_dataset("bars", 12, 4, seed=0)
        a = corruption_suite(ds, kinds=("gaussian_noise", "brightness"), seed=3)
        b = corruption_suite(ds, kinds=("gaussian_noise", "brightness"), seed=3)
        assert set(a) == {("gaussian_noise", s) for s in SEVERITIES} | {
            ("brightness", s) for s in SEVERITIES
        }
        for cell in a:
            assert a[cell].images.tobytes() == b[cell].images.tobytes()
            np.testing.assert_array_equal(a[cell].labels, ds.labels)

    def test_suite_seed_changes_stochastic_cells_only(self):
        ds = synth_dataset("bars", 6, 2, seed=1)
        a = corruption_suite(ds, kinds=("gaussian_noise", "brightness"), seed=3)
        b = corruption_suite(ds, kinds=("gaussian_noise", "brightness"), seed=4)
        assert (
            a[("gaussian_noise", 1)].images.tobytes()
            != b[("gaussian_noise", 1)].images.tobytes()
        )
        assert (
            a[("brightness", 1)].images.tobytes()
            == b[("brightness", 1)].images.tobytes()
        )

    def test_suite_independent_of_worker_count(self, monkeypatch):
        ds = synth_dataset("bars", 6, 2, seed=2)
        monkeypatch.setenv("PHASEFORGE_THREADS", "1")
        a = corruption_suite(ds, kinds=("shot_noise",), seed=0)
        monkeypatch.setenv("PHASEFORGE_THREADS", "4")
        b = corruption_suite(ds, kinds=("shot_noise",), seed=0)
        for cell in a:
            assert a[cell].images.tobytes() == b[cell].images.tobytes()
