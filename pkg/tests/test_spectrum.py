"""Spectral swap algebra: self-swap and degenerate-pair identities, polar
range invariants, preservation of the donor amplitude and recipient phase."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phaseforge import spectrum
from phaseforge.spectrum import AmpPhase, aas, decompose, phase_image, recompose, swap_image


def _rand_image(rng, shape=(3, 32, 32)):
    return rng.random(shape)


class TestPolarForm:
    def test_amplitude_nonnegative_phase_in_range(self, rng):
        ap = decompose(_rand_image(rng))
        assert ap.amplitude.min() >= 0.0
        assert ap.phase.min() > -np.pi
        assert ap.phase.max() <= np.pi

    def test_negative_dc_lands_on_plus_pi(self):
        # constant -0.5 grid: DC bin is negative real, phase must be +pi
        ap = decompose(np.full((4, 4), -0.5))
        assert ap.phase[0, 0] == pytest.approx(np.pi)

    def test_round_trip_decompose_recompose(self, rng):
        x = _rand_image(rng, (3, 16, 16))
        out = recompose(decompose(x))
        assert np.max(np.abs(out.pre_clip - x)) < 1e-9
        assert out.imag_residue < 1e-9

    def test_amp_phase_validation(self):
        with pytest.raises(ValueError, match="nonnegative"):
            AmpPhase(-np.ones((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError, match="pi"):
            AmpPhase(np.ones((2, 2)), np.full((2, 2), 4.0))
        with pytest.raises(ValueError, match="differ"):
            AmpPhase(np.ones((2, 2)), np.zeros((2, 3)))

    def test_parseval_via_amplitude(self, rng):
        # sum A^2 / (HW) equals pixel energy; phase carries none of it
        x = rng.random((8, 8))
        ap = decompose(x)
        assert np.sum(ap.amplitude ** 2) / 64 == pytest.approx(
            np.sum(x ** 2), rel=1e-10
        )


class TestSwaps:
    def test_self_swap_is_identity(self, rng):
        x = _rand_image(rng)
        out = swap_image(x, x)
        assert np.max(np.abs(out.pre_clip - x)) < 1e-9
        assert out.imag_residue < 1e-9

    def test_degenerate_pair_returns_original(self, rng):
        x = _rand_image(rng)
        aa, ap = aas(x, x.copy())
        assert np.max(np.abs(aa.pre_clip - x)) < 1e-9
        assert np.max(np.abs(ap.pre_clip - x)) < 1e-9

    def test_aa_preserves_donor_amplitude_and_clean_phase(self, rng):
        x = _rand_image(rng, (3, 16, 16))
        x_adv = np.clip(x + rng.uniform(-8 / 255, 8 / 255, x.shape), 0, 1)
        aa, ap = aas(x, x_adv)
        amp_adv = decompose(x_adv).amplitude
        phase_clean = decompose(x).phase
        got = decompose(aa.pre_clip)
        assert np.max(np.abs(got.amplitude - amp_adv)) < 1e-6
        # compare phases as unit vectors to avoid wrap artifacts; weight by
        # amplitude so empty bins cannot dominate
        diff = np.abs(np.exp(1j * got.phase) - np.exp(1j * phase_clean))
        assert np.max(diff * (amp_adv > 1e-6 * amp_adv.max())) < 1e-6

    def test_ap_preserves_clean_amplitude_and_adv_phase(self, rng):
        x = _rand_image(rng, (3, 16, 16))
        x_adv = np.clip(x + rng.uniform(-8 / 255, 8 / 255, x.shape), 0, 1)
        _, ap = aas(x, x_adv)
        amp_clean = decompose(x).amplitude
        phase_adv = decompose(x_adv).phase
        got = decompose(ap.pre_clip)
        assert np.max(np.abs(got.amplitude - amp_clean)) < 1e-6
        diff = np.abs(np.exp(1j * got.phase) - np.exp(1j * phase_adv))
        assert np.max(diff * (amp_clean > 1e-6 * amp_clean.max())) < 1e-6

    def test_swap_output_is_real_and_clipped(self, rng):
        x = _rand_image(rng)
        m = _rand_image(rng)
        out = swap_image(x, m)
        assert out.imag_residue < 1e-9
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0
        np.testing.assert_array_equal(out.image, np.clip(out.pre_clip, 0, 1))

    def test_swap_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="match"):
            swap_image(rng.random((3, 8, 8)), rng.random((3, 8, 9)))
        with pytest.raises(ValueError, match="match"):
            aas(rng.random((3, 8, 8)), rng.random((1, 8, 8)))

    def test_batched_swap_matches_per_image(self, rng):
        x = rng.random((4, 3, 8, 8))
        m = rng.random((4, 3, 8, 8))
        full = swap_image(x, m)
        for i in range(4):
            single = swap_image(x[i], m[i])
            np.testing.assert_array_equal(full.pre_clip[i], single.pre_clip)

    def test_phase_image_keeps_phase_unit_amplitude(self, rng):
        x = _rand_image(rng, (8, 8))
        out = phase_image(x)
        got = decompose(out.pre_clip)
        np.testing.assert_allclose(got.amplitude, 1.0, atol=1e-9)
        orig_phase = decompose(x).phase
        diff = np.abs(np.exp(1j * got.phase) - np.exp(1j * orig_phase))
        assert np.max(diff) < 1e-9

    def test_swap_is_asymmetric_for_distinct_images(self, rng):
        x = _rand_image(rng, (8, 8))
        m = _rand_image(rng, (8, 8))
        a = swap_image(x, m).pre_clip
        b = swap_image(m, x).pre_clip
        assert np.max(np.abs(a - b)) > 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_property_swap_energy_comes_from_donor(seed):
    """Pixel energy of a swap equals the amplitude donor's energy."""
    rng = np.random.default_rng(seed)
    x = rng.random((8, 8))
    m = rng.random((8, 8))
    out = swap_image(x, m)
    assert np.sum(out.pre_clip ** 2) == pytest.approx(np.sum(m ** 2), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_property_single_sided_routes_match_aas(seed):
    """aa_image/ap_image reproduce the two aas halves bin for bin."""
    rng = np.random.default_rng(seed)
    x = rng.random((3, 8, 8))
    x_adv = np.clip(x + rng.uniform(-0.03, 0.03, x.shape), 0.0, 1.0)
    aa, ap = aas(x, x_adv)
    fast_aa = spectrum.aa_image(x, x_adv)
    fast_ap = spectrum.ap_image(x, x_adv)
    np.testing.assert_allclose(fast_aa.pre_clip, aa.pre_clip, atol=1e-9)
    np.testing.assert_allclose(fast_ap.pre_clip, ap.pre_clip, atol=1e-9)


def test_single_sided_routes_handle_zero_image():
    """All-zero spectra take the zero-amplitude branch on every bin."""
    zero = np.zeros((4, 4))
    bump = np.zeros((4, 4))
    bump[1, 2] = 0.5
    aa, ap = aas(zero, bump)
    fast_aa = spectrum.aa_image(zero, bump)
    fast_ap = spectrum.ap_image(zero, bump)
    np.testing.assert_allclose(fast_aa.pre_clip, aa.pre_clip, atol=1e-12)
    np.testing.assert_allclose(fast_ap.pre_clip, ap.pre_clip, atol=1e-12)
