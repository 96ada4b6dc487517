import math

import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings, strategies as st

from interferospec.interferometer import AmziConfig, VoltageTrace, interference_power
from interferospec.noisemodel import white_model
from interferospec.spectral import (FREQ_PSD, PHASE_PSD, SpectrumEstimate, band_average, compensate_delay,
                                    delay_transfer, extract_phase, find_nulls, hann, moving_extrema_visibility,
                                    stitch_spectra, to_frequency_psd, welch_psd)
from interferospec.synth import PhaseTrace, synth_colored


def _white(n, fs, sigma=1.0, seed=0):
    return PhaseTrace(sigma * np.random.default_rng(seed).standard_normal(n), fs)


def test_hann_matches_scipy_periodic():
    for n in (8, 1024, 1001):
        np.testing.assert_allclose(hann(n), scipy.signal.get_window("hann", n, fftbins=True), atol=1e-15)


@pytest.mark.parametrize("window, overlap", [(256, 0.5), (1000, 0.5), (512, 0.75), (255, 0.0)])
def test_welch_matches_scipy(window, overlap):
    tr = _white(20_000, 1e3, seed=1)
    spec = welch_psd(tr, window, overlap)
    f, p = scipy.signal.welch(tr.samples, fs=1e3, window="hann", nperseg=window,
                              noverlap=window - int(window * (1 - overlap)), detrend="constant")
    np.testing.assert_allclose(spec.freqs, f[1:])
    np.testing.assert_allclose(spec.values, p[1:], rtol=1e-10)
    assert spec.unit == PHASE_PSD
    assert spec.meta["segments"] == 1 + (20_000 - window) // int(window * (1 - overlap))


def test_welch_parseval_and_level():
    sigma, fs = 0.3, 2e4
    tr = _white(1 << 20, fs, sigma, seed=2)
    spec = welch_psd(tr, 1 << 16, 0.5)
    df = spec.freqs[0]
    assert spec.meta["segments"] >= 16
    assert np.sum(spec.values) * df == pytest.approx(np.var(tr.samples), rel=0.03)
    level = 2 * sigma**2 / fs
    assert abs(10 * np.log10(np.mean(spec.values) / level)) < 1.0


def test_welch_validation():
    tr = _white(100, 1.0)
    with pytest.raises(ValueError):
        welch_psd(tr, 200)
    with pytest.raises(ValueError):
        welch_psd(tr, 1)
    with pytest.raises(ValueError):
        welch_psd(tr, 50, 1.0)


def test_visibility_noiseless_full_sweep():
    # V = (max - min) / (max + min) of (s + d cos) / 2 is d / s
    phi = np.linspace(0, 6 * np.pi, 20_000)
    v = 0.5 * (1.0 + 0.92 * np.cos(phi))
    est = moving_extrema_visibility(VoltageTrace(v, 1.0), smooth_window=1)
    assert est.visibility == pytest.approx(0.92, abs=1e-6)
    assert est.s == pytest.approx(1.0, abs=1e-6)
    assert est.d == pytest.approx(0.92, abs=1e-6)


def test_visibility_is_conservative_with_noise():
    phi = np.linspace(0, 8 * np.pi, 1 << 16)
    rng = np.random.default_rng(3)
    for cap in (0.92, 0.99):
        v = 0.5 * (1.0 + cap * np.cos(phi)) + 0.005 * rng.standard_normal(phi.size)
        est = moving_extrema_visibility(VoltageTrace(v, 1.0), smooth_window=32)
        assert cap - 0.02 <= est.visibility <= cap


def test_visibility_windowed_reports_worst_window():
    phi = np.linspace(0, 20 * np.pi, 10_000)
    vis = np.where(np.arange(10_000) < 5000, 0.95, 0.8)
    v = 0.5 * (1 + vis * np.cos(phi))
    est = moving_extrema_visibility(VoltageTrace(v, 1.0), smooth_window=1, extrema_window=2000)
    assert est.visibility == pytest.approx(0.8, abs=1e-3)
    with pytest.raises(ValueError):
        moving_extrema_visibility(VoltageTrace(v, 1.0), smooth_window=10, extrema_window=5)
    with pytest.raises(ValueError):
        moving_extrema_visibility(VoltageTrace(v, 1.0), extrema_window=20_000)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.05, 1.0), st.lists(st.floats(0, math.pi), min_size=1, max_size=50))
def test_extract_phase_inverts_fringe(s, ratio, phases):
    d = s * ratio
    phi = np.array(phases)
    v = VoltageTrace(0.5 * (s + d * np.cos(phi)), 10.0)
    out = extract_phase(v, s, d)
    # arccos loses precision near 0 and pi (slope ~ 1/sqrt(eps))
    assert np.allclose(out.samples, phi, atol=2e-7 / math.sqrt(ratio))
    assert out.provenance["clip_fraction"] == 0.0


def test_extract_phase_clips_and_validates():
    v = VoltageTrace(np.array([1.2, 0.5, -0.2]), 1.0)
    out = extract_phase(v, 1.0, 1.0)
    np.testing.assert_allclose(out.samples, [0.0, math.pi / 2, math.pi])
    assert out.provenance["clip_fraction"] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        extract_phase(v, 1.0, 0.0)
    with pytest.raises(ValueError):
        extract_phase(v, 0.5, 1.0)


def _spec(freqs, values, unit=PHASE_PSD, valid=None):
    return SpectrumEstimate(np.asarray(freqs, float), np.asarray(values, float), unit, valid)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        _spec([1, 2], [1, -1])
    with pytest.raises(ValueError):
        _spec([2, 1], [1, 1])
    with pytest.raises(ValueError):
        _spec([1, 2], [1, 1], unit="dB")
    ok = _spec([1, 2], [1, np.nan], valid=[True, False])
    assert ok.band(0, 3).tolist() == [True, False]


def test_compensate_delay_masks_nulls():
    tau = 6.6e-6
    f = np.arange(1, 2000) * 500.0
    spec = _spec(f, delay_transfer(f, tau) * 3e-9)
    out = compensate_delay(spec, tau, 0.05)
    k = np.arange(1, 7) / tau
    # every bin within the guard of a null is invalid, every valid bin recovers the input
    for fk in k:
        near = np.abs(f - fk) < 0.5 * math.asin(math.sqrt(0.05)) / (math.pi * tau)
        assert not out.valid[near].any()
    np.testing.assert_allclose(out.values[out.valid], 3e-9, rtol=1e-9)
    assert np.all(np.isnan(out.values[~out.valid]))
    assert not out.valid[0]


def test_compensate_delay_guard_low_option():
    tau = 1e-5
    f = np.array([10.0, 100.0, 1e5, 1e5 + 10.0])
    out = compensate_delay(_spec(f, delay_transfer(f, tau)), tau, 0.05, guard_low=False)
    assert out.valid.tolist() == [True, True, False, False]
    with pytest.raises(ValueError):
        compensate_delay(_spec(f, f, unit=FREQ_PSD), tau)
    with pytest.raises(ValueError):
        compensate_delay(_spec(f, f), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-7, 1e-4), st.floats(0.01, 0.5), st.floats(1e-12, 1e-3))
def test_compensate_recovers_flat_input(tau, guard, level):
    f = np.geomspace(1.0, 10 / tau, 500)
    out = compensate_delay(_spec(f, delay_transfer(f, tau) * level), tau, guard, guard_low=False)
    np.testing.assert_allclose(out.values[out.valid], level, rtol=1e-6)
    g = np.sin(np.pi * f * tau) ** 2
    assert np.all(out.valid[(g >= guard)])


def test_to_frequency_psd():
    f = np.array([1.0, 10.0, 100.0])
    out = to_frequency_psd(_spec(f, 1.0 / f**2))
    np.testing.assert_allclose(out.values, 1.0)
    assert out.unit == FREQ_PSD
    with pytest.raises(ValueError):
        to_frequency_psd(out)


def test_stitch_bands_and_ratio():
    a = _spec(np.arange(1, 1001) * 1.0, np.full(1000, 2.0))
    b = _spec(np.arange(1, 1001) * 10.0, np.full(1000, 1.0))
    out = stitch_spectra([a, b], [300.0])
    assert out.freqs[0] == 1.0 and out.freqs[-1] == 10_000.0
    assert np.all(out.values[out.freqs < 300] == 2.0) and np.all(out.values[out.freqs >= 300] == 1.0)
    st_ = out.meta["stitch"][0]
    assert st_["ratio_db"] == pytest.approx(10 * math.log10(2.0))
    assert st_["band"] == pytest.approx([300 / math.sqrt(10), 300 * math.sqrt(10)])
    with pytest.raises(ValueError):
        stitch_spectra([a, b], [5000.0])
    with pytest.raises(ValueError):
        stitch_spectra([a, b], [])
    with pytest.raises(ValueError):
        stitch_spectra([], [])


def test_band_average_flat_and_min_bins():
    f = np.arange(1, 100_001) * 1.0
    out = band_average(_spec(f, np.full(f.size, 5.0)), 10, 16)
    np.testing.assert_allclose(out.values, 5.0)
    assert min(out.meta["band_average"]["counts"]) >= 16
    assert np.all(np.diff(out.freqs) > 0)


def test_find_nulls_spacing():
    tau = 9.9e-6
    f = np.arange(1, 200_000) * 5.0
    values = delay_transfer(f, tau) * 1e-9 + 1e-15
    nulls, spacing = find_nulls(_spec(f, values), f_min=0.5 / tau)
    assert len(nulls) >= 9
    assert spacing == pytest.approx(1 / tau, rel=1e-3)
    _, nan = find_nulls(_spec(f[:100], np.ones(100)))
    assert math.isnan(nan)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-7, 1e-4), st.floats(0.001, 0.5), st.floats(0.001, 0.5), st.integers(0, 2**32 - 1))
def test_masking_is_monotone_and_output_positive(tau, g1, g2, seed):
    lo, hi = sorted((g1, g2))
    f = np.geomspace(0.5, 20 / tau, 400)
    values = np.random.default_rng(seed).exponential(1e-9, f.size)
    spec = _spec(f, values)
    a = compensate_delay(spec, tau, lo)
    b = compensate_delay(spec, tau, hi)
    assert not np.any(b.valid & ~a.valid)
    for out in (a, b):
        assert np.all(np.isfinite(out.values[out.valid])) and np.all(out.values[out.valid] >= 0)


def test_extraction_inverts_interference_to_1e9():
    cfg = AmziConfig(1e-6, 0.7, 1.9, 0.93)
    s, d = cfg.fringe_sum_diff()
    # arccos loses digits within ~1e-3 rad of 0 and pi, where d(arccos)/dx ~ 1/sin
    phi = np.linspace(1e-3, math.pi - 1e-3, 100_001)
    p = interference_power(PhaseTrace(phi, 1.0), cfg)
    out = extract_phase(VoltageTrace(p.samples, 1.0), s, d)
    assert np.max(np.abs(out.samples - phi)) < 1e-9


def test_extraction_folds_large_excursions():
    cfg = AmziConfig(1e-6)
    s, d = cfg.fringe_sum_diff()
    phi = np.linspace(-3 * math.pi, 3 * math.pi, 1001)
    out = extract_phase(VoltageTrace(interference_power(PhaseTrace(phi, 1.0), cfg).samples, 1.0), s, d)
    folded = np.arccos(np.cos(phi))
    assert np.max(np.abs(out.samples - folded)) < 1e-6


def test_white_model_stitches_consistently():
    model = white_model(1e-8)
    parts = [welch_psd(synth_colored(model, fs, 1 << 18, seed), 1 << 12, 0.5)
             for fs, seed in ((2e4, 1), (2e6, 2))]
    out = stitch_spectra(parts, [math.sqrt(0.4 * 2e4 * 10 * 2e6 / 4096)])
    assert abs(out.meta["stitch"][0]["ratio_db"]) <= 2.0
