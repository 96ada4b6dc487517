import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interferospec.interferometer import (AmziConfig, AmziScenario, Channel, DetectorConfig, PowerTrace,
                                          VoltageTrace, delay_difference, detect_classical,
                                          fractional_delay_kernel, interference_power, run_parallel_amzis,
                                          scenario_lengths)
from interferospec.noisemodel import PsdComponent, PsdModel, eval_psd, preset_fibre, white_model
from interferospec.spectral import SpectrumEstimate, band_average, delay_transfer, extract_phase, welch_psd
from interferospec.synth import PhaseTrace, synth_colored


def test_arm_powers_and_fringe():
    cfg = AmziConfig(tau=1e-6, insertion_loss_arm1=3.0, insertion_loss_arm2=0.0, input_power=2e-3)
    p1, p2 = cfg.arm_powers()
    assert p1 == pytest.approx(1e-3 * 10 ** -0.3)
    assert p2 == pytest.approx(1e-3)
    s, d = cfg.fringe_sum_diff()
    assert s == pytest.approx(p1 + p2)
    assert d == pytest.approx(2 * math.sqrt(p1 * p2))


@pytest.mark.parametrize("kwargs", [dict(tau=-1.0), dict(tau=1.0, insertion_loss_arm1=-1.0),
                                    dict(tau=1.0, visibility_cap=0.0), dict(tau=1.0, visibility_cap=1.1),
                                    dict(tau=1.0, input_power=0.0)])
def test_amzi_validation(kwargs):
    with pytest.raises(ValueError):
        AmziConfig(**kwargs)


def test_interference_extrema_and_visibility():
    # balanced arms: P = P_in (1 + cap cos(dphi)) / 2
    cfg = AmziConfig(tau=1e-6, visibility_cap=0.9, input_power=1e-3)
    p = interference_power(PhaseTrace(np.array([0.0, math.pi / 2, math.pi]), 1.0), cfg).samples
    assert p[0] == pytest.approx(0.5 * (1e-3 + 0.9e-3))
    assert p[1] == pytest.approx(0.5e-3)
    assert p[2] == pytest.approx(0.5 * (1e-3 - 0.9e-3))
    assert (p[0] - p[2]) / (p[0] + p[2]) == pytest.approx(0.9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 1.0),
       st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_interference_within_fringe_bounds(l1, l2, cap, phases):
    cfg = AmziConfig(1e-6, l1, l2, cap)
    p1, p2 = cfg.arm_powers()
    p = interference_power(PhaseTrace(np.array(phases), 1.0), cfg).samples
    hi = 0.5 * (p1 + p2 + 2 * math.sqrt(p1 * p2) * cap)
    lo = 0.5 * (p1 + p2 - 2 * math.sqrt(p1 * p2) * cap)
    assert np.all(p <= hi * (1 + 1e-12)) and np.all(p >= lo * (1 - 1e-12) - 1e-18)
    # ideal visibility never exceeds 1 and equals 1 only for balanced arms
    assert 2 * math.sqrt(p1 * p2) / (p1 + p2) <= 1 + 1e-12


def test_kernel_unit_sum_and_integer_limit():
    h = fractional_delay_kernel(0.3)
    assert h.size == 64
    assert h.sum() == pytest.approx(1.0, abs=1e-14)
    h0 = fractional_delay_kernel(0.0)
    assert h0[31] == pytest.approx(1.0) and np.allclose(np.delete(h0, 31), 0.0, atol=1e-12)


def test_integer_delay_is_exact():
    x = np.random.default_rng(0).standard_normal(100)
    out = delay_difference(PhaseTrace(x, 10.0), 0.3)
    np.testing.assert_array_equal(out.samples, x[3:] - x[:97])


@pytest.mark.parametrize("d", [0.37, 4.95, 33.5, 65.66])
def test_fractional_delay_sinusoid(d):
    # phi = sin(2 pi f t): phi(t + tau) - phi(t) is known in closed form
    fs, n = 1.0, 4096
    t = np.arange(n)
    for f in (0.01, 0.2, 0.4):
        x = np.sin(2 * np.pi * f * t + 0.3)
        out = delay_difference(PhaseTrace(x, fs), d).samples
        assert out.size == n - math.ceil(d)
        exact = np.sin(2 * np.pi * f * (t[:out.size] + d) + 0.3) - x[:out.size]
        interior = slice(32, out.size - 32)
        assert np.max(np.abs(out[interior] - exact[interior])) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 40.0), st.floats(-5, 5), st.floats(-2, 2))
def test_fractional_delay_linear_ramp_exact_everywhere(d, a, b):
    # odd reflection keeps the padding on the line, so edges are exact too
    x = a + b * np.arange(200.0)
    out = delay_difference(PhaseTrace(x, 1.0), d).samples
    assert np.allclose(out, b * d, atol=1e-9 * (1 + abs(a) + abs(b) * 200))


def test_delay_difference_validation():
    tr = PhaseTrace(np.zeros(10), 1.0)
    with pytest.raises(ValueError):
        delay_difference(tr, -1.0)
    with pytest.raises(ValueError):
        delay_difference(tr, 10.0)


def test_detect_classical_affine_law():
    p = PowerTrace(np.array([0.0, 1e-3, 2e-3, 1e-3]), 2.0)
    det = DetectorConfig(responsivity=500.0, dc_offset=0.01, offset_drift_rate=0.1, fs=2.0)
    v = detect_classical(p, det, 0).samples
    t = np.arange(4) / 2.0
    np.testing.assert_allclose(v, 500 * p.samples + 0.01 + 0.1 * t)


def test_detect_classical_noise_and_determinism():
    p = PowerTrace(np.full(50_000, 1e-3), 1e3)
    det = DetectorConfig(additive_noise_rms=0.01, fs=1e3)
    a = detect_classical(p, det, 4).samples
    b = detect_classical(p, det, 4).samples
    assert a.tobytes() == b.tobytes()
    assert np.std(a) == pytest.approx(0.01, rel=0.02)
    assert np.mean(a) == pytest.approx(1.0, abs=3 * 0.01 / math.sqrt(50_000))
    with pytest.raises(ValueError):
        detect_classical(PowerTrace(np.ones(3), 5.0), det, 0)


def test_traces_validate():
    with pytest.raises(ValueError):
        VoltageTrace(np.array([1.0, np.inf]), 1.0)
    assert PowerTrace(np.ones(2), 1.0).unit == "W"


def _scenario(**kw):
    base = dict(laser=white_model(1e-9), detector=DetectorConfig(additive_noise_rms=1e-3, fs=1e5),
                duration=0.1, fs=1e5, seed=3,
                channels=[Channel("a", AmziConfig(9.9e-6), preset_fibre("smf_like")),
                          Channel("b", AmziConfig(6.6e-6), preset_fibre("hcf_like"))])
    base.update(kw)
    return AmziScenario(**base)


def test_parallel_amzis_deterministic_and_jobs_independent():
    a = run_parallel_amzis(_scenario())
    b = run_parallel_amzis(_scenario(), jobs=2)
    assert list(a) == ["a", "b"]
    for k in a:
        assert a[k].samples.tobytes() == b[k].samples.tobytes()
        assert len(a[k]) == 10_000


def test_identical_channels_identical_traces():
    ch = [Channel("x", AmziConfig(9.9e-6), preset_fibre("smf_like"), seed=1),
          Channel("y", AmziConfig(9.9e-6), preset_fibre("smf_like"), seed=1)]
    out = run_parallel_amzis(_scenario(channels=ch))
    np.testing.assert_array_equal(out["x"].samples, out["y"].samples)


def test_channels_share_the_laser():
    # without fibre or detector noise, equal delays see the same laser phase
    ch = [Channel("x", AmziConfig(9.9e-6)), Channel("y", AmziConfig(9.9e-6))]
    out = run_parallel_amzis(_scenario(channels=ch, detector=DetectorConfig(fs=1e5)))
    np.testing.assert_array_equal(out["x"].samples, out["y"].samples)


def test_keep_dphi_matches_voltage():
    keep = {}
    ch = [Channel("x", AmziConfig(9.9e-6, bias_phase=0.4))]
    det = DetectorConfig(responsivity=1000.0, fs=1e5)
    out = run_parallel_amzis(_scenario(channels=ch, detector=det), keep_dphi=keep)
    s, d = ch[0].amzi.fringe_sum_diff()
    np.testing.assert_allclose(out["x"].samples, 1000 * 0.5 * (s + d * np.cos(keep["x"].samples + 0.4)))


def test_scenario_validation():
    with pytest.raises(ValueError, match="detector fs"):
        run_parallel_amzis(_scenario(detector=DetectorConfig(fs=1e4)))
    with pytest.raises(ValueError, match="unique"):
        run_parallel_amzis(_scenario(channels=[Channel("a", AmziConfig(1e-5))] * 2))
    with pytest.raises(ValueError, match="cap"):
        run_parallel_amzis(_scenario(max_samples=1024))
    with pytest.raises(ValueError, match="no channels"):
        run_parallel_amzis(_scenario(channels=[]))
    assert scenario_lengths(_scenario()) == (10_000, 16_384)


def test_four_to_one_arms_visibility_from_sweep():
    # arm powers 1 : 0.25 give ideal visibility 2 sqrt(0.25) / 1.25 = 0.8
    loss = 10 * math.log10(4.0)
    for cap in (1.0, 0.9):
        cfg = AmziConfig(1e-6, 0.0, loss, cap)
        p = interference_power(PhaseTrace(np.linspace(0, 2.5 * math.pi, 10_001), 1.0), cfg).samples
        v = (p.max() - p.min()) / (p.max() + p.min())
        assert v == pytest.approx(0.8 * cap, rel=0.01)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 40.0), st.integers(0, 2**32 - 1))
def test_delay_difference_is_linear(delay_samples, seed):
    rng = np.random.default_rng(seed)
    fs = 1e6
    a = PhaseTrace(rng.standard_normal(2048), fs)
    b = PhaseTrace(np.cumsum(rng.standard_normal(2048)) * 0.1, fs)
    tau = delay_samples / fs
    ab = delay_difference(PhaseTrace(a.samples + b.samples, fs), tau).samples
    sep = delay_difference(a, tau).samples + delay_difference(b, tau).samples
    assert np.max(np.abs(ab - sep)) < 1e-9


def test_detector_offset_and_drift_recovered_from_dark_trace():
    fs, n = 1e4, 200_000
    dark = PowerTrace(np.zeros(n), fs)
    det = DetectorConfig(dc_offset=0.004, additive_noise_rms=0.002, fs=fs)
    v = detect_classical(dark, det, 1).samples
    assert abs(v.mean() - 0.004) < 3 * 0.002 / math.sqrt(n)
    det = DetectorConfig(dc_offset=0.004, offset_drift_rate=1e-3, additive_noise_rms=0.002, fs=fs)
    v = detect_classical(dark, det, 2)
    slope = np.polyfit(v.times(), v.samples, 1)[0]
    assert slope == pytest.approx(1e-3, rel=0.05)


@pytest.mark.parametrize("model", [white_model(1e-9), None])
def test_extracted_phase_spectrum_follows_transfer_function(model):
    if model is None:
        model = PsdModel((PsdComponent.power_law(1e-7, 1e3, -2.0),), 1e-3, 1e9)
    fs, n, tau = 1e6, 1 << 19, 9.9e-6
    cfg = AmziConfig(tau, 0.0, 0.0, 0.98)
    dphi = delay_difference(synth_colored(model, fs, n, 11), tau)
    power = interference_power(PhaseTrace(dphi.samples + cfg.bias_phase, fs), cfg)
    v = detect_classical(power, DetectorConfig(responsivity=1000.0, fs=fs), 0)
    s, d = cfg.fringe_sum_diff()
    phase = extract_phase(v, 1000.0 * s, 1000.0 * d)
    assert phase.provenance["clip_fraction"] == 0.0  # small excursions: no folding
    spec = welch_psd(phase, 1 << 14, 0.5)
    f = spec.freqs
    keep = (np.sin(np.pi * f * tau) ** 2 >= 0.05) & (f >= 10 * f[0]) & (f <= 0.4 * fs)
    expected = delay_transfer(f, tau) * eval_psd(model, f)
    got = band_average(SpectrumEstimate(f, spec.values, spec.unit, keep))
    ref = band_average(SpectrumEstimate(f, expected, spec.unit, keep))
    assert np.max(np.abs(10 * np.log10(got.values / ref.values))) <= 1.5
