"""Analysis chain: fringe extrema, phase extraction, Welch PSD, delay compensation.

Conventions
-----------
* PSDs are one-sided densities normalised so that ``sum(values) * df`` equals
  the (Hann-weighted, per-segment mean-removed) signal variance.  White noise
  of variance ``s2`` sampled at ``fs`` therefore sits at ``2 * s2 / fs``.
* The DC bin is dropped; ``freqs`` start at ``fs / window_len``.
* Extracted phase is folded into ``[0, pi]``: no unwrapping is attempted, so
  excursions past a fringe extremum are reflected back.  Quantitative PSD
  work should stay in the small-excursion regime around quadrature.
* An AMZI with delay ``tau`` maps the single-path phase PSD through
  ``|1 - exp(-2 pi i f tau)|^2 = 4 sin^2(pi f tau)``; :func:`compensate_delay`
  divides it out away from the zeros at ``f = k / tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
from scipy.ndimage import maximum_filter1d, minimum_filter1d
from scipy.signal import find_peaks

from .synth import PhaseTrace

PHASE_PSD = "phase_psd"
FREQ_PSD = "freq_psd"
UNITS = {PHASE_PSD: "rad^2/Hz", FREQ_PSD: "Hz^2/Hz"}

DEFAULT_WINDOW = 1_000_000
DEFAULT_OVERLAP = 0.5
DEFAULT_NULL_GUARD = 0.05
DEFAULT_SMOOTH_WINDOW = 32

# samples per FFT batch inside welch_psd
_BATCH_SAMPLES = 1 << 22


@dataclass
class SpectrumEstimate:
    freqs: np.ndarray
    values: np.ndarray
    unit: str = PHASE_PSD
    valid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {sorted(UNITS)}, got {self.unit!r}")
        if not (self.freqs.shape == self.values.shape == self.valid.shape) or self.freqs.ndim != 1:
            raise ValueError("freqs, values and valid must be 1-D arrays of equal length")
        if self.freqs.size and (self.freqs[0] <= 0 or np.any(np.diff(self.freqs) <= 0)):
            raise ValueError("freqs must be positive and strictly increasing")
        v = self.values[self.valid]
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("values must be finite and >= 0 on valid bins")

    def __len__(self):
        return self.freqs.size

    def band(self, f_lo: float, f_hi: float, valid_only: bool = True) -> np.ndarray:
        sel = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        if valid_only:
            sel &= self.valid
        return sel


@dataclass
class VisibilityEstimate:
    visibility: float
    p_max: float
    p_min: float
    window_samples: int
    smooth_window: int = 1

    @property
    def s(self) -> float:
        return self.p_max + self.p_min

    @property
    def d(self) -> float:
        return self.p_max - self.p_min


def _moving_average(x: np.ndarray, w: int) -> np.ndarray:
    if w == 1:
        return x.astype(float, copy=True)
    c = np.cumsum(np.concatenate(([0.0], x)))
    return (c[w:] - c[:-w]) / w


def moving_extrema_visibility(trace, smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                              extrema_window: int | None = None, noise_guard: bool = True) -> VisibilityEstimate:
    """Conservative fringe visibility from a smoothed interference record.

    The trace is smoothed with a ``smooth_window``-sample moving average; the
    max and min of the smoothed record are taken over every sliding window of
    ``extrema_window`` samples (whole trace by default) and the window giving
    the smallest ``(max - min) / (max + min)`` is reported.  Each window must
    contain a full fringe sweep for the number to mean anything.

    Extremes of a noisy record overshoot the true fringe extrema.  With
    ``noise_guard`` the additive noise level is estimated from the smoothing
    residual and both extrema are pulled inward by the expected peak of the
    smoothed noise, ``sigma / sqrt(w) * sqrt(2 ln(n / w))``, so the estimate
    errs low.
    """
    x = np.asarray(getattr(trace, "samples", trace), dtype=float)
    n = x.size
    if extrema_window is None:
        extrema_window = n
    if smooth_window < 1:
        raise ValueError("smooth_window must be >= 1")
    if extrema_window <= smooth_window:
        raise ValueError("extrema_window must exceed smooth_window")
    if extrema_window > n:
        raise ValueError(f"extrema_window {extrema_window} exceeds trace length {n}")
    sm = _moving_average(x, smooth_window)
    guard = 0.0
    if noise_guard and smooth_window > 1:
        # x_c - mean(window containing x_c) has variance sigma^2 (1 - 1/w) for white noise
        resid = x[smooth_window // 2:smooth_window // 2 + sm.size] - sm
        sigma = float(np.std(resid)) / math.sqrt(1 - 1 / smooth_window)
        independent = max(2.0, extrema_window / smooth_window)
        guard = sigma / math.sqrt(smooth_window) * math.sqrt(2 * math.log(independent))
    ew = min(extrema_window - smooth_window + 1, sm.size)
    if ew == sm.size:
        mx = np.array([sm.max()])
        mn = np.array([sm.min()])
    else:
        lo = ew // 2
        hi = sm.size - ew + lo + 1
        mx = maximum_filter1d(sm, ew)[lo:hi]
        mn = minimum_filter1d(sm, ew)[lo:hi]
    mx = mx - guard
    mn = mn + guard
    tot = mx + mn
    with np.errstate(divide="ignore", invalid="ignore"):
        vis = np.where((tot != 0) & (mx > mn), (mx - mn) / tot, 0.0)
    i = int(np.argmin(vis))
    v = float(np.clip(vis[i], 0.0, 1.0))
    return VisibilityEstimate(v, float(mx[i]), float(mn[i]), int(extrema_window), int(smooth_window))


def extract_phase(trace, s: float | None = None, d: float | None = None) -> PhaseTrace:
    """Invert ``V = (s + d cos(dphi)) / 2`` to ``dphi`` in ``[0, pi]``.

    ``s``/``d`` default to ``p_max + p_min`` and ``p_max - p_min`` from
    :func:`moving_extrema_visibility`.  The fraction of samples clipped to
    ``[-1, 1]`` before the arccos is stored as ``provenance['clip_fraction']``.
    """
    if s is None or d is None:
        est = moving_extrema_visibility(trace)
        s = est.s if s is None else s
        d = est.d if d is None else d
    if not d > 0:
        raise ValueError(f"fringe difference d must be > 0, got {d}")
    if s < d:
        raise ValueError(f"fringe sum s ({s}) must be >= d ({d})")
    arg = (2.0 * trace.samples - s) / d
    # overshoots of a few ulp are rounding, not clipping
    clipped = np.count_nonzero(np.abs(arg) > 1.0 + 1e-9)
    np.clip(arg, -1.0, 1.0, out=arg)
    prov = {"algorithm": "arccos-extract", "s": float(s), "d": float(d),
            "clip_fraction": clipped / arg.size}
    return PhaseTrace(np.arccos(arg), trace.fs, getattr(trace, "t0", 0.0), prov)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral estimation)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def welch_psd(trace, window_len: int = DEFAULT_WINDOW, overlap: float = DEFAULT_OVERLAP) -> SpectrumEstimate:
    """One-sided Welch PSD with a Hann window and per-segment mean removal."""
    x = np.asarray(trace.samples, dtype=float)
    fs = float(trace.fs)
    window_len = int(window_len)
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    if window_len > x.size:
        raise ValueError(f"window_len {window_len} exceeds trace length {x.size}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    hop = max(1, int(window_len * (1 - overlap)))
    n_seg = 1 + (x.size - window_len) // hop
    w = hann(window_len)
    scale = 1.0 / (fs * np.sum(w * w))

    segs = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]
    batch = max(1, _BATCH_SAMPLES // window_len)
    acc = np.zeros(window_len // 2 + 1)
    for b0 in range(0, n_seg, batch):
        block = segs[b0:b0 + batch]
        block = (block - block.mean(axis=1, keepdims=True)) * w
        spec = scipy.fft.rfft(block, axis=1)
        acc += np.sum(spec.real**2 + spec.imag**2, axis=0)
    psd = acc * (scale / n_seg)
    last = psd.size - 1 if window_len % 2 == 0 else psd.size
    psd[1:last] *= 2.0
    freqs = np.arange(1, psd.size) * (fs / window_len)
    meta = {"fs": fs, "window_len": window_len, "overlap": float(overlap), "hop": hop,
            "window": "hann", "segments": int(n_seg)}
    return SpectrumEstimate(freqs, psd[1:], PHASE_PSD, None, meta)


def delay_transfer(freqs, tau: float) -> np.ndarray:
    """``4 sin^2(pi f tau)``: the PSD transfer of ``phi(t + tau) - phi(t)``."""
    return 4.0 * np.sin(np.pi * np.asarray(freqs) * tau) ** 2


def compensate_delay(s_dphi: SpectrumEstimate, tau: float, null_guard: float = DEFAULT_NULL_GUARD,
                     guard_low: bool = True) -> SpectrumEstimate:
    """Divide out ``4 sin^2(pi f tau)``; bins with ``sin^2 < null_guard`` are invalidated.

    Invalid bins hold NaN.  With ``guard_low=False`` the guard is applied only
    around the nulls at ``k / tau`` for ``k >= 1``; the low-frequency roll-off
    below ``1 / (2 tau)`` is then divided out like any other bin.
    """
    if s_dphi.unit != PHASE_PSD:
        raise ValueError(f"expected a {PHASE_PSD} spectrum, got {s_dphi.unit}")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if not 0 < null_guard < 1:
        raise ValueError("null_guard must be in (0, 1)")
    g = np.sin(np.pi * s_dphi.freqs * tau) ** 2
    bad = g < null_guard
    if not guard_low:
        bad &= s_dphi.freqs >= 0.5 / tau
    valid = s_dphi.valid & ~bad
    values = np.full_like(s_dphi.values, np.nan)
    values[valid] = s_dphi.values[valid] / (4.0 * g[valid])
    meta = dict(s_dphi.meta, tau=float(tau), null_guard=float(null_guard), guard_low=bool(guard_low))
    return SpectrumEstimate(s_dphi.freqs.copy(), values, PHASE_PSD, valid, meta)


def to_frequency_psd(s_phi: SpectrumEstimate) -> SpectrumEstimate:
    """``S_nu(f) = f^2 S_phi(f)`` in Hz^2/Hz."""
    if s_phi.unit != PHASE_PSD:
        raise ValueError(f"expected a {PHASE_PSD} spectrum, got {s_phi.unit}")
    return SpectrumEstimate(s_phi.freqs.copy(), s_phi.values * s_phi.freqs**2, FREQ_PSD,
                            s_phi.valid.copy(), dict(s_phi.meta))


def _median_db_ratio(a: SpectrumEstimate, b: SpectrumEstimate, lo: float, hi: float):
    sa = a.band(lo, hi)
    sb = b.band(lo, hi)
    if not sa.any() or not sb.any():
        return float("nan"), int(sa.sum()), int(sb.sum())
    ma = np.median(a.values[sa])
    mb = np.median(b.values[sb])
    if ma <= 0 or mb <= 0:
        return float("nan"), int(sa.sum()), int(sb.sum())
    return float(10 * np.log10(ma / mb)), int(sa.sum()), int(sb.sum())


def stitch_spectra(parts: list[SpectrumEstimate], boundaries: list[float]) -> SpectrumEstimate:
    """Join spectra covering successive bands.

    Part ``i`` contributes its bins in ``[boundaries[i-1], boundaries[i])``.
    For each boundary the median-PSD ratio of the two neighbouring parts over
    the decade centred on it (clipped to their overlap) is recorded in
    ``meta['stitch']`` as ``ratio_db``.  Nothing is rescaled.
    """
    if not parts:
        raise ValueError("no spectra to stitch")
    if len(boundaries) != len(parts) - 1:
        raise ValueError(f"need {len(parts) - 1} boundaries for {len(parts)} parts, got {len(boundaries)}")
    units = {p.unit for p in parts}
    if len(units) != 1:
        raise ValueError(f"mixed units: {sorted(units)}")
    if len(parts) == 1:
        p = parts[0]
        return SpectrumEstimate(p.freqs.copy(), p.values.copy(), p.unit, p.valid.copy(), dict(p.meta))
    if any(len(p) == 0 for p in parts):
        raise ValueError("empty spectrum among parts")
    if list(boundaries) != sorted(boundaries):
        raise ValueError("boundaries must be increasing")

    stitch = []
    for i, b in enumerate(boundaries):
        a, c = parts[i], parts[i + 1]
        lo = max(a.freqs[0], c.freqs[0])
        hi = min(a.freqs[-1], c.freqs[-1])
        if lo >= hi:
            raise ValueError(f"parts {i} and {i + 1} do not overlap")
        if not lo < b < hi:
            raise ValueError(f"boundary {b} Hz is outside the overlap [{lo}, {hi}] of parts {i} and {i + 1}")
        d_lo = max(lo, b / math.sqrt(10))
        d_hi = min(hi, b * math.sqrt(10))
        ratio, na, nc = _median_db_ratio(a, c, d_lo, d_hi)
        stitch.append({"boundary": float(b), "band": [float(d_lo), float(d_hi)],
                       "ratio_db": ratio, "bins": [na, nc]})

    edges = [-math.inf, *boundaries, math.inf]
    f, v, ok = [], [], []
    for i, p in enumerate(parts):
        sel = (p.freqs >= edges[i]) & (p.freqs < edges[i + 1])
        f.append(p.freqs[sel])
        v.append(p.values[sel])
        ok.append(p.valid[sel])
    meta = {"parts": [dict(p.meta) for p in parts], "boundaries": [float(b) for b in boundaries],
            "stitch": stitch}
    return SpectrumEstimate(np.concatenate(f), np.concatenate(v), parts[0].unit, np.concatenate(ok), meta)


def band_average(spec: SpectrumEstimate, bins_per_decade: int = 10, min_bins: int = 16) -> SpectrumEstimate:
    """Average valid bins in log-spaced bands, merging bands until each holds ``min_bins``.

    Reported frequencies are the geometric mean of each band's bins; a band
    left with fewer than ``min_bins`` at the top end is dropped.
    """
    f = spec.freqs[spec.valid]
    v = spec.values[spec.valid]
    if f.size == 0:
        return SpectrumEstimate(np.empty(0), np.empty(0), spec.unit, None, dict(spec.meta))
    idx = np.floor(np.log10(f) * bins_per_decade).astype(np.int64)
    starts = np.flatnonzero(np.r_[True, np.diff(idx) != 0])
    stops = np.r_[starts[1:], f.size]
    out_f, out_v, counts = [], [], []
    s0 = None
    for s, e in zip(starts, stops):
        if s0 is None:
            s0 = s
        if e - s0 >= min_bins:
            out_f.append(math.exp(np.mean(np.log(f[s0:e]))))
            out_v.append(float(np.mean(v[s0:e])))
            counts.append(int(e - s0))
            s0 = None
    meta = dict(spec.meta, band_average={"bins_per_decade": bins_per_decade, "min_bins": min_bins,
                                         "counts": counts})
    return SpectrumEstimate(np.array(out_f), np.array(out_v), spec.unit, None, meta)


def find_nulls(spec: SpectrumEstimate, min_depth_db: float = 10.0, f_min: float = 0.0):
    """Locate transfer-function nulls as deep local minima of ``10 log10(PSD)``.

    Returns ``(null_freqs, spacing)`` where ``spacing`` is the least-squares
    slope of null frequency against null order ``k`` (fit through the origin,
    orders assigned from the median gap).  ``spacing`` is NaN with < 2 nulls.
    """
    sel = spec.valid & (spec.freqs >= f_min) & (spec.values > 0)
    f = spec.freqs[sel]
    db = 10 * np.log10(spec.values[sel])
    idx, _ = find_peaks(-db, prominence=min_depth_db)
    nulls = f[idx]
    if nulls.size < 2:
        return nulls, float("nan")
    gap = np.median(np.diff(nulls))
    k = np.round(nulls / gap)
    keep = k > 0
    k, nulls_k = k[keep], nulls[keep]
    spacing = float(np.sum(k * nulls_k) / np.sum(k * k))
    return nulls, spacing
