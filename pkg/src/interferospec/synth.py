"""Seeded phase-noise time series.

``synth_colored`` draws circular complex Gaussian Fourier coefficients whose
expected power follows a :class:`~interferospec.noisemodel.PsdModel` and
inverse-transforms them.  The DC bin is always zero: a static phase offset is
invisible through the interferometer, which only sees phase differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft

from .errors import RangeError
from .noisemodel import PsdModel

ALGORITHM_COLORED = "fd-gaussian-v1"
ALGORITHM_WIENER = "wiener-v1"

# frequency bins processed per pass while building the coefficient array
_COEF_BLOCK = 1 << 20


@dataclass
class PhaseTrace:
    """Uniformly sampled phase in rad."""

    samples: np.ndarray
    fs: float
    t0: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("trace samples must be a non-empty 1-D array")
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise ValueError(f"fs must be > 0, got {self.fs}")
        if not np.isfinite(self.samples).all():
            raise ValueError("trace samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.fs


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers.

    Used for chunk and per-channel seeds: ``derive_seed(seed, i)`` is the seed
    of chunk ``i``.  The mapping is numpy's ``SeedSequence`` hash and is fixed.
    """
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _is_pow2(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


def bin_averaged_psd(model: PsdModel, fs: float, n: int, k0: int, k1: int) -> np.ndarray:
    """Mean of the model PSD over the synthesis bins ``k0 <= k < k1``.

    Bin ``k`` spans ``[(k - 1/2) df, (k + 1/2) df]`` clipped to the model range.
    For smooth spectra this is the point value; for tones narrower than a
    bin it keeps the integrated power exact.
    """
    df = fs / n
    k = np.arange(k0, k1, dtype=float)
    lo = np.maximum((k - 0.5) * df, model.f_min)
    hi = np.minimum((k + 0.5) * df, model.f_max)
    return model.band_power(lo, hi) / (hi - lo)


def synth_colored(model: PsdModel, fs: float, n: int, seed: int) -> PhaseTrace:
    """Gaussian phase noise of length ``n`` whose one-sided PSD is ``model``.

    ``n`` must be a power of two.  The lowest synthesised frequency is
    ``fs / n``: steep (f^-2, f^-3) components are truncated there rather than
    extended towards DC.
    """
    n = int(n)
    if not _is_pow2(n):
        raise ValueError(f"n must be a power of two, got {n}")
    if fs / 2 > model.f_max:
        raise RangeError(f"Nyquist {fs / 2} Hz exceeds model f_max {model.f_max} Hz")
    if fs / n < model.f_min:
        raise RangeError(f"lowest bin {fs / n} Hz is below model f_min {model.f_min} Hz")

    rng = np.random.default_rng(seed)
    m = n // 2 + 1
    coef = rng.standard_normal(2 * m).view(np.complex128)
    coef[0] = 0.0
    # E|X_k|^2 = S_k * fs * n / 2 for irfft's 1/n normalisation
    scale = fs * n / 2
    for k0 in range(1, m, _COEF_BLOCK):
        k1 = min(k0 + _COEF_BLOCK, m)
        amp = np.sqrt(bin_averaged_psd(model, fs, n, k0, k1) * scale)
        amp *= math.sqrt(0.5)
        coef[k0:k1] *= amp
    # Nyquist coefficient is real; its half-bin carries S_N * df / 2
    coef[-1] = coef[-1].real * math.sqrt(2.0)
    samples = scipy.fft.irfft(coef, n, overwrite_x=True)
    return PhaseTrace(samples, fs, 0.0, {"algorithm": ALGORITHM_COLORED, "seed": int(seed)})


def synth_colored_chunked(model: PsdModel, fs: float, n: int, seed: int,
                          chunk_len: int = 1 << 22) -> PhaseTrace:
    """Concatenate independent ``synth_colored`` chunks of ``chunk_len`` samples.

    Chunk ``i`` uses ``derive_seed(seed, i)``; the result is truncated to ``n``.
    Chunks are statistically independent, so there is no phase continuity at
    chunk boundaries: use this for white or nearly white models, or when the
    analysis window is shorter than a chunk.
    """
    if not _is_pow2(chunk_len):
        raise ValueError("chunk_len must be a power of two")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    n_chunks = -(-n // chunk_len)
    out = np.empty(n_chunks * chunk_len)
    for i in range(n_chunks):
        part = synth_colored(model, fs, chunk_len, derive_seed(seed, i))
        out[i * chunk_len:(i + 1) * chunk_len] = part.samples
    return PhaseTrace(out[:n], fs, 0.0,
                      {"algorithm": ALGORITHM_COLORED + "+chunked", "seed": int(seed), "chunk_len": chunk_len})


def synth_wiener(diffusion: float, fs: float, n: int, seed: int) -> PhaseTrace:
    """Wiener phase: cumulative sum of N(0, diffusion / fs) steps, starting at 0."""
    if diffusion < 0:
        raise ValueError(f"diffusion must be >= 0, got {diffusion}")
    if not fs > 0:
        raise ValueError("fs must be > 0")
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal(n - 1) * math.sqrt(diffusion / fs)
    samples = np.concatenate(([0.0], np.cumsum(steps)))
    return PhaseTrace(samples, fs, 0.0, {"algorithm": ALGORITHM_WIENER, "seed": int(seed),
                                         "diffusion": float(diffusion)})


def _pattern_values(pattern: Sequence) -> np.ndarray:
    values = []
    for p in pattern:
        if isinstance(p, str):
            if p not in ("zero", "pi"):
                raise ValueError(f"pattern label must be 'zero' or 'pi', got {p!r}")
            values.append(0.0 if p == "zero" else math.pi)
        else:
            p = float(p)
            if not (abs(p) < 1e-12 or abs(p - math.pi) < 1e-12):
                raise ValueError(f"pattern values must be 0 or pi, got {p}")
            values.append(0.0 if abs(p) < 1e-12 else math.pi)
    return np.asarray(values)


def apply_phase_pattern(trace: PhaseTrace, pattern: Sequence, dwell: float) -> PhaseTrace:
    """Add ``pattern[k]`` (0 or pi) to the k-th dwell interval, cycling the pattern."""
    if len(pattern) == 0:
        raise ValueError("pattern must not be empty")
    per_dwell = dwell * trace.fs
    if per_dwell < 1 - 1e-12:
        raise ValueError(f"dwell * fs must be >= 1, got {per_dwell}")
    values = _pattern_values(pattern)
    idx = np.floor(np.arange(len(trace)) / per_dwell + 1e-9).astype(np.int64) % values.size
    prov = {"algorithm": "phase-pattern", "dwell": float(dwell), "source": trace.provenance}
    return PhaseTrace(trace.samples + values[idx], trace.fs, trace.t0, prov)


def sum_traces(a: PhaseTrace, b: PhaseTrace) -> PhaseTrace:
    if a.fs != b.fs or len(a) != len(b) or a.t0 != b.t0:
        raise ValueError(
            f"trace metadata differ: fs {a.fs} vs {b.fs}, n {len(a)} vs {len(b)}, t0 {a.t0} vs {b.t0}")
    return PhaseTrace(a.samples + b.samples, a.fs, a.t0,
                      {"algorithm": "sum", "parts": [a.provenance, b.provenance]})
