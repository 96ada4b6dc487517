"""Asymmetric Mach-Zehnder interferometer and classical detection chain.

Two-beam interference with arm powers ``P1``, ``P2`` at the output coupler
gives fringe extrema ``(sqrt(P1) +- sqrt(P2))**2 / 2``, hence

    S = P_max + P_min = P1 + P2
    D = P_max - P_min = 2 sqrt(P1 P2)            (scaled by visibility_cap)
    P(t) = (S + D cos(dphi(t))) / 2

and an ideal fringe visibility ``D / S = 2 sqrt(P1 P2) / (P1 + P2)``.
``visibility_cap`` lumps polarisation mismatch, mode overlap and residual
attenuation imbalance into one factor on ``D``.

The detector bandwidth is not modelled; simulated rates sit far below it.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from .noisemodel import PsdModel
from .synth import PhaseTrace, derive_seed, synth_colored

INTERP_TAPS = 64
KAISER_BETA = 20.0
MAX_SAMPLES = 1 << 26


@dataclass(frozen=True)
class AmziConfig:
    """Interferometer description.

    ``bias_phase`` is the static fringe position added to the delay
    difference by :func:`run_parallel_amzis` (quadrature by default, so small
    phase excursions stay inside the unambiguous ``[0, pi]`` window).
    :func:`interference_power` itself does not apply it.
    """

    tau: float
    insertion_loss_arm1: float = 0.0
    insertion_loss_arm2: float = 0.0
    visibility_cap: float = 1.0
    input_power: float = 1e-3
    bias_phase: float = math.pi / 2

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if self.insertion_loss_arm1 < 0 or self.insertion_loss_arm2 < 0:
            raise ValueError("insertion losses must be >= 0 dB")
        if not 0 < self.visibility_cap <= 1:
            raise ValueError("visibility_cap must be in (0, 1]")
        if not self.input_power > 0:
            raise ValueError("input_power must be > 0")

    def arm_powers(self) -> tuple[float, float]:
        half = self.input_power / 2
        return (half * 10 ** (-self.insertion_loss_arm1 / 10),
                half * 10 ** (-self.insertion_loss_arm2 / 10))

    def fringe_sum_diff(self) -> tuple[float, float]:
        """(S, D) of the output fringe in W."""
        p1, p2 = self.arm_powers()
        return p1 + p2, 2 * math.sqrt(p1 * p2) * self.visibility_cap


@dataclass(frozen=True)
class DetectorConfig:
    responsivity: float = 1000.0
    dc_offset: float = 0.0
    offset_drift_rate: float = 0.0
    additive_noise_rms: float = 0.0
    fs: float = 1e6

    def __post_init__(self):
        if not self.responsivity > 0:
            raise ValueError("responsivity must be > 0")
        if not self.additive_noise_rms >= 0:
            raise ValueError("additive_noise_rms must be >= 0")
        if not self.fs > 0:
            raise ValueError("fs must be > 0")


@dataclass
class VoltageTrace:
    samples: np.ndarray
    fs: float
    t0: float = 0.0
    provenance: dict = field(default_factory=dict)
    unit = "V"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("trace samples must be a non-empty 1-D array")
        if not self.fs > 0:
            raise ValueError("fs must be > 0")
        if not np.isfinite(self.samples).all():
            raise ValueError("trace samples must be finite")

    def __len__(self):
        return self.samples.size

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.fs


class PowerTrace(VoltageTrace):
    """Optical power at the monitored output port, in W."""

    unit = "W"


def fractional_delay_kernel(frac: float, taps: int = INTERP_TAPS, beta: float = KAISER_BETA) -> np.ndarray:
    """Kaiser-windowed sinc taps for offsets ``j - frac``, ``j = -taps/2+1 .. taps/2``.

    Taps are normalised to unit sum so constants pass unchanged.
    """
    half = taps // 2
    x = np.arange(-half + 1, half + 1) - frac
    window = np.i0(beta * np.sqrt(np.clip(1 - (x / half) ** 2, 0, None))) / np.i0(beta)
    h = np.sinc(x) * window
    return h / h.sum()


def delay_difference(phase: PhaseTrace, tau: float) -> PhaseTrace:
    """Return ``phi(t + tau) - phi(t)``, shortened by ``ceil(tau * fs)`` samples.

    Integer sample delays are exact.  Fractional delays use a 64-tap
    windowed-sinc interpolator; the final 32 output samples (and the first
    ones when ``tau * fs < 31``) read odd-reflected padding and are only
    approximately band-limited.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau >= phase.duration:
        raise ValueError(f"tau {tau} s is not shorter than the trace ({phase.duration} s)")
    x = phase.samples
    n = x.size
    d = tau * phase.fs
    prov = {"algorithm": "delay-difference", "tau": float(tau), "source": phase.provenance}
    d_int = round(d)
    if abs(d - d_int) < 1e-9:
        m = int(d_int)
        return PhaseTrace(x[m:] - x[:n - m], phase.fs, phase.t0, prov)

    q = math.floor(d)
    frac = d - q
    m = q + 1
    length = n - m
    h = fractional_delay_kernel(frac)
    half = INTERP_TAPS // 2
    pad = half
    # odd reflection keeps padding linear in x and exact for straight lines
    head = 2 * x[0] - x[pad:0:-1]
    tail = 2 * x[-1] - x[-2:-pad - 2:-1]
    xp = np.concatenate((head, x, tail))
    start = pad + q - half + 1
    seg = xp[start:start + length + INTERP_TAPS - 1]
    ahead = scipy.signal.oaconvolve(seg, h[::-1], mode="valid")
    ahead -= x[:length]
    return PhaseTrace(ahead, phase.fs, phase.t0, prov)


def interference_power(dphi: PhaseTrace, cfg: AmziConfig) -> PowerTrace:
    """Output-port power ``(S + D cos(dphi)) / 2`` in W."""
    s, d = cfg.fringe_sum_diff()
    p = 0.5 * (s + d * np.cos(dphi.samples))
    return PowerTrace(p, dphi.fs, dphi.t0, {"algorithm": "interference", "S": s, "D": d})


def detect_classical(power: VoltageTrace, det: DetectorConfig, seed: int) -> VoltageTrace:
    """Photodetector: responsivity, DC offset, linear offset drift, Gaussian noise."""
    if not math.isclose(power.fs, det.fs, rel_tol=1e-12):
        raise ValueError(f"power trace fs {power.fs} does not match detector fs {det.fs}")
    v = det.responsivity * power.samples
    if det.dc_offset:
        v = v + det.dc_offset
    if det.offset_drift_rate:
        v = v + det.offset_drift_rate * power.times()
    if det.additive_noise_rms > 0:
        rng = np.random.default_rng(seed)
        v = v + det.additive_noise_rms * rng.standard_normal(v.size)
    return VoltageTrace(v, power.fs, power.t0, {"algorithm": "detect-classical", "seed": int(seed)})


# ---------------------------------------------------------------------------
# Parallel-AMZI scenario
# ---------------------------------------------------------------------------

@dataclass
class Channel:
    name: str
    amzi: AmziConfig
    fibre: PsdModel | None = None
    seed: int | None = None

    @property
    def stream_seed(self) -> int:
        # stable across runs and platforms, unlike hash()
        return self.seed if self.seed is not None else zlib.crc32(self.name.encode())


@dataclass
class AmziScenario:
    laser: PsdModel
    channels: list[Channel]
    detector: DetectorConfig
    duration: float
    fs: float
    seed: int
    max_samples: int = MAX_SAMPLES


def _next_pow2(n: int) -> int:
    return 1 << max(1, (int(n) - 1).bit_length())


def scenario_lengths(sc: AmziScenario) -> tuple[int, int]:
    """(output samples per channel, synthesis length)."""
    n = int(round(sc.duration * sc.fs))
    extra = max(math.ceil(ch.amzi.tau * sc.fs - 1e-9) for ch in sc.channels)
    return n, _next_pow2(n + extra)


def simulate_channel(laser_phase: PhaseTrace, ch: Channel, sc: AmziScenario, n: int, n_synth: int,
                     keep: dict | None = None) -> VoltageTrace:
    m = math.ceil(ch.amzi.tau * sc.fs - 1e-9)
    need = n + m
    if ch.fibre is not None:
        fibre = synth_colored(ch.fibre, sc.fs, n_synth, derive_seed(sc.seed, 1, ch.stream_seed))
        total = fibre.samples[:need]
        total += laser_phase.samples[:need]
        prov = {"algorithm": "sum", "parts": [laser_phase.provenance, fibre.provenance]}
        del fibre
    else:
        total = laser_phase.samples[:need].copy()
        prov = laser_phase.provenance
    phi = PhaseTrace(total, sc.fs, 0.0, prov)
    dphi = delay_difference(phi, ch.amzi.tau)
    del phi, total
    dphi.samples = dphi.samples[:n]
    if keep is not None:
        keep[ch.name] = dphi
    biased = PhaseTrace(dphi.samples + ch.amzi.bias_phase, sc.fs, 0.0, dphi.provenance)
    power = interference_power(biased, ch.amzi)
    del biased
    return detect_classical(power, sc.detector, derive_seed(sc.seed, 2, ch.stream_seed))


def run_parallel_amzis(sc: AmziScenario, jobs: int = 1, keep_dphi: dict | None = None) -> dict[str, VoltageTrace]:
    """Simulate side-by-side AMZIs fed by one laser.

    All channels see the same laser phase trace (seed ``derive_seed(seed, 0)``);
    fibre and detector noise use ``derive_seed(seed, 1|2, channel_seed)``, where
    ``channel_seed`` is the channel's explicit seed or a CRC32 of its name.
    Pass a dict as ``keep_dphi`` to also collect the true delay differences.
    """
    if not sc.channels:
        raise ValueError("scenario has no channels")
    if not math.isclose(sc.detector.fs, sc.fs, rel_tol=1e-12):
        raise ValueError(f"detector fs {sc.detector.fs} does not match scenario fs {sc.fs}")
    names = [ch.name for ch in sc.channels]
    if len(set(names)) != len(names):
        raise ValueError("channel names must be unique")
    n, n_synth = scenario_lengths(sc)
    if n < 2:
        raise ValueError("duration * fs must give at least 2 samples")
    if n_synth > sc.max_samples:
        raise ValueError(f"scenario needs {n_synth} samples per trace, above the cap of {sc.max_samples}")
    for ch in sc.channels:
        if ch.amzi.tau * sc.fs >= n:
            raise ValueError(f"channel {ch.name}: tau longer than the record")
    laser = synth_colored(sc.laser, sc.fs, n_synth, derive_seed(sc.seed, 0))

    def one(ch):
        return ch.name, simulate_channel(laser, ch, sc, n, n_synth, keep_dphi)

    if jobs > 1 and len(sc.channels) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = dict(pool.map(one, sc.channels))
    else:
        out = dict(one(ch) for ch in sc.channels)
    return {name: out[name] for name in names}


def with_fs(det: DetectorConfig, fs: float) -> DetectorConfig:
    return replace(det, fs=fs)
