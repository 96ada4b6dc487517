"""Scenario configuration files (INI syntax).

One file describes one scenario.  Sections::

    [run]            seed (required), output_dir (optional)
    [laser]          PSD model: preset = laser + linewidth, or component blocks
    [laser.component.1] ...
    [fibre.<name>]   PSD model referenced by a channel
    [channel.<name>] tau, fibre, insertion_loss_arm1, insertion_loss_arm2,
                     visibility_cap, input_power, bias_phase, seed
    [detector]       responsivity, dc_offset, offset_drift_rate, additive_noise_rms
    [sampling]       sets = fs:duration, fs:duration, ...
    [analysis]       welch_window, overlap, null_guard, guard_low_frequency,
                     smooth_window, extrema_window, stitch_boundaries,
                     calibration_samples, calibration_sweep, trace_excerpt,
                     write_traces
    [tfqkd]          pulse-train, drift and keyed-acquisition parameters

PSD model blocks follow :func:`interferospec.noisemodel.model_from_sections`.
Only the sections a command needs are required: ``amzi`` reads laser,
channels, detector, sampling and analysis; ``tfqkd`` reads tfqkd.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .interferometer import AmziConfig, Channel, DetectorConfig
from .noisemodel import PsdModel, model_from_sections
from .photoncount import PulseTrainConfig
from .spectral import DEFAULT_NULL_GUARD, DEFAULT_OVERLAP, DEFAULT_SMOOTH_WINDOW, DEFAULT_WINDOW


class ConfigError(ValueError):
    """Invalid scenario file; the message carries ``path:line``."""


@dataclass
class AnalysisConfig:
    welch_window: int = DEFAULT_WINDOW
    overlap: float = DEFAULT_OVERLAP
    null_guard: float = DEFAULT_NULL_GUARD
    guard_low_frequency: bool = False
    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    extrema_window: int | None = None
    stitch_boundaries: list[float] = field(default_factory=list)
    calibration_samples: int = 1 << 16
    calibration_sweep: float = 4 * math.pi
    trace_excerpt: float = 0.05
    write_traces: bool = True


@dataclass
class TfqkdConfig:
    pulses: PulseTrainConfig
    drift_mean_photons: float = 0.2
    drift_visibility: float = 0.99
    drift_diffusion: float = 6000.0
    drift_duration: float = 0.25
    keyed_visibility: float = 0.965
    keyed_diffusion: float = 0.0
    keyed_duration: float = 0.02
    pattern: tuple[str, ...] = ("zero", "pi")
    dwell_bins: int = 1
    phase_rate: float | None = None

    @property
    def drift_pulses(self) -> PulseTrainConfig:
        return replace(self.pulses, mean_photons_per_pulse=self.drift_mean_photons)

    @property
    def sample_rate(self) -> float:
        """Phase-trace sample rate (defaults to one sample per count bin)."""
        return self.phase_rate if self.phase_rate is not None else 1.0 / self.pulses.bin_duration


@dataclass
class ScenarioConfig:
    path: Path
    config_hash: str
    seed: int
    output_dir: str | None = None
    laser: PsdModel | None = None
    channels: list[Channel] = field(default_factory=list)
    detector: DetectorConfig | None = None
    sampling: list[tuple[float, float]] = field(default_factory=list)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    tfqkd: TfqkdConfig | None = None


class _Locator:
    """Maps (section, key) to a line number in the source text."""

    _sec = re.compile(r"^\s*\[([^\]]+)\]")
    _key = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")

    def __init__(self, text: str, path: Path):
        self.path = path
        self.sections: dict[str, int] = {}
        self.keys: dict[tuple[str, str], int] = {}
        current = None
        for i, line in enumerate(text.splitlines(), start=1):
            m = self._sec.match(line)
            if m:
                current = m.group(1).strip()
                self.sections.setdefault(current, i)
                continue
            m = self._key.match(line)
            if m and current is not None:
                self.keys.setdefault((current, m.group(1).strip().lower()), i)

    def error(self, section: str | None, key: str | None, msg: str) -> ConfigError:
        line = None
        if section is not None and key is not None:
            line = self.keys.get((section, key))
        if line is None and section is not None:
            line = self.sections.get(section)
        where = f"{self.path}:{line}" if line else f"{self.path}"
        ctx = f"[{section}]" if section else ""
        if key:
            ctx += f" {key}"
        return ConfigError(f"{where}: {ctx}: {msg}" if ctx else f"{where}: {msg}")


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, loc: _Locator):
        self.cp = cp
        self.loc = loc

    def _raw(self, sec, key):
        return self.cp.get(sec, key, fallback=None)

    def float(self, sec, key, default=None, required=False):
        raw = self._raw(sec, key)
        if raw is None:
            if required:
                raise self.loc.error(sec, None, f"missing required key '{key}'")
            return default
        try:
            return float(raw)
        except ValueError:
            raise self.loc.error(sec, key, f"expected a number, got {raw!r}") from None

    def int(self, sec, key, default=None, required=False):
        raw = self._raw(sec, key)
        if raw is None:
            if required:
                raise self.loc.error(sec, None, f"missing required key '{key}'")
            return default
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            v = float(raw)
        except ValueError:
            raise self.loc.error(sec, key, f"expected an integer, got {raw!r}") from None
        if not math.isfinite(v) or v != int(v):
            raise self.loc.error(sec, key, f"expected an integer, got {raw!r}")
        return int(v)

    def bool(self, sec, key, default):
        if self._raw(sec, key) is None:
            return default
        try:
            return self.cp.getboolean(sec, key)
        except ValueError:
            raise self.loc.error(sec, key, f"expected true/false, got {self._raw(sec, key)!r}") from None

    def str(self, sec, key, default=None):
        raw = self._raw(sec, key)
        return default if raw is None else raw.strip()

    def floats(self, sec, key):
        raw = self._raw(sec, key)
        if raw is None or not raw.strip():
            return []
        try:
            return [float(tok) for tok in raw.replace(",", " ").split()]
        except ValueError:
            raise self.loc.error(sec, key, f"expected a list of numbers, got {raw!r}") from None

    def check_keys(self, sec, allowed):
        extra = set(self.cp[sec]) - set(allowed)
        if extra:
            key = sorted(extra)[0]
            raise self.loc.error(sec, key, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _sections_dict(cp) -> dict[str, dict[str, str]]:
    return {s: dict(cp[s]) for s in cp.sections()}


def _model(cp, loc, name) -> PsdModel:
    try:
        return model_from_sections(_sections_dict(cp), name)
    except KeyError:
        raise loc.error(None, None, f"missing section [{name}]") from None
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        m = re.match(r"\[([^\]]+)\]", msg)
        raise loc.error(m.group(1) if m else name, None, msg) from None


def load_config(path, seed_override: int | None = None) -> ScenarioConfig:
    """Parse and validate a scenario file; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text (byte offset {exc.start})") from None
    loc = _Locator(text, path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        if isinstance(exc, configparser.ParsingError) and exc.errors:
            lineno, line = exc.errors[0]
            msg = f"cannot parse line {line.strip()!r}"
        raise ConfigError(f"{path}:{lineno}: {msg}" if lineno else f"{path}: {msg}") from None
    rd = _Reader(cp, loc)

    if not cp.has_section("run"):
        raise loc.error(None, None, "missing section [run] (a seed is required)")
    rd.check_keys("run", {"seed", "output_dir"})
    seed = rd.int("run", "seed", required=True)
    if seed < 0:
        raise loc.error("run", "seed", "seed must be >= 0")
    if seed_override is not None:
        seed = int(seed_override)
    cfg = ScenarioConfig(path, hashlib.sha256(raw).hexdigest(), seed, rd.str("run", "output_dir"))

    if cp.has_section("laser"):
        cfg.laser = _model(cp, loc, "laser")
    for sec in cp.sections():
        if sec.startswith("channel."):
            cfg.channels.append(_channel(cp, rd, loc, sec))
    if cp.has_section("detector"):
        rd.check_keys("detector", {"responsivity", "dc_offset", "offset_drift_rate", "additive_noise_rms"})
        try:
            cfg.detector = DetectorConfig(
                responsivity=rd.float("detector", "responsivity", 1000.0),
                dc_offset=rd.float("detector", "dc_offset", 0.0),
                offset_drift_rate=rd.float("detector", "offset_drift_rate", 0.0),
                additive_noise_rms=rd.float("detector", "additive_noise_rms", 0.0))
        except ValueError as exc:
            raise loc.error("detector", None, str(exc)) from None
    if cp.has_section("sampling"):
        cfg.sampling = _sampling(rd, loc)
    if cp.has_section("analysis"):
        cfg.analysis = _analysis(rd, loc)
    if cp.has_section("tfqkd"):
        cfg.tfqkd = _tfqkd(rd, loc)
    return cfg


def _channel(cp, rd, loc, sec) -> Channel:
    name = sec[len("channel."):]
    if not name:
        raise loc.error(sec, None, "channel name is empty")
    rd.check_keys(sec, {"tau", "fibre", "insertion_loss_arm1", "insertion_loss_arm2", "visibility_cap",
                        "input_power", "bias_phase", "seed"})
    try:
        amzi = AmziConfig(
            tau=rd.float(sec, "tau", required=True),
            insertion_loss_arm1=rd.float(sec, "insertion_loss_arm1", 0.0),
            insertion_loss_arm2=rd.float(sec, "insertion_loss_arm2", 0.0),
            visibility_cap=rd.float(sec, "visibility_cap", 1.0),
            input_power=rd.float(sec, "input_power", 1e-3),
            bias_phase=rd.float(sec, "bias_phase", math.pi / 2))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise loc.error(sec, None, str(exc)) from None
    fibre = None
    ref = rd.str(sec, "fibre")
    if ref and ref.lower() != "none":
        target = ref if ref.startswith("fibre.") else f"fibre.{ref}"
        if not cp.has_section(target):
            raise loc.error(sec, "fibre", f"references missing section [{target}]")
        fibre = _model(cp, loc, target)
    ch_seed = rd.int(sec, "seed")
    if ch_seed is not None and ch_seed < 0:
        raise loc.error(sec, "seed", "seed must be >= 0")
    return Channel(name, amzi, fibre, ch_seed)


def _sampling(rd, loc) -> list[tuple[float, float]]:
    rd.check_keys("sampling", {"sets"})
    raw = rd.str("sampling", "sets")
    if not raw:
        raise loc.error("sampling", None, "missing required key 'sets'")
    out = []
    for tok in raw.split(","):
        parts = tok.strip().split(":")
        try:
            fs, dur = (float(p) for p in parts)
        except ValueError:
            raise loc.error("sampling", "sets", f"expected fs:duration, got {tok.strip()!r}") from None
        if not (fs > 0 and dur > 0):
            raise loc.error("sampling", "sets", f"fs and duration must be > 0 in {tok.strip()!r}")
        out.append((fs, dur))
    fss = [fs for fs, _ in out]
    if fss != sorted(fss):
        raise loc.error("sampling", "sets", "sets must be listed in increasing fs")
    return out


def _analysis(rd, loc) -> AnalysisConfig:
    s = "analysis"
    rd.check_keys(s, {"welch_window", "overlap", "null_guard", "guard_low_frequency", "smooth_window",
                      "extrema_window", "stitch_boundaries", "calibration_samples", "calibration_sweep",
                      "trace_excerpt", "write_traces"})
    a = AnalysisConfig(
        welch_window=rd.int(s, "welch_window", DEFAULT_WINDOW),
        overlap=rd.float(s, "overlap", DEFAULT_OVERLAP),
        null_guard=rd.float(s, "null_guard", DEFAULT_NULL_GUARD),
        guard_low_frequency=rd.bool(s, "guard_low_frequency", False),
        smooth_window=rd.int(s, "smooth_window", DEFAULT_SMOOTH_WINDOW),
        extrema_window=rd.int(s, "extrema_window"),
        stitch_boundaries=rd.floats(s, "stitch_boundaries"),
        calibration_samples=rd.int(s, "calibration_samples", 1 << 16),
        calibration_sweep=rd.float(s, "calibration_sweep", 4 * math.pi),
        trace_excerpt=rd.float(s, "trace_excerpt", 0.05),
        write_traces=rd.bool(s, "write_traces", True))
    if a.welch_window < 2:
        raise loc.error(s, "welch_window", "must be >= 2")
    if not 0 <= a.overlap < 1:
        raise loc.error(s, "overlap", "must be in [0, 1)")
    if not 0 < a.null_guard < 1:
        raise loc.error(s, "null_guard", "must be in (0, 1)")
    if a.smooth_window < 1:
        raise loc.error(s, "smooth_window", "must be >= 1")
    if a.calibration_samples <= a.smooth_window:
        raise loc.error(s, "calibration_samples", "must exceed smooth_window")
    if not a.calibration_sweep >= 2 * math.pi:
        raise loc.error(s, "calibration_sweep", "must cover at least one fringe (2 pi)")
    if not a.trace_excerpt > 0:
        raise loc.error(s, "trace_excerpt", "must be > 0")
    return a


def _tfqkd(rd, loc) -> TfqkdConfig:
    s = "tfqkd"
    rd.check_keys(s, {"rep_rate", "pulse_width", "extinction_ratio", "mean_photons_per_pulse",
                      "detector_efficiency", "dark_rate", "bin_duration", "drift_mean_photons_per_pulse",
                      "drift_visibility", "drift_diffusion", "drift_duration", "keyed_visibility",
                      "keyed_diffusion", "keyed_duration", "pattern", "dwell_bins", "phase_rate"})
    d = PulseTrainConfig()
    try:
        pulses = PulseTrainConfig(
            rep_rate=rd.float(s, "rep_rate", d.rep_rate),
            pulse_width=rd.float(s, "pulse_width", d.pulse_width),
            extinction_ratio=rd.float(s, "extinction_ratio", d.extinction_ratio),
            mean_photons_per_pulse=rd.float(s, "mean_photons_per_pulse", d.mean_photons_per_pulse),
            detector_efficiency=rd.float(s, "detector_efficiency", d.detector_efficiency),
            dark_rate=rd.float(s, "dark_rate", d.dark_rate),
            bin_duration=rd.float(s, "bin_duration", 50e-6))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise loc.error(s, None, str(exc)) from None
    pattern = tuple(p.strip() for p in rd.str(s, "pattern", "zero,pi").split(",") if p.strip())
    if not pattern or any(p not in ("zero", "pi") for p in pattern):
        raise loc.error(s, "pattern", "expected a comma-separated list of 'zero'/'pi'")
    t = TfqkdConfig(
        pulses=pulses,
        drift_mean_photons=rd.float(s, "drift_mean_photons_per_pulse", 0.2),
        drift_visibility=rd.float(s, "drift_visibility", 0.99),
        drift_diffusion=rd.float(s, "drift_diffusion", 6000.0),
        drift_duration=rd.float(s, "drift_duration", 0.25),
        keyed_visibility=rd.float(s, "keyed_visibility", 0.965),
        keyed_diffusion=rd.float(s, "keyed_diffusion", 0.0),
        keyed_duration=rd.float(s, "keyed_duration", 0.02),
        pattern=pattern,
        dwell_bins=rd.int(s, "dwell_bins", 1),
        phase_rate=rd.float(s, "phase_rate"))
    for key in ("drift_visibility", "keyed_visibility"):
        if not 0 <= getattr(t, key) <= 1:
            raise loc.error(s, key, "must be in [0, 1]")
    for key in ("drift_diffusion", "keyed_diffusion", "drift_mean_photons"):
        if getattr(t, key) < 0:
            raise loc.error(s, key if key != "drift_mean_photons" else "drift_mean_photons_per_pulse",
                            "must be >= 0")
    for key in ("drift_duration", "keyed_duration"):
        if not getattr(t, key) > 0:
            raise loc.error(s, key, "must be > 0")
    if t.dwell_bins < 1:
        raise loc.error(s, "dwell_bins", "must be >= 1")
    if t.phase_rate is not None and not t.phase_rate > 0:
        raise loc.error(s, "phase_rate", "must be > 0")
    return t
