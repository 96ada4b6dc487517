"""Analytic one-sided phase-noise PSD models.

A :class:`PsdModel` is an ordered sum of components evaluated on
``[f_min, f_max]``.  Values are one-sided phase PSDs in rad^2/Hz.

Component forms::

    power_law        amplitude_at_ref * (f / ref_freq) ** exponent
    lorentzian_tone  integrated_power * (fwhm / 2pi) / ((f - center)**2 + (fwhm / 2)**2)
    white_floor      level

Lorentzian tones are normalised by their integrated power (rad^2), so a narrow
tone carries the same variance whatever frequency grid it is sampled on.

The preset amplitudes below are stand-ins.  Only the *shape* (peak positions,
region boundaries, the 30 kHz laser feature) follows measured fibre data;
none of the coefficients are calibrated measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ModelError, RangeError

KINDS = ("power_law", "lorentzian_tone", "white_floor")

_PARAMS = {
    "power_law": ("amplitude_at_ref", "ref_freq", "exponent"),
    "lorentzian_tone": ("center", "fwhm", "integrated_power"),
    "white_floor": ("level",),
}

MAX_ABS_EXPONENT = 6.0


@dataclass(frozen=True)
class PsdComponent:
    kind: str
    amplitude_at_ref: float = 0.0
    ref_freq: float = 1.0
    exponent: float = 0.0
    center: float = 1.0
    fwhm: float = 1.0
    integrated_power: float = 0.0
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}; expected one of {KINDS}")
        for name in _PARAMS[self.kind]:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{self.kind}.{name} must be finite, got {value}")
        if self.kind == "power_law":
            if self.amplitude_at_ref < 0:
                raise ValueError("power_law amplitude_at_ref must be >= 0")
            if self.ref_freq <= 0:
                raise ValueError("power_law ref_freq must be > 0")
            if abs(self.exponent) > MAX_ABS_EXPONENT:
                raise ValueError(f"power_law |exponent| must be <= {MAX_ABS_EXPONENT}")
        elif self.kind == "lorentzian_tone":
            if self.center <= 0 or self.fwhm <= 0:
                raise ValueError("lorentzian_tone center and fwhm must be > 0")
            if self.integrated_power < 0:
                raise ValueError("lorentzian_tone integrated_power must be >= 0")
        elif self.level < 0:
            raise ValueError("white_floor level must be >= 0")

    @classmethod
    def power_law(cls, amplitude_at_ref, ref_freq, exponent):
        return cls("power_law", amplitude_at_ref=float(amplitude_at_ref),
                   ref_freq=float(ref_freq), exponent=float(exponent))

    @classmethod
    def lorentzian(cls, center, fwhm, integrated_power):
        return cls("lorentzian_tone", center=float(center), fwhm=float(fwhm),
                   integrated_power=float(integrated_power))

    @classmethod
    def white(cls, level):
        return cls("white_floor", level=float(level))

    def params(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in _PARAMS[self.kind]}

    def evaluate(self, f: np.ndarray) -> np.ndarray:
        if self.kind == "power_law":
            return self.amplitude_at_ref * (f / self.ref_freq) ** self.exponent
        if self.kind == "lorentzian_tone":
            half = 0.5 * self.fwhm
            return self.integrated_power * (self.fwhm / (2 * np.pi)) / ((f - self.center) ** 2 + half**2)
        return np.full_like(f, self.level)

    def integrate(self, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
        """Exact integral of the component over [f1, f2] (elementwise)."""
        if self.kind == "white_floor":
            return self.level * (f2 - f1)
        if self.kind == "lorentzian_tone":
            a = 2 * (f2 - self.center) / self.fwhm
            b = 2 * (f1 - self.center) / self.fwhm
            ab = a * b
            safe = ab > -1
            # arctan(a) - arctan(b) without cancellation in the far tails
            with np.errstate(divide="ignore", invalid="ignore"):
                diff = np.where(safe, np.arctan((a - b) / np.where(safe, 1 + ab, 1.0)),
                                np.arctan(a) - np.arctan(b))
            return self.integrated_power / np.pi * diff
        p = self.exponent + 1.0
        scale = self.amplitude_at_ref * self.ref_freq ** (-self.exponent)
        fc = 0.5 * (f1 + f2)
        h = (f2 - f1) / (2 * fc)
        if p == 0.0:
            return scale * (np.log1p(h) - np.log1p(-h))
        return scale * fc**p * (np.expm1(p * np.log1p(h)) - np.expm1(p * np.log1p(-h))) / p


@dataclass(frozen=True)
class PsdModel:
    components: tuple[PsdComponent, ...]
    f_min: float
    f_max: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not (self.f_min > 0 and math.isfinite(self.f_min)):
            raise ValueError("f_min must be > 0")
        if not (self.f_max > self.f_min and math.isfinite(self.f_max)):
            raise ValueError("f_max must be finite and > f_min")

    def _check_range(self, f):
        if np.any(~np.isfinite(f)) or np.any(f < self.f_min) or np.any(f > self.f_max):
            bad = f[~((f >= self.f_min) & (f <= self.f_max))]
            raise RangeError(
                f"frequency {bad.flat[0]!r} Hz outside model range [{self.f_min}, {self.f_max}]")

    def __call__(self, f):
        return eval_psd(self, f)

    def band_power(self, f1, f2):
        """Integrated PSD over [f1, f2] in rad^2, elementwise over arrays."""
        f1 = np.asarray(f1, dtype=float)
        f2 = np.asarray(f2, dtype=float)
        self._check_range(f1)
        self._check_range(f2)
        total = np.zeros(np.broadcast(f1, f2).shape)
        for comp in self.components:
            total = total + comp.integrate(f1, f2)
        return total

    def with_components(self, *extra: PsdComponent) -> "PsdModel":
        return PsdModel(self.components + tuple(extra), self.f_min, self.f_max, self.name)


def eval_psd(model: PsdModel, f):
    """Evaluate ``model`` at ``f`` (scalar or array) in rad^2/Hz.

    Raises :class:`RangeError` outside ``[f_min, f_max]`` and
    :class:`ModelError` if any value comes out negative or non-finite.
    """
    scalar = np.ndim(f) == 0
    f = np.asarray(f, dtype=float)
    model._check_range(f)
    total = np.zeros(f.shape)
    for comp in model.components:
        total = total + comp.evaluate(f)
    if not np.all(np.isfinite(total)) or np.any(total < 0):
        raise ModelError(f"model {model.name or '<unnamed>'} is not finite and non-negative on the grid")
    return float(total) if scalar else total


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_F_MIN = 1e-3
PRESET_F_MAX = 1e9

LASER_TONE_CENTER = 30e3
LASER_TONE_FWHM = 3.0
LASER_TONE_POWER = 3e-4


def preset_laser(linewidth: float, tone_power: float = LASER_TONE_POWER,
                 tone_fwhm: float = LASER_TONE_FWHM) -> PsdModel:
    """Lorentzian-lineshape laser: white frequency noise plus a 30 kHz tone.

    A laser of FWHM linewidth ``dnu`` has a flat frequency-noise PSD
    ``S_nu = dnu / pi`` (Hz^2/Hz), i.e. ``S_phi(f) = dnu / (pi f^2)``.  The tone
    (default 3e-4 rad^2 over a 3 Hz FWHM) is modelled as phase noise.  Its
    far tail adds ``tone_power * tone_fwhm / (2 pi)`` to ``f^2 S_phi``, which for
    the defaults stays below 1e-6 of ``dnu / pi`` at 1 kHz linewidth.
    """
    if not (linewidth > 0 and linewidth <= 1e6):
        raise ValueError(f"linewidth must be in (0, 1e6] Hz, got {linewidth}")
    return PsdModel(
        (PsdComponent.power_law(linewidth / np.pi, 1.0, -2.0),
         PsdComponent.lorentzian(LASER_TONE_CENTER, tone_fwhm, tone_power)),
        PRESET_F_MIN, PRESET_F_MAX, name=f"laser_{linewidth:g}Hz")


# (thermal tone centre, fwhm, integrated power, acoustic amplitude at 100 Hz)
_FIBRE_PRESETS = {
    "smf_like": (3.0, 0.005, 1e4, 0.15),
    "hcf_like": (1.5, 0.005, 3e3, 0.15),
}
ACOUSTIC_REF_FREQ = 100.0
ACOUSTIC_EXPONENT = -3.0
FIBRE_WHITE_FLOOR = 1e-11


def preset_fibre(kind: str) -> PsdModel:
    """Single-path fibre phase noise: thermal tone, acoustic band, white floor.

    ``smf_like`` puts the thermal tone at 3 Hz; ``hcf_like`` uses a weaker
    tone at 1.5 Hz.  Tones are narrow so their Lorentzian tails, which add
    ``power * fwhm / (2 pi)`` to ``f^2 S_phi``, stay a few percent of a 1 kHz
    laser's ``dnu / pi``.  The acoustic band is an f^-3 law referenced at 100 Hz,
    which through a ~10 us delay difference rises as 1/f in the measured
    S_dphi and crosses under the 1 kHz laser near 500 Hz.
    """
    try:
        center, fwhm, power, acoustic = _FIBRE_PRESETS[kind]
    except KeyError:
        raise ValueError(f"unknown fibre preset {kind!r}; expected one of {sorted(_FIBRE_PRESETS)}") from None
    return PsdModel(
        (PsdComponent.lorentzian(center, fwhm, power),
         PsdComponent.power_law(acoustic, ACOUSTIC_REF_FREQ, ACOUSTIC_EXPONENT),
         PsdComponent.white(FIBRE_WHITE_FLOOR)),
        PRESET_F_MIN, PRESET_F_MAX, name=kind)


def white_model(level: float, f_min: float = PRESET_F_MIN, f_max: float = PRESET_F_MAX) -> PsdModel:
    return PsdModel((PsdComponent.white(level),), f_min, f_max, name="white")


# ---------------------------------------------------------------------------
# Key-value serialisation
# ---------------------------------------------------------------------------

def model_to_sections(model: PsdModel, name: str) -> dict[str, dict[str, str]]:
    """Render ``model`` as INI-style sections.

    ``[name]`` holds ``f_min``/``f_max``; each component becomes
    ``[name.component.<i>]`` (1-based) with ``kind`` and its parameters.
    """
    sections = {name: {"f_min": repr(model.f_min), "f_max": repr(model.f_max)}}
    for i, comp in enumerate(model.components, start=1):
        body = {"kind": comp.kind}
        body.update({k: repr(v) for k, v in comp.params().items()})
        sections[f"{name}.component.{i}"] = body
    return sections


def model_from_sections(sections: Mapping[str, Mapping[str, str]], name: str) -> PsdModel:
    """Inverse of :func:`model_to_sections`.

    The ``[name]`` section may instead carry ``preset = laser`` (with
    ``linewidth``) or ``preset = smf_like|hcf_like``; explicit component
    sections are appended to the preset's components.
    """
    if name not in sections:
        raise KeyError(f"missing section [{name}]")
    head = sections[name]
    prefix = f"{name}.component."
    comp_names = sorted((s for s in sections if s.startswith(prefix)),
                        key=lambda s: int(s[len(prefix):]) if s[len(prefix):].isdigit() else s)
    comps = []
    for sec in comp_names:
        body = dict(sections[sec])
        kind = body.pop("kind", None)
        if kind is None:
            raise ValueError(f"[{sec}] missing 'kind'")
        if kind not in KINDS:
            raise ValueError(f"[{sec}] unknown kind {kind!r}")
        unknown = set(body) - set(_PARAMS[kind])
        if unknown:
            raise ValueError(f"[{sec}] unexpected keys for {kind}: {sorted(unknown)}")
        missing = set(_PARAMS[kind]) - set(body)
        if missing:
            raise ValueError(f"[{sec}] missing keys for {kind}: {sorted(missing)}")
        comps.append(PsdComponent(kind, **{k: float(v) for k, v in body.items()}))

    preset = head.get("preset")
    if preset:
        if preset == "laser":
            if "linewidth" not in head:
                raise ValueError(f"[{name}] preset laser needs 'linewidth'")
            base = preset_laser(float(head["linewidth"]))
        else:
            base = preset_fibre(preset)
        return PsdModel(base.components + tuple(comps), float(head.get("f_min", base.f_min)),
                        float(head.get("f_max", base.f_max)), name=name)
    if not comps:
        raise ValueError(f"[{name}] has neither a preset nor component sections")
    for key in ("f_min", "f_max"):
        if key not in head:
            raise ValueError(f"[{name}] missing '{key}'")
    return PsdModel(tuple(comps), float(head["f_min"]), float(head["f_max"]), name=name)
