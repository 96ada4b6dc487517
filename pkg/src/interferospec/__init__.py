"""Phase-noise synthesis, AMZI interference and photon-count simulation."""

__version__ = "0.1.0"

from .errors import ModelError, RangeError, UndefinedResultError
from .interferometer import (AmziConfig, AmziScenario, Channel, DetectorConfig, PowerTrace, VoltageTrace,
                             delay_difference, detect_classical, interference_power, run_parallel_amzis)
from .noisemodel import PsdComponent, PsdModel, eval_psd, preset_fibre, preset_laser, white_model
from .photoncount import (DriftStats, Label, PulseTrainConfig, QberResult, TimeTagSeries, click_probability,
                          counts_to_phase, qber, simulate_counts)
from .spectral import (SpectrumEstimate, VisibilityEstimate, compensate_delay, extract_phase,
                       moving_extrema_visibility, stitch_spectra, to_frequency_psd, welch_psd)
from .synth import PhaseTrace, apply_phase_pattern, synth_colored, synth_colored_chunked, synth_wiener

__all__ = [
    "ModelError", "RangeError", "UndefinedResultError",
    "AmziConfig", "AmziScenario", "Channel", "DetectorConfig", "PowerTrace", "VoltageTrace",
    "delay_difference", "detect_classical", "interference_power", "run_parallel_amzis",
    "PsdComponent", "PsdModel", "eval_psd", "preset_fibre", "preset_laser", "white_model",
    "DriftStats", "Label", "PulseTrainConfig", "QberResult", "TimeTagSeries", "click_probability",
    "counts_to_phase", "qber", "simulate_counts",
    "SpectrumEstimate", "VisibilityEstimate", "compensate_delay", "extract_phase",
    "moving_extrema_visibility", "stitch_spectra", "to_frequency_psd", "welch_psd",
    "PhaseTrace", "apply_phase_pattern", "synth_colored", "synth_colored_chunked", "synth_wiener",
]
