"""Command-line entry point.

Subcommands::

    interferospec amzi  --config FILE [--out DIR] [--seed N] [--jobs N]
    interferospec tfqkd --config FILE [--out DIR] [--seed N]
    interferospec psd   TRACE [--out DIR] [--tau S] [--unit phase|freq] ...

Exit codes: 0 success, 2 configuration or input error, 3 runtime or
numerical failure (the failing stage is named on stderr).

Output directory: ``--out``, else ``output_dir`` in ``[run]`` (relative to
the config file), else ``$INTERFEROSPEC_OUT``; ``psd`` finally falls back to
the directory of the input trace.  See :mod:`interferospec.config` for the
scenario file schema and :mod:`interferospec.formats` for file layouts.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config
from .errors import UndefinedResultError
from .formats import (FormatError, artifact_header, read_trace, spectrum_summary, write_columns_csv,
                      write_counts_csv, write_json, write_spectrum_csv, write_trace_bin, write_trace_csv)
from .interferometer import (AmziScenario, Channel, DetectorConfig, VoltageTrace, detect_classical,
                             interference_power, run_parallel_amzis, with_fs)
from .noisemodel import eval_psd
from .photoncount import (counts_to_phase, drift_rate, fold_phase, qber, qber_components, simulate_counts)
from .plotting import GnuplotPanel, plot_drift, plot_keyed, plot_spectra, plot_traces, write_gnuplot
from .spectral import (SpectrumEstimate, compensate_delay, extract_phase, find_nulls, moving_extrema_visibility,
                       stitch_spectra, to_frequency_psd, welch_psd, DEFAULT_WINDOW, DEFAULT_OVERLAP,
                       DEFAULT_NULL_GUARD, DEFAULT_SMOOTH_WINDOW)
from .synth import PhaseTrace, derive_seed, synth_wiener

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3
ENV_OUT = "INTERFEROSPEC_OUT"
USABLE_FRACTION = 0.4  # of fs; upper edge of the trusted band of a sampling set

log = logging.getLogger("interferospec")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except (ConfigError, FormatError, StageError):
        raise
    except (ValueError, ArithmeticError, MemoryError) as exc:
        raise StageError(name, exc) from exc


def _out_dir(cli_out, cfg: ScenarioConfig | None, fallback: Path | None = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg is not None and cfg.output_dir:
        p = Path(cfg.output_dir)
        return p if p.is_absolute() else cfg.path.parent / p
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if fallback is not None:
        return fallback
    raise ConfigError("no output directory: pass --out, set output_dir in [run], or set " + ENV_OUT)


def _fmt_rate(fs: float) -> str:
    for div, unit in ((1e9, "GSps"), (1e6, "MSps"), (1e3, "kSps")):
        if fs >= div:
            return f"{fs / div:g}{unit}"
    return f"{fs:g}Sps"


# ---------------------------------------------------------------------------
# amzi
# ---------------------------------------------------------------------------

def calibration_record(ch: Channel, det: DetectorConfig, n: int, sweep: float, seed: int) -> VoltageTrace:
    """Detector output while the delay difference is ramped through ``sweep`` rad.

    Stands in for the fringe scan used to fix the extrema before acquisition.
    """
    dphi = PhaseTrace(np.linspace(0.0, sweep, n), det.fs)
    return detect_classical(interference_power(dphi, ch.amzi), det, seed)


def default_boundaries(sets, window: int) -> list[float]:
    """Geometric midpoint between the upper edge of set ``i`` (USABLE_FRACTION fs)
    and the resolution-limited lower edge of set ``i+1`` (10 bins)."""
    out = []
    for (fa, _), (fb, _) in zip(sets, sets[1:]):
        out.append(math.sqrt(USABLE_FRACTION * fa * 10 * fb / window))
    return out


def _trim_upper(spec: SpectrumEstimate, f_max: float) -> SpectrumEstimate:
    keep = spec.freqs <= f_max
    return SpectrumEstimate(spec.freqs[keep], spec.values[keep], spec.unit, spec.valid[keep], dict(spec.meta))


def _analyse_channel(ch, volts, det, an, seed, set_index):
    with stage(f"calibration[{ch.name}]"):
        cal = calibration_record(ch, det, an.calibration_samples, an.calibration_sweep,
                                 derive_seed(seed, 3, ch.stream_seed, set_index))
        vis = moving_extrema_visibility(cal, an.smooth_window, an.extrema_window)
    with stage(f"phase-extraction[{ch.name}]"):
        phase = extract_phase(volts, vis.s, vis.d)
    with stage(f"welch[{ch.name}]"):
        window = an.welch_window
        if window > len(phase):
            raise ValueError(f"welch_window {window} exceeds the {len(phase)}-sample record")
        spec = welch_psd(phase, window, an.overlap)
    return vis, phase, spec


def cmd_amzi(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    for what, ok in (("[laser]", cfg.laser is not None), ("a [channel.<name>] section", bool(cfg.channels)),
                     ("[detector]", cfg.detector is not None), ("[sampling]", bool(cfg.sampling))):
        if not ok:
            raise ConfigError(f"{cfg.path}: amzi needs {what}")
    an = cfg.analysis
    sets = cfg.sampling
    bounds = an.stitch_boundaries or default_boundaries(sets, an.welch_window)
    if len(bounds) != len(sets) - 1:
        raise ConfigError(f"{cfg.path}: [analysis] stitch_boundaries needs {len(sets) - 1} values, got {len(bounds)}")
    header = artifact_header(cfg.config_hash, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    names = [ch.name for ch in cfg.channels]
    ch_jobs = max(1, min(jobs, len(cfg.channels)))
    set_jobs = max(1, jobs // ch_jobs)

    def run_set(i):
        fs, duration = sets[i]
        det = with_fs(cfg.detector, fs)
        sc = AmziScenario(cfg.laser, cfg.channels, det, duration, fs, derive_seed(cfg.seed, i))
        t0 = time.perf_counter()
        with stage(f"simulation[set{i}]"):
            volts = run_parallel_amzis(sc, ch_jobs)
        log.info("set%d (%s, %g s): simulated in %.1f s", i, _fmt_rate(fs), duration, time.perf_counter() - t0)

        def one(ch):
            v = volts[ch.name]
            vis, phase, spec = _analyse_channel(ch, v, det, an, cfg.seed, i)
            stem = f"{ch.name}_set{i}"
            if an.write_traces:
                write_trace_bin(out / f"{stem}_voltage.bin", v, cfg.config_hash, cfg.seed)
                write_trace_bin(out / f"{stem}_phase.bin", phase, cfg.config_hash, cfg.seed)
            write_spectrum_csv(out / f"{stem}_sdphi.csv", spec, header)
            excerpt = None
            if i == 0:
                k = max(2, min(len(v), int(round(an.trace_excerpt * fs))))
                excerpt = VoltageTrace(v.samples[:k], fs, v.t0)
                write_trace_csv(out / f"{ch.name}_fig1_trace.csv", excerpt, header)
            info = {"fs": fs, "duration": duration, "samples": len(v), "visibility": vis.visibility,
                    "fringe_s": vis.s, "fringe_d": vis.d,
                    "clip_fraction": phase.provenance["clip_fraction"],
                    "welch_segments": spec.meta["segments"]}
            return ch.name, spec, info, excerpt

        with ThreadPoolExecutor(max_workers=ch_jobs) as pool:
            results = list(pool.map(one, cfg.channels))
        log.info("set%d analysed in %.1f s total", i, time.perf_counter() - t0)
        return results

    with ThreadPoolExecutor(max_workers=set_jobs) as pool:
        per_set = list(pool.map(run_set, range(len(sets))))

    summary = {"command": "amzi", "seed": cfg.seed, "config_sha256": cfg.config_hash,
               "sampling_sets": [{"fs": fs, "duration": d} for fs, d in sets],
               "stitch_boundaries": bounds, "channels": {}}
    stitched_all, snu_all, excerpts = {}, {}, {}
    for ch in cfg.channels:
        parts = [next(r for r in res if r[0] == ch.name) for res in per_set]
        if parts[0][3] is not None:
            excerpts[ch.name] = (parts[0][3].times(), parts[0][3].samples)
        with stage(f"stitch[{ch.name}]"):
            specs = [p[1] for p in parts]
            # the delay interpolator and the anti-alias roll-off leave the top of each band unusable
            specs[-1] = _trim_upper(specs[-1], USABLE_FRACTION * sets[-1][0])
            stitched = stitch_spectra(specs, bounds)
        with stage(f"compensation[{ch.name}]"):
            s_phi = compensate_delay(stitched, ch.amzi.tau, an.null_guard, an.guard_low_frequency)
            s_nu = to_frequency_psd(s_phi)
        with stage(f"null-search[{ch.name}]"):
            nulls, spacing = find_nulls(stitched, f_min=0.5 / ch.amzi.tau)
        write_spectrum_csv(out / f"{ch.name}_sdphi_stitched.csv", stitched, header)
        write_spectrum_csv(out / f"{ch.name}_sphi.csv", s_phi, header)
        write_spectrum_csv(out / f"{ch.name}_snu.csv", s_nu, header)
        stitched_all[ch.name] = (stitched.freqs, np.where(stitched.valid, stitched.values, np.nan))
        snu_all[ch.name] = (s_nu.freqs, np.where(s_nu.valid, s_nu.values, np.nan))
        expected = 1.0 / ch.amzi.tau
        summary["channels"][ch.name] = {
            "tau": ch.amzi.tau,
            "sets": [p[2] for p in parts],
            "stitch": stitched.meta["stitch"],
            "null_spacing_hz": spacing,
            "expected_null_spacing_hz": expected,
            "null_spacing_error": (spacing - expected) / expected if math.isfinite(spacing) else None,
            "nulls_found": int(len(nulls)),
            "stitched_range_hz": [float(stitched.freqs[0]), float(stitched.freqs[-1])],
            "sphi": spectrum_summary(s_phi)["decades"],
            "snu": spectrum_summary(s_nu)["decades"],
        }

    write_json(out / "amzi_summary.json", summary, header)
    if excerpts:
        plot_traces(out / "fig1_traces.png", excerpts, header, "AMZI output voltage")
    plot_spectra(out / "fig2a_sdphi.png", stitched_all, header, "S_dphi [rad^2/Hz]", "Delay-difference phase PSD")
    f_ref = np.logspace(math.log10(min(f[0] for f, _ in snu_all.values())),
                        math.log10(max(f[-1] for f, _ in snu_all.values())), 400)
    f_ref = f_ref[(f_ref >= cfg.laser.f_min) & (f_ref <= cfg.laser.f_max)]
    plot_spectra(out / "fig2b_snu.png", snu_all, header, "S_nu [Hz^2/Hz]", "Frequency-noise PSD",
                 reference=(f_ref, f_ref**2 * eval_psd(cfg.laser, f_ref), "laser model"))
    panels = []
    if excerpts:
        panels.append(GnuplotPanel("fig1_traces_gp.png", "time [s]", "V [V]",
                                   [(f"{n}_fig1_trace.csv", "1:2", n) for n in names], title="AMZI output voltage"))
    panels.append(GnuplotPanel("fig2a_sdphi_gp.png", "frequency [Hz]", "S_dphi [rad^2/Hz]",
                               [(f"{n}_sdphi_stitched.csv", "1:2", n) for n in names], True, True,
                               "Delay-difference phase PSD"))
    panels.append(GnuplotPanel("fig2b_snu_gp.png", "frequency [Hz]", "S_nu [Hz^2/Hz]",
                               [(f"{n}_snu.csv", "1:2", n) for n in names], True, True, "Frequency-noise PSD"))
    write_gnuplot(out / "plots.gp", panels, header)
    return EXIT_OK


# ---------------------------------------------------------------------------
# tfqkd
# ---------------------------------------------------------------------------

def _bin_phase(ph: PhaseTrace, n_bins: int, per_bin: int) -> np.ndarray:
    return ph.samples[:n_bins * per_bin].reshape(n_bins, per_bin).mean(axis=1)


def cmd_tfqkd(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    t = cfg.tfqkd
    if t is None:
        raise ConfigError(f"{cfg.path}: tfqkd needs a [tfqkd] section")
    header = artifact_header(cfg.config_hash, cfg.seed)
    pc = t.pulses
    bd = pc.bin_duration
    fs = t.sample_rate
    per_bin = pc.bin_duration * fs
    if abs(per_bin - round(per_bin)) > 1e-6 or round(per_bin) < 1:
        raise ConfigError(f"{cfg.path}: [tfqkd] bin_duration * phase_rate must be a positive integer")
    per_bin = int(round(per_bin))
    out.mkdir(parents=True, exist_ok=True)

    with stage("drift-synthesis"):
        n_drift = int(round(t.drift_duration * fs))
        drift_phase = synth_wiener(t.drift_diffusion, fs, n_drift, derive_seed(cfg.seed, 10))
    with stage("drift-counting"):
        drift = simulate_counts(drift_phase, t.drift_visibility, t.drift_pulses, None, derive_seed(cfg.seed, 11))
    with stage("drift-analysis"):
        stats = counts_to_phase(drift)
        oracle = drift_rate(fold_phase(_bin_phase(drift_phase, len(drift), per_bin)), bd)
    with stage("keyed-synthesis"):
        n_keyed = int(round(t.keyed_duration * fs))
        keyed_phase = synth_wiener(t.keyed_diffusion, fs, n_keyed, derive_seed(cfg.seed, 12))
    with stage("keyed-counting"):
        keyed = simulate_counts(keyed_phase, t.keyed_visibility, pc, t.pattern, derive_seed(cfg.seed, 13),
                                t.dwell_bins)
    with stage("qber"):
        q = qber(keyed)
        expected = qber_components(t.keyed_visibility, pc)

    write_counts_csv(out / "drift_counts.csv", drift, header)
    write_columns_csv(out / "drift_phase.csv", {"bin_start_s": drift.bin_starts(), "phase_rad": stats.drift_trace,
                                                "rate_rad_per_ms": stats.rate_trace}, header)
    write_counts_csv(out / "keyed_counts.csv", keyed, header)
    summary = {
        "command": "tfqkd", "seed": cfg.seed, "config_sha256": cfg.config_hash,
        "qber": q.qber, "qber_std_error": q.std_error, "n_correct": q.n_correct, "n_error": q.n_error,
        "keyed_pulses": len(keyed) * pc.pulses_per_bin,
        "expected_qber": expected,
        "rate_std": stats.rate_std, "rate_max_abs": stats.rate_max_abs,
        "count_extrema": [stats.r_min, stats.r_max],
        "oracle_rate_std": float(np.std(oracle)), "oracle_rate_max_abs": float(np.max(np.abs(oracle))),
        "drift_bins": len(drift), "keyed_bins": len(keyed),
        "parameters": {
            "rep_rate": pc.rep_rate, "pulse_width": pc.pulse_width, "extinction_ratio": pc.extinction_ratio,
            "mean_photons_per_pulse": pc.mean_photons_per_pulse,
            "drift_mean_photons_per_pulse": t.drift_mean_photons,
            "detector_efficiency": pc.detector_efficiency, "dark_rate": pc.dark_rate, "bin_duration": bd,
            "phase_rate": fs, "drift_visibility": t.drift_visibility, "drift_diffusion": t.drift_diffusion,
            "drift_duration": t.drift_duration, "keyed_visibility": t.keyed_visibility,
            "keyed_diffusion": t.keyed_diffusion, "keyed_duration": t.keyed_duration,
            "pattern": list(t.pattern), "dwell_bins": t.dwell_bins,
        },
    }
    write_json(out / "tfqkd_summary.json", summary, header)
    plot_drift(out / "fig3b_drift.png", drift.bin_starts(), drift.counts, stats.drift_trace, stats.rate_trace,
               header, window=min(t.drift_duration, 0.025))
    plot_keyed(out / "fig3c_keyed.png", keyed.bin_starts(), keyed.counts, keyed.labels, header,
               f"0/pi keyed counts, QBER {100 * q.qber:.2f} %")
    write_gnuplot(out / "plots.gp", [
        GnuplotPanel("fig3b_counts_gp.png", "time [s]", "counts / bin", [("drift_counts.csv", "1:2", "counts")],
                     title="Unmodulated counts"),
        GnuplotPanel("fig3b_rate_gp.png", "time [s]", "rate [rad/ms]", [("drift_phase.csv", "1:3", "drift rate")],
                     title="Phase drift rate"),
        GnuplotPanel("fig3c_keyed_gp.png", "time [s]", "counts / bin",
                     [("keyed_counts.csv", "1:(strcol(3) eq 'zero' ? $2 : NaN)", "zero"),
                      ("keyed_counts.csv", "1:(strcol(3) eq 'pi' ? $2 : NaN)", "pi")],
                     title="0/pi keyed counts", style="points pt 7 ps 0.3"),
    ], header)
    return EXIT_OK


# ---------------------------------------------------------------------------
# psd
# ---------------------------------------------------------------------------

def cmd_psd(args) -> int:
    path = Path(args.trace)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc.strerror}") from None
    trace, head = read_trace(path, args.kind)
    flags = f"kind={head['kind']};window={args.window};overlap={args.overlap};tau={args.tau};" \
            f"unit={args.unit};null_guard={args.null_guard};guard_low={args.guard_low};s={args.s};d={args.d}"
    run_hash = hashlib.sha256(raw + flags.encode()).hexdigest()
    seed = head.get("seed")
    header = artifact_header(run_hash, seed)
    out = _out_dir(args.out, None, fallback=path.parent)

    info = {"command": "psd", "input": path.name, "input_kind": head["kind"], "fs": trace.fs,
            "samples": len(trace), "seed": seed, "run_sha256": run_hash}
    if head["kind"] == "voltage":
        with stage("phase-extraction"):
            s, d = args.s, args.d
            if s is None or d is None:
                vis = moving_extrema_visibility(trace, args.smooth_window)
                s = vis.s if s is None else s
                d = vis.d if d is None else d
                info["visibility"] = vis.visibility
            phase = extract_phase(trace, s, d)
            info.update(fringe_s=s, fringe_d=d, clip_fraction=phase.provenance["clip_fraction"])
    elif head["kind"] == "phase":
        phase = trace
    else:
        raise FormatError(f"{path}: cannot analyse a '{head['kind']}' trace; pass --kind voltage or phase")
    with stage("welch"):
        window = args.window if args.window is not None else min(DEFAULT_WINDOW, len(phase))
        spec = welch_psd(phase, window, args.overlap)
    if args.tau is not None:
        with stage("compensation"):
            spec = compensate_delay(spec, args.tau, args.null_guard, args.guard_low)
    if args.unit == "freq":
        with stage("unit-conversion"):
            spec = to_frequency_psd(spec)
    stem = path.stem
    write_spectrum_csv(out / f"{stem}_psd.csv", spec, header)
    info["spectrum"] = spectrum_summary(spec)
    write_json(out / f"{stem}_psd.json", info, header)
    ylabel = "S [Hz^2/Hz]" if args.unit == "freq" else "S [rad^2/Hz]"
    plot_spectra(out / f"{stem}_psd.png", {stem: (spec.freqs, np.where(spec.valid, spec.values, np.nan))},
                 header, ylabel)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help=f"output directory (fallback: ${ENV_OUT})")
    common.add_argument("--jobs", type=_positive_int, default=1, metavar="N", help="concurrent workers")
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--config", required=True, metavar="PATH", help="scenario file (INI)")
    scen.add_argument("--seed", type=int, metavar="N", help="override [run] seed")

    p = argparse.ArgumentParser(prog="interferospec", description="Phase-noise and interference-count simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("amzi", parents=[common, scen], help="parallel-AMZI phase-noise experiment")
    sub.add_parser("tfqkd", parents=[common, scen], help="0/pi-keyed single-photon interference experiment")
    ps = sub.add_parser("psd", parents=[common], help="PSD of a recorded trace")
    ps.add_argument("trace", help="binary (.bin) or CSV trace file")
    ps.add_argument("--kind", choices=("phase", "voltage"), help="override the trace kind")
    ps.add_argument("--window", type=_positive_int, help=f"Welch window (default min({DEFAULT_WINDOW}, n))")
    ps.add_argument("--overlap", type=float, default=DEFAULT_OVERLAP)
    ps.add_argument("--tau", type=float, metavar="SECONDS", help="divide out 4 sin^2(pi f tau)")
    ps.add_argument("--null-guard", type=float, default=DEFAULT_NULL_GUARD)
    ps.add_argument("--guard-low", action="store_true", help="also mask the roll-off below 1/(2 tau)")
    ps.add_argument("--unit", choices=("phase", "freq"), default="phase")
    ps.add_argument("--smooth-window", type=_positive_int, default=DEFAULT_SMOOTH_WINDOW)
    ps.add_argument("--s", type=float, help="fringe sum P_max + P_min in V (voltage input)")
    ps.add_argument("--d", type=float, help="fringe difference P_max - P_min in V (voltage input)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "psd":
            return cmd_psd(args)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = load_config(args.config, args.seed)
        out = _out_dir(args.out, cfg)
        run = cmd_amzi if args.command == "amzi" else cmd_tfqkd
        return run(cfg, out, args.jobs)
    except (ConfigError, FormatError) as exc:
        print(f"interferospec: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        kind = "undefined result" if isinstance(exc.cause, UndefinedResultError) else type(exc.cause).__name__
        print(f"interferospec: {exc} ({kind})", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"interferospec: I/O failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
