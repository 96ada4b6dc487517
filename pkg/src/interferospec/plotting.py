"""Figure rendering (matplotlib, Agg) and gnuplot script emission.

Every figure is written atomically with the artifact header stored in the
PNG ``Comment`` text chunk.  The gnuplot script re-plots the same data from
the CSV files, so the figures can be restyled without rerunning a scenario.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import write_bytes, write_text  # noqa: E402

_LABEL_COLOURS = {"zero": "tab:blue", "pi": "tab:red", "unmodulated": "tab:grey"}


def _save(fig, path, header: str):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None, "Comment": header})
    plt.close(fig)
    write_bytes(path, buf.getvalue())


def plot_traces(path, traces: dict[str, tuple[np.ndarray, np.ndarray]], header: str, title: str = ""):
    """Stacked voltage-vs-time panels, one per channel."""
    fig, axes = plt.subplots(len(traces), 1, figsize=(7, 2.2 * len(traces) + 0.6), sharex=True, squeeze=False)
    for ax, (name, (t, v)) in zip(axes[:, 0], traces.items()):
        ax.plot(t * 1e3, v, lw=0.6)
        ax.set_ylabel("V [V]")
        ax.set_title(name, fontsize=9, loc="left")
    axes[-1, 0].set_xlabel("time [ms]")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path, header)


def plot_spectra(path, spectra: dict[str, tuple[np.ndarray, np.ndarray]], header: str, ylabel: str,
                 title: str = "", reference: tuple[np.ndarray, np.ndarray, str] | None = None):
    """Log-log PSDs, one line per channel; NaN bins leave gaps."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for name, (f, v) in spectra.items():
        ax.loglog(f, v, lw=0.6, label=name)
    if reference is not None:
        ax.loglog(reference[0], reference[1], "k--", lw=0.8, label=reference[2])
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="major", alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path, header)


def plot_drift(path, t, counts, phase, rate, header: str, window: float | None = None):
    """Unmodulated counts, recovered folded phase and drift rate against time."""
    if window is not None:
        sel = t < t[0] + window
        t, counts, phase, rate = t[sel], counts[sel], phase[sel], rate[sel]
    fig, axes = plt.subplots(3, 1, figsize=(7, 6), sharex=True)
    axes[0].plot(t * 1e3, counts, lw=0.6)
    axes[0].set_ylabel("counts / bin")
    axes[1].plot(t * 1e3, phase, lw=0.6)
    axes[1].set_ylabel("phase [rad]")
    axes[2].plot(t * 1e3, rate, lw=0.6)
    axes[2].set_ylabel("rate [rad/ms]")
    axes[2].set_xlabel("time [ms]")
    fig.tight_layout()
    _save(fig, path, header)


def plot_keyed(path, t, counts, labels, header: str, title: str = ""):
    """Per-bin counts of the keyed acquisition, coloured by phase label."""
    fig, ax = plt.subplots(figsize=(7, 3.4))
    for lab, colour in _LABEL_COLOURS.items():
        sel = labels == lab
        if sel.any():
            ax.plot(t[sel] * 1e3, counts[sel], ".", ms=2, color=colour, label=lab)
    ax.set_xlabel("time [ms]")
    ax.set_ylabel("counts / bin")
    ax.legend(fontsize=8, markerscale=4)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path, header)


@dataclass
class GnuplotPanel:
    output: str
    xlabel: str
    ylabel: str
    series: list[tuple[str, str, str]] = field(default_factory=list)  # (csv file, using, title)
    logx: bool = False
    logy: bool = False
    title: str = ""
    style: str = "lines"


def write_gnuplot(path, panels: list[GnuplotPanel], header: str):
    lines = [f"# {header}", "set datafile separator ','", "set datafile commentschars '#'",
             "set key autotitle columnhead", "set terminal pngcairo size 900,540", ""]
    for p in panels:
        lines.append(f"set output '{p.output}'")
        lines.append(f"set title '{p.title}'")
        lines.append(f"set xlabel '{p.xlabel}'")
        lines.append(f"set ylabel '{p.ylabel}'")
        lines.append("set logscale x" if p.logx else "unset logscale x")
        lines.append("set logscale y" if p.logy else "unset logscale y")
        plots = [f"'{f}' using {u} with {p.style} title '{t}'" for f, u, t in p.series]
        lines.append("plot " + ", \\\n     ".join(plots))
        lines.append("")
    lines.append("unset output")
    write_text(path, "\n".join(lines) + "\n")
