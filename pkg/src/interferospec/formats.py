"""On-disk formats for traces, spectra and count series.

Binary trace file (all little-endian)::

    offset size  field
    0      8     magic  b"IFSTRACE"
    8      8     fs     float64, Hz
    16     8     n      uint64, number of samples
    24     8     t0     float64, s
    32     8     seed   int64, -1 when unknown
    40     4     kind   uint32: 0 phase [rad], 1 voltage [V], 2 power [W]
    44     4     version uint32 (= 1)
    48     16    first 16 bytes of the SHA-256 of the generating config (zeros if none)
    64     8*n   samples, float64

CSV files start with ``#`` comment lines (artifact header, then ``key=value``
metadata) followed by a column header row.  Floats are written with
``%.17g`` so they read back bit-exactly.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .interferometer import PowerTrace, VoltageTrace
from .photoncount import TimeTagSeries
from .spectral import SpectrumEstimate
from .synth import PhaseTrace

MAGIC = b"IFSTRACE"
VERSION = 1
HEADER = struct.Struct("<8sdQdqII16s")
KIND_CODES = {"phase": 0, "voltage": 1, "power": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
_FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Malformed input file; the message names the byte offset or CSV line."""


def artifact_header(config_hash: str | None, seed: int | None) -> str:
    return f"interferospec artifact config_sha256={config_hash or 'none'} seed={seed if seed is not None else 'none'}"


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------

@contextmanager
def atomic_open(path):
    """Binary file handle on a temp file that replaces ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.fchmod(fd, 0o644)
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes(path, data: bytes):
    with atomic_open(path) as fh:
        fh.write(data)


def write_text(path, text: str):
    write_bytes(path, text.encode())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj: dict, header: str | None = None):
    body = {"header": header} if header is not None else {}
    body.update(obj)
    write_text(path, json.dumps(_jsonable(body), indent=2) + "\n")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def _kind_of(trace) -> str:
    if isinstance(trace, PhaseTrace):
        return "phase"
    if isinstance(trace, PowerTrace):
        return "power"
    if isinstance(trace, VoltageTrace):
        return "voltage"
    raise TypeError(f"cannot serialise {type(trace).__name__}")


def _trace_header(trace, config_hash, seed) -> bytes:
    if seed is None:
        seed = trace.provenance.get("seed")
    digest = bytes.fromhex(config_hash)[:16] if config_hash else bytes(16)
    return HEADER.pack(MAGIC, float(trace.fs), len(trace), float(trace.t0),
                       -1 if seed is None else int(seed) & 0x7FFFFFFFFFFFFFFF,
                       KIND_CODES[_kind_of(trace)], VERSION, digest.ljust(16, b"\0"))


def encode_trace(trace, config_hash: str | None = None, seed: int | None = None) -> bytes:
    return _trace_header(trace, config_hash, seed) + np.ascontiguousarray(trace.samples, dtype="<f8").tobytes()


def write_trace_bin(path, trace, config_hash: str | None = None, seed: int | None = None):
    with atomic_open(path) as fh:
        fh.write(_trace_header(trace, config_hash, seed))
        np.ascontiguousarray(trace.samples, dtype="<f8").tofile(fh)


def decode_trace(data: bytes):
    """Parse a binary trace; returns ``(trace, header_dict)``."""
    if len(data) < HEADER.size:
        raise FormatError(f"file too short for the {HEADER.size}-byte header (byte offset {len(data)})")
    magic, fs, n, t0, seed, kind, version, digest = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 44")
    if kind not in KIND_NAMES:
        raise FormatError(f"unknown kind code {kind} at byte offset 40")
    if not (fs > 0 and math.isfinite(fs)):
        raise FormatError(f"invalid fs {fs} at byte offset 8")
    expected = HEADER.size + 8 * n
    if len(data) != expected:
        raise FormatError(f"payload size mismatch: header says {n} samples, data ends at byte offset "
                          f"{len(data)} (expected {expected})")
    samples = np.frombuffer(data, dtype="<f8", offset=HEADER.size, count=n).astype(float)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise FormatError(f"non-finite sample at byte offset {HEADER.size + 8 * int(bad[0])}")
    kind_name = KIND_NAMES[kind]
    prov = {"seed": None if seed < 0 else int(seed)}
    cls = {"phase": PhaseTrace, "voltage": VoltageTrace, "power": PowerTrace}[kind_name]
    header = {"fs": fs, "n": n, "t0": t0, "seed": prov["seed"], "kind": kind_name,
              "config_hash_prefix": digest.hex()}
    return cls(samples, fs, t0, prov), header


def read_trace_bin(path):
    return decode_trace(Path(path).read_bytes())


def write_trace_csv(path, trace, header: str | None = None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(f"# kind={_kind_of(trace)} fs={trace.fs!r} t0={trace.t0!r}\n")
    buf.write("time,value\n")
    np.savetxt(buf, np.column_stack((trace.times(), trace.samples)), fmt=_FLOAT_FMT, delimiter=",")
    write_text(path, buf.getvalue())


def read_trace_csv(path, kind: str | None = None):
    """Read a ``time,value`` CSV.  ``fs`` comes from the metadata comment or,
    failing that, from the (uniform) time column."""
    meta = {}
    times, values = [], []
    seen_header = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            if not seen_header:
                cols = [c.strip() for c in line.split(",")]
                if cols != ["time", "value"]:
                    raise FormatError(f"{path}: line {lineno}: expected header 'time,value', got {line!r}")
                seen_header = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}: line {lineno}: expected 2 columns, got {len(parts)}")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: not a number: {line!r}") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise FormatError(f"{path}: line {lineno}: non-finite value")
            times.append(t)
            values.append(v)
    if not seen_header:
        raise FormatError(f"{path}: no 'time,value' header line")
    if len(values) < 2:
        raise FormatError(f"{path}: need at least two samples")
    t = np.asarray(times)
    if "fs" in meta:
        fs = float(meta["fs"])
    else:
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * np.mean(dt):
            raise FormatError(f"{path}: time column is not uniformly sampled")
        fs = 1.0 / np.mean(dt)
    t0 = float(meta.get("t0", t[0]))
    kind = kind or meta.get("kind", "phase")
    if kind not in KIND_CODES:
        raise FormatError(f"{path}: unknown kind {kind!r}")
    cls = {"phase": PhaseTrace, "voltage": VoltageTrace, "power": PowerTrace}[kind]
    return cls(np.asarray(values), fs, t0, {"seed": None}), {"fs": fs, "t0": t0, "kind": kind, "n": len(values)}


def read_trace(path, kind: str | None = None):
    """Binary if the file starts with the magic bytes, CSV otherwise."""
    with open(path, "rb") as fh:
        start = fh.read(len(MAGIC))
    if start == MAGIC:
        trace, head = read_trace_bin(path)
        if kind and kind != head["kind"]:
            cls = {"phase": PhaseTrace, "voltage": VoltageTrace, "power": PowerTrace}[kind]
            trace = cls(trace.samples, trace.fs, trace.t0, trace.provenance)
            head["kind"] = kind
        return trace, head
    return read_trace_csv(path, kind)


# ---------------------------------------------------------------------------
# spectra and counts
# ---------------------------------------------------------------------------

def write_spectrum_csv(path, spec: SpectrumEstimate, header: str | None = None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(f"# unit={spec.unit}\n")
    buf.write("freq,value,valid\n")
    vals = np.where(spec.valid, spec.values, np.nan)
    for f, v, ok in zip(spec.freqs, vals, spec.valid):
        buf.write(f"{_FLOAT_FMT % f},{_FLOAT_FMT % v if ok else 'nan'},{int(ok)}\n")
    write_text(path, buf.getvalue())


def read_spectrum_csv(path) -> SpectrumEstimate:
    unit = "phase_psd"
    rows = []
    with open(path) as fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("unit="):
                        unit = tok[5:]
                continue
            if not header_seen:
                if line != "freq,value,valid":
                    raise FormatError(f"{path}: line {lineno}: expected header 'freq,value,valid'")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 columns")
            try:
                rows.append((float(parts[0]), float(parts[1]), int(parts[2])))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: not a number: {line!r}") from None
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return SpectrumEstimate(arr[:, 0], arr[:, 1], unit, arr[:, 2].astype(bool))


def spectrum_summary(spec: SpectrumEstimate) -> dict:
    """Metadata plus per-decade statistics of the valid bins."""
    bands = []
    f = spec.freqs[spec.valid]
    v = spec.values[spec.valid]
    if f.size:
        for dec in range(int(math.floor(math.log10(f[0]))), int(math.floor(math.log10(f[-1]))) + 1):
            sel = (f >= 10.0**dec) & (f < 10.0 ** (dec + 1))
            if sel.any():
                bands.append({"f_lo": 10.0**dec, "f_hi": 10.0 ** (dec + 1), "bins": int(sel.sum()),
                              "median": float(np.median(v[sel])), "mean": float(np.mean(v[sel]))})
    return {"unit": spec.unit, "n_bins": len(spec), "n_valid": int(spec.valid.sum()),
            "f_first": float(spec.freqs[0]) if len(spec) else None,
            "f_last": float(spec.freqs[-1]) if len(spec) else None,
            "meta": spec.meta, "decades": bands}


def write_counts_csv(path, series: TimeTagSeries, header: str | None = None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(f"# bin_duration={series.bin_duration!r}\n")
    buf.write("bin_start_s,count,label\n")
    for t, c, lab in zip(series.bin_starts(), series.counts, series.labels):
        buf.write(f"{_FLOAT_FMT % t},{int(c)},{lab}\n")
    write_text(path, buf.getvalue())


def read_counts_csv(path) -> TimeTagSeries:
    meta = {}
    starts, counts, labels = [], [], []
    with open(path) as fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            if not header_seen:
                if line != "bin_start_s,count,label":
                    raise FormatError(f"{path}: line {lineno}: expected header 'bin_start_s,count,label'")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 columns")
            try:
                starts.append(float(parts[0]))
                counts.append(int(parts[1]))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: bad number in {line!r}") from None
            labels.append(parts[2])
    if "bin_duration" in meta:
        bd = float(meta["bin_duration"])
    elif len(starts) > 1:
        bd = starts[1] - starts[0]
    else:
        raise FormatError(f"{path}: cannot determine bin duration")
    return TimeTagSeries(np.array(counts), np.array(labels), bd, starts[0] if starts else 0.0)


def write_columns_csv(path, columns: dict[str, np.ndarray], header: str | None = None):
    """Generic numeric CSV (used for plot data)."""
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(",".join(columns) + "\n")
    np.savetxt(buf, np.column_stack([np.asarray(c, dtype=float) for c in columns.values()]),
               fmt=_FLOAT_FMT, delimiter=",")
    write_text(path, buf.getvalue())
