"""File formats, metrics and report emission.

Flow files use the Middlebury layout: ``b"PIEH"``, little-endian int32
width and height, then interleaved float32 ``(u, v)`` in row-major order.
CSV files carry a header row and 9 significant digits.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .fields import FlowField, GridError, ScalarField, curl_arrays, div_arrays, interior

FLO_MAGIC = b"PIEH"
FLO_HEADER = struct.Struct("<4sii")
CSV_FMT = ".9g"


class ImageFormatError(ValueError):
    """Unsupported or corrupt raster."""


class FlowFormatError(ValueError):
    """Bad magic or truncated flow file."""


# -- images -----------------------------------------------------------------------

def read_image(path) -> ScalarField:
    """Grayscale 8- or 16-bit PGM/PNG as intensities in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if mode == "L":
        peak = 255.0
    elif mode in ("I;16", "I;16B", "I;16L", "I"):
        peak = 65535.0
    else:
        raise ImageFormatError(f"{path}: expected 8- or 16-bit grayscale, got mode {mode}")
    return ScalarField(arr.astype(np.float64) / peak)


def write_image(path, s, bits: int = 8):
    """Write values in [0, 1] (clipped) as an 8- or 16-bit grayscale raster.

    The format follows the suffix (``.pgm`` or ``.png``).
    """
    data = s.data if isinstance(s, ScalarField) else np.asarray(s, dtype=np.float64)
    x = np.clip(data, 0.0, 1.0)
    if bits == 8:
        im = Image.fromarray(np.round(x * 255.0).astype(np.uint8))
    elif bits == 16:
        im = Image.fromarray(np.round(x * 65535.0).astype(np.uint16))
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    suffix = Path(path).suffix.lower()
    if suffix not in (".pgm", ".png"):
        raise ImageFormatError(f"unsupported raster suffix {suffix!r}")
    im.save(path)


# -- flow files -------------------------------------------------------------------

def flo_bytes(w: FlowField) -> bytes:
    body = np.stack([w.u.data, w.v.data], axis=-1).astype("<f4")
    return FLO_HEADER.pack(FLO_MAGIC, w.width, w.height) + body.tobytes()


def write_flo(path, w: FlowField):
    Path(path).write_bytes(flo_bytes(w))


def read_flo(path) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < FLO_HEADER.size:
        raise FlowFormatError(f"{path}: truncated header")
    magic, width, height = FLO_HEADER.unpack_from(raw)
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"{path}: bad magic {magic!r}")
    if width < 1 or height < 1:
        raise FlowFormatError(f"{path}: bad dimensions {width}x{height}")
    need = FLO_HEADER.size + 8 * width * height
    if len(raw) < need:
        raise FlowFormatError(f"{path}: truncated, {len(raw)} of {need} bytes")
    body = np.frombuffer(raw, dtype="<f4", count=2 * width * height, offset=FLO_HEADER.size)
    body = body.reshape(height, width, 2).astype(np.float64)
    return FlowField.from_arrays(body[..., 0], body[..., 1])


# -- metrics ----------------------------------------------------------------------

def _check_dims(w: FlowField, truth: FlowField):
    if w.shape != truth.shape:
        raise GridError(f"flow {w.shape} and reference {truth.shape} differ")


def endpoint_error(w: FlowField, truth: FlowField, margin: int = 1) -> float:
    """Mean endpoint error over pixels at least ``margin`` from the border."""
    _check_dims(w, truth)
    e = np.hypot(w.u.data - truth.u.data, w.v.data - truth.v.data)
    return float(np.mean(interior(e, margin)))


def extract_profile(w: FlowField, row: int, component: str = "u") -> list[tuple[float, float]]:
    """``(x, value)`` samples of one flow component along row ``row``."""
    if not 0 <= row < w.height:
        raise IndexError(f"row {row} outside [0, {w.height})")
    if component not in ("u", "v"):
        raise ValueError("component must be 'u' or 'v'")
    vals = (w.u if component == "u" else w.v).data[row]
    return [(i * w.dx, float(val)) for i, val in enumerate(vals)]


def magnitude_image(w: FlowField) -> ScalarField:
    """``sqrt(u^2 + v^2)`` divided by its maximum (zero flow stays zero)."""
    mag = w.magnitude()
    peak = mag.max()
    return w.u.like(mag / peak if peak > 0 else mag)


def magnitude_raster(w: FlowField, path, bits: int = 8):
    write_image(path, magnitude_image(w), bits)


def abs_stats(a: np.ndarray, margin: int = 1) -> tuple[float, float]:
    """``(mean |a|, max |a|)`` over the interior."""
    x = np.abs(interior(a, margin))
    return float(x.mean()), float(x.max())


@dataclass
class FlowReport:
    aee: float | None
    profile: list
    div_stats: tuple[float, float]
    curl_stats: tuple[float, float]
    energy_trace: list = field(default_factory=list)
    profile_component: str = "u"

    def __post_init__(self):
        if self.aee is not None and self.aee < 0:
            raise ValueError("aee must be non-negative")
        xs = [p[0] for p in self.profile]
        if xs != sorted(xs):
            raise ValueError("profile must be sorted by x")


def flow_report(w: FlowField, truth: FlowField | None = None, row: int | None = None, energy_trace=None,
                component: str = "u") -> FlowReport:
    """Summary metrics; ``row`` defaults to the middle row."""
    row = w.height // 2 if row is None else row
    d = div_arrays(w.u.data, w.v.data, w.dx, w.dy)
    c = curl_arrays(w.u.data, w.v.data, w.dx, w.dy)
    return FlowReport(
        aee=None if truth is None else endpoint_error(w, truth),
        profile=extract_profile(w, row, component),
        div_stats=abs_stats(d),
        curl_stats=abs_stats(c),
        energy_trace=list(energy_trace or []),
        profile_component=component,
    )


# -- CSV --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), CSV_FMT)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


def write_profile_csv(path, profile, truth_profile=None, component: str = "u"):
    if truth_profile is None:
        write_csv(path, ["x", component], profile)
    else:
        write_csv(path, ["x", component, f"{component}_truth"],
                  [(x, a, b) for (x, a), (_, b) in zip(profile, truth_profile)])


def write_trace_csv(path, trace):
    write_csv(path, ["sweep", "energy"], enumerate(trace))


def write_history_csv(path, history):
    """One row per BCA record (``constraint.BcaRecord``)."""
    cols = ["iter", "step", "residual", "fd", "lambda_dev", "increment", "rho", "mu_c", "eps1", "eps2", "sweeps"]
    write_csv(path, cols, ([getattr(r, c) for c in cols] for r in history))


def write_report_csv(path, report: FlowReport):
    rows = [
        ("aee", "" if report.aee is None else report.aee),
        ("div_mean", report.div_stats[0]), ("div_max", report.div_stats[1]),
        ("curl_mean", report.curl_stats[0]), ("curl_max", report.curl_stats[1]),
    ]
    write_csv(path, ["metric", "value"], rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
