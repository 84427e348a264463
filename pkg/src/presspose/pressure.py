"""Pressure-mat recordings: ingestion, cleaning, trimming.

A recording is an ordered stack of 32x64 sensor frames (32 columns, 64
rows, one square inch per sensor) sampled at 1 Hz, with pressures
calibrated to [0, 100] mmHg. Frames are stored as (64, 32) arrays,
portrait orientation (the person lies along the long axis).

Two on-disk layouts are supported:

* text: one frame per line, 2048 numbers (whitespace or comma
  separated), row-major over the 64x32 array;
* binary: magic ``PMAT1``, little-endian u32 frame_count, u32 width=32,
  u32 height=64, then frame_count x 2048 little-endian f32 values.

Both carry a JSON sidecar ``<file>.json`` with
``{"subject_id", "posture_id", "sample_rate_hz"}``.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptySequenceError, ParseError, SequenceTooShortError

GRID_WIDTH = 32
GRID_HEIGHT = 64
FRAME_VALUES = GRID_WIDTH * GRID_HEIGHT  # 2048
PRESSURE_MIN = 0.0
PRESSURE_MAX = 100.0  # mmHg, calibrated sensor range
SUBJECT_RANGE = range(1, 14)  # 13 subjects
POSTURE_RANGE = range(1, 18)  # 8 standard postures + 9 sub-postures

BINARY_MAGIC = b"PMAT1"


@dataclass(frozen=True)
class PressureFrame:
    """One 64x32 pressure frame in mmHg."""

    values: np.ndarray
    timestamp_index: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != (GRID_HEIGHT, GRID_WIDTH):
            raise ValueError(
                f"frame grid must be {GRID_HEIGHT}x{GRID_WIDTH}, got {values.shape}"
            )
        if not np.isfinite(values).all():
            raise ValueError("frame contains non-finite values")
        if values.min() < 0:
            raise ValueError("frame contains negative pressures")
        if self.timestamp_index < 0:
            raise ValueError("timestamp_index must be non-negative")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class PressureSequence:
    """Time-ordered pressure frames for one (subject, posture) recording."""

    frames: tuple[PressureFrame, ...]
    subject_id: int
    posture_id: int
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        frames = tuple(self.frames)
        ts = [f.timestamp_index for f in frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamp_index must be strictly increasing")
        if self.subject_id not in SUBJECT_RANGE:
            raise ValueError(f"subject_id {self.subject_id} outside {SUBJECT_RANGE}")
        if self.posture_id not in POSTURE_RANGE:
            raise ValueError(f"posture_id {self.posture_id} outside {POSTURE_RANGE}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def sequence_id(self) -> str:
        return f"{self.subject_id}-{self.posture_id}"

    def stack(self) -> np.ndarray:
        """(T, 64, 32) float32 view of all frames."""
        return np.stack([f.values for f in self.frames])


def _clamp(values: np.ndarray) -> np.ndarray:
    return np.clip(values, PRESSURE_MIN, PRESSURE_MAX)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _read_metadata(path: Path, subject_id, posture_id) -> tuple[int, int, float]:
    sidecar = _sidecar_path(path)
    rate = 1.0
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        subject_id = meta.get("subject_id", subject_id)
        posture_id = meta.get("posture_id", posture_id)
        rate = meta.get("sample_rate_hz", 1.0)
    return subject_id or 1, posture_id or 1, rate


def load_sequence(
    source: str | Path,
    subject_id: int | None = None,
    posture_id: int | None = None,
) -> PressureSequence:
    """Load a recording from a text or binary file.

    Explicit subject/posture arguments are fallbacks; the JSON sidecar
    wins when present. Values are clamped to [0, 100] mmHg.
    """
    path = Path(source)
    raw = path.read_bytes()
    if raw[: len(BINARY_MAGIC)] == BINARY_MAGIC:
        stack = _parse_binary(raw)
    else:
        stack = _parse_text(raw.decode("utf-8"))
    if stack.shape[0] == 0:
        raise EmptySequenceError(f"{path}: no frames")
    subject_id, posture_id, rate = _read_metadata(path, subject_id, posture_id)
    frames = tuple(
        PressureFrame(values=_clamp(v), timestamp_index=t) for t, v in enumerate(stack)
    )
    return PressureSequence(frames, subject_id, posture_id, rate)


def _parse_text(text: str) -> np.ndarray:
    frames = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        parts = re.split(r"[\s,]+", line.strip())
        if len(parts) != FRAME_VALUES:
            raise ParseError(f"frame {i}: expected {FRAME_VALUES} values, got {len(parts)}")
        try:
            row = np.array([float(p) for p in parts], dtype=np.float32)
        except ValueError as exc:
            raise ParseError(f"frame {i}: {exc}") from None
        frames.append(row.reshape(GRID_HEIGHT, GRID_WIDTH))
    if not frames:
        return np.empty((0, GRID_HEIGHT, GRID_WIDTH), dtype=np.float32)
    return np.stack(frames)


def _parse_binary(raw: bytes) -> np.ndarray:
    header = struct.calcsize("<5sIII")
    if len(raw) < header:
        raise ParseError("binary container truncated before header")
    magic, count, width, height = struct.unpack_from("<5sIII", raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if (width, height) != (GRID_WIDTH, GRID_HEIGHT):
        raise ParseError(f"grid {width}x{height} unsupported, expected 32x64")
    expected = header + count * FRAME_VALUES * 4
    if len(raw) != expected:
        raise ParseError(f"binary container is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=header)
    return data.reshape(count, GRID_HEIGHT, GRID_WIDTH).astype(np.float32)


def save_sequence(seq: PressureSequence, dest: str | Path, binary: bool | None = None) -> Path:
    """Write a recording (plus its JSON sidecar).

    Format is picked from the extension (``.pmat`` means binary) unless
    ``binary`` is given explicitly.
    """
    path = Path(dest)
    if binary is None:
        binary = path.suffix == ".pmat"
    stack = seq.stack()
    if binary:
        blob = struct.pack("<5sIII", BINARY_MAGIC, len(seq), GRID_WIDTH, GRID_HEIGHT)
        path.write_bytes(blob + stack.astype("<f4").tobytes())
    else:
        lines = [" ".join(f"{v:.9g}" for v in frame.ravel()) for frame in stack]
        path.write_text("\n".join(lines) + "\n")
    meta = {
        "subject_id": seq.subject_id,
        "posture_id": seq.posture_id,
        "sample_rate_hz": seq.sample_rate_hz,
    }
    _sidecar_path(path).write_text(json.dumps(meta, sort_keys=True))
    return path


def median_filter_3d(seq: PressureSequence) -> PressureSequence:
    """3x3x3 spatiotemporal median filter with replicate padding.

    Cleans spikes left by individual sensors driven outside their
    calibrated range. Output length equals input length; timestamps and
    metadata are preserved.
    """
    if len(seq) == 0:
        raise EmptySequenceError("cannot filter an empty sequence")
    filtered = ndimage.median_filter(seq.stack(), size=3, mode="nearest")
    frames = tuple(
        replace(f, values=filtered[i]) for i, f in enumerate(seq.frames)
    )
    return replace(seq, frames=frames)


def trim_transitions(seq: PressureSequence, n: int = 3) -> PressureSequence:
    """Drop the first and last ``n`` frames (transition noise)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if len(seq) <= 2 * n:
        raise SequenceTooShortError(
            f"sequence of {len(seq)} frames cannot lose 2x{n} transition frames"
        )
    kept = seq.frames[n : len(seq) - n] if n else seq.frames
    return replace(seq, frames=kept)
