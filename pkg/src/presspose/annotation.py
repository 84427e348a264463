"""Keypoint annotations: storage, validation, and SSE propagation.

A KeypointSet labels the 14 body parts of one frame in working-
resolution pixel coordinates. Manual labels are placed by a human (or
accepted from model suggestions); every other frame of a sequence is
then annotated automatically with a copy of the most similar manual
frame, where similarity is the sum of squared errors between the two
cleaned raw pressure frames. Parts that cannot be located are carried
with visibility=false and excluded from losses and evaluation.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NoSeedAnnotationError, ValidationError
from .pressure import PressureSequence

PART_NAMES = (
    "head",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
)
NUM_PARTS = len(PART_NAMES)

FrameRef = tuple[int, int, int]  # (subject_id, posture_id, timestamp_index)

MANUAL = "manual"
PROPAGATED = "propagated"


@dataclass(frozen=True)
class Provenance:
    kind: str  # MANUAL or PROPAGATED
    source: FrameRef | None = None  # manual frame a propagated copy came from

    def to_json(self):
        if self.kind == MANUAL:
            return MANUAL
        return {PROPAGATED: list(self.source)}

    @classmethod
    def from_json(cls, obj) -> "Provenance":
        if obj == MANUAL:
            return cls(MANUAL)
        return cls(PROPAGATED, tuple(obj[PROPAGATED]))


@dataclass(frozen=True)
class KeypointSet:
    """14 named 2-D part locations with per-part visibility flags."""

    points: dict[str, tuple[float, float]]
    visibility: dict[str, bool]
    frame_ref: FrameRef

    def __post_init__(self):
        for name, mapping in (("points", self.points), ("visibility", self.visibility)):
            if set(mapping) != set(PART_NAMES):
                missing = set(PART_NAMES) - set(mapping)
                extra = set(mapping) - set(PART_NAMES)
                raise ValidationError(
                    f"{name} must cover exactly the 14 parts"
                    f" (missing {sorted(missing)}, extra {sorted(extra)})"
                )
        points = {p: (float(x), float(y)) for p, (x, y) in self.points.items()}
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "visibility", dict(self.visibility))

    @classmethod
    def create(cls, frame_ref, points, visibility=None) -> "KeypointSet":
        """Build a set from partial maps; unlisted parts become invisible."""
        vis = {p: p in points for p in PART_NAMES}
        if visibility:
            vis.update(visibility)
        full = {p: tuple(points.get(p, (0.0, 0.0))) for p in PART_NAMES}
        return cls(points=full, visibility=vis, frame_ref=tuple(frame_ref))

    def with_frame_ref(self, frame_ref: FrameRef) -> "KeypointSet":
        return replace(self, frame_ref=tuple(frame_ref))

    def visible_parts(self) -> list[str]:
        return [p for p in PART_NAMES if self.visibility[p]]


def visibility_mask(ks: KeypointSet) -> dict[str, bool]:
    """Per-part visibility flags (a copy, safe to mutate)."""
    return dict(ks.visibility)


def validate_bounds(ks: KeypointSet, working_size: tuple[int, int]) -> None:
    """Reject visible points outside the working image, naming the part."""
    h, w = working_size
    for part in PART_NAMES:
        if not ks.visibility[part]:
            continue
        x, y = ks.points[part]
        if not (0 <= x < w and 0 <= y < h):
            raise ValidationError(f"{part} out of bounds: ({x}, {y}) not in {w}x{h}")


def frame_sse(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squared errors between two raw pressure frames."""
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sum(diff * diff))


class AnnotationStore:
    """Keypoint records keyed by (subject, posture, timestamp).

    Reads are lock-free on snapshots; writes are serialized, and
    propagation is applied as one atomic batch.
    """

    def __init__(self, working_size: tuple[int, int]):
        self.working_size = tuple(working_size)
        self._records: dict[FrameRef, KeypointSet] = {}
        self._provenance: dict[FrameRef, Provenance] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, frame_ref: FrameRef) -> bool:
        return tuple(frame_ref) in self._records

    def get(self, frame_ref: FrameRef) -> KeypointSet | None:
        return self._records.get(tuple(frame_ref))

    def provenance(self, frame_ref: FrameRef) -> Provenance | None:
        return self._provenance.get(tuple(frame_ref))

    def records(self) -> dict[FrameRef, KeypointSet]:
        with self._lock:
            return dict(self._records)

    def provenances(self) -> dict[FrameRef, Provenance]:
        with self._lock:
            return dict(self._provenance)

    def put(self, ks: KeypointSet) -> None:
        """Store a manual record, overwriting any prior one for the frame."""
        validate_bounds(ks, self.working_size)
        with self._lock:
            self._records[ks.frame_ref] = ks
            self._provenance[ks.frame_ref] = Provenance(MANUAL)

    def manual_refs(self, subject_id: int, posture_id: int) -> list[FrameRef]:
        with self._lock:
            return sorted(
                ref
                for ref, prov in self._provenance.items()
                if prov.kind == MANUAL and ref[:2] == (subject_id, posture_id)
            )

    def propagate(self, seq: PressureSequence) -> int:
        """Annotate every unlabeled frame of ``seq`` from its nearest seed.

        The seed is the manual frame minimizing the SSE over raw
        pressure values; ties go to the lower source timestamp. Returns
        the number of records added. Idempotent, and never overwrites
        an existing record.
        """
        key = (seq.subject_id, seq.posture_id)
        seeds = self.manual_refs(*key)
        if not seeds:
            raise NoSeedAnnotationError(
                f"no manual annotation for sequence {seq.sequence_id}"
            )
        by_time = {f.timestamp_index: f for f in seq.frames}
        seed_frames = [(ref, by_time[ref[2]]) for ref in seeds if ref[2] in by_time]
        if not seed_frames:
            raise NoSeedAnnotationError(
                f"manual annotations for {seq.sequence_id} reference frames"
                " absent from the sequence"
            )
        batch: dict[FrameRef, tuple[KeypointSet, Provenance]] = {}
        with self._lock:
            for frame in seq.frames:
                ref = key + (frame.timestamp_index,)
                if ref in self._records:
                    continue
                best_ref = min(
                    seed_frames,
                    key=lambda sf: (frame_sse(frame.values, sf[1].values), sf[0][2]),
                )[0]
                copied = self._records[best_ref].with_frame_ref(ref)
                batch[ref] = (copied, Provenance(PROPAGATED, best_ref))
            for ref, (ks, prov) in batch.items():
                self._records[ref] = ks
                self._provenance[ref] = prov
        return len(batch)


def store_to_json(store: AnnotationStore) -> list[dict]:
    records = store.records()
    provs = store.provenances()
    out = []
    for ref in sorted(records):
        ks = records[ref]
        out.append(
            {
                "frame": list(ref),
                "points": {p: [ks.points[p][0], ks.points[p][1]] for p in PART_NAMES},
                "visible": {p: bool(ks.visibility[p]) for p in PART_NAMES},
                "provenance": provs[ref].to_json(),
            }
        )
    return out


def store_from_json(objs: list[dict], working_size: tuple[int, int]) -> AnnotationStore:
    store = AnnotationStore(working_size)
    for obj in objs:
        ref = tuple(obj["frame"])
        ks = KeypointSet(
            points={p: tuple(xy) for p, xy in obj["points"].items()},
            visibility=dict(obj["visible"]),
            frame_ref=ref,
        )
        prov = Provenance.from_json(obj["provenance"])
        with store._lock:
            store._records[ref] = ks
            store._provenance[ref] = prov
    return store


def save_annotations(store: AnnotationStore, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(store_to_json(store), indent=1, sort_keys=True))
    return path


def load_annotations(path: str | Path, working_size: tuple[int, int]) -> AnnotationStore:
    return store_from_json(json.loads(Path(path).read_text()), working_size)
