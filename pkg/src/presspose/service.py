"""HTTP facade over sequences, annotations, propagation, and inference.

The service adds no semantics of its own: every response is
reproducible with a direct library call on the same inputs. Keypoint
coordinates are working-resolution pixels everywhere; frame images are
served as PNG rasters of the colorized frame at working resolution.

Writes take a per-sequence writer lock (HTTP 409 when contended) and
apply atomically; propagation inserts its whole batch under the lock,
so concurrent readers never observe a half-written store.
"""

from __future__ import annotations

import threading
from pathlib import Path

import cv2
import numpy as np
from fastapi import Body, FastAPI, HTTPException, Response

from .adapters import PoseAdapter
from .annotation import (
    PART_NAMES,
    AnnotationStore,
    KeypointSet,
    load_annotations,
    save_annotations,
    validate_bounds,
)
from .colormaps import colorize, get_colormap
from .errors import NoSeedAnnotationError, UnknownColormapError, ValidationError
from .polishnet import PolishNet, polish_image
from .pressure import GRID_HEIGHT, GRID_WIDTH, PressureFrame, PressureSequence, load_sequence
from .targets import DEFAULT_TOPOLOGY, decode_keypoints, peak_confidences, scale_keypoints

DEFAULT_WORKING_SIZE = (256, 128)


class SessionState:
    """Loaded sequences, the annotation store, and the optional model."""

    def __init__(
        self,
        data_dir: str | Path,
        working_size: tuple[int, int] = DEFAULT_WORKING_SIZE,
        labels_file: str = "labels.json",
        default_colormap: str = "viridis",
        net: PolishNet | None = None,
        adapter: PoseAdapter | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.working_size = tuple(working_size)
        self.default_colormap = default_colormap
        self.net = net
        self.adapter = adapter
        self.sequences: dict[str, PressureSequence] = {}
        for path in sorted(self.data_dir.iterdir()):
            if path.suffix in (".txt", ".pmat"):
                seq = load_sequence(path)
                self.sequences[seq.sequence_id] = seq
        self.labels_path = self.data_dir / labels_file
        if self.labels_path.exists():
            self.store = load_annotations(self.labels_path, self.working_size)
        else:
            self.store = AnnotationStore(self.working_size)
        self._writer_locks: dict[str, threading.Lock] = {
            sid: threading.Lock() for sid in self.sequences
        }

    def writer_lock(self, sequence_id: str) -> threading.Lock:
        return self._writer_locks[sequence_id]

    def persist(self) -> None:
        tmp = self.labels_path.with_suffix(".tmp")
        save_annotations(self.store, tmp)
        tmp.replace(self.labels_path)


def _annotation_json(state: SessionState, ref) -> dict:
    ks = state.store.get(ref)
    if ks is None:
        raise HTTPException(404, f"no annotation for frame {list(ref)}")
    prov = state.store.provenance(ref)
    return {
        "frame": list(ref),
        "points": {p: list(ks.points[p]) for p in PART_NAMES},
        "visible": {p: bool(ks.visibility[p]) for p in PART_NAMES},
        "provenance": prov.to_json(),
    }


def create_app(state: SessionState) -> FastAPI:
    app = FastAPI(title="presspose service")
    app.state.session = state

    def _sequence(sequence_id: str) -> PressureSequence:
        seq = state.sequences.get(sequence_id)
        if seq is None:
            raise HTTPException(404, f"unknown sequence {sequence_id!r}")
        return seq

    def _frame(sequence_id: str, t: int) -> PressureFrame:
        seq = _sequence(sequence_id)
        for frame in seq.frames:
            if frame.timestamp_index == t:
                return frame
        raise HTTPException(404, f"sequence {sequence_id!r} has no frame {t}")

    @app.get("/sequences")
    def list_sequences():
        out = []
        for sid, seq in sorted(state.sequences.items()):
            refs = [(seq.subject_id, seq.posture_id, f.timestamp_index) for f in seq.frames]
            out.append(
                {
                    "id": sid,
                    "subject_id": seq.subject_id,
                    "posture_id": seq.posture_id,
                    "frames": [f.timestamp_index for f in seq.frames],
                    "sample_rate_hz": seq.sample_rate_hz,
                    "annotated": sum(1 for r in refs if r in state.store),
                    "working_size": list(state.working_size),
                }
            )
        return out

    @app.get("/sequences/{sequence_id}/frames/{t}/image")
    def frame_image(sequence_id: str, t: int, colormap: str | None = None):
        frame = _frame(sequence_id, t)
        try:
            cmap = get_colormap(colormap or state.default_colormap)
        except UnknownColormapError as exc:
            raise HTTPException(400, str(exc)) from None
        image = colorize(frame, cmap, state.working_size)
        bgr = (image[:, :, ::-1] * 255.0).round().astype(np.uint8)
        ok, png = cv2.imencode(".png", bgr)
        if not ok:
            raise HTTPException(500, "PNG encoding failed")
        return Response(content=png.tobytes(), media_type="image/png")

    @app.get("/sequences/{sequence_id}/frames/{t}/annotation")
    def get_annotation(sequence_id: str, t: int):
        seq = _sequence(sequence_id)
        _frame(sequence_id, t)
        return _annotation_json(state, (seq.subject_id, seq.posture_id, t))

    @app.post("/sequences/{sequence_id}/frames/{t}/annotation")
    def put_annotation(sequence_id: str, t: int, body: dict = Body(...)):
        seq = _sequence(sequence_id)
        _frame(sequence_id, t)
        points = body.get("points")
        if not isinstance(points, dict):
            raise HTTPException(400, "body field 'points' must map parts to [x, y]")
        visible = body.get("visible") or {}
        try:
            ks = KeypointSet.create(
                (seq.subject_id, seq.posture_id, t),
                points={p: tuple(xy) for p, xy in points.items()},
                visibility=visible,
            )
        except (ValidationError, TypeError, ValueError) as exc:
            raise HTTPException(400, f"points: {exc}") from None
        lock = state.writer_lock(sequence_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(409, f"sequence {sequence_id!r} has an active writer")
        try:
            try:
                state.store.put(ks)
            except ValidationError as exc:
                raise HTTPException(400, str(exc)) from None
            state.persist()
        finally:
            lock.release()
        return _annotation_json(state, ks.frame_ref)

    @app.post("/sequences/{sequence_id}/propagate")
    def propagate(sequence_id: str):
        seq = _sequence(sequence_id)
        lock = state.writer_lock(sequence_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(409, f"sequence {sequence_id!r} has an active writer")
        try:
            try:
                added = state.store.propagate(seq)
            except NoSeedAnnotationError as exc:
                raise HTTPException(400, str(exc)) from None
            state.persist()
        finally:
            lock.release()
        refs = [(seq.subject_id, seq.posture_id, f.timestamp_index) for f in seq.frames]
        return {
            "added": added,
            "annotated": sum(1 for r in refs if r in state.store),
            "frames": len(seq),
        }

    @app.get("/sequences/{sequence_id}/annotations")
    def sequence_annotations(sequence_id: str):
        seq = _sequence(sequence_id)
        out = []
        for frame in seq.frames:
            ref = (seq.subject_id, seq.posture_id, frame.timestamp_index)
            if ref in state.store:
                out.append(_annotation_json(state, ref))
        return out

    @app.get("/model")
    def model_info():
        return {
            "loaded": state.net is not None and state.adapter is not None,
            "adapter": state.adapter.name if state.adapter else None,
            "polish_checksum": state.net.checksum() if state.net else None,
        }

    @app.post("/infer")
    def infer(body: dict = Body(...)):
        if state.adapter is None:
            raise HTTPException(400, "no pose adapter loaded")
        if "frame_values" in body:
            values = np.asarray(body["frame_values"], dtype=np.float32)
            if values.shape != (GRID_HEIGHT, GRID_WIDTH):
                raise HTTPException(
                    400,
                    f"frame_values must be {GRID_HEIGHT}x{GRID_WIDTH}, got {list(values.shape)}",
                )
            frame = PressureFrame(np.clip(values, 0, 100), 0)
            ref = (0, 0, 0)
        elif "sequence" in body and "t" in body:
            frame = _frame(body["sequence"], int(body["t"]))
            seq = _sequence(body["sequence"])
            ref = (seq.subject_id, seq.posture_id, int(body["t"]))
        else:
            raise HTTPException(400, "body needs 'frame_values' or 'sequence' + 't'")
        cmap = get_colormap(body.get("colormap") or state.default_colormap)
        image = colorize(frame, cmap, state.working_size)
        if state.net is not None:
            image = polish_image(state.net, image, mode="eval")
        heatmaps, _ = state.adapter.infer(image)
        decoded = decode_keypoints(heatmaps, frame_ref=ref)
        scaled = scale_keypoints(decoded, 1.0 / state.adapter.output_scale)
        confidence = peak_confidences(heatmaps)
        return {
            "frame": list(ref),
            "points": {p: list(scaled.points[p]) for p in PART_NAMES},
            "visible": {p: bool(scaled.visibility[p]) for p in PART_NAMES},
            "confidence": {p: float(confidence[i]) for i, p in enumerate(PART_NAMES)},
        }

    @app.get("/skeleton")
    def skeleton():
        return {
            "parts": list(DEFAULT_TOPOLOGY.parts),
            "limbs": [list(limb) for limb in DEFAULT_TOPOLOGY.limbs],
        }

    return app


def serve(state: SessionState, host: str = "127.0.0.1", port: int = 8008) -> None:
    import uvicorn

    uvicorn.run(create_app(state), host=host, port=port)
