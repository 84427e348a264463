"""Sample assembly: from recordings + annotations to training/eval items.

Targets are rendered directly at the pose adapter's map resolution
(``output_scale`` x working resolution) so losses never interpolate.
Also houses a synthetic lying-pose generator, which lets every demo,
test, and toy training run work without the licensed mat recordings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotation import PART_NAMES, AnnotationStore, FrameRef, KeypointSet
from .colormaps import DEFAULT_COLORMAP, Colormap, colorize, get_colormap
from .errors import ConfigError
from .pressure import GRID_HEIGHT, GRID_WIDTH, PressureFrame, PressureSequence
from .targets import (
    DEFAULT_SIGMA_FRAC,
    DEFAULT_LIMB_WIDTH_FRAC,
    DEFAULT_TOPOLOGY,
    render_target_maps,
    scale_keypoints,
)


@dataclass(frozen=True)
class TrainingSample:
    """One frame's input image plus its supervision at map resolution."""

    image: np.ndarray  # (H, W, 3)
    heatmaps: np.ndarray  # (H', W', 14)
    pafs: np.ndarray  # (H', W', 28)
    heatmap_mask: np.ndarray  # (14,) bool
    paf_mask: np.ndarray  # (28,) bool
    frame_ref: FrameRef


@dataclass(frozen=True)
class EvalSample:
    """One frame's input image plus ground-truth keypoints."""

    image: np.ndarray  # (H, W, 3)
    keypoints: KeypointSet  # working-resolution coordinates
    subject_id: int


def map_size(working_size: tuple[int, int], output_scale: float) -> tuple[int, int]:
    h, w = working_size
    mh, mw = h * output_scale, w * output_scale
    if abs(mh - round(mh)) > 1e-9 or abs(mw - round(mw)) > 1e-9:
        raise ConfigError(
            f"working size {h}x{w} is not divisible by the adapter scale {output_scale}"
        )
    return int(round(mh)), int(round(mw))


def build_training_samples(
    seq: PressureSequence,
    store: AnnotationStore,
    working_size: tuple[int, int],
    output_scale: float,
    colormap: Colormap | str = DEFAULT_COLORMAP,
    sigma: float | None = None,
    limb_width: float | None = None,
) -> list[TrainingSample]:
    """Samples for every annotated frame of ``seq``, in time order."""
    if isinstance(colormap, str):
        colormap = get_colormap(colormap)
    msize = map_size(working_size, output_scale)
    samples = []
    for frame in seq.frames:
        ref = (seq.subject_id, seq.posture_id, frame.timestamp_index)
        ks = store.get(ref)
        if ks is None:
            continue
        maps = render_target_maps(
            scale_keypoints(ks, output_scale),
            size=msize,
            sigma=sigma,
            limb_width=limb_width,
        )
        samples.append(
            TrainingSample(
                image=colorize(frame, colormap, working_size),
                heatmaps=maps.heatmaps,
                pafs=maps.pafs,
                heatmap_mask=maps.heatmap_mask,
                paf_mask=maps.paf_mask,
                frame_ref=ref,
            )
        )
    return samples


def build_eval_samples(
    seq: PressureSequence,
    store: AnnotationStore,
    working_size: tuple[int, int],
    colormap: Colormap | str = DEFAULT_COLORMAP,
) -> list[EvalSample]:
    if isinstance(colormap, str):
        colormap = get_colormap(colormap)
    samples = []
    for frame in seq.frames:
        ref = (seq.subject_id, seq.posture_id, frame.timestamp_index)
        ks = store.get(ref)
        if ks is None:
            continue
        samples.append(
            EvalSample(
                image=colorize(frame, colormap, working_size),
                keypoints=ks,
                subject_id=seq.subject_id,
            )
        )
    return samples


# Canonical supine layout as (x, y) fractions of the working image.
_POSE_FRACTIONS = {
    "head": (0.50, 0.08),
    "neck": (0.50, 0.18),
    "r_shoulder": (0.32, 0.22),
    "r_elbow": (0.26, 0.38),
    "r_wrist": (0.24, 0.52),
    "l_shoulder": (0.68, 0.22),
    "l_elbow": (0.74, 0.38),
    "l_wrist": (0.76, 0.52),
    "r_hip": (0.40, 0.55),
    "r_knee": (0.38, 0.72),
    "r_ankle": (0.37, 0.90),
    "l_hip": (0.60, 0.55),
    "l_knee": (0.62, 0.72),
    "l_ankle": (0.63, 0.90),
}


def synthetic_keypoints(
    working_size: tuple[int, int],
    frame_ref: FrameRef,
    rng: np.random.Generator,
    jitter: float = 2.0,
) -> KeypointSet:
    h, w = working_size
    points = {}
    for part in PART_NAMES:
        fx, fy = _POSE_FRACTIONS[part]
        x = np.clip(fx * w + rng.uniform(-jitter, jitter), 0, w - 1)
        y = np.clip(fy * h + rng.uniform(-jitter, jitter), 0, h - 1)
        points[part] = (float(x), float(y))
    return KeypointSet(
        points=points, visibility={p: True for p in PART_NAMES}, frame_ref=frame_ref
    )


def _pressure_from_keypoints(
    ks: KeypointSet, working_size: tuple[int, int], rng: np.random.Generator
) -> np.ndarray:
    """Blobby contact pattern with a pressure peak under each part."""
    h, w = working_size
    ys = np.arange(GRID_HEIGHT, dtype=np.float64)[:, None]
    xs = np.arange(GRID_WIDTH, dtype=np.float64)[None, :]
    grid = np.zeros((GRID_HEIGHT, GRID_WIDTH), dtype=np.float64)
    for part in PART_NAMES:
        x, y = ks.points[part]
        gx = x * GRID_WIDTH / w
        gy = y * GRID_HEIGHT / h
        amp = 45.0 if part in ("r_hip", "l_hip", "head") else 30.0
        d2 = (xs - gx) ** 2 + (ys - gy) ** 2
        grid += amp * np.exp(-d2 / (2.0 * 2.5**2))
    grid += rng.uniform(0.0, 1.5, size=grid.shape)
    return np.clip(grid, 0.0, 100.0).astype(np.float32)


def make_synthetic_recording(
    n_frames: int,
    working_size: tuple[int, int],
    subject_id: int = 1,
    posture_id: int = 1,
    seed: int = 0,
    jitter: float = 2.0,
) -> tuple[PressureSequence, AnnotationStore]:
    """A jittered supine recording with a complete manual annotation set."""
    rng = np.random.default_rng(seed)
    frames = []
    store = AnnotationStore(working_size)
    for t in range(n_frames):
        ref = (subject_id, posture_id, t)
        ks = synthetic_keypoints(working_size, ref, rng, jitter)
        frames.append(PressureFrame(_pressure_from_keypoints(ks, working_size, rng), t))
        store.put(ks)
    seq = PressureSequence(tuple(frames), subject_id, posture_id)
    return seq, store
