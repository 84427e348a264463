"""Ground-truth heatmaps and part affinity fields, and peak decoding.

Heatmap channel k holds exp(-d^2 / (2 sigma^2)) around keypoint k. Each
of the 14 limbs owns two PAF channels (x then y component); pixels
within the limb band carry the unit vector from the limb's first
endpoint to its second. Channels whose parts are not visible render
all-zero and are excluded from losses through the channel masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .annotation import NUM_PARTS, PART_NAMES, KeypointSet

# 13 tree edges plus the pelvic cross-link, giving 14 limbs and
# therefore 28 PAF channels.
LIMBS = (
    ("head", "neck"),
    ("neck", "r_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("neck", "l_shoulder"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("neck", "r_hip"),
    ("r_hip", "r_knee"),
    ("r_knee", "r_ankle"),
    ("neck", "l_hip"),
    ("l_hip", "l_knee"),
    ("l_knee", "l_ankle"),
    ("r_hip", "l_hip"),
)
NUM_LIMBS = len(LIMBS)
NUM_PAF_CHANNELS = 2 * NUM_LIMBS

# Band half-width and Gaussian sigma both default to this fraction of
# the rendering height, so targets scale with resolution.
DEFAULT_SIGMA_FRAC = 0.02
DEFAULT_LIMB_WIDTH_FRAC = 0.02

PEAK_THRESHOLD = 0.10


@dataclass(frozen=True)
class SkeletonTopology:
    parts: tuple[str, ...] = PART_NAMES
    limbs: tuple[tuple[str, str], ...] = LIMBS

    def __post_init__(self):
        if len(self.parts) != NUM_PARTS:
            raise ValueError(f"expected {NUM_PARTS} parts, got {len(self.parts)}")
        if len(self.limbs) != NUM_LIMBS:
            raise ValueError(f"expected {NUM_LIMBS} limbs, got {len(self.limbs)}")
        if len(set(self.limbs)) != len(self.limbs):
            raise ValueError("duplicate limbs")
        for a, b in self.limbs:
            if a not in self.parts or b not in self.parts:
                raise ValueError(f"limb ({a}, {b}) references unknown part")

    def limb_indices(self) -> list[tuple[int, int]]:
        idx = {p: i for i, p in enumerate(self.parts)}
        return [(idx[a], idx[b]) for a, b in self.limbs]


DEFAULT_TOPOLOGY = SkeletonTopology()


@dataclass(frozen=True)
class TargetMaps:
    """Rendered supervision for one frame, plus per-channel masks."""

    heatmaps: np.ndarray  # (H, W, 14)
    pafs: np.ndarray  # (H, W, 28)
    heatmap_mask: np.ndarray  # (14,) bool
    paf_mask: np.ndarray  # (28,) bool, limb l -> channels 2l, 2l+1


def part_mask(ks: KeypointSet) -> np.ndarray:
    return np.array([ks.visibility[p] for p in PART_NAMES], dtype=bool)


def limb_mask(ks: KeypointSet, topo: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """A limb is usable iff both endpoints are visible and distinct."""
    out = np.zeros(len(topo.limbs), dtype=bool)
    for l, (a, b) in enumerate(topo.limbs):
        if ks.visibility[a] and ks.visibility[b] and ks.points[a] != ks.points[b]:
            out[l] = True
    return out


def paf_channel_mask(ks: KeypointSet, topo: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    return np.repeat(limb_mask(ks, topo), 2)


def render_heatmaps(ks: KeypointSet, size: tuple[int, int], sigma: float) -> np.ndarray:
    """(H, W, 14) Gaussian belief maps; invisible parts stay all-zero."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = size
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    maps = np.zeros((h, w, NUM_PARTS), dtype=np.float64)
    for k, part in enumerate(PART_NAMES):
        if not ks.visibility[part]:
            continue
        px, py = ks.points[part]
        d2 = (xs - px) ** 2 + (ys - py) ** 2
        maps[:, :, k] = np.exp(-d2 / (2.0 * sigma * sigma))
    return maps


def render_pafs(
    ks: KeypointSet,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
    size: tuple[int, int] = (64, 32),
    limb_width: float = 1.0,
) -> np.ndarray:
    """(H, W, 28) part affinity fields.

    A pixel is inside limb l's band when its projection onto the
    segment p1->p2 falls within [0, |p2-p1|] and its perpendicular
    distance is at most ``limb_width``; it then holds the unit vector
    (p2-p1)/|p2-p1| on channels 2l and 2l+1. Degenerate limbs
    (p1 == p2) render all-zero; they are also dropped by limb_mask.
    """
    if limb_width <= 0:
        raise ValueError("limb_width must be positive")
    h, w = size
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    maps = np.zeros((h, w, NUM_PAF_CHANNELS), dtype=np.float64)
    for l, (a, b) in enumerate(topo.limbs):
        if not (ks.visibility[a] and ks.visibility[b]):
            continue
        p1 = np.array(ks.points[a], dtype=np.float64)
        p2 = np.array(ks.points[b], dtype=np.float64)
        length = float(np.hypot(*(p2 - p1)))
        if length == 0.0:
            continue
        v = (p2 - p1) / length
        qx = xs - p1[0]
        qy = ys - p1[1]
        proj = qx * v[0] + qy * v[1]
        perp = np.abs(qx * v[1] - qy * v[0])
        band = (proj >= 0.0) & (proj <= length) & (perp <= limb_width)
        maps[:, :, 2 * l] = np.where(band, v[0], 0.0)
        maps[:, :, 2 * l + 1] = np.where(band, v[1], 0.0)
    return maps


def render_target_maps(
    ks: KeypointSet,
    size: tuple[int, int],
    sigma: float | None = None,
    limb_width: float | None = None,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> TargetMaps:
    h, _ = size
    sigma = DEFAULT_SIGMA_FRAC * h if sigma is None else sigma
    limb_width = DEFAULT_LIMB_WIDTH_FRAC * h if limb_width is None else limb_width
    return TargetMaps(
        heatmaps=render_heatmaps(ks, size, sigma),
        pafs=render_pafs(ks, topo, size, limb_width),
        heatmap_mask=part_mask(ks),
        paf_mask=paf_channel_mask(ks, topo),
    )


def peak_confidences(heatmaps: np.ndarray) -> np.ndarray:
    """(14,) per-channel peak value."""
    return np.asarray(heatmaps, dtype=np.float64).max(axis=(0, 1))


def decode_keypoints(
    heatmaps: np.ndarray,
    peak_threshold: float = PEAK_THRESHOLD,
    frame_ref=(0, 0, 0),
) -> KeypointSet:
    """Locate each part at its channel argmax.

    Parts whose peak is below ``peak_threshold`` come back invisible.
    Ties break to the lowest row, then lowest column (row-major scan
    order), so decoding is deterministic.
    """
    heatmaps = np.asarray(heatmaps)
    if heatmaps.ndim != 3 or heatmaps.shape[2] != NUM_PARTS:
        raise ValueError(f"expected (H, W, {NUM_PARTS}) heatmaps, got {heatmaps.shape}")
    if not np.isfinite(heatmaps).all():
        raise ValueError("heatmaps contain non-finite values")
    points = {}
    visibility = {}
    for k, part in enumerate(PART_NAMES):
        channel = heatmaps[:, :, k]
        flat = int(np.argmax(channel))
        y, x = np.unravel_index(flat, channel.shape)
        visible = bool(channel[y, x] >= peak_threshold)
        points[part] = (float(x), float(y)) if visible else (0.0, 0.0)
        visibility[part] = visible
    return KeypointSet(points=points, visibility=visibility, frame_ref=tuple(frame_ref))


def scale_keypoints(ks: KeypointSet, factor: float) -> KeypointSet:
    """Rescale all coordinates (used to move between map resolutions)."""
    points = {p: (x * factor, y * factor) for p, (x, y) in ks.points.items()}
    return KeypointSet(points=points, visibility=dict(ks.visibility), frame_ref=ks.frame_ref)


def dump_channel_images(maps: np.ndarray, out_dir: str | Path, prefix: str = "ch") -> list[Path]:
    """Write each channel as an 8-bit grayscale PNG for inspection.

    Values are scaled x255; signed PAF channels are shifted from
    [-1, 1] to [0, 1] first.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = np.asarray(maps, dtype=np.float64)
    written = []
    for c in range(maps.shape[2]):
        channel = maps[:, :, c]
        if channel.min() < 0:
            channel = (channel + 1.0) / 2.0
        img = np.clip(channel * 255.0, 0, 255).astype(np.uint8)
        path = out_dir / f"{prefix}{c:02d}.png"
        cv2.imwrite(str(path), img)
        written.append(path)
    return written
