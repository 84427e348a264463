"""PCK evaluation, leave-one-subject-out aggregation, and report emission.

A prediction for part k counts as detected at threshold t when its
distance to the ground truth is strictly below t x torso length, the
torso being the ground-truth left shoulder to right hip distance.
Curves use the normalized-threshold grid [0, 1] in steps of 0.01; the
AUC is the mean detection rate over that grid, x100. The grid is an
artifact convention (stated in every report header), so AUC values are
comparable within this toolkit, not against externally published ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from .adapters import PoseAdapter
from .annotation import PART_NAMES, KeypointSet
from .colormaps import Colormap, colorize
from .errors import ReferenceUnavailableError, ShapeError
from .datasets import EvalSample
from .polishnet import PolishNet
from .pressure import PressureFrame
from .targets import PEAK_THRESHOLD, decode_keypoints, scale_keypoints

if TYPE_CHECKING:
    from .training import SplitPlan

DEFAULT_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 2)

THRESHOLD_GRID_NOTE = "thresholds: normalized distance 0.00-1.00, step 0.01 (artifact convention)"

PART_LABELS = {
    "head": "Head",
    "neck": "Neck",
    "r_shoulder": "R Shoulder",
    "r_elbow": "R Elbow",
    "r_wrist": "R Wrist",
    "r_hip": "R Hip",
    "r_knee": "R Knee",
    "r_ankle": "R Ankle",
    "l_shoulder": "L Shoulder",
    "l_elbow": "L Elbow",
    "l_wrist": "L Wrist",
    "l_hip": "L Hip",
    "l_knee": "L Knee",
    "l_ankle": "L Ankle",
}

# Two row-groups of seven parts each, matching the customary table layout.
TABLE_GROUPS = (
    ("head", "r_shoulder", "r_elbow", "r_wrist", "r_hip", "r_knee", "r_ankle"),
    ("neck", "l_shoulder", "l_elbow", "l_wrist", "l_hip", "l_knee", "l_ankle"),
)


def torso_length(ks_gt: KeypointSet) -> float:
    """Ground-truth left shoulder to right hip distance, in pixels."""
    for part in ("l_shoulder", "r_hip"):
        if not ks_gt.visibility[part]:
            raise ReferenceUnavailableError(
                f"{part} invisible; frame {ks_gt.frame_ref} lacks a torso reference"
            )
    (x1, y1) = ks_gt.points["l_shoulder"]
    (x2, y2) = ks_gt.points["r_hip"]
    return float(math.hypot(x2 - x1, y2 - y1))


@dataclass(frozen=True)
class PCKCurve:
    part: str
    thresholds: np.ndarray
    detection_rate: np.ndarray
    visible_count: int
    flagged: bool = False  # true when no visible instance existed

    def __post_init__(self):
        rate = np.asarray(self.detection_rate, dtype=np.float64)
        if rate.shape != np.asarray(self.thresholds).shape:
            raise ShapeError("detection_rate and thresholds must align")
        if self.visible_count and (np.diff(rate) < 0).any():
            raise ValueError("detection rate must be monotone non-decreasing")
        object.__setattr__(self, "detection_rate", rate)
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=np.float64))

    @property
    def auc(self) -> float:
        return auc(self)


def auc(curve: PCKCurve) -> float:
    """Mean detection rate over the threshold grid, x100."""
    return float(np.mean(curve.detection_rate) * 100.0)


@dataclass(frozen=True)
class ExclusionLog:
    missing_torso: tuple[int, ...] = ()
    degenerate_torso: tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return len(self.missing_torso) + len(self.degenerate_torso)


def pck_with_exclusions(
    pred: list[KeypointSet],
    gt: list[KeypointSet],
    thresholds: np.ndarray = DEFAULT_THRESHOLDS,
) -> tuple[list[PCKCurve], ExclusionLog]:
    if len(pred) != len(gt):
        raise ShapeError(f"{len(pred)} predictions vs {len(gt)} ground-truth frames")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if (np.diff(thresholds) < 0).any():
        raise ValueError("thresholds must be sorted ascending")

    missing, degenerate = [], []
    normalized: dict[str, list[float]] = {p: [] for p in PART_NAMES}
    for i, (p_ks, g_ks) in enumerate(zip(pred, gt)):
        try:
            torso = torso_length(g_ks)
        except ReferenceUnavailableError:
            missing.append(i)
            continue
        if torso == 0.0:
            degenerate.append(i)
            continue
        for part in PART_NAMES:
            if not g_ks.visibility[part]:
                continue
            if p_ks.visibility[part]:
                gx, gy = g_ks.points[part]
                px, py = p_ks.points[part]
                normalized[part].append(math.hypot(px - gx, py - gy) / torso)
            else:
                normalized[part].append(math.inf)

    curves = []
    for part in PART_NAMES:
        errs = np.asarray(normalized[part], dtype=np.float64)
        if errs.size == 0:
            curves.append(
                PCKCurve(part, thresholds, np.zeros_like(thresholds), 0, flagged=True)
            )
            continue
        rate = (errs[None, :] < thresholds[:, None]).mean(axis=1)
        curves.append(PCKCurve(part, thresholds, rate, int(errs.size)))
    return curves, ExclusionLog(tuple(missing), tuple(degenerate))


def pck(
    pred: list[KeypointSet],
    gt: list[KeypointSet],
    thresholds: np.ndarray = DEFAULT_THRESHOLDS,
) -> list[PCKCurve]:
    return pck_with_exclusions(pred, gt, thresholds)[0]


def mean_auc(curves: list[PCKCurve]) -> float:
    """Average detection rate over parts (flagged empty curves included as 0)."""
    return float(np.mean([auc(c) for c in curves]))


def run_pipeline(
    net: PolishNet | None,
    adapter: PoseAdapter,
    samples: list[EvalSample],
    peak_threshold: float = PEAK_THRESHOLD,
) -> list[KeypointSet]:
    """Predicted keypoints (working-resolution coordinates) per sample."""
    preds = []
    for sample in samples:
        image = sample.image
        if net is not None:
            dtype = next(net.parameters()).dtype
            was_training = net.training
            net.eval()
            with torch.no_grad():
                x = torch.from_numpy(
                    np.ascontiguousarray(image.transpose(2, 0, 1))
                )[None].to(dtype)
                image = net(x)[0].cpu().numpy().transpose(1, 2, 0)
            net.train(was_training)
        heatmaps, _ = adapter.infer(image)
        decoded = decode_keypoints(
            heatmaps, peak_threshold=peak_threshold, frame_ref=sample.keypoints.frame_ref
        )
        preds.append(scale_keypoints(decoded, 1.0 / adapter.output_scale))
    return preds


def pipeline_auc(
    net: PolishNet | None,
    adapter: PoseAdapter,
    samples: list[EvalSample],
    thresholds: np.ndarray = DEFAULT_THRESHOLDS,
) -> float:
    preds = run_pipeline(net, adapter, samples)
    return mean_auc(pck(preds, [s.keypoints for s in samples], thresholds))


@dataclass(frozen=True)
class VariantResult:
    name: str
    fold_aucs: np.ndarray  # (folds, parts)
    pooled_curves: tuple[PCKCurve, ...]  # over all test frames of all folds

    def auc_mean(self) -> np.ndarray:
        return self.fold_aucs.mean(axis=0)

    def auc_std(self) -> np.ndarray:
        return self.fold_aucs.std(axis=0)

    def overall_mean(self) -> float:
        """Average detection rate: mean over folds of the per-fold part mean."""
        return float(self.fold_aucs.mean(axis=1).mean())

    def overall_std(self) -> float:
        return float(self.fold_aucs.mean(axis=1).std())


@dataclass(frozen=True)
class EvalReport:
    variants: tuple[VariantResult, ...]
    thresholds: np.ndarray
    fold_test_subjects: tuple[int, ...]
    excluded_frames: int
    metadata: dict = field(default_factory=dict)


def evaluate_pipeline(
    polish: PolishNet | None,
    adapter: PoseAdapter,
    dataset: list[EvalSample],
    split: "SplitPlan",
    second_adapter: PoseAdapter | None = None,
    thresholds: np.ndarray = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Per-fold PCK/AUC for every pipeline variant.

    With ``polish`` supplied the report carries the with/without
    ablation; with ``second_adapter`` it grows to the four-row
    comparison (adapter only, polish+adapter, second only,
    polish+second) without further code changes.
    """
    variants_spec: list[tuple[str, PolishNet | None, PoseAdapter]] = [
        (f"{adapter.name} only", None, adapter)
    ]
    if polish is not None:
        variants_spec.append((f"polish+{adapter.name}", polish, adapter))
    if second_adapter is not None:
        variants_spec.append((f"{second_adapter.name} only", None, second_adapter))
        if polish is not None:
            variants_spec.append((f"polish+{second_adapter.name}", polish, second_adapter))

    results = []
    excluded_total = 0
    for name, net, adp in variants_spec:
        fold_rows = []
        all_preds: list[KeypointSet] = []
        all_gt: list[KeypointSet] = []
        for fold in split.folds:
            samples = [s for s in dataset if s.subject_id == fold.test_subject]
            preds = run_pipeline(net, adp, samples)
            gts = [s.keypoints for s in samples]
            curves, exclusions = pck_with_exclusions(preds, gts, thresholds)
            excluded_total += exclusions.count
            fold_rows.append([auc(c) for c in curves])
            all_preds.extend(preds)
            all_gt.extend(gts)
        pooled, _ = pck_with_exclusions(all_preds, all_gt, thresholds)
        results.append(
            VariantResult(
                name=name,
                fold_aucs=np.asarray(fold_rows, dtype=np.float64),
                pooled_curves=tuple(pooled),
            )
        )
    return EvalReport(
        variants=tuple(results),
        thresholds=np.asarray(thresholds, dtype=np.float64),
        fold_test_subjects=tuple(f.test_subject for f in split.folds),
        excluded_frames=excluded_total,
        metadata={
            "adapter": adapter.name,
            "second_adapter": second_adapter.name if second_adapter else None,
            "polish": polish.checksum() if polish is not None else None,
            "grid": THRESHOLD_GRID_NOTE,
        },
    )


@dataclass(frozen=True)
class BenchmarkRow:
    colormap: str
    average_detection_rate: float


def colormap_benchmark(
    adapter: PoseAdapter,
    dataset: list[tuple[PressureFrame, KeypointSet]],
    maps: list[Colormap],
    working_size: tuple[int, int],
    thresholds: np.ndarray = DEFAULT_THRESHOLDS,
) -> list[BenchmarkRow]:
    """Rank colormaps by adapter-only detection rate (no polishing).

    The polish stage is deliberately excluded: the ranking measures how
    compatible each raw colorization is with the frozen pose module.
    """
    gts = [ks for _, ks in dataset]
    rows = []
    for cmap in maps:
        preds = []
        for frame, ks in dataset:
            image = colorize(frame, cmap, working_size)
            heatmaps, _ = adapter.infer(image)
            decoded = decode_keypoints(heatmaps, frame_ref=ks.frame_ref)
            preds.append(scale_keypoints(decoded, 1.0 / adapter.output_scale))
        rows.append(BenchmarkRow(cmap.name, mean_auc(pck(preds, gts, thresholds))))
    return sorted(rows, key=lambda r: (-r.average_detection_rate, r.colormap))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def emit_report(report: EvalReport, format: str, out_dir: str | Path) -> list[Path]:
    """Write the report as ``csv``, ``markdown-table``, or ``plot-data``.

    Byte output is deterministic for a given report.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        return [_emit_csv(report, out_dir / "report.csv")]
    if format in ("markdown", "markdown-table"):
        return [_emit_markdown(report, out_dir / "report.md")]
    if format == "plot-data":
        return [_emit_plot_data(report, out_dir / "pck_curves.csv")]
    raise ValueError(f"unknown report format {format!r}")


def _emit_csv(report: EvalReport, path: Path) -> Path:
    lines = [f"# {THRESHOLD_GRID_NOTE}; folds={list(report.fold_test_subjects)};"
             f" excluded_frames={report.excluded_frames}"]
    lines.append("variant,part,auc_mean,auc_std")
    for variant in report.variants:
        means, stds = variant.auc_mean(), variant.auc_std()
        for i, part in enumerate(PART_NAMES):
            lines.append(f"{variant.name},{part},{_fmt(means[i])},{_fmt(stds[i])}")
        lines.append(
            f"{variant.name},__overall__,{_fmt(variant.overall_mean())},{_fmt(variant.overall_std())}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def _emit_markdown(report: EvalReport, path: Path) -> Path:
    part_index = {p: i for i, p in enumerate(PART_NAMES)}
    lines = [f"> {THRESHOLD_GRID_NOTE}", ""]
    for group in TABLE_GROUPS:
        header = [""] + [PART_LABELS[p] for p in group]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for variant in report.variants:
            means, stds = variant.auc_mean(), variant.auc_std()
            cells = [
                f"{_fmt(means[part_index[p]])} ± {_fmt(stds[part_index[p]])}" for p in group
            ]
            lines.append("| " + " | ".join([f"**{variant.name}**"] + cells) + " |")
        lines.append("")
    lines.append("| Model | Average Detection Rate |")
    lines.append("|---|---|")
    for variant in report.variants:
        lines.append(
            f"| {variant.name} | {_fmt(variant.overall_mean())} ± {_fmt(variant.overall_std())} |"
        )
    lines.append("")
    path.write_text("\n".join(lines))
    return path


def _emit_plot_data(report: EvalReport, path: Path) -> Path:
    lines = [f"# {THRESHOLD_GRID_NOTE}", "variant,part,threshold,detection_rate"]
    for variant in report.variants:
        for curve in variant.pooled_curves:
            for t, r in zip(curve.thresholds, curve.detection_rate):
                lines.append(f"{variant.name},{curve.part},{_fmt(t)},{_fmt(r)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_benchmark_csv(rows: list[BenchmarkRow], path) -> Path:
    path = Path(path)
    lines = ["colormap,average_detection_rate"]
    for row in rows:
        lines.append(f"{row.colormap},{_fmt(row.average_detection_rate)}")
    path.write_text("\n".join(lines) + "\n")
    return path
