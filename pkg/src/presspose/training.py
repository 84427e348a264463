"""Compound objective and the PolishNet optimization loop.

The objective is the weighted sum of three unnormalized sums of squared
differences: a heatmap term and a PAF term against the frozen pose
module's outputs, plus a pixel term tying the polished image to its
input so the network cannot drift to arbitrary images. Channel masks
remove invisible parts and limbs from both loss and gradient.

Only PolishNet parameters are updated; the adapter's checksum is
asserted unchanged around every run. The learning rate follows
lr(t) = base * decay^floor(t / decay_every) exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .adapters import NUM_HEATMAPS, NUM_PAFS, PoseAdapter
from .datasets import EvalSample, TrainingSample
from .errors import ConfigError, NumericalError, ShapeError
from .polishnet import PolishNet, PolishNetConfig, init_polishnet


@dataclass(frozen=True)
class LossWeights:
    lambda_heatmap: float = 1.0
    lambda_paf: float = 1.0
    lambda_pixel: float = 1.0 / 30000.0

    def __post_init__(self):
        if min(self.lambda_heatmap, self.lambda_paf, self.lambda_pixel) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    decay_rate: float = 0.95
    decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_iterations: int = 200
    seed: int = 0
    eval_every: int | None = None  # holdout AUC cadence; None disables early stopping
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.decay_rate <= 1):
            raise ConfigError("decay_rate must be in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1 or self.max_iterations < 1:
            raise ConfigError("decay_every, batch_size, max_iterations must be >= 1")


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    return cfg.learning_rate * cfg.decay_rate ** (iteration // cfg.decay_every)


def _masked_sq_sum(pred, gt, mask, expected_channels, what, channel_axis):
    is_tensor = isinstance(pred, torch.Tensor)
    if tuple(pred.shape) != tuple(gt.shape):
        raise ShapeError(f"{what}: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    channels = pred.shape[channel_axis]
    if channels != expected_channels:
        raise ShapeError(f"{what}: expected {expected_channels} channels, got {channels}")
    diff = pred - gt
    sq = diff * diff
    if mask is not None:
        if len(mask) != channels:
            raise ShapeError(f"{what}: mask covers {len(mask)} of {channels} channels")
        shape = [1] * sq.ndim
        shape[channel_axis] = channels
        if is_tensor:
            weights = torch.as_tensor(mask, dtype=pred.dtype).reshape(shape)
        else:
            weights = np.asarray(mask, dtype=np.float64).reshape(shape)
        sq = sq * weights
    total = sq.sum()
    return total if is_tensor else float(total)


def heatmap_loss(pred, gt, mask=None, channel_axis=-1):
    """Sum of squared per-pixel differences over unmasked heatmap channels."""
    return _masked_sq_sum(pred, gt, mask, NUM_HEATMAPS, "heatmap_loss", channel_axis)


def paf_loss(pred, gt, mask=None, channel_axis=-1):
    """Sum of squared per-pixel differences over unmasked PAF channels."""
    return _masked_sq_sum(pred, gt, mask, NUM_PAFS, "paf_loss", channel_axis)


def pixel_loss(input_image, polished):
    """Squared distance between the unpolished input and the polished output."""
    if tuple(input_image.shape) != tuple(polished.shape):
        raise ShapeError(
            f"pixel_loss: input {tuple(input_image.shape)} vs polished {tuple(polished.shape)}"
        )
    diff = input_image - polished
    total = (diff * diff).sum()
    return total if isinstance(total, torch.Tensor) else float(total)


def _finite(value) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(torch.isfinite(value).all())
    return math.isfinite(value)


def total_loss(e_heatmap, e_paf, e_pixel, weights: LossWeights = LossWeights()):
    for name, part in (("heatmap", e_heatmap), ("PAF", e_paf), ("pixel", e_pixel)):
        if not _finite(part):
            raise NumericalError(f"{name} loss term is not finite")
    return (
        weights.lambda_heatmap * e_heatmap
        + weights.lambda_paf * e_paf
        + weights.lambda_pixel * e_pixel
    )


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    lr: float
    e_heatmap: float
    e_paf: float
    e_pixel: float
    e_total: float


def write_loss_trace(rows: list[TraceRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "E_heatmap", "E_PAF", "E_pixel", "E_total"])
        for r in rows:
            writer.writerow([r.iteration, f"{r.lr:.12g}", f"{r.e_heatmap:.12g}",
                             f"{r.e_paf:.12g}", f"{r.e_pixel:.12g}", f"{r.e_total:.12g}"])
    return path


@dataclass
class TrainResult:
    net: PolishNet
    trace: list[TraceRow]
    stopped_early: bool = False
    best_holdout_auc: float | None = None


def _stack_samples(samples: list[TrainingSample], dtype: torch.dtype):
    images = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1))) for s in samples]
    ).to(dtype)
    hms = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.heatmaps.transpose(2, 0, 1))) for s in samples]
    ).to(dtype)
    pafs = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.pafs.transpose(2, 0, 1))) for s in samples]
    ).to(dtype)
    hmask = torch.stack(
        [torch.as_tensor(s.heatmap_mask, dtype=dtype) for s in samples]
    )[:, :, None, None]
    pmask = torch.stack(
        [torch.as_tensor(s.paf_mask, dtype=dtype) for s in samples]
    )[:, :, None, None]
    return images, hms, pafs, hmask, pmask


def batch_losses(
    net: PolishNet,
    adapter: PoseAdapter,
    images: torch.Tensor,
    hms: torch.Tensor,
    pafs: torch.Tensor,
    hmask: torch.Tensor,
    pmask: torch.Tensor,
):
    """(E_heatmap, E_PAF, E_pixel) for a stacked batch, summed over samples."""
    polished = net(images)
    pred_hm, pred_paf = adapter.infer_tensor(polished)
    e_h = ((pred_hm - hms) ** 2 * hmask).sum()
    e_p = ((pred_paf - pafs) ** 2 * pmask).sum()
    e_pix = ((polished - images) ** 2).sum()
    return e_h, e_p, e_pix


def train(
    net: PolishNet,
    adapter: PoseAdapter,
    samples: list[TrainingSample],
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    holdout: list[EvalSample] | None = None,
) -> TrainResult:
    """Optimize PolishNet against a frozen adapter.

    Deterministic given the seed (single-threaded execution assumed;
    parallel data producers would reorder batches). On a non-finite
    loss the net is restored to the last parameters that produced a
    finite loss and NumericalError is raised.
    """
    if not samples:
        raise ConfigError("training dataset is empty")
    if not adapter.differentiable:
        raise ConfigError(f"adapter {adapter.name} does not pass gradients to its input")
    dtype = next(net.parameters()).dtype
    h, w = net.config.working_size
    if samples[0].image.shape[:2] != (h, w):
        raise ShapeError(
            f"samples are {samples[0].image.shape[:2]}, net expects {(h, w)}"
        )
    images, hms, pafs, hmask, pmask = _stack_samples(samples, dtype)

    checksum_before = adapter.checksum()
    optimizer = torch.optim.Adam(
        net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    trace: list[TraceRow] = []
    last_good = None
    best_auc = None
    best_state = None
    misses = 0
    stopped_early = False

    net.train(True)
    for t in range(cfg.max_iterations):
        if not order:
            order = list(rng.permutation(len(samples)))
        batch = order[: cfg.batch_size]
        order = order[cfg.batch_size :]
        lr = learning_rate_at(cfg, t)
        for group in optimizer.param_groups:
            group["lr"] = lr

        snapshot = {k: v.detach().clone() for k, v in net.state_dict().items()}
        idx = torch.as_tensor(batch)
        e_h, e_p, e_pix = batch_losses(
            net, adapter, images[idx], hms[idx], pafs[idx], hmask[idx], pmask[idx]
        )
        e_tot = (
            weights.lambda_heatmap * e_h
            + weights.lambda_paf * e_p
            + weights.lambda_pixel * e_pix
        )
        if not torch.isfinite(e_tot):
            net.load_state_dict(last_good if last_good is not None else snapshot)
            net.eval()
            raise NumericalError(
                f"non-finite loss at iteration {t}; parameters restored to last good state"
            )
        last_good = snapshot
        trace.append(
            TraceRow(t, lr, e_h.item(), e_p.item(), e_pix.item(), e_tot.item())
        )
        optimizer.zero_grad()
        e_tot.backward()
        optimizer.step()

        if holdout and cfg.eval_every and (t + 1) % cfg.eval_every == 0:
            from .evaluation import pipeline_auc

            net.eval()
            auc = pipeline_auc(net, adapter, holdout)
            net.train(True)
            if best_auc is None or auc > best_auc:
                best_auc = auc
                best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
                misses = 0
            else:
                misses += 1
                if misses >= cfg.patience:
                    stopped_early = True
                    break
    net.eval()
    if stopped_early and best_state is not None:
        net.load_state_dict(best_state)

    if adapter.checksum() != checksum_before:
        raise RuntimeError(f"frozen adapter {adapter.name} was mutated during training")
    return TrainResult(net=net, trace=trace, stopped_early=stopped_early, best_holdout_auc=best_auc)


@dataclass(frozen=True)
class Fold:
    train_subjects: tuple[int, ...]
    test_subject: int

    def __post_init__(self):
        object.__setattr__(self, "train_subjects", tuple(self.train_subjects))
        if self.test_subject in self.train_subjects:
            raise ConfigError("test subject appears in its own train set")


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[Fold, ...]
    holdout_validation_subjects: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(self.folds))
        object.__setattr__(
            self, "holdout_validation_subjects", tuple(self.holdout_validation_subjects)
        )
        held = set(self.holdout_validation_subjects)
        for fold in self.folds:
            if held & ({fold.test_subject} | set(fold.train_subjects)):
                raise ConfigError("holdout subjects must appear in no fold")


def make_split_plan(subjects: list[int], holdout: int = 2, seed: int = 0) -> SplitPlan:
    """Leave-one-subject-out folds after removing validation holdouts."""
    unique = sorted(set(subjects))
    if len(unique) < holdout + 2:
        raise ConfigError(
            f"{len(unique)} subjects cannot support {holdout} holdouts plus cross-validation"
        )
    rng = np.random.default_rng(seed)
    perm = [unique[i] for i in rng.permutation(len(unique))]
    held = tuple(sorted(perm[:holdout]))
    remaining = sorted(perm[holdout:])
    folds = tuple(
        Fold(train_subjects=tuple(s for s in remaining if s != test), test_subject=test)
        for test in remaining
    )
    return SplitPlan(folds=folds, holdout_validation_subjects=held)


@dataclass(frozen=True)
class SweepConfig:
    polish_config: PolishNetConfig
    polish_seed: int
    adapter: PoseAdapter
    train_samples: list[TrainingSample]
    eval_train: list[EvalSample]
    eval_test: list[EvalSample]
    train_config: TrainConfig
    weights: LossWeights = LossWeights()


@dataclass(frozen=True)
class SweepRow:
    lambda_pixel: float
    train_auc: float
    test_auc: float
    final_e_pixel: float
    final_e_total: float


def lambda_sweep(values: list[float], cfg: SweepConfig) -> list[SweepRow]:
    """One full train + eval per pixel-loss weight, in the given order."""
    from .evaluation import pipeline_auc

    if any(v <= 0 for v in values):
        raise ConfigError("lambda values must be positive")
    rows = []
    for value in values:
        weights = replace(cfg.weights, lambda_pixel=value)
        net = init_polishnet(cfg.polish_config, cfg.polish_seed)
        result = train(net, cfg.adapter, cfg.train_samples, cfg.train_config, weights)
        rows.append(
            SweepRow(
                lambda_pixel=value,
                train_auc=pipeline_auc(net, cfg.adapter, cfg.eval_train),
                test_auc=pipeline_auc(net, cfg.adapter, cfg.eval_test),
                final_e_pixel=result.trace[-1].e_pixel,
                final_e_total=result.trace[-1].e_total,
            )
        )
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda_pixel", "train_auc", "test_auc", "final_E_pixel", "final_E_total"])
        for r in rows:
            writer.writerow(
                [f"{r.lambda_pixel:.12g}", f"{r.train_auc:.12g}", f"{r.test_auc:.12g}",
                 f"{r.final_e_pixel:.12g}", f"{r.final_e_total:.12g}"]
            )
    return path
