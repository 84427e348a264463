"""Frozen pose-identification modules behind a swappable adapter.

An adapter maps a color image to 14 part heatmaps and 28 PAF channels
and is never trained; the training loop asserts its checksum stays
fixed. Two adapters ship:

* ``MockPoseAdapter`` — a small fixed random convolutional stack,
  deterministic per seed and differentiable w.r.t. its input. The whole
  test and acceptance suite runs on mocks; a second seed stands in for
  a second backbone when exercising adapter swaps.
* ``StageRunnerAdapter`` — runs user-supplied serialized weights in the
  multi-stage two-branch layout of the classic 2016 pose networks
  (feature extractor, then per-stage heatmap/PAF branches that see the
  features plus the previous stage's maps). The weights file is a
  named-array container whose manifest declares the layer graph,
  channel counts and output scale; see ``WEIGHTS_SCHEMA`` below.

Adapters may emit maps at a reduced resolution (``output_scale``);
losses and targets are computed at that scale.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .container import load_container, save_container
from .errors import NumericalError, ShapeError, WeightSchemaError
from .polishnet import image_to_tensor

NUM_HEATMAPS = 14
NUM_PAFS = 28

WEIGHTS_KIND = "pose_adapter"

WEIGHTS_SCHEMA = """\
Manifest (the container's config dict):
  name                   str
  output_scale           float, map resolution / input resolution
  heatmap_channels       int, channels the final heatmap branch emits
  paf_channels           int, must equal 28 after loading
  drop_heatmap_channels  optional list of channel indices dropped on
                         load (eyes/ears in stock checkpoints); the
                         remainder must equal 14
  feature                list of layer defs applied to the input image
  stages                 list of {"heatmap": [layer...], "paf": [layer...]};
                         stage 0 consumes the features, later stages
                         consume concat(features, prev heatmaps, prev PAFs)

Layer def: {"name", "in", "out", "kernel", "stride", "padding",
"activation": "relu"|"lrelu"|"none"}. Stage layers must keep stride 1.
Arrays are stored as "<name>.weight" (out, in, k, k) and "<name>.bias".
"""


def _activation(kind: str):
    if kind == "relu":
        return torch.relu
    if kind == "lrelu":
        return lambda x: F.leaky_relu(x, 0.1)
    if kind == "none":
        return lambda x: x
    raise WeightSchemaError(f"unknown activation {kind!r}")


class PoseAdapter:
    """Frozen image -> (heatmaps, PAFs) function."""

    name: str
    output_scale: float
    differentiable: bool

    def infer_tensor(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(N, 3, H, W) -> ((N, 14, H', W'), (N, 28, H', W')); grads flow to x."""
        raise NotImplementedError

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def infer(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(H, W, 3) image -> ((H', W', 14), (H', W', 28)) arrays."""
        x = image_to_tensor(image, self._dtype())
        with torch.no_grad():
            hm, paf = self.infer_tensor(x)
        return (
            hm[0].cpu().numpy().transpose(1, 2, 0),
            paf[0].cpu().numpy().transpose(1, 2, 0),
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        arrays = self.parameter_arrays()
        for name in sorted(arrays):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arrays[name]).tobytes())
        return digest.hexdigest()

    def _dtype(self) -> torch.dtype:
        raise NotImplementedError

    def _check_finite(self, x: torch.Tensor, layer: str) -> None:
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite activations after layer {layer!r}")


class MockPoseAdapter(PoseAdapter):
    """Three fixed random conv layers; maps at 1/4 input resolution."""

    output_scale = 0.25
    differentiable = True

    _WIDTHS = (3, 16, 32, NUM_HEATMAPS + NUM_PAFS)
    _STRIDES = (2, 2, 1)

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32, gain: float = 1.0):
        self.name = f"mock:{seed}"
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._weights = []
        self._biases = []
        for cin, cout in zip(self._WIDTHS, self._WIDTHS[1:]):
            bound = gain / np.sqrt(cin * 9)
            w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
            b = rng.uniform(-0.05, 0.05, size=(cout,))
            self._weights.append(torch.from_numpy(w).to(dtype))
            self._biases.append(torch.from_numpy(b).to(dtype))

    def _dtype(self) -> torch.dtype:
        return self._weights[0].dtype

    def infer_tensor(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(
                f"mock adapter needs H, W divisible by 4 for an exact"
                f" {self.output_scale} output scale, got {tuple(x.shape[2:])}"
            )
        x = x.to(self._dtype())
        for i, (w, b, stride) in enumerate(zip(self._weights, self._biases, self._STRIDES)):
            x = F.conv2d(x, w, b, stride=stride, padding=1)
            if i < len(self._weights) - 1:
                x = F.leaky_relu(x, 0.1)
            self._check_finite(x, f"conv{i}")
        return x[:, :NUM_HEATMAPS], x[:, NUM_HEATMAPS:]

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            out[f"conv{i}.weight"] = w.numpy()
            out[f"conv{i}.bias"] = b.numpy()
        return out


class StageRunnerAdapter(PoseAdapter):
    """Runs serialized multi-stage two-branch pose weights, frozen."""

    differentiable = True

    def __init__(self, manifest: dict, arrays: dict[str, np.ndarray], source: str = "<memory>"):
        self._source = source
        try:
            self.name = manifest["name"]
            self.output_scale = float(manifest["output_scale"])
            heatmap_channels = int(manifest["heatmap_channels"])
            paf_channels = int(manifest["paf_channels"])
            self._feature_defs = list(manifest["feature"])
            self._stage_defs = list(manifest["stages"])
        except KeyError as exc:
            raise WeightSchemaError(f"{source}: manifest missing key {exc}") from None
        drop = sorted(manifest.get("drop_heatmap_channels", []))
        self._keep_heatmaps = [c for c in range(heatmap_channels) if c not in drop]
        if len(self._keep_heatmaps) != NUM_HEATMAPS:
            raise WeightSchemaError(
                f"{source}: {heatmap_channels} heatmap channels minus"
                f" {len(drop)} dropped leaves {len(self._keep_heatmaps)},"
                f" expected {NUM_HEATMAPS}"
            )
        if paf_channels != NUM_PAFS:
            raise WeightSchemaError(
                f"{source}: {paf_channels} PAF channels, expected {NUM_PAFS}"
            )
        if not self._stage_defs:
            raise WeightSchemaError(f"{source}: at least one stage required")
        scale = 1.0
        for layer in self._feature_defs:
            scale /= layer.get("stride", 1)
        if abs(scale - self.output_scale) > 1e-9:
            raise WeightSchemaError(
                f"{source}: feature strides give scale {scale}, manifest"
                f" declares {self.output_scale}"
            )
        for stage in self._stage_defs:
            for branch in ("heatmap", "paf"):
                for layer in stage[branch]:
                    if layer.get("stride", 1) != 1:
                        raise WeightSchemaError(
                            f"{source}: stage layer {layer['name']} must keep stride 1"
                        )
        self._params: dict[str, torch.Tensor] = {}
        for layer in self._iter_layers():
            for suffix in ("weight", "bias"):
                key = f"{layer['name']}.{suffix}"
                if key not in arrays:
                    raise WeightSchemaError(f"{source}: missing array {key}")
                self._params[key] = torch.from_numpy(np.ascontiguousarray(arrays[key]))
            w = self._params[f"{layer['name']}.weight"]
            expected = (layer["out"], layer["in"], layer["kernel"], layer["kernel"])
            if tuple(w.shape) != expected:
                raise WeightSchemaError(
                    f"{source}: {layer['name']}.weight is {tuple(w.shape)},"
                    f" manifest declares {expected}"
                )

    def _iter_layers(self):
        yield from self._feature_defs
        for stage in self._stage_defs:
            yield from stage["heatmap"]
            yield from stage["paf"]

    def _dtype(self) -> torch.dtype:
        return next(iter(self._params.values())).dtype

    def _run_chain(self, x: torch.Tensor, layers: list[dict]) -> torch.Tensor:
        for layer in layers:
            w = self._params[f"{layer['name']}.weight"]
            b = self._params[f"{layer['name']}.bias"]
            x = F.conv2d(x, w, b, stride=layer.get("stride", 1), padding=layer.get("padding", 0))
            x = _activation(layer.get("activation", "none"))(x)
            self._check_finite(x, layer["name"])
        return x

    def infer_tensor(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = x.to(self._dtype())
        features = self._run_chain(x, self._feature_defs)
        hm = paf = None
        for stage in self._stage_defs:
            inp = features if hm is None else torch.cat([features, hm, paf], dim=1)
            hm = self._run_chain(inp, stage["heatmap"])
            paf = self._run_chain(inp, stage["paf"])
        return hm[:, self._keep_heatmaps], paf

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.numpy() for k, v in self._params.items()}


def save_adapter_weights(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    save_container(path, WEIGHTS_KIND, manifest, arrays)


def load_weights_adapter(path) -> StageRunnerAdapter:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weights file {path} does not exist")
    kind, manifest, arrays = load_container(path)
    if kind != WEIGHTS_KIND:
        raise WeightSchemaError(f"{path}: container kind {kind!r}, expected {WEIGHTS_KIND!r}")
    return StageRunnerAdapter(manifest, arrays, source=str(path))


def load_adapter(spec: str) -> PoseAdapter:
    """Build an adapter from a CLI-style spec.

    ``mock`` or ``mock:<seed>`` builds the random stack; ``weights:<path>``
    (or a bare path) loads a serialized checkpoint.
    """
    if spec == "mock":
        return MockPoseAdapter(0)
    if spec.startswith("mock:"):
        return MockPoseAdapter(int(spec.split(":", 1)[1]))
    if spec.startswith("weights:"):
        return load_weights_adapter(spec.split(":", 1)[1])
    return load_weights_adapter(spec)
