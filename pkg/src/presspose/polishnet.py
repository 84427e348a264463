"""PolishNet: the learnable polishing transform in front of the pose module.

A fully convolutional encoder/decoder. The encoder applies blocks of
Conv-Conv-BatchNorm-LeakyReLU (3x3 kernels, stride 1, no padding); the
decoder mirrors it with transposed convolutions whose full output
arithmetic (out = in + kernel - 1) exactly undoes the encoder's valid
shrink, so the polished image keeps the input's spatial size. A final
sigmoid keeps outputs in [0, 1] so the result is a valid color image.

This is the only trainable state in the system; the pose module behind
it stays frozen.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .container import load_container, save_container
from .errors import ConfigError, ShapeError

CHECKPOINT_KIND = "polishnet"


@dataclass(frozen=True)
class PolishNetConfig:
    encoder_blocks: int = 3
    decoder_blocks: int = 3
    convs_per_block: int = 2
    kernel: int = 3
    leaky_slope: float = 0.1
    channel_widths: tuple[int, ...] = (64, 128, 256)
    working_size: tuple[int, int] = (256, 128)  # (H, W), portrait
    in_channels: int = 3
    out_channels: int = 3
    bn_eps: float = 1e-5
    bn_decay: float = 0.99  # running-stats decay per update

    def __post_init__(self):
        object.__setattr__(self, "channel_widths", tuple(self.channel_widths))
        object.__setattr__(self, "working_size", tuple(self.working_size))
        if self.encoder_blocks != self.decoder_blocks:
            raise ConfigError("encoder and decoder block counts must match")
        if self.encoder_blocks < 1 or self.convs_per_block < 1:
            raise ConfigError("need at least one block and one conv per block")
        if len(self.channel_widths) != self.encoder_blocks:
            raise ConfigError(
                f"channel_widths must list {self.encoder_blocks} widths,"
                f" got {len(self.channel_widths)}"
            )
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")
        if not (0.0 < self.bn_decay < 1.0):
            raise ConfigError("bn_decay must be in (0, 1)")
        h, w = self.working_size
        shrink = self.total_shrink
        if min(h, w) < 2 * shrink + 1:
            raise ConfigError(
                f"working size {h}x{w} too small: the {self.num_convs} valid"
                f" {self.kernel}x{self.kernel} convolutions need more than"
                f" {2 * shrink} pixels per axis"
            )

    @property
    def num_convs(self) -> int:
        return self.encoder_blocks * self.convs_per_block

    @property
    def total_shrink(self) -> int:
        """Pixels the encoder removes from each spatial axis."""
        return self.num_convs * (self.kernel - 1)

    def to_json(self) -> dict:
        d = asdict(self)
        d["channel_widths"] = list(self.channel_widths)
        d["working_size"] = list(self.working_size)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PolishNetConfig":
        return cls(**d)


class _Block(nn.Module):
    """Conv-...-Conv-BatchNorm-LeakyReLU (or the transposed mirror)."""

    def __init__(self, channels: list[int], cfg: PolishNetConfig, transposed: bool):
        super().__init__()
        conv_cls = nn.ConvTranspose2d if transposed else nn.Conv2d
        self.convs = nn.ModuleList(
            conv_cls(cin, cout, cfg.kernel, stride=1, padding=0)
            for cin, cout in zip(channels, channels[1:])
        )
        self.norm = nn.BatchNorm2d(channels[-1], eps=cfg.bn_eps, momentum=1.0 - cfg.bn_decay)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def forward(self, x):
        for conv in self.convs:
            x = conv(x)
        return self.act(self.norm(x))


def _encoder_channels(cfg: PolishNetConfig) -> list[list[int]]:
    blocks = []
    prev = cfg.in_channels
    for width in cfg.channel_widths:
        blocks.append([prev] + [width] * cfg.convs_per_block)
        prev = width
    return blocks


def _decoder_channels(cfg: PolishNetConfig) -> list[list[int]]:
    widths = list(cfg.channel_widths)
    outs = list(reversed(widths[:-1])) + [cfg.out_channels]
    blocks = []
    prev = widths[-1]
    for out in outs:
        blocks.append([prev] * cfg.convs_per_block + [out])
        prev = out
    return blocks


class PolishNet(nn.Module):
    def __init__(self, config: PolishNetConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.encoder = nn.ModuleList(
            _Block(ch, config, transposed=False) for ch in _encoder_channels(config)
        )
        self.decoder = nn.ModuleList(
            _Block(ch, config, transposed=True) for ch in _decoder_channels(config)
        )
        self.to(dtype)
        self._init_weights(seed)

    def _init_weights(self, seed: int):
        """Fan-in-scaled uniform conv weights, zero biases, identity norms.

        Draws come from a dedicated numpy generator in fixed layer
        order, so the same seed always yields the same parameters.
        """
        rng = np.random.default_rng(seed)
        for block in list(self.encoder) + list(self.decoder):
            for conv in block.convs:
                # Conv2d weight is (out, in, k, k); ConvTranspose2d is (in, out, k, k).
                in_ch = conv.weight.shape[0] if isinstance(conv, nn.ConvTranspose2d) else conv.weight.shape[1]
                fan_in = in_ch * self.config.kernel * self.config.kernel
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=tuple(conv.weight.shape))
                with torch.no_grad():
                    conv.weight.copy_(torch.from_numpy(w))
                    conv.bias.zero_()
            with torch.no_grad():
                block.norm.weight.fill_(1.0)
                block.norm.bias.zero_()
                block.norm.running_mean.zero_()
                block.norm.running_var.fill_(1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) -> (N, 3, H, W) in [0, 1]."""
        h, w = self.config.working_size
        if x.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[2:] != (h, w):
            raise ShapeError(
                f"expected (N, {self.config.in_channels}, {h}, {w}) input, got {tuple(x.shape)}"
            )
        for block in self.encoder:
            x = block(x)
        for block in self.decoder:
            x = block(x)
        return torch.sigmoid(x)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        arrays = self.named_arrays()
        for name in sorted(arrays):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arrays[name]).tobytes())
        return digest.hexdigest()

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Checkpoint-facing parameter naming: enc{b}.conv{i}.*, dec{b}.deconv{i}.*."""
        out = {}
        for kind, blocks in (("enc", self.encoder), ("dec", self.decoder)):
            layer = "conv" if kind == "enc" else "deconv"
            for b, block in enumerate(blocks):
                for i, conv in enumerate(block.convs):
                    out[f"{kind}{b}.{layer}{i}.weight"] = conv.weight.detach().cpu().numpy()
                    out[f"{kind}{b}.{layer}{i}.bias"] = conv.bias.detach().cpu().numpy()
                norm = block.norm
                out[f"{kind}{b}.norm.weight"] = norm.weight.detach().cpu().numpy()
                out[f"{kind}{b}.norm.bias"] = norm.bias.detach().cpu().numpy()
                out[f"{kind}{b}.norm.running_mean"] = norm.running_mean.detach().cpu().numpy()
                out[f"{kind}{b}.norm.running_var"] = norm.running_var.detach().cpu().numpy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.named_arrays()
        missing = sorted(set(expected) - set(arrays))
        if missing:
            raise ShapeError(f"checkpoint missing arrays: {missing}")
        with torch.no_grad():
            for kind, blocks in (("enc", self.encoder), ("dec", self.decoder)):
                layer = "conv" if kind == "enc" else "deconv"
                for b, block in enumerate(blocks):
                    for i, conv in enumerate(block.convs):
                        _copy(conv.weight, arrays[f"{kind}{b}.{layer}{i}.weight"])
                        _copy(conv.bias, arrays[f"{kind}{b}.{layer}{i}.bias"])
                    _copy(block.norm.weight, arrays[f"{kind}{b}.norm.weight"])
                    _copy(block.norm.bias, arrays[f"{kind}{b}.norm.bias"])
                    _copy(block.norm.running_mean, arrays[f"{kind}{b}.norm.running_mean"])
                    _copy(block.norm.running_var, arrays[f"{kind}{b}.norm.running_var"])


def _copy(param: torch.Tensor, value: np.ndarray) -> None:
    if tuple(param.shape) != tuple(value.shape):
        raise ShapeError(f"array shape {value.shape} does not fit parameter {tuple(param.shape)}")
    param.copy_(torch.from_numpy(np.ascontiguousarray(value)).to(param.dtype))


def init_polishnet(config: PolishNetConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> PolishNet:
    """Fresh deterministic network (raises ConfigError on bad configs)."""
    return PolishNet(config, seed=seed, dtype=dtype)


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) in [0, 1] -> (1, 3, H, W) tensor."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None].to(dtype)


def tensor_to_image(x: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) tensor -> (H, W, 3) float array."""
    return x.detach().cpu().numpy()[0].transpose(1, 2, 0)


def polish_image(net: PolishNet, image: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Apply the network to one (H, W, 3) image.

    ``train`` mode normalizes with batch statistics, ``eval`` with the
    running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = net.training
    net.train(mode == "train")
    try:
        dtype = next(net.parameters()).dtype
        with torch.no_grad():
            out = net(image_to_tensor(image, dtype))
    finally:
        net.train(was_training)
    return tensor_to_image(out)


def save_checkpoint(net: PolishNet, path) -> None:
    save_container(path, CHECKPOINT_KIND, {"config": net.config.to_json()}, net.named_arrays())


def load_checkpoint(path) -> PolishNet:
    kind, config, arrays = load_container(path)
    if kind != CHECKPOINT_KIND:
        raise ShapeError(f"{path} holds a {kind!r} container, not a PolishNet checkpoint")
    cfg = PolishNetConfig.from_json(config["config"])
    net = PolishNet(cfg, seed=0)
    net.load_arrays(arrays)
    net.eval()
    return net
