"""Colormap lookup tables and pressure-frame colorization.

Pressure values are normalized over the fixed calibrated range
[0, 100] mmHg, mapped through a 256-entry RGB LUT with linear
interpolation between adjacent entries, and finally resized to the
working resolution. Viridis is the default map.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from matplotlib import colormaps as _mpl_colormaps

from .errors import UnknownColormapError
from .pressure import PRESSURE_MAX, PressureFrame

LUT_SIZE = 256

# Kept deliberately small; the registry is open for user additions via
# register(). The first four are the maps highlighted in the colormap study.
_DEFAULT_NAMES = (
    "viridis",
    "jet",
    "hsv",
    "copper",
    "plasma",
    "inferno",
    "cividis",
    "hot",
    "cool",
    "bone",
    "autumn",
    "gray",
)

DEFAULT_COLORMAP = "viridis"


@dataclass(frozen=True)
class Colormap:
    """A named 256-entry RGB lookup table with components in [0, 1]."""

    name: str
    lut: np.ndarray  # (256, 3) float64

    def __post_init__(self):
        lut = np.asarray(self.lut, dtype=np.float64)
        if lut.shape != (LUT_SIZE, 3):
            raise ValueError(f"LUT must be ({LUT_SIZE}, 3), got {lut.shape}")
        if not np.isfinite(lut).all() or lut.min() < 0.0 or lut.max() > 1.0:
            raise ValueError("LUT components must be finite and in [0, 1]")
        object.__setattr__(self, "lut", lut)


def _from_matplotlib(name: str) -> Colormap:
    cmap = _mpl_colormaps[name]
    lut = cmap(np.linspace(0.0, 1.0, LUT_SIZE))[:, :3]
    return Colormap(name=name, lut=np.clip(lut, 0.0, 1.0))


_REGISTRY: dict[str, Colormap] = {name: _from_matplotlib(name) for name in _DEFAULT_NAMES}


def register(cmap: Colormap) -> None:
    """Add (or replace) a colormap in the registry."""
    _REGISTRY[cmap.name] = cmap


def get_colormap(name: str) -> Colormap:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownColormapError(
            f"unknown colormap {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None


def list_colormaps() -> list[Colormap]:
    """All registered colormaps, default (viridis) first."""
    maps = sorted(_REGISTRY.values(), key=lambda m: (m.name != DEFAULT_COLORMAP, m.name))
    return maps


def apply_lut(normalized: np.ndarray, cmap: Colormap) -> np.ndarray:
    """Map values in [0, 1] through the LUT with linear interpolation.

    Returns an array of shape ``normalized.shape + (3,)``.
    """
    x = np.clip(np.asarray(normalized, dtype=np.float64), 0.0, 1.0)
    pos = x * (LUT_SIZE - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, LUT_SIZE - 2)
    frac = (pos - lo)[..., None]
    return cmap.lut[lo] + frac * (cmap.lut[lo + 1] - cmap.lut[lo])


def colorize(
    frame: PressureFrame,
    cmap: Colormap | str = DEFAULT_COLORMAP,
    working_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Colorize one pressure frame.

    ``working_size`` is (height, width); None keeps the grid resolution.
    Returns an (H, W, 3) float array with channel values in [0, 1].
    """
    if isinstance(cmap, str):
        cmap = get_colormap(cmap)
    rgb = apply_lut(frame.values / PRESSURE_MAX, cmap)
    if working_size is not None:
        h, w = working_size
        if (h, w) != rgb.shape[:2]:
            rgb = cv2.resize(rgb, (w, h), interpolation=cv2.INTER_CUBIC)
            rgb = np.clip(rgb, 0.0, 1.0)  # bicubic can overshoot
    return rgb
