import numpy as np
import pytest

from presspose.annotation import PART_NAMES, KeypointSet


def full_keypoints(frame_ref=(1, 1, 0), size=(64, 32), offset=0.0, invisible=()):
    """A deterministic spread of all 14 parts inside ``size``."""
    h, w = size
    points = {}
    for i, part in enumerate(PART_NAMES):
        x = (i * 2.0 + 1.0 + offset) % (w - 1)
        y = (i * 4.0 + 2.0 + offset) % (h - 1)
        points[part] = (float(x), float(y))
    visibility = {p: p not in invisible for p in PART_NAMES}
    return KeypointSet(points=points, visibility=visibility, frame_ref=frame_ref)


def random_keypoints(rng, size=(20, 16), frame_ref=(1, 1, 0), integer=False, p_invisible=0.0):
    h, w = size
    points = {}
    visibility = {}
    for part in PART_NAMES:
        if integer:
            points[part] = (float(rng.integers(0, w)), float(rng.integers(0, h)))
        else:
            points[part] = (float(rng.uniform(0, w - 1)), float(rng.uniform(0, h - 1)))
        visibility[part] = bool(rng.random() >= p_invisible)
    return KeypointSet(points=points, visibility=visibility, frame_ref=frame_ref)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
