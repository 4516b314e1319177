"""Procedural scene corpus for desk-scale experiments.

Every scene has a bright sky over a darker ground, light falling from the
right, and a handful of objects whose shape depends on the class label
(0 discs, 1 squares, 2 horizontal bars, 3 vertical bars). Object hue is
tied to the shape, so color is predictable from lightness structure.
"""

import numpy as np

from .colorspace import RgbImage, lab_pixels_to_rgb

N_CLASSES = 4


def _objects(rng, label, yy, xx, size):
    masks = []
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.1, 0.9, size=2) * size
        r = rng.uniform(0.05, 0.12) * size
        if label == 0:
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        elif label == 1:
            m = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
        elif label == 2:
            m = (np.abs(yy - cy) < r * 0.35) & (np.abs(xx - cx) < r * 2.2)
        else:
            m = (np.abs(yy - cy) < r * 2.2) & (np.abs(xx - cx) < r * 0.35)
        masks.append(m)
    return masks


def make_scene(rng, label, size=96):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    horizon = rng.uniform(0.35, 0.6) * size
    sky = yy < horizon
    t = yy / size
    L = np.where(sky, 88 - 25 * t, 52 - 30 * (t - horizon / size))
    L += rng.uniform(0.08, 0.2) * (xx - size / 2)
    a = np.where(sky, rng.uniform(-12, 0), rng.uniform(-35, 5))
    b = np.where(sky, rng.uniform(-40, -15), rng.uniform(15, 45))
    a = a + np.zeros_like(L)
    b = b + np.zeros_like(L)
    for m in _objects(rng, label, yy, xx, size):
        L = np.where(m, rng.uniform(20, 90), L)
        hue = 2 * np.pi * (label + rng.uniform(-0.15, 0.15)) / N_CLASSES + 0.4
        chroma = rng.uniform(35, 60)
        a = np.where(m, chroma * np.cos(hue), a)
        b = np.where(m, chroma * np.sin(hue), b)
    L = L + rng.normal(0, 1.5, size=L.shape)
    lab = np.stack([np.clip(L, 0, 100), a, b], axis=-1).reshape(-1, 3)
    return RgbImage(lab_pixels_to_rgb(lab).reshape(size, size, 3))


def make_corpus(n, size=96, seed=0):
    """``n`` scenes with balanced labels; returns (images, labels)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % N_CLASSES
    rng.shuffle(labels)
    return [make_scene(rng, int(c), size) for c in labels], labels
