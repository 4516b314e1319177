"""Quantized ab codebook: in-gamut bins, soft encoding and class rebalancing."""

import functools
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .colorspace import LabImage, rgb_pixels_to_lab
from .errors import EmptyCorpus, FormatError

AB_RANGE = 110.0


@dataclass(frozen=True)
class SoftLabel:
    indices: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class ColorCodebook:
    grid_step: float
    bins: np.ndarray        # (Q, 2) float64 centers
    prior: np.ndarray       # (Q,)
    weights: np.ndarray     # (Q,)
    meta: dict = field(default_factory=dict)

    @property
    def Q(self):
        return len(self.bins)

    @property
    def n_cells(self):
        return int(round(2 * AB_RANGE / self.grid_step))

    def cell_of(self, a, b):
        """Integer grid cell (ia, ib) for ab values (vectorized)."""
        ia = np.floor((np.asarray(a) + AB_RANGE) / self.grid_step).astype(np.int64)
        ib = np.floor((np.asarray(b) + AB_RANGE) / self.grid_step).astype(np.int64)
        return ia, ib

    @functools.cached_property
    def _grid(self):
        t = self.cell_table()
        t.flags.writeable = False
        return t

    def cell_table(self):
        """(n, n) array mapping grid cell -> bin id, -1 for out-of-gamut cells."""
        n = self.n_cells
        table = np.full((n, n), -1, dtype=np.int64)
        ia, ib = self.cell_of(self.bins[:, 0], self.bins[:, 1])
        table[ia, ib] = np.arange(self.Q)
        return table

    def to_json(self):
        return {
            "grid_step": self.grid_step,
            "bins": self.bins.tolist(),
            "prior": self.prior.tolist(),
            "weights": self.weights.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(
                grid_step=float(obj["grid_step"]),
                bins=np.asarray(obj["bins"], dtype=np.float64).reshape(-1, 2),
                prior=np.asarray(obj["prior"], dtype=np.float64),
                weights=np.asarray(obj["weights"], dtype=np.float64),
                meta=dict(obj.get("meta", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad codebook json: {e}") from e

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))

    def digest(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_codebook(grid_step=10.0, gamut_stride=4):
    """Keep every grid cell over [-110, 110)^2 that some sampled sRGB color lands in."""
    if grid_step <= 0 or gamut_stride < 1:
        raise ValueError("grid_step must be > 0 and gamut_stride >= 1")
    v = np.arange(0, 256, gamut_stride, dtype=np.uint8)
    r, g, b = np.meshgrid(v, v, v, indexing="ij")
    rgb = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)
    ab = rgb_pixels_to_lab(rgb)[:, 1:]
    n = int(round(2 * AB_RANGE / grid_step))
    ia = np.floor((ab[:, 0] + AB_RANGE) / grid_step).astype(np.int64)
    ib = np.floor((ab[:, 1] + AB_RANGE) / grid_step).astype(np.int64)
    inside = (ia >= 0) & (ia < n) & (ib >= 0) & (ib < n)
    occupied = np.zeros((n, n), dtype=bool)
    occupied[ia[inside], ib[inside]] = True
    cia, cib = np.nonzero(occupied)  # row-major: sorted by a then b
    centers = np.stack([-AB_RANGE + (cia + 0.5) * grid_step, -AB_RANGE + (cib + 0.5) * grid_step], axis=1)
    q = len(centers)
    return ColorCodebook(
        grid_step=float(grid_step),
        bins=centers.astype(np.float64),
        prior=np.full(q, 1.0 / q),
        weights=np.ones(q),
        meta={"stride": gamut_stride},
    )


def encode_points(cb, ab, mode="soft", k=5, sigma=5.0):
    """Encode (M, 2) ab points. Returns (indices (M, k), values (M, k))."""
    pts = np.ascontiguousarray(ab, dtype=np.float64).reshape(-1, 2)
    if mode == "hard":
        k = 1
    k = min(k, cb.Q)
    idx, d2 = kernels.nearest_k_grid(pts, np.ascontiguousarray(cb.bins), cb._grid, -AB_RANGE, cb.grid_step, k)
    if mode == "hard":
        return idx, np.ones_like(d2)
    w = np.exp(-(d2 - d2[:, :1]) / (2.0 * sigma * sigma))  # shift by the min for range safety
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def encode_ab(cb: ColorCodebook, a: float, b: float, mode="soft", k=5, sigma=5.0) -> SoftLabel:
    idx, w = encode_points(cb, np.array([[a, b]]), mode, k, sigma)
    return SoftLabel(idx[0], w[0])


def bin_histogram(cb, ab_pixels, table=None):
    """Hard-assignment counts of (M, 2) ab pixels over the Q bins."""
    if table is None:
        table = cb.cell_table()
    n = table.shape[0]
    ia, ib = cb.cell_of(ab_pixels[:, 0], ab_pixels[:, 1])
    ok = (ia >= 0) & (ia < n) & (ib >= 0) & (ib < n)
    ids = np.full(len(ab_pixels), -1, dtype=np.int64)
    ids[ok] = table[ia[ok], ib[ok]]
    stray = ids < 0
    if stray.any():
        ids[stray] = kernels.nearest_k(np.ascontiguousarray(ab_pixels[stray], dtype=np.float64),
                                       np.ascontiguousarray(cb.bins), 1)[0][:, 0]
    return np.bincount(ids, minlength=cb.Q).astype(np.float64)


def fit_rebalance(cb: ColorCodebook, corpus: Iterable[LabImage], lam=0.5, smooth_sigma=5.0):
    """Fit the empirical prior and rebalancing weights from a corpus.

    weights ~ 1 / ((1 - lam) * prior + lam / Q), scaled so that
    sum(prior * weights) == 1. Also records the mean and std of the
    normalized L channel (L / 50 - 1), used to fill discarded pieces.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    table = cb.cell_table()
    counts = np.zeros(cb.Q)
    l_sum = l_sq = 0.0
    n_pix = 0
    seen = 0
    for img in corpus:
        if img.ab is None:
            continue
        seen += 1
        ab = img.ab.reshape(2, -1).T.astype(np.float64)
        counts += bin_histogram(cb, ab, table)
        ln = img.l.astype(np.float64) / 50.0 - 1.0
        l_sum += ln.sum()
        l_sq += (ln * ln).sum()
        n_pix += ln.size
    if seen == 0:
        raise EmptyCorpus("no colored images in corpus")

    if smooth_sigma > 0:
        grid = np.zeros(table.shape)
        ia, ib = cb.cell_of(cb.bins[:, 0], cb.bins[:, 1])
        grid[ia, ib] = counts
        grid = gaussian_filter(grid, sigma=smooth_sigma / cb.grid_step, mode="constant")
        counts = grid[ia, ib]
    prior = counts / counts.sum()

    q = cb.Q
    mix = (1.0 - lam) * prior + lam / q
    weights = np.zeros(q)
    pos = mix > 0
    weights[pos] = 1.0 / mix[pos]
    if not pos.all():
        # never-seen bins with lam = 0: as heavy as the rarest seen bin
        weights[~pos] = weights[pos].max()
    weights /= np.sum(prior * weights)

    l_mean = l_sum / n_pix
    l_std = float(np.sqrt(max(l_sq / n_pix - l_mean * l_mean, 0.0)))
    meta = dict(cb.meta, **{"base_hash": cb.digest(), "lambda": lam, "sigma": smooth_sigma, "l_mean": l_mean, "l_std": l_std,
                            "fit_images": seen})
    return replace(cb, prior=prior, weights=weights, meta=meta)


def dense_targets(indices, values, q, dtype=np.float64):
    """Scatter (..., k) sparse soft labels into (..., Q) dense distributions."""
    out = np.zeros(indices.shape[:-1] + (q,), dtype=dtype)
    np.put_along_axis(out, indices.astype(np.int64), values.astype(dtype), axis=-1)
    return out
