"""Damaged-puzzle sample construction for every task mode."""

import functools
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from typing import List, Optional

import numpy as np

from .codebook import ColorCodebook, SoftLabel, encode_points
from .colorspace import LabImage, drop_channels
from .errors import BadDimensions, ConfigMismatch, MissingChannels
from .permutation import PermutationSet

TASK_MODES = (
    "jigsaw2_plain",
    "jigsaw2_channel_drop",
    "jigsaw2_piece_removed",
    "inpaint_cross_channel",
    "colorize_narrow",
    "cdjp3",
)
MODE_CODES = {m: i for i, m in enumerate(TASK_MODES)}

AB_SCALE = 110.0


def grid_of(mode):
    if mode not in MODE_CODES:
        raise ConfigMismatch(f"unknown task mode {mode!r}")
    return 3 if mode == "cdjp3" else 2


@dataclass(frozen=True)
class GenConfig:
    image_size: int = 312
    patch_2x2: int = 140
    patch_3x3: int = 85
    jitter: Optional[int] = None      # None = full slack of the grid cell
    drop_prob: float = 0.4
    noise_mean: float = 0.0           # normalized-L units (L / 50 - 1)
    noise_std: float = 0.5
    target_grid: int = 7
    encode: str = "soft"              # or "hard"
    soft_k: int = 5
    soft_sigma: float = 5.0
    debug_identity: bool = False
    debug_no_damage: bool = False

    def __post_init__(self):
        for grid, p in ((2, self.patch_2x2), (3, self.patch_3x3)):
            if p > self.image_size // grid:
                raise BadDimensions(f"{p}px patches do not fit a {grid}x{grid} grid of {self.image_size}px")
        if self.jitter is not None and self.jitter < 0:
            raise BadDimensions("jitter must be >= 0")

    @classmethod
    def paper(cls, **kw):
        """Full-size profile: 312 px images, 140 / 85 px patches, 7 x 7 targets."""
        return cls(**kw)

    @classmethod
    def desk(cls, **kw):
        """Desk-scale profile: 96 px images, 32 / 26 px patches, 4 x 4 targets."""
        base = dict(image_size=96, patch_2x2=32, patch_3x3=26, target_grid=4)
        base.update(kw)
        return cls(**base)

    @classmethod
    def profile(cls, name, **kw):
        if name == "paper":
            return cls.paper(**kw)
        if name == "desk":
            return cls.desk(**kw)
        raise ConfigMismatch(f"unknown profile {name!r}")

    def patch_size(self, grid):
        return self.patch_2x2 if grid == 2 else self.patch_3x3

    def with_noise_from(self, cb: ColorCodebook):
        """Take the discarded-piece noise statistics from a fitted codebook."""
        if "l_mean" not in cb.meta:
            return self
        return replace(self, noise_mean=float(cb.meta["l_mean"]), noise_std=float(cb.meta["l_std"]))

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class SoftGrid:
    """S x S grid of soft labels stored densely as (S, S, k) arrays."""

    indices: np.ndarray   # int32
    values: np.ndarray    # float32

    @property
    def S(self):
        return self.indices.shape[0]

    def label(self, i, j) -> SoftLabel:
        return SoftLabel(self.indices[i, j], self.values[i, j])

    def argmax_bins(self):
        pick = np.argmax(self.values, axis=-1)
        return np.take_along_axis(self.indices, pick[..., None], axis=-1)[..., 0]


@dataclass
class PuzzleSample:
    mode: str
    patches: List[LabImage]            # slot order
    perm_id: int
    missing_index: Optional[int]       # slot id
    color_targets: List[Optional[SoftGrid]]
    seed: int
    target_ab: Optional[np.ndarray] = None   # raw ab of the removed region (inpaint_cross_channel)

    @property
    def n_patches(self):
        return len(self.patches)


@functools.lru_cache(maxsize=64)
def _pool_matrix(size, S):
    """(S, size) 0/1 membership of [floor(i size / S), floor((i + 1) size / S)) and the cell counts."""
    edges = np.floor(np.arange(S + 1) * size / S).astype(np.int64)
    edges[-1] = size
    m = np.zeros((S, size))
    for i in range(S):
        m[i, edges[i]:edges[i + 1]] = 1.0
    m.flags.writeable = False
    return m, np.diff(edges).astype(np.float64)


def pool_ab(ab, S):
    """Average-pool (..., 2, H, W) ab planes to (..., 2, S, S)."""
    h, w = ab.shape[-2:]
    lead = ab.shape[:-2]
    mh, ch = _pool_matrix(h, S)
    mw, cw = _pool_matrix(w, S)
    # two flat matmuls instead of a batched one: far less per-call overhead for many small planes
    x = ab.astype(np.float64).reshape(-1, w) @ mw.T                       # (N h, S)
    x = x.reshape(-1, h, S).transpose(0, 2, 1).reshape(-1, h) @ mh.T      # (N S_w, S_h)
    x = x.reshape(-1, S, S).transpose(0, 2, 1)
    return (x / (ch[:, None] * cw[None, :])).reshape(lead + (S, S))


def _encode_grids(pooled, cb, cfg):
    """(n, 2, S, S) pooled ab -> list of n SoftGrid."""
    n, _, S, _ = pooled.shape
    pts = pooled.transpose(0, 2, 3, 1).reshape(-1, 2)
    idx, val = encode_points(cb, pts, cfg.encode, cfg.soft_k, cfg.soft_sigma)
    k = idx.shape[1]
    idx = idx.reshape(n, S, S, k).astype(np.int32)
    val = val.reshape(n, S, S, k).astype(np.float32)
    return [SoftGrid(idx[i], val[i]) for i in range(n)]


def downsample_ab_targets(patch: LabImage, cb: ColorCodebook, S: int, cfg: GenConfig = GenConfig()) -> SoftGrid:
    if patch.ab is None:
        raise MissingChannels("targets need ab planes")
    return _encode_grids(pool_ab(patch.ab, S)[None], cb, cfg)[0]


def _offsets(rng, cfg, grid):
    """Top-left corners (row-major cells), jittered uniformly inside each cell."""
    cell = cfg.image_size // grid
    p = cfg.patch_size(grid)
    slack = cell - p
    if cfg.jitter is None:
        jit = slack
    else:
        jit = min(cfg.jitter, slack)
    n = grid * grid
    if jit == 0:
        off = [slack // 2] * (2 * n)
    else:
        base = (slack - jit) // 2
        off = (base + rng.integers(0, jit + 1, size=2 * n)).tolist()
    return [((i // grid) * cell + off[2 * i], (i % grid) * cell + off[2 * i + 1]) for i in range(n)]


def _check_image(img, cfg):
    if img.height != cfg.image_size or img.width != cfg.image_size:
        raise BadDimensions(f"expected {cfg.image_size}px square image, got {img.height}x{img.width}")
    if img.ab is None or not img.has_l:
        raise MissingChannels("source image needs both L and ab")


def _extract_planes(img, cfg, grid, rng):
    """Stacked (n, p, p) L and (n, 2, p, p) ab crops in canonical order."""
    p = cfg.patch_size(grid)
    tl = _offsets(rng, cfg, grid)
    l = np.stack([img.l[t:t + p, c:c + p] for t, c in tl])
    ab = np.stack([img.ab[:, t:t + p, c:c + p] for t, c in tl])
    return l, ab


def _extract(img, cfg, grid, rng):
    l, ab = _extract_planes(img, cfg, grid, rng)
    return [LabImage(l[i], ab[i]) for i in range(len(l))]


def extract_patches(img: LabImage, cfg: GenConfig, grid: int, seed) -> List[LabImage]:
    """grid^2 patches in canonical (row-major) order, jittered inside their cells."""
    _check_image(img, cfg)
    if grid not in (2, 3):
        raise BadDimensions("grid must be 2 or 3")
    return _extract(img, cfg, grid, np.random.default_rng(seed))


def _noise_l(rng, cfg, shape):
    n = rng.normal(cfg.noise_mean, cfg.noise_std, size=shape)
    return np.clip((n + 1.0) * 50.0, 0.0, 100.0).astype(np.float32)


def _noise_patch(rng, cfg, like: LabImage):
    l = _noise_l(rng, cfg, like.l.shape)
    ab = None
    if like.ab is not None:
        ab = np.clip(rng.normal(0.0, cfg.noise_std, size=like.ab.shape) * AB_SCALE, -128, 128).astype(np.float32)
    return LabImage(l, ab, like.has_l)


def _draw_perm(rng, pset, cfg):
    if cfg.debug_identity:
        ident = tuple(range(pset.n_pieces))
        if ident not in pset.index:
            raise ConfigMismatch("debug_identity needs the identity permutation in the set")
        return pset.index[ident]
    return int(rng.integers(0, len(pset)))


def make_sample(img: LabImage, mode: str, pset: Optional[PermutationSet], cb: ColorCodebook,
                cfg: GenConfig, seed: int) -> PuzzleSample:
    """Build one training sample; (image, mode, seed) fixes the output bit-for-bit."""
    grid = grid_of(mode)
    _check_image(img, cfg)
    needs_pset = mode.startswith("jigsaw2") or mode == "cdjp3"
    if needs_pset and (pset is None or pset.n_pieces != grid * grid):
        raise ConfigMismatch(f"mode {mode} needs a permutation set over {grid * grid} pieces")
    rng = np.random.default_rng(seed)
    S = cfg.target_grid
    damage = not cfg.debug_no_damage

    if mode == "inpaint_cross_channel":
        size, r = cfg.image_size, cfg.patch_2x2
        top = (size - r) // 2
        region = img.crop(top, top, r)
        l = img.l.copy()
        if damage:
            l[top:top + r, top:top + r] = _noise_l(rng, cfg, (r, r))
        ctx = LabImage(l, None if damage else img.ab)
        grids = _encode_grids(pool_ab(region.ab, S)[None], cb, cfg)
        return PuzzleSample(mode, [ctx], 0, None, grids, seed, target_ab=region.ab.copy())

    if mode == "colorize_narrow":
        l, ab = _extract_planes(img, cfg, grid, rng)
        q = int(rng.integers(0, 4))
        grids = _encode_grids(pool_ab(ab[q], S)[None], cb, cfg)
        inp = LabImage(l[q], None if damage else ab[q])
        return PuzzleSample(mode, [inp], 0, None, grids, seed)

    l, ab = _extract_planes(img, cfg, grid, rng)
    perm_id = _draw_perm(rng, pset, cfg)
    order = pset.perms[perm_id].astype(np.intp)
    l, ab = l[order], ab[order]       # slot i shows piece perm[i]
    n = grid * grid
    missing = None
    targets: List[Optional[SoftGrid]] = [None] * n

    if mode == "cdjp3":
        targets = _encode_grids(pool_ab(ab, S), cb, cfg)
        m = int(rng.integers(0, n))
        if not damage:
            return PuzzleSample(mode, [LabImage(l[i], ab[i]) for i in range(n)], perm_id, None, targets, seed)
        missing = m
        l[m] = _noise_l(rng, cfg, l[m].shape)
        return PuzzleSample(mode, [LabImage(l[i]) for i in range(n)], perm_id, missing, targets, seed)

    slots = [LabImage(l[i], ab[i]) for i in range(n)]
    if mode == "jigsaw2_channel_drop":
        keep_l = set(int(i) for i in rng.choice(n, size=n // 2, replace=False))
        if damage:
            slots = [drop_channels(p, "keep_l" if i in keep_l else "keep_ab") for i, p in enumerate(slots)]
    elif mode == "jigsaw2_piece_removed":
        removed = rng.random() < cfg.drop_prob
        m = int(rng.integers(0, n))
        if removed and damage:
            missing = m
            slots[m] = _noise_patch(rng, cfg, slots[m])

    return PuzzleSample(mode, slots, perm_id, missing, targets, seed)


def sample_seed(base_seed, *parts):
    """Derive a 64-bit per-sample seed from a base seed and integer parts."""
    h = hashlib.blake2b(struct.pack(f"<{len(parts) + 1}q", int(base_seed), *map(int, parts)), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def normalized_inputs(sample: PuzzleSample, channels: int, dtype=np.float32):
    """(n, channels, P, P) network input: L / 50 - 1 then ab / 110; absent planes are zero."""
    ps = sample.patches
    h, w = ps[0].l.shape
    x = np.zeros((len(ps), channels, h, w), dtype=dtype)
    for i, p in enumerate(ps):
        if p.has_l:
            x[i, 0] = p.l / 50.0 - 1.0
        if channels == 3 and p.ab is not None:
            x[i, 1:] = p.ab / AB_SCALE
    return x
