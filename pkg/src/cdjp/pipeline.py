"""Image decoding and parallel shard generation."""

import multiprocessing as mp
import os
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .colorspace import RgbImage, rgb_to_lab
from .errors import ConfigError, EmptyCorpus, FormatError
from .puzzlegen import GenConfig, grid_of, make_sample, sample_seed
from .shards import ShardWriter, config_hash, encode_sample, write_manifest

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

ASSUMPTIONS = {
    "jitter": "uniform within each grid cell, full slack unless configured",
    "noise_fill": "Gaussian in normalized L, corpus mean/std from the codebook fit",
    "l_storage": "L / 50 - 1",
    "ab_storage": "raw ab",
    "aspect": "center crop to square, then resize",
}


def list_images(folder):
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder {folder} does not exist")
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise EmptyCorpus(f"no PNG or JPEG files in {folder}")
    return paths


def load_rgb(path, size):
    """Decode PNG/JPEG, center-crop to a square and resize to ``size``."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            w, h = im.size
            s = min(w, h)
            left, top = (w - s) // 2, (h - s) // 2
            im = im.crop((left, top, left + s, top + s))
            if s != size:
                im = im.resize((size, size), Image.BICUBIC)
            return RgbImage(np.asarray(im, dtype=np.uint8).copy())
    except UnidentifiedImageError as e:
        raise FormatError(f"cannot decode {path}") from e


def load_lab(path, size):
    return rgb_to_lab(load_rgb(path, size))


def worker_count(flag=None):
    """Worker pool size: the flag, else CDJP_WORKERS, else the CPU count."""
    if flag is not None:
        n = int(flag)
    elif os.environ.get("CDJP_WORKERS"):
        n = int(os.environ["CDJP_WORKERS"])
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("worker count must be >= 1")
    return n


# per-process generator state; set before the pool forks
_STATE = {}


def _init_state(images, mode, pset, cb, cfg):
    _STATE.update(images=images, mode=mode, pset=pset, cb=cb, cfg=cfg)


def _work(task):
    shard, img, seed = task
    st = _STATE
    s = make_sample(st["images"][img], st["mode"], st["pset"], st["cb"], st["cfg"], seed)
    return shard, encode_sample(s)


def _tasks(n_images, n_shards, per_image, seed):
    # shard j holds images j, j + n_shards, ...; each image repeated per_image times
    for j in range(n_shards):
        for i in range(j, n_images, n_shards):
            for r in range(per_image):
                yield j, i, sample_seed(seed, i, r)


class _RawWriter(ShardWriter):
    def write_raw(self, blob):
        self._f.write(blob)
        self.count += 1


def generate_shards(images, ids, mode, pset, cb, cfg: GenConfig, out_dir, n_shards=1, per_image=1, seed=0,
                    workers=1, profile="desk", extra_manifest=None):
    """Write ``n_shards`` shard files plus manifests; returns (paths, seconds).

    Output bytes depend only on the inputs and ``seed``, never on ``workers``.
    """
    if not images:
        raise EmptyCorpus("no images to generate from")
    if n_shards < 1 or per_image < 1:
        raise ConfigError("shards and per-image counts must be >= 1")
    grid_of(mode)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{mode}-{j:04d}.shard" for j in range(n_shards)]
    writers = [_RawWriter(p, mode, cfg.target_grid, cb.Q) for p in paths]
    tasks = _tasks(len(images), n_shards, per_image, seed)
    t0 = time.perf_counter()
    try:
        if workers == 1:
            _init_state(images, mode, pset, cb, cfg)
            results = map(_work, tasks)
            for j, blob in results:
                writers[j].write_raw(blob)
        else:
            ctx = mp.get_context("fork")
            _init_state(images, mode, pset, cb, cfg)
            with ctx.Pool(workers) as pool:
                # imap keeps task order, so a single writer sees a deterministic stream
                for j, blob in pool.imap(_work, tasks, chunksize=64):
                    writers[j].write_raw(blob)
    finally:
        for w in writers:
            w.close()
        _STATE.clear()
    elapsed = time.perf_counter() - t0
    gen = asdict(cfg)
    run = {"mode": mode, "profile": profile, "gen_config": gen, "seed": seed, "per_image": per_image,
           "n_shards": n_shards}
    for j, p in enumerate(paths):
        manifest = dict(run)
        manifest.update({
            "shard_index": j,
            "image_ids": [str(ids[i]) for i in range(j, len(images), n_shards)],
            "count": writers[j].count,
            "config_hash": config_hash(run),
            "codebook_hash": cb.digest(),
            "permset_hash": None if pset is None else pset.digest(),
            "assumptions": ASSUMPTIONS,
        })
        if extra_manifest:
            manifest.update(extra_manifest)
        write_manifest(p, manifest)
    return paths, elapsed
