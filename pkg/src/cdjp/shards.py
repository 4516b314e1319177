"""Binary sample shards and their JSON manifests.

Layout (little-endian)::

    header   magic "CDJP" | version u32 | mode u8 | grid u8 | S u8 | Q u32 | count u64
    sample   seed u64 | perm_id u32 | missing_index i8 (-1 = none) | n_patches u8
             n_patches x patch:
                 flags u8 (1 = L, 2 = ab) | h u16 | w u16
                 [L plane f32[h*w], stored as L / 50 - 1] [ab planes f32[2*h*w]]
             n_targets u8
             n_targets x target:
                 present u8, then S*S cells of (k u8 | indices u32[k] | values f32[k])
             has_target_ab u8 [h u16 | w u16 | f32[2*h*w]]
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .colorspace import LabImage
from .errors import FormatError, ManifestMismatch
from .puzzlegen import MODE_CODES, TASK_MODES, PuzzleSample, SoftGrid, grid_of

MAGIC = b"CDJP"
VERSION = 1
_HEADER = struct.Struct("<4sIBBBIQ")
_SAMPLE = struct.Struct("<QIbB")
_PATCH = struct.Struct("<BHH")


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _cells_dtype(k):
    return np.dtype([("k", "u1"), ("i", "<u4", (k,)), ("v", "<f4", (k,))])


def _encode_targets(targets):
    out = [struct.pack("<B", len(targets))]
    present = [t for t in targets if t is not None]
    if not present:
        return out + [b"\x00"] * len(targets)
    # one structured array for every grid; sliced per target below
    idx = np.stack([t.indices for t in present])
    val = np.stack([t.values for t in present])
    n, S, _, k = idx.shape
    cells = np.empty(n * S * S, dtype=_cells_dtype(k))
    cells["k"] = k
    cells["i"] = idx.reshape(-1, k)
    cells["v"] = val.reshape(-1, k)
    raw = cells.tobytes()
    step = len(raw) // n
    j = 0
    for t in targets:
        if t is None:
            out.append(b"\x00")
        else:
            out += [b"\x01", raw[j * step:(j + 1) * step]]
            j += 1
    return out


def encode_sample(s: PuzzleSample) -> bytes:
    out = [_SAMPLE.pack(s.seed, s.perm_id, -1 if s.missing_index is None else s.missing_index, len(s.patches))]
    ps = s.patches
    uniform = all(p.l.shape == ps[0].l.shape for p in ps)
    if uniform:
        # convert every L plane in one pass, then slice per patch
        lraw = _f32(np.stack([p.l for p in ps]).astype(np.float64) / 50.0 - 1.0)
        lsz = len(lraw) // len(ps)
    for i, p in enumerate(ps):
        flags = (1 if p.has_l else 0) | (2 if p.ab is not None else 0)
        out.append(_PATCH.pack(flags, p.height, p.width))
        if p.has_l:
            out.append(lraw[i * lsz:(i + 1) * lsz] if uniform else _f32(p.l.astype(np.float64) / 50.0 - 1.0))
        if p.ab is not None:
            out.append(_f32(p.ab))
    out += _encode_targets(s.color_targets)
    if s.target_ab is None:
        out.append(b"\x00")
    else:
        _, h, w = s.target_ab.shape
        out.append(struct.pack("<BHH", 1, h, w))
        out.append(_f32(s.target_ab))
    return b"".join(out)


class _Reader:
    def __init__(self, buf, pos):
        self.buf = buf
        self.pos = pos

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated shard")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def f32(self, count, shape):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)


def decode_sample(r: _Reader, mode: str, S: int) -> PuzzleSample:
    seed, perm_id, missing, n = r.unpack(_SAMPLE)
    patches = []
    for _ in range(n):
        flags, h, w = r.unpack(_PATCH)
        if flags & 1:
            l = ((r.f32(h * w, (h, w)).astype(np.float64) + 1.0) * 50.0).astype(np.float32)
        else:
            l = np.zeros((h, w), dtype=np.float32)
        ab = r.f32(2 * h * w, (2, h, w)) if flags & 2 else None
        patches.append(LabImage(l, ab, bool(flags & 1)))
    (n_t,) = struct.unpack("<B", r.take(1))
    targets = []
    for _ in range(n_t):
        if r.take(1) == b"\x00":
            targets.append(None)
            continue
        k = r.buf[r.pos]
        cells = np.frombuffer(r.take((1 + 8 * k) * S * S), dtype=_cells_dtype(k))
        if np.any(cells["k"] != k):
            raise FormatError("mixed label widths in one grid")
        targets.append(SoftGrid(cells["i"].astype(np.int32).reshape(S, S, k),
                                cells["v"].astype(np.float32).reshape(S, S, k)))
    target_ab = None
    if r.take(1) == b"\x01":
        h, w = struct.unpack("<HH", r.take(4))
        target_ab = r.f32(2 * h * w, (2, h, w))
    return PuzzleSample(mode, patches, perm_id, None if missing < 0 else missing, targets, seed, target_ab)


class ShardWriter:
    """Single-consumer shard writer; the header count is patched on close."""

    def __init__(self, path, mode, S, Q):
        self.path = Path(path)
        self.mode = mode
        self.S, self.Q = S, Q
        self.count = 0
        self._f = open(self.path, "wb")
        self._f.write(_HEADER.pack(MAGIC, VERSION, MODE_CODES[mode], grid_of(mode), S, Q, 0))

    def write(self, sample: PuzzleSample):
        if sample.mode != self.mode:
            raise ManifestMismatch(f"sample mode {sample.mode} in a {self.mode} shard")
        self._f.write(encode_sample(sample))
        self.count += 1

    def close(self):
        if self._f.closed:
            return
        self._f.seek(0)
        self._f.write(_HEADER.pack(MAGIC, VERSION, MODE_CODES[self.mode], grid_of(self.mode), self.S, self.Q,
                                   self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_header(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("file too short for a shard header")
    magic, version, mode, grid, S, Q, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("not a CDJP shard")
    if version != VERSION:
        raise FormatError(f"unsupported shard version {version}")
    return {"mode": TASK_MODES[mode], "grid": grid, "S": S, "Q": Q, "count": count}


class Shard:
    """Random-access view over one shard file held in memory."""

    def __init__(self, path):
        self.path = Path(path)
        self.buf = self.path.read_bytes()
        self.header = read_header(self.buf)
        self._offsets = []
        r = _Reader(self.buf, _HEADER.size)
        for _ in range(self.header["count"]):
            self._offsets.append(r.pos)
            decode_sample(r, self.header["mode"], self.header["S"])

    def __len__(self):
        return len(self._offsets)

    def __getitem__(self, i) -> PuzzleSample:
        return decode_sample(_Reader(self.buf, self._offsets[i]), self.header["mode"], self.header["S"])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def write_shard(path, samples, mode, S, Q):
    with ShardWriter(path, mode, S, Q) as w:
        for s in samples:
            w.write(s)
    return w.count


def manifest_path(shard_path):
    return Path(shard_path).with_suffix(".json")


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_manifest(shard_path, manifest):
    manifest = dict(manifest)
    manifest["shard_sha256"] = hashlib.sha256(Path(shard_path).read_bytes()).hexdigest()
    with open(manifest_path(shard_path), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def read_manifest(shard_path):
    p = manifest_path(shard_path)
    try:
        with open(p) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ManifestMismatch(f"no manifest next to {shard_path}") from e
