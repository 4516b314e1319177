"""Binary checkpoint files: config JSON, named parameter blobs and ADAM state.

Layout (little-endian)::

    magic "CDJPCKPT" | version u32 | json_len u32 | config JSON (utf-8)
    n_params u32, then per param: name_len u16 | name | dtype u8 (0 f32, 1 f64)
                                  | ndim u8 | dims u32[ndim] | data
    adam: step u64 | has_moments u8, then m and v blobs in the same param order
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"CDJPCKPT"
VERSION = 1
_DT = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DT_CODE = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def config_hash(config):
    cfg = {k: v for k, v in config.items() if k not in ("step", "config_hash")}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _blob(a):
    return a.astype(_DT[_DT_CODE[a.dtype]], copy=False).tobytes()


def save_checkpoint(path, config, params, adam=None):
    config = dict(config)
    config["config_hash"] = config_hash(config)
    names = sorted(params)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    js = json.dumps(config, sort_keys=True).encode()
    parts += [struct.pack("<I", len(js)), js, struct.pack("<I", len(names))]
    for name in names:
        a = params[name]
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", _DT_CODE[a.dtype], a.ndim),
                  struct.pack(f"<{a.ndim}I", *a.shape), _blob(a)]
    step = 0 if adam is None else adam.step
    has = adam is not None and all(n in adam.m for n in names)
    parts.append(struct.pack("<QB", step, 1 if has else 0))
    if has:
        for buf in (adam.m, adam.v):
            for name in names:
                parts.append(_blob(buf[name]))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return config["config_hash"]


def load_checkpoint(path):
    """Return (config, params, adam_step, moments) where moments is (m, v) or None."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise FormatError(f"{path} is not a checkpoint")
    pos = 8
    version, n = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos += 8
    config = json.loads(buf[pos:pos + n].decode())
    pos += n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params, layout = {}, []
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + ln].decode()
        pos += ln
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _DT[code]
        size = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(buf[pos:pos + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        pos += size
        layout.append((name, shape, dt, size))
    step, has = struct.unpack_from("<QB", buf, pos)
    pos += 9
    moments = None
    if has:
        moments = ({}, {})
        for d in moments:
            for name, shape, dt, size in layout:
                d[name] = np.frombuffer(buf[pos:pos + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
                pos += size
    if config_hash(config) != config.get("config_hash"):
        raise FormatError("checkpoint config hash does not match its contents")
    return config, params, step, moments
