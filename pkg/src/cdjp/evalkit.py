"""Frozen-feature evaluation: exact nearest neighbours and linear probes."""

import base64
import html
import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import DegenerateSplit, FormatError, UnknownId, UnknownLayer
from .losses import softmax_cross_entropy
from .puzzlegen import AB_SCALE
from .tinynet.adam import AdamState, adam_step
from .tinynet.checkpoint import load_checkpoint
from .tinynet.model import NetConfig, TinyNet

METRICS = ("cosine", "l2")
_IDX_MAGIC = b"CDJPIDX1"


@dataclass
class FeatureIndex:
    ids: List[str]
    vectors: np.ndarray      # (N, D) float32; unit rows for cosine
    metric: str = "cosine"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or len(v) != len(self.ids):
            raise ValueError("vectors must be (len(ids), D)")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite feature rows")
        if self.metric == "cosine":
            norms = np.linalg.norm(v, axis=1, keepdims=True)
            v = v / np.where(norms > 0, norms, 1.0)
        self.vectors = v.astype(np.float32)
        self.ids = [str(i) for i in self.ids]
        self._pos = {i: n for n, i in enumerate(self.ids)}
        if len(self._pos) != len(self.ids):
            raise ValueError("duplicate ids")

    def __len__(self):
        return len(self.ids)

    @property
    def dims(self):
        return self.vectors.shape[1]

    def position(self, item_id):
        try:
            return self._pos[str(item_id)]
        except KeyError:
            raise UnknownId(f"{item_id!r} not in index") from None

    def distances(self, row):
        """Distances from one stored row to every row (float64)."""
        v = self.vectors.astype(np.float64)
        d = v - v[row]
        sq = np.einsum("ij,ij->i", d, d)
        # for unit vectors 0.5 |u - v|^2 == 1 - cos(u, v), and is exactly 0 for the row itself
        return 0.5 * sq if self.metric == "cosine" else np.sqrt(sq)

    def save(self, path):
        parts = [_IDX_MAGIC, struct.pack("<IBQ", self.dims, METRICS.index(self.metric), len(self))]
        for i in self.ids:
            b = i.encode()
            parts += [struct.pack("<H", len(b)), b]
        parts.append(self.vectors.astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:8] != _IDX_MAGIC:
            raise FormatError(f"{path} is not a feature index")
        dims, metric, n = struct.unpack_from("<IBQ", buf, 8)
        pos = 8 + struct.calcsize("<IBQ")
        ids = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, pos)
            ids.append(buf[pos + 2:pos + 2 + ln].decode())
            pos += 2 + ln
        vec = np.frombuffer(buf[pos:pos + 4 * n * dims], dtype="<f4").reshape(n, dims)
        out = cls.__new__(cls)
        out.ids, out.vectors, out.metric = ids, vec.astype(np.float32), METRICS[metric]
        out._pos = {i: k for k, i in enumerate(ids)}
        return out


def knn(index: FeatureIndex, query_id, k, include_self=True):
    """Exact top-k as a list of (id, distance); ties go to the smaller id."""
    row = index.position(query_id)
    if not 0 < k < len(index) + (1 if include_self else 0):
        raise ValueError("k must satisfy 0 < k < len(index)")
    d = index.distances(row)
    order = sorted(range(len(index)), key=lambda i: (d[i], index.ids[i]))
    if not include_self:
        order = [i for i in order if i != row]
    return [(index.ids[i], float(d[i])) for i in order[:k]]


def load_model(checkpoint) -> TinyNet:
    if isinstance(checkpoint, TinyNet):
        return checkpoint
    config, params, _, _ = load_checkpoint(checkpoint)
    net = TinyNet(NetConfig.from_dict(config["net"]))
    net.params = params
    return net


def tower_layers(net: TinyNet):
    return [lay.name for lay in net.tower if not lay.name.endswith(".relu")]


def image_inputs(images, channels, dtype=np.float32):
    x = np.zeros((len(images), channels) + images[0].l.shape, dtype=dtype)
    for i, img in enumerate(images):
        x[i, 0] = img.l / 50.0 - 1.0
        if channels == 3 and img.ab is not None:
            x[i, 1:] = img.ab / AB_SCALE
    return x


def layer_features(net: TinyNet, images, layers, batch=64):
    """Globally pooled activations of several tower layers in one pass: {layer: (N, C)}."""
    known = tower_layers(net)
    for layer in layers:
        if layer not in known:
            raise UnknownLayer(f"{layer!r} is not a tower layer; choose from {known}")
    out = {layer: [] for layer in layers}
    for s in range(0, len(images), batch):
        h = image_inputs(images[s:s + batch], net.cfg.in_channels, net.dtype)
        for lay in net.tower:
            h = lay.forward(net.params, h)
            lay._cache = None
            name = lay.name[:-5] if lay.name.endswith(".relu") else None
            if name in out:
                out[name].append(h.mean(axis=(2, 3)).astype(np.float64))
    return {k: np.concatenate(v) for k, v in out.items()}


def extract_features(checkpoint, images, layer, ids=None, metric="cosine") -> FeatureIndex:
    """Pooled feature vector of one tower layer for each image."""
    net = load_model(checkpoint)
    feats = layer_features(net, images, [layer])[layer]
    ids = [str(i) for i in range(len(images))] if ids is None else ids
    return FeatureIndex(list(ids), feats, metric)


@dataclass
class ProbeResult:
    layer: str
    accuracy: float
    n_classes: int

    def to_json(self):
        return asdict(self)


def _check_split(train_idx, test_idx, labels):
    tr, te = set(map(int, train_idx)), set(map(int, test_idx))
    if not tr or not te:
        raise DegenerateSplit("empty train or test split")
    if tr & te:
        raise DegenerateSplit("train and test splits overlap")
    if len(np.unique(labels[list(tr)])) < 2:
        raise DegenerateSplit("need at least two classes in the training split")


def linear_probe(features, labels, train_idx, test_idx, epochs=100, lr=1e-2, batch=64, l2=1e-4, seed=0,
                 layer="") -> ProbeResult:
    """Softmax linear classifier on frozen features, trained with ADAM.

    ``features`` is a FeatureIndex or an (N, D) array; ``labels`` (N,) ints.
    Features are standardized with training-split statistics.
    """
    X = features.vectors if isinstance(features, FeatureIndex) else features
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    train_idx, test_idx = np.asarray(train_idx), np.asarray(test_idx)
    _check_split(train_idx, test_idx, y)
    n_classes = int(y.max()) + 1
    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0) + 1e-8
    Xtr, Xte = (X[train_idx] - mu) / sd, (X[test_idx] - mu) / sd
    ytr = y[train_idx]
    params = {"w": np.zeros((X.shape[1], n_classes)), "b": np.zeros(n_classes)}
    state = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(Xtr))
        for s in range(0, len(order), batch):
            idx = order[s:s + batch]
            z = Xtr[idx] @ params["w"] + params["b"]
            _, g = softmax_cross_entropy(z, ytr[idx])
            grads = {"w": Xtr[idx].T @ g + l2 * params["w"], "b": g.sum(axis=0)}
            adam_step(params, grads, state)
    pred = np.argmax(Xte @ params["w"] + params["b"], axis=1)
    return ProbeResult(layer, float(np.mean(pred == y[test_idx])), n_classes)


def probe_layers(checkpoint, images, labels, train_idx, test_idx, layers=None, **kw) -> List[ProbeResult]:
    """Linear probe on every tower layer (or the given subset)."""
    net = load_model(checkpoint)
    layers = tower_layers(net) if layers is None else list(layers)
    feats = layer_features(net, images, layers)
    return [linear_probe(feats[layer], labels, train_idx, test_idx, layer=layer, **kw) for layer in layers]


def _png_b64(rgb):
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def contact_sheet(index: FeatureIndex, queries: Sequence[str], k, thumbnails=None, fmt="html"):
    """Render query rows with their k nearest neighbours as HTML or plain text.

    ``thumbnails`` optionally maps id -> (H, W, 3) uint8 image (HTML only).
    """
    rows = [(q, knn(index, q, k + 1)[1:]) for q in queries]
    if fmt == "text":
        lines = []
        for q, nb in rows:
            lines.append(f"{q}: " + "  ".join(f"{i} ({d:.4f})" for i, d in nb))
        return "\n".join(lines) + "\n"
    cells = []
    for q, nb in rows:
        tds = []
        for item, d in [(q, 0.0)] + nb:
            img = ""
            if thumbnails is not None and item in thumbnails:
                img = f'<img src="data:image/png;base64,{_png_b64(thumbnails[item])}"><br>'
            tds.append(f"<td>{img}{html.escape(item)}<br>{d:.4f}</td>")
        cells.append("<tr>" + "".join(tds) + "</tr>")
    return ("<!doctype html><html><body><table border=1>" + "".join(cells) +
            "</table></body></html>\n")


def write_probe_report(path, results, extra=None):
    obj = {"results": [r.to_json() for r in results]}
    if extra:
        obj.update(extra)
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
    return obj
