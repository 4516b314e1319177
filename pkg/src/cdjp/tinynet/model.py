"""Siamese tower with jigsaw, inpainting and colorization heads."""

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..codebook import dense_targets
from ..errors import NoForwardCache, NonFiniteActivation, ShapeMismatch
from ..permutation import PermutationSet
from ..puzzlegen import PuzzleSample, normalized_inputs
from .layers import Conv2d, Dense, GlobalAvgPool, ReLU, arrange, arrange_backward

ALL_HEADS = ("jigsaw", "inpaint", "colorize")


@dataclass(frozen=True)
class NetConfig:
    n_pieces: int = 9
    K: int = 1000
    Q: int = 313
    patch: int = 26
    in_channels: int = 1
    widths: Sequence[int] = (16, 32, 64, 64, 64)
    strides: Sequence[int] = (2, 2, 2)
    kernel: int = 3
    jig_fc8: int = 64
    jig_fc9: int = 256
    inp_conv8: int = 32
    inp_conv9: int = 128
    col_conv8: int = 128
    heads: Sequence[str] = ALL_HEADS
    share_colorize: bool = True       # False: one colorization branch per patch position
    dtype: str = "float32"

    def to_dict(self):
        d = asdict(self)
        for key in ("widths", "strides", "heads"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("share_colorize", True)
        for key in ("widths", "strides", "heads"):
            d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def micro(cls, **kw):
        """Tiny widths for gradient checks."""
        base = dict(widths=(3, 4, 5, 6, 6), jig_fc8=4, jig_fc9=8, inp_conv8=3, inp_conv9=5, col_conv8=5)
        base.update(kw)
        return cls(**base)

    @property
    def S(self):
        h = self.patch
        for s in self.strides:
            h = (h + 2 * (self.kernel // 2) - self.kernel) // s + 1
        return h


@dataclass
class Cache:
    B: int
    perm: np.ndarray
    inv: np.ndarray
    feats: np.ndarray = field(repr=False)


class TinyNet:
    """Shared conv tower over every patch plus the three task branches.

    Tower: ``len(strides)`` k x k strided convs then 1x1 convs, ReLU after
    each. The tower, the per-patch jigsaw fc8 and the colorization branch
    hold a single set of weights reused for all pieces.
    """

    def __init__(self, cfg: NetConfig, seed=0):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.tower = []
        c = cfg.in_channels
        pad = cfg.kernel // 2
        for i, w in enumerate(cfg.widths):
            name = f"conv{i + 1}"
            if i < len(cfg.strides):
                self.tower.append(Conv2d(name, c, w, cfg.kernel, cfg.strides[i], pad))
            else:
                self.tower.append(Conv2d(name, c, w, 1))
            self.tower.append(ReLU(f"{name}.relu"))
            c = w
        self.feat_dim = c
        n, Q = cfg.n_pieces, cfg.Q
        self.layers = {}
        if "jigsaw" in cfg.heads:
            self.layers["jigsaw"] = [
                GlobalAvgPool("jig.pool"),
                Dense("fc8", c, cfg.jig_fc8), ReLU("fc8.relu"),
                # reshape (B*n, D) -> (B, n*D) happens here
                Dense("fc9", n * cfg.jig_fc8, cfg.jig_fc9), ReLU("fc9.relu"),
                Dense("fc10", cfg.jig_fc9, cfg.K),
            ]
        if "inpaint" in cfg.heads:
            self.layers["inpaint"] = [
                Conv2d("inp.conv8", c, cfg.inp_conv8, 1), ReLU("inp.conv8.relu"),
                # arrange + concat here
                Conv2d("inp.conv9", n * cfg.inp_conv8, cfg.inp_conv9, 1), ReLU("inp.conv9.relu"),
                Conv2d("inp.conv10", cfg.inp_conv9, Q, 1),
            ]
        if "colorize" in cfg.heads:
            tags = ["col"] if cfg.share_colorize else [f"col{i}" for i in range(n)]
            self.col_branches = [[Conv2d(f"{t}.conv8", c, cfg.col_conv8, 1), ReLU(f"{t}.conv8.relu"),
                                  Conv2d(f"{t}.conv9", cfg.col_conv8, Q, 1)] for t in tags]
            self.layers["colorize"] = [lay for br in self.col_branches for lay in br]
        self.params = self._init_params(seed)
        self._cache = None

    # -- parameters ---------------------------------------------------------

    def _param_layers(self):
        for lay in self.tower:
            yield "tower", lay
        for head, lays in self.layers.items():
            for lay in lays:
                yield head, lay

    def param_groups(self):
        """Parameter name -> owning group ("tower" or a head name)."""
        out = {}
        for group, lay in self._param_layers():
            if hasattr(lay, "param_shapes"):
                for name in lay.param_shapes():
                    out[name] = group
        return out

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        outputs = {"fc10", "inp.conv10", "col.conv9"} | {f"col{i}.conv9" for i in range(self.cfg.n_pieces)}
        params = {}
        for _, lay in self._param_layers():
            if not hasattr(lay, "param_shapes"):
                continue
            for name, shape in lay.param_shapes().items():
                if name.endswith(".b"):
                    params[name] = np.zeros(shape, dtype=self.dtype)
                else:
                    fan_in = int(np.prod(shape[1:]))
                    gain = 1.0 if lay.name in outputs else 2.0
                    params[name] = (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(self.dtype)
        return params

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self, group=None):
        groups = self.param_groups()
        return sum(v.size for k, v in self.params.items() if group is None or groups[k] == group)

    # -- forward / backward -------------------------------------------------

    def tower_forward(self, x, upto=None, keep_cache=True):
        """Run the tower on (N, C, H, W); stop after layer ``upto`` (e.g. "conv3")."""
        h = x
        for lay in self.tower:
            h = lay.forward(self.params, h)
            if not keep_cache:
                lay._cache = None
            if upto is not None and lay.name == f"{upto}.relu":
                return h
        return h

    def forward(self, x, perm):
        """``x``: (B, n, C, P, P) inputs in slot order; ``perm``: (B, n) slot -> piece.

        Returns a dict of head outputs: jigsaw (B, K), inpaint (B, S, S, Q),
        colorize (B, n, S, S, Q).
        """
        cfg = self.cfg
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 5 or x.shape[1:] != (cfg.n_pieces, cfg.in_channels, cfg.patch, cfg.patch):
            raise ShapeMismatch(f"input {x.shape} does not fit {cfg}")
        B, n = x.shape[:2]
        perm = np.asarray(perm, dtype=np.int64).reshape(B, n)
        inv = np.argsort(perm, axis=1)
        feats = self.tower_forward(x.reshape(B * n, *x.shape[2:]))
        S = feats.shape[-1]
        out = {}
        if "jigsaw" in self.layers:
            pool, fc8, r8, fc9, r9, fc10 = self.layers["jigsaw"]
            h = r8.forward(self.params, fc8.forward(self.params, pool.forward(self.params, feats)))
            h = h.reshape(B, -1)
            h = r9.forward(self.params, fc9.forward(self.params, h))
            out["jigsaw"] = fc10.forward(self.params, h)
        if "inpaint" in self.layers:
            c8, r8, c9, r9, c10 = self.layers["inpaint"]
            h = r8.forward(self.params, c8.forward(self.params, feats))
            h = arrange(h.reshape(B, n, -1, S, S), inv).reshape(B, -1, S, S)
            h = r9.forward(self.params, c9.forward(self.params, h))
            out["inpaint"] = c10.forward(self.params, h).transpose(0, 2, 3, 1)
        if "colorize" in self.layers:
            if cfg.share_colorize:
                parts = [feats]
            else:
                f5 = feats.reshape(B, n, -1, S, S)
                parts = [np.ascontiguousarray(f5[:, i]) for i in range(n)]
            outs = []
            for (c8, r8, c9), f in zip(self.col_branches, parts):
                outs.append(c9.forward(self.params, r8.forward(self.params, c8.forward(self.params, f))))
            h = outs[0].reshape(B, n, cfg.Q, S, S) if cfg.share_colorize else np.stack(outs, axis=1)
            out["colorize"] = h.transpose(0, 1, 3, 4, 2)
        for name, v in out.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteActivation(f"non-finite values in {name} head")
        self._cache = Cache(B, perm, inv, feats)
        return out

    def backward(self, head_grads):
        """Gradients of every parameter given gradients w.r.t. head outputs."""
        if self._cache is None:
            raise NoForwardCache("backward called without a fresh forward pass")
        c, self._cache = self._cache, None
        cfg = self.cfg
        B, n = c.B, cfg.n_pieces
        S = c.feats.shape[-1]
        grads = self.zero_grads()
        dfeats = np.zeros_like(c.feats)
        if "colorize" in self.layers:
            g = head_grads.get("colorize")
            g = np.zeros((B, n, S, S, cfg.Q), self.dtype) if g is None else np.asarray(g, self.dtype)
            g = np.ascontiguousarray(g.transpose(0, 1, 4, 2, 3))
            if cfg.share_colorize:
                c8, r8, c9 = self.col_branches[0]
                g = g.reshape(B * n, cfg.Q, S, S)
                dfeats += c8.backward(self.params, grads, r8.backward(self.params, grads,
                                                                        c9.backward(self.params, grads, g)))
            else:
                d5 = dfeats.reshape(B, n, -1, S, S)
                for i, (c8, r8, c9) in enumerate(self.col_branches):
                    gi = np.ascontiguousarray(g[:, i])
                    d5[:, i] += c8.backward(self.params, grads, r8.backward(self.params, grads,
                                                                              c9.backward(self.params, grads, gi)))
        if "inpaint" in self.layers:
            c8, r8, c9, r9, c10 = self.layers["inpaint"]
            g = head_grads.get("inpaint")
            g = np.zeros((B, S, S, cfg.Q), self.dtype) if g is None else np.asarray(g, self.dtype)
            g = np.ascontiguousarray(g.transpose(0, 3, 1, 2))
            g = r9.backward(self.params, grads, c10.backward(self.params, grads, g))
            g = c9.backward(self.params, grads, g)
            g = arrange_backward(g.reshape(B, n, -1, S, S), c.perm).reshape(B * n, -1, S, S)
            dfeats += c8.backward(self.params, grads, r8.backward(self.params, grads, g))
        if "jigsaw" in self.layers:
            pool, fc8, r8, fc9, r9, fc10 = self.layers["jigsaw"]
            g = head_grads.get("jigsaw")
            g = np.zeros((B, cfg.K), self.dtype) if g is None else np.asarray(g, self.dtype)
            g = r9.backward(self.params, grads, fc10.backward(self.params, grads, g))
            g = fc9.backward(self.params, grads, g).reshape(B * n, -1)
            g = fc8.backward(self.params, grads, r8.backward(self.params, grads, g))
            dfeats += pool.backward(self.params, grads, g)
        g = dfeats
        for lay in reversed(self.tower):
            g = lay.backward(self.params, grads, g)
        return grads


def batch_arrays(samples: Sequence[PuzzleSample], net_cfg: NetConfig, pset: PermutationSet, weights_q: int,
                 dtype=np.float32):
    """Stack samples into network inputs, permutations and dense targets."""
    x = np.stack([normalized_inputs(s, net_cfg.in_channels, dtype) for s in samples])
    perm = pset.perms[[s.perm_id for s in samples]].astype(np.int64)
    labels = np.array([s.perm_id for s in samples], dtype=np.int64)
    inp_t = col_t = col_mask = None
    if "colorize" in net_cfg.heads or "inpaint" in net_cfg.heads:
        have = all(t is not None for s in samples for t in s.color_targets)
        if have:
            idx = np.stack([np.stack([t.indices for t in s.color_targets]) for s in samples])
            val = np.stack([np.stack([t.values for t in s.color_targets]) for s in samples])
            col_t = dense_targets(idx, val, weights_q, dtype)
            col_mask = np.ones(col_t.shape[:2], dtype=bool)
            miss = [s.missing_index for s in samples]
            if all(m is not None for m in miss):
                inp_t = col_t[np.arange(len(samples)), miss]
                col_mask[np.arange(len(samples)), miss] = False
    return x, perm, labels, inp_t, col_t, col_mask
