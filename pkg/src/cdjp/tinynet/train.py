"""Training loop: batches -> forward -> losses -> backward -> ADAM."""

import csv
from dataclasses import asdict, dataclass

import numpy as np

from ..codebook import ColorCodebook
from ..errors import ManifestMismatch, NonFiniteLoss
from ..losses import combined_loss
from ..permutation import PermutationSet
from ..puzzlegen import GenConfig, make_sample, sample_seed
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .model import NetConfig, TinyNet, batch_arrays

METRIC_FIELDS = ("step", "lr", "l_jig", "l_inp", "l_col", "l_final", "jigsaw_acc")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    decay_every: int = 100_000
    alpha: float = 0.01
    beta: float = 0.01
    seed: int = 0
    init_seed: int = 0


class ListSource:
    """Fixed pre-generated samples (e.g. loaded from shards)."""

    def __init__(self, samples, seed=0):
        self.samples = samples
        self.seed = seed

    def batch(self, step, size):
        rng = np.random.default_rng([self.seed, step])
        n = len(self.samples)
        idx = rng.choice(n, size=size, replace=n < size)
        return [self.samples[int(i)] for i in idx]


class OnlineSource:
    """Draws a fresh damaged puzzle per batch slot from a list of Lab images."""

    def __init__(self, images, mode, pset, cb, gen_cfg: GenConfig, seed=0):
        self.images, self.mode, self.pset, self.cb, self.gen_cfg = images, mode, pset, cb, gen_cfg
        self.seed = seed

    def batch(self, step, size):
        rng = np.random.default_rng([self.seed, step])
        idx = rng.integers(0, len(self.images), size=size)
        return [make_sample(self.images[int(i)], self.mode, self.pset, self.cb, self.gen_cfg,
                            sample_seed(self.seed, step, j)) for j, i in enumerate(idx)]


def check_manifest(manifest, cb: ColorCodebook, pset: PermutationSet):
    if manifest.get("codebook_hash") not in (None, cb.digest()):
        raise ManifestMismatch("shard was generated with a different codebook")
    if manifest.get("permset_hash") not in (None, pset.digest()):
        raise ManifestMismatch("shard was generated with a different permutation set")


class Trainer:
    def __init__(self, net: TinyNet, cb: ColorCodebook, pset: PermutationSet, cfg: TrainConfig, mode="cdjp3"):
        self.net, self.cb, self.pset, self.cfg, self.mode = net, cb, pset, cfg, mode
        self.adam = AdamState(lr=cfg.lr, decay_every=cfg.decay_every)
        self.weights = cb.weights.astype(net.dtype)
        self.history = []

    @property
    def step(self):
        return self.adam.step

    def compute(self, samples):
        """Forward pass and losses for a list of samples; returns (bundle, heads, labels)."""
        x, perm, labels, inp_t, col_t, col_mask = batch_arrays(samples, self.net.cfg, self.pset, self.cb.Q,
                                                               self.net.dtype)
        heads = self.net.forward(x, perm)
        bundle = combined_loss(heads, labels, inp_t, col_t, self.weights, self.cfg.alpha, self.cfg.beta, col_mask)
        return bundle, heads, labels

    def train_step(self, source):
        step = self.adam.step
        lr = self.adam.lr_at(step)
        samples = source.batch(step, self.cfg.batch_size)
        bundle, heads, labels = self.compute(samples)
        if not np.isfinite(bundle.l_final):
            raise NonFiniteLoss(f"non-finite loss at step {step}")
        grads = self.net.backward(bundle.grads)
        adam_step(self.net.params, grads, self.adam)
        acc = float(np.mean(np.argmax(heads["jigsaw"], axis=1) == labels))
        row = {"step": step, "lr": lr, "l_jig": bundle.l_jig, "l_inp": bundle.l_inp_cls,
               "l_col": bundle.l_col, "l_final": bundle.l_final, "jigsaw_acc": acc}
        self.history.append(row)
        return row

    def run(self, source, steps=None, metrics_path=None, callback=None):
        steps = self.cfg.steps - self.step if steps is None else steps
        f = writer = None
        if metrics_path is not None:
            new = self.step == 0
            f = open(metrics_path, "w" if new else "a", newline="")
            writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
            if new:
                writer.writeheader()
        try:
            for _ in range(steps):
                row = self.train_step(source)
                if writer is not None:
                    writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
                if callback is not None:
                    callback(row)
        finally:
            if f is not None:
                f.close()
        return self.history

    def config(self):
        return {
            "mode": self.mode,
            "net": self.net.cfg.to_dict(),
            "train": asdict(self.cfg),
            "alpha": self.cfg.alpha,
            "beta": self.cfg.beta,
            "codebook_hash": self.cb.digest(),
            "permset_hash": self.pset.digest(),
            "step": self.step,
        }

    def save(self, path):
        return save_checkpoint(path, self.config(), self.net.params, self.adam)

    @classmethod
    def resume(cls, path, cb: ColorCodebook, pset: PermutationSet):
        config, params, step, moments = load_checkpoint(path)
        if config["codebook_hash"] != cb.digest() or config["permset_hash"] != pset.digest():
            raise ManifestMismatch("checkpoint was trained with a different codebook or permutation set")
        net = TinyNet(NetConfig.from_dict(config["net"]))
        net.params = params
        tr = cls(net, cb, pset, TrainConfig(**config["train"]), config["mode"])
        tr.adam.step = step
        if moments is not None:
            tr.adam.m, tr.adam.v = moments
        return tr


def net_config_for(mode, pset: PermutationSet, cb: ColorCodebook, gen_cfg: GenConfig, **kw):
    """Network shape matching a task mode and generator profile."""
    grid = 3 if mode == "cdjp3" else 2
    if mode == "cdjp3":
        base = dict(in_channels=1, heads=("jigsaw", "inpaint", "colorize"))
    else:
        base = dict(in_channels=3, heads=("jigsaw",))
    base.update(n_pieces=grid * grid, K=len(pset), Q=cb.Q, patch=gen_cfg.patch_size(grid))
    base.update(kw)
    return NetConfig(**base)


def train(source, net_cfg: NetConfig, cfg: TrainConfig, cb, pset, mode="cdjp3", checkpoint=None,
          metrics_path=None, manifest=None):
    """Train from scratch; optionally write a checkpoint and a metrics CSV."""
    if manifest is not None:
        check_manifest(manifest, cb, pset)
    tr = Trainer(TinyNet(net_cfg, seed=cfg.init_seed), cb, pset, cfg, mode)
    tr.run(source, metrics_path=metrics_path)
    if checkpoint is not None:
        tr.save(checkpoint)
    return tr
