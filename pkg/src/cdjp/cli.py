"""Command line entry point: ``cdjp <command> ...``.

Exit codes: 0 ok, 2 config error, 3 IO/format error, 4 numeric failure,
5 manifest mismatch. Errors are reported as one JSON object on stderr.
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .codebook import ColorCodebook, build_codebook, fit_rebalance
from .colorspace import LabImage, lab_to_rgb, l_to_gray_rgb
from .errors import CDJPError, ConfigError, ConfigMismatch, ManifestMismatch
from .evalkit import contact_sheet, extract_features, knn, load_model, probe_layers, write_probe_report
from .permutation import PermutationSet, full_set, greedy_max_hamming_set
from .pipeline import generate_shards, list_images, load_lab, worker_count
from .puzzlegen import GenConfig, grid_of
from .shards import Shard, read_manifest
from .tinynet import ListSource, OnlineSource, TinyNet, Trainer, TrainConfig, net_config_for

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib


def _emit(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


def _file_hash(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _load_pset(path):
    return None if path is None else PermutationSet.load(path)


def _load_images(folder, size, limit=None):
    paths = list_images(folder)
    if limit:
        paths = paths[:limit]
    return [p.stem for p in paths], [load_lab(p, size) for p in paths]


# -- codebook / permset ------------------------------------------------------

def cmd_codebook(args):
    if args.action == "build":
        cb = build_codebook(args.step, args.stride)
    else:
        if not args.codebook or not args.images:
            raise ConfigError("codebook fit needs --codebook and --images")
        base = ColorCodebook.load(args.codebook)
        size = GenConfig.profile(args.profile).image_size
        _, imgs = _load_images(args.images, size, args.limit)
        cb = fit_rebalance(base, imgs, lam=args.lam, smooth_sigma=args.sigma)
    cb.save(args.out)
    _emit({"out": str(args.out), "Q": cb.Q, "hash": cb.digest(), "meta": cb.meta})


def cmd_permset(args):
    if args.pieces == 4:
        ps = full_set(4)
    else:
        ps = greedy_max_hamming_set(args.pieces, args.k, seed=args.seed, pool_size=args.pool)
    ps.save(args.out)
    _emit({"out": str(args.out), "K": len(ps), "n_pieces": ps.n_pieces, "hash": ps.digest()})


def cmd_synth(args):
    from PIL import Image

    from .synth import make_corpus

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    imgs, labels = make_corpus(args.n, size=args.size, seed=args.seed)
    width = len(str(max(args.n - 1, 1)))
    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label"])
        for i, (img, lab) in enumerate(zip(imgs, labels)):
            name = f"img{i:0{width}d}"
            Image.fromarray(img.data).save(out / f"{name}.png")
            w.writerow([name, int(lab)])
    _emit({"out": str(out), "count": args.n, "classes": int(np.max(labels)) + 1})


# -- generate ------------------------------------------------------------------

def _gen_config(profile, jitter=None):
    kw = {} if jitter is None else {"jitter": jitter}
    return GenConfig.profile(profile, **kw)


def cmd_generate(args):
    cb = ColorCodebook.load(args.codebook)
    pset = _load_pset(args.permset)
    cfg = _gen_config(args.profile, args.jitter).with_noise_from(cb)
    needs = args.mode.startswith("jigsaw2") or args.mode == "cdjp3"
    if needs and pset is None:
        raise ConfigError(f"mode {args.mode} needs --permset")
    if pset is not None and needs and pset.n_pieces != grid_of(args.mode) ** 2:
        raise ConfigMismatch(f"permutation set has {pset.n_pieces} pieces, mode {args.mode} needs "
                             f"{grid_of(args.mode) ** 2}")
    ids, imgs = _load_images(args.images, cfg.image_size, args.limit)
    paths, secs = generate_shards(imgs, ids, args.mode, pset, cb, cfg, args.out, args.shards, args.per_image,
                                  args.seed, worker_count(args.workers), args.profile,
                                  {"codebook_path": str(Path(args.codebook).resolve()),
                                   "permset_path": None if args.permset is None else str(Path(args.permset).resolve())})
    n = len(imgs) * args.per_image
    _emit({"shards": [str(p) for p in paths], "samples": n, "seconds": round(secs, 4),
           "samples_per_s": round(n / secs, 1) if secs > 0 else None, "backend": kernels.BACKEND})


# -- train ---------------------------------------------------------------------

TRAIN_KEYS = ("steps", "batch_size", "lr", "decay_every", "alpha", "beta", "seed", "init_seed")


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _merge(conf, args):
    out = dict(conf)
    for key in TRAIN_KEYS + ("mode", "profile", "codebook", "permset", "images", "checkpoint", "metrics",
                             "resume"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    if args.shards:
        out["shards"] = args.shards
    out.setdefault("mode", "cdjp3")
    out.setdefault("profile", "desk")
    for key in ("codebook", "permset"):
        if key not in out:
            raise ConfigError(f"train needs '{key}' (config file or --{key})")
    if not out.get("shards") and not out.get("images") and not out.get("resume"):
        raise ConfigError("train needs 'shards' or 'images'")
    return out


def _training_source(run, cb, pset, cfg):
    if run.get("shards"):
        samples = []
        for p in run["shards"]:
            m = read_manifest(p)
            if m.get("mode") != run["mode"]:
                raise ManifestMismatch(f"{p} holds {m.get('mode')} samples, training mode is {run['mode']}")
            if m.get("profile") != run["profile"]:
                raise ManifestMismatch(f"{p} was generated with profile {m.get('profile')}")
            if m.get("codebook_hash") != cb.digest():
                raise ManifestMismatch(f"{p} was generated with a different codebook")
            if pset is not None and m.get("permset_hash") != pset.digest():
                raise ManifestMismatch(f"{p} was generated with a different permutation set")
            samples.extend(Shard(p))
        return ListSource(samples, seed=run.get("seed", 0))
    _, imgs = _load_images(run["images"], cfg.image_size, run.get("limit"))
    return OnlineSource(imgs, run["mode"], pset, cb, cfg, seed=run.get("seed", 0))


def cmd_train(args):
    run = _merge(_read_config(args.config), args)
    cb = ColorCodebook.load(run["codebook"])
    pset = PermutationSet.load(run["permset"])
    cfg = _gen_config(run["profile"]).with_noise_from(cb)
    if run.get("resume"):
        tr = Trainer.resume(run["resume"], cb, pset)
        if tr.mode != run["mode"]:
            raise ManifestMismatch(f"checkpoint was trained on {tr.mode}")
    else:
        tcfg = TrainConfig(**{k: run[k] for k in TRAIN_KEYS if k in run})
        net_cfg = net_config_for(run["mode"], pset, cb, cfg, **run.get("net", {}))
        tr = Trainer(TinyNet(net_cfg, seed=tcfg.init_seed), cb, pset, tcfg, run["mode"])
    if run.get("steps") is not None:
        tr.cfg.steps = int(run["steps"])
    dump = tr.config()
    dump.update({"profile": run["profile"], "codebook": run["codebook"], "permset": run["permset"],
                 "checkpoint": run.get("checkpoint"), "metrics": run.get("metrics")})
    source = _training_source(run, cb, pset, cfg)
    print(json.dumps({"config": dump}, sort_keys=True), flush=True)
    remaining = max(tr.cfg.steps - tr.step, 0)
    tr.run(source, steps=remaining, metrics_path=run.get("metrics"))
    if run.get("checkpoint"):
        tr.save(run["checkpoint"])
    last = tr.history[-1] if tr.history else {}
    _emit({"step": tr.step, "last": last, "checkpoint": run.get("checkpoint")})


# -- eval ----------------------------------------------------------------------

def _read_labels(path):
    with open(path, newline="") as f:
        return {row["id"]: int(row["label"]) for row in csv.DictReader(f)}


def _eval_model(args):
    net = load_model(args.checkpoint)
    if getattr(args, "random_init", False):
        net = TinyNet(net.cfg, seed=args.init_seed)
    return net


def cmd_eval(args):
    net = _eval_model(args)
    size = GenConfig.profile(args.profile).image_size
    ids, imgs = _load_images(args.images, size, args.limit)
    if args.action == "nn":
        index = extract_features(net, imgs, args.layer, ids=ids, metric=args.metric)
        if args.index:
            index.save(args.index)
        queries = args.queries.split(",") if args.queries else ids[:args.n_queries]
        report = {"layer": args.layer, "metric": args.metric, "k": args.k, "checkpoint": str(args.checkpoint),
                  "checkpoint_hash": _file_hash(args.checkpoint), "random_init": bool(args.random_init),
                  "queries": {}}
        for q in queries:
            report["queries"][q] = [{"id": i, "distance": d} for i, d in knn(index, q, args.k + 1)[1:]]
        if args.html:
            thumbs = {i: lab_to_rgb(im).data for i, im in zip(ids, imgs)}
            Path(args.html).write_text(contact_sheet(index, queries, args.k, thumbs, "html"))
        if args.text:
            Path(args.text).write_text(contact_sheet(index, queries, args.k, fmt="text"))
        if args.out:
            Path(args.out).write_text(json.dumps(report, indent=1))
        _emit(report)
        return
    labels_map = _read_labels(args.labels)
    missing = [i for i in ids if i not in labels_map]
    if missing:
        raise ConfigError(f"{len(missing)} images have no label, e.g. {missing[0]}")
    labels = np.array([labels_map[i] for i in ids])
    order = np.random.default_rng(args.split_seed).permutation(len(ids))
    cut = int(round(args.train_frac * len(ids)))
    layers = args.layers.split(",") if args.layers else None
    res = probe_layers(net, imgs, labels, order[:cut], order[cut:], layers=layers, epochs=args.epochs,
                       seed=args.seed)
    extra = {"checkpoint": str(args.checkpoint), "checkpoint_hash": _file_hash(args.checkpoint),
             "random_init": bool(args.random_init), "n_train": cut,
             "n_test": len(ids) - cut}
    obj = write_probe_report(args.out, res, extra) if args.out else {"results": [r.to_json() for r in res], **extra}
    _emit(obj)


# -- inspect -------------------------------------------------------------------

def _roughness(l):
    return float(np.mean(np.abs(np.diff(l, axis=1)))) if l.shape[1] > 1 else 0.0


def _render_patch(p: LabImage):
    if p.ab is not None and p.has_l:
        return lab_to_rgb(p).data
    if p.ab is not None:
        return lab_to_rgb(LabImage(np.full_like(p.l, 60.0), p.ab)).data
    return l_to_gray_rgb(p.l)


def _render_target(grid, cb, l, size):
    ab = cb.bins[grid.argmax_bins()]                       # (S, S, 2)
    reps = -(-size // grid.S)
    up = np.repeat(np.repeat(ab, reps, axis=0), reps, axis=1)[:size, :size]
    return lab_to_rgb(LabImage(l.astype(np.float32), up.transpose(2, 0, 1).astype(np.float32))).data


def cmd_inspect(args):
    from PIL import Image

    sh = Shard(args.shard)
    if not 0 <= args.index < len(sh):
        raise ConfigError(f"index {args.index} out of range for {len(sh)} samples")
    s = sh[args.index]
    cb = None
    cb_path = args.codebook
    if cb_path is None:
        try:
            cb_path = read_manifest(args.shard).get("codebook_path")
        except ManifestMismatch:
            cb_path = None
    if cb_path is not None and Path(cb_path).exists():
        cb = ColorCodebook.load(cb_path)
    grid = int(round(np.sqrt(len(s.patches)))) if len(s.patches) > 1 else 1
    tiles = [_render_patch(p) for p in s.patches]
    size = max(t.shape[0] for t in tiles)
    gap = 4
    rows = 2 if cb is not None and any(t is not None for t in s.color_targets) else 1
    side = grid * size + (grid - 1) * gap
    canvas = np.full((side, rows * side + (rows - 1) * gap * 3, 3), 255, np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, grid)
        canvas[r * (size + gap):r * (size + gap) + t.shape[0], c * (size + gap):c * (size + gap) + t.shape[1]] = t
    if rows == 2:
        x0 = side + gap * 3
        for i, (p, g) in enumerate(zip(s.patches, s.color_targets)):
            if g is None:
                continue
            # original L where the input still has it, mid-gray lightness for the discarded piece
            l = p.l if p.has_l and i != s.missing_index else np.full(p.l.shape, 60.0)
            r, c = divmod(i, grid)
            t = _render_target(g, cb, l, p.l.shape[0])
            canvas[r * (size + gap):r * (size + gap) + t.shape[0],
                   x0 + c * (size + gap):x0 + c * (size + gap) + t.shape[1]] = t
    Image.fromarray(canvas).save(args.out)
    patches = [{"slot": i, "has_l": p.has_l, "has_ab": p.ab is not None, "roughness": round(_roughness(p.l), 4),
                "noise_filled": i == s.missing_index} for i, p in enumerate(s.patches)]
    summary = {"shard": str(args.shard), "index": args.index, "mode": s.mode, "perm_id": s.perm_id,
               "missing_index": s.missing_index, "n_patches": len(s.patches),
               "noise_patches": [p["slot"] for p in patches if p["noise_filled"]], "patches": patches,
               "montage": str(args.out), "targets_rendered": rows == 2}
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=1))
    _emit(summary)


# -- parser ----------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="cdjp", description="Damaged jigsaw puzzle pretext-task toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", help="build or fit the ab color codebook")
    p.add_argument("action", choices=["build", "fit"])
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--codebook", help="codebook to fit (fit only)")
    p.add_argument("--images", help="image folder (fit only)")
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("permset", help="build a permutation set")
    p.add_argument("--pieces", type=int, choices=[4, 9], default=9)
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_permset)

    p = sub.add_parser("synth", help="write a labelled synthetic image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("generate", help="generate sample shards")
    p.add_argument("--images", required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--codebook", required=True)
    p.add_argument("--permset")
    p.add_argument("--out", required=True)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--per-image", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--workers", type=int, help="default: $CDJP_WORKERS or the CPU count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the reference network")
    p.add_argument("--config", help="TOML run config; flags override it")
    p.add_argument("--mode")
    p.add_argument("--profile", choices=["paper", "desk"])
    p.add_argument("--codebook")
    p.add_argument("--permset")
    p.add_argument("--shards", nargs="*")
    p.add_argument("--images")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay-every", dest="decay_every", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", dest="init_seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--metrics")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="nearest neighbours or linear probes on frozen features")
    p.add_argument("action", choices=["nn", "probe"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--limit", type=int)
    p.add_argument("--random-init", action="store_true", help="evaluate a fresh network of the same shape")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--layer", default="conv5")
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--queries", help="comma-separated ids")
    p.add_argument("--n-queries", type=int, default=8)
    p.add_argument("--index", help="write the feature index here")
    p.add_argument("--html")
    p.add_argument("--text")
    p.add_argument("--labels", help="CSV with id,label (probe)")
    p.add_argument("--layers", help="comma-separated tower layers (probe)")
    p.add_argument("--train-frac", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="render one shard sample as a PNG montage")
    p.add_argument("--shard", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--codebook")
    p.add_argument("--json")
    p.set_defaults(func=cmd_inspect)
    return ap


def _fail(exc, code):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "eval" and args.action == "probe" and not args.labels:
        return _fail(ConfigError("eval probe needs --labels"), 2)
    try:
        args.func(args)
    except CDJPError as e:
        return _fail(e, e.exit_code)
    except (FileNotFoundError, IsADirectoryError, PermissionError, json.JSONDecodeError, UnicodeDecodeError) as e:
        return _fail(e, 3)
    except OSError as e:
        return _fail(e, 3)
    except FloatingPointError as e:
        return _fail(e, 4)
    except (ValueError, KeyError, TypeError) as e:
        return _fail(e, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
