"""Compare the compiled and numpy kernel backends, plus end-to-end sample generation.

    python benchmarks/bench_kernels.py [--repeats 5]

Times are the best of ``--repeats`` runs.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from cdjp import kernels
from cdjp.codebook import build_codebook
from cdjp.colorspace import SRGB_TO_XYZ, WHITE_D65, XYZ_TO_SRGB


def _cases(rng, cb):
    rgb = rng.integers(0, 256, size=(96 * 96 * 4, 3), dtype=np.uint8)
    lab = kernels.get_backend("python").srgb_to_lab(rgb, SRGB_TO_XYZ, WHITE_D65)
    pts = rng.uniform(-90, 90, size=(9 * 16 * 20, 2))
    table = cb.cell_table()
    pool = np.stack([rng.permutation(9) for _ in range(10_000)]).astype(np.uint8)
    chosen = np.stack([rng.permutation(9) for _ in range(300)]).astype(np.uint8)
    x = rng.standard_normal((144, 16, 13, 13)).astype(np.float32)
    return {
        "srgb_to_lab 36k px": lambda m: m.srgb_to_lab(rgb, SRGB_TO_XYZ, WHITE_D65),
        "lab_to_srgb 36k px": lambda m: m.lab_to_srgb(lab, XYZ_TO_SRGB, WHITE_D65),
        "nearest_k k=5 2.9k pts": lambda m: m.nearest_k(pts, cb.bins, 5),
        "nearest_k_grid k=5 2.9k pts": lambda m: m.nearest_k_grid(pts, cb.bins, table, -110.0, cb.grid_step, 5),
        "min_hamming 10k x 300": lambda m: m.min_hamming(pool, chosen),
        "im2col f32 3x3/2": lambda m: m.im2col_f32(x, 3, 2, 1),
    }


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    cb = build_codebook()
    rows = []
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; python backend only", file=sys.stderr)
    for name, fn in _cases(rng, cb).items():
        row = {"kernel": name}
        for b, mod in backends.items():
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            row[b + "_ms"] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=repeats)) / n * 1e3
        if "cython_ms" in row:
            row["speedup"] = row["python_ms"] / row["cython_ms"]
        rows.append(row)
    return rows


_GEN = r"""
import json, sys, time
import numpy as np
from cdjp import kernels
from cdjp.codebook import build_codebook, fit_rebalance
from cdjp.colorspace import rgb_to_lab
from cdjp.permutation import greedy_max_hamming_set
from cdjp.puzzlegen import GenConfig, make_sample, sample_seed
from cdjp.shards import encode_sample
from cdjp.synth import make_corpus
imgs, _ = make_corpus(32, seed=0)
lab = [rgb_to_lab(i) for i in imgs]
cb = fit_rebalance(build_codebook(), lab)
ps = greedy_max_hamming_set(9, 100, seed=0, pool_size=1000)
cfg = GenConfig.desk().with_noise_from(cb)
best = 1e9
for rep in range(int(sys.argv[1])):
    t = time.perf_counter()
    for i in range(200):
        encode_sample(make_sample(lab[i % 32], "cdjp3", ps, cb, cfg, sample_seed(0, i)))
    best = min(best, (time.perf_counter() - t) / 200)
print(json.dumps({"backend": kernels.BACKEND, "samples_per_s": 1 / best}))
"""


def bench_generation(repeats):
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, CDJP_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", _GEN, str(repeats)], env=env, capture_output=True, text=True,
                             check=True)
        r = json.loads(res.stdout)
        out[r["backend"]] = r["samples_per_s"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    rows = bench_kernels(args.repeats)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:32s} {r['python_ms']:10.3f} {r.get('cython_ms', float('nan')):10.3f} "
              f"{r.get('speedup', float('nan')):8.1f}")
    gen = bench_generation(args.repeats)
    print("cdjp3 desk samples/s, one core: " + ", ".join(f"{k} {v:.0f}" for k, v in gen.items()))
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"kernels": rows, "generation": gen}, f, indent=1)


if __name__ == "__main__":
    main()
