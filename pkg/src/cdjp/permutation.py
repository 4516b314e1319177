"""Piece permutations and permutation sets used as jigsaw class labels."""

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError, LengthMismatch, Unsupported


@dataclass(frozen=True)
class Permutation:
    """Slot ``i`` shows original piece ``mapping[i]``."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(v) for v in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ValueError(f"not a permutation: {m}")
        object.__setattr__(self, "mapping", m)

    def __len__(self):
        return len(self.mapping)

    @classmethod
    def identity(cls, n):
        return cls(tuple(range(n)))


def apply(p: Permutation, items):
    """``out[i] = items[p.mapping[i]]``. numpy arrays are indexed along axis 0."""
    if len(items) != len(p):
        raise LengthMismatch(f"{len(items)} items for a {len(p)}-permutation")
    if isinstance(items, np.ndarray):
        return items[list(p.mapping)]
    out = [items[j] for j in p.mapping]
    return tuple(out) if isinstance(items, tuple) else out


def inverse(p: Permutation) -> Permutation:
    inv = [0] * len(p)
    for i, j in enumerate(p.mapping):
        inv[j] = i
    return Permutation(tuple(inv))


def compose(p: Permutation, q: Permutation) -> Permutation:
    """The permutation equivalent to ``apply(p, apply(q, x))``."""
    if len(p) != len(q):
        raise LengthMismatch("permutations differ in length")
    return Permutation(tuple(q.mapping[j] for j in p.mapping))


def hamming(p: Permutation, q: Permutation) -> int:
    if len(p) != len(q):
        raise LengthMismatch("permutations differ in length")
    return sum(a != b for a, b in zip(p.mapping, q.mapping))


@dataclass
class PermutationSet:
    n_pieces: int
    perms: np.ndarray                    # (K, n) uint8, row i is permutation id i
    meta: dict = field(default_factory=dict)
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.perms = np.ascontiguousarray(self.perms, dtype=np.uint8)
        self.index = {tuple(int(v) for v in row): i for i, row in enumerate(self.perms)}
        if len(self.index) != len(self.perms):
            raise ValueError("duplicate permutations in set")

    def __len__(self):
        return len(self.perms)

    @property
    def K(self):
        return len(self.perms)

    def __getitem__(self, i) -> Permutation:
        return Permutation(tuple(int(v) for v in self.perms[i]))

    def id_of(self, p: Permutation) -> int:
        return self.index[p.mapping]

    def to_json(self):
        return {"n_pieces": self.n_pieces, "perms": self.perms.tolist(), **self.meta}

    @classmethod
    def from_json(cls, obj):
        try:
            meta = {k: v for k, v in obj.items() if k not in ("n_pieces", "perms")}
            return cls(int(obj["n_pieces"]), np.asarray(obj["perms"], dtype=np.uint8), meta)
        except (KeyError, ValueError, TypeError) as e:
            raise FormatError(f"bad permutation set json: {e}") from e

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


def full_set(n_pieces=4) -> PermutationSet:
    if n_pieces != 4:
        raise Unsupported("the full set is only built for 2x2 puzzles (n_pieces=4)")
    perms = np.array(list(itertools.permutations(range(n_pieces))), dtype=np.uint8)
    return PermutationSet(n_pieces, perms, {"kind": "full"})


def _sample_pool(rng, n, size):
    return np.ascontiguousarray(rng.permuted(np.tile(np.arange(n, dtype=np.uint8), (size, 1)), axis=1))


def greedy_max_hamming_set(n_pieces=9, k=1000, seed=0, pool_size=10_000) -> PermutationSet:
    """Greedy max-min Hamming selection.

    Each step draws a fresh pool of uniformly random permutations and keeps
    the candidate whose minimum Hamming distance to the already-chosen set
    is largest; ties go to the lexicographically smallest mapping.
    """
    if k > np.prod(np.arange(1, n_pieces + 1, dtype=np.float64)):
        raise ValueError("k exceeds n!")
    rng = np.random.default_rng(seed)
    chosen = np.empty((k, n_pieces), dtype=np.uint8)
    chosen[0] = _sample_pool(rng, n_pieces, 1)[0]
    for step in range(1, k):
        pool = _sample_pool(rng, n_pieces, pool_size)
        d = kernels.min_hamming(pool, chosen[:step])
        best = d.max()
        cand = pool[d == best]
        # lexicographic minimum over rows
        order = np.lexsort(cand.T[::-1])
        chosen[step] = cand[order[0]]
    return PermutationSet(n_pieces, chosen, {"kind": "greedy", "seed": seed, "pool_size": pool_size})


def min_pairwise_hamming(perms):
    """Minimum Hamming distance over all pairs of rows."""
    perms = np.asarray(perms, dtype=np.uint8)
    best = perms.shape[1]
    for i in range(1, len(perms)):
        d = (perms[:i] != perms[i]).sum(axis=1).min()
        best = min(best, int(d))
    return best
