"""Pretext-task objectives with analytic gradients w.r.t. head logits.

Spatial cells are summed, batches are averaged. Color logits are laid out
channel-last: (B, S, S, Q) per head.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadLabel, ShapeMismatch


def log_softmax(z, axis=-1):
    m = np.max(z, axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def softmax(z, axis=-1):
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def jigsaw_loss(logits, label):
    """Softmax cross-entropy over permutation classes.

    ``logits`` is (K,) or (B, K); ``label`` an int or (B,) ints.
    Returns the batch-mean loss and its gradient (same shape as logits).
    """
    z = np.asarray(logits)
    single = z.ndim == 1
    z2 = z[None] if single else z
    y = np.atleast_1d(np.asarray(label)).astype(np.int64)
    B, K = z2.shape
    if y.shape != (B,):
        raise ShapeMismatch(f"{y.shape[0]} labels for a batch of {B}")
    if np.any(y < 0) or np.any(y >= K):
        raise BadLabel(f"label out of range for K={K}")
    lp = log_softmax(z2)
    rows = np.arange(B)
    loss = -lp[rows, y].sum() / B
    grad = np.exp(lp)
    grad[rows, y] -= 1.0
    grad /= B
    return float(loss), (grad[0] if single else grad)


softmax_cross_entropy = jigsaw_loss


def inpaint_l2_loss(pred_ab, target_ab):
    """Squared Euclidean distance over the missing region; grad = 2 (pred - target)."""
    p = np.asarray(pred_ab)
    t = np.asarray(target_ab)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {t.shape}")
    d = p - t
    return float(np.sum(d * d)), 2.0 * d


def _cell_weights(targets, weights):
    # rebalancing weight looked up at each cell's most probable target bin
    return weights[np.argmax(targets, axis=-1)]


def rebalanced_color_loss(logits, targets, weights):
    """Class-rebalanced cross-entropy summed over cells.

    ``logits`` and ``targets`` are (S, S, Q) or (B, S, S, Q); ``targets``
    are dense distributions over the Q bins; ``weights`` is the (Q,)
    rebalancing vector (``ColorCodebook.weights``). Batch-averaged.
    """
    z = np.asarray(logits)
    t = np.asarray(targets, dtype=z.dtype)
    w = np.asarray(weights)
    if z.shape != t.shape:
        raise ShapeMismatch(f"logits {z.shape} vs targets {t.shape}")
    if z.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"Q={z.shape[-1]} logits for a {w.shape[0]}-bin codebook")
    single = z.ndim == 3
    if single:
        z, t = z[None], t[None]
    B = z.shape[0]
    cw = _cell_weights(t, w).astype(z.dtype)[..., None]
    lp = log_softmax(z)
    loss = -np.sum(cw * t * lp) / B
    grad = cw * (np.exp(lp) * t.sum(axis=-1, keepdims=True) - t) / B
    return float(loss), (grad[0] if single else grad)


def inpaint_cls_loss(logits, targets, weights):
    """Classification loss for the missing piece's colors; same math as the color loss."""
    return rebalanced_color_loss(logits, targets, weights)


def nine_patch_color_loss(logits, targets, weights, mask=None):
    """Sum of per-patch color losses.

    ``logits``/``targets``: (n, S, S, Q) or (B, n, S, S, Q). ``mask`` (same
    leading dims as patches) selects which patches count; masked-out
    patches contribute 0 loss and 0 gradient.
    """
    z = np.asarray(logits)
    t = np.asarray(targets, dtype=z.dtype)
    if z.shape != t.shape:
        raise ShapeMismatch(f"logits {z.shape} vs targets {t.shape}")
    single = z.ndim == 4
    if single:
        z, t = z[None], t[None]
        mask = None if mask is None else np.asarray(mask)[None]
    B, n = z.shape[:2]
    m = np.ones((B, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    parts = []
    grad = np.zeros_like(z)
    for i in range(n):
        rows = np.nonzero(m[:, i])[0]
        if rows.size == 0:
            continue
        li, gi = rebalanced_color_loss(z[rows, i], t[rows, i], weights)
        # per-patch losses come back averaged over their own rows; rescale to the batch
        parts.append(li * rows.size / B)
        grad[rows, i] = gi * (rows.size / B)
    # correctly rounded sum, so n identical patches give exactly n times one
    return math.fsum(parts), (grad[0] if single else grad)


@dataclass
class LossBundle:
    l_jig: float
    l_inp_cls: float
    l_col: float
    l_final: float
    alpha: float
    beta: float
    grads: dict = field(default_factory=dict)


def compose_final(l_jig, l_inp_cls, l_col, alpha=0.01, beta=0.01):
    return l_jig + alpha * l_inp_cls + beta * l_col


def combined_loss(heads, perm_labels, inp_targets=None, col_targets=None, weights=None,
                  alpha=0.01, beta=0.01, col_mask=None):
    """Weighted total ``l_jig + alpha * l_inp_cls + beta * l_col``.

    ``heads`` maps ``"jigsaw"``, ``"inpaint"`` and ``"colorize"`` to logits;
    missing heads (or missing targets) contribute zero. Gradients in the
    returned bundle are already scaled by their loss weight.
    """
    l_jig, g_jig = jigsaw_loss(heads["jigsaw"], perm_labels)
    grads = {"jigsaw": g_jig}
    l_inp = l_col = 0.0
    if heads.get("inpaint") is not None and inp_targets is not None:
        l_inp, g = inpaint_cls_loss(heads["inpaint"], inp_targets, weights)
        grads["inpaint"] = alpha * g
    if heads.get("colorize") is not None and col_targets is not None:
        l_col, g = nine_patch_color_loss(heads["colorize"], col_targets, weights, col_mask)
        grads["colorize"] = beta * g
    l_final = compose_final(l_jig, l_inp, l_col, alpha, beta)
    return LossBundle(l_jig, l_inp, l_col, l_final, alpha, beta, grads)
