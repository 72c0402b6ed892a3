"""Full-softmax skip-gram over codes co-occurring in a visit.

Codes inside a visit are an unordered set, so the context is every other
code of the same visit (all ordered pairs).  Input and output vectors
are shared: the score of context j given center i is the dot product of
columns i and j of the code table W_c, and the bias b_c deliberately
stays out of the score.
"""

from __future__ import annotations

import numpy as np

from .encodings import VisitEncoding

_CHUNK = 4096  # center rows per softmax block, keeps the (centers x vocab) buffer small


def visit_pairs(visit: VisitEncoding) -> list[tuple[int, int]]:
    """All ordered (center, context) pairs over the visit's distinct codes."""
    ids = visit.active_ids
    return [(int(a), int(b)) for a in ids for b in ids if a != b]


def _pair_array(visit: VisitEncoding) -> np.ndarray:
    ids = visit.active_ids
    m = len(ids)
    if m < 2:
        return np.empty((0, 2), dtype=np.int64)
    grid_a = np.repeat(ids, m)
    grid_b = np.tile(ids, m)
    keep = grid_a != grid_b
    return np.stack([grid_a[keep], grid_b[keep]], axis=1)


def pairs_for_patients(encodings) -> np.ndarray:
    """Stack visit pairs for a batch of patients into an (n, 2) int array.

    Pair sets never change for a fixed encoding, so they are cached on the
    patient encoding after the first call.
    """
    blocks = []
    for enc in encodings:
        cached = getattr(enc, "_pairs_cache", None)
        if cached is None:
            visit_blocks = [_pair_array(v) for v in enc.visit_encodings]
            cached = np.vstack(visit_blocks) if visit_blocks else np.empty((0, 2), dtype=np.int64)
            enc._pairs_cache = cached
        blocks.append(cached)
    if not blocks:
        return np.empty((0, 2), dtype=np.int64)
    return np.vstack(blocks)


def softmax_prob(center: int, context: int, W_c: np.ndarray) -> float:
    """P(context | center) under the shared-table softmax, max-stabilized."""
    scores = W_c.T @ W_c[:, center]
    scores -= scores.max()
    expd = np.exp(scores)
    return float(expd[context] / expd.sum())


def skipgram_loss_and_grad(pairs: np.ndarray, W_c: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability over the pairs, with its exact gradient.

    The score row depends only on the center code, so pairs are aggregated
    into per-center context counts first: with n_c pair instances for center
    c and context-count row m_c, the summed loss is
    n_c * log z_c - m_c . s_c, and the gradient row is n_c * P_c - m_c.
    Each pair still touches the whole table through the partition function.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(W_c)
    n = len(pairs)
    if n == 0:
        return 0.0, grad

    size = W_c.shape[1]
    centers, inverse = np.unique(pairs[:, 0], return_inverse=True)
    counts = np.zeros((len(centers), size))
    np.add.at(counts, (inverse, pairs[:, 1]), 1.0)
    n_per_center = counts.sum(axis=1)

    loss = 0.0
    grad_t = grad.T  # (|C|, e) view, columns indexed per center
    for start in range(0, len(centers), _CHUNK):
        sel = slice(start, start + _CHUNK)
        ctr = centers[sel]
        m = counts[sel]
        n_c = n_per_center[sel]
        center_vecs = W_c[:, ctr]  # (e, u)
        scores = center_vecs.T @ W_c  # (u, |C|)
        scores -= scores.max(axis=1, keepdims=True)
        expd = np.exp(scores)
        z = expd.sum(axis=1)
        loss += float(np.sum(n_c * np.log(z)) - np.sum(m * scores))

        g = (n_c[:, None] * (expd / z[:, None]) - m) / n
        grad += center_vecs @ g  # context-position term
        grad_t[ctr] += (W_c @ g.T).T  # partition term on the (unique) center columns

    return loss / n, grad
