"""Margin-ranking head: score codes of neighboring visits above sampled negatives.

Instead of a softmax over the whole vocabulary, each neighbor visit's
codes (positives) must outscore k sampled negative codes by a margin:

    score(p, v_t, c) = W_s . [p, v_t, W_c[:, c]] + b_s
    loss = mean over t of sum_j sum_pos sum_neg max(0, margin - score(pos) + score(neg))

W_s is a single vector of length h_p + h_v + e and b_s a scalar, so the
output head's parameter count does not grow with the vocabulary.  The
hinge subgradient at the kink is 0 (a pair contributes gradient only
when its margin is strictly violated).
"""

from __future__ import annotations

import numpy as np

from .encodings import PatientEncoding, VisitEncoding
from .errors import DataError
from .network import backward_representations, forward_patient, window_offsets
from .params import ModelParams
from .skipgram import pairs_for_patients, skipgram_loss_and_grad


def sample_negatives(target_visit: VisitEncoding, vocab_size: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct ids drawn uniformly from the vocabulary minus the target visit's codes.

    The complement pool is fixed per visit, so it is cached on the encoding.
    """
    pool = getattr(target_visit, "_neg_pool", None)
    if pool is None or len(pool) + len(target_visit.active_ids) != vocab_size:
        pool = np.setdiff1d(np.arange(vocab_size, dtype=np.int64), target_visit.active_ids, assume_unique=True)
        target_visit._neg_pool = pool
    if len(pool) < k:
        raise DataError(
            f"cannot sample {k} negatives: only {len(pool)} codes outside the target visit"
        )
    return np.sort(rng.choice(pool, size=k, replace=False))


def score(p: np.ndarray, v_t: np.ndarray, code: int, params: ModelParams) -> float:
    """W_s . [p, v_t, W_c[:, code]] + b_s."""
    x = np.concatenate([p, v_t, params.W_c[:, code]])
    return float(params.W_s @ x + params.b_s[0])


def _score_blocks(params: ModelParams):
    hp = params.W_p.shape[0]
    hv = params.W_v.shape[0]
    return params.W_s[:hp], params.W_s[hp : hp + hv], params.W_s[hp + hv :]


def ranking_loss_and_grad(
    encodings: list[PatientEncoding],
    params: ModelParams,
    rng_for_member,
    window: int = 1,
    k_negatives: int = 10,
    margin: float = 1.0,
    lam: float = 1.0,
    log_counts: bool = False,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Hinge ranking loss plus lam x skip-gram over a patient minibatch.

    rng_for_member maps a member id to a numpy Generator; negatives for the
    (t, j) targets of one patient are drawn from that stream in visit order,
    so sampling is independent of batch composition and processing order.
    Patients with a single visit have no ranking targets and are skipped
    from the hinge average.  Returns (loss, grads, parts).
    """
    grads = params.zero_grads()
    vocab_size = params.W_c.shape[1]
    s_p, s_v, s_c = _score_blocks(params)
    grad_Wc_t = grads["W_c"].T

    eligible = [enc for enc in encodings if enc.num_visits >= 2]
    main = 0.0
    if eligible:
        scale = 1.0 / len(eligible)
        for enc in eligible:
            rng = rng_for_member(enc.member_id)
            trace = forward_patient(enc, params, log_counts=log_counts)
            T = trace.num_visits
            g_p = np.zeros_like(trace.p)
            g_V = np.zeros_like(trace.V)
            patient_loss = 0.0
            for t in range(T):
                base = float(s_p @ trace.p + s_v @ trace.V[t] + params.b_s[0])
                for nb in window_offsets(t, T, window):
                    pos = trace.enc.visit_encodings[nb].active_ids
                    neg = sample_negatives(trace.enc.visit_encodings[nb], vocab_size, k_negatives, rng)
                    cs_pos = s_c @ params.W_c[:, pos]
                    cs_neg = s_c @ params.W_c[:, neg]
                    viol = margin - (base + cs_pos)[:, None] + (base + cs_neg)[None, :]
                    active = viol > 0.0
                    if not active.any():
                        continue
                    patient_loss += float(viol[active].sum())

                    w = scale / T
                    c_pos = -active.sum(axis=1).astype(float) * w
                    c_neg = active.sum(axis=0).astype(float) * w
                    grads["W_s"][len(s_p) + len(s_v) :] += params.W_c[:, pos] @ c_pos + params.W_c[:, neg] @ c_neg
                    np.add.at(grad_Wc_t, pos, c_pos[:, None] * s_c[None, :])
                    np.add.at(grad_Wc_t, neg, c_neg[:, None] * s_c[None, :])

                    # Shared (p, v_t, b_s) part of both scores; the coefficients cancel
                    # exactly within one target but are propagated for completeness.
                    g_base = float(c_pos.sum() + c_neg.sum())
                    if g_base != 0.0:
                        grads["W_s"][: len(s_p)] += g_base * trace.p
                        grads["W_s"][len(s_p) : len(s_p) + len(s_v)] += g_base * trace.V[t]
                        grads["b_s"][0] += g_base
                        g_p += g_base * s_p
                        g_V[t] += g_base * s_v
            main += patient_loss / T
            backward_representations(g_p, g_V, trace, params, grads)
        main *= scale

    sg_loss = 0.0
    if lam != 0.0:
        pairs = pairs_for_patients(encodings)
        sg_loss, sg_grad = skipgram_loss_and_grad(pairs, params.W_c)
        grads["W_c"] += lam * sg_grad

    loss = main + lam * sg_loss
    return loss, grads, {"main": main, "skipgram": sg_loss}
