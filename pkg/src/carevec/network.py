"""Patient Vector network: forward pass and exact backpropagation.

Per patient, each visit's multi-hot code vector becomes an intermediate
visit representation u_t and the count vector becomes an intermediate
patient representation k, both through the shared code table:

    u_t = W_c x_t + b_c          k = W_c y + b_c
    v_t = ReLU(W_v [u_t, d_t] + b_v)
    p   = ReLU(W_p [k, d] + b_p)
    xhat_t = softmax(W_o [p, v_t] + b_o)

The prediction made at visit t is scored against every neighbor visit
x_{t+j} inside the window (offsets clipped at the sequence ends) with a
multi-hot binary cross entropy applied to the softmax output.  The
patient representation p is shared across all of that patient's visit
prediction steps.  ReLU's subgradient at exactly 0 is taken as 0, and
log arguments are clamped to [1e-12, 1 - 1e-12].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encodings import PatientEncoding, VisitEncoding, count_vector
from .params import ModelParams
from .skipgram import pairs_for_patients, skipgram_loss_and_grad

LOG_CLAMP = 1e-12


def intermediate_visit(visit: VisitEncoding, params: ModelParams) -> np.ndarray:
    """u_t: sum of the active code columns plus the code bias."""
    if len(visit.active_ids) == 0:
        return params.b_c.copy()
    return params.W_c[:, visit.active_ids].sum(axis=1) + params.b_c


def intermediate_patient(enc: PatientEncoding, params: ModelParams, log_counts: bool = False) -> np.ndarray:
    """k: count-weighted sum of code columns plus the code bias."""
    y = count_vector(enc, params.W_c.shape[1], log_scale=log_counts)
    return params.W_c @ y + params.b_c


def visit_repr(u: np.ndarray, d_t: np.ndarray, params: ModelParams) -> np.ndarray:
    """v_t = ReLU(W_v [u, d_t] + b_v); representation first, demographics second."""
    x = np.concatenate([u, d_t])
    if x.shape[0] != params.W_v.shape[1]:
        raise ValueError(f"visit input has dim {x.shape[0]}, W_v expects {params.W_v.shape[1]}")
    return np.maximum(params.W_v @ x + params.b_v, 0.0)


def patient_repr(k: np.ndarray, d: np.ndarray, params: ModelParams) -> np.ndarray:
    """p = ReLU(W_p [k, d] + b_p)."""
    x = np.concatenate([k, d])
    if params.W_p.shape[0] and x.shape[0] != params.W_p.shape[1]:
        raise ValueError(f"patient input has dim {x.shape[0]}, W_p expects {params.W_p.shape[1]}")
    return np.maximum(params.W_p @ x + params.b_p, 0.0)


def predict_visit(p: np.ndarray, v_t: np.ndarray, params: ModelParams) -> np.ndarray:
    """Softmax over the vocabulary of W_o [p, v_t] + b_o, max-stabilized."""
    z = params.W_o @ np.concatenate([p, v_t]) + params.b_o
    z -= z.max()
    expd = np.exp(z)
    return expd / expd.sum()


def multi_hot_cross_entropy(q: np.ndarray, target_ids: np.ndarray) -> float:
    """-x^T log q - (1-x)^T log(1-q) for a multi-hot target x, with clamped logs."""
    qc = np.clip(q, LOG_CLAMP, 1.0 - LOG_CLAMP)
    x = np.zeros_like(q)
    x[np.asarray(target_ids, dtype=np.int64)] = 1.0
    return float(-(x * np.log(qc)).sum() - ((1.0 - x) * np.log(1.0 - qc)).sum())


def window_offsets(t: int, n_visits: int, window: int) -> list[int]:
    """Neighbor indices t+j for j in [-w, w], j != 0, clipped at the boundaries."""
    return [t + j for j in range(-window, window + 1) if j != 0 and 0 <= t + j < n_visits]


def ce_loss(predictions: np.ndarray, visit_targets: list[np.ndarray], window: int) -> float:
    """Mean over visits of the summed neighbor cross entropies.

    predictions holds one softmax row per visit; visit_targets the active
    ids of each visit.  A single-visit patient has no neighbors and
    contributes 0.
    """
    n = len(visit_targets)
    if n <= 1:
        return 0.0
    total = 0.0
    for t in range(n):
        for nb in window_offsets(t, n, window):
            total += multi_hot_cross_entropy(predictions[t], visit_targets[nb])
    return total / n


@dataclass
class PatientTrace:
    """Cached forward quantities for one patient, as needed by the backward pass."""

    enc: PatientEncoding
    y: np.ndarray  # densified (possibly log-scaled) count vector
    U: np.ndarray  # (T, e)
    UD: np.ndarray  # (T, e + visit_demo)
    AV: np.ndarray  # visit pre-activations (T, h_v)
    V: np.ndarray  # (T, h_v)
    k: np.ndarray
    kd: np.ndarray
    ap: np.ndarray  # patient pre-activation
    p: np.ndarray
    Z: np.ndarray | None = None  # logits (T, |C|)
    Q: np.ndarray | None = None  # softmax rows

    @property
    def num_visits(self) -> int:
        return len(self.enc.visit_encodings)


def forward_patient(
    enc: PatientEncoding,
    params: ModelParams,
    log_counts: bool = False,
    with_predictions: bool = False,
) -> PatientTrace:
    e = params.W_c.shape[0]
    visits = enc.visit_encodings
    T = len(visits)
    U = np.empty((T, e))
    demos = np.empty((T, params.W_v.shape[1] - e))
    for t, visit in enumerate(visits):
        U[t] = intermediate_visit(visit, params)
        demos[t] = visit.demo
    UD = np.hstack([U, demos])
    AV = UD @ params.W_v.T + params.b_v
    V = np.maximum(AV, 0.0)

    y = count_vector(enc, params.W_c.shape[1], log_scale=log_counts)
    k = params.W_c @ y + params.b_c
    kd = np.concatenate([k, enc.demo])
    ap = params.W_p @ kd + params.b_p
    p = np.maximum(ap, 0.0)

    trace = PatientTrace(enc=enc, y=y, U=U, UD=UD, AV=AV, V=V, k=k, kd=kd, ap=ap, p=p)
    if with_predictions and T:
        PV = np.hstack([np.tile(p, (T, 1)), V])
        Z = PV @ params.W_o.T + params.b_o
        Zs = Z - Z.max(axis=1, keepdims=True)
        expd = np.exp(Zs)
        trace.Z = Z
        trace.Q = expd / expd.sum(axis=1, keepdims=True)
    return trace


def backward_representations(
    g_p: np.ndarray,
    g_V: np.ndarray,
    trace: PatientTrace,
    params: ModelParams,
    grads: dict[str, np.ndarray],
) -> None:
    """Push gradients at p and at the visit vectors back to all earlier tensors.

    g_p and g_V must already carry any loss normalization.  Adds into grads.
    """
    e = params.W_c.shape[0]
    grad_Wc_t = grads["W_c"].T  # (|C|, e) view

    if g_V is not None and len(g_V):
        g_av = np.where(trace.AV > 0, g_V, 0.0)
        grads["W_v"] += g_av.T @ trace.UD
        grads["b_v"] += g_av.sum(axis=0)
        g_U = g_av @ params.W_v[:, :e]
        for t, visit in enumerate(trace.enc.visit_encodings):
            np.add.at(grad_Wc_t, visit.active_ids, g_U[t])
        grads["b_c"] += g_U.sum(axis=0)

    if params.W_p.shape[0]:
        g_ap = np.where(trace.ap > 0, g_p, 0.0)
        grads["W_p"] += np.outer(g_ap, trace.kd)
        grads["b_p"] += g_ap
        g_k = params.W_p[:, :e].T @ g_ap
        active = np.flatnonzero(trace.y)
        if len(active):
            np.add.at(grad_Wc_t, active, trace.y[active, None] * g_k[None, :])
        grads["b_c"] += g_k


def _ce_patient_loss_and_grad(
    trace: PatientTrace,
    params: ModelParams,
    window: int,
    grads: dict[str, np.ndarray],
    scale: float,
) -> float:
    """Cross-entropy part for one patient; gradient contributions scaled by `scale`."""
    T = trace.num_visits
    Q = trace.Q
    C = Q.shape[1]
    targets = [v.active_ids for v in trace.enc.visit_encodings]

    # Neighbor-summed multi-hot targets: X[t] = sum_j x_{t+j}, n_t = number of neighbors.
    X = np.zeros((T, C))
    n_nb = np.zeros(T)
    for t in range(T):
        for nb in window_offsets(t, T, window):
            X[t, targets[nb]] += 1.0
            n_nb[t] += 1.0

    qc = np.clip(Q, LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = float(np.sum(-X * np.log(qc) - (n_nb[:, None] - X) * np.log(1.0 - qc))) / T

    inside = (Q > LOG_CLAMP) & (Q < 1.0 - LOG_CLAMP)
    dLdq = np.where(inside, -X / qc + (n_nb[:, None] - X) / (1.0 - qc), 0.0) * (scale / T)
    r = Q * dLdq
    dLdz = r - Q * r.sum(axis=1, keepdims=True)

    PV = np.hstack([np.tile(trace.p, (T, 1)), trace.V])
    grads["W_o"] += dLdz.T @ PV
    grads["b_o"] += dLdz.sum(axis=0)
    G = dLdz @ params.W_o
    hp = params.W_p.shape[0]
    backward_representations(G[:, :hp].sum(axis=0), G[:, hp:], trace, params, grads)
    return loss


def pv_batch_loss_and_grad(
    encodings: list[PatientEncoding],
    params: ModelParams,
    window: int = 1,
    lam: float = 1.0,
    log_counts: bool = False,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Unified cross-entropy plus lam x skip-gram loss over a patient minibatch.

    The cross-entropy component averages over patients that have at least
    two visits (single-visit patients are skipped); the skip-gram component
    averages over all code pairs in the batch.  Returns (loss, grads, parts).
    """
    grads = params.zero_grads()
    eligible = [enc for enc in encodings if enc.num_visits >= 2]
    main = 0.0
    if eligible:
        scale = 1.0 / len(eligible)
        for enc in eligible:
            trace = forward_patient(enc, params, log_counts=log_counts, with_predictions=True)
            main += _ce_patient_loss_and_grad(trace, params, window, grads, scale)
        main *= scale

    sg_loss = 0.0
    if lam != 0.0:
        pairs = pairs_for_patients(encodings)
        sg_loss, sg_grad = skipgram_loss_and_grad(pairs, params.W_c)
        grads["W_c"] += lam * sg_grad

    loss = main + lam * sg_loss
    return loss, grads, {"main": main, "skipgram": sg_loss}
