"""Shared helpers: tiny hand-built encodings and a finite-difference gradient oracle."""

import datetime as dt

import numpy as np

from carevec.encodings import PatientEncoding, VisitEncoding
from carevec.ingest import _claim_from_dict, build_patient_records, filter_cohort
from carevec.params import Dims, ModelParams, init_params
from carevec.records import DateWindow
from carevec.synthgen import GenConfig, generate

WINDOW = DateWindow(dt.date(2014, 1, 1), dt.date(2015, 12, 31))


def small_cohort(n_members=120, seed=11, **config_over):
    """Small prepared synthetic cohort plus its ground truth."""
    base = dict(
        n_members=n_members,
        n_groups=6,
        codes_per_group=8,
        n_noise_codes=12,
        visits_per_member_mean=7.0,
        codes_per_visit_mean=3.5,
        seed=seed,
    )
    base.update(config_over)
    claims, truth = generate(GenConfig(**base))
    raw = [_claim_from_dict(c, i + 1, "<mem>") for i, c in enumerate(claims)]
    cohort = filter_cohort(build_patient_records(raw, WINDOW), WINDOW, 2)
    return cohort, truth

TINY_DIMS = Dims(
    vocab_size=6,
    embedding=4,
    visit_hidden=3,
    patient_hidden=3,
    patient_demo=4,
    visit_demo=4,
)


def make_visit(ids, demo_dim=4, demo_seed=None):
    ids = np.array(sorted(set(ids)), dtype=np.int64)
    if demo_seed is None:
        demo = np.zeros(demo_dim)
    else:
        demo = np.random.default_rng(demo_seed).uniform(0, 1, size=demo_dim)
    return VisitEncoding(active_ids=ids, demo=demo)


def make_patient(member_id, visit_ids, demo_dim=4, visit_demo_dim=4, demo_seed=0):
    counts = {}
    visits = []
    for i, ids in enumerate(visit_ids):
        for idx in ids:
            counts[idx] = counts.get(idx, 0) + 1
        visits.append(make_visit(ids, demo_dim=visit_demo_dim, demo_seed=demo_seed * 101 + i))
    demo = np.random.default_rng(demo_seed).uniform(0, 1, size=demo_dim)
    return PatientEncoding(member_id=member_id, counts=counts, demo=demo, visit_encodings=visits)


def tiny_batch():
    """Two patients over a 6-code vocabulary, window-1 material."""
    a = make_patient("A", [[0, 1], [1, 2], [3]], demo_seed=1)
    b = make_patient("B", [[4, 5], [0, 4]], demo_seed=2)
    return [a, b]


def tiny_params(seed=12, dims=TINY_DIMS):
    return init_params(dims, seed=seed)


def finite_difference_grads(loss_fn, params: ModelParams, eps=1e-5):
    """Central finite differences of loss_fn over every entry of every tensor."""
    grads = {}
    for name, arr in params.tensors():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(params)
            flat[i] = orig - eps
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict, floor=1e-4, abs_tol=1e-9):
    """Worst relative disagreement over all tensors.

    Central differences at eps=1e-5 carry roughly 1e-10 of roundoff and
    truncation noise, so entries whose magnitude sits below `floor` are
    compared absolutely at abs_tol (a wrong analytic value of any consequence
    still trips that bound); larger entries use |a - f| / max(|a|, |f|).
    """
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        f = numeric[name]
        diff = np.abs(a - f)
        mag = np.maximum(np.abs(a), np.abs(f))
        tiny = mag < floor
        assert np.all(diff[tiny] < abs_tol), f"{name}: small-entry mismatch {diff[tiny].max():g}"
        if np.any(~tiny):
            worst = max(worst, float((diff[~tiny] / mag[~tiny]).max()))
    return worst
