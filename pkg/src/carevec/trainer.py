"""Minibatch training of the unified objective with early stopping.

Minibatches are formed by patient, so each patient's shared
representation is consistent within a step.  All randomness (epoch
shuffles, negative sampling) is derived from the config seed; negative
streams hash (seed, epoch, member_id) so that batch composition and
processing order cannot change the samples.  Validation negatives use a
fixed per-member stream, making the validation objective the same
function every epoch.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .encodings import (
    build_demographic_layout,
    build_vocabulary,
    encode_cohort,
    reference_year,
)
from .errors import DataError, NumericalError
from .network import pv_batch_loss_and_grad
from .params import Dims, ModelParams, TrainedModel, init_params
from .ranking import ranking_loss_and_grad
from .skipgram import pairs_for_patients, skipgram_loss_and_grad

MODES = ("pv", "pv_plus", "no_patient_vector", "skipgram")


@dataclass
class TrainConfig:
    mode: str = "pv_plus"
    minibatch: int = 100
    window: int = 1
    lam: float = 1.0
    k_negatives: int = 10
    gamma: float = 1.0
    embedding_dim: int = 100
    visit_dim: int = 100
    patient_dim: int = 100
    epochs: int = 40
    optimizer: str = "adam"
    learning_rate: float = 0.001
    early_stop_patience: int | None = 5
    clip_norm: float | None = 5.0
    log_counts: bool = False
    seed: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"mode {self.mode!r} not one of {MODES}")
        if self.minibatch < 1 or self.window < 1 or self.epochs < 1:
            raise DataError("minibatch, window, and epochs must all be >= 1")
        if self.lam < 0:
            raise DataError("lambda must be >= 0")
        if self.gamma <= 0:
            raise DataError("margin must be positive")
        if self.k_negatives < 1:
            raise DataError("k_negatives must be >= 1")
        if min(self.embedding_dim, self.visit_dim, self.patient_dim) < 1 and self.mode != "no_patient_vector":
            raise DataError("representation sizes must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise DataError(f"optimizer {self.optimizer!r} not one of ('sgd', 'adam')")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainLog:
    train_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based

    def to_csv(self, path, timings: bool = False) -> None:
        """Write epoch,train_loss,valid_loss,seconds.

        Wall times vary run to run, so the seconds column is written as 0.000
        unless timings=True; this keeps same-seed training logs byte-identical.
        """
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_loss,valid_loss,seconds\n")
            for i, (tr, va, sec) in enumerate(zip(self.train_losses, self.valid_losses, self.seconds), start=1):
                shown = sec if timings else 0.0
                fh.write(f"{i},{tr:.12g},{va:.12g},{shown:.3f}\n")


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, arr in params.tensors():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1**self.t)
            vhat = self.v[name] / (1 - b2**self.t)
            arr -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, arr in params.tensors():
            arr -= self.lr * grads[name]


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


def _member_stream(seed: int, tag: str, member_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{tag}:{member_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _batch_objective(mode, encodings, params, config, rng_factory):
    if mode == "pv_plus":
        return ranking_loss_and_grad(
            encodings,
            params,
            rng_factory,
            window=config.window,
            k_negatives=config.k_negatives,
            margin=config.gamma,
            lam=config.lam,
            log_counts=config.log_counts,
        )
    if mode in ("pv", "no_patient_vector"):
        return pv_batch_loss_and_grad(
            encodings, params, window=config.window, lam=config.lam, log_counts=config.log_counts
        )
    # skip-gram only: the code table is the whole model
    pairs = pairs_for_patients(encodings)
    loss, grad = skipgram_loss_and_grad(pairs, params.W_c)
    grads = params.zero_grads()
    grads["W_c"] = grad
    return loss, grads, {"main": 0.0, "skipgram": loss}


def train(splits, config: TrainConfig) -> tuple[TrainedModel, TrainLog]:
    """Fit on the train split, early-stop on the validation split.

    splits is (train_records, valid_records); the vocabulary, demographic
    layout, and age reference year all come from the train split alone.
    Validation records fall back to skipping out-of-vocabulary codes.
    Returns the checkpoint of the best validation epoch.
    """
    config.validate()
    train_records, valid_records = splits[0], splits[1]
    if not train_records:
        raise DataError("empty training split")
    train_ids = {r.member_id for r in train_records}
    if train_ids & {r.member_id for r in valid_records}:
        raise DataError("train and validation splits overlap")

    vocab = build_vocabulary(train_records)
    layout = build_demographic_layout(train_records)
    ref_year = reference_year(train_records)
    train_encs = encode_cohort(train_records, vocab, layout, ref_year)
    valid_encs = encode_cohort(valid_records, vocab, layout, ref_year, unknown="skip")
    train_encs.sort(key=lambda e: e.member_id)

    hp = 0 if config.mode == "no_patient_vector" else config.patient_dim
    dims = Dims(
        vocab_size=len(vocab),
        embedding=config.embedding_dim,
        visit_hidden=config.visit_dim,
        patient_hidden=hp,
        patient_demo=layout.patient_dim,
        visit_demo=layout.visit_dim,
    )
    params = init_params(dims, seed=config.seed)
    opt = _Adam(config.learning_rate) if config.optimizer == "adam" else _Sgd(config.learning_rate)

    log = TrainLog()
    best_loss = np.inf
    best_params = params.copy()
    since_best = 0

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng((config.seed, epoch)).permutation(len(train_encs))
        epoch_loss = 0.0
        n_seen = 0
        for batch_no, start in enumerate(range(0, len(order), config.minibatch), start=1):
            batch = [train_encs[i] for i in order[start : start + config.minibatch]]
            rng_factory = lambda member_id: _member_stream(config.seed, f"train:{epoch}", member_id)
            loss, grads, _ = _batch_objective(config.mode, batch, params, config, rng_factory)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}, batch {batch_no}")
            if config.clip_norm is not None:
                _clip_global_norm(grads, config.clip_norm)
            opt.step(params, grads)
            epoch_loss += loss * len(batch)
            n_seen += len(batch)
        train_loss = epoch_loss / max(n_seen, 1)

        valid_loss = 0.0
        if valid_encs:
            valid_factory = lambda member_id: _member_stream(config.seed, "valid", member_id)
            valid_loss, _, _ = _batch_objective(config.mode, valid_encs, params, config, valid_factory)
            if not np.isfinite(valid_loss):
                raise NumericalError(f"non-finite validation loss in epoch {epoch}")

        log.train_losses.append(float(train_loss))
        log.valid_losses.append(float(valid_loss))
        log.seconds.append(time.perf_counter() - started)

        if valid_loss < best_loss:
            best_loss = valid_loss
            best_params = params.copy()
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if config.early_stop_patience is not None and since_best >= config.early_stop_patience:
                break

    model = TrainedModel(
        params=best_params,
        vocab=vocab,
        layout=layout,
        ref_year=ref_year,
        mode=config.mode,
        hyper=config.to_dict(),
    )
    return model, log


def grid_select(configs: list[TrainConfig], splits):
    """Train every config and keep the lowest best-validation loss; ties keep list order."""
    if not configs:
        raise DataError("grid_select needs at least one config")
    best = None
    for config in configs:
        model, log = train(splits, config)
        score = log.valid_losses[log.best_epoch - 1] if log.best_epoch else np.inf
        if best is None or score < best[0]:
            best = (score, config, model, log)
    return best[1], best[2], best[3]
