"""Scikit-learn style estimators wrapping the representation learners.

These adapters keep the package composable with sklearn pipelines and
model selection: every estimator follows the fit/transform (or
fit/predict) contract with get_params/set_params from BaseEstimator.
X is always a cohort, a list of PatientRecord.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .encodings import build_vocabulary, count_vector, encode_patient, reference_year
from .errors import DataError
from .evaluate import r_squared, representation, ridge_fit
from .ingest import split_dataset
from .records import PatientRecord
from .trainer import MODES, TrainConfig, train


def check_cohort(X) -> list[PatientRecord]:
    """Validate that X is a non-empty list of PatientRecord."""
    if not isinstance(X, (list, tuple)) or not X:
        raise DataError("X must be a non-empty list of PatientRecord")
    for item in X:
        if not isinstance(item, PatientRecord):
            raise DataError(f"X contains {type(item).__name__}, expected PatientRecord")
    return list(X)


def check_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D array")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


class PatientVectorizer(BaseEstimator, TransformerMixin):
    """Unsupervised patient representations from a claims cohort.

    mode selects the objective: "pv" (softmax visit prediction), "pv_plus"
    (margin ranking over sampled negatives), "no_patient_vector" (visit-only
    ablation; transform sums visit vectors), or "skipgram" (co-occurrence
    only; transform sums count-weighted code vectors).  fit carves
    validation_fraction of the cohort out for early stopping; the vocabulary
    comes from the remaining records.
    """

    def __init__(
        self,
        mode="pv_plus",
        embedding_dim=100,
        visit_dim=100,
        patient_dim=100,
        window=1,
        lam=1.0,
        k_negatives=10,
        gamma=1.0,
        minibatch=100,
        epochs=40,
        optimizer="adam",
        learning_rate=0.001,
        early_stop_patience=5,
        clip_norm=5.0,
        log_counts=False,
        validation_fraction=0.1,
        seed=1,
    ):
        self.mode = mode
        self.embedding_dim = embedding_dim
        self.visit_dim = visit_dim
        self.patient_dim = patient_dim
        self.window = window
        self.lam = lam
        self.k_negatives = k_negatives
        self.gamma = gamma
        self.minibatch = minibatch
        self.epochs = epochs
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.early_stop_patience = early_stop_patience
        self.clip_norm = clip_norm
        self.log_counts = log_counts
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            minibatch=self.minibatch,
            window=self.window,
            lam=self.lam,
            k_negatives=self.k_negatives,
            gamma=self.gamma,
            embedding_dim=self.embedding_dim,
            visit_dim=self.visit_dim,
            patient_dim=self.patient_dim,
            epochs=self.epochs,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            early_stop_patience=self.early_stop_patience,
            clip_norm=self.clip_norm,
            log_counts=self.log_counts,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        cohort = check_cohort(X)
        if self.mode not in MODES:
            raise DataError(f"mode {self.mode!r} not one of {MODES}")
        if not 0.0 < self.validation_fraction < 0.5:
            raise DataError("validation_fraction must be in (0, 0.5)")
        if len(cohort) >= 3:
            frac = self.validation_fraction
            train_part, valid_part, rest = split_dataset(cohort, (1.0 - frac - 1e-9, frac, 1e-9), seed=self.seed)
            train_part = train_part + rest
        else:
            train_part, valid_part = cohort, []
        self.model_, self.log_ = train((train_part, valid_part), self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this PatientVectorizer is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        cohort = check_cohort(X)
        from .evaluate import extract_patient_vectors

        rep = extract_patient_vectors(self.model_, cohort)
        return rep.matrix([rec.member_id for rec in cohort])

    def visit_vectors(self, record: PatientRecord) -> np.ndarray:
        """Visit representations v_t of one record (rows follow kept visits)."""
        self._check_fitted()
        from .network import forward_patient

        enc = encode_patient(record, self.model_.vocab, self.model_.layout, self.model_.ref_year, unknown="skip")
        return forward_patient(enc, self.model_.params, log_counts=self.log_counts).V

    @property
    def code_vectors_(self) -> np.ndarray:
        """(vocab, embedding) table of learned code vectors."""
        self._check_fitted()
        return self.model_.params.W_c.T.copy()


class RawCountVectorizer(BaseEstimator, TransformerMixin):
    """Count-vector baseline: one column per vocabulary code, values are instance counts."""

    def __init__(self, log_counts=False):
        self.log_counts = log_counts

    def fit(self, X, y=None):
        cohort = check_cohort(X)
        self.vocab_ = build_vocabulary(cohort)
        self.ref_year_ = reference_year(cohort)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "vocab_"):
            raise NotFittedError("this RawCountVectorizer is not fitted; call fit first")
        cohort = check_cohort(X)
        from .encodings import DemographicLayout

        layout = DemographicLayout()
        rows = []
        for rec in cohort:
            enc = encode_patient(rec, self.vocab_, layout, self.ref_year_, unknown="skip")
            rows.append(count_vector(enc, len(self.vocab_), log_scale=self.log_counts))
        return np.stack(rows)


class RidgeRegressor(BaseEstimator, RegressorMixin):
    """Closed-form ridge regression with an unpenalized intercept."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X = check_matrix(X)
        self.model_ = ridge_fit(X, np.asarray(y, dtype=float), self.alpha)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("this RidgeRegressor is not fitted; call fit first")
        return self.model_.predict(check_matrix(X, self.n_features_in_))

    def score(self, X, y) -> float:
        return r_squared(self.predict(X), np.asarray(y, dtype=float))


class BaselineVectorizer(BaseEstimator, TransformerMixin):
    """Representation baselines (raw_count, skipgram_sum, med2vec_like) behind one transformer.

    Wraps a fitted PatientVectorizer's model so every baseline shares the
    training vocabulary and, where needed, the learned tensors.
    """

    def __init__(self, kind="raw_count", source: PatientVectorizer | None = None):
        self.kind = kind
        self.source = source

    def fit(self, X, y=None):
        if self.source is None or not hasattr(self.source, "model_"):
            raise DataError("BaselineVectorizer needs a fitted PatientVectorizer as source")
        self.model_ = self.source.model_
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("this BaselineVectorizer is not fitted; call fit first")
        cohort = check_cohort(X)
        rep = representation(cohort, self.kind, self.model_)
        return rep.matrix([rec.member_id for rec in cohort])
