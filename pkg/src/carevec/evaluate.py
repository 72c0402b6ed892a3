"""Evaluation harness: representations, ridge regression on log costs, and risk tasks.

Every representation runs through the identical pipeline: per evaluation
seed, the cohort is split 7:1:2 by patient, a closed-form ridge model is
fit on the train part with its penalty chosen on the validation part,
and R^2 / RMSE are computed on the test part on log-scaled cost.  The
high-risk table reports, for each percentile, the mean actual
holdout-year cost of the members with the highest predicted cost.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .encodings import count_vector, encode_patient
from .errors import DataError
from .ingest import split_dataset
from .network import forward_patient
from .params import TrainedModel
from .records import PatientRecord

DEFAULT_ALPHAS = (0.01, 0.1, 1.0, 10.0)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_PERCENTILES = (0.5, 1.0, 5.0, 10.0, 50.0)
REPRESENTATION_KINDS = ("raw_count", "skipgram_sum", "pv", "pv_plus", "med2vec_like")

_MODE_KIND = {"pv": "pv", "pv_plus": "pv_plus", "no_patient_vector": "med2vec_like", "skipgram": "skipgram_sum"}


@dataclass
class Representation:
    kind: str
    vectors: dict[str, np.ndarray]
    n_skipped_codes: int = 0

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[0] if self.vectors else 0

    def matrix(self, member_ids) -> np.ndarray:
        return np.stack([self.vectors[m] for m in member_ids])


def log_cost(cost: float) -> float:
    """ln(1 + cost); zero-cost members are common so the offset is built in."""
    if cost < 0:
        raise DataError(f"cost {cost} is negative; clamp costs upstream")
    return float(np.log1p(cost))


def window_cost(record: PatientRecord) -> float:
    return float(sum(v.cost for v in record.visits))


def holdout_cost(record: PatientRecord, year: int) -> float:
    return float(record.annual_costs.get(year, 0.0))


def infer_holdout_year(cohort: list[PatientRecord]) -> int:
    years = {y for rec in cohort for y in rec.annual_costs}
    if not years:
        raise DataError("cohort has no annual costs")
    return max(years)


def representation(cohort: list[PatientRecord], kind: str, model: TrainedModel) -> Representation:
    """Member vectors of the requested kind, via the model's frozen vocabulary.

    Codes unseen at training time are skipped and counted.  Compound kinds
    like "pv_plus+raw_count" concatenate blocks.
    """
    if "+" in kind:
        parts = [representation(cohort, part, model) for part in kind.split("+")]
        vectors = {
            m: np.concatenate([p.vectors[m] for p in parts]) for m in parts[0].vectors
        }
        return Representation(kind, vectors, sum(p.n_skipped_codes for p in parts))
    if kind not in REPRESENTATION_KINDS:
        raise DataError(f"unknown representation kind {kind!r}")

    vectors = {}
    skipped = 0
    size = len(model.vocab)
    for rec in cohort:
        enc = encode_patient(rec, model.vocab, model.layout, model.ref_year, unknown="skip")
        skipped += enc.n_skipped
        if kind == "raw_count":
            vec = count_vector(enc, size)
        elif kind == "skipgram_sum":
            vec = model.params.W_c @ count_vector(enc, size)
        else:
            trace = forward_patient(enc, model.params, log_counts=model.hyper.get("log_counts", False))
            if kind in ("pv", "pv_plus"):
                vec = trace.p
            else:  # med2vec_like: sum of visit vectors
                vec = trace.V.sum(axis=0) if trace.num_visits else np.zeros(model.params.W_v.shape[0])
        vectors[rec.member_id] = vec
    return Representation(kind, vectors, skipped)


def extract_patient_vectors(model: TrainedModel, cohort: list[PatientRecord]) -> Representation:
    """The model's native patient representation (deterministic forward pass)."""
    return representation(cohort, _MODE_KIND[model.mode], model)


def baseline_vectors(cohort: list[PatientRecord], kind: str, model: TrainedModel) -> Representation:
    return representation(cohort, kind, model)


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float
    alpha: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, obj: dict) -> "RidgeModel":
        return cls(np.asarray(obj["coef"], dtype=float), float(obj["intercept"]), float(obj["alpha"]))


def ridge_fit(X: np.ndarray, y: np.ndarray, alpha: float) -> RidgeModel:
    """Closed-form ridge with an unpenalized intercept (centered normal equations)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("features and labels must be a matrix and a vector of equal length")
    if len(y) < 2:
        raise DataError("ridge needs at least 2 samples")
    if alpha < 0:
        raise DataError("alpha must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    try:
        coef = np.linalg.solve(gram, Xc.T @ (y - y_mean))
    except np.linalg.LinAlgError as exc:
        raise DataError("singular system; use alpha > 0") from exc
    return RidgeModel(coef=coef, intercept=float(y_mean - x_mean @ coef), alpha=float(alpha))


def select_ridge(X_train, y_train, X_valid, y_valid, alphas=DEFAULT_ALPHAS) -> RidgeModel:
    """Fit one model per alpha on train, keep the best validation R^2 (ties keep grid order)."""
    best = None
    for alpha in alphas:
        model = ridge_fit(X_train, y_train, alpha)
        score = r_squared(model.predict(X_valid), y_valid)
        if best is None or score > best[0]:
            best = (score, model)
    return best[1]


def r_squared(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or len(pred) < 2:
        raise DataError("predictions and actuals must have equal length >= 2")
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("R^2 undefined: actual values are all identical")
    return 1.0 - float(np.sum((actual - pred) ** 2)) / ss_tot


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or len(pred) < 2:
        raise DataError("predictions and actuals must have equal length >= 2")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


@dataclass
class TaskResult:
    per_seed: list[dict] = field(default_factory=list)  # seed, r2, rmse, alpha

    def _stat(self, key, fn):
        values = [row[key] for row in self.per_seed]
        if not values:
            return 0.0
        if fn == "mean":
            return float(np.mean(values))
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    @property
    def r2_mean(self):
        return self._stat("r2", "mean")

    @property
    def r2_std(self):
        return self._stat("r2", "std")

    @property
    def rmse_mean(self):
        return self._stat("rmse", "mean")

    @property
    def rmse_std(self):
        return self._stat("rmse", "std")

    def to_dict(self) -> dict:
        return {
            "per_seed": self.per_seed,
            "r2_mean": self.r2_mean,
            "r2_std": self.r2_std,
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
        }


def run_cost_task(
    features: dict[str, np.ndarray],
    labels: dict[str, float],
    seeds=DEFAULT_SEEDS,
    alphas=DEFAULT_ALPHAS,
    keep_predictions: bool = False,
):
    """Shared split/fit/score engine used by every cost task.

    For each seed the members split 7:1:2; the ridge penalty comes from the
    validation part; metrics come from the test part.  Optionally returns the
    per-seed test predictions for downstream selection tasks.
    """
    members = sorted(set(features) & set(labels))
    if len(members) < 3:
        raise DataError("need at least 3 members with features and labels")
    result = TaskResult()
    predictions = []
    for seed in seeds:
        parts = split_dataset(members, (0.7, 0.1, 0.2), seed=seed)
        (Xtr, ytr), (Xva, yva), (Xte, yte) = (
            (np.stack([features[m] for m in ms]), np.array([labels[m] for m in ms])) for ms in parts
        )
        model = select_ridge(Xtr, ytr, Xva, yva, alphas)
        pred = model.predict(Xte)
        result.per_seed.append(
            {"seed": int(seed), "r2": r_squared(pred, yte), "rmse": rmse(pred, yte), "alpha": model.alpha}
        )
        if keep_predictions:
            predictions.append({"seed": int(seed), "members": list(parts[2]), "pred": pred, "model": model})
    return (result, predictions) if keep_predictions else result


def task_current_cost(rep: Representation, cohort, seeds=DEFAULT_SEEDS, alphas=DEFAULT_ALPHAS):
    """Observation-window total cost from the representation alone."""
    labels = {rec.member_id: log_cost(window_cost(rec)) for rec in cohort}
    return run_cost_task(rep.vectors, labels, seeds=seeds, alphas=alphas)


def _next_cost_features(rep: Representation, cohort):
    return {
        rec.member_id: np.concatenate([rep.vectors[rec.member_id], [log_cost(window_cost(rec))]])
        for rec in cohort
        if rec.member_id in rep.vectors
    }


def task_next_cost(
    rep: Representation,
    cohort,
    seeds=DEFAULT_SEEDS,
    alphas=DEFAULT_ALPHAS,
    holdout_year: int | None = None,
    keep_predictions: bool = False,
):
    """Holdout-year cost from the representation plus log prior cost."""
    year = infer_holdout_year(cohort) if holdout_year is None else holdout_year
    labels = {rec.member_id: log_cost(holdout_cost(rec, year)) for rec in cohort}
    features = _next_cost_features(rep, cohort)
    return run_cost_task(features, labels, seeds=seeds, alphas=alphas, keep_predictions=keep_predictions)


def high_risk_selection(predictions: dict[str, float], actual: dict[str, float], percentiles=DEFAULT_PERCENTILES):
    """Mean actual cost of the top-p% by predicted cost, ties broken by member id."""
    members = sorted(predictions, key=lambda m: (-predictions[m], m))
    n = len(members)
    table = {}
    for p in percentiles:
        n_sel = int(np.floor(p / 100.0 * n))
        if n_sel < 1:
            raise DataError(f"top {p}% of {n} members selects no one")
        chosen = members[:n_sel]
        table[p] = float(np.mean([actual[m] for m in chosen]))
    return table


def bootstrap_random_selection(actual_values, frac: float, n_boot: int = 100, seed: int = 0):
    """Distribution of group means under random selection: (mean of means, std)."""
    values = np.asarray(list(actual_values), dtype=float)
    n_sel = max(int(np.floor(frac * len(values))), 1)
    rng = np.random.default_rng(seed)
    means = [float(rng.choice(values, size=n_sel, replace=False).mean()) for _ in range(n_boot)]
    return float(np.mean(means)), float(np.std(means))


def visit_cost_tasks(model: TrainedModel, cohort, seeds=DEFAULT_SEEDS, alphas=DEFAULT_ALPHAS):
    """Current- and next-visit cost prediction from the visit vectors v_t.

    Rows split by patient (a member's visits stay on one side of the split).
    """
    rows_current: dict[str, list] = {}
    rows_next: dict[str, list] = {}
    for rec in cohort:
        enc = encode_patient(rec, model.vocab, model.layout, model.ref_year, unknown="skip")
        if not enc.num_visits:
            continue
        trace = forward_patient(enc, model.params, log_counts=model.hyper.get("log_counts", False))
        costs = [log_cost(max(rec.visits[i].cost, 0.0)) for i in enc.kept_visit_indices]
        rows_current[rec.member_id] = [(trace.V[t], costs[t]) for t in range(len(costs))]
        rows_next[rec.member_id] = [(trace.V[t], costs[t + 1]) for t in range(len(costs) - 1)]

    def run(rows_by_member):
        members = sorted(m for m, rows in rows_by_member.items() if rows)
        if len(members) < 3:
            raise DataError("not enough members with visit rows")
        result = TaskResult()
        for seed in seeds:
            train_m, valid_m, test_m = split_dataset(members, (0.7, 0.1, 0.2), seed=seed)

            def stack(ms):
                feats, ys = [], []
                for m in ms:
                    for vec, label in rows_by_member[m]:
                        feats.append(vec)
                        ys.append(label)
                return np.stack(feats), np.array(ys)

            Xtr, ytr = stack(train_m)
            Xva, yva = stack(valid_m)
            Xte, yte = stack(test_m)
            ridge = select_ridge(Xtr, ytr, Xva, yva, alphas)
            pred = ridge.predict(Xte)
            result.per_seed.append(
                {"seed": int(seed), "r2": r_squared(pred, yte), "rmse": rmse(pred, yte), "alpha": ridge.alpha}
            )
        return result

    return {"current_visit_cost": run(rows_current), "next_visit_cost": run(rows_next)}


@dataclass
class EvalReport:
    representation: str
    seeds: list[int]
    tasks: dict[str, TaskResult] = field(default_factory=dict)
    high_risk: dict[float, dict] = field(default_factory=dict)  # p -> {mean, std, per_seed}
    n_skipped_codes: int = 0

    def to_dict(self) -> dict:
        return {
            "representation": self.representation,
            "seeds": self.seeds,
            "tasks": {name: task.to_dict() for name, task in self.tasks.items()},
            "high_risk": {str(p): stats for p, stats in self.high_risk.items()},
            "n_skipped_codes": self.n_skipped_codes,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def save_csv(self, metrics_path, high_risk_path) -> None:
        with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task", "seed", "r2", "rmse", "alpha"])
            for name, task in sorted(self.tasks.items()):
                for row in task.per_seed:
                    writer.writerow([name, row["seed"], f"{row['r2']:.6f}", f"{row['rmse']:.6f}", row["alpha"]])
        with open(high_risk_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["percentile", "mean_actual_cost", "std_over_seeds"])
            for p, stats in sorted(self.high_risk.items()):
                writer.writerow([p, f"{stats['mean']:.2f}", f"{stats['std']:.2f}"])


def evaluate_representation(
    rep: Representation,
    cohort,
    seeds=DEFAULT_SEEDS,
    alphas=DEFAULT_ALPHAS,
    percentiles=DEFAULT_PERCENTILES,
    holdout_year: int | None = None,
) -> tuple[EvalReport, RidgeModel]:
    """Both cost tasks plus the high-risk table; also returns the first-seed task-1 regressor."""
    year = infer_holdout_year(cohort) if holdout_year is None else holdout_year
    report = EvalReport(representation=rep.kind, seeds=[int(s) for s in seeds], n_skipped_codes=rep.n_skipped_codes)

    labels_now = {rec.member_id: log_cost(window_cost(rec)) for rec in cohort}
    report.tasks["current_cost"], current_preds = run_cost_task(
        rep.vectors, labels_now, seeds=seeds, alphas=alphas, keep_predictions=True
    )
    report.tasks["next_cost"], next_preds = task_next_cost(
        rep, cohort, seeds=seeds, alphas=alphas, holdout_year=year, keep_predictions=True
    )

    actual = {rec.member_id: holdout_cost(rec, year) for rec in cohort}
    per_p: dict[float, list[float]] = {p: [] for p in percentiles}
    for entry in next_preds:
        scores = dict(zip(entry["members"], entry["pred"]))
        table = high_risk_selection(scores, actual, percentiles)
        for p, value in table.items():
            per_p[p].append(value)
    for p, values in per_p.items():
        report.high_risk[p] = {
            "mean": float(np.mean(values)),
            "std": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
            "per_seed": values,
        }

    first = current_preds[0]["model"]
    return report, first


def save_regressor(model: RidgeModel, rep_kind: str, path) -> None:
    payload = {"kind": "ridge", "representation": rep_kind, **model.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_regressor(path) -> tuple[RidgeModel, str]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"regressor {path}: {exc}") from exc
    return RidgeModel.from_dict(obj), obj.get("representation", "")
