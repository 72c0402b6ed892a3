"""Coordinate-level interpretation, similarity probes, and 2-D projection.

The influence of an embedding coordinate on a cost regressor is a
linearized readout: |regression weights . W_p column| times the largest
biased embedding entry of that coordinate, with the ReLU treated as
active.  The exact nonlinear attribution is not identifiable from the
trained tensors alone, so this ranking is documented as a linearization.

2-D projection uses centered principal components with a deterministic
sign convention (the largest-magnitude loading of each component is made
positive), which keeps figure exports reproducible.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .encodings import Vocabulary
from .errors import DataError
from .params import ModelParams
from .synthgen import GroundTruth

# zero-vector similarity warnings since the last reset (module-wide tally)
ZERO_VECTOR_WARNINGS = 0


def top_codes_per_coordinate(W_c: np.ndarray, vocab: Vocabulary, coordinate: int, top_n: int = 8) -> list[str]:
    """Codes with the largest weight on one embedding coordinate, descending.

    Row `coordinate` of the (embedding x vocab) table is ranked; ties break
    lexicographically by code string.
    """
    e, size = W_c.shape
    if not 0 <= coordinate < e:
        raise DataError(f"coordinate {coordinate} out of range [0, {e})")
    row = W_c[coordinate]
    order = sorted(range(size), key=lambda j: (-row[j], vocab.id_to_code[j]))
    return [vocab.id_to_code[j] for j in order[:top_n]]


def influential_coordinates(params: ModelParams, regression_weights: np.ndarray, top_m: int = 2):
    """Embedding coordinates with the strongest linearized pull on the regressor.

    influence(j) = |sum_m w_m W_p[m, j]| * max_c (W_c[j, c] + b_c[j]), for the
    first len(weights) rows of W_p and coordinates j below the embedding size.
    Returns (coordinate, score) pairs, descending, ties by coordinate index.
    """
    e = params.W_c.shape[0]
    w = np.asarray(regression_weights, dtype=float)
    if w.shape[0] > params.W_p.shape[0]:
        raise DataError(
            f"regression has {w.shape[0]} weights but the patient representation is {params.W_p.shape[0]}-dim"
        )
    through = np.abs(w @ params.W_p[: w.shape[0], :e])  # (e,)
    peak = (params.W_c + params.b_c[:, None]).max(axis=1)  # (e,)
    influence = through * peak
    order = sorted(range(e), key=lambda j: (-influence[j], j))
    return [(j, float(influence[j])) for j in order[:top_m]]


def patient_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; a zero vector yields 0 and bumps the warning tally."""
    global ZERO_VECTOR_WARNINGS
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        ZERO_VECTOR_WARNINGS += 1
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def reset_zero_vector_warnings() -> int:
    global ZERO_VECTOR_WARNINGS
    count = ZERO_VECTOR_WARNINGS
    ZERO_VECTOR_WARNINGS = 0
    return count


def group_coherence(code_vectors: dict[str, np.ndarray], truth: GroundTruth):
    """(mean intra-group cosine, mean inter-group cosine, nearest-neighbor purity).

    Only codes with a planted group and a vector participate.  Purity counts
    codes whose nearest neighbor (cosine, excluding self) shares their group;
    codes whose group has no other member are excluded from the purity
    denominator, and an all-singleton grouping is an error.
    """
    codes = sorted(c for c in code_vectors if c in truth.code_group)
    if len(codes) < 2:
        raise DataError("need at least two grouped codes")
    groups = np.array([truth.code_group[c] for c in codes])
    sizes = {g: int(np.sum(groups == g)) for g in set(groups.tolist())}
    if all(size == 1 for size in sizes.values()):
        raise DataError("every group has a single code; purity is undefined")

    X = np.stack([code_vectors[c] for c in codes]).astype(float)
    norms = np.linalg.norm(X, axis=1)
    norms[norms == 0.0] = 1.0
    unit = X / norms[:, None]
    sims = unit @ unit.T

    same = groups[:, None] == groups[None, :]
    off_diag = ~np.eye(len(codes), dtype=bool)
    intra = float(sims[same & off_diag].mean())
    inter = float(sims[~same].mean())

    np.fill_diagonal(sims, -np.inf)
    eligible = np.array([sizes[g] > 1 for g in groups])
    nearest = sims[eligible].argmax(axis=1)
    purity = float(np.mean(groups[eligible] == groups[nearest]))
    return intra, inter, purity


def project_2d(vectors: np.ndarray) -> np.ndarray:
    """Top-2 principal components of the centered rows, deterministic signs."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need a matrix with at least two rows")
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    comps = Vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], X.shape[1]))])
    for i in range(2):
        loading = comps[i]
        if loading.any() and loading[np.argmax(np.abs(loading))] < 0:
            comps[i] = -loading
    return Xc @ comps.T


def write_projection_csv(path, labels: list[str], coords: np.ndarray, tags: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "label"])
        for label, (x, y), tag in zip(labels, coords, tags):
            writer.writerow([label, f"{x:.6f}", f"{y:.6f}", tag])


def coordinate_report(params: ModelParams, vocab: Vocabulary, regression_weights, top_m=2, top_n=8) -> dict:
    """Influential coordinates with their top codes (figure/table style export)."""
    ranked = influential_coordinates(params, regression_weights, top_m=top_m)
    return {
        "coordinates": [
            {
                "coordinate": coord,
                "influence": score,
                "top_codes": top_codes_per_coordinate(params.W_c, vocab, coord, top_n=top_n),
            }
            for coord, score in ranked
        ]
    }


def save_coherence(path, intra: float, inter: float, purity: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"intra_group_cosine": intra, "inter_group_cosine": inter, "nn_purity": purity},
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
