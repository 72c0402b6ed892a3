"""Trainable tensors, their initialization, and checkpoint serialization.

Checkpoint format: one UTF-8 JSON header line (format name, version,
hyperparameters, vocabulary, demographic layout, declared tensor shapes)
followed by the tensors as raw little-endian float64, row-major, in the
header-declared order.  Loading is bit-exact with saving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION
from .encodings import DemographicLayout, Vocabulary
from .errors import (
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

FORMAT_NAME = "carevec-checkpoint"
TENSOR_ORDER = ("W_c", "b_c", "W_v", "b_v", "W_p", "b_p", "W_o", "b_o", "W_s", "b_s")


@dataclass
class Dims:
    vocab_size: int
    embedding: int
    visit_hidden: int
    patient_hidden: int
    patient_demo: int
    visit_demo: int

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        e, hv, hp = self.embedding, self.visit_hidden, self.patient_hidden
        c = self.vocab_size
        return {
            "W_c": (e, c),
            "b_c": (e,),
            "W_v": (hv, e + self.visit_demo),
            "b_v": (hv,),
            "W_p": (hp, e + self.patient_demo),
            "b_p": (hp,),
            "W_o": (c, hp + hv),
            "b_o": (c,),
            "W_s": (hp + hv + e,),
            "b_s": (1,),
        }


@dataclass
class ModelParams:
    """All trainable tensors.  b_s is kept as a length-1 array for uniform handling."""

    W_c: np.ndarray
    b_c: np.ndarray
    W_v: np.ndarray
    b_v: np.ndarray
    W_p: np.ndarray
    b_p: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    W_s: np.ndarray
    b_s: np.ndarray

    def tensors(self):
        for name in TENSOR_ORDER:
            yield name, getattr(self, name)

    def get(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: arr.copy() for name, arr in self.tensors()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.tensors()}

    def dims(self) -> Dims:
        e, c = self.W_c.shape
        hv = self.W_v.shape[0]
        hp = self.W_p.shape[0]
        return Dims(
            vocab_size=c,
            embedding=e,
            visit_hidden=hv,
            patient_hidden=hp,
            patient_demo=self.W_p.shape[1] - e if hp else 0,
            visit_demo=self.W_v.shape[1] - e,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for _, arr in self.tensors())


def init_params(dims: Dims, seed: int, scale: float = 0.05) -> ModelParams:
    """Uniform(-scale, scale) weights in a fixed order, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = dims.tensor_shapes()
    values: dict[str, np.ndarray] = {}
    for name in ("W_c", "W_v", "W_p", "W_o", "W_s"):
        values[name] = rng.uniform(-scale, scale, size=shapes[name])
    for name in ("b_c", "b_v", "b_p", "b_o", "b_s"):
        values[name] = np.zeros(shapes[name])
    return ModelParams(**values)


@dataclass
class TrainedModel:
    """Parameters plus everything needed to encode new records consistently."""

    params: ModelParams
    vocab: Vocabulary
    layout: DemographicLayout
    ref_year: int
    mode: str
    hyper: dict = field(default_factory=dict)


def save_checkpoint(model: TrainedModel, path) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": CHECKPOINT_FORMAT_VERSION,
        "mode": model.mode,
        "hyper": model.hyper,
        "ref_year": model.ref_year,
        "vocab": model.vocab.id_to_code,
        "vocab_hash": model.vocab.content_hash(),
        "layout": model.layout.to_dict(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in model.params.tensors()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(b"\n")
        for _, arr in model.params.tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointVersionError(f"{path}: unreadable checkpoint header ({exc})") from exc
        if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
            raise CheckpointVersionError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {header.get('version')!r}, "
                f"this build reads version {CHECKPOINT_FORMAT_VERSION}"
            )
        declared = header.get("tensors", [])
        names = [t.get("name") for t in declared]
        if names != list(TENSOR_ORDER):
            raise CheckpointShapeError(f"{path}: tensor list {names} does not match {list(TENSOR_ORDER)}")
        arrays = {}
        for entry in declared:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointTruncatedError(
                    f"{path}: tensor {entry['name']} needs {count * 8} bytes, got {len(raw)}"
                )
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise CheckpointShapeError(f"{path}: trailing bytes after the declared tensors")

    params = ModelParams(**arrays)
    _check_mutual_shapes(params, path)
    vocab = Vocabulary(header["vocab"])
    if vocab.content_hash() != header.get("vocab_hash"):
        raise CheckpointShapeError(f"{path}: vocabulary hash does not match its contents")
    return TrainedModel(
        params=params,
        vocab=vocab,
        layout=DemographicLayout.from_dict(header["layout"]),
        ref_year=int(header["ref_year"]),
        mode=header.get("mode", "pv"),
        hyper=header.get("hyper", {}),
    )


def _check_mutual_shapes(params: ModelParams, path) -> None:
    e, c = params.W_c.shape
    hv = params.W_v.shape[0]
    hp = params.W_p.shape[0]
    expect = {
        "b_c": (e,),
        "b_v": (hv,),
        "b_p": (hp,),
        "W_o": (c, hp + hv),
        "b_o": (c,),
        "W_s": (hp + hv + e,),
        "b_s": (1,),
    }
    for name, shape in expect.items():
        if params.get(name).shape != shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name} has shape {params.get(name).shape}, expected {shape}"
            )
    if params.W_v.shape[1] < e or (hp and params.W_p.shape[1] < e):
        raise CheckpointShapeError(f"{path}: hidden-layer input narrower than the embedding size")
