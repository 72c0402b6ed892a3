"""Code vocabulary and sparse patient/visit encodings.

A patient is encoded as a count vector over the vocabulary (instance
counts across all visits) plus a dense demographic vector; each visit is
a sorted list of distinct code ids plus a visit-level demographic
vector.  Demographic layouts are frozen when the vocabulary is built so
that encodings stay comparable between training and evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .records import PatientRecord, Visit

SEX_SLOTS = ("F", "M", "other")


class Vocabulary:
    """Bijection between code strings and dense integer ids (lexicographic order)."""

    def __init__(self, codes):
        self.id_to_code: list[str] = list(codes)
        self.code_to_id: dict[str, int] = {c: i for i, c in enumerate(self.id_to_code)}
        if len(self.code_to_id) != len(self.id_to_code):
            raise DataError("duplicate codes in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_code)

    def __contains__(self, code: str) -> bool:
        return code in self.code_to_id

    def content_hash(self) -> str:
        blob = ("\n".join(self.id_to_code) + "\n").encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        # one code per line, line number == id
        with open(path, "w", encoding="utf-8") as fh:
            for code in self.id_to_code:
                fh.write(code + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            codes = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(codes)


def build_vocabulary(cohort: list[PatientRecord]) -> Vocabulary:
    """Collect every code appearing in any visit; ids follow lexicographic order."""
    if not cohort:
        raise DataError("cannot build a vocabulary from an empty cohort")
    codes = set()
    for rec in cohort:
        for visit in rec.visits:
            codes.update(visit.codes)
    if not codes:
        raise DataError("cohort contains no codes")
    return Vocabulary(sorted(codes))


@dataclass
class DemographicLayout:
    """Fixed category lists for the visit-level demographic one-hots."""

    places: tuple[str, ...] = ()
    categories: tuple[str, ...] = ()

    @property
    def visit_dim(self) -> int:
        return len(self.places) + len(self.categories)

    @property
    def patient_dim(self) -> int:
        return 1 + len(SEX_SLOTS)  # normalized age plus sex one-hot

    def to_dict(self) -> dict:
        return {"places": list(self.places), "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, obj: dict) -> "DemographicLayout":
        return cls(tuple(obj["places"]), tuple(obj["categories"]))


def build_demographic_layout(cohort: list[PatientRecord]) -> DemographicLayout:
    places = set()
    categories = set()
    for rec in cohort:
        for visit in rec.visits:
            if visit.place_of_service is not None:
                places.add(visit.place_of_service)
            if visit.visit_category is not None:
                categories.add(visit.visit_category)
    return DemographicLayout(tuple(sorted(places)), tuple(sorted(categories)))


def demographics_patient(record: PatientRecord, ref_year: int) -> np.ndarray:
    """[age_at_ref_year / 100, sex one-hot over (F, M, other)].

    Unrecognized sex values leave the one-hot block all zero; negative ages
    clamp to 0.
    """
    d = np.zeros(1 + len(SEX_SLOTS))
    age = max(ref_year - record.birth_year, 0)
    d[0] = age / 100.0
    if record.sex in SEX_SLOTS:
        d[1 + SEX_SLOTS.index(record.sex)] = 1.0
    return d


def demographics_visit(visit: Visit, layout: DemographicLayout) -> np.ndarray:
    """One-hot of place_of_service then one-hot of visit_category; unseen values stay zero."""
    d = np.zeros(layout.visit_dim)
    if visit.place_of_service in layout.places:
        d[layout.places.index(visit.place_of_service)] = 1.0
    if visit.visit_category in layout.categories:
        d[len(layout.places) + layout.categories.index(visit.visit_category)] = 1.0
    return d


@dataclass
class VisitEncoding:
    active_ids: np.ndarray  # sorted distinct code ids, dtype int64
    demo: np.ndarray


@dataclass
class PatientEncoding:
    member_id: str
    counts: dict[int, int]
    demo: np.ndarray
    visit_encodings: list[VisitEncoding]
    annual_costs: dict[int, float] = field(default_factory=dict)
    n_skipped: int = 0  # code instances dropped because they were not in the vocabulary
    kept_visit_indices: list[int] = field(default_factory=list)  # positions into the source record's visits

    @property
    def num_visits(self) -> int:
        return len(self.visit_encodings)


def encode_patient(
    record: PatientRecord,
    vocab: Vocabulary,
    layout: DemographicLayout,
    ref_year: int,
    unknown: str = "error",
) -> PatientEncoding:
    """Encode one record against a fixed vocabulary.

    unknown="error" raises on the first out-of-vocabulary code (training
    contract); unknown="skip" drops such codes and counts them, removing
    visits that become empty (evaluation contract).
    """
    if unknown not in ("error", "skip"):
        raise ValueError(f"unknown must be 'error' or 'skip', got {unknown!r}")
    counts: dict[int, int] = {}
    visit_encodings = []
    kept = []
    skipped = 0
    for position, visit in enumerate(record.visits):
        ids = []
        for code in visit.codes:
            idx = vocab.code_to_id.get(code)
            if idx is None:
                if unknown == "error":
                    raise DataError(f"code {code!r} (member {record.member_id}) is not in the vocabulary")
                skipped += 1
                continue
            ids.append(idx)
            counts[idx] = counts.get(idx, 0) + 1
        if not ids:
            continue
        kept.append(position)
        visit_encodings.append(
            VisitEncoding(
                active_ids=np.array(sorted(set(ids)), dtype=np.int64),
                demo=demographics_visit(visit, layout),
            )
        )
    return PatientEncoding(
        member_id=record.member_id,
        counts=counts,
        demo=demographics_patient(record, ref_year),
        visit_encodings=visit_encodings,
        annual_costs=dict(record.annual_costs),
        n_skipped=skipped,
        kept_visit_indices=kept,
    )


def encode_cohort(records, vocab, layout, ref_year, unknown="error") -> list[PatientEncoding]:
    return [encode_patient(rec, vocab, layout, ref_year, unknown=unknown) for rec in records]


def count_vector(enc: PatientEncoding, size: int, log_scale: bool = False) -> np.ndarray:
    """Densify the count map; optional log(1+count) scaling for stability."""
    y = np.zeros(size)
    for idx, cnt in enc.counts.items():
        y[idx] = cnt
    return np.log1p(y) if log_scale else y


def reference_year(cohort: list[PatientRecord]) -> int:
    """Age reference: earliest visit year in the cohort (deterministic, no extra plumbing)."""
    years = [v.date.year for rec in cohort for v in rec.visits]
    if not years:
        raise DataError("cohort has no visits; cannot infer a reference year")
    return min(years)
