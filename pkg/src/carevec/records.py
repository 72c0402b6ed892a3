"""Domain records for claims and patients plus their JSONL serialization.

A claims file is JSON-lines, one claim per line, snake_case keys, dates
as "YYYY-MM-DD".  Required fields: member_id, service_date, claim_kind
("medical" or "pharmacy"), codes (non-empty list of {"code", "type"}),
paid_amount (number, may be non-positive).  Optional fields:
place_of_service, visit_category, sex, birth_year, eligible (bool,
default true; continuous-eligibility flag, constant per member).

A cohort file is JSON-lines, one patient record per line, produced by
the preparation pipeline and safe to diff byte-for-byte: serialization
is deterministic (sorted keys, fixed separators).
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

from .errors import DataError

CODE_TYPES = ("diagnosis", "procedure", "medication")
CLAIM_KINDS = ("medical", "pharmacy")


@dataclass
class RawClaim:
    member_id: str
    service_date: dt.date
    claim_kind: str
    codes: list[tuple[str, str]]  # (code_string, code_type)
    paid_amount: float
    place_of_service: str | None = None
    visit_category: str | None = None
    sex: str | None = None
    birth_year: int | None = None
    eligible: bool = True
    line_no: int = 0  # 1-based line in the source file, kept for error reporting


@dataclass
class Visit:
    """All medical claims of one member on one service date, plus attached pharmacy claims.

    ``codes`` keeps raw multiplicity (sorted multiset): the binary visit
    encoding deduplicates later, while the patient count vector needs the
    instance counts.
    """

    date: dt.date
    codes: tuple[str, ...]
    cost: float
    place_of_service: str | None = None
    visit_category: str | None = None

    def unique_codes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.codes)))


@dataclass
class PatientRecord:
    member_id: str
    sex: str
    birth_year: int
    visits: list[Visit] = field(default_factory=list)
    annual_costs: dict[int, float] = field(default_factory=dict)
    eligible: bool = True


@dataclass
class DateWindow:
    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"window start {self.start} is after end {self.end}")

    def contains(self, day: dt.date) -> bool:
        return self.start <= day <= self.end

    @classmethod
    def parse(cls, text: str) -> "DateWindow":
        """Parse "YYYY-MM-DD:YYYY-MM-DD"."""
        parts = text.split(":")
        if len(parts) != 2:
            raise DataError(f"window must look like YYYY-MM-DD:YYYY-MM-DD, got {text!r}")
        try:
            start = dt.date.fromisoformat(parts[0])
            end = dt.date.fromisoformat(parts[1])
        except ValueError as exc:
            raise DataError(f"bad window date: {exc}") from exc
        return cls(start, end)


class CodeMapTable:
    """Code remapping table: source code -> target code, or None to drop the code.

    Codes not present in the table pass through unchanged.  Serialized as a
    JSON object; a null value marks a code that cannot be mapped.
    """

    def __init__(self, entries: dict[str, str | None]):
        self.entries = dict(entries)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path) -> "CodeMapTable":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"code map {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataError(f"code map {path}: expected a JSON object")
        for key, val in raw.items():
            if val is not None and not isinstance(val, str):
                raise DataError(f"code map {path}: value for {key!r} must be a string or null")
        return cls(raw)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.entries, fh, sort_keys=True, indent=0)
            fh.write("\n")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def visit_to_dict(visit: Visit) -> dict:
    return {
        "date": visit.date.isoformat(),
        "codes": list(visit.codes),
        "cost": visit.cost,
        "place_of_service": visit.place_of_service,
        "visit_category": visit.visit_category,
    }


def visit_from_dict(obj: dict) -> Visit:
    return Visit(
        date=dt.date.fromisoformat(obj["date"]),
        codes=tuple(obj["codes"]),
        cost=float(obj["cost"]),
        place_of_service=obj.get("place_of_service"),
        visit_category=obj.get("visit_category"),
    )


def record_to_dict(rec: PatientRecord) -> dict:
    return {
        "member_id": rec.member_id,
        "sex": rec.sex,
        "birth_year": rec.birth_year,
        "eligible": rec.eligible,
        "visits": [visit_to_dict(v) for v in rec.visits],
        "annual_costs": {str(y): c for y, c in sorted(rec.annual_costs.items())},
    }


def record_from_dict(obj: dict) -> PatientRecord:
    return PatientRecord(
        member_id=obj["member_id"],
        sex=obj["sex"],
        birth_year=int(obj["birth_year"]),
        visits=[visit_from_dict(v) for v in obj["visits"]],
        annual_costs={int(y): float(c) for y, c in obj["annual_costs"].items()},
        eligible=bool(obj.get("eligible", True)),
    )


def save_cohort(records: list[PatientRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dump(record_to_dict(rec)))
            fh.write("\n")


def load_cohort(path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"cohort {path} line {lineno}: {exc}") from exc
    return records
