"""Claims parsing and cohort preparation.

Pipeline: parse claims JSONL, remap codes through a pluggable table,
merge pharmacy claims into medical visits, clamp non-positive visit
costs to zero, assemble per-member records, filter the cohort, and
split it by patient.

Conventions baked in here:
  * Pharmacy claims attach to the latest medical visit dated at most 14
    calendar days earlier (day 14 still merges, day 15 drops).
  * Visit costs are clamped at the visit level after pharmacy amounts
    are added in.
  * A member's ``annual_costs`` aggregates every calendar year seen in
    the claims, while ``visits`` keeps only visits inside the requested
    observation window.  A later holdout year therefore stays available
    as a label without its codes entering the model.
"""

from __future__ import annotations

import datetime as dt
import json
from collections import defaultdict

import numpy as np

from .errors import DataError
from .records import (
    CLAIM_KINDS,
    CODE_TYPES,
    CodeMapTable,
    DateWindow,
    PatientRecord,
    RawClaim,
    Visit,
)

PHARMACY_MERGE_DAYS = 14


def parse_claims_file(path, fmt: str = "jsonl") -> list[RawClaim]:
    """Read a claims file into RawClaim objects, keeping source line numbers."""
    if fmt != "jsonl":
        raise DataError(f"unsupported claims format {fmt!r}")
    claims = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from exc
            claims.append(_claim_from_dict(obj, lineno, path))
    return claims


def _claim_from_dict(obj: dict, lineno: int, path) -> RawClaim:
    def fail(msg: str):
        raise DataError(f"{path} line {lineno}: {msg}")

    if not isinstance(obj, dict):
        fail("expected a JSON object")
    member_id = obj.get("member_id")
    if not isinstance(member_id, str) or not member_id:
        fail("member_id must be a non-empty string")
    try:
        service_date = dt.date.fromisoformat(str(obj.get("service_date")))
    except (TypeError, ValueError):
        fail(f"service_date {obj.get('service_date')!r} is not an ISO-8601 date")
    kind = obj.get("claim_kind")
    if kind not in CLAIM_KINDS:
        fail(f"claim_kind {kind!r} not one of {CLAIM_KINDS}")
    raw_codes = obj.get("codes")
    if not isinstance(raw_codes, list) or not raw_codes:
        fail("codes must be a non-empty list")
    codes = []
    for entry in raw_codes:
        if not isinstance(entry, dict) or "code" not in entry or "type" not in entry:
            fail(f"code entry {entry!r} must be an object with 'code' and 'type'")
        ctype = entry["type"]
        if ctype not in CODE_TYPES:
            fail(f"unknown code type {ctype!r}, expected one of {CODE_TYPES}")
        code = entry["code"]
        if not isinstance(code, str) or not code:
            fail(f"code {code!r} must be a non-empty string")
        codes.append((code, ctype))
    paid = obj.get("paid_amount")
    if isinstance(paid, bool) or not isinstance(paid, (int, float)):
        fail(f"paid_amount {paid!r} is not a number")
    birth_year = obj.get("birth_year")
    if birth_year is not None and not isinstance(birth_year, int):
        fail(f"birth_year {birth_year!r} is not an integer")
    eligible = obj.get("eligible", True)
    if not isinstance(eligible, bool):
        fail(f"eligible {eligible!r} is not a boolean")
    return RawClaim(
        member_id=member_id,
        service_date=service_date,
        claim_kind=kind,
        codes=codes,
        paid_amount=float(paid),
        place_of_service=obj.get("place_of_service"),
        visit_category=obj.get("visit_category"),
        sex=obj.get("sex"),
        birth_year=birth_year,
        eligible=eligible,
        line_no=lineno,
    )


def remap_codes(claims: list[RawClaim], table: CodeMapTable) -> list[RawClaim]:
    """Apply the code map to every claim.

    Codes mapped to None are removed; unmapped codes pass through.  Claims
    whose code list becomes empty are dropped.
    """
    out = []
    for claim in claims:
        codes = []
        for code, ctype in claim.codes:
            if code in table.entries:
                target = table.entries[code]
                if target is None:
                    continue
                codes.append((target, ctype))
            else:
                codes.append((code, ctype))
        if not codes:
            continue
        kept = RawClaim(**{**claim.__dict__, "codes": codes})
        out.append(kept)
    return out


def merge_pharmacy(claims: list[RawClaim]) -> list[Visit]:
    """Fold one member's claims into visits.

    Medical claims sharing a service date form one visit.  A pharmacy
    claim attaches to the latest medical visit dated within the previous
    14 days (inclusive); pharmacy claims with no such visit are dropped.
    Attached codes join the visit's code multiset and the paid amount adds
    to the visit cost.
    """
    medical = [c for c in claims if c.claim_kind == "medical"]
    pharmacy = [c for c in claims if c.claim_kind == "pharmacy"]

    by_date: dict[dt.date, list[RawClaim]] = defaultdict(list)
    for claim in medical:
        by_date[claim.service_date].append(claim)

    visits: dict[dt.date, Visit] = {}
    for date in sorted(by_date):
        group = by_date[date]
        codes: list[str] = []
        cost = 0.0
        place = None
        category = None
        for claim in group:
            codes.extend(code for code, _ in claim.codes)
            cost += claim.paid_amount
            if place is None:
                place = claim.place_of_service
            if category is None:
                category = claim.visit_category
        visits[date] = Visit(
            date=date,
            codes=tuple(sorted(codes)),
            cost=cost,
            place_of_service=place,
            visit_category=category,
        )

    visit_dates = sorted(visits)
    for claim in pharmacy:
        horizon = claim.service_date - dt.timedelta(days=PHARMACY_MERGE_DAYS)
        target = None
        for date in visit_dates:
            if horizon <= date <= claim.service_date:
                target = date  # keep scanning: latest qualifying visit wins
            elif date > claim.service_date:
                break
        if target is None:
            continue
        visit = visits[target]
        visits[target] = Visit(
            date=visit.date,
            codes=tuple(sorted(visit.codes + tuple(code for code, _ in claim.codes))),
            cost=visit.cost + claim.paid_amount,
            place_of_service=visit.place_of_service,
            visit_category=visit.visit_category,
        )

    return [visits[d] for d in visit_dates]


def clamp_costs(visits: list[Visit]) -> list[Visit]:
    """Set any non-positive visit cost to exactly 0; leave positive costs alone."""
    out = []
    for visit in visits:
        if visit.cost <= 0:
            out.append(Visit(visit.date, visit.codes, 0.0, visit.place_of_service, visit.visit_category))
        else:
            out.append(visit)
    return out


def build_patient_records(claims: list[RawClaim], window: DateWindow) -> list[PatientRecord]:
    """Group claims per member, merge and clamp, then assemble records.

    Demographics come from the first claim of the member (file order); a
    member is continuously eligible only if every claim says so.  Output is
    sorted by member_id for deterministic serialization.
    """
    by_member: dict[str, list[RawClaim]] = defaultdict(list)
    for claim in claims:
        by_member[claim.member_id].append(claim)

    records = []
    for member_id in sorted(by_member):
        member_claims = by_member[member_id]
        first = member_claims[0]
        sex = first.sex if first.sex is not None else "other"
        birth_year = first.birth_year if first.birth_year is not None else 0
        eligible = all(c.eligible for c in member_claims)

        visits = clamp_costs(merge_pharmacy(member_claims))
        annual: dict[int, float] = defaultdict(float)
        for visit in visits:
            annual[visit.date.year] += visit.cost
        window_visits = [v for v in visits if window.contains(v.date)]
        records.append(
            PatientRecord(
                member_id=member_id,
                sex=sex,
                birth_year=birth_year,
                visits=window_visits,
                annual_costs=dict(annual),
                eligible=eligible,
            )
        )
    return records


def filter_cohort(records: list[PatientRecord], window: DateWindow, min_visits: int) -> list[PatientRecord]:
    """Keep continuously eligible records with at least min_visits visits inside the window."""
    if min_visits < 1:
        raise DataError(f"min_visits must be >= 1, got {min_visits}")
    kept = []
    for rec in records:
        n_inside = sum(1 for v in rec.visits if window.contains(v.date))
        if rec.eligible and n_inside >= min_visits:
            kept.append(rec)
    return kept


def split_dataset(records: list, ratios: tuple[float, float, float], seed: int):
    """Partition records by patient into (train, valid, test).

    Sizes are within one of the exact proportions (floor allocation plus
    largest remainders).  The permutation is drawn from the seed; each
    returned list preserves the input order of its members.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)!r}")
    n = len(records)
    if n < 3:
        raise DataError(f"need at least 3 records to split, got {n}")

    exact = [r * n for r in ratios]
    sizes = [int(np.floor(x)) for x in exact]
    remainders = [x - s for x, s in zip(exact, sizes)]
    leftover = n - sum(sizes)
    for idx in sorted(range(3), key=lambda i: (-remainders[i], i))[:leftover]:
        sizes[idx] += 1

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    bounds = [sizes[0], sizes[0] + sizes[1]]
    buckets = (order[: bounds[0]], order[bounds[0] : bounds[1]], order[bounds[1] :])
    return tuple([records[i] for i in sorted(idxs)] for idxs in buckets)


def prepare_cohort(
    claims_path,
    window: DateWindow,
    min_visits: int = 2,
    codemap: CodeMapTable | None = None,
) -> list[PatientRecord]:
    """Full preparation pipeline from a claims file to a filtered cohort."""
    claims = parse_claims_file(claims_path)
    if codemap is not None:
        claims = remap_codes(claims, codemap)
    records = build_patient_records(claims, window)
    return filter_cohort(records, window, min_visits)
