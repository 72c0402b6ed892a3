"""Synthetic claims corpus with planted disease groups and a cost model.

Members draw one to three condition groups.  Chronic members carry at
least one chronic-type group whose codes persist across their visits
(and keep generating cost in the holdout year); acute members draw only
acute-type groups, visited in contiguous episodes, whose holdout-year
cost largely evaporates.  Visit codes come mostly from the member's
groups plus uniform noise codes, so within-group co-occurrence is the
recoverable signal.  Visit cost sums planted per-code weights times
member severity, an age multiplier, a place-of-service multiplier, and
lognormal noise; roughly 4% of claims are emitted with a negated paid
amount to exercise cost clamping downstream.

Everything is deterministic from the seed: global structure and each
member use their own numbered seed streams, so generation is order
independent.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError

PLACES = ("office", "er", "inpatient")
PLACE_MULT = {"office": 1.0, "er": 2.0, "inpatient": 6.0}
CATEGORIES = ("routine", "acute-care", "chronic-care")


@dataclass
class GenConfig:
    n_members: int = 2000
    n_groups: int = 10
    codes_per_group: int = 20
    n_noise_codes: int = 50
    visits_per_member_mean: float = 14.5
    codes_per_visit_mean: float = 5.2
    cost_weights: dict | None = None  # code -> weight; derived from the seed when None
    chronic_fraction: float = 0.2
    seed: int = 7
    # corpus shape knobs
    start_year: int = 2014
    window_years: int = 2
    holdout_year: int = 2016
    noise_rate: float = 0.12
    codes_per_visit_cap: int = 15
    cost_sigma: float = 0.5
    age_cost_coeff: float = 1.2
    severity_sigma: float = 0.4
    chronic_code_rate: float = 0.6
    episode_switch_rate: float = 0.34
    holdout_visit_factor: float = 0.45
    acute_holdout_visits: float = 1.2
    ineligible_rate: float = 0.02
    negative_amount_rate: float = 0.04

    def validate(self) -> None:
        counts = (
            self.n_members,
            self.n_groups,
            self.codes_per_group,
            self.n_noise_codes,
            self.codes_per_visit_cap,
        )
        if any(c <= 0 for c in counts):
            raise DataError("all generator counts must be positive")
        if self.visits_per_member_mean < 1 or self.codes_per_visit_mean < 1:
            raise DataError("per-member visit and per-visit code means must be >= 1")
        if not 0.0 <= self.chronic_fraction <= 1.0:
            raise DataError("chronic_fraction must be in [0, 1]")
        pool = self.n_groups * self.codes_per_group + self.n_noise_codes
        if pool < self.codes_per_visit_mean:
            raise DataError(
                f"code pool of {pool} cannot support {self.codes_per_visit_mean} codes per visit"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "GenConfig":
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "GenConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise DataError(f"generator config {path}: {exc}") from exc


@dataclass
class GroundTruth:
    code_group: dict[str, int] = field(default_factory=dict)
    member_conditions: dict[str, list[int]] = field(default_factory=dict)
    member_chronic: dict[str, bool] = field(default_factory=dict)

    def save(self, path) -> None:
        payload = {
            "code_group": self.code_group,
            "member_conditions": self.member_conditions,
            "member_chronic": self.member_chronic,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            code_group={k: int(v) for k, v in obj["code_group"].items()},
            member_conditions={k: [int(g) for g in v] for k, v in obj["member_conditions"].items()},
            member_chronic={k: bool(v) for k, v in obj["member_chronic"].items()},
        )


def _code_type(index: int) -> str:
    if index % 5 == 3:
        return "procedure"
    if index % 5 == 4:
        return "medication"
    return "diagnosis"


def _code_name(group: int, index: int) -> str:
    prefix = {"diagnosis": "D", "procedure": "P", "medication": "M"}[_code_type(index)]
    return f"{prefix}{group:02d}.{index:03d}"


@dataclass
class _Universe:
    group_codes: list[list[str]]
    noise_codes: list[str]
    code_type: dict[str, str]
    weight: dict[str, float]
    holdout_weight: dict[str, float]
    chronic_groups: list[int]
    acute_groups: list[int]


def _build_universe(config: GenConfig) -> _Universe:
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 5)))
    n_chronic = max(1, config.n_groups // 2)
    chronic_groups = list(range(n_chronic))
    acute_groups = list(range(n_chronic, config.n_groups)) or chronic_groups

    group_codes: list[list[str]] = []
    code_type: dict[str, str] = {}
    weight: dict[str, float] = {}
    holdout_weight: dict[str, float] = {}
    for g in range(config.n_groups):
        base = float(rng.uniform(30.0, 400.0))
        persist = float(rng.uniform(0.9, 1.4)) if g in chronic_groups else float(rng.uniform(0.08, 0.25))
        codes = []
        for i in range(config.codes_per_group):
            code = _code_name(g, i)
            codes.append(code)
            code_type[code] = _code_type(i)
            weight[code] = base * float(rng.uniform(0.8, 1.25))
            holdout_weight[code] = weight[code] * persist
        group_codes.append(codes)

    noise_codes = []
    for i in range(config.n_noise_codes):
        code = f"Z.{i:03d}"
        noise_codes.append(code)
        code_type[code] = "diagnosis"
        weight[code] = float(rng.uniform(5.0, 25.0))
        holdout_weight[code] = weight[code] * 0.15

    if config.cost_weights:
        weight.update({k: float(v) for k, v in config.cost_weights.items()})
    return _Universe(group_codes, noise_codes, code_type, weight, holdout_weight, chronic_groups, acute_groups)


def _member_profile(config: GenConfig, uni: _Universe, idx: int, rng: np.random.Generator):
    sex = str(rng.choice(["F", "M", "other"], p=[0.49, 0.49, 0.02]))
    age = int(rng.integers(0, 86))
    chronic = bool(rng.random() < config.chronic_fraction)
    n_cond = int(rng.choice([1, 2, 3], p=[0.2, 0.35, 0.45]))
    if chronic:
        first = int(rng.choice(uni.chronic_groups))
        rest = [g for g in range(config.n_groups) if g != first]
        extra = rng.choice(rest, size=min(n_cond - 1, len(rest)), replace=False) if n_cond > 1 else []
        groups = sorted([first] + [int(g) for g in extra])
    else:
        pool = uni.acute_groups
        take = min(n_cond, len(pool))
        groups = sorted(int(g) for g in rng.choice(pool, size=take, replace=False))
    severity = float(np.exp(rng.normal(0.0, config.severity_sigma)))
    eligible = bool(rng.random() >= config.ineligible_rate)
    return sex, age, chronic, groups, severity, eligible


def _draw_visit_codes(config, uni, rng, groups, chronic_groups_of_member, episode_group, chronic):
    n_codes = 1 + int(min(rng.poisson(config.codes_per_visit_mean - 1), config.codes_per_visit_cap - 1))
    codes = []
    for _ in range(n_codes):
        if rng.random() < config.noise_rate:
            codes.append(uni.noise_codes[int(rng.integers(0, len(uni.noise_codes)))])
        elif chronic and chronic_groups_of_member and rng.random() < config.chronic_code_rate:
            g = int(rng.choice(chronic_groups_of_member))
            codes.append(uni.group_codes[g][int(rng.integers(0, config.codes_per_group))])
        else:
            codes.append(uni.group_codes[episode_group][int(rng.integers(0, config.codes_per_group))])
    if all(uni.code_type[c] == "medication" for c in codes):
        codes[0] = uni.group_codes[episode_group][0]  # index 0 is always a diagnosis
    return codes


def _claim(member_id, date, kind, codes, paid, uni, place=None, category=None, sex=None, birth_year=None, eligible=True):
    return {
        "member_id": member_id,
        "service_date": date.isoformat(),
        "claim_kind": kind,
        "codes": [{"code": c, "type": uni.code_type[c]} for c in codes],
        "paid_amount": round(paid, 2),
        "place_of_service": place,
        "visit_category": category,
        "sex": sex,
        "birth_year": birth_year,
        "eligible": eligible,
    }


def generate(config: GenConfig):
    """Produce (claim dicts in emission order, GroundTruth)."""
    config.validate()
    uni = _build_universe(config)
    window_start = dt.date(config.start_year, 1, 1)
    window_days = (dt.date(config.start_year + config.window_years, 1, 1) - window_start).days
    holdout_start = dt.date(config.holdout_year, 1, 1)

    truth = GroundTruth()
    for g, codes in enumerate(uni.group_codes):
        for code in codes:
            truth.code_group[code] = g

    claims: list[dict] = []
    for idx in range(config.n_members):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 17, idx)))
        member_id = f"M{idx:05d}"
        sex, age, chronic, groups, severity, eligible = _member_profile(config, uni, idx, rng)
        birth_year = config.start_year - age
        truth.member_conditions[member_id] = groups
        truth.member_chronic[member_id] = chronic
        member_chronic_groups = [g for g in groups if g in uni.chronic_groups]
        base_mult = severity * float(np.exp(config.age_cost_coeff * age / 100.0))

        def emit_visit(date, codes, weights, place, category):
            mult = base_mult * PLACE_MULT[place] * float(np.exp(rng.normal(0.0, config.cost_sigma)))
            medical = [c for c in codes if uni.code_type[c] != "medication"]
            meds = [c for c in codes if uni.code_type[c] == "medication"]
            paid_medical = sum(weights[c] for c in medical) * mult
            if rng.random() < config.negative_amount_rate:
                paid_medical = -paid_medical
            claims.append(
                _claim(member_id, date, "medical", medical, paid_medical, uni,
                       place=place, category=category, sex=sex, birth_year=birth_year, eligible=eligible)
            )
            if meds:
                pharm_date = date + dt.timedelta(days=int(rng.integers(0, 11)))
                paid_meds = sum(weights[c] for c in meds) * mult
                if rng.random() < config.negative_amount_rate:
                    paid_meds = -paid_meds
                claims.append(
                    _claim(member_id, pharm_date, "pharmacy", meds, paid_meds, uni,
                           sex=sex, birth_year=birth_year, eligible=eligible)
                )

        # observation-window visits, in contiguous single-group episodes
        n_visits = 1 + int(rng.poisson(config.visits_per_member_mean - 1))
        n_visits = min(n_visits, window_days)
        days = np.sort(rng.choice(window_days, size=n_visits, replace=False))
        episode_group = int(rng.choice(groups))
        for day in days:
            if rng.random() < config.episode_switch_rate:
                episode_group = int(rng.choice(groups))
            codes = _draw_visit_codes(config, uni, rng, groups, member_chronic_groups, episode_group, chronic)
            has_chronic_code = any(truth.code_group.get(c) in uni.chronic_groups for c in codes)
            if chronic and has_chronic_code:
                category = "chronic-care" if rng.random() < 0.6 else "routine"
            else:
                category = "acute-care" if rng.random() < 0.6 else "routine"
            r = rng.random()
            er_rate = 0.12 if category == "acute-care" else 0.04
            place = "er" if r < er_rate else ("inpatient" if r < er_rate + 0.02 else "office")
            emit_visit(window_start + dt.timedelta(days=int(day)), codes, uni.weight, place, category)

        # holdout-year visits: chronic conditions persist, acute ones fade
        if chronic:
            n_holdout = 1 + int(rng.poisson(config.holdout_visit_factor * config.visits_per_member_mean))
        else:
            n_holdout = int(rng.poisson(config.acute_holdout_visits))
        n_holdout = min(n_holdout, 365)
        if n_holdout:
            days = np.sort(rng.choice(365, size=n_holdout, replace=False))
            source_groups = member_chronic_groups if (chronic and member_chronic_groups) else groups
            for day in days:
                episode_group = int(rng.choice(source_groups))
                codes = _draw_visit_codes(config, uni, rng, groups, member_chronic_groups, episode_group, chronic)
                emit_visit(holdout_start + dt.timedelta(days=int(day)), codes, uni.holdout_weight, "office", "routine")

    return claims, truth


def write_claims(claims: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for claim in claims:
            fh.write(json.dumps(claim, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
