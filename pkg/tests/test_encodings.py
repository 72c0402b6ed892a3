import datetime as dt

import numpy as np
import pytest

from carevec.encodings import (
    DemographicLayout,
    Vocabulary,
    build_demographic_layout,
    build_vocabulary,
    count_vector,
    demographics_patient,
    demographics_visit,
    encode_patient,
    reference_year,
)
from carevec.errors import DataError
from carevec.records import PatientRecord, Visit


def make_record(visit_codes, member="M1", sex="F", birth_year=2004):
    visits = [
        Visit(dt.date(2014, 1, 1) + dt.timedelta(days=i), tuple(sorted(codes)), 1.0)
        for i, codes in enumerate(visit_codes)
    ]
    return PatientRecord(member_id=member, sex=sex, birth_year=birth_year, visits=visits)


class TestVocabulary:
    def test_lexicographic_ids(self):
        vocab = build_vocabulary([make_record([("B", "A")])])
        assert vocab.code_to_id == {"A": 0, "B": 1}

    def test_deterministic(self):
        cohort = [make_record([("C", "A")]), make_record([("B",)], member="M2")]
        assert build_vocabulary(cohort).id_to_code == build_vocabulary(cohort).id_to_code

    def test_size_equals_distinct_codes(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cohort = [
                make_record([tuple(f"C{rng.integers(0, 30)}" for _ in range(rng.integers(1, 5)))], member=f"M{i}")
                for i in range(rng.integers(1, 6))
            ]
            distinct = {c for r in cohort for v in r.visits for c in v.codes}
            assert len(build_vocabulary(cohort)) == len(distinct)

    def test_empty_cohort_errors(self):
        with pytest.raises(DataError):
            build_vocabulary([])

    def test_roundtrip_file(self, tmp_path):
        vocab = Vocabulary(["A", "B", "C"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_code == vocab.id_to_code
        assert loaded.content_hash() == vocab.content_hash()


LAYOUT = DemographicLayout(places=("er", "inpatient", "office"), categories=("acute", "routine"))


class TestEncodePatient:
    def test_counts_aggregate_across_visits(self):
        record = make_record([("A", "B"), ("A",)])
        vocab = build_vocabulary([record])
        enc = encode_patient(record, vocab, LAYOUT, ref_year=2014)
        assert enc.counts == {0: 2, 1: 1}
        assert [list(v.active_ids) for v in enc.visit_encodings] == [[0, 1], [0]]

    def test_duplicates_dedup_in_visit_but_count(self):
        record = make_record([("A", "A", "B")])
        vocab = build_vocabulary([record])
        enc = encode_patient(record, vocab, LAYOUT, ref_year=2014)
        assert list(enc.visit_encodings[0].active_ids) == [0, 1]
        assert enc.counts == {0: 2, 1: 1}

    def test_unknown_code_errors_with_name(self):
        record = make_record([("A", "Q")])
        vocab = Vocabulary(["A"])
        with pytest.raises(DataError, match="'Q'"):
            encode_patient(record, vocab, LAYOUT, ref_year=2014)

    def test_skip_mode_counts_and_drops_empty_visits(self):
        record = make_record([("A", "Q"), ("Q",)])
        vocab = Vocabulary(["A"])
        enc = encode_patient(record, vocab, LAYOUT, ref_year=2014, unknown="skip")
        assert enc.n_skipped == 2
        assert enc.num_visits == 1

    def test_count_conservation(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            visit_codes = [
                tuple(f"C{rng.integers(0, 8)}" for _ in range(rng.integers(1, 6)))
                for _ in range(rng.integers(1, 5))
            ]
            record = make_record(visit_codes)
            vocab = build_vocabulary([record])
            enc = encode_patient(record, vocab, LAYOUT, ref_year=2014)
            assert sum(enc.counts.values()) == sum(len(v.codes) for v in record.visits)
            # y[j] >= 1 iff j appears in at least one visit encoding
            active = set()
            for v in enc.visit_encodings:
                active.update(v.active_ids.tolist())
            assert active == set(enc.counts.keys())

    def test_encode_decode_roundtrip(self):
        record = make_record([("B", "A"), ("C",)])
        vocab = build_vocabulary([record])
        enc = encode_patient(record, vocab, LAYOUT, ref_year=2014)
        decoded = sorted(vocab.id_to_code[i] for i in enc.counts)
        assert decoded == ["A", "B", "C"]

    def test_count_vector_densify(self):
        record = make_record([("A", "B"), ("A",)])
        vocab = build_vocabulary([record])
        enc = encode_patient(record, vocab, LAYOUT, ref_year=2014)
        np.testing.assert_array_equal(count_vector(enc, len(vocab)), [2.0, 1.0])
        np.testing.assert_allclose(count_vector(enc, len(vocab), log_scale=True), np.log1p([2.0, 1.0]))


class TestDemographics:
    def test_age_ten_female(self):
        record = make_record([("A",)], sex="F", birth_year=2004)
        np.testing.assert_allclose(demographics_patient(record, 2014), [0.10, 1, 0, 0])

    def test_age_zero(self):
        record = make_record([("A",)], birth_year=2014)
        assert demographics_patient(record, 2014)[0] == 0.0

    def test_unknown_sex_all_zero(self):
        record = make_record([("A",)], sex="unknown")
        np.testing.assert_array_equal(demographics_patient(record, 2014)[1:], [0, 0, 0])

    def test_visit_onehot(self):
        visit = Visit(dt.date(2014, 1, 1), ("A",), 1.0, place_of_service="er", visit_category="acute")
        d = demographics_visit(visit, LAYOUT)
        assert d.shape == (5,)
        assert d.sum() == 2.0
        assert d[0] == 1.0 and d[3] == 1.0

    def test_missing_place_is_zero_block(self):
        visit = Visit(dt.date(2014, 1, 1), ("A",), 1.0, visit_category="acute")
        d = demographics_visit(visit, LAYOUT)
        np.testing.assert_array_equal(d[:3], [0, 0, 0])

    def test_deterministic(self):
        visit = Visit(dt.date(2014, 1, 1), ("A",), 1.0, place_of_service="office")
        np.testing.assert_array_equal(demographics_visit(visit, LAYOUT), demographics_visit(visit, LAYOUT))

    def test_layout_from_cohort(self):
        visits = [
            Visit(dt.date(2014, 1, 1), ("A",), 1.0, place_of_service="office", visit_category="routine"),
            Visit(dt.date(2014, 1, 2), ("A",), 1.0, place_of_service="er"),
        ]
        cohort = [PatientRecord("M1", "F", 2000, visits=visits)]
        layout = build_demographic_layout(cohort)
        assert layout.places == ("er", "office")
        assert layout.categories == ("routine",)
        assert layout.visit_dim == 3

    def test_reference_year(self):
        assert reference_year([make_record([("A",)])]) == 2014
