from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autostega.errors import DataError
from autostega.library import (
    LibraryFormatError,
    MigrationError,
    SchemaError,
    StrategyEntry,
    StrategyLibrary,
    discrepancy,
    normalize_name,
    validate_summary,
)

from .oracles import brute_force_ranking, discrepancy_table

CLOCK = "2025-01-01T00:00:00+00:00"
DIM = 8


def summary(name="Transition Mapping", score=9.0, excerpt="Moreover, the plan...") -> dict:
    return {
        "name": name,
        "definition": "Transitions carry the bits.",
        "technique": ["transition mapping"],
        "applicable_scenarios": ["general"],
        "characteristics": ["low capacity"],
        "examples": [{"stego_excerpt": excerpt, "overall_score": score, "scores": {"efficiency": score}}],
    }


def make_entry(name="Transition Mapping", score=9.0, key=None, metrics=None, excerpt="Moreover, the plan...") -> StrategyEntry:
    e = StrategyEntry.from_summary(summary(name, score, excerpt))
    e.key = np.asarray(key if key is not None else np.eye(DIM)[0], dtype=float)
    e.recorded_metrics = metrics or {"efficiency": score}
    return e


def library(**kw) -> StrategyLibrary:
    return StrategyLibrary(DIM, "hash-tf", clock=lambda: CLOCK, **kw)


class TestAdmission:
    def test_high_score_admitted(self):
        lib = library()
        adm = lib.admit(make_entry(score=9.0), 8.5)
        assert adm.outcome == "admitted" and adm.id == 1
        assert lib[1].admitted_at == CLOCK

    def test_low_score_rejected(self):
        lib = library()
        assert lib.admit(make_entry(score=7.625), 8.5).outcome == "rejected"
        assert len(lib) == 0

    def test_threshold_is_inclusive(self):
        assert library().admit(make_entry(score=8.5), 8.5).outcome == "admitted"

    def test_duplicate_name_merges(self):
        lib = library()
        lib.admit(make_entry("Transition  mapping", 9.0, excerpt="first"), 8.5)
        adm = lib.admit(make_entry("transition MAPPING", 9.4, key=np.eye(DIM)[3], excerpt="second"), 8.5)
        assert adm.outcome == "merged" and adm.id == 1
        assert len(lib) == 1
        assert [ex.stego_excerpt for ex in lib[1].examples] == ["first", "second"]
        assert lib[1].best_score == 9.4
        # the stronger newcomer's description and key take over
        assert lib[1].name == "transition MAPPING"
        assert np.allclose(lib[1].key, np.eye(DIM)[3])

    def test_near_identical_key_merges(self):
        lib = library()
        lib.admit(make_entry("A", key=[1, 0, 0, 0, 0, 0, 0, 0]), 8.5)
        adm = lib.admit(make_entry("B", key=[1, 0.1, 0, 0, 0, 0, 0, 0]), 8.5)
        assert adm == type(adm)("merged", 1)

    def test_orthogonal_keys_are_distinct(self):
        lib = library()
        lib.admit(make_entry("A", key=np.eye(DIM)[0]), 8.5)
        assert lib.admit(make_entry("B", key=np.eye(DIM)[1]), 8.5).outcome == "admitted"
        assert lib.ids == [1, 2]

    def test_key_shape_checked(self):
        with pytest.raises(SchemaError):
            library().admit(make_entry(key=np.ones(DIM + 1)), 8.5)

    def test_zero_key_rejected(self):
        with pytest.raises(DataError):
            library().add(make_entry(key=np.zeros(DIM)))

    def test_normalize_name(self):
        assert normalize_name("  Foo   BAR ") == "foo bar"


class TestSchema:
    def test_valid(self):
        validate_summary(summary())

    @pytest.mark.parametrize("key", ["name", "examples", "technique"])
    def test_missing_key(self, key):
        doc = summary()
        del doc[key]
        with pytest.raises(SchemaError) as info:
            validate_summary(doc)
        assert key in str(info.value)

    def test_extra_key(self):
        with pytest.raises(SchemaError):
            validate_summary({**summary(), "notes": "x"})

    def test_key_order_when_requested(self):
        doc = summary()
        shuffled = {k: doc[k] for k in reversed(list(doc))}
        validate_summary(shuffled)
        with pytest.raises(SchemaError):
            validate_summary(shuffled, check_order=True)

    @pytest.mark.parametrize(
        "patch",
        [
            {"name": "  "},
            {"technique": "not a list"},
            {"examples": []},
            {"examples": [{"stego_excerpt": "x", "overall_score": 11, "scores": {}}]},
            {"examples": [{"stego_excerpt": "x", "overall_score": True, "scores": {}}]},
            {"examples": [{"stego_excerpt": "x", "overall_score": 9}]},
        ],
    )
    def test_bad_values(self, patch):
        with pytest.raises(SchemaError):
            validate_summary({**summary(), **patch})

    def test_not_an_object(self):
        with pytest.raises(SchemaError):
            validate_summary(["name"])


def random_library(rng: np.random.Generator, n: int, dim: int = DIM) -> StrategyLibrary:
    lib = StrategyLibrary(dim, "t", dedup_threshold=1.0, clock=lambda: CLOCK)
    pool = rng.normal(size=(max(2, n // 4), dim))
    for i in range(n):
        # a quarter of the keys repeat an earlier direction so exact ties occur
        key = pool[rng.integers(len(pool))] if rng.random() < 0.25 else rng.normal(size=dim)
        e = make_entry(f"s{i}", key=key)
        lib.add(e)
    return lib


class TestRetrieval:
    def test_ties_by_ascending_id(self):
        lib = library()
        for name in "abc":
            lib.add(make_entry(name, key=np.eye(DIM)[2]))
        lib.add(make_entry("d", key=np.eye(DIM)[0]))
        assert lib.retrieve(np.eye(DIM)[2], 4) == [1, 2, 3, 4]
        assert lib.retrieve(np.eye(DIM)[0], 2) == [4, 1]

    def test_empty_and_zero_count(self):
        lib = library()
        assert lib.retrieve(np.ones(DIM), 3) == []
        lib.add(make_entry())
        assert lib.retrieve(np.ones(DIM), 0) == []

    def test_query_dimension(self):
        lib = library()
        lib.add(make_entry())
        with pytest.raises(DataError):
            lib.retrieve(np.ones(DIM + 2), 1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 40), st.integers(1, 12))
    def test_matches_brute_force(self, seed, n, count):
        rng = np.random.default_rng(seed)
        lib = random_library(rng, n)
        keys = {e.id: e.key.tolist() for e in lib}
        for _ in range(5):
            q = rng.normal(size=DIM)
            assert lib.retrieve(q, count) == brute_force_ranking(keys, q.tolist(), count)


class TestShortlist:
    def test_discrepancy_only_counts_gains(self):
        assert discrepancy({"a": 9, "b": 5}, {"a": 6, "b": 8}) == 3

    def test_missing_dimension(self):
        with pytest.raises(DataError):
            discrepancy({"a": 1}, {"a": 1, "b": 2})

    def test_table(self):
        lib = library()
        recs = {
            1: {"efficiency": 9.5, "fluency": 9.0},
            2: {"efficiency": 6.5, "fluency": 9.5},
            3: {"efficiency": 9.5, "fluency": 9.0},
            4: {"efficiency": 5.0, "fluency": 5.0},
        }
        for i, rec in recs.items():
            lib.add(make_entry(f"s{i}", key=np.eye(DIM)[i], metrics=rec))
        current = {"efficiency": 7.0, "fluency": 6.0}
        sl = lib.shortlist([4, 3, 2, 1], current, 3)
        table = discrepancy_table(recs, current)
        assert dict(sl.entries) == {i: table[i] for i in (1, 3, 2)}
        # equal discrepancy keeps the smaller id first
        assert sl.ids == [1, 3, 2]
        assert sl.entries[0][1] == 5.5

    def test_k_larger_than_candidates(self):
        lib = library()
        lib.add(make_entry())
        assert len(lib.shortlist([1], {"efficiency": 0.0}, 5)) == 1


class TestPersistence:
    def test_round_trip(self, tmp_path):
        lib = random_library(np.random.default_rng(1), 6)
        path = tmp_path / "lib.jsonl"
        lib.save(path)
        again = StrategyLibrary.load(path)
        assert again.dumps() == lib.dumps()
        assert again.ids == lib.ids
        assert again.retrieve(np.ones(DIM), 6) == lib.retrieve(np.ones(DIM), 6)

    def test_new_ids_follow_loaded(self, tmp_path):
        lib = library()
        lib.add(make_entry("a", key=np.eye(DIM)[0]))
        lib.add(make_entry("b", key=np.eye(DIM)[1]))
        again = StrategyLibrary.loads(lib.dumps(), clock=lambda: CLOCK)
        assert again.admit(make_entry("c", key=np.eye(DIM)[2]), 8.5).id == 3

    def test_empty_library_is_header_only(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        library().save(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["version"] == 1
        assert len(StrategyLibrary.load(path)) == 0

    def test_truncated_line_reports_line_number(self):
        text = library_text(2)
        broken = text[: text.rindex("}") - 5] + "\n"
        with pytest.raises(LibraryFormatError) as info:
            StrategyLibrary.loads(broken)
        assert info.value.line == 3

    def test_version_mismatch(self):
        text = library_text(1).replace('"version": 1', '"version": 99')
        with pytest.raises(MigrationError):
            StrategyLibrary.loads(text)

    def test_missing_header(self):
        with pytest.raises(LibraryFormatError):
            StrategyLibrary.loads("")

    def test_duplicate_id(self):
        lines = library_text(1).splitlines()
        with pytest.raises(LibraryFormatError) as info:
            StrategyLibrary.loads("\n".join([*lines, lines[1]]))
        assert info.value.line == 3

    def test_save_is_atomic(self, tmp_path):
        path = tmp_path / "lib.jsonl"
        library().save(path)
        assert [p.name for p in tmp_path.iterdir()] == ["lib.jsonl"]


def library_text(n: int) -> str:
    lib = library()
    for i in range(n):
        lib.add(make_entry(f"s{i}", key=np.eye(DIM)[i]))
    return lib.dumps()
