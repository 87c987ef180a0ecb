import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handbayes import dataset as ds
from handbayes.errors import (
    BadLabel,
    BadValue,
    DegenerateScale,
    DuplicateRecord,
    SplitInfeasible,
    UnknownWriter,
)

HEADER = "writer,char,rep,S,a1,b1,a2,b2,a3,b3,a4,b4"


def row(writer=1, char="a", rep=1, values=None):
    values = values if values is not None else [1.0, 0.1, 0.2, 0.3, 0.0, 0.1, 0.0, 0.0, 0.1]
    return f"{writer},{char},{rep}," + ",".join(str(v) for v in values)


class TestParse:
    def test_single_row(self):
        text = HEADER + "\n" + row(writer=1)
        data = ds.parse_dataset(text)
        assert data.n == 1
        rec = next(data.records())
        assert rec.writer == 1 and rec.character == "a" and rec.repetition == 1
        assert rec.features[0] == 1.0

    def test_duplicate_triple(self):
        text = HEADER + "\n" + row() + "\n" + row()
        with pytest.raises(DuplicateRecord):
            ds.parse_dataset(text)

    def test_unknown_label(self):
        with pytest.raises(BadLabel):
            ds.parse_dataset(HEADER + "\n" + row(char="z"))

    def test_non_finite_value(self):
        bad = [1.0, float("nan")] + [0.0] * 7
        with pytest.raises(BadValue):
            ds.parse_dataset(HEADER + "\n" + row(values=bad))

    def test_bad_header(self):
        with pytest.raises(BadValue):
            ds.parse_dataset("writer,char\n1,a\n")

    def test_negative_writer(self):
        with pytest.raises(BadValue):
            ds.parse_dataset(HEADER + "\n" + row(writer=-1))

    def test_crlf_and_order_preserved(self):
        text = HEADER + "\r\n" + row(rep=2) + "\r\n" + row(rep=1) + "\r\n"
        data = ds.parse_dataset(text)
        assert [r.repetition for r in data.records()] == [2, 1]

    def test_round_trip_csv(self):
        text = HEADER + "\n" + row(rep=1) + "\n" + row(rep=2, char="q")
        data = ds.parse_dataset(text)
        again = ds.parse_dataset(data.to_csv())
        assert np.array_equal(again.X, data.X)
        assert list(again.characters) == list(data.characters)


class TestStandardize:
    def test_two_point_sd(self):
        # column values {1, 3} have sample SD sqrt(2)
        ref = ds.Dataset.from_records([
            (1, "a", 1, np.full(9, 1.0)),
            (1, "a", 2, np.full(9, 3.0)),
        ])
        data = ds.Dataset.from_records([(2, "a", 1, np.full(9, 3.0))])
        out = ds.standardize(data, ref)
        assert np.allclose(out.X, 3.0 / np.sqrt(2.0))
        assert np.allclose(out.scaling, np.sqrt(2.0))

    def test_degenerate_scale(self):
        ref = ds.Dataset.from_records([
            (1, "a", 1, np.full(9, 2.0)),
            (1, "a", 2, np.full(9, 2.0)),
        ])
        with pytest.raises(DegenerateScale):
            ds.standardize(ref, ref)

    def test_self_standardized_columns_unit_sd(self, rng):
        rows = [(1 + i // 4, "a", i % 4 + 1, rng.normal(size=9) * (1 + np.arange(9)))
                for i in range(24)]
        data = ds.Dataset.from_records(rows)
        out = ds.standardize(data, data)
        # oracle: recompute the column SDs of the standardized output
        assert np.allclose(out.X.std(axis=0, ddof=1), 1.0, atol=1e-12)

    def test_idempotent_on_standardized_reference(self, rng):
        rows = [(i, "a", 1, rng.normal(size=9)) for i in range(10)]
        data = ds.Dataset.from_records(rows)
        once = ds.standardize(data, data)
        twice = ds.standardize(once, once)
        assert np.allclose(once.X, twice.X, atol=1e-12)


class TestDummyCode:
    def test_paper_codings(self):
        assert ds.dummy_code("a").tolist() == [1, 0, 0, 0]
        assert ds.dummy_code("d").tolist() == [1, 1, 0, 0]
        assert ds.dummy_code("o").tolist() == [1, 0, 1, 0]

    def test_q_coding(self):
        # corner-point coding: the reference column plus one indicator
        assert ds.dummy_code("q").tolist() == [1, 0, 0, 1]

    def test_unknown_label(self):
        with pytest.raises(BadLabel):
            ds.dummy_code("z")

    @given(st.sampled_from(ds.CHARACTERS))
    def test_first_component_and_row_sum(self, label):
        code = ds.dummy_code(label)
        assert code[0] == 1
        assert code.sum() in (1, 2)


class TestSplitWriter:
    @staticmethod
    def _writer_data(reps_per_char=10, writer=1):
        rows = []
        rng = np.random.default_rng(0)
        for c in ds.CHARACTERS:
            for j in range(1, reps_per_char + 1):
                rows.append((writer, c, j, rng.normal(size=9)))
        return ds.Dataset.from_records(rows)

    def test_exact_halving(self):
        data = self._writer_data(10)
        q, c = ds.split_writer(data, 1, 0.5, seed=3)
        for label in ds.CHARACTERS:
            assert (q.characters == label).sum() == 5
            assert (c.characters == label).sum() == 5

    def test_rounding_rule(self):
        data = self._writer_data(20)
        q, c = ds.split_writer(data, 1, 0.35, seed=3)
        for label in ds.CHARACTERS:
            assert (q.characters == label).sum() == 7
            assert (c.characters == label).sum() == 13

    def test_deterministic(self):
        data = self._writer_data(9)
        q1, c1 = ds.split_writer(data, 1, 0.4, seed=12)
        q2, c2 = ds.split_writer(data, 1, 0.4, seed=12)
        assert np.array_equal(q1.X, q2.X)
        assert np.array_equal(c1.X, c2.X)

    def test_unknown_writer(self):
        data = self._writer_data(4)
        with pytest.raises(UnknownWriter):
            ds.split_writer(data, 99, 0.5, seed=0)

    def test_infeasible_single_rep(self):
        data = ds.Dataset.from_records([
            (1, "a", 1, np.zeros(9)),
            (1, "d", 1, np.zeros(9)),
            (1, "d", 2, np.zeros(9)),
        ])
        with pytest.raises(SplitInfeasible):
            ds.split_writer(data, 1, 0.5, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        pi=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=2**31),
        reps=st.integers(min_value=2, max_value=9),
    )
    def test_partition_property(self, pi, seed, reps):
        data = self._writer_data(reps)
        q, c = ds.split_writer(data, 1, pi, seed)
        assert q.n + c.n == data.n
        key = lambda d: {(r.writer, r.character, r.repetition) for r in d.records()}
        assert key(q) | key(c) == key(data)
        assert key(q) & key(c) == set()
        for label in ds.CHARACTERS:
            assert (q.characters == label).sum() >= 1
            assert (c.characters == label).sum() >= 1


class TestBackgroundExcluding:
    def test_empty_exclusion_identity(self, tiny_dataset):
        out = ds.background_excluding(tiny_dataset, [])
        assert out.n == tiny_dataset.n

    def test_full_exclusion(self, tiny_dataset):
        out = ds.background_excluding(tiny_dataset, tiny_dataset.writer_ids)
        assert out.n == 0

    def test_cardinality(self, default_population):
        data, _ = default_population
        out = ds.background_excluding(data, [1])
        assert len(out.writer_ids) == 12
        assert 1 not in out.writer_ids
