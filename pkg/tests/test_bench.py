import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lsmtune.bench import (
    CATEGORIES,
    CATEGORY_TYPES,
    BenchmarkSet,
    Session,
    apportion,
    expected_workloads,
    generate_session,
    sample_benchmark,
    satisfies,
)
from lsmtune.cost_model import Workload
from lsmtune.errors import CategoryUnsatisfiable


class TestExpected:
    def test_table(self):
        ew = expected_workloads()
        assert len(ew) == 15
        assert ew[0].workload.as_tuple() == (0.25, 0.25, 0.25, 0.25)
        assert ew[0].category == "Uniform"
        assert ew[7].workload.as_tuple() == (0.49, 0.01, 0.01, 0.49)
        assert ew[7].category == "Bimodal"
        assert ew[11].workload.as_tuple() == (0.33, 0.33, 0.33, 0.01)
        assert ew[11].category == "Trimodal"

    def test_categories(self):
        cats = [e.category for e in expected_workloads()]
        assert cats.count("Uniform") == 1
        assert cats.count("Unimodal") == 4
        assert cats.count("Bimodal") == 6
        assert cats.count("Trimodal") == 4

    def test_all_positive(self):
        for e in expected_workloads():
            assert min(e.workload.as_tuple()) > 0


class TestSample:
    def test_valid_rows(self, bench10k):
        M = bench10k.matrix
        assert M.shape == (10_000, 4)
        assert np.allclose(M.sum(axis=1), 1, atol=1e-12)
        assert bench10k.counts.min() >= 0 and bench10k.counts.max() <= 10_000
        assert np.all(bench10k.counts.sum(axis=1) > 0)
        assert np.allclose(M, bench10k.counts / bench10k.counts.sum(axis=1, keepdims=True))

    def test_mean(self, bench10k):
        assert np.all(np.abs(bench10k.matrix.mean(axis=0) - 0.25) <= 0.01)

    def test_deterministic(self):
        a, b = sample_benchmark(5, 100), sample_benchmark(5, 100)
        assert np.array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, sample_benchmark(6, 100).counts)

    def test_round_trips(self):
        b = sample_benchmark(1, 200)
        assert np.array_equal(BenchmarkSet.from_csv(b.to_csv()).counts, b.counts)
        j = BenchmarkSet.from_json(b.to_json())
        assert np.array_equal(j.counts, b.counts) and j.seed == 1 and j.algorithm == b.algorithm
        assert np.array_equal(BenchmarkSet.from_csv(b.to_csv()).matrix, b.matrix)

    def test_immutable(self, bench10k):
        with pytest.raises(ValueError):
            bench10k.counts[0, 0] = 3

    def test_bad_size(self):
        with pytest.raises(ValueError):
            sample_benchmark(0, 0)

    def test_rejects_zero_rows(self):
        with pytest.raises(ValueError):
            BenchmarkSet(np.zeros((1, 4), dtype=np.int64))


@given(f=st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 0),
       total=st.integers(0, 10**6))
def test_apportion(f, total):
    f = np.array(f) / sum(f)
    c = apportion(f, total)
    assert sum(c) == total
    assert all(abs(ci - fi * total) < 1 for ci, fi in zip(c, f))


class TestSessions:
    @pytest.mark.parametrize("category", [c for c in CATEGORIES if c != "expected"])
    def test_dominance(self, category, bench10k):
        s = generate_session(category, None, bench10k, n_workloads=5, seed=3)
        assert len(s.workloads) == 5
        for sw in s.workloads:
            dom = sum(sw.workload.as_array()[list(CATEGORY_TYPES[category])])
            assert dom >= 0.8
            assert sum(sw.counts) == s.queries_per_workload

    def test_write_category(self, bench10k):
        s = generate_session("write", None, bench10k, n_workloads=4, seed=0)
        assert all(sw.workload.w >= 0.8 for sw in s.workloads)

    def test_expected_category(self, bench10k):
        w0 = expected_workloads()[0].workload
        s = generate_session("expected", w0, bench10k, n_workloads=6, seed=1)
        for sw in s.workloads:
            assert oracles.kl(sw.workload.as_tuple(), w0.as_tuple()) < 0.2

    def test_topup_for_narrow_center(self):
        # a tiny bench cannot supply workloads near a skewed center
        bench = sample_benchmark(0, 20)
        w1 = expected_workloads()[1].workload
        s = generate_session("expected", w1, bench, n_workloads=3, seed=0)
        assert s.has_synthetic
        assert all(satisfies("expected", sw.workload, w1) for sw in s.workloads)
        with pytest.raises(CategoryUnsatisfiable):
            generate_session("expected", w1, bench, n_workloads=3, allow_topup=False)

    def test_empty(self, bench10k):
        assert generate_session("read", None, bench10k, n_workloads=0).workloads == ()

    def test_json_round_trip(self, bench10k):
        s = generate_session("range", None, bench10k, n_workloads=3, seed=9)
        assert Session.from_json(s.to_json()) == s
        assert s.to_csv().splitlines()[0].endswith(",synthetic")

    def test_deterministic(self, bench10k):
        a = generate_session("read", None, bench10k, n_workloads=3, seed=4)
        b = generate_session("read", None, bench10k, n_workloads=3, seed=4)
        assert a == b

    def test_unknown_category(self, bench10k):
        with pytest.raises(ValueError):
            generate_session("bogus", None, bench10k)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), cat=st.sampled_from([c for c in CATEGORIES if c != "expected"]))
    def test_posthoc_verifiable(self, seed, cat):
        bench = sample_benchmark(seed, 50)
        s = generate_session(cat, None, bench, n_workloads=3, seed=seed)
        for sw in s.workloads:
            assert satisfies(cat, sw.workload)
            assert abs(sum(sw.workload.as_tuple()) - 1) <= 1e-12


def test_workload_from_counts_matches_matrix(bench10k):
    w = bench10k.workloads[17]
    assert np.allclose(w.as_array(), bench10k.matrix[17], rtol=0, atol=1e-15)
    assert isinstance(w, Workload)
