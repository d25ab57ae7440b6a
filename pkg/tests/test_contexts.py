import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from refgame.contexts import (ContextError, ContextSpec, EmbeddingIndex,
                              build_contexts, build_knn_graph, counterbalance,
                              in_degrees, make_context, read_contexts,
                              select_seeds, write_contexts)


def line_index(values: dict[str, float]) -> EmbeddingIndex:
    ids = list(values)
    return EmbeddingIndex(object_ids=ids,
                          codes=np.array([[values[i]] for i in ids]))


@pytest.fixture()
def spec_index():
    return line_index({"S": 0.0, "A": 0.9, "B": 1.1, "C": 5.0, "D": 9.0})


class TestEmbeddingIndex:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            EmbeddingIndex(object_ids=["a"], codes=np.array([[np.nan]]))

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValueError):
            EmbeddingIndex(object_ids=["a", "a"], codes=np.zeros((2, 1)))

    def test_distances(self, spec_index):
        assert spec_index.distance("S", "C") == pytest.approx(5.0)
        assert len(spec_index.pairwise_distances()) == 10

    def test_median_matches_oracle(self, rng):
        idx = EmbeddingIndex(object_ids=[f"o{i}" for i in range(12)],
                             codes=rng.normal(size=(12, 3)))
        oracle = np.median([idx.distance(a, b)
                            for i, a in enumerate(idx.object_ids)
                            for b in idx.object_ids[i + 1:]])
        assert idx.median_pairwise_distance() == pytest.approx(oracle)

    def test_save_load_roundtrip(self, rng, tmp_path):
        idx = EmbeddingIndex(object_ids=["x", "y", "z"],
                             codes=rng.normal(size=(3, 4)))
        idx.save(tmp_path / "codes.txt", tmp_path / "ids.txt")
        loaded = EmbeddingIndex.load(tmp_path / "codes.txt",
                                     tmp_path / "ids.txt")
        assert loaded.object_ids == idx.object_ids
        np.testing.assert_allclose(loaded.codes, idx.codes)


class TestKnnGraph:
    def test_line_example_k1(self):
        graph = build_knn_graph(line_index({"A": 0, "B": 1, "C": 10}), k=1)
        assert graph == {"A": ["B"], "B": ["A"], "C": ["B"]}

    def test_line_example_k2(self):
        graph = build_knn_graph(line_index({"P": 0, "Q": 1, "R": 2, "S": 9}),
                                k=2)
        assert graph["P"] == ["Q", "R"]

    def test_matches_bruteforce_oracle(self, rng):
        idx = EmbeddingIndex(object_ids=[f"o{i:02d}" for i in range(50)],
                             codes=rng.normal(size=(50, 4)))
        graph = build_knn_graph(idx, k=2)
        for oid in idx.object_ids:
            ranked = sorted((idx.distance(oid, other), other)
                            for other in idx.object_ids if other != oid)
            assert graph[oid] == [o for _, o in ranked[:2]]

    def test_k_too_large_rejected(self, spec_index):
        with pytest.raises(ValueError):
            build_knn_graph(spec_index, k=5)


class TestSelectSeeds:
    def test_star_graph_hub(self):
        graph = {"hub": ["a"], "a": ["hub"], "b": ["hub"], "c": ["hub"]}
        assert select_seeds(graph, n=1) == ["hub"]

    def test_all_nodes_when_n_equals_count(self, spec_index):
        graph = build_knn_graph(spec_index, k=2)
        assert sorted(select_seeds(graph, n=5)) == sorted(graph)

    def test_overflow_warns_and_returns_all(self, spec_index, caplog):
        graph = build_knn_graph(spec_index, k=2)
        assert sorted(select_seeds(graph, n=50)) == sorted(graph)

    def test_matches_recount_oracle(self, rng):
        idx = EmbeddingIndex(object_ids=[f"o{i:02d}" for i in range(50)],
                             codes=rng.normal(size=(50, 3)))
        graph = build_knn_graph(idx, k=2)
        degrees = in_degrees(graph)
        oracle = sorted(graph, key=lambda n: (-degrees[n], n))[:10]
        assert select_seeds(graph, n=10) == oracle


class TestMakeContext:
    def test_hard_spec_example(self, spec_index):
        ctx = make_context(spec_index, "S", "hard", duplicate_threshold=0.5)
        assert set(ctx.distractors) == {"A", "B"}

    def test_hard_skip_near_duplicate(self, spec_index):
        ctx = make_context(spec_index, "S", "hard", duplicate_threshold=1.0)
        assert set(ctx.distractors) == {"B", "C"}

    def test_easy_median_rule(self, spec_index):
        ctx = make_context(spec_index, "S", "easy", duplicate_threshold=0.5,
                           median=3.0)
        assert set(ctx.distractors) == {"C", "D"}

    def test_too_few_eligible_rejected(self, spec_index):
        with pytest.raises(ContextError):
            make_context(spec_index, "S", "hard", duplicate_threshold=8.0)

    def test_unknown_seed(self, spec_index):
        with pytest.raises(KeyError):
            make_context(spec_index, "Z", "hard", duplicate_threshold=0.5)

    def test_matches_bruteforce_oracle(self, rng):
        idx = EmbeddingIndex(object_ids=[f"o{i:02d}" for i in range(50)],
                             codes=rng.normal(size=(50, 4)))
        threshold = idx.default_duplicate_threshold()
        median = idx.median_pairwise_distance()
        for seed_id in idx.object_ids[:10]:
            for difficulty, floor in (("hard", threshold),
                                      ("easy", max(threshold, median))):
                ctx = make_context(idx, seed_id, difficulty, threshold,
                                   median=median)
                eligible = sorted(
                    (idx.distance(seed_id, other), other)
                    for other in idx.object_ids
                    if other != seed_id and idx.distance(seed_id, other) > floor)
                assert list(ctx.distractors) == [o for _, o in eligible[:2]]

    def test_hard_easy_distance_ordering(self, rng):
        idx = EmbeddingIndex(object_ids=[f"o{i:02d}" for i in range(30)],
                             codes=rng.normal(size=(30, 3)))
        threshold = idx.default_duplicate_threshold()
        for seed_id in idx.object_ids:
            hard = make_context(idx, seed_id, "hard", threshold)
            easy = make_context(idx, seed_id, "easy", threshold)
            max_hard = max(idx.distance(seed_id, d) for d in hard.distractors)
            min_easy = min(idx.distance(seed_id, d) for d in easy.distractors)
            assert max_hard <= min_easy

    @given(codes=npst.arrays(np.float64, (12, 2),
                             elements=st.floats(-5, 5)))
    @settings(max_examples=50, deadline=None)
    def test_determinism_property(self, codes):
        try:
            idx = EmbeddingIndex(
                object_ids=[f"o{i:02d}" for i in range(12)], codes=codes)
            a = make_context(idx, "o00", "hard", 0.1)
            b = make_context(idx, "o00", "hard", 0.1)
        except (ContextError, ValueError):
            return
        assert a == b


class TestCounterbalance:
    def test_counts(self, spec_index):
        ctx = make_context(spec_index, "S", "hard", 0.5)
        tasks = counterbalance([ctx], repeats=4)
        assert len(tasks) == 12
        for target in range(3):
            assert sum(1 for _, t in tasks if t == target) == 4

    def test_empty(self):
        assert counterbalance([], repeats=4) == []

    def test_two_contexts_single_repeat(self, spec_index):
        hard = make_context(spec_index, "S", "hard", 0.5)
        easy = make_context(spec_index, "S", "easy", 0.5, median=3.0)
        tasks = counterbalance([hard, easy], repeats=1)
        assert len(tasks) == 6


class TestPipeline:
    def test_build_contexts_and_file_roundtrip(self, rng, tmp_path):
        idx = EmbeddingIndex(object_ids=[f"o{i:02d}" for i in range(20)],
                             codes=rng.normal(size=(20, 3)))
        contexts = build_contexts(idx, n_seeds=5)
        assert contexts and all(isinstance(c, ContextSpec) for c in contexts)
        path = tmp_path / "contexts.tsv"
        write_contexts(contexts, path)
        assert read_contexts(path) == contexts
