"""Contrastive communication contexts built from an embedded object
collection: k-NN graph, high in-degree seeds, hard/easy triplets with
near-duplicate rejection, and counterbalanced annotation tasks.

All construction is deterministic given the index and parameters; ties break
by ascending object id.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ContextError(ValueError):
    """A context could not be built for the given seed object."""


@dataclass
class EmbeddingIndex:
    """Object ids with their embedding codes (one row per object)."""

    object_ids: list[str]
    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2 or self.codes.shape[0] != len(self.object_ids):
            raise ValueError("codes must be (n_objects, d)")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("codes must be finite")
        if len(set(self.object_ids)) != len(self.object_ids):
            raise ValueError("object ids must be unique")
        self._pos = {oid: i for i, oid in enumerate(self.object_ids)}

    def __len__(self) -> int:
        return len(self.object_ids)

    def position(self, object_id: str) -> int:
        return self._pos[object_id]

    def distance(self, a: str, b: str) -> float:
        return float(np.linalg.norm(self.codes[self._pos[a]] - self.codes[self._pos[b]]))

    def distances_from(self, object_id: str) -> np.ndarray:
        diff = self.codes - self.codes[self._pos[object_id]]
        return np.sqrt((diff * diff).sum(axis=1))

    def pairwise_distances(self) -> np.ndarray:
        """Condensed vector of all n(n-1)/2 pairwise distances."""
        sq = (self.codes * self.codes).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * self.codes @ self.codes.T
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        iu = np.triu_indices(len(self), k=1)
        return d[iu]

    def median_pairwise_distance(self) -> float:
        return float(np.median(self.pairwise_distances()))

    def default_duplicate_threshold(self, percentile: float = 1.0) -> float:
        """Data-driven stand-in for the undisclosed manual near-duplicate
        cutoff: a low percentile of all pairwise distances."""
        return float(np.percentile(self.pairwise_distances(), percentile))

    def save(self, codes_path: str | Path, ids_path: str | Path) -> None:
        codes_path, ids_path = Path(codes_path), Path(ids_path)
        n, d = self.codes.shape
        with codes_path.open("w") as fh:
            fh.write(f"{n} {d}\n")
            np.savetxt(fh, self.codes)
        ids_path.write_text("\n".join(self.object_ids) + "\n")

    @classmethod
    def load(cls, codes_path: str | Path, ids_path: str | Path) -> "EmbeddingIndex":
        with Path(codes_path).open() as fh:
            n, d = (int(x) for x in fh.readline().split())
            codes = np.loadtxt(fh).reshape(n, d)
        object_ids = Path(ids_path).read_text().splitlines()
        return cls(object_ids=object_ids, codes=codes)


@dataclass(frozen=True)
class ContextSpec:
    """A triplet: seed (candidate target) plus two distractors."""

    seed_object: str
    distractors: tuple[str, str]
    difficulty: str  # "hard" | "easy"

    def __post_init__(self):
        ids = (self.seed_object,) + self.distractors
        if len(set(ids)) != 3:
            raise ValueError("context requires 3 distinct objects")
        if self.difficulty not in ("hard", "easy"):
            raise ValueError(f"unknown difficulty {self.difficulty!r}")

    @property
    def object_ids(self) -> tuple[str, str, str]:
        return (self.seed_object,) + self.distractors


def build_knn_graph(index: EmbeddingIndex, k: int = 2) -> dict[str, list[str]]:
    """Directed graph: each object points at its k nearest neighbors
    (Euclidean), ties broken by lower object id."""
    if k >= len(index):
        raise ValueError("k must be smaller than the number of objects")
    graph: dict[str, list[str]] = {}
    for oid in index.object_ids:
        dists = index.distances_from(oid)
        ranked = sorted(
            ((dists[index.position(other)], other)
             for other in index.object_ids if other != oid))
        graph[oid] = [other for _, other in ranked[:k]]
    return graph


def in_degrees(graph: dict[str, list[str]]) -> dict[str, int]:
    degrees = {node: 0 for node in graph}
    for neighbors in graph.values():
        for node in neighbors:
            degrees[node] += 1
    return degrees


def select_seeds(graph: dict[str, list[str]], n: int = 1000) -> list[str]:
    """The n nodes with highest in-degree, ties by lower id."""
    degrees = in_degrees(graph)
    if n > len(degrees):
        logger.warning("requested %d seeds from a %d-node graph; returning all",
                       n, len(degrees))
        n = len(degrees)
    ranked = sorted(degrees, key=lambda node: (-degrees[node], node))
    return ranked[:n]


def make_context(index: EmbeddingIndex, seed_id: str, difficulty: str,
                 duplicate_threshold: float, median: float | None = None,
                 rng=None) -> ContextSpec:
    """Hard: the two nearest neighbors beyond the near-duplicate threshold.
    Easy: the two nearest objects beyond the collection-wide median pairwise
    distance. Near-duplicates of the seed are skipped and the next nearest
    substituted.

    ``rng`` is accepted for interface compatibility and unused: construction
    is deterministic.
    """
    if seed_id not in index.object_ids:
        raise KeyError(seed_id)
    if difficulty == "easy" and median is None:
        median = index.median_pairwise_distance()
    floor = duplicate_threshold if difficulty == "hard" else max(duplicate_threshold, median)
    dists = index.distances_from(seed_id)
    ranked = sorted(((dists[index.position(other)], other)
                     for other in index.object_ids if other != seed_id))
    chosen = [other for dist, other in ranked if dist > floor][:2]
    if len(chosen) < 2:
        raise ContextError(
            f"seed {seed_id}: fewer than 2 eligible {difficulty} distractors "
            f"(threshold={duplicate_threshold:.4g})")
    return ContextSpec(seed_object=seed_id, distractors=(chosen[0], chosen[1]),
                       difficulty=difficulty)


def build_contexts(index: EmbeddingIndex, n_seeds: int = 1000, k: int = 2,
                   duplicate_threshold: float | None = None) -> list[ContextSpec]:
    """Full pipeline: k-NN graph, seed selection, one hard and one easy
    context per seed. Seeds without enough eligible distractors are skipped
    with a log entry."""
    if duplicate_threshold is None:
        duplicate_threshold = index.default_duplicate_threshold()
    graph = build_knn_graph(index, k=k)
    seeds = select_seeds(graph, n=n_seeds)
    median = index.median_pairwise_distance()
    contexts: list[ContextSpec] = []
    for seed_id in seeds:
        for difficulty in ("hard", "easy"):
            try:
                contexts.append(make_context(index, seed_id, difficulty,
                                             duplicate_threshold, median=median))
            except ContextError as exc:
                logger.warning("skipping context: %s", exc)
    return contexts


def counterbalance(contexts: list[ContextSpec],
                   repeats: int = 4) -> list[tuple[ContextSpec, int]]:
    """Annotation tasks with every object of every context as target,
    ``repeats`` times each."""
    return [(ctx, target) for ctx in contexts
            for target in range(3) for _ in range(repeats)]


def write_contexts(contexts: list[ContextSpec], path: str | Path) -> None:
    lines = [f"c{i:05d}\t{','.join(ctx.object_ids)}\t{ctx.difficulty}"
             for i, ctx in enumerate(contexts)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_contexts(path: str | Path) -> list[ContextSpec]:
    contexts = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        _, ids, difficulty = line.split("\t")
        seed, d1, d2 = ids.split(",")
        contexts.append(ContextSpec(seed_object=seed, distractors=(d1, d2),
                                    difficulty=difficulty))
    return contexts
