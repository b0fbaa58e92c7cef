"""Chebyshev similarity between clusters of adjacent strata and greedy chaining.

Clusters of stratum ``g`` are matched one-to-one (partially) to clusters of
stratum ``g + 1``. Chains of matches form cluster sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._fmt import round_sig
from .lca import LcaModel

__all__ = [
    "DEFAULT_THRESHOLD",
    "SIMILARITY_DECIMALS",
    "Match",
    "MatchList",
    "SimilarityMatrix",
    "AlignmentChain",
    "ClusterSet",
    "chebyshev_distance",
    "similarity",
    "similarity_matrix",
    "greedy_match",
    "chain_alignments",
    "build_cluster_sets",
    "chain_document",
    "chain_from_document",
    "cluster_sets_document",
]

DEFAULT_THRESHOLD = 0.7
# Similarities are quantised to this many decimals before being compared with
# the threshold, so a 0.3 difference in probabilities scores exactly 0.7.
SIMILARITY_DECIMALS = 12


class Match(NamedTuple):
    row: int
    col: int
    similarity: float


@dataclass(frozen=True)
class MatchList:
    """Accepted matches between stratum ``from_group`` and the next one."""

    from_group: int
    pairs: tuple[Match, ...]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: np.ndarray
    groups: tuple[int, int] = (1, 2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class AlignmentChain:
    models: tuple[LcaModel, ...]
    matches: tuple[MatchList, ...]
    threshold: float
    groups: tuple[int, ...]

    @property
    def G(self) -> int:
        return len(self.models)

    @property
    def n_matches(self) -> int:
        return sum(len(m) for m in self.matches)

    @property
    def n_clusters(self) -> int:
        return sum(m.K for m in self.models)


@dataclass(frozen=True)
class ClusterSet:
    id: int
    members: tuple[tuple[int, int], ...]

    @property
    def index_cluster(self) -> tuple[int, int]:
        return self.members[0]

    @property
    def singleton(self) -> bool:
        return len(self.members) == 1

    @property
    def span(self) -> tuple[int, int]:
        return self.members[0][0], self.members[-1][0]

    @property
    def label(self) -> str:
        return f"S{self.id}"

    def __len__(self) -> int:
        return len(self.members)


def chebyshev_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"vectors must have equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def _quantise(s):
    return np.round(s, SIMILARITY_DECIMALS)


def similarity(a, b) -> float:
    return float(_quantise(1.0 - chebyshev_distance(a, b)))


def similarity_matrix(model_a: LcaModel, model_b: LcaModel,
                      groups: tuple[int, int] = (1, 2)) -> SimilarityMatrix:
    """Pairwise similarities between columns of two models' theta matrices."""
    if model_a.D != model_b.D:
        raise ValueError(
            f"models describe different condition counts ({model_a.D} vs {model_b.D})")
    diff = np.abs(model_a.theta[:, :, None] - model_b.theta[:, None, :])
    dist = diff.max(axis=0) if model_a.D else np.zeros((model_a.K, model_b.K))
    values = _quantise(1.0 - dist)
    values.setflags(write=False)
    return SimilarityMatrix(values, groups)


def greedy_match(S: SimilarityMatrix | np.ndarray, threshold: float = DEFAULT_THRESHOLD,
                 from_group: int | None = None) -> MatchList:
    """Accept the most similar unmatched pair until the best left is below ``threshold``.

    Equal similarities are taken in (row, column) order. A similarity equal to
    the threshold is accepted.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    if isinstance(S, SimilarityMatrix):
        values = S.values
        if from_group is None:
            from_group = S.groups[0]
    else:
        values = np.asarray(S, dtype=float)
    if from_group is None:
        from_group = 1

    rows, cols = np.indices(values.shape)
    flat = values.ravel()
    order = np.lexsort((cols.ravel(), rows.ravel(), -flat))
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    limit = min(values.shape) if values.size else 0
    pairs = []
    for pos in order:
        if len(pairs) == limit:
            break
        s = float(flat[pos])
        if s < threshold:
            break
        i, j = divmod(int(pos), values.shape[1])
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        pairs.append(Match(i, j, s))
    return MatchList(int(from_group), tuple(pairs))


def chain_alignments(models: Sequence[LcaModel], threshold: float = DEFAULT_THRESHOLD,
                     groups: Sequence[int] | None = None) -> AlignmentChain:
    """Match every stratum's clusters to those of the stratum before it."""
    models = tuple(models)
    if not models:
        raise ValueError("need at least one model")
    groups = tuple(range(1, len(models) + 1)) if groups is None else tuple(groups)
    if len(groups) != len(models):
        raise ValueError("one group index per model is required")
    if any(b - a != 1 for a, b in zip(groups, groups[1:])):
        raise ValueError(f"groups must be consecutive, got {groups}")
    D = models[0].D
    for g, m in zip(groups, models):
        if m.D != D:
            raise ValueError(f"model for group {g} has {m.D} conditions, expected {D}")
    matches = tuple(
        greedy_match(similarity_matrix(a, b, (ga, gb)), threshold)
        for (ga, a), (gb, b) in zip(zip(groups, models), zip(groups[1:], models[1:]))
    )
    return AlignmentChain(models, matches, float(threshold), groups)


def build_cluster_sets(chain: AlignmentChain) -> list[ClusterSet]:
    """Maximal chains of matched clusters, ordered by youngest group then cluster."""
    forward: list[dict[int, int]] = [
        {m.row: m.col for m in ml.pairs} for ml in chain.matches
    ]
    has_parent: list[set[int]] = [set()] + [set(f.values()) for f in forward]
    sets = []
    for pos, (group, model) in enumerate(zip(chain.groups, chain.models)):
        for k in range(model.K):
            if k in has_parent[pos]:
                continue
            members = [(group, k)]
            p, c = pos, k
            while p < len(forward) and c in forward[p]:
                c = forward[p][c]
                p += 1
                members.append((chain.groups[p], c))
            sets.append(ClusterSet(len(sets), tuple(members)))
    return sets


def chain_document(chain: AlignmentChain) -> dict:
    return {
        "threshold": chain.threshold,
        "matches": [
            {
                "from_group": ml.from_group,
                "pairs": [[m.row, m.col, round_sig(m.similarity)] for m in ml.pairs],
            }
            for ml in chain.matches
        ],
    }


def chain_from_document(doc: dict, models: Sequence[LcaModel],
                        groups: Sequence[int] | None = None) -> AlignmentChain:
    """Rebuild a chain from its JSON form and the models it was computed on."""
    models = tuple(models)
    groups = tuple(range(1, len(models) + 1)) if groups is None else tuple(groups)
    entries = {int(e["from_group"]): e for e in doc["matches"]}
    matches = []
    for g in groups[:-1]:
        pairs = entries.get(g, {"pairs": []})["pairs"]
        matches.append(MatchList(g, tuple(Match(int(i), int(j), float(s))
                                          for i, j, s in pairs)))
    unknown = set(entries) - set(groups[:-1])
    if unknown:
        raise ValueError(f"chain refers to groups {sorted(unknown)} with no model")
    return AlignmentChain(models, tuple(matches), float(doc["threshold"]), groups)


def cluster_sets_document(sets: Sequence[ClusterSet], chain: AlignmentChain) -> dict:
    return {
        "threshold": chain.threshold,
        "n_clusters": chain.n_clusters,
        "n_matches": chain.n_matches,
        "sets": [
            {
                "id": s.label,
                "members": [list(m) for m in s.members],
                "singleton": s.singleton,
            }
            for s in sets
        ],
    }
