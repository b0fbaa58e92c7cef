"""Naming, tabulation and graph export of cluster sets."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

import networkx as nx
import numpy as np

from .alignment import AlignmentChain, ClusterSet
from .cohort import ConditionCatalog, ConfigurationError, Stratum
from .lca import hard_assign

__all__ = [
    "BandThresholds",
    "BandProfile",
    "classify_bands",
    "name_cluster_set",
    "cluster_fractions",
    "cluster_set_table",
    "write_cluster_set_csv",
    "summarize",
    "export_dot",
    "export_graphml",
]


@dataclass(frozen=True)
class BandThresholds:
    lo: float = 0.3
    hi: float = 0.7

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(
                f"lower band threshold {self.lo} must be below upper {self.hi}")


@dataclass(frozen=True)
class BandProfile:
    """Condition indices per prevalence band, each ordered by descending theta."""

    high: tuple[int, ...]
    moderate: tuple[int, ...]
    low: tuple[int, ...]


def classify_bands(theta_column, bands: BandThresholds = BandThresholds()) -> BandProfile:
    """Split conditions into high (> hi), moderate ([lo, hi]) and low (< lo)."""
    theta = np.asarray(theta_column, dtype=float)
    order = sorted(range(theta.size), key=lambda d: (-theta[d], d))
    high = tuple(d for d in order if theta[d] > bands.hi)
    moderate = tuple(d for d in order if bands.lo <= theta[d] <= bands.hi)
    low = tuple(d for d in order if theta[d] < bands.lo)
    return BandProfile(high, moderate, low)


def _index_theta(cluster_set: ClusterSet, chain: AlignmentChain) -> np.ndarray:
    group, k = cluster_set.index_cluster
    return chain.models[chain.groups.index(group)].theta[:, k]


def name_cluster_set(cluster_set: ClusterSet, chain: AlignmentChain,
                     catalog: ConditionCatalog, dominant: float = 0.7) -> str:
    """Name a set after its index cluster's conditions with theta above ``dominant``.

    Without any such condition the name is ``~`` plus the most prevalent one.
    """
    theta = _index_theta(cluster_set, chain)
    order = sorted(range(theta.size), key=lambda d: (-theta[d], d))
    top = [catalog.names[d] for d in order if theta[d] > dominant]
    if not top:
        return "~" + catalog.names[order[0]]
    return "(" + ", ".join(top) + ")"


def cluster_fractions(chain: AlignmentChain, strata: Sequence[Stratum]
                      ) -> dict[int, np.ndarray]:
    """Hard-assignment size fractions for every stratum in the chain."""
    by_group = {s.group_index: s for s in strata}
    out = {}
    for group, model in zip(chain.groups, chain.models):
        stratum = by_group.get(group)
        if stratum is None or len(stratum) == 0:
            out[group] = np.zeros(model.K)
        else:
            out[group] = hard_assign(model, stratum)[2]
    return out


def cluster_set_table(sets: Sequence[ClusterSet], chain: AlignmentChain,
                      fractions: Mapping[int, np.ndarray], catalog: ConditionCatalog,
                      bands: BandThresholds = BandThresholds(),
                      split_moderate: bool = False) -> list[list[str]]:
    """Rows of the cluster-set table, header first.

    Group cells hold the index-cluster-member's share of its stratum in percent
    and are blank outside the set's span. ``split_moderate`` divides the
    moderate band at 0.5 into two columns.
    """
    group_cols = [f"g{g}" for g in chain.groups]
    if split_moderate:
        header = ["set_id", "name", "high", "moderate_high", "moderate_low", "singleton"]
    else:
        header = ["set_id", "name", "high", "moderate", "singleton"]
    rows = [header + group_cols]
    for cs in sets:
        theta = _index_theta(cs, chain)
        profile = classify_bands(theta, bands)
        high = ";".join(catalog.names[d] for d in profile.high)
        if split_moderate:
            moderate = [
                ";".join(catalog.names[d] for d in profile.moderate if theta[d] >= 0.5),
                ";".join(catalog.names[d] for d in profile.moderate if theta[d] < 0.5),
            ]
        else:
            moderate = [";".join(catalog.names[d] for d in profile.moderate)]
        cells = dict((g, k) for g, k in cs.members)
        percents = [
            f"{100.0 * fractions[g][cells[g]]:.2f}" if g in cells else ""
            for g in chain.groups
        ]
        rows.append([
            cs.label,
            name_cluster_set(cs, chain, catalog, bands.hi),
            high,
            *moderate,
            "true" if cs.singleton else "false",
            *percents,
        ])
    return rows


def write_cluster_set_csv(rows: Sequence[Sequence[str]], sink: IO[str]) -> None:
    csv.writer(sink, lineterminator="\n").writerows(rows)


def summarize(sets: Sequence[ClusterSet], groups: Sequence[int] | None = None) -> dict:
    """Singleton/non-singleton counts, span-length histogram and singletons per group."""
    singleton = sum(1 for s in sets if s.singleton)
    spans = Counter(len(s) for s in sets)
    per_group = Counter(s.index_cluster[0] for s in sets if s.singleton)
    if groups is None:
        groups = sorted({g for s in sets for g, _ in s.members})
    return {
        "total": len(sets),
        "singleton": singleton,
        "non_singleton": len(sets) - singleton,
        "span_histogram": {str(n): spans[n] for n in sorted(spans)},
        "singleton_per_group": {str(g): per_group.get(g, 0) for g in groups},
    }


def _node(group: int, cluster: int) -> str:
    return f"G{group}:C{cluster}"


def export_dot(chain: AlignmentChain) -> str:
    """DOT digraph: one node per cluster, one edge per accepted match."""
    lines = ["digraph similarity {", "  rankdir=LR;", "  node [shape=circle];"]
    for group, model in zip(chain.groups, chain.models):
        lines.append(f"  subgraph g{group} {{")
        lines.append("    rank=same;")
        for k in range(model.K):
            lines.append(f'    "{_node(group, k)}";')
        lines.append("  }")
    for ml in chain.matches:
        for m in ml.pairs:
            s = f"{m.similarity:.12g}"
            lines.append(
                f'  "{_node(ml.from_group, m.row)}" -> "{_node(ml.from_group + 1, m.col)}" '
                f'[weight={s}, label="{m.similarity:.2f}"];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"


def similarity_graph(chain: AlignmentChain) -> nx.DiGraph:
    graph = nx.DiGraph()
    for group, model in zip(chain.groups, chain.models):
        for k in range(model.K):
            graph.add_node(_node(group, k), group=group, cluster=k)
    for ml in chain.matches:
        for m in ml.pairs:
            graph.add_edge(_node(ml.from_group, m.row), _node(ml.from_group + 1, m.col),
                           weight=float(m.similarity))
    return graph


def export_graphml(chain: AlignmentChain) -> str:
    return "\n".join(nx.generate_graphml(similarity_graph(chain))) + "\n"
