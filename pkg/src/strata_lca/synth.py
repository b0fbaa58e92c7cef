"""Synthetic stratified cohorts drawn from planted Bernoulli mixtures.

The planted parameters double as the ground truth for recovery checks: the
cluster-set structure they imply is computed with the same alignment rule the
pipeline applies to fitted models.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._fmt import round_sig
from .alignment import (DEFAULT_THRESHOLD, AlignmentChain, ClusterSet,
                        build_cluster_sets, chain_alignments, chain_document,
                        chebyshev_distance)
from .cohort import Cohort, ConditionCatalog, StrataSpec
from .lca import LcaModel

__all__ = [
    "PlantedSpecError",
    "PlantedSpec",
    "GroundTruth",
    "generate_planted_cohort",
    "match_to_truth",
    "truth_document",
]

EXHAUSTIVE_MAX_K = 8


class PlantedSpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PlantedSpec:
    """Per-stratum planted mixtures.

    ``theta[g]`` is the ``(D, K)`` matrix and ``pi[g]`` the weights of stratum
    ``g`` (0-based here; stratum ``g`` covers ages of group ``g + 1``).
    """

    theta: tuple[np.ndarray, ...]
    pi: tuple[np.ndarray, ...]
    n_per_stratum: tuple[int, ...]
    seed: int = 0
    age_min: int = 40
    width: int = 5
    conditions: tuple[str, ...] | None = None
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        theta = tuple(np.array(t, dtype=float) for t in self.theta)
        pi = tuple(np.array(p, dtype=float).reshape(-1) for p in self.pi)
        n = tuple(int(v) for v in self.n_per_stratum)
        if not theta:
            raise PlantedSpecError("at least one stratum is required")
        if not len(theta) == len(pi) == len(n):
            raise PlantedSpecError(
                f"theta, pi and n_per_stratum describe {len(theta)}, {len(pi)} "
                f"and {len(n)} strata")
        D = theta[0].shape[0]
        for g, (t, p) in enumerate(zip(theta, pi), start=1):
            if t.ndim != 2 or t.shape[0] != D or t.shape[1] != p.size:
                raise PlantedSpecError(
                    f"stratum {g}: theta shape {t.shape} and {p.size} weights disagree")
            if np.any(t <= 0) or np.any(t >= 1):
                raise PlantedSpecError(f"stratum {g}: planted theta must lie in (0, 1)")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise PlantedSpecError(f"stratum {g}: weights are not a probability vector")
        if any(v < 0 for v in n):
            raise PlantedSpecError("record counts must be non-negative")
        conditions = self.conditions
        if conditions is None:
            conditions = tuple(f"C{d + 1:02d}" for d in range(D))
        conditions = tuple(conditions)
        if len(conditions) != D:
            raise PlantedSpecError(f"{len(conditions)} condition names for D={D}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "n_per_stratum", n)
        object.__setattr__(self, "conditions", conditions)

    @classmethod
    def with_drift(cls, base_theta, drift, G: int, pi, n_per_stratum,
                   epsilon: float = 1e-4, **kwargs) -> "PlantedSpec":
        """Stratum ``g`` gets ``base_theta + (g - 1) * drift`` clipped to [eps, 1 - eps]."""
        base = np.asarray(base_theta, dtype=float)
        step = np.zeros_like(base) if drift is None else np.asarray(drift, dtype=float)
        if step.shape != base.shape:
            raise PlantedSpecError(f"drift shape {step.shape} != theta shape {base.shape}")
        theta = [np.clip(base + g * step, epsilon, 1.0 - epsilon) for g in range(G)]
        pi = np.asarray(pi, dtype=float)
        pis = [pi] * G if pi.ndim == 1 else list(pi)
        if isinstance(n_per_stratum, int):
            n_per_stratum = [n_per_stratum] * G
        return cls(tuple(theta), tuple(pis), tuple(n_per_stratum), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "PlantedSpec":
        """Build from the JSON spec-file layout (see the README)."""
        try:
            theta = np.asarray(doc["theta"], dtype=float)
            G = int(doc.get("G", theta.shape[0] if theta.ndim == 3 else 1))
            n = doc["n_per_stratum"]
            kwargs = dict(
                seed=int(doc.get("seed", 0)),
                age_min=int(doc.get("age_min", 40)),
                width=int(doc.get("width", 5)),
                conditions=doc.get("conditions"),
                threshold=float(doc.get("threshold", DEFAULT_THRESHOLD)),
            )
            if theta.ndim == 3:
                if theta.shape[0] != G:
                    raise PlantedSpecError(f"theta lists {theta.shape[0]} strata, G={G}")
                if doc.get("drift") is not None:
                    raise PlantedSpecError("drift applies only to a single base theta")
                pi = np.asarray(doc["pi"], dtype=float)
                pis = [pi] * G if pi.ndim == 1 else list(pi)
                n = [n] * G if isinstance(n, int) else n
                spec = cls(tuple(theta), tuple(pis), tuple(n), **kwargs)
            else:
                spec = cls.with_drift(theta, doc.get("drift"), G, doc["pi"], n,
                                      epsilon=float(doc.get("epsilon", 1e-4)), **kwargs)
        except (KeyError, TypeError) as exc:
            raise PlantedSpecError(f"invalid planted spec: {exc!r}") from None
        if "D" in doc and int(doc["D"]) != spec.D:
            raise PlantedSpecError(f"D={doc['D']} but theta has {spec.D} rows")
        return spec

    @classmethod
    def from_json(cls, text: str) -> "PlantedSpec":
        return cls.from_dict(json.loads(text))

    @property
    def D(self) -> int:
        return self.theta[0].shape[0]

    @property
    def G(self) -> int:
        return len(self.theta)

    @property
    def strata(self) -> StrataSpec:
        return StrataSpec(self.age_min, self.age_min + self.G * self.width - 1, self.width)

    @property
    def models(self) -> list[LcaModel]:
        return [LcaModel(p, t) for p, t in zip(self.pi, self.theta)]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    models: tuple[LcaModel, ...]
    labels: np.ndarray
    groups: np.ndarray
    chain: AlignmentChain = field(repr=False)
    cluster_sets: tuple[ClusterSet, ...] = field(repr=False)

    @property
    def n_singleton(self) -> int:
        return sum(1 for s in self.cluster_sets if s.singleton)

    @property
    def n_non_singleton(self) -> int:
        return len(self.cluster_sets) - self.n_singleton


def generate_planted_cohort(spec: PlantedSpec) -> tuple[Cohort, GroundTruth]:
    """Draw a cohort stratum by stratum; each stratum has its own child seed."""
    strata = spec.strata
    streams = np.random.SeedSequence(spec.seed).spawn(spec.G)
    ids: list[str] = []
    ages, rows, labels, groups = [], [], [], []
    for g, (theta, pi, n, ss) in enumerate(
            zip(spec.theta, spec.pi, spec.n_per_stratum, streams), start=1):
        rng = np.random.default_rng(ss)
        k = rng.choice(pi.size, size=n, p=pi)
        y = (rng.random((n, spec.D)) < theta[:, k].T).astype(np.uint8)
        lo, hi = strata.age_range(g)
        age = rng.integers(lo, hi + 1, size=n)
        ids.extend(f"g{g:02d}-{i:06d}" for i in range(n))
        ages.append(age)
        rows.append(y)
        labels.append(k)
        groups.append(np.full(n, g))
    catalog = ConditionCatalog(spec.conditions)
    cohort = Cohort(catalog, ids, np.concatenate(ages).astype(np.int64),
                    np.vstack(rows) if rows else np.zeros((0, spec.D), np.uint8))
    models = spec.models
    chain = chain_alignments(models, spec.threshold)
    truth = GroundTruth(
        models=tuple(models),
        labels=np.concatenate(labels).astype(np.int64),
        groups=np.concatenate(groups).astype(np.int64),
        chain=chain,
        cluster_sets=tuple(build_cluster_sets(chain)),
    )
    return cohort, truth


def match_to_truth(fitted: LcaModel, truth: LcaModel) -> tuple[list[int], float]:
    """Align fitted components to planted ones.

    Returns ``(perm, error)`` where fitted component ``perm[k]`` is matched to
    planted component ``k`` and ``error`` is the largest Chebyshev distance
    among matched pairs. Exhaustive up to eight components (minimising the
    largest, then the summed, distance); greedy above that.
    """
    if fitted.D != truth.D or fitted.K != truth.K:
        raise ValueError("fitted and planted models differ in shape")
    K = truth.K
    cost = np.array([[chebyshev_distance(fitted.theta[:, i], truth.theta[:, j])
                      for j in range(K)] for i in range(K)])
    if K <= EXHAUSTIVE_MAX_K:
        perms = np.array(list(itertools.permutations(range(K))))
        matched = cost[perms, np.arange(K)]
        best = np.lexsort((matched.sum(axis=1), matched.max(axis=1)))[0]
        perm = [int(v) for v in perms[best]]
    else:
        perm = [-1] * K
        free_rows, free_cols = set(range(K)), set(range(K))
        for pos in np.lexsort((np.indices(cost.shape)[1].ravel(),
                               np.indices(cost.shape)[0].ravel(), cost.ravel())):
            i, j = divmod(int(pos), K)
            if i in free_rows and j in free_cols:
                perm[j] = i
                free_rows.discard(i)
                free_cols.discard(j)
    error = float(max(cost[perm[k], k] for k in range(K)))
    return perm, error


def truth_document(spec: PlantedSpec, truth: GroundTruth) -> dict:
    strata = spec.strata
    return {
        "seed": spec.seed,
        "threshold": spec.threshold,
        "conditions": list(spec.conditions),
        "models": [
            {
                "group": g,
                "age_range": list(strata.age_range(g)),
                "K": m.K,
                "pi": [round_sig(v) for v in m.pi],
                "theta": [[round_sig(v) for v in row] for row in m.theta],
                "n": n,
            }
            for g, (m, n) in enumerate(zip(truth.models, spec.n_per_stratum), start=1)
        ],
        "labels": truth.labels.tolist(),
        "matches": chain_document(truth.chain)["matches"],
        "cluster_sets": [
            {"id": s.label, "members": [list(m) for m in s.members],
             "singleton": s.singleton}
            for s in truth.cluster_sets
        ],
        "summary": {
            "total": len(truth.cluster_sets),
            "singleton": truth.n_singleton,
            "non_singleton": truth.n_non_singleton,
        },
    }
