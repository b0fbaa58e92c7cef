"""Latent class analysis: multivariate Bernoulli mixtures fitted by EM.

Parameters follow the ``(D, K)`` convention: column ``k`` of ``theta`` holds
the per-condition presence probabilities of cluster ``k`` and ``pi[k]`` its
mixing weight.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .cohort import Cohort, Stratum
from ._fmt import round_sig

logger = logging.getLogger(__name__)

__all__ = [
    "FitError",
    "LcaModel",
    "FitConfig",
    "FitResult",
    "component_log_density",
    "log_likelihood",
    "e_step",
    "m_step",
    "fit_em",
    "fit_best",
    "derive_seeds",
    "bic",
    "n_parameters",
    "hard_assign",
    "max_workers",
    "model_document",
    "model_from_document",
]

# pi entries are floored here before renormalisation so no component has
# exactly zero weight (log 0) after an M-step.
PI_FLOOR = 1e-12
THREADS_ENV = "STRATA_LCA_THREADS"


class FitError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class LcaModel:
    pi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[1] != pi.shape[0]:
            raise ValueError(
                f"theta shape {theta.shape} does not match {pi.shape[0]} components")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixing weights must be non-negative and sum to 1")
        if np.any(theta < 0) or np.any(theta > 1):
            raise ValueError("theta entries must lie in [0, 1]")
        pi.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def D(self) -> int:
        return self.theta.shape[0]

    def permute(self, order: Sequence[int]) -> "LcaModel":
        """Model whose component ``j`` is this model's component ``order[j]``."""
        order = list(order)
        return LcaModel(self.pi[order], self.theta[:, order])


@dataclass(frozen=True)
class FitConfig:
    K: int = 50
    restarts: int = 50
    max_iterations: int = 500
    tolerance: float = 1e-6
    smoothing: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.smoothing < 0.5:
            raise ValueError("smoothing floor must lie in (0, 0.5)")


@dataclass(frozen=True, eq=False)
class FitResult:
    model: LcaModel
    log_likelihood: float
    bic: float
    iterations: int
    converged: bool
    seed_used: int
    history: tuple[float, ...] = field(default=(), repr=False)


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, Stratum):
        data = data.data
    elif isinstance(data, Cohort):
        data = data.conditions
    return np.asarray(data, dtype=float)


def _check(model: LcaModel, y: np.ndarray) -> None:
    if y.ndim != 2 or y.shape[1] != model.D:
        raise ValueError(
            f"data has shape {y.shape}, model expects {model.D} conditions")


def component_log_density(theta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(N, K)`` matrix of ``log p(y_i | theta_k)`` under independent Bernoullis."""
    log_on = np.log(theta)
    log_off = np.log1p(-theta)
    return y @ (log_on - log_off) + log_off.sum(axis=0)


def _joint(model_pi: np.ndarray, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return component_log_density(theta, y) + np.log(model_pi)


def log_likelihood(model: LcaModel, data) -> float:
    """Total log-likelihood of ``data`` under ``model``.

    Each row's log-sum-exp sums its terms in sorted order, so relabelling the
    components leaves the value unchanged bit for bit.
    """
    y = _as_matrix(data)
    _check(model, y)
    if y.shape[0] == 0:
        raise ValueError("empty data")
    joint = np.sort(_joint(model.pi, model.theta, y), axis=1)
    top = joint[:, -1:]
    rows = top[:, 0] + np.log(np.sum(np.exp(joint - top), axis=1))
    return math.fsum(rows.tolist())


def _responsibilities(joint: np.ndarray) -> np.ndarray:
    shifted = np.exp(joint - joint.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def e_step(model: LcaModel, data) -> np.ndarray:
    """Posterior membership probabilities, one row per record."""
    y = _as_matrix(data)
    _check(model, y)
    return _responsibilities(_joint(model.pi, model.theta, y))


def m_step(resp: np.ndarray, data, smoothing: float = 1e-4
           ) -> tuple[np.ndarray, np.ndarray]:
    """Maximise the expected complete-data log-likelihood.

    Returns ``(pi, theta)``. Theta entries are clamped into
    ``[smoothing, 1 - smoothing]``; a component with no responsibility mass
    gets the global column mean. Reinitialising near-empty components is the
    caller's job (see :func:`fit_em`).
    """
    y = _as_matrix(data)
    resp = np.asarray(resp, dtype=float)
    n = y.shape[0]
    weight = resp.sum(axis=0)
    pi = np.maximum(weight / n, PI_FLOOR)
    pi /= pi.sum()
    counts = resp.T @ y
    theta = np.empty((y.shape[1], resp.shape[1]))
    alive = weight > 0
    theta[:, alive] = (counts[alive] / weight[alive, None]).T
    if not alive.all():
        theta[:, ~alive] = y.mean(axis=0)[:, None]
    np.clip(theta, smoothing, 1.0 - smoothing, out=theta)
    return pi, theta


def n_parameters(K: int, D: int) -> int:
    return (K - 1) + K * D


def bic(log_lik: float, K: int, D: int, N: int) -> float:
    if N < 1:
        raise ValueError("BIC needs at least one record")
    return -2.0 * log_lik + n_parameters(K, D) * math.log(N)


def _random_theta(rng: np.random.Generator, D: int, K: int) -> np.ndarray:
    return rng.uniform(0.25, 0.75, size=(D, K))


def fit_em(data, config: FitConfig, seed: int) -> FitResult:
    """One EM run from a random start.

    Starts from uniform weights and theta drawn from U[0.25, 0.75]; stops when
    the relative log-likelihood change drops below ``config.tolerance``.
    Components whose responsibility mass falls below one record get a fresh
    random theta column, kept only when that does not lower the likelihood.
    """
    y = _as_matrix(data)
    n, D = y.shape
    K = config.K
    if n == 0:
        raise FitError("cannot fit an empty stratum")
    if n < K:
        warnings.warn(f"fitting {K} clusters to only {n} records", RuntimeWarning,
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    eps = config.smoothing

    pi = np.full(K, 1.0 / K)
    theta = _random_theta(rng, D, K)
    joint = _joint(pi, theta, y)
    ll = float(logsumexp(joint, axis=1).sum())
    history = [ll]
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        resp = _responsibilities(joint)
        pi, theta = m_step(resp, y, eps)
        joint = _joint(pi, theta, y)
        ll_new = float(logsumexp(joint, axis=1).sum())

        empty = resp.sum(axis=0) < 1.0
        if empty.any():
            candidate = theta.copy()
            candidate[:, empty] = _random_theta(rng, D, int(empty.sum()))
            cand_joint = _joint(pi, candidate, y)
            cand_ll = float(logsumexp(cand_joint, axis=1).sum())
            if cand_ll >= ll:
                theta, joint, ll_new = candidate, cand_joint, cand_ll

        if not math.isfinite(ll_new):
            raise FitError("log-likelihood is not finite", iteration=iteration)
        history.append(ll_new)
        change = abs(ll_new - ll) / (abs(ll) + 1.0)
        ll = ll_new
        if change < config.tolerance:
            converged = True
            break

    model = LcaModel(pi, theta)
    final_ll = log_likelihood(model, y)
    return FitResult(
        model=model,
        log_likelihood=final_ll,
        bic=bic(final_ll, K, D, n),
        iterations=iteration,
        converged=converged,
        seed_used=int(seed),
        history=tuple(history),
    )


def derive_seeds(seed: int, n: int) -> list[int]:
    """Per-restart seeds; seed ``i`` depends only on ``(seed, i)``."""
    return [
        int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint64)[0])
        for i in range(n)
    ]


def max_workers(requested: int | None = None) -> int:
    """Worker count, capped by the ``STRATA_LCA_THREADS`` environment variable."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, cap)
    return max(1, n)


def fit_best(data, config: FitConfig, workers: int | None = None) -> FitResult:
    """Best-BIC result over ``config.restarts`` independent EM runs.

    Ties go to the earliest restart. Raises :class:`FitError` only when every
    restart fails.
    """
    y = _as_matrix(data)
    seeds = derive_seeds(config.seed, config.restarts)

    def run(seed):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                return fit_em(y, config, seed)
        except FitError as exc:
            return exc

    if y.shape[0] < config.K:
        warnings.warn(f"fitting {config.K} clusters to only {y.shape[0]} records",
                      RuntimeWarning, stacklevel=2)
    n_workers = min(max_workers(workers), len(seeds))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            outcomes = list(pool.map(run, seeds))
    else:
        outcomes = [run(s) for s in seeds]

    best: FitResult | None = None
    failures = []
    for i, out in enumerate(outcomes):
        if isinstance(out, FitError):
            failures.append(f"restart {i} (seed {seeds[i]}): {out}")
            continue
        if best is None or out.bic < best.bic:
            best = out
    if best is None:
        raise FitError("all restarts failed:\n  " + "\n  ".join(failures))
    for line in failures:
        logger.warning("%s", line)
    return best


def hard_assign(model: LcaModel, data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Modal cluster per record, with cluster sizes and size fractions.

    Ties between equally probable clusters go to the lowest index.
    """
    resp = e_step(model, data)
    labels = np.argmax(resp, axis=1)
    sizes = np.bincount(labels, minlength=model.K)
    n = max(len(labels), 1)
    return labels, sizes, sizes / n


def model_document(result: FitResult, group: int, age_range: tuple[int, int]) -> dict:
    """JSON-ready description of a fitted stratum model (12 significant digits)."""
    model = result.model
    return {
        "group": int(group),
        "age_range": [int(age_range[0]), int(age_range[1])],
        "K": model.K,
        "pi": [round_sig(v) for v in model.pi],
        "theta": [[round_sig(v) for v in row] for row in model.theta],
        "log_likelihood": round_sig(result.log_likelihood),
        "bic": round_sig(result.bic),
        "seed": int(result.seed_used),
        "converged": bool(result.converged),
    }


def model_from_document(doc: dict) -> LcaModel:
    theta = np.array(doc["theta"], dtype=float)
    pi = np.array(doc["pi"], dtype=float)
    if theta.ndim != 2 or theta.shape[1] != int(doc["K"]) or pi.shape != (int(doc["K"]),):
        raise ValueError("model document has inconsistent K, pi and theta shapes")
    # rounding to 12 digits can leave the weights a few ulps off the simplex
    return LcaModel(pi / pi.sum(), theta)
