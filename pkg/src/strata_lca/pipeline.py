"""Fit, align and report stages over an output directory.

Every stage computes everything in memory first and only then writes its
files, so a failing stage leaves no partial output behind.

Directory layout::

    OUT/manifest.json           config echo, input digest, stratum sizes
    OUT/timings.json            wall-clock seconds per stage
    OUT/models/group_XX.json    one fitted model per stratum (group_00: whole population)
    OUT/chain.json              accepted matches between consecutive strata
    OUT/cluster_sets.json       cluster-set membership
    OUT/cluster_sets.csv        named cluster-set table
    OUT/summary.json            singleton / non-singleton counts
    OUT/prevalence.csv          per-stratum condition prevalence
    OUT/network.dot             similarity network (network.graphml on request)
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from ._fmt import dumps
from .alignment import (DEFAULT_THRESHOLD, build_cluster_sets, chain_alignments,
                        chain_document, chain_from_document, cluster_sets_document)
from .cohort import (Cohort, StrataSpec, Stratum, filter_eligible, load_cohort,
                     stratify, write_prevalence_csv)
from .lca import (FitConfig, FitError, LcaModel, fit_best, model_document,
                  model_from_document)
from .report import (BandThresholds, cluster_fractions, cluster_set_table, export_dot,
                     export_graphml, summarize, write_cluster_set_csv)
from .synth import PlantedSpec, generate_planted_cohort, truth_document
from .cohort import dump_cohort

logger = logging.getLogger(__name__)

WHOLE_POPULATION_GROUP = 0


class PipelineError(RuntimeError):
    """A stage could not complete on valid input (exit code 1)."""


class InputError(Exception):
    """Missing or unreadable inputs (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    out: str = "out"
    strata: StrataSpec = field(default_factory=StrataSpec)
    fit: FitConfig = field(default_factory=FitConfig)
    threshold: float = DEFAULT_THRESHOLD
    bands: BandThresholds = field(default_factory=BandThresholds)
    whole_population: bool = False
    graphml: bool = False
    split_moderate: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def model_filename(group: int) -> str:
    return f"group_{group:02d}.json"


def _read_cohort(path: str | None) -> tuple[Cohort, str]:
    if not path:
        raise InputError("--input is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    raw = p.read_bytes()
    cohort = load_cohort(io.BytesIO(raw))
    return cohort, hashlib.sha256(raw).hexdigest()


def _write_files(out: Path, files: dict[str, str]) -> None:
    for rel, text in files.items():
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")


def fit_strata(strata: Sequence[Stratum], config: FitConfig,
               workers: int | None = None) -> list[dict]:
    docs = []
    for s in strata:
        if len(s) == 0:
            raise PipelineError(
                f"stratum {s.group_index} (ages {s.age_range[0]}-{s.age_range[1]}) "
                "has no eligible records")
        logger.info("fitting group %d: %d records, K=%d, %d restarts",
                    s.group_index, len(s), config.K, config.restarts)
        try:
            result = fit_best(s, config, workers=workers)
        except FitError as exc:
            raise PipelineError(f"group {s.group_index}: {exc}") from exc
        docs.append(model_document(result, s.group_index, s.age_range))
    return docs


def _fit_stage(config: RunConfig, command: str, workers: int | None = None
               ) -> tuple[Cohort, list[Stratum], dict[str, str], dict]:
    cohort, digest = _read_cohort(config.input)
    t0 = time.perf_counter()
    eligible = filter_eligible(cohort, config.strata)
    strata = stratify(eligible, config.strata)
    docs = fit_strata(strata, config.fit, workers)
    if config.whole_population:
        whole = Stratum(WHOLE_POPULATION_GROUP,
                        (config.strata.age_min, config.strata.age_max), eligible)
        docs.append(fit_strata([whole], config.fit, workers)[0])
    elapsed = time.perf_counter() - t0

    files = {f"models/{model_filename(d['group'])}": dumps(d) for d in docs}
    manifest = {
        "command": command,
        "version": __version__,
        "config": config.to_dict(),
        "input": {"path": config.input, "sha256": digest, "conditions": list(cohort.catalog.names)},
        "records": {"total": len(cohort), "eligible": len(eligible),
                    "dropped": len(cohort) - len(eligible)},
        "strata": [
            {"group": s.group_index, "age_range": list(s.age_range), "n": len(s)}
            for s in strata
        ],
        "models": sorted(files),
    }
    files["manifest.json"] = dumps(manifest)
    return cohort, strata, files, {"fit": elapsed}


def _models_from_docs(docs: Sequence[tuple[str, dict]]
                      ) -> tuple[list[int], list[LcaModel], list[tuple[int, int]]]:
    """Validate stratum model documents (sorted by group) and build models."""
    docs = sorted(docs, key=lambda item: int(item[1]["group"]))
    if not docs:
        raise InputError("no stratum model files found")
    groups = [int(d["group"]) for _, d in docs]
    if any(b - a != 1 for a, b in zip(groups, groups[1:])):
        raise PipelineError(f"model groups are not consecutive: {groups}")
    models = []
    for name, d in docs:
        try:
            models.append(model_from_document(d))
        except (ValueError, KeyError) as exc:
            raise PipelineError(f"{name}: {exc}") from exc
    D0 = models[0].D
    bad = [name for (name, _), m in zip(docs, models) if m.D != D0]
    if bad:
        raise PipelineError(
            f"models disagree on the number of conditions: {docs[0][0]} has {D0}, "
            f"but {', '.join(f'{n} has {m.D}' for (n, _), m in zip(docs, models) if m.D != D0)}")
    ranges = [tuple(d["age_range"]) for _, d in docs]
    return groups, models, ranges


def _align_stage(docs: Sequence[tuple[str, dict]], threshold: float
                 ) -> tuple[dict[str, str], dict]:
    groups, models, _ = _models_from_docs(docs)
    chain = chain_alignments(models, threshold, groups)
    sets = build_cluster_sets(chain)
    files = {
        "chain.json": dumps(chain_document(chain)),
        "cluster_sets.json": dumps(cluster_sets_document(sets, chain)),
    }
    return files, summarize(sets, groups)


def _report_stage(cohort: Cohort, docs: Sequence[tuple[str, dict]], chain_doc: dict,
                  config: RunConfig) -> tuple[dict[str, str], dict]:
    groups, models, ranges = _models_from_docs(docs)
    chain = chain_from_document(chain_doc, models, groups)
    sets = build_cluster_sets(chain)
    for _, d in docs:
        if len(d["theta"]) != cohort.D:
            raise PipelineError(
                f"models have {len(d['theta'])} conditions but the cohort has {cohort.D}")
    strata = []
    for g, (lo, hi) in zip(groups, ranges):
        mask = ((cohort.ages >= lo) & (cohort.ages <= hi)
                & (cohort.conditions.sum(axis=1) >= 1))
        strata.append(Stratum(g, (lo, hi), cohort.subset(mask)))

    fractions = cluster_fractions(chain, strata)
    table = cluster_set_table(sets, chain, fractions, cohort.catalog, config.bands,
                              split_moderate=config.split_moderate)
    summary = summarize(sets, groups)
    summary["threshold"] = chain.threshold
    summary["n_clusters"] = chain.n_clusters
    summary["n_matches"] = chain.n_matches

    buf = io.StringIO()
    write_cluster_set_csv(table, buf)
    prev = io.StringIO()
    write_prevalence_csv(strata, cohort.catalog, prev)
    files = {
        "cluster_sets.csv": buf.getvalue(),
        "summary.json": dumps(summary),
        "prevalence.csv": prev.getvalue(),
        "network.dot": export_dot(chain),
    }
    if config.graphml:
        files["network.graphml"] = export_graphml(chain)
    return files, summary


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def read_model_docs(paths: Sequence[str | Path]) -> list[tuple[str, dict]]:
    """Stratum model documents from files and/or directories (group 0 skipped)."""
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("group_*.json")))
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"model path not found: {p}")
    docs = []
    for f in files:
        doc = _load_json(f)
        if int(doc.get("group", -1)) == WHOLE_POPULATION_GROUP:
            continue
        docs.append((str(f), doc))
    return docs


def _finish(out: Path, files: dict[str, str], timings: dict) -> None:
    _write_files(out, files)
    (out / "timings.json").write_text(
        dumps({k: round(v, 3) for k, v in timings.items()}), encoding="utf-8")


def run_fit(config: RunConfig, workers: int | None = None) -> dict[str, str]:
    _, _, files, timings = _fit_stage(config, "fit", workers)
    _finish(Path(config.out), files, timings)
    return files


def run_align(config: RunConfig, model_paths: Sequence[str | Path]
              ) -> tuple[dict[str, str], dict]:
    t0 = time.perf_counter()
    files, summary = _align_stage(read_model_docs(model_paths), config.threshold)
    _finish(Path(config.out), files, {"align": time.perf_counter() - t0})
    return files, summary


def run_report(config: RunConfig, model_paths: Sequence[str | Path] | None = None,
               chain_path: str | Path | None = None) -> tuple[dict[str, str], dict]:
    out = Path(config.out)
    cohort, _ = _read_cohort(config.input)
    docs = read_model_docs(model_paths or [out / "models"])
    chain_doc = _load_json(Path(chain_path) if chain_path else out / "chain.json")
    t0 = time.perf_counter()
    files, summary = _report_stage(cohort, docs, chain_doc, config)
    _finish(out, files, {"report": time.perf_counter() - t0})
    return files, summary


def run_all(config: RunConfig, workers: int | None = None) -> tuple[dict[str, str], dict]:
    cohort, _, files, timings = _fit_stage(config, "run", workers)
    # align on the models exactly as persisted, so this matches a separate align run
    docs = [(name, json.loads(text)) for name, text in files.items()
            if name.startswith("models/")]
    docs = [(n, d) for n, d in docs if int(d["group"]) != WHOLE_POPULATION_GROUP]
    t0 = time.perf_counter()
    align_files, _ = _align_stage(docs, config.threshold)
    timings["align"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report_files, summary = _report_stage(
        cohort, docs, json.loads(align_files["chain.json"]), config)
    timings["report"] = time.perf_counter() - t0
    files.update(align_files)
    files.update(report_files)
    _finish(Path(config.out), files, timings)
    return files, summary


def run_simulate(spec_path: str | Path, out: str | Path, seed: int | None = None
                 ) -> dict[str, str]:
    doc = _load_json(Path(spec_path))
    if seed is not None:
        doc["seed"] = seed
    spec = PlantedSpec.from_dict(doc)
    cohort, truth = generate_planted_cohort(spec)
    buf = io.StringIO()
    dump_cohort(cohort, buf)
    files = {"cohort.csv": buf.getvalue(),
             "truth.json": dumps(truth_document(spec, truth))}
    _write_files(Path(out), files)
    return files
