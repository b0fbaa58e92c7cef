import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from strata_lca.cli import main

from conftest import parse_dot

GOLDEN = Path(__file__).parent / "data" / "golden"
FAST = ["--k", "3", "--restarts", "3", "--seed", "1", "--age-min", "40", "--age-max", "54"]


def _tree(root: Path, skip=("timings.json",)) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture
def cohort_csv():
    return str(GOLDEN / "cohort.csv")


def _write_spec(path, **overrides):
    spec = {"G": 1, "n_per_stratum": 10, "pi": [1.0], "theta": [[0.6], [0.4]], "seed": 5}
    spec.update(overrides)
    path.write_text(json.dumps(spec))
    return str(path)


class TestSimulate:
    def test_minimal(self, tmp_path):
        spec = _write_spec(tmp_path / "spec.json")
        assert main(["simulate", "--input", spec, "--out", str(tmp_path / "a")]) == 0
        lines = (tmp_path / "a" / "cohort.csv").read_text().splitlines()
        assert lines[0] == "id,age,C01,C02" and len(lines) == 11
        truth = json.loads((tmp_path / "a" / "truth.json").read_text())
        assert len(truth["labels"]) == 10 and truth["summary"]["singleton"] == 1

    def test_repeatable(self, tmp_path):
        spec = _write_spec(tmp_path / "spec.json", n_per_stratum=50)
        for name in ("a", "b"):
            assert main(["simulate", "--input", spec, "--out", str(tmp_path / name)]) == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
        assert main(["simulate", "--input", spec, "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
        assert _tree(tmp_path / "a") != _tree(tmp_path / "c")

    def test_invalid_spec(self, tmp_path, capsys):
        spec = _write_spec(tmp_path / "spec.json", pi=[0.5])
        assert main(["simulate", "--input", spec, "--out", str(tmp_path / "a")]) == 2
        assert "weights" in capsys.readouterr().err

    def test_full_catalog_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        theta = np.where(rng.random((40, 50)) < 0.1, 0.85, 0.03).round(2).tolist()
        spec = _write_spec(tmp_path / "spec.json", G=12, n_per_stratum=60,
                           pi=[0.02] * 50, theta=theta)
        out = tmp_path / "sim"
        assert main(["simulate", "--input", spec, "--out", str(out)]) == 0
        assert main(["fit", "--input", str(out / "cohort.csv"), "--out", str(tmp_path / "fit"),
                     "--restarts", "1", "--max-iter", "5"]) == 0
        models = sorted((tmp_path / "fit" / "models").glob("group_*.json"))
        assert len(models) == 12
        assert np.array(json.loads(models[0].read_text())["theta"]).shape == (40, 50)


class TestFit:
    def test_k_passthrough(self, tmp_path, cohort_csv):
        out = tmp_path / "out"
        assert main(["fit", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        docs = [json.loads(p.read_text()) for p in sorted((out / "models").glob("*.json"))]
        assert [d["group"] for d in docs] == [1, 2, 3]
        assert all(d["K"] == 3 and np.array(d["theta"]).shape == (6, 3) for d in docs)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["fit"]["K"] == 3
        sizes = [s["n"] for s in manifest["strata"]]
        assert all(250 < n <= 300 for n in sizes)
        assert manifest["records"]["eligible"] == sum(sizes)
        assert manifest["records"]["total"] == 900
        assert json.loads((out / "timings.json").read_text())["fit"] >= 0

    def test_missing_input(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--out", str(out)]) == 2
        assert not out.exists()
        assert "not found" in capsys.readouterr().err

    def test_parse_error_names_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,age,A,B\np1,42,1,0\np2,41,2,0\n")
        assert main(["fit", "--input", str(bad), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "line 3" in err and "non-binary" in err
        assert not (tmp_path / "o").exists()

    def test_empty_stratum_is_computation_error(self, tmp_path):
        csv = tmp_path / "c.csv"
        csv.write_text("id,age,A\np1,42,1\n")
        assert main(["fit", "--input", str(csv), "--out", str(tmp_path / "o"),
                     "--age-max", "49", "--k", "1", "--restarts", "1"]) == 1
        assert not (tmp_path / "o").exists()

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["fit"])
        assert info.value.code == 2

    def test_bad_strata(self, tmp_path, cohort_csv):
        assert main(["fit", "--input", cohort_csv, "--out", str(tmp_path / "o"),
                     "--age-max", "53"]) == 2


class TestAlign:
    def _fit(self, tmp_path, cohort_csv):
        out = tmp_path / "fit"
        assert main(["fit", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        return out

    def test_single_group(self, tmp_path, cohort_csv, capsys):
        out = self._fit(tmp_path, cohort_csv)
        assert main(["align", "--input", str(out / "models" / "group_01.json"),
                     "--out", str(tmp_path / "al")]) == 0
        chain = json.loads((tmp_path / "al" / "chain.json").read_text())
        assert chain == {"threshold": 0.7, "matches": []}
        sets = json.loads((tmp_path / "al" / "cluster_sets.json").read_text())["sets"]
        assert len(sets) == 3 and all(s["singleton"] for s in sets)
        assert "singleton 3, non-singleton 0" in capsys.readouterr().out

    def test_duplicated_models(self, tmp_path, cohort_csv):
        out = self._fit(tmp_path, cohort_csv)
        src = json.loads((out / "models" / "group_01.json").read_text())
        dup = tmp_path / "dup"
        dup.mkdir()
        for g in range(1, 5):
            (dup / f"group_{g:02d}.json").write_text(json.dumps({**src, "group": g}))
        assert main(["align", "--input", str(dup), "--out", str(tmp_path / "al")]) == 0
        sets = json.loads((tmp_path / "al" / "cluster_sets.json").read_text())["sets"]
        assert len(sets) == 3 and all(len(s["members"]) == 4 for s in sets)

    def test_dimension_mismatch_names_files(self, tmp_path, cohort_csv, capsys):
        out = self._fit(tmp_path, cohort_csv)
        doc = json.loads((out / "models" / "group_02.json").read_text())
        doc["theta"] = doc["theta"][:-1]
        (out / "models" / "group_02.json").write_text(json.dumps(doc))
        assert main(["align", "--input", str(out / "models"), "--out", str(tmp_path / "al")]) == 1
        err = capsys.readouterr().err
        assert "group_01.json" in err and "group_02.json" in err
        assert not (tmp_path / "al").exists()

    def test_drift_matches_truth(self, tmp_path):
        spec = json.loads((GOLDEN / "spec.json").read_text())
        spec["n_per_stratum"] = [1500] * 3
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        assert main(["simulate", "--input", str(path), "--out", str(tmp_path / "sim")]) == 0
        assert main(["run", "--input", str(tmp_path / "sim" / "cohort.csv"),
                     "--out", str(tmp_path / "res"), "--k", "3", "--restarts", "10",
                     "--age-max", "54"]) == 0
        truth = json.loads((tmp_path / "sim" / "truth.json").read_text())["summary"]
        got = json.loads((tmp_path / "res" / "summary.json").read_text())
        assert (got["singleton"], got["non_singleton"]) == (truth["singleton"], truth["non_singleton"])


class TestReport:
    def test_zero_match_chain(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["fit", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        (out / "chain.json").write_text(json.dumps({"threshold": 0.7, "matches": []}))
        assert main(["report", "--input", cohort_csv, "--out", str(out), "--graphml"]) == 0
        nodes, edges = parse_dot((out / "network.dot").read_text())
        assert len(nodes) == 9 and edges == []
        summary = json.loads((out / "summary.json").read_text())
        assert summary["singleton"] == 9 and summary["non_singleton"] == 0
        assert (out / "network.graphml").exists()
        prevalence = (out / "prevalence.csv").read_text().splitlines()
        assert prevalence[0] == "condition,g1,g2,g3,total" and len(prevalence) == 7

    def test_missing_chain(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["fit", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        assert main(["report", "--input", cohort_csv, "--out", str(out)]) == 2


class TestRun:
    def test_all_artifacts(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        names = set(_tree(out, skip=()))
        assert names >= {"manifest.json", "timings.json", "chain.json", "cluster_sets.json",
                         "cluster_sets.csv", "summary.json", "prevalence.csv", "network.dot",
                         "models/group_01.json", "models/group_02.json", "models/group_03.json"}
        assert "network.graphml" not in names

    def test_whole_population(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST,
                     "--whole-population"]) == 0
        doc = json.loads((out / "models" / "group_00.json").read_text())
        assert doc["group"] == 0 and doc["age_range"] == [40, 54]
        sets = json.loads((out / "cluster_sets.json").read_text())
        assert sets["n_clusters"] == 9

    def test_threshold_one(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST,
                     "--threshold", "1.0"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["non_singleton"] == 0 and summary["singleton"] == 9

    def test_reproducible_tree(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST, "--graphml"]) == 0
        first = _tree(out)
        shutil.rmtree(out)
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST, "--graphml"]) == 0
        assert _tree(out) == first

    def test_stage_isolation(self, tmp_path, cohort_csv):
        run_out, staged = tmp_path / "run", tmp_path / "staged"
        assert main(["run", "--input", cohort_csv, "--out", str(run_out), *FAST]) == 0
        assert main(["fit", "--input", cohort_csv, "--out", str(staged), *FAST]) == 0
        assert main(["align", "--out", str(staged)]) == 0
        assert main(["report", "--input", cohort_csv, "--out", str(staged)]) == 0
        a, b = _tree(run_out), _tree(staged)
        assert a.keys() == b.keys()
        for name in a:
            if name != "manifest.json":
                assert a[name] == b[name], name

    def test_manifest_reruns(self, tmp_path, cohort_csv):
        out = tmp_path / "o"
        assert main(["run", "--input", cohort_csv, "--out", str(out), *FAST]) == 0
        cfg = json.loads((out / "manifest.json").read_text())["config"]
        args = ["run", "--input", cfg["input"], "--out", str(tmp_path / "again"),
                "--k", str(cfg["fit"]["K"]), "--restarts", str(cfg["fit"]["restarts"]),
                "--seed", str(cfg["fit"]["seed"]), "--tol", str(cfg["fit"]["tolerance"]),
                "--max-iter", str(cfg["fit"]["max_iterations"]),
                "--smoothing", str(cfg["fit"]["smoothing"]),
                "--age-min", str(cfg["strata"]["age_min"]),
                "--age-max", str(cfg["strata"]["age_max"]),
                "--strata-width", str(cfg["strata"]["width"]),
                "--threshold", str(cfg["threshold"]),
                "--band-lo", str(cfg["bands"]["lo"]), "--band-hi", str(cfg["bands"]["hi"])]
        assert main(args) == 0
        a = _tree(out, skip=("timings.json", "manifest.json"))
        assert a == _tree(tmp_path / "again", skip=("timings.json", "manifest.json"))


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "strata_lca", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("fit", "align", "report", "simulate", "run"):
        assert cmd in proc.stdout
