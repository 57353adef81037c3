import csv
import json
import subprocess
import sys

import pytest

import hpcnmf.algorithms as algorithms
from hpcnmf.cli import run_bench
from hpcnmf.errors import BppConvergenceError, ConfigError
from hpcnmf.ledger import CATEGORIES, COMM_CATEGORIES
from hpcnmf.report import CSV_COLUMNS, BenchReport, compare_runs, emit_report, load_report


def bench(tmp_path, name, *args):
    out = tmp_path / name
    code = run_bench([*map(str, args), "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SMALL = ["--m", 40, "--n", 30, "--k", 3, "--iters", 4, "--seed", 5]


class TestRun:
    def test_sparse_auto_grid(self, tmp_path):
        code, out = bench(tmp_path, "r", "--algo", "hpc", "--grid", "auto", "--m", 1024, "--n", 1024,
                          "--p", 16, "--k", 16, "--iters", 10, "--solver", "bpp", "--synthetic",
                          "sparse", "--density", 0.001, "--seed", 7)
        assert code == 0
        report = load_report(out / "report.json")
        assert report.grid == [4, 4]
        assert len(report.iterations) == 10
        assert report.prediction["words"] == 13248
        assert all(w == 13248 for w in report.measured_words_per_iteration())

    def test_single_rank_algorithms_agree(self, tmp_path):
        _, a = bench(tmp_path, "a", "--algo", "naive", "--p", 1, *SMALL)
        _, b = bench(tmp_path, "b", "--algo", "hpc", "--p", 1, *SMALL)
        res = [[r["residual"] for r in load_report(d / "report.json").iterations] for d in (a, b)]
        assert res[0] == res[1]

    def test_predict_only(self, tmp_path):
        code, out = bench(tmp_path, "p", "--predict-only", "--m", 172800, "--n", 115200,
                          "--k", 50, "--p", 600)
        assert code == 0
        report = load_report(out / "report.json")
        assert report.iterations == [] and report.grid == [20, 30]
        assert report.lower_bound_words > 0 and report.optimality_ratio > 1
        assert read_csv(out / "report.csv") == []

    def test_input_file(self, tmp_path):
        path = tmp_path / "a.mtx"
        path.write_text("%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 1\n2 2 2\n3 3 3\n")
        code, out = bench(tmp_path, "f", "--input", path, "--k", 2, "--p", 1, "--iters", 2)
        assert code == 0
        assert load_report(out / "report.json").config["m"] == 3

    def test_preset(self, tmp_path):
        code, out = bench(tmp_path, "v", "--preset", "video", "--scale", 600, "--predict-only", "--p", 4, "--k", 2)
        assert code == 0
        report = load_report(out / "report.json")
        assert (report.config["m"], report.config["n"]) == (1689, 4)
        assert report.grid == [4, 1]

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "hpcnmf", "--predict-only", "--p", "4",
                               "--out", str(tmp_path), "--format", "json"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "report.json").exists()


class TestExitCodes:
    @pytest.mark.parametrize("args", [
        ["--algo", "naive", "--grid", "2x2", "--p", 4],
        ["--algo", "sequential", "--p", 4],
        ["--algo", "hpc", "--grid", "3x3", "--p", 4],
        ["--k", 50, "--m", 10, "--n", 10],
        ["--tol", "1e-3", "--no-residual"],
        ["--solver", "newton"],
        ["--input", "/nonexistent.mtx"],
    ])
    def test_usage_errors(self, tmp_path, args):
        assert bench(tmp_path, "u", *args)[0] == 2

    def test_solver_failure(self, tmp_path, monkeypatch):
        def broken(choice, x_prev, neq):
            raise BppConvergenceError("no convergence", 1.0)

        monkeypatch.setattr(algorithms, "solve_nls", broken)
        assert bench(tmp_path, "s", "--p", 2, *SMALL)[0] == 1


class TestReport:
    @pytest.fixture
    def run_dir(self, tmp_path):
        code, out = bench(tmp_path, "r", "--algo", "hpc", "--p", 4, "--solver", "hals", *SMALL)
        assert code == 0
        return out

    def test_json_is_one_document(self, run_dir):
        doc = json.loads((run_dir / "report.json").read_text())
        assert doc["schema"] == 1 and set(doc["totals"]) == set(CATEGORIES)

    def test_csv_layout_and_totals(self, run_dir):
        rows = read_csv(run_dir / "report.csv")
        assert tuple(rows[0]) == CSV_COLUMNS
        body = [r for r in rows if r["iter"] != "total"]
        totals = {r["category"]: r for r in rows if r["iter"] == "total"}
        assert len(body) == 4 * len(CATEGORIES)
        for c in CATEGORIES:
            for col in ("words", "messages", "flops"):
                assert sum(float(r[col]) for r in body if r["category"] == c) == float(totals[c][col])

    def test_csv_matches_json(self, run_dir):
        doc = json.loads((run_dir / "report.json").read_text())
        rows = [r for r in read_csv(run_dir / "report.csv") if r["iter"] != "total"]
        for row, entry in zip(rows, doc["breakdown"], strict=True):
            assert int(row["iter"]) == entry["iter"] and row["category"] == entry["category"]
            for col in CSV_COLUMNS[2:]:
                assert float(row[col]) == float(entry[col])

    def test_deterministic_apart_from_wall_clock(self, tmp_path):
        docs = []
        for name in ("x", "y"):
            _, out = bench(tmp_path, name, "--algo", "hpc", "--p", 4, *SMALL)
            doc = json.loads((out / "report.json").read_text())
            for row in doc["breakdown"] + list(doc["totals"].values()):
                row.pop("wall_s")
                row.pop("modeled_time")
            docs.append(doc)
        assert docs[0] == docs[1]

    def test_empty_run_csv(self, tmp_path):
        emit_report(BenchReport(config={}), "csv", tmp_path)
        assert (tmp_path / "report.csv").read_text().strip() == ",".join(CSV_COLUMNS)

    def test_seventeen_digits(self, tmp_path):
        report = BenchReport(config={}, iterations=[{"iter": 1}],
                             breakdown=[{"iter": 1, "category": "MM", "wall_s": 0.1, "words": 0,
                                         "messages": 0, "flops": 3, "modeled_time": 1 / 3}],
                             totals={c: {"iter": "total", "category": c, "wall_s": 0.0, "words": 0,
                                         "messages": 0, "flops": 0, "modeled_time": 0.0}
                                     for c in CATEGORIES})
        emit_report(report, "csv", tmp_path)
        assert read_csv(tmp_path / "report.csv")[0]["modeled_time"] == "0.33333333333333331"


class TestCompare:
    def reports(self, tmp_path):
        _, naive = bench(tmp_path, "n", "--algo", "naive", "--p", 4, "--m", 64, "--n", 64,
                         "--k", 4, "--iters", 2)
        _, hpc = bench(tmp_path, "h", "--algo", "hpc", "--p", 4, "--m", 64, "--n", 64,
                       "--k", 4, "--iters", 2)
        return load_report(naive / "report.json"), load_report(hpc / "report.json")

    def test_identical(self, tmp_path):
        naive, _ = self.reports(tmp_path)
        table = compare_runs(naive, naive)
        assert all(r == 1 for r in table["category_word_ratio"].values())
        assert table["total_word_ratio"] == 1 and table["speedup"] == 1
        assert table["flagged"] == []

    def test_naive_moves_more_words(self, tmp_path):
        naive, hpc = self.reports(tmp_path)
        assert compare_runs(naive, hpc)["total_word_ratio"] > 1

    def test_mismatched_k(self, tmp_path):
        naive, hpc = self.reports(tmp_path)
        hpc.config["k"] = 5
        with pytest.raises(ConfigError):
            compare_runs(naive, hpc)

    def test_prediction_mismatch_flagged(self, tmp_path):
        naive, hpc = self.reports(tmp_path)
        hpc.prediction["words"] += 1
        assert compare_runs(naive, hpc)["flagged"] == ["B"]

    def test_cli_compare(self, tmp_path, capsys):
        self.reports(tmp_path)
        code = run_bench(["--compare", str(tmp_path / "n" / "report.json"),
                          str(tmp_path / "h" / "report.json")])
        assert code == 0
        assert "total words A/B" in capsys.readouterr().out
