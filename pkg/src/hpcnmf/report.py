"""Benchmark reports: per-iteration, per-category breakdowns as JSON and CSV."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .ledger import CATEGORIES, COMM_CATEGORIES, ModelParams, Tally

__all__ = ["BenchReport", "CSV_COLUMNS", "SCHEMA", "compare_runs", "emit_report", "load_report"]

SCHEMA = 1
CSV_COLUMNS = ("iter", "category", "wall_s", "words", "messages", "flops", "modeled_time")


def _num(x):
    """JSON-friendly number: exact integers stay integers."""
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _fmt(x) -> str:
    x = _num(x)
    if x is None:
        return "nan"
    if isinstance(x, int):
        return str(x)
    return f"{x:.17g}"


def _row(iteration, category, tally: Tally, params: ModelParams) -> dict:
    return {"iter": iteration, "category": category, "wall_s": tally.wall,
            "words": _num(tally.words), "messages": tally.messages,
            "flops": _num(tally.flops), "modeled_time": tally.modeled(params)}


@dataclass
class BenchReport:
    """Everything a run produces, in a form that serializes without loss."""

    config: dict
    grid: list | None = None
    iterations: list = field(default_factory=list)
    breakdown: list = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    prediction: dict | None = None
    lower_bound_words: float | None = None
    lower_bound_assumption: bool | None = None
    optimality_ratio: float | None = None
    status: str = "ok"

    @classmethod
    def from_run(cls, config: dict, result, params: ModelParams, prediction=None,
                 lower_bound=None) -> BenchReport:
        report = cls(config=config, grid=[result.grid.p_r, result.grid.p_c] if result.grid else None)
        totals = {c: Tally() for c in CATEGORIES}
        for s in result.stats:
            report.iterations.append({"iter": s.iteration, "residual": _num(s.residual),
                                      "relative_residual": _num(s.relative_residual)})
            for c in CATEGORIES:
                tally = s.ledger_delta.get(c, Tally())
                totals[c] = totals[c] + tally
                report.breakdown.append(_row(s.iteration, c, tally, params))
        report.totals = {c: _row("total", c, totals[c], params) for c in CATEGORIES}
        report.set_prediction(prediction, lower_bound)
        return report

    def set_prediction(self, prediction, lower_bound):
        if prediction is not None:
            self.prediction = {k: _num(v) for k, v in prediction.as_dict().items()}
        if lower_bound is not None:
            self.lower_bound_words = lower_bound.words
            self.lower_bound_assumption = lower_bound.assumption_holds
            if prediction is not None and lower_bound.words > 0:
                self.optimality_ratio = float(prediction.words) / lower_bound.words

    def measured_words_per_iteration(self) -> list:
        per = {}
        for row in self.breakdown:
            if row["category"] in COMM_CATEGORIES:
                per[row["iter"]] = per.get(row["iter"], 0) + row["words"]
        return [per[t] for t in sorted(per)]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "status": self.status, "config": self.config,
                "grid": self.grid, "iterations": self.iterations,
                "breakdown": self.breakdown, "totals": self.totals,
                "prediction": self.prediction, "lower_bound_words": self.lower_bound_words,
                "lower_bound_assumption": self.lower_bound_assumption,
                "optimality_ratio": self.optimality_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> BenchReport:
        if d.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported report schema {d.get('schema')!r}")
        return cls(config=d["config"], grid=d.get("grid"), iterations=d.get("iterations", []),
                   breakdown=d.get("breakdown", []), totals=d.get("totals", {}),
                   prediction=d.get("prediction"), lower_bound_words=d.get("lower_bound_words"),
                   lower_bound_assumption=d.get("lower_bound_assumption"),
                   optimality_ratio=d.get("optimality_ratio"), status=d.get("status", "ok"))


def emit_report(report: BenchReport, fmt: str, out_dir, stem: str = "report") -> list[Path]:
    """Write ``<stem>.json`` and/or ``<stem>.csv`` into ``out_dir``.

    The CSV holds one row per (iteration, category) followed by one ``total``
    row per category; a run with no iterations gives a header-only file.
    """
    if fmt not in ("json", "csv", "both"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt in ("json", "both"):
        path = out_dir / f"{stem}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n")
        paths.append(path)
    if fmt in ("csv", "both"):
        path = out_dir / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            rows = list(report.breakdown)
            if report.iterations:
                rows += [report.totals[c] for c in CATEGORIES]
            for row in rows:
                writer.writerow([row["iter"], row["category"]]
                                + [_fmt(row[c]) for c in CSV_COLUMNS[2:]])
        paths.append(path)
    return paths


def load_report(path) -> BenchReport:
    return BenchReport.from_dict(json.loads(Path(path).read_text()))


def _ratio(a, b):
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def _is_pow2(q) -> bool:
    return q >= 1 and q & (q - 1) == 0


def _prediction_mismatch(report: BenchReport):
    """Largest |measured - predicted| per-iteration words, or None when the
    comparison does not apply (no prediction, or a non power-of-two grid)."""
    if report.prediction is None or not report.grid or not all(_is_pow2(q) for q in report.grid):
        return None
    measured = report.measured_words_per_iteration()
    if not measured:
        return None
    return max(abs(w - report.prediction["words"]) for w in measured)


def compare_runs(a: BenchReport, b: BenchReport) -> dict:
    """Ratios of A over B: per-category words, total words, and speedup (B's
    wall time over A's, so > 1 means A was faster)."""
    for key in ("m", "n", "k"):
        if a.config.get(key) != b.config.get(key):
            raise ConfigError(f"reports differ in {key}: {a.config.get(key)} vs {b.config.get(key)}")
    per_cat = {c: _ratio(a.totals[c]["words"], b.totals[c]["words"]) for c in CATEGORIES}
    words_a = sum(a.totals[c]["words"] for c in COMM_CATEGORIES)
    words_b = sum(b.totals[c]["words"] for c in COMM_CATEGORIES)
    wall_a = sum(a.totals[c]["wall_s"] for c in CATEGORIES)
    wall_b = sum(b.totals[c]["wall_s"] for c in CATEGORIES)
    mismatch = {"A": _prediction_mismatch(a), "B": _prediction_mismatch(b)}
    return {"category_word_ratio": per_cat, "total_word_ratio": _ratio(words_a, words_b),
            "speedup": _ratio(wall_b, wall_a), "prediction_mismatch": mismatch,
            "flagged": [k for k, v in mismatch.items() if v]}
