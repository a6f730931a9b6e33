"""Plain-text and JSON rendering of the evaluation tables."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from ..cascade import EpisodeResult
from ..errors import MissingGradesError
from ..traces import TraceRecord
from .metrics import (
    OVERALL,
    classifier_metrics,
    dollar_table,
    evaluate,
    routing_analysis,
    stage_distribution,
    stage_predictions,
)

# published reference values, shown beside live numbers for format comparison only
REFERENCE = {
    "stage_distribution_overall": [9.38, 11.52, 31.54, 47.56],
    "classifier_average_f1": 0.832,
    "routing": {"correct": 4173, "premature_stop": 460, "late_stop": 310, "unsolvable": 57},
}


def build_report(
    results_by_policy: dict[str, Sequence[EpisodeResult]],
    records: Sequence[TraceRecord] | None = None,
    focus: str | None = None,
) -> dict:
    """Assemble every table; ``focus`` names the policy used for distribution/routing (default tandem)."""
    report: dict = {"metrics": {}, "dollars": [], "reference": REFERENCE}
    graded = {}
    for name, results in results_by_policy.items():
        if results and all(r.correct is not None for r in results):
            graded[name] = results
            report["metrics"][name] = evaluate(results).to_dict()
    report["dollars"] = [asdict(r) for r in dollar_table(results_by_policy)]
    if focus is None:
        focus = "tandem" if "tandem" in results_by_policy else next(iter(results_by_policy), None)
    if focus is not None and results_by_policy.get(focus):
        focus_results = results_by_policy[focus]
        report["focus"] = focus
        report["stage_distribution"] = stage_distribution(focus_results).to_dict()
        try:
            report["routing"] = routing_analysis(focus_results).to_dict()
        except MissingGradesError:
            report["routing"] = None
    if records:
        try:
            report["classifier"] = classifier_metrics(*stage_predictions(records)).to_dict()
        except MissingGradesError:
            report["classifier"] = None
    return report


def _fmt(x, digits: int = 2) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.{digits}f}"
    return str(x)


def format_table(headers: Sequence[str], rows: Sequence[Sequence], title: str = "") -> str:
    cells = [[str(h) for h in headers]] + [[_fmt(c) if not isinstance(c, str) else c for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = [title] if title else []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_text(report: dict) -> str:
    parts = []
    if report.get("metrics"):
        rows = [
            [name, m["accuracy"], m["avg_inference_length"], m["avg_cost_tflops"], m["n"]]
            for name, m in report["metrics"].items()
        ]
        parts.append(format_table(["policy", "acc (%)", "len (tokens)", "cost (TFLOPs)", "n"], rows, "Accuracy / length / cost"))
        for name, m in report["metrics"].items():
            if m["groups"]:
                rows = [[g, v["accuracy"], v["avg_inference_length"], v["avg_cost_tflops"], v["n"]] for g, v in m["groups"].items()]
                parts.append(format_table(["subject", "acc (%)", "len (tokens)", "cost (TFLOPs)", "n"], rows, f"Per subject: {name}"))
    if report.get("dollars"):
        rows = [
            [d["policy"], d["avg_dollars"] if d["avg_dollars"] is None else f"{d['avg_dollars']:.6f}",
             d["mentor_prompt_tokens"], d["mentor_completion_tokens"], d["intern_prompt_tokens"], d["intern_completion_tokens"]]
            for d in report["dollars"]
        ]
        parts.append(format_table(["policy", "$ / question", "mentor in", "mentor out", "intern in", "intern out"], rows, "Dollar cost"))
    if report.get("classifier"):
        c = report["classifier"]
        rows = [[f"stage {s['stage']}", s["precision"], s["recall"], s["f1"], s["support"]] for s in c["stages"]]
        rows.append(["average", c["average"]["precision"], c["average"]["recall"], c["average"]["f1"], ""])
        rows.append(["reference", None, None, REFERENCE["classifier_average_f1"], ""])
        parts.append(format_table(["", "precision", "recall", "F1", "n"], rows, "Sufficiency classifier"))
    if report.get("stage_distribution"):
        sd = report["stage_distribution"]
        headers = ["group"] + [f"stage {t}" for t in range(sd["stages"])] + ["n"]
        rows = [[g] + vals + [sd["counts"][g]] for g, vals in sd["rows"].items()]
        if sd["stages"] == 4:
            rows.append(["reference"] + REFERENCE["stage_distribution_overall"] + [""])
        parts.append(format_table(headers, rows, f"Stage distribution (%): {report.get('focus')}"))
    if report.get("routing"):
        r = report["routing"]
        ref = REFERENCE["routing"]
        keys = ["correct", "premature_stop", "late_stop", "unsolvable"]
        rows = [[k, r[k], ref[k]] for k in keys] + [["total", r["total"], sum(ref.values())]]
        parts.append(format_table(["outcome", "count", "reference"], rows, f"Routing outcomes: {report.get('focus')}"))
    return "\n\n".join(parts) + "\n"


def write_report(report: dict, report_dir: str | Path) -> tuple[Path, Path]:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, js = out / "table.txt", out / "table.json"
    txt.write_text(render_text(report), encoding="utf-8")
    js.write_text(json.dumps(report, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return txt, js


__all__ = ["OVERALL", "REFERENCE", "build_report", "format_table", "render_text", "write_report"]
