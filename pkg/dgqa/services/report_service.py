"""
Report Service
Renders a finished run as a markdown report plus a machine-readable JSON
summary, and optionally a plotly chart of per-domain similarity. Output
depends only on the run artifacts, so regenerating a report is byte-stable.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import plotly.graph_objects as go

from dgqa import storage
from dgqa.schemas import SelectionReportFile
from dgqa.errors import ArtifactError
from dgqa.storage import RunLayout

logger = logging.getLogger(__name__)

CHECK = "✓"
CHART_DIV_ID = "dgqa-similarity"


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def _row(cells: List[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def collect_artifacts(layout: RunLayout) -> Dict[str, Any]:
    """
    Load everything a report needs.

    Raises:
        ArtifactError: Listing every required file that is absent
    """
    storage.require([layout.run_record])
    record = storage.read_json(layout.run_record)
    names = [t["name"] for t in record.get("config", {}).get("targets", [])]
    summary_path = layout.results / "summary.json"
    storage.require([summary_path] + [layout.selection_file(n) for n in names])

    artifacts: Dict[str, Any] = {
        "record": record,
        "summary": storage.read_json(summary_path),
        "selections": {n: SelectionReportFile.model_validate(storage.read_json(layout.selection_file(n)))
                       for n in names},
    }
    for key, name in (("gds", "gds.json"), ("distances", "distances.json")):
        path = layout.results / name
        artifacts[key] = storage.read_json(path) if path.exists() else None
    return artifacts


def selection_table(selections: Dict[str, SelectionReportFile]) -> Tuple[List[str], List[List[str]]]:
    """Header (Target + one column per domain) and one row per target with sim and a check mark"""
    domain_ids = sorted({e.domain_id for s in selections.values() for e in s.entries})
    names = {e.domain_id: e.family_name for s in selections.values() for e in s.entries}
    header = ["Target"] + [f"#{d} {names[d]}" for d in domain_ids]
    rows = []
    for target, report in selections.items():
        by_id = {e.domain_id: e for e in report.entries}
        cells = [target]
        for d in domain_ids:
            entry = by_id.get(d)
            if entry is None:
                cells.append("")
            else:
                cells.append(f"{CHECK} {entry.sim:.3f}" if entry.selected else f"{entry.sim:.3f}")
        rows.append(cells)
    return header, rows


def render_markdown(artifacts: Dict[str, Any]) -> str:
    record = artifacts["record"]
    summary = artifacts["summary"]
    selections: Dict[str, SelectionReportFile] = artifacts["selections"]
    lines = ["# DGQA run report", "",
             f"- Command: `{record.get('command', 'unknown')}`",
             f"- Config hash: `{record.get('config_hash', '')}`",
             f"- Package version: {record.get('version', '')}", ""]

    lines += ["## Seeds", "", _row(["Seed", "Value"]), _row(["---", "---"])]
    for key, value in sorted(record.get("seeds", {}).items()):
        lines.append(_row([key, json.dumps(value)]))
    lines.append("")

    header, rows = selection_table(selections)
    lines += ["## Similar-domain selection", "", _row(header), _row(["---"] * len(header))]
    lines += [_row(r) for r in rows]
    lines += ["", f"{CHECK} marks a selected domain; values are relative similarities.", ""]
    lines += ["N.o.S. (number of selected source domains):", ""]
    for target, report in selections.items():
        lines.append(f"- {target}: {len(report.selected_ids)} (tau = {report.tau:.4f}, N = {report.n_target})")
    lines.append("")

    lines += [f"## Quality prediction (median of {summary.get('n_repeats')} runs, "
              f"PLCC {summary.get('plcc_mode')})", ""]
    lines += [_row(["Target", "Setting", "SRCC", "PLCC", "Failed runs", "Train samples"]),
              _row(["---"] * 6)]
    for target, info in sorted(summary.get("targets", {}).items()):
        if not info.get("results"):
            lines.append(_row([target, "-", "n/a", "n/a", "-", "-"]))
            continue
        for setting, res in info["results"].items():
            median = res.get("median") or {}
            lines.append(_row([target, setting, _fmt(median.get("srcc")), _fmt(median.get("plcc")),
                               str(res.get("failures", 0)), str(info["train_samples"].get(setting, "-"))]))
    lines.append("")
    for target, info in sorted(summary.get("targets", {}).items()):
        if info.get("train_fraction") is not None:
            gains = info.get("gains") or {}
            lines.append(f"- {target}: DGQA trains on {100 * info['train_fraction']:.1f}% of the source samples; "
                         f"SRCC gain {_fmt(gains.get('srcc'))}, PLCC gain {_fmt(gains.get('plcc'))}")
    lines.append("")

    head_rows = [(target, head, info["heads"][head]) for target, info in sorted(summary.get("targets", {}).items())
                 for head in info.get("heads") or {}]
    if head_rows:
        lines += ["## Regressor heads", "", _row(["Target", "Head", "DGQA SRCC", "Baseline SRCC", "SRCC gain",
                                                  "PLCC gain"]), _row(["---"] * 6)]
        for target, head, pair in head_rows:
            results = summary["targets"][target]["results"]
            dgqa_m = results.get(pair["dgqa"], {}).get("median") or {}
            base_m = results.get(pair["baseline"], {}).get("median") or {}
            gains = pair.get("gains") or {}
            lines.append(_row([target, head, _fmt(dgqa_m.get("srcc")), _fmt(base_m.get("srcc")),
                               _fmt(gains.get("srcc")), _fmt(gains.get("plcc"))]))
        lines.append("")

    subtype_targets = {t: i["subtypes"] for t, i in sorted(summary.get("targets", {}).items()) if i.get("subtypes")}
    if subtype_targets:
        lines += ["## Per-component breakdown", "", _row(["Target", "Component", "Setting", "SRCC", "PLCC"]),
                  _row(["---"] * 5)]
        for target, by_setting in subtype_targets.items():
            for setting, groups in by_setting.items():
                for group, metrics in groups.items():
                    metrics = metrics or {}
                    lines.append(_row([target, group, setting, _fmt(metrics.get("srcc")), _fmt(metrics.get("plcc"))]))
        lines.append("")

    if artifacts.get("gds"):
        lines += ["## Greedy selection", "", _row(["Target", "Median Jaccard vs DGDS", "Excludes inverted", "Subsets"]),
                  _row(["---"] * 4)]
        for target, info in sorted(artifacts["gds"].items()):
            subsets = "; ".join(",".join(str(d) for d in r["selected"]) for r in info["runs"])
            lines.append(_row([target, _fmt(info.get("median_jaccard"), 3), str(info.get("excludes_inverted")), subsets]))
        lines.append("")

    if artifacts.get("distances"):
        lines += ["## Proxy distances", "", _row(["Target", "Spearman(sim, distance)"]), _row(["---", "---"])]
        for target, info in sorted(artifacts["distances"].items()):
            lines.append(_row([target, _fmt(info.get("spearman"), 3)]))
        lines.append("")

    lines += ["## Configuration", "", "```json", json.dumps(record.get("config", {}), indent=2, sort_keys=True),
              "```", ""]
    return "\n".join(lines)


def report_payload(artifacts: Dict[str, Any]) -> Dict[str, Any]:
    record = artifacts["record"]
    return {
        "config_hash": record.get("config_hash"),
        "seeds": record.get("seeds", {}),
        "selection": {t: {"n_selected": len(s.selected_ids), "selected": s.selected_ids,
                          "entries": [e.model_dump(mode="json") for e in s.entries]}
                      for t, s in artifacts["selections"].items()},
        "metrics": artifacts["summary"],
        "heads": {t: info["heads"] for t, info in artifacts["summary"].get("targets", {}).items()
                  if info.get("heads")},
        "gds": artifacts.get("gds"),
        "distances": artifacts.get("distances"),
    }


def similarity_chart(selections: Dict[str, SelectionReportFile]) -> go.Figure:
    fig = go.Figure()
    for target, report in selections.items():
        entries = sorted(report.entries, key=lambda e: e.domain_id)
        fig.add_trace(go.Bar(name=target, x=[f"#{e.domain_id} {e.family_name}" for e in entries],
                             y=[e.sim for e in entries]))
        fig.add_hline(y=report.tau, line_dash="dash", annotation_text=f"tau {target}")
    fig.update_layout(barmode="group", title="Relative similarity per source domain",
                      xaxis_title="Source domain", yaxis_title="sim")
    return fig


def write_report(layout: RunLayout, chart: bool = False) -> List[Path]:
    """
    Write report.md and report.json (and similarity.html with chart=True).

    Returns:
        Paths written
    """
    artifacts = collect_artifacts(layout)
    md_path = layout.root / "report.md"
    try:
        md_path.write_text(render_markdown(artifacts), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Cannot write report ({e})", md_path) from e
    written = [md_path, storage.write_json(layout.root / "report.json", report_payload(artifacts))]
    if chart:
        html_path = layout.root / "similarity.html"
        similarity_chart(artifacts["selections"]).write_html(
            str(html_path), include_plotlyjs="cdn", full_html=True, div_id=CHART_DIV_ID)
        written.append(html_path)
    logger.info(f"Report written: {', '.join(str(p) for p in written)}")
    return written
