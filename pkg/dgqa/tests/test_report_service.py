import shutil

import pytest

from dgqa.errors import ArtifactError
from dgqa.services.report_service import (
    CHART_DIV_ID, collect_artifacts, render_markdown, report_payload, selection_table, write_report,
)
from dgqa.storage import RunLayout


@pytest.fixture
def report_run(completed_run, tmp_path):
    """Copy of the finished run so report files do not leak into other tests"""
    _, layout, _ = completed_run
    shutil.copytree(layout.root, tmp_path / "run")
    return RunLayout(tmp_path / "run")


class TestSelectionTable:
    def test_one_column_per_domain(self, report_run):
        header, rows = selection_table(collect_artifacts(report_run)["selections"])
        assert header == ["Target", "#1 gaussian_blur", "#11 white_noise", "#22 pixelate"]
        assert len(rows) == 1
        assert rows[0][0] == "noise_mix"
        assert any(cell.startswith("✓") for cell in rows[0][1:])


class TestReport:
    def test_markdown_sections(self, report_run):
        text = render_markdown(collect_artifacts(report_run))
        for heading in ("## Seeds", "## Similar-domain selection", "## Quality prediction",
                        "## Regressor heads", "## Per-component breakdown", "## Greedy selection",
                        "## Configuration"):
            assert heading in text
        assert "N.o.S." in text
        assert "noise_mix" in text

    def test_payload(self, report_run):
        payload = report_payload(collect_artifacts(report_run))
        selection = payload["selection"]["noise_mix"]
        assert selection["n_selected"] == len(selection["selected"])
        assert payload["distances"] is None
        assert set(payload["heads"]["noise_mix"]) == {"mlp", "linear"}

    def test_head_rows(self, report_run):
        text = render_markdown(collect_artifacts(report_run))
        section = text.split("## Regressor heads")[1].split("##")[0]
        assert "| noise_mix | mlp |" in section
        assert "| noise_mix | linear |" in section

    def test_regeneration_is_byte_stable(self, report_run):
        write_report(report_run)
        first = (report_run.root / "report.md").read_bytes(), (report_run.root / "report.json").read_bytes()
        write_report(report_run)
        second = (report_run.root / "report.md").read_bytes(), (report_run.root / "report.json").read_bytes()
        assert first == second

    def test_chart(self, report_run):
        written = write_report(report_run, chart=True)
        html = report_run.root / "similarity.html"
        assert html in written
        assert CHART_DIV_ID in html.read_text(encoding="utf-8")

    def test_missing_artifacts_are_listed(self, report_run):
        (report_run.results / "summary.json").unlink()
        report_run.selection_file("noise_mix").unlink()
        with pytest.raises(ArtifactError) as excinfo:
            write_report(report_run)
        assert set(excinfo.value.paths) == {report_run.results / "summary.json",
                                            report_run.selection_file("noise_mix")}

    def test_missing_run_record(self, tmp_path):
        with pytest.raises(ArtifactError):
            collect_artifacts(RunLayout(tmp_path))
