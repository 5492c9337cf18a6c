import pytest

from dgqa import storage
from dgqa.main import build_parser, main
from dgqa.services.distortion_service import generate_domain
from dgqa.storage import RunLayout


class TestParser:
    @pytest.mark.parametrize("command", ["refs", "synth", "train-domain", "select", "train-iqa", "pipeline",
                                         "gds", "report"])
    def test_subcommands_exist(self, command):
        args = build_parser().parse_args([command, "--seed", "3"])
        assert args.command == command
        assert args.seed == 3

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestExitCodes:
    def test_refs(self, tmp_path):
        assert main(["refs", "--n", "3", "--size", "64", "--out", str(tmp_path / "refs")]) == 0
        ids, _ = storage.load_references(tmp_path / "refs")
        assert ids == ["ref_0000", "ref_0001", "ref_0002"]

    def test_synth_single_family(self, reference_dir, tmp_path):
        out = tmp_path / "domains"
        args = ["synth", "--refs", str(reference_dir), "--family", "11", "--levels", "1..5", "--seed", "7",
                "--out", str(out)]
        assert main(args) == 0
        (domain,) = storage.load_domains(out)
        assert domain.domain == 11
        assert len(domain) == 8 * 5
        assert sorted({s.level for s in domain.samples}) == [1, 2, 3, 4, 5]
        ids, refs = storage.load_references(reference_dir)
        expected = generate_domain(refs, 11, [1, 2, 3, 4, 5], seed=7, reference_ids=ids)
        assert [s.quality for s in domain.samples] == [s.quality for s in expected.samples]

    def test_synth_level_list_and_repeated_family(self, reference_dir, tmp_path):
        out = tmp_path / "domains"
        assert main(["synth", "--refs", str(reference_dir), "--family", "1", "--family", "22",
                     "--levels", "2,4", "--out", str(out)]) == 0
        domains = storage.load_domains(out)
        assert [d.domain for d in domains] == [1, 22]
        assert all(len(d) == 16 for d in domains)

    @pytest.mark.parametrize("levels", ["0..5", "a", "3..9"])
    def test_synth_rejects_bad_levels(self, reference_dir, tmp_path, levels, capsys):
        assert main(["synth", "--refs", str(reference_dir), "--family", "1", "--levels", levels,
                     "--out", str(tmp_path)]) == 2
        assert "[synth]" in capsys.readouterr().err

    def test_synth_family_needs_refs(self, tmp_path):
        assert main(["synth", "--family", "1", "--out", str(tmp_path)]) == 2

    def test_synth_unknown_family(self, reference_dir, tmp_path):
        assert main(["synth", "--refs", str(reference_dir), "--family", "4", "--out", str(tmp_path)]) == 2

    def test_missing_config_flag(self, capsys):
        assert main(["synth"]) == 2
        assert "[synth]" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["select", "--config", str(tmp_path / "none.json")]) == 2
        assert "Cannot read config" in capsys.readouterr().err

    def test_report_without_run(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path)]) == 2
        assert "[report]" in capsys.readouterr().err

    def test_locked_run_directory(self, config_file, tmp_path, capsys):
        layout = RunLayout(tmp_path / "run")
        layout.root.mkdir(parents=True)
        layout.lock.write_text("123")
        assert main(["synth", "--config", str(config_file)]) == 2
        assert "locked" in capsys.readouterr().err

    def test_stage_failure_names_the_stage(self, config_file, capsys):
        """Selecting before any classifier exists fails inside the select stage"""
        assert main(["select", "--config", str(config_file)]) == 2
        assert "[select]" in capsys.readouterr().err


class TestStepByStep:
    def test_individual_commands(self, config_file, tmp_path):
        cfg = ["--config", str(config_file)]
        layout = RunLayout(tmp_path / "run")
        assert main(["synth", *cfg, "--workers", "2"]) == 0
        assert main(["train-domain", *cfg]) == 0
        assert layout.classifier.exists()
        assert main(["select", *cfg]) == 0
        assert layout.selection_file("noise_mix").exists()
        assert main(["train-iqa", *cfg]) == 0
        assert layout.regressor("noise_mix", "dgqa").exists()
        assert main(["train-iqa", *cfg, "--all"]) == 0
        assert layout.regressor("all", "baseline").exists()
        assert main(["report", *cfg]) == 2

    def test_pipeline_from_run(self, completed_run, tmp_path, capsys):
        _, layout, _ = completed_run
        out = tmp_path / "rerun"
        assert main(["pipeline", "--from-run", str(layout.root), "--out", str(out)]) == 0
        assert "N.o.S." in capsys.readouterr().out
        assert storage.read_json(RunLayout(out).selection_file("noise_mix")) == \
            storage.read_json(layout.selection_file("noise_mix"))
        assert main(["report", "--out", str(out), "--chart"]) == 0
        assert (out / "report.md").exists()
