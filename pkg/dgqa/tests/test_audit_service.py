import pytest

from dgqa.config import config_hash, load_experiment_config
from dgqa.errors import ArtifactError, InputValidationError, RunLockedError, StageError
from dgqa.services.audit_service import RunAudit, StageOutcome, load_run_record
from dgqa.storage import read_json, write_json


@pytest.fixture
def config(config_file):
    return load_experiment_config(config_file)


class TestRunAudit:
    def test_record_and_lock(self, config):
        with RunAudit(config, "synth") as audit:
            assert audit.layout.lock.exists()
            audit.log_event("synth", StageOutcome.SUCCESS, domains=3)
        assert not audit.layout.lock.exists()
        record = read_json(audit.layout.run_record)
        assert record["command"] == "synth"
        assert record["config_hash"] == config_hash(config)
        assert record["seeds"]["repeats"] == [0, 1]
        assert record["events"][-1]["details"] == {"domains": 3}

    def test_second_writer_is_refused(self, config):
        with RunAudit(config, "pipeline"):
            with pytest.raises(RunLockedError):
                RunAudit(config, "select").acquire()

    def test_stage_wraps_unexpected_failures(self, config):
        with RunAudit(config, "train-domain") as audit:
            with pytest.raises(StageError) as excinfo:
                with audit.stage("train-domain"):
                    raise ZeroDivisionError("boom")
        assert excinfo.value.stage == "train-domain"
        events = read_json(audit.layout.run_record)["events"]
        assert events[-1]["outcome"] == "FAILURE"
        assert "ZeroDivisionError" in events[-1]["details"]["error"]

    def test_stage_tags_library_errors(self, config):
        with RunAudit(config, "select") as audit:
            with pytest.raises(InputValidationError) as excinfo:
                with audit.stage("select"):
                    raise InputValidationError("bad tau")
        assert excinfo.value.stage == "select"

    def test_successful_stage_collects_details(self, config):
        with RunAudit(config, "select") as audit:
            with audit.stage("select") as info:
                info["selected"] = {"t": [1]}
            audit.skip("synth", "corpus already present")
        events = read_json(audit.layout.run_record)["events"]
        assert events[-2]["details"] == {"selected": {"t": [1]}}
        assert events[-1]["outcome"] == "SKIPPED"

    def test_events_carry_over_for_the_same_config(self, config):
        with RunAudit(config, "synth") as audit:
            audit.log_event("synth")
        with RunAudit(config, "select") as again:
            again.log_event("select")
        stages = [e["stage"] for e in read_json(again.layout.run_record)["events"]]
        assert stages == ["synth", "select"]


class TestLoadRunRecord:
    def test_from_directory(self, config):
        with RunAudit(config, "synth") as audit:
            pass
        assert load_run_record(audit.layout.root)["config_hash"] == config_hash(config)

    def test_record_without_config(self, tmp_path):
        write_json(tmp_path / "run.json", {"command": "x"})
        with pytest.raises(ArtifactError):
            load_run_record(tmp_path / "run.json")
