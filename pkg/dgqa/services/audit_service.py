"""
Run Audit Service
Provenance for every CLI run: an exclusive lock on the run directory, stage
events with outcomes, and a run.json record holding the config, its hash and
all seeds so a run can be re-executed exactly.
"""

import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from dgqa import __version__
from dgqa.config import config_hash, config_to_dict
from dgqa.errors import ArtifactError, DGQAError, RunLockedError, StageError
from dgqa.schemas import ExperimentConfig, RunEvent
from dgqa.storage import RunLayout, read_json, write_json

logger = logging.getLogger(__name__)


class StageOutcome(Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    SKIPPED = "SKIPPED"


@dataclass
class RunRecord:
    """Contents of run.json"""
    command: str
    config: Dict[str, Any]
    config_hash: str
    seeds: Dict[str, Any]
    version: str = __version__
    events: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def run_seeds(config: ExperimentConfig) -> Dict[str, Any]:
    return {
        "base": config.seed,
        "train": config.train.seed,
        "patch": config.patch.seed,
        "repeats": [config.seed + i for i in range(config.n_repeats)],
    }


class RunAudit:
    """
    Audit trail of one run directory.

    Features:
    - Exclusive lock file while the run writes (a second writer is refused)
    - Stage events with SUCCESS/FAILURE/SKIPPED outcomes and details
    - run.json rewritten after every event so partial runs stay inspectable
    """

    def __init__(self, config: ExperimentConfig, command: str, root: Optional[Path] = None):
        self.layout = RunLayout(Path(root) if root is not None else Path(config.output_dir))
        self.record = RunRecord(command=command, config=config_to_dict(config),
                                config_hash=config_hash(config), seeds=run_seeds(config))
        previous = self.layout.run_record
        if previous.exists():
            old = read_json(previous)
            if old.get("config_hash") == self.record.config_hash:
                self.record.events = list(old.get("events", []))
        self._locked = False

    def acquire(self) -> None:
        """
        Raises:
            RunLockedError: If another process holds the lock
        """
        self.layout.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.layout.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError("Run directory is locked by another writer", self.layout.lock) from None
        except OSError as e:
            raise ArtifactError(f"Cannot create lock file ({e})", self.layout.lock) from e
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        self._locked = True

    def release(self) -> None:
        if self._locked:
            self.layout.lock.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "RunAudit":
        self.acquire()
        self.write()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        try:
            self.write()
        finally:
            self.release()

    def log_event(self, stage: str, outcome: StageOutcome = StageOutcome.SUCCESS, **details: Any) -> RunEvent:
        event = RunEvent(stage=stage, outcome=outcome.value,
                         timestamp=datetime.now(timezone.utc).isoformat(), details=details)
        self.record.events.append(event.model_dump(mode="json"))
        logger.info(f"Stage event: {stage} - {outcome.value}")
        self.write()
        return event

    @contextmanager
    def stage(self, name: str, **details: Any) -> Iterator[Dict[str, Any]]:
        """
        Run a block as a named stage. The yielded dict collects details for the
        event; failures are logged and re-raised tagged with the stage name.
        """
        collected: Dict[str, Any] = dict(details)
        logger.info(f"Stage started: {name}")
        try:
            yield collected
        except DGQAError as e:
            e.stage = e.stage or name
            logger.error(f"Stage {name} failed: {e}")
            self.log_event(name, StageOutcome.FAILURE, error=str(e), **collected)
            raise
        except Exception as e:
            logger.error(f"Stage {name} failed unexpectedly: {e}")
            self.log_event(name, StageOutcome.FAILURE, error=f"{type(e).__name__}: {e}", **collected)
            raise StageError(name, e) from e
        self.log_event(name, StageOutcome.SUCCESS, **collected)

    def skip(self, name: str, reason: str) -> None:
        logger.warning(f"Stage {name} skipped: {reason}")
        self.log_event(name, StageOutcome.SKIPPED, reason=reason)

    def write(self) -> Path:
        return write_json(self.layout.run_record, self.record.to_dict())


def load_run_record(path: Path) -> Dict[str, Any]:
    """
    Raises:
        ArtifactError: Missing file or a record without a config
    """
    path = Path(path)
    if path.is_dir():
        path = RunLayout(path).run_record
    record = read_json(path)
    if "config" not in record:
        raise ArtifactError("Run record has no config", path)
    return record
