"""JSON-lines record of pipeline stages (one line per model pass)."""

import json
import threading
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import structlog

logger = structlog.get_logger()


@dataclass
class StageRecord:
    stage: str
    location: str
    frames: list[int]
    wall_time: float


class StageTracer:
    """Collects stage records in memory and optionally appends them to a JSON-lines file."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[StageRecord] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    @contextmanager
    def stage(self, stage: str, location: str, frames: list[int]) -> Iterator[None]:
        started = time.perf_counter()
        yield
        record = StageRecord(stage, location, list(frames), time.perf_counter() - started)
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a") as handle:
                    handle.write(json.dumps(asdict(record)) + "\n")
        logger.debug("stage_completed", **asdict(record))

    def count(self, stage: str) -> int:
        return sum(1 for record in self.records if record.stage == stage)


def read_trace(path: Path) -> list[StageRecord]:
    return [StageRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
