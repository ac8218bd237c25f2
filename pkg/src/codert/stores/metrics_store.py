"""Append-only JSON Lines metrics log."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import ValidationError as PydanticValidationError

from codert.exceptions import StoreError
from codert.models import EvalRecord, StepRecord
from codert.stores._atomic import file_lock

MetricsRecord = StepRecord | EvalRecord


class MetricsStore:
    """Training metrics for one run, one JSON object per line."""

    def __init__(self, path: Path) -> None:
        """Initialize metrics store.

        Args:
            path: Path to the ``.jsonl`` file (created on first append).
        """
        self.path = path
        self._lock_path = path.with_suffix(path.suffix + ".lock")

    def reset(self) -> None:
        """Start a fresh log, discarding any previous run's records."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with file_lock(self._lock_path):
            self.path.write_text("")

    def append(self, record: MetricsRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with file_lock(self._lock_path), self.path.open("a") as f:
            f.write(record.model_dump_json() + "\n")

    def read(self) -> list[MetricsRecord]:
        """Load and validate every record.

        Raises:
            StoreError: If the file is missing or a line is malformed.
        """
        if not self.path.exists():
            raise StoreError(f"metrics log not found: {self.path}")
        records: list[MetricsRecord] = []
        with file_lock(self._lock_path, shared=True):
            lines = self.path.read_text().splitlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                kind = raw.get("kind", "step")
                model = EvalRecord if kind == "eval" else StepRecord
                records.append(model.model_validate(raw))
            except (json.JSONDecodeError, PydanticValidationError, AttributeError) as e:
                raise StoreError(f"{self.path}:{lineno}: invalid metrics record: {e}") from e
        return records

    def steps(self) -> list[StepRecord]:
        return [r for r in self.read() if isinstance(r, StepRecord)]

    def evals(self) -> list[EvalRecord]:
        return [r for r in self.read() if isinstance(r, EvalRecord)]
