"""Append-only, per-run persistence on the local filesystem.

Each run owns a directory. Files are written once via a temp file and a
hard link, so a reader sees either nothing or the complete file, and nothing
is ever overwritten. Status is derived from which files exist.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import time
import uuid
from enum import Enum
from pathlib import Path
from typing import Any

CASE = "case.json"
META = "meta.json"
STARTED = "started.json"
REPORT = "report.json"
CONTEXT = "context.txt"
LOG = "log.json"
ERROR = "error.json"

_RUN_ID = re.compile(r"^[0-9a-f]{32}$")


class RunStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


class RunStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, run_id: str) -> Path:
        if not _RUN_ID.match(run_id):
            raise KeyError(run_id)
        d = self.root / run_id
        if not d.is_dir():
            raise KeyError(run_id)
        return d

    def _write(self, run_id: str, name: str, data: bytes) -> None:
        d = self._dir(run_id)
        fd, tmp = tempfile.mkstemp(dir=d, prefix=f".{name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.link(tmp, d / name)  # fails if the file already exists
        finally:
            os.unlink(tmp)

    def _write_json(self, run_id: str, name: str, doc: Any) -> None:
        self._write(run_id, name, json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False).encode("utf-8"))

    def create(self, case_doc: dict[str, Any], fingerprint: str = "") -> str:
        run_id = uuid.uuid4().hex
        (self.root / run_id).mkdir()
        self._write_json(run_id, CASE, case_doc)
        self._write_json(
            run_id,
            META,
            {"run_id": run_id, "case_id": case_doc.get("case_id"), "config_fingerprint": fingerprint,
             "created_at": time.time()},
        )
        return run_id

    def mark_running(self, run_id: str) -> None:
        self._write_json(run_id, STARTED, {"started_at": time.time()})

    def put_result(self, run_id: str, report_json: str, context: str, log: list[dict[str, Any]]) -> None:
        self._write(run_id, CONTEXT, context.encode("utf-8"))
        self._write_json(run_id, LOG, log)
        self._write(run_id, REPORT, report_json.encode("utf-8"))  # last: marks the run done

    def put_error(self, run_id: str, error: dict[str, Any], context: str = "") -> None:
        if context:
            self._write(run_id, CONTEXT, context.encode("utf-8"))
        self._write_json(run_id, ERROR, error)

    def status(self, run_id: str) -> RunStatus:
        d = self._dir(run_id)
        if (d / REPORT).exists():
            return RunStatus.DONE
        if (d / ERROR).exists():
            return RunStatus.FAILED
        return RunStatus.PENDING

    def started(self, run_id: str) -> bool:
        """Whether a pending run has left the queue."""
        return (self._dir(run_id) / STARTED).exists()

    def read_bytes(self, run_id: str, name: str) -> bytes | None:
        path = self._dir(run_id) / name
        return path.read_bytes() if path.exists() else None

    def read_json(self, run_id: str, name: str) -> Any:
        data = self.read_bytes(run_id, name)
        return None if data is None else json.loads(data)

    def run_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir() and _RUN_ID.match(p.name))
