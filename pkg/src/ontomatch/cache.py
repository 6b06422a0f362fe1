"""Content-addressed response cache.

One JSON file per entry under ``<root>/<kind>/<digest>.json``. Writes go to a
temporary file in the same directory and are renamed into place, so readers
never observe a partial entry. ``get_or_compute`` deduplicates concurrent
computation of the same digest (single-flight) within a process.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable

logger = logging.getLogger(__name__)

__all__ = ["ResponseCache"]


class ResponseCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _path(self, kind: str, digest: str) -> Path:
        return self.root / kind / f"{digest}.json"

    def get(self, kind: str, digest: str) -> dict | None:
        path = self._path(kind, digest)
        try:
            with open(path, "r", encoding="utf-8") as fp:
                return json.load(fp)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("discarding corrupt cache entry %s", path)
            return None

    def put(self, kind: str, digest: str, payload: dict) -> None:
        path = self._path(kind, digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {"digest": digest, "created_at": time.time(), **payload}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fp:
                json.dump(record, fp, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    def get_or_compute(
        self, kind: str, digest: str, compute: Callable[[], dict]
    ) -> dict:
        """Return the cached payload, computing and storing it at most once
        per digest even under concurrent callers."""
        found = self.get(kind, digest)
        if found is not None:
            return found
        with self._lock_for(f"{kind}/{digest}"):
            found = self.get(kind, digest)
            if found is not None:
                return found
            payload = compute()
            self.put(kind, digest, payload)
            return self.get(kind, digest)  # read back the canonical record
