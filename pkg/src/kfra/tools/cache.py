"""Content-addressed on-disk response cache with TTL and a read-through layer.

One JSON file per request digest. Only ok responses are stored. Writes are
atomic (temp file + rename), so concurrent writers of the same digest can
only race to identical content.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from typing import Callable, Optional

from .protocol import ToolResponse

DEFAULT_TTL_S = 7 * 24 * 3600


class ResponseCache:
    def __init__(self, directory: str, ttl_s: float = DEFAULT_TTL_S, clock: Callable[[], float] = time.time):
        if ttl_s <= 0:
            raise ValueError("ttl_s must be positive")
        self.directory = directory
        self.ttl_s = ttl_s
        self.clock = clock
        self.hits = 0
        self.misses = 0
        self._mem: dict[str, dict] = {}
        self._lock = threading.Lock()
        os.makedirs(directory, exist_ok=True)

    def _path(self, digest: str) -> str:
        return os.path.join(self.directory, f"{digest}.json")

    def get(self, digest: str) -> Optional[ToolResponse]:
        now = self.clock()
        with self._lock:
            entry = self._mem.get(digest)
        if entry is None:
            entry = self._read_disk(digest)
        if entry is None:
            with self._lock:
                self.misses += 1
            return None
        if now - entry["stored_at"] > self.ttl_s:
            self.evict(digest)
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
            self._mem[digest] = entry
        return ToolResponse.from_dict(entry["response"])

    def _read_disk(self, digest: str) -> Optional[dict]:
        try:
            with open(self._path(digest), "r", encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None

    def put(self, digest: str, response: ToolResponse) -> None:
        if not response.ok:
            return
        entry = {"stored_at": self.clock(), "response": response.to_dict()}
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, sort_keys=True, separators=(",", ":"))
            os.replace(tmp, self._path(digest))
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
        with self._lock:
            self._mem[digest] = entry

    def evict(self, digest: str) -> None:
        with self._lock:
            self._mem.pop(digest, None)
        try:
            os.unlink(self._path(digest))
        except OSError:
            pass

    def clear(self) -> int:
        """Remove every entry; returns how many files went away."""
        n = 0
        with self._lock:
            self._mem.clear()
        for name in self._entry_files():
            try:
                os.unlink(os.path.join(self.directory, name))
                n += 1
            except OSError:
                pass
        return n

    def gc(self) -> int:
        """Remove expired entries; returns how many files went away."""
        now = self.clock()
        n = 0
        for name in self._entry_files():
            digest = name[: -len(".json")]
            entry = self._read_disk(digest)
            if entry is None or now - entry["stored_at"] > self.ttl_s:
                self.evict(digest)
                n += 1
        return n

    def stats(self) -> dict:
        files = self._entry_files()
        total = 0
        for name in files:
            try:
                total += os.path.getsize(os.path.join(self.directory, name))
            except OSError:
                pass
        return {
            "entries": len(files),
            "bytes": total,
            "hits": self.hits,
            "misses": self.misses,
            "directory": self.directory,
        }

    def _entry_files(self) -> list[str]:
        try:
            return sorted(n for n in os.listdir(self.directory) if n.endswith(".json"))
        except OSError:
            return []
