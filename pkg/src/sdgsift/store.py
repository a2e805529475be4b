"""Durable cache of judging outcomes and run-result persistence.

The cache is an append-only JSONL journal: one object per line holding the
key fields and the stored record. Later lines win, so overwrites are appends;
compaction rewrites the journal with only the live entries. A crash mid-write
can only damage the final line, which is skipped with a warning on reload.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from .evaluation import (
    CacheKey,
    JudgedRecord,
    RunResult,
    record_from_dict,
    record_to_dict,
)

logger = logging.getLogger(__name__)

# Compact when at least this many superseded lines have accumulated and they
# outnumber the live entries.
COMPACT_MIN_REDUNDANT = 1024


class CacheValidationError(ValueError):
    """A record's identifying fields do not match the key it is stored under."""


@dataclass(frozen=True)
class CacheStats:
    path: str
    live: int
    redundant: int
    size_bytes: int


def _key_to_dict(key: CacheKey) -> dict:
    return {
        "doc_key": key.doc_key,
        "goal_number": key.goal_number,
        "model_id": key.model_id,
        "prompt_digest": key.prompt_digest,
        "decoding": key.decoding_fingerprint,
    }


def _key_from_dict(raw: dict) -> CacheKey:
    return CacheKey(
        doc_key=str(raw["doc_key"]),
        goal_number=int(raw["goal_number"]),
        model_id=str(raw["model_id"]),
        prompt_digest=str(raw["prompt_digest"]),
        decoding_fingerprint=str(raw["decoding"]),
    )


class VerdictCache:
    """File-backed cache with multiple readers and one serialized writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[CacheKey, JudgedRecord]] = {}
        self._redundant = 0
        self._load()
        self._fp = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as fp:
            for line_num, line in enumerate(fp, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    key = _key_from_dict(entry["key"])
                    record = record_from_dict(entry["record"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    logger.warning(
                        "skipping corrupt cache line %d in %s: %s", line_num, self.path, exc
                    )
                    continue
                if key.canonical() in self._entries:
                    self._redundant += 1
                self._entries[key.canonical()] = (key, record)

    def get(self, key: CacheKey) -> JudgedRecord | None:
        entry = self._entries.get(key.canonical())
        return entry[1] if entry is not None else None

    def put(self, key: CacheKey, record: JudgedRecord) -> None:
        if (
            record.doc_key != key.doc_key
            or record.goal_number != key.goal_number
            or record.model_id != key.model_id
            or record.prompt_digest != key.prompt_digest
        ):
            raise CacheValidationError(
                f"record identity does not match cache key {key.canonical()}"
            )
        line = json.dumps(
            {"key": _key_to_dict(key), "record": record_to_dict(record)},
            ensure_ascii=False,
        )
        with self._lock:
            if key.canonical() in self._entries:
                self._redundant += 1
            self._entries[key.canonical()] = (key, replace(record, from_cache=False))
            self._fp.write(line + "\n")
            self._fp.flush()
            if (
                self._redundant >= COMPACT_MIN_REDUNDANT
                and self._redundant > len(self._entries)
            ):
                self._compact_locked()

    def compact(self) -> None:
        with self._lock:
            self._compact_locked()

    def _compact_locked(self) -> None:
        tmp_path = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp_path, "w", encoding="utf-8") as tmp:
            for key, record in self._entries.values():
                tmp.write(
                    json.dumps(
                        {"key": _key_to_dict(key), "record": record_to_dict(record)},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        self._fp.close()
        os.replace(tmp_path, self.path)
        self._redundant = 0
        self._fp = open(self.path, "a", encoding="utf-8")

    def stats(self) -> CacheStats:
        size = self.path.stat().st_size if self.path.exists() else 0
        return CacheStats(
            path=str(self.path),
            live=len(self._entries),
            redundant=self._redundant,
            size_bytes=size,
        )

    def close(self) -> None:
        self._fp.close()

    def __enter__(self) -> "VerdictCache":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


VERDICTS_FILENAME = "verdicts.jsonl"
MANIFEST_FILENAME = "manifest.json"


def save_run_result(run: RunResult, directory: str | Path) -> Path:
    """Write verdicts.jsonl plus a manifest; returns the run directory.

    Verdict lines are deterministic for identical inputs; timestamps and cache
    hit counts are confined to the manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / VERDICTS_FILENAME, "w", encoding="utf-8") as fp:
        for record in run.records:
            fp.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")
    manifest = {
        "run_id": run.run_id,
        "goal_number": run.goal_number,
        "model_id": run.model_id,
        "prompt_digest": run.prompt_digest,
        "started": run.started,
        "finished": run.finished,
        "n_records": len(run.records),
        "counts": run.counts(),
    }
    with open(directory / MANIFEST_FILENAME, "w", encoding="utf-8") as fp:
        json.dump(manifest, fp, ensure_ascii=False, indent=2)
        fp.write("\n")
    return directory


def load_run_result(directory: str | Path) -> RunResult:
    directory = Path(directory)
    with open(directory / MANIFEST_FILENAME, "r", encoding="utf-8") as fp:
        manifest = json.load(fp)
    records = []
    with open(directory / VERDICTS_FILENAME, "r", encoding="utf-8") as fp:
        for line in fp:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return RunResult(
        run_id=str(manifest["run_id"]),
        goal_number=int(manifest["goal_number"]),
        model_id=str(manifest["model_id"]),
        prompt_digest=str(manifest["prompt_digest"]),
        records=tuple(records),
        n_skipped=int(manifest["counts"].get("skipped", 0)),
        started=str(manifest["started"]),
        finished=str(manifest["finished"]),
    )
