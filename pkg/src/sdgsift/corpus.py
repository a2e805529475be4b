"""Bibliographic corpus ingestion, cleaning, validation, and deduplication.

Records arrive either from exported CSV/JSONL files or from a paginated
retrieval API stub. Cleaning removes boilerplate copyright statements from
abstracts; records without a usable title or abstract are rejected (never
fatally); duplicates retrieved by several goal queries are merged with their
SDG labels unioned.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
import string
import time
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Literal

import httpx

logger = logging.getLogger(__name__)

GOAL_MIN = 1
GOAL_MAX = 17

CSV_COLUMNS = ("source_id", "doi", "title", "abstract", "year", "venue", "sdg_query_label")

RejectionReason = Literal["missing_title", "missing_abstract", "empty_after_cleaning"]


class IngestError(ValueError):
    """The input stream as a whole is unusable (wrong header, undecodable)."""


@dataclass(frozen=True)
class RawRecord:
    source_id: str
    sdg_query_label: int
    title: str | None = None
    abstract: str | None = None
    doi: str | None = None
    year: int | None = None
    venue: str | None = None
    source: Literal["file", "api"] = "file"


@dataclass(frozen=True)
class Document:
    doc_key: str
    title: str
    abstract: str
    sdg_labels: frozenset[int]
    doi: str | None = None
    year: int | None = None


@dataclass(frozen=True)
class RejectionRecord:
    source_id: str
    reason: RejectionReason


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


# Ordered, case-insensitive copyright statement patterns. Each match runs from
# its anchor to the next sentence end (terminator followed by whitespace) or to
# the end of the string, so "(c) 2020 Elsevier B.V." is consumed whole while the
# surrounding sentences survive. The list is a config artifact: callers may pass
# their own.
_SPAN_END = r".*?(?:[.!?](?=\s|$)|$)"
DEFAULT_COPYRIGHT_PATTERNS: tuple[str, ...] = (
    r"©" + _SPAN_END,
    r"\(c\)\s*(?:19|20)\d{2}" + _SPAN_END,
    r"\bcopyright\s+(?:©\s*|\(c\)\s*)?(?:19|20)\d{2}" + _SPAN_END,
    r"\ball rights reserved\b" + _SPAN_END,
)

_WS_RE = re.compile(r"\s+")


def _compile_patterns(patterns: Iterable[str]) -> list[re.Pattern[str]]:
    return [re.compile(p, re.IGNORECASE | re.DOTALL) for p in patterns]


_DEFAULT_COMPILED = _compile_patterns(DEFAULT_COPYRIGHT_PATTERNS)


def strip_copyright(text: str, patterns: Iterable[str] | None = None) -> str:
    """Remove copyright statements and collapse whitespace; idempotent.

    Substitution is iterated to a fixed point, so the output never matches any
    configured pattern even when removals splice new anchor text together.
    """
    compiled = _DEFAULT_COMPILED if patterns is None else _compile_patterns(patterns)
    current = _WS_RE.sub(" ", text).strip()
    while True:
        cleaned = current
        for pattern in compiled:
            cleaned = pattern.sub(" ", cleaned)
        cleaned = _WS_RE.sub(" ", cleaned).strip()
        if cleaned == current:
            return cleaned
        current = cleaned


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def title_digest(title: str) -> str:
    """Stable dedup key for records without a DOI: sha256 of the normalized title."""
    normalized = _WS_RE.sub(" ", title.lower().translate(_PUNCT_TABLE)).strip()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def doc_key_for(doi: str | None, title: str) -> str:
    if doi is not None and doi.strip():
        return doi.strip().lower()
    return title_digest(title)


def _coerce_optional_str(value: object) -> str | None:
    if value is None:
        return None
    text = str(value)
    return text if text.strip() else None


def _coerce_year(value: object) -> int | None:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    return int(str(value).strip())


def _record_from_mapping(raw: dict, line: int, source: Literal["file", "api"]) -> RawRecord:
    source_id = str(raw.get("source_id") or "").strip()
    if not source_id:
        raise ValueError("source_id is missing or empty")
    label_raw = raw.get("sdg_query_label")
    if label_raw is None or (isinstance(label_raw, str) and not label_raw.strip()):
        raise ValueError("sdg_query_label is missing")
    try:
        label = int(str(label_raw).strip())
    except ValueError:
        raise ValueError(f"sdg_query_label {label_raw!r} is not an integer") from None
    if not GOAL_MIN <= label <= GOAL_MAX:
        raise ValueError(f"sdg_query_label {label} outside {GOAL_MIN}..{GOAL_MAX}")
    try:
        year = _coerce_year(raw.get("year"))
    except ValueError:
        raise ValueError(f"year {raw.get('year')!r} is not an integer") from None
    return RawRecord(
        source_id=source_id,
        sdg_query_label=label,
        title=_coerce_optional_str(raw.get("title")),
        abstract=_coerce_optional_str(raw.get("abstract")),
        doi=_coerce_optional_str(raw.get("doi")),
        year=year,
        venue=_coerce_optional_str(raw.get("venue")),
        source=source,
    )


def ingest_records(
    stream: IO[str], fmt: Literal["csv", "jsonl"]
) -> tuple[list[RawRecord], list[RowError]]:
    """Read raw records from a CSV (header required) or JSONL stream.

    Malformed rows are collected as RowErrors and skipped; the run continues.
    An unusable stream (missing CSV columns, undecodable input) raises
    IngestError. Input order is preserved.
    """
    records: list[RawRecord] = []
    errors: list[RowError] = []
    if fmt == "csv":
        reader = csv.DictReader(stream)
        header = reader.fieldnames
        if header is None:
            raise IngestError("CSV input has no header row")
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"CSV header missing required columns: {', '.join(missing)}")
        for row_num, row in enumerate(reader, start=2):
            try:
                records.append(_record_from_mapping(row, row_num, "file"))
            except ValueError as exc:
                errors.append(RowError(line=row_num, message=str(exc)))
    elif fmt == "jsonl":
        for line_num, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                if not isinstance(raw, dict):
                    raise ValueError("line is not a JSON object")
                records.append(_record_from_mapping(raw, line_num, "file"))
            except (json.JSONDecodeError, ValueError) as exc:
                errors.append(RowError(line=line_num, message=str(exc)))
    else:
        raise IngestError(f"unknown ingest format {fmt!r}")
    return records, errors


def validate_record(
    record: RawRecord, patterns: Iterable[str] | None = None
) -> Document | RejectionRecord:
    """Clean and validate one raw record; total, never raises.

    Rejection reasons are checked in order: missing_title, missing_abstract,
    empty_after_cleaning.
    """
    title = (record.title or "").strip()
    if not title:
        return RejectionRecord(source_id=record.source_id, reason="missing_title")
    if record.abstract is None or not record.abstract.strip():
        return RejectionRecord(source_id=record.source_id, reason="missing_abstract")
    abstract = strip_copyright(record.abstract, patterns)
    if not abstract:
        return RejectionRecord(source_id=record.source_id, reason="empty_after_cleaning")
    doi = record.doi.strip() if record.doi and record.doi.strip() else None
    return Document(
        doc_key=doc_key_for(doi, title),
        doi=doi,
        title=title,
        abstract=abstract,
        year=record.year,
        sdg_labels=frozenset({record.sdg_query_label}),
    )


def validate_batch(
    records: Iterable[RawRecord], patterns: Iterable[str] | None = None
) -> tuple[list[Document], list[RejectionRecord]]:
    documents: list[Document] = []
    rejections: list[RejectionRecord] = []
    for record in records:
        result = validate_record(record, patterns)
        if isinstance(result, Document):
            documents.append(result)
        else:
            rejections.append(result)
    return documents, rejections


def merge_duplicates(docs: list[Document]) -> list[Document]:
    """Union SDG labels across documents sharing a doc_key.

    The first occurrence supplies title/abstract/DOI and output position.
    Same-key records with differing non-empty DOIs are logged; first wins.
    """
    merged: dict[str, Document] = {}
    for doc in docs:
        existing = merged.get(doc.doc_key)
        if existing is None:
            merged[doc.doc_key] = doc
            continue
        if existing.doi and doc.doi and existing.doi != doc.doi:
            logger.warning(
                "doc_key %s has conflicting DOIs %r and %r; keeping the first",
                doc.doc_key, existing.doi, doc.doi,
            )
        merged[doc.doc_key] = Document(
            doc_key=existing.doc_key,
            doi=existing.doi,
            title=existing.title,
            abstract=existing.abstract,
            year=existing.year,
            sdg_labels=existing.sdg_labels | doc.sdg_labels,
        )
    return list(merged.values())


def document_to_dict(doc: Document) -> dict:
    return {
        "doc_key": doc.doc_key,
        "doi": doc.doi,
        "title": doc.title,
        "abstract": doc.abstract,
        "year": doc.year,
        "sdg_labels": sorted(doc.sdg_labels),
    }


def document_from_dict(raw: dict) -> Document:
    return Document(
        doc_key=str(raw["doc_key"]),
        doi=raw.get("doi"),
        title=str(raw["title"]),
        abstract=str(raw["abstract"]),
        year=raw.get("year"),
        sdg_labels=frozenset(int(x) for x in raw["sdg_labels"]),
    )


def write_corpus(docs: Iterable[Document], fp: IO[str]) -> int:
    n = 0
    for doc in docs:
        fp.write(json.dumps(document_to_dict(doc), ensure_ascii=False) + "\n")
        n += 1
    return n


def read_corpus(fp: IO[str]) -> list[Document]:
    docs = []
    for line in fp:
        if line.strip():
            docs.append(document_from_dict(json.loads(line)))
    return docs


@dataclass(frozen=True)
class RetrievalConfig:
    """Connection settings for the paginated retrieval API stub."""

    base_url: str
    credential_env: str | None = None
    page_size: int = 25
    max_retries: int = 3
    timeout: float = 30.0


class RetrievalError(RuntimeError):
    pass


class RetrievalCredentialError(RetrievalError):
    pass


def fetch_scopus_page(
    cfg: RetrievalConfig,
    query: str,
    cursor: str | None = None,
    *,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[RawRecord], str | None]:
    """Fetch one page of keyword-query hits; returns (records, next_cursor).

    next_cursor is None once the result set is exhausted. 429 responses are
    retried with exponential backoff up to cfg.max_retries; 401/403 raise
    RetrievalCredentialError; anything else unexpected is fatal.
    """
    from .backend import backoff_delays

    headers = {}
    if cfg.credential_env:
        token = os.environ.get(cfg.credential_env)
        if not token:
            raise RetrievalCredentialError(
                f"credential environment variable {cfg.credential_env} is not set"
            )
        headers["X-API-Key"] = token
    params = {"query": query, "count": str(cfg.page_size)}
    if cursor is not None:
        params["cursor"] = cursor

    delays = iter(backoff_delays(cfg.max_retries))
    with httpx.Client(timeout=cfg.timeout, transport=transport) as client:
        while True:
            response = client.get(
                cfg.base_url.rstrip("/") + "/search", params=params, headers=headers
            )
            if response.status_code in (401, 403):
                raise RetrievalCredentialError(
                    f"retrieval endpoint rejected credentials (HTTP {response.status_code})"
                )
            if response.status_code == 429:
                try:
                    sleep(next(delays))
                    continue
                except StopIteration:
                    raise RetrievalError(
                        f"retrieval endpoint rate-limited after {cfg.max_retries} retries"
                    ) from None
            if response.status_code != 200:
                raise RetrievalError(f"retrieval endpoint returned HTTP {response.status_code}")
            break

    try:
        payload = response.json()
        entries = payload["entries"]
        next_cursor = payload.get("next_cursor")
        records = [_record_from_mapping(e, i, "api") for i, e in enumerate(entries, start=1)]
    except (KeyError, TypeError, ValueError) as exc:
        raise RetrievalError(f"malformed retrieval payload: {exc}") from exc
    return records, next_cursor
