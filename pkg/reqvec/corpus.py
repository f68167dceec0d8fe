"""
Corpus IO, normalization over whole corpora, and stratified fold assignment.

Interchange format is JSON lines (UTF-8). The first record is a metadata
record ``{"_meta": {"split": ..., "format": ...}}``; every further record is
``{"id", "label", "lines", "source"}``.
"""

import json
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError
from sklearn.model_selection import StratifiedKFold

from .errors import (
    ClassTooSmall,
    EmptyInput,
    InvalidOption,
    IoError,
    MalformedRequestLine,
    SchemaError,
)
from .request_parser import (
    decode_bytes,
    has_text_payload,
    is_request_line,
    normalize_request,
    parse_http_request,
    resolve_profile_name,
)
from .schemas import Corpus, FoldAssignment, HttpRequestDoc, Label, NormalizationProfile

log = logging.getLogger("reqvec.corpus")

CORPUS_FORMAT = "reqvec-corpus/1"

_BLANK_LINE = re.compile(r"\r?\n\r?\n")


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            header = {"_meta": {**(meta or {}), "format": CORPUS_FORMAT, "split": corpus.split}}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for doc in corpus.docs:
                # ensure_ascii keeps surrogate-escaped bytes representable
                fh.write(json.dumps(doc.model_dump(), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write corpus {path}: {exc}") from exc
    log.info("Saved %d docs (%s split) to %s", len(corpus), corpus.split, path)


def _load_jsonl(path: Path) -> Corpus:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc

    split = "inference"
    docs: List[HttpRequestDoc] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise SchemaError(f"{path}:{lineno}: record is not an object")
        if "_meta" in record:
            meta = record["_meta"]
            if not isinstance(meta, dict):
                raise SchemaError(f"{path}:{lineno}: _meta is not an object")
            split = meta.get("split", split)
            continue
        missing = [key for key in ("id", "label", "lines") if key not in record]
        if missing:
            raise SchemaError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
        try:
            docs.append(HttpRequestDoc.model_validate(record))
        except ValidationError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc.errors()[0]['msg']}") from exc

    try:
        return Corpus(docs=docs, split=split)
    except ValidationError as exc:
        raise SchemaError(f"{path}: {exc.errors()[0]['msg']}") from exc


def _label_from_name(name: str) -> Label:
    lowered = name.lower()
    if lowered.startswith("anomal"):
        return "anomaly"
    if lowered.startswith("normal"):
        return "normal"
    return "unlabeled"


def segment_raw_dump(text: str) -> List[str]:
    """
    Split a text dump into one string per request.

    Segments are separated by blank lines; a segment that does not start with
    a request line is the body of the request before it.
    """
    # Line endings are kept as found; the parser needs the CRLF / LF difference.
    segments: List[str] = []
    for block in _BLANK_LINE.split(text):
        block = block.strip("\r\n")
        if not block:
            continue
        first = block.split("\n", 1)[0].rstrip("\r")
        if is_request_line(first) or not segments:
            segments.append(block)
        else:
            eol = "\r\n" if "\r\n" in segments[-1] else "\n"
            segments[-1] = f"{segments[-1]}{eol}{eol}{block}"
    return segments


def import_raw_dump(
    path: Union[str, Path],
    label: Optional[Label] = None,
    *,
    mode: str = "full",
    skip_malformed: bool = True,
) -> List[HttpRequestDoc]:
    """Parse one CSIC-style dump file into documents (ids ``<stem>-<n>``)."""
    path = Path(path)
    try:
        text = decode_bytes(path.read_bytes())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    doc_label = label or _label_from_name(path.name)
    docs: List[HttpRequestDoc] = []
    for n, segment in enumerate(segment_raw_dump(text)):
        raw = segment.encode("utf-8", errors="surrogateescape")
        try:
            docs.append(
                parse_http_request(
                    raw,
                    mode,
                    doc_id=f"{path.stem}-{n:06d}",
                    label=doc_label,
                    source=f"{path.stem}/raw",
                )
            )
        except (EmptyInput, MalformedRequestLine, ValidationError) as exc:
            if not skip_malformed:
                raise
            log.warning("Skipping segment %d of %s: %s", n, path, exc)
    return docs


def _load_rawdir(path: Path, split: str = "inference", mode: str = "full") -> Corpus:
    if not path.is_dir():
        raise IoError(f"not a directory: {path}")
    docs: List[HttpRequestDoc] = []
    for file in sorted(p for p in path.iterdir() if p.is_file()):
        docs.extend(import_raw_dump(file, mode=mode))
    if split == "train":
        docs = [doc for doc in docs if doc.label != "anomaly"]
    return Corpus(docs=docs, split=split)


def load_corpus(
    path: Union[str, Path], format: str = "jsonl", *, split: str = "inference", mode: str = "full"
) -> Corpus:
    """Load a corpus from JSONL or from a directory of raw request dumps."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"corpus not found: {path}")
    if format == "jsonl":
        corpus = _load_jsonl(path)
    elif format == "rawdir":
        corpus = _load_rawdir(path, split=split, mode=mode)
    else:
        raise SchemaError(f"unknown corpus format {format!r}")
    log.info("Loaded %d docs from %s (%s)", len(corpus), path, format)
    return corpus


# ---------------------------------------------------------------------------
# Corpus-level transforms
# ---------------------------------------------------------------------------


def normalize_corpus(corpus: Corpus, profile: NormalizationProfile) -> Corpus:
    name = resolve_profile_name(profile.name)
    docs = []
    dropped = 0
    for doc in corpus.docs:
        if (
            name == "ids2018"
            and profile.require_text_payload
            and not has_text_payload(doc, profile.text_content_types)
        ):
            dropped += 1
            continue
        docs.append(normalize_request(doc, profile))
    if dropped:
        log.info("Dropped %d docs without a text Content-Type", dropped)
    return Corpus(docs=docs, split=corpus.split)


def corpus_stats(corpus: Corpus) -> Dict[str, float]:
    counts = Counter(corpus.labels)
    total_lines = sum(len(doc.lines) for doc in corpus.docs)
    return {
        "docs": len(corpus),
        "normal": counts.get("normal", 0),
        "anomaly": counts.get("anomaly", 0),
        "unlabeled": counts.get("unlabeled", 0),
        "mean_lines": total_lines / len(corpus) if len(corpus) else 0.0,
    }


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def split_stratified_kfold(
    labels: Sequence[str],
    k: int = 5,
    seed: int = 0,
    ids: Optional[Sequence[str]] = None,
) -> FoldAssignment:
    """
    Stratified k-fold assignment: every class is spread over the k folds with
    per-fold counts differing by at most one. Deterministic given seed.
    """
    if k < 2:
        raise InvalidOption(f"k must be at least 2, got {k}")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(labels))]
    if len(ids) != len(labels):
        raise InvalidOption(f"{len(ids)} ids but {len(labels)} labels")

    counts = Counter(labels)
    small = {cls: n for cls, n in counts.items() if n < k}
    if small:
        raise ClassTooSmall(f"classes with fewer than k={k} members: {small}")

    y = np.asarray(labels)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    assignment = np.empty(len(ids), dtype=int)
    for fold, (_, test_idx) in enumerate(splitter.split(np.zeros(len(y)), y)):
        assignment[test_idx] = fold

    return FoldAssignment(
        k=k, seed=seed, assignment={doc_id: int(f) for doc_id, f in zip(ids, assignment)}
    )
