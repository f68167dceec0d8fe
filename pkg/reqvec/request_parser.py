"""
Helpers to parse raw HTTP requests into documents and apply normalization
profiles.

Pure functions only – no filesystem IO here.
"""

import hashlib
import logging
import re
from typing import List, Optional, Sequence

import numpy as np

from .errors import EmptyInput, InvalidOption, MalformedRequestLine, UnknownProfile
from .schemas import HttpRequestDoc, Label, NormalizationProfile

log = logging.getLogger("reqvec.request_parser")

PROFILES = ("csic", "ids2018", "ump_firstline", "identity")
PROFILE_ALIASES = {"ump": "ump_firstline"}

# Ordered longest first; stripped repeatedly so the transform is idempotent.
DVWA_PREFIXES = ("/DVWA/vulnerabilities/xss", "DVWA/dvwa", "/DVWA")

_REQUEST_LINE = re.compile(r"^([A-Z][A-Z0-9_-]*) (\S+) (HTTP/\d+(?:\.\d+)?)$")


def decode_bytes(raw: bytes) -> str:
    """Bytes → str without loss; undecodable bytes become lone surrogates."""
    return raw.decode("utf-8", errors="surrogateescape")


def encode_text(text: str) -> bytes:
    return text.encode("utf-8", errors="surrogateescape")


def is_request_line(line: str) -> bool:
    return _REQUEST_LINE.match(line) is not None


def split_request_line(line: str) -> Optional[tuple]:
    """Return (method, uri, version) or None."""
    m = _REQUEST_LINE.match(line)
    return m.groups() if m else None


def _split_lines(raw: bytes) -> List[str]:
    # Bare LF inside a CRLF-framed request stays inside its line so the
    # csic profile can literalize it later.
    separator = b"\r\n" if b"\r\n" in raw else b"\n"
    lines = [decode_bytes(part) for part in raw.split(separator)]
    while lines and lines[-1] == "":
        lines.pop()
    return lines


def parse_http_request(
    raw: bytes,
    mode: str = "full",
    *,
    doc_id: str = "req-0",
    label: Label = "unlabeled",
    source: str = "raw",
) -> HttpRequestDoc:
    """
    Parse one raw request.

    - Lines are split on CRLF, or on bare LF when the request has no CRLF.
    - Trailing empty lines are dropped; the blank header/body separator is
      kept as an empty line when a body follows.
    - mode "full" validates line 0 as METHOD SP URI SP VERSION; mode "lines"
      accepts any non-empty text (first-line-only dumps, fragments).
    """
    if not raw or not raw.strip(b"\r\n"):
        raise EmptyInput("empty request")
    if mode not in ("full", "lines"):
        raise InvalidOption(f"unknown parse mode {mode!r}")

    lines = _split_lines(raw)
    if mode == "full" and not is_request_line(lines[0]):
        raise MalformedRequestLine(f"not a request line: {lines[0][:80]!r}")

    return HttpRequestDoc(id=doc_id, label=label, lines=lines, source=source)


# ---------------------------------------------------------------------------
# Header helpers
# ---------------------------------------------------------------------------


def header_block_end(lines: Sequence[str]) -> int:
    """Index one past the last header line (the blank separator or len)."""
    for i, line in enumerate(lines[1:], start=1):
        if line == "":
            return i
    return len(lines)


def header_name(line: str) -> Optional[str]:
    name, sep, _ = line.partition(":")
    if not sep or not name or " " in name.strip():
        return None
    return name.strip()


def find_header(lines: Sequence[str], name: str) -> Optional[int]:
    wanted = name.lower()
    for i in range(1, header_block_end(lines)):
        found = header_name(lines[i])
        if found is not None and found.lower() == wanted:
            return i
    return None


def get_header(lines: Sequence[str], name: str) -> Optional[str]:
    idx = find_header(lines, name)
    if idx is None:
        return None
    return lines[idx].partition(":")[2].strip()


def drop_headers(lines: Sequence[str], names: Sequence[str]) -> List[str]:
    wanted = {n.lower() for n in names}
    end = header_block_end(lines)
    kept = [lines[0]]
    for i in range(1, len(lines)):
        if i < end:
            found = header_name(lines[i])
            if found is not None and found.lower() in wanted:
                continue
        kept.append(lines[i])
    return kept


def has_body(lines: Sequence[str]) -> bool:
    end = header_block_end(lines)
    return any(line for line in lines[end + 1 :])


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def literalize_crlf(line: str) -> str:
    return line.replace("\r", "\\r").replace("\n", "\\n")


def _strip_dvwa_prefix(uri: str) -> str:
    # A prefix only matches whole path segments: "/DVWAx/foo" is left alone.
    changed = True
    while changed:
        changed = False
        candidate = uri.lstrip("/")
        for prefix in DVWA_PREFIXES:
            bare = prefix.lstrip("/")
            rest = candidate[len(bare) :]
            if candidate.startswith(bare) and (not rest or rest[0] in "/?"):
                uri = rest if rest.startswith("/") else "/" + rest
                changed = True
                break
    return uri


def _draw_host(host_pool: Sequence[str], seed: int, doc_id: str) -> str:
    # Keyed by doc id so the draw is a pure function of (doc, seed).
    digest = hashlib.sha256(f"{seed}:{doc_id}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return host_pool[int(rng.integers(len(host_pool)))]


def strip_capture_artifacts(lines: Sequence[str]) -> List[str]:
    """Strip DVWA URI prefixes and drop the Upgrade-Insecure-Requests header."""
    lines = list(lines)
    parts = split_request_line(lines[0])
    if parts:
        method, uri, version = parts
        lines[0] = f"{method} {_strip_dvwa_prefix(uri)} {version}"
    return drop_headers(lines, ["Upgrade-Insecure-Requests"])


def redraw_host(
    lines: Sequence[str], host_pool: Sequence[str], seed: int, doc_id: str
) -> List[str]:
    """Replace the Host header value with a seeded draw from host_pool."""
    if not host_pool:
        raise InvalidOption("host_pool must not be empty")
    lines = list(lines)
    host_idx = find_header(lines, "Host")
    if host_idx is not None:
        name = lines[host_idx].partition(":")[0]
        lines[host_idx] = f"{name}: {_draw_host(host_pool, seed, doc_id)}"
    return lines


def ids2018_sanitize(
    doc: HttpRequestDoc, host_pool: Sequence[str], seed: int = 0
) -> HttpRequestDoc:
    """
    Remove the CSE-CIC-IDS2018 capture artifacts that correlate with labels:

    1. Host header value replaced by a seeded uniform draw from host_pool.
    2. DVWA URI prefixes stripped from the request line.
    3. Upgrade-Insecure-Requests header removed.
    """
    lines = redraw_host(strip_capture_artifacts(doc.lines), host_pool, seed, doc.id)
    if lines == list(doc.lines):
        return doc
    return doc.with_lines(lines)


def has_text_payload(doc: HttpRequestDoc, text_content_types: Sequence[str]) -> bool:
    """False only for requests carrying a body with a non-text Content-Type."""
    if not has_body(doc.lines):
        return True
    content_type = (get_header(doc.lines, "Content-Type") or "").lower()
    return any(content_type.startswith(t.lower()) for t in text_content_types)


def resolve_profile_name(name: str) -> str:
    resolved = PROFILE_ALIASES.get(name, name)
    if resolved not in PROFILES:
        raise UnknownProfile(f"unknown normalization profile {name!r}")
    return resolved


def normalize_request(doc: HttpRequestDoc, profile: NormalizationProfile) -> HttpRequestDoc:
    """
    Apply a normalization profile. Every profile is idempotent.

    - csic: CR and LF inside line values become literal "\\r" / "\\n".
    - ids2018: CR/LF literalization, DVWA prefix and Upgrade-Insecure-Requests
      removal, Host redraw when a host pool is configured, then configured
      header drops.
    - ump_firstline: keep only the request line.
    - identity: unchanged.
    """
    name = resolve_profile_name(profile.name)
    tag = f"{doc.source.split('/')[0] or 'raw'}/{name}"

    if name == "identity":
        return doc

    lines = list(doc.lines)
    if name == "ump_firstline":
        lines = [literalize_crlf(lines[0])]
    elif name == "csic":
        lines = [literalize_crlf(line) for line in lines]
    elif name == "ids2018":
        # Literalize first: a raw CR inside the URI hides the request line.
        lines = [literalize_crlf(line) for line in lines]
        lines = strip_capture_artifacts(lines)
        if profile.host_pool:
            lines = redraw_host(lines, profile.host_pool, profile.seed, doc.id)
        if profile.drop_headers:
            lines = drop_headers(lines, profile.drop_headers)

    if lines == list(doc.lines) and doc.source == tag:
        return doc
    return doc.with_lines(lines, source=tag)
