"""
Token-ablation attribution against a linear decision hyperplane,
score aggregation, nearest-neighbour queries and highlighted rendering.

For every distinct token type of a document, all its occurrences are deleted
from the token sequence (lines are not re-tokenized) and the variant is
embedded. Its signed distance d_t = (w.z + b) / |w| is min-max scaled over the
document, and score_t = mean(scaled) - scaled_t. A positive score means that
removing t moved the request towards the normal side, i.e. t indicates
an anomaly.
"""

import html
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .classify import decision_scores
from .embedder import EmbeddingMatrix, embed_token_lines, fingerprint
from .encoder import EncoderParams
from .errors import (
    DegenerateScale,
    EmptyDocument,
    FingerprintMismatch,
    IoError,
    MismatchedReport,
    ModelMismatch,
    NTooLarge,
    UnknownDocId,
)
from .schemas import (
    AggregateEntry,
    AggregateReport,
    AttributionEntry,
    AttributionReport,
    ForestModel,
    HttpRequestDoc,
    LinearModel,
    Neighbor,
    NeighborList,
)
from .tokenizer import BbpeVocab, encode

log = logging.getLogger("reqvec.explain")

HIGHLIGHT_RGB = (214, 39, 40)


def _ordered_types(token_lines: Sequence[Sequence[int]]) -> List[int]:
    return list(dict.fromkeys(t for line in token_lines for t in line))


def _without(token_lines: Sequence[Sequence[int]], token_id: int) -> List[List[int]]:
    variant = [[t for t in line if t != token_id] for line in token_lines]
    return [line for line in variant if line]


def token_ablation_scores(
    doc: HttpRequestDoc,
    vocab: BbpeVocab,
    params: EncoderParams,
    model: LinearModel,
    pooling: str = "mean_tokens",
    *,
    strict: bool = False,
    workers: int = 1,
) -> AttributionReport:
    if isinstance(model, ForestModel) or model.kind not in ("logreg", "linear_svm"):
        raise ModelMismatch("token attribution needs a linear model (logreg or linear_svm)")
    if model.fingerprint and model.fingerprint != fingerprint(vocab, params):
        raise FingerprintMismatch("classifier was trained on embeddings of another model")

    token_lines = [encode(vocab, line) for line in doc.lines if line]
    if not token_lines:
        raise EmptyDocument(f"document {doc.id!r} has no non-empty line", doc_id=doc.id)
    types = _ordered_types(token_lines)
    counts = Counter(t for line in token_lines for t in line)

    def _embed(lines):
        return embed_token_lines(params, lines, pooling, strict)

    variants = [_without(token_lines, t) for t in types]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(_embed, variants))
    else:
        vectors = [_embed(v) for v in variants]

    norm = float(np.linalg.norm(model.weights)) or 1.0
    base = float(decision_scores(model, _embed(token_lines))[0]) / norm
    distances = decision_scores(model, np.vstack(vectors)) / norm

    lo, hi = float(distances.min()), float(distances.max())
    degenerate = hi == lo
    if degenerate:
        if strict:
            raise DegenerateScale(f"{doc.id}: every ablation yields the same distance")
        log.warning("Degenerate attribution scale for %s; all scores set to 0", doc.id)
        scaled = np.zeros_like(distances)
    else:
        scaled = (distances - lo) / (hi - lo)
    scores = scaled.mean() - scaled

    entries = [
        AttributionEntry(
            token=vocab.token_string(t),
            token_id=t,
            occurrences=counts[t],
            distance=float(d),
            scaled=float(s),
            score=float(sc),
        )
        for t, d, s, sc in zip(types, distances, scaled, scores)
    ]
    entries.sort(key=lambda e: (-e.score, e.token, e.token_id))
    return AttributionReport(
        doc_id=doc.id,
        model_kind=model.kind,
        base_distance=base,
        entries=entries,
        degenerate=degenerate,
    )


def aggregate_scores(
    reports: Sequence[AttributionReport], top_k: Optional[int] = None
) -> AggregateReport:
    """Equal-weight sum of per-token scores, highest first, ties by token."""
    if not reports:
        raise ValueError("at least one report is required")
    # Keyed by id: distinct byte tokens may share a display string.
    totals: Dict[int, float] = defaultdict(float)
    names: Dict[int, str] = {}
    for report in reports:
        for entry in report.entries:
            totals[entry.token_id] += entry.score
            names.setdefault(entry.token_id, entry.token)
    ranked = sorted(totals.items(), key=lambda item: (-item[1], names[item[0]], item[0]))
    if top_k is not None:
        ranked = ranked[:top_k]
    return AggregateReport(
        doc_ids=[r.doc_id for r in reports],
        top_k=top_k,
        tokens=[AggregateEntry(token=names[t], token_id=t, score=s) for t, s in ranked],
    )


# ---------------------------------------------------------------------------
# Neighbours and aggregation sources
# ---------------------------------------------------------------------------


def nearest_neighbors(
    matrix: EmbeddingMatrix, query_id: str, n: int, *, include_self: bool = False
) -> NeighborList:
    """
    The n nearest other documents by exact Euclidean distance, ascending,
    ties broken by doc id. With include_self the query is prepended at
    distance 0.
    """
    index = matrix.index()
    if query_id not in index:
        raise UnknownDocId(f"unknown document id {query_id!r}")
    if n < 0 or n > len(matrix) - 1:
        raise NTooLarge(f"n={n} but only {len(matrix) - 1} other documents exist")

    X = matrix.values.astype(np.float64)
    q = index[query_id]
    distances = cdist(X[q : q + 1], X, metric="euclidean")[0]
    others = np.delete(np.arange(len(matrix)), q)
    ids = np.asarray(matrix.ids, dtype=object)
    order = others[np.lexsort((ids[others].astype(str), distances[others]))][:n]

    neighbors = [
        Neighbor(doc_id=matrix.ids[i], distance=float(distances[i]), label=matrix.labels[i])
        for i in order
    ]
    if include_self:
        neighbors.insert(0, Neighbor(doc_id=query_id, distance=0.0, label=matrix.labels[q]))
    return NeighborList(query_id=query_id, include_self=include_self, neighbors=neighbors)


def neighborhood_ids(matrix: EmbeddingMatrix, doc_id: str, n: int) -> List[str]:
    """The reference document followed by its n nearest neighbours."""
    return [nb.doc_id for nb in nearest_neighbors(matrix, doc_id, n, include_self=True).neighbors]


def sample_anomaly_ids(
    doc_ids: Sequence[str], labels: Sequence[Optional[str]], n: int, seed: int = 0
) -> List[str]:
    anomalies = [i for i, label in zip(doc_ids, labels) if label == "anomaly"]
    if n > len(anomalies):
        raise NTooLarge(f"asked for {n} anomaly documents, only {len(anomalies)} exist")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(anomalies), size=n, replace=False)
    return [anomalies[i] for i in sorted(picked)]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _visible(text: str) -> str:
    return "".join(
        ch if ch == "\t" or (ord(ch) >= 0x20 and ord(ch) != 0x7F) else f"\\x{ord(ch):02x}"
        for ch in text
    )


def _intensities(report: AttributionReport) -> Dict[int, float]:
    top = max((e.score for e in report.entries), default=0.0)
    if top <= 0.0:
        return {}
    return {e.token_id: e.score / top for e in report.entries if e.score > 0.0}


def _ansi(text: str, intensity: float) -> str:
    r, g, b = HIGHLIGHT_RGB
    fade = 1.0 - intensity
    bg = (round(r + (255 - r) * fade), round(g + (255 - g) * fade), round(b + (255 - b) * fade))
    return f"\x1b[48;2;{bg[0]};{bg[1]};{bg[2]}m{text}\x1b[0m"


def _html(text: str, intensity: float, score: float) -> str:
    r, g, b = HIGHLIGHT_RGB
    return (
        f'<span style="background-color: rgba({r}, {g}, {b}, {intensity:.3f})" '
        f'title="{score:.4f}">{html.escape(text)}</span>'
    )


def render_highlight(
    doc: HttpRequestDoc, report: AttributionReport, vocab: BbpeVocab, format: str = "ansi"
) -> str:
    """
    Colour tokens with a positive score, intensity = score / max score.
    Tokens with a non-positive score are left unstyled.
    """
    if format not in ("ansi", "html"):
        raise ValueError(f"unknown format {format!r}")
    if report.doc_id != doc.id:
        raise MismatchedReport(f"report is for {report.doc_id!r}, not {doc.id!r}")
    known = {e.token_id: e for e in report.entries}
    token_lines = [encode(vocab, line) for line in doc.lines]
    missing = {t for line in token_lines for t in line} - set(known)
    if missing:
        raise MismatchedReport(f"report for {doc.id!r} lacks {len(missing)} of its tokens")

    strength = _intensities(report)
    rendered = []
    for line in token_lines:
        parts = []
        for t in line:
            text = _visible(vocab.token_string(t))
            if t in strength:
                parts.append(
                    _ansi(text, strength[t])
                    if format == "ansi"
                    else _html(text, strength[t], known[t].score)
                )
            else:
                parts.append(text if format == "ansi" else html.escape(text))
        rendered.append("".join(parts))

    if format == "ansi":
        return "\n".join(rendered)
    body = "\n".join(rendered)
    return f'<pre class="reqvec-highlight" data-doc-id="{html.escape(doc.id)}">{body}</pre>'


def html_page(fragment: str, title: str) -> str:
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\"/>\n"
        f"<title>{html.escape(title)}</title>\n</head>\n<body>\n{fragment}\n</body>\n</html>\n"
    )


def write_text(path: Union[str, Path], text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
