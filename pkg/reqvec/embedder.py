"""
Request vectors from the trained encoder.

A token's feature vector is the concatenation of its hidden states in the
last four encoder layers (length 4*H). A line vector pools token vectors; a
request vector is the mean of its non-empty line vectors.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import config as config_module
from . import tensor_io
from .encoder import EncoderParams, forward_batch, is_special, truncate
from .errors import EmptyDocument, FingerprintMismatch, FormatError, ShapeMismatch, TooFewLayers
from .schemas import Corpus, HttpRequestDoc
from .tokenizer import BOS_ID, EOS_ID, BbpeVocab, encode, vocab_to_text

log = logging.getLogger("reqvec.embedder")

EMBEDDINGS_FORMAT = "reqvec-embeddings/1"
POOLINGS = ("mean_tokens", "first_token")
POOLING_ALIASES = {"mean": "mean_tokens", "first": "first_token"}
NUM_FEATURE_LAYERS = 4


@dataclass(frozen=True)
class EmbeddingVector:
    doc_id: str
    values: np.ndarray
    label: Optional[str] = None

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass
class EmbeddingMatrix:
    """Row i is the vector of ids[i]; values are float32, shape (n, 4*H)."""

    ids: List[str]
    labels: List[Optional[str]]
    values: np.ndarray
    fingerprint: str = ""
    pooling: str = "mean_tokens"

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise ShapeMismatch(
                f"embedding values {self.values.shape} do not match {len(self.ids)} ids"
            )
        if len(self.labels) != len(self.ids):
            raise ShapeMismatch("labels and ids differ in length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def rows(self) -> List[EmbeddingVector]:
        return [
            EmbeddingVector(doc_id=i, values=self.values[n], label=self.labels[n])
            for n, i in enumerate(self.ids)
        ]

    def index(self) -> Dict[str, int]:
        return {doc_id: n for n, doc_id in enumerate(self.ids)}

    def select(self, doc_ids: Sequence[str]) -> "EmbeddingMatrix":
        lookup = self.index()
        rows = [lookup[i] for i in doc_ids]
        return EmbeddingMatrix(
            ids=list(doc_ids),
            labels=[self.labels[r] for r in rows],
            values=self.values[rows],
            fingerprint=self.fingerprint,
            pooling=self.pooling,
        )


def resolve_pooling(pooling: str) -> str:
    resolved = POOLING_ALIASES.get(pooling, pooling)
    if resolved not in POOLINGS:
        raise ValueError(f"unknown pooling {pooling!r}")
    return resolved


def fingerprint(vocab: BbpeVocab, params: EncoderParams) -> str:
    digest = hashlib.sha256()
    digest.update(vocab_to_text(vocab).encode("utf-8"))
    digest.update(params.payload())
    return digest.hexdigest()


def feature_layers(num_layers: int, strict: bool = False) -> List[int]:
    """Hidden-state indices concatenated per token (0 is the embedding output)."""
    if num_layers >= NUM_FEATURE_LAYERS:
        return list(range(num_layers - NUM_FEATURE_LAYERS + 1, num_layers + 1))
    if strict:
        raise TooFewLayers(
            f"encoder has {num_layers} layers, {NUM_FEATURE_LAYERS} are needed for features"
        )
    return [0] * (NUM_FEATURE_LAYERS - num_layers) + list(range(1, num_layers + 1))


def _check_compatible(params: EncoderParams, vocab: BbpeVocab) -> None:
    if vocab.size > params.config.vocab_size:
        raise ShapeMismatch(
            f"vocab has {vocab.size} tokens, encoder embeds only {params.config.vocab_size}"
        )


def embed_sequences(
    params: EncoderParams,
    sequences: Sequence[Sequence[int]],
    pooling: str = "mean_tokens",
    strict: bool = False,
) -> np.ndarray:
    """Pooled vectors for BOS/EOS-framed id sequences, shape (len(sequences), 4*H)."""
    pooling = resolve_pooling(pooling)
    layers = feature_layers(params.num_layers, strict)
    H = params.hidden_size
    if not sequences:
        return np.zeros((0, NUM_FEATURE_LAYERS * H))

    hiddens, valid = forward_batch(params, sequences)
    feats = np.concatenate([hiddens[i] for i in layers], axis=-1)

    out = np.empty((len(sequences), NUM_FEATURE_LAYERS * H))
    for b, seq in enumerate(sequences):
        content = [t for t, tok in enumerate(seq) if not is_special(tok)]
        if pooling == "first_token":
            out[b] = feats[b, content[0] if content else 0]
        elif content:
            out[b] = feats[b, content].mean(axis=0)
        else:
            # Nothing but specials: pool over every position.
            out[b] = feats[b, : len(seq)].mean(axis=0)
    return out


def embed_line(
    params: EncoderParams,
    vocab: BbpeVocab,
    line: str,
    pooling: str = "mean_tokens",
    strict: bool = False,
) -> np.ndarray:
    _check_compatible(params, vocab)
    ids = truncate(encode(vocab, line, add_bos_eos=True), params.config.max_seq_len)
    return embed_sequences(params, [ids], pooling, strict)[0]


def embed_token_lines(
    params: EncoderParams,
    token_lines: Sequence[Sequence[int]],
    pooling: str = "mean_tokens",
    strict: bool = False,
) -> np.ndarray:
    """
    Request vector from already tokenized lines (content ids, no specials).
    An empty list embeds as a single BOS/EOS-only line.
    """
    S = params.config.max_seq_len
    framed = [truncate([BOS_ID, *line, EOS_ID], S) for line in token_lines]
    if not framed:
        framed = [[BOS_ID, EOS_ID]]
    return embed_sequences(params, framed, pooling, strict).mean(axis=0)


def embed_request(
    params: EncoderParams,
    vocab: BbpeVocab,
    doc: HttpRequestDoc,
    pooling: str = "mean_tokens",
    strict: bool = False,
) -> EmbeddingVector:
    """Mean of the line vectors of every non-empty line."""
    _check_compatible(params, vocab)
    lines = [line for line in doc.lines if line]
    if not lines:
        raise EmptyDocument(f"document {doc.id!r} has no non-empty line", doc_id=doc.id)
    S = params.config.max_seq_len
    sequences = [truncate(encode(vocab, line, add_bos_eos=True), S) for line in lines]
    vectors = embed_sequences(params, sequences, pooling, strict)
    return EmbeddingVector(doc_id=doc.id, values=vectors.mean(axis=0), label=doc.label)


def embed_corpus(
    params: EncoderParams,
    vocab: BbpeVocab,
    corpus: Corpus,
    pooling: str = "mean_tokens",
    *,
    strict: bool = False,
    workers: Optional[int] = None,
) -> EmbeddingMatrix:
    """Embed every document; rows follow corpus order whatever the worker count."""
    pooling = resolve_pooling(pooling)
    _check_compatible(params, vocab)
    feature_layers(params.num_layers, strict)
    workers = workers or config_module.settings.workers
    params.float64()

    def _one(doc: HttpRequestDoc) -> np.ndarray:
        try:
            return embed_request(params, vocab, doc, pooling, strict).values
        except Exception:
            log.error("Embedding failed for document %s", doc.id)
            raise

    if workers > 1 and len(corpus) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(_one, corpus.docs))
    else:
        vectors = [_one(doc) for doc in corpus.docs]

    dim = NUM_FEATURE_LAYERS * params.hidden_size
    values = np.stack(vectors) if vectors else np.zeros((0, dim))
    log.info("Embedded %d documents (dim %d, pooling %s)", len(vectors), dim, pooling)
    return EmbeddingMatrix(
        ids=corpus.ids,
        labels=list(corpus.labels),
        values=values,
        fingerprint=fingerprint(vocab, params),
        pooling=pooling,
    )


def save_embeddings(
    matrix: EmbeddingMatrix, path: Union[str, Path], config: Optional[dict] = None
) -> None:
    meta = {
        "format": EMBEDDINGS_FORMAT,
        "fingerprint": matrix.fingerprint,
        "pooling": matrix.pooling,
        "ids": matrix.ids,
        "labels": matrix.labels,
        "count": len(matrix),
        "dim": matrix.dim,
    }
    tensor_io.write_tensors(path, {"embeddings": matrix.values}, config=config, meta=meta)
    log.info("Saved %d embeddings to %s", len(matrix), path)


def load_embeddings(
    path: Union[str, Path], expected_fingerprint: Optional[str] = None
) -> EmbeddingMatrix:
    tensors, manifest, _ = tensor_io.read_tensors(path)
    meta = manifest.get("meta", {})
    if meta.get("format") != EMBEDDINGS_FORMAT or "embeddings" not in tensors:
        raise FormatError(f"{path}: not an embeddings file")
    values = tensors["embeddings"]
    ids = list(meta.get("ids", []))
    if len(ids) != values.shape[0] or values.shape[1:] != (int(meta.get("dim", -1)),):
        raise FormatError(f"{path}: manifest does not match the stored matrix")
    stored = meta.get("fingerprint", "")
    if expected_fingerprint is not None and stored != expected_fingerprint:
        raise FingerprintMismatch(
            f"{path}: embeddings were produced by model {stored[:12]}, "
            f"not {expected_fingerprint[:12]}"
        )
    return EmbeddingMatrix(
        ids=ids,
        labels=list(meta.get("labels", [None] * len(ids))),
        values=values,
        fingerprint=stored,
        pooling=meta.get("pooling", "mean_tokens"),
    )
