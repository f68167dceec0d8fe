"""
Byte-level BPE tokenizer.

Ids 0..255 are the raw bytes, 256..259 the special tokens (BOS, EOS, PAD,
MASK), and every learned merge gets the next id in creation order, so a
merge's rank equals ``id - FIRST_MERGE_ID``. There is no pre-tokenization:
merges may cross whitespace and punctuation.

Vocab file: one JSON manifest line followed by one merge per line,
``left<TAB>right``, each side the escaped byte expansion of a token.
"""

import hashlib
import heapq
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import EmptyCorpus, FormatError, IoError, UnknownId
from .request_parser import decode_bytes, encode_text
from .schemas import Corpus

log = logging.getLogger("reqvec.tokenizer")

VOCAB_FORMAT = "reqvec-bbpe/1"
SPECIAL_TOKENS = ("<s>", "</s>", "<pad>", "<mask>")
BOS_ID, EOS_ID, PAD_ID, MASK_ID = 256, 257, 258, 259
FIRST_MERGE_ID = 256 + len(SPECIAL_TOKENS)

Pair = Tuple[int, int]

_ENCODE_CACHE_LIMIT = 200_000


def escape_token(raw: bytes) -> str:
    return raw.decode("latin-1").encode("unicode_escape").decode("ascii")


def unescape_token(text: str) -> bytes:
    return text.encode("ascii").decode("unicode_escape").encode("latin-1")


@dataclass(frozen=True)
class BbpeVocab:
    """Immutable merge table with derived lookup tables."""

    merges: Tuple[Pair, ...]
    vocab_size: int
    seed: int = 0
    train_only: bool = False
    id_to_bytes: Tuple[bytes, ...] = field(init=False, repr=False, compare=False)
    bytes_to_id: Dict[bytes, int] = field(init=False, repr=False, compare=False)
    ranks: Dict[Pair, int] = field(init=False, repr=False, compare=False)
    _cache: Dict[bytes, Tuple[int, ...]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        table: List[bytes] = [bytes([i]) for i in range(256)]
        table.extend(b"" for _ in SPECIAL_TOKENS)
        for left, right in self.merges:
            table.append(table[left] + table[right])
        object.__setattr__(self, "id_to_bytes", tuple(table))
        lookup = {raw: i for i, raw in enumerate(table) if not self.is_special(i)}
        object.__setattr__(self, "bytes_to_id", lookup)
        object.__setattr__(
            self, "ranks", {pair: rank for rank, pair in enumerate(self.merges)}
        )

    @property
    def size(self) -> int:
        return len(self.id_to_bytes)

    @property
    def specials(self) -> Dict[str, int]:
        return {name: 256 + i for i, name in enumerate(SPECIAL_TOKENS)}

    bos_id = BOS_ID
    eos_id = EOS_ID
    pad_id = PAD_ID
    mask_id = MASK_ID

    @staticmethod
    def is_special(token_id: int) -> bool:
        return BOS_ID <= token_id < FIRST_MERGE_ID

    def token_bytes(self, token_id: int) -> bytes:
        if not 0 <= token_id < self.size:
            raise UnknownId(f"token id {token_id} outside vocabulary of {self.size}")
        return self.id_to_bytes[token_id]

    def token_string(self, token_id: int) -> str:
        if self.is_special(token_id):
            return SPECIAL_TOKENS[token_id - BOS_ID]
        return self.token_bytes(token_id).decode("utf-8", errors="backslashreplace")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _merge_word(word: List[int], pair: Pair, new_id: int) -> List[int]:
    out: List[int] = []
    i = 0
    n = len(word)
    while i < n:
        if i < n - 1 and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


def _training_units(corpora: Sequence[Corpus], train_only: bool) -> Dict[bytes, int]:
    units: Dict[bytes, int] = defaultdict(int)
    for corpus in corpora:
        if train_only and corpus.split != "train":
            continue
        for doc in corpus.docs:
            for line in doc.lines:
                if line:
                    units[encode_text(line)] += 1
    return units


def train_bbpe(
    corpora: Union[Corpus, Sequence[Corpus]],
    vocab_size: int = 5000,
    seed: int = 0,
    *,
    train_only: bool = False,
) -> BbpeVocab:
    """
    Learn merges by greedy highest-frequency pair merging.

    Stops at vocab_size or when no pair occurs at least twice. Ties go to the
    lexicographically smallest byte expansion (left part breaking remaining
    ties). Pairs whose expansion is already a token are skipped.
    """
    if isinstance(corpora, Corpus):
        corpora = [corpora]
    if vocab_size <= FIRST_MERGE_ID:
        raise ValueError(f"vocab_size must exceed {FIRST_MERGE_ID}")

    units = _training_units(corpora, train_only)
    if not units:
        raise EmptyCorpus("no text to train the tokenizer on")

    words: List[List[int]] = [list(raw) for raw in units]
    freqs: List[int] = list(units.values())
    table: List[bytes] = [bytes([i]) for i in range(256)] + [b"" for _ in SPECIAL_TOKENS]
    known = set(table[:256])

    pair_counts: Dict[Pair, int] = defaultdict(int)
    where: Dict[Pair, set] = defaultdict(set)
    for wi, word in enumerate(words):
        for pair in zip(word, word[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    def entry(pair: Pair, count: int):
        left, right = table[pair[0]], table[pair[1]]
        return (-count, left + right, left, pair)

    heap = [entry(p, c) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    max_merges = vocab_size - FIRST_MERGE_ID
    merges: List[Pair] = []
    while heap and len(merges) < max_merges:
        neg_count, expansion, _, pair = heapq.heappop(heap)
        count = -neg_count
        if pair_counts.get(pair, 0) != count:
            continue
        if count < 2:
            break
        if expansion in known:
            continue

        new_id = FIRST_MERGE_ID + len(merges)
        merges.append(pair)
        table.append(expansion)
        known.add(expansion)

        changed = set()
        for wi in where.pop(pair, ()):
            word = words[wi]
            freq = freqs[wi]
            merged = _merge_word(word, pair, new_id)
            if len(merged) == len(word):
                continue
            for p in zip(word, word[1:]):
                pair_counts[p] -= freq
                changed.add(p)
            for p in zip(merged, merged[1:]):
                pair_counts[p] += freq
                where[p].add(wi)
                changed.add(p)
            words[wi] = merged

        for p in changed:
            c = pair_counts.get(p, 0)
            if c <= 0:
                pair_counts.pop(p, None)
            elif p != pair or c != count:
                heapq.heappush(heap, entry(p, c))

        if len(merges) % 500 == 0:
            log.debug("Learned %d merges (last count %d)", len(merges), count)

    vocab = BbpeVocab(merges=tuple(merges), vocab_size=vocab_size, seed=seed, train_only=train_only)
    log.info(
        "Trained BBPE: %d merges, vocab size %d (target %d) from %d distinct lines",
        len(merges),
        vocab.size,
        vocab_size,
        len(words),
    )
    return vocab


# ---------------------------------------------------------------------------
# Encoding / decoding
# ---------------------------------------------------------------------------


def encode_bytes(vocab: BbpeVocab, raw: bytes, add_bos_eos: bool = False) -> List[int]:
    """Apply merges lowest rank first until none applies."""
    cached = vocab._cache.get(raw)
    if cached is None:
        ids = list(raw)
        ranks = vocab.ranks
        while len(ids) >= 2:
            best: Optional[Pair] = None
            best_rank = len(ranks)
            for pair in zip(ids, ids[1:]):
                rank = ranks.get(pair)
                if rank is not None and rank < best_rank:
                    best, best_rank = pair, rank
            if best is None:
                break
            ids = _merge_word(ids, best, FIRST_MERGE_ID + best_rank)
        cached = tuple(ids)
        if len(vocab._cache) < _ENCODE_CACHE_LIMIT:
            vocab._cache[raw] = cached
    if add_bos_eos:
        return [BOS_ID, *cached, EOS_ID]
    return list(cached)


def encode(vocab: BbpeVocab, text: str, add_bos_eos: bool = False) -> List[int]:
    return encode_bytes(vocab, encode_text(text), add_bos_eos)


def decode_to_bytes(vocab: BbpeVocab, ids: Iterable[int]) -> bytes:
    parts = []
    for token_id in ids:
        raw = vocab.token_bytes(token_id)
        if not vocab.is_special(token_id):
            parts.append(raw)
    return b"".join(parts)


def decode(vocab: BbpeVocab, ids: Iterable[int]) -> str:
    """Inverse of encode; special tokens are dropped."""
    return decode_bytes(decode_to_bytes(vocab, ids))


def token_strings(vocab: BbpeVocab, ids: Iterable[int]) -> List[str]:
    return [vocab.token_string(i) for i in ids]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def vocab_to_text(vocab: BbpeVocab) -> str:
    manifest = {
        "format": VOCAB_FORMAT,
        "vocab_size": vocab.vocab_size,
        "num_merges": len(vocab.merges),
        "specials": vocab.specials,
        "seed": vocab.seed,
        "train_only": vocab.train_only,
    }
    lines = [json.dumps(manifest, sort_keys=True)]
    for left, right in vocab.merges:
        lines.append(
            f"{escape_token(vocab.id_to_bytes[left])}\t{escape_token(vocab.id_to_bytes[right])}"
        )
    return "\n".join(lines) + "\n"


def vocab_fingerprint(vocab: BbpeVocab) -> str:
    return hashlib.sha256(vocab_to_text(vocab).encode("utf-8")).hexdigest()


def save_vocab(vocab: BbpeVocab, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(vocab_to_text(vocab), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write vocab {path}: {exc}") from exc
    log.info("Saved vocab (%d merges) to %s", len(vocab.merges), path)


def vocab_from_text(text: str) -> BbpeVocab:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty vocab file")
    try:
        manifest = json.loads(lines[0])
        expected = int(manifest["num_merges"])
        vocab_size = int(manifest["vocab_size"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad vocab manifest: {exc}") from exc
    if manifest.get("format") != VOCAB_FORMAT:
        raise FormatError(f"unsupported vocab format {manifest.get('format')!r}")
    if manifest.get("specials") != {name: 256 + i for i, name in enumerate(SPECIAL_TOKENS)}:
        raise FormatError("special token ids do not match")
    body = lines[1:]
    if len(body) != expected:
        raise FormatError(f"expected {expected} merges, found {len(body)} (truncated file?)")

    lookup: Dict[bytes, int] = {bytes([i]): i for i in range(256)}
    merges: List[Pair] = []
    for n, line in enumerate(body, start=2):
        left_text, sep, right_text = line.partition("\t")
        if not sep:
            raise FormatError(f"line {n}: missing TAB separator")
        try:
            left, right = unescape_token(left_text), unescape_token(right_text)
        except (UnicodeError, ValueError) as exc:
            raise FormatError(f"line {n}: bad token escape") from exc
        if left not in lookup or right not in lookup:
            raise FormatError(f"line {n}: merge refers to an unknown token")
        merged = left + right
        if merged in lookup:
            raise FormatError(f"line {n}: duplicate token")
        merges.append((lookup[left], lookup[right]))
        lookup[merged] = FIRST_MERGE_ID + len(merges) - 1

    return BbpeVocab(
        merges=tuple(merges),
        vocab_size=vocab_size,
        seed=int(manifest.get("seed", 0)),
        train_only=bool(manifest.get("train_only", False)),
    )


def load_vocab(path: Union[str, Path]) -> BbpeVocab:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read vocab {path}: {exc}") from exc
    return vocab_from_text(text)
