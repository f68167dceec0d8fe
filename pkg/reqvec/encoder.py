"""
Transformer encoder with a masked-language-model head, in numpy.

Post-LN layers (attention -> add & norm -> GELU FFN -> add & norm), learned
absolute position embeddings, MLM head tied to the token embedding table
unless ``tie_head`` is off. Linear maps are ``y = x @ W + b`` with W shaped
(in, out).

Parameters are stored as float32; every forward/backward runs in float64.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.special import erf, logsumexp

from . import tensor_io
from .errors import FormatError, NothingToMask, SequenceTooLong, ShapeMismatch
from .schemas import Corpus, EncoderConfig, LossTrace, TrainConfig
from .tokenizer import BOS_ID, EOS_ID, FIRST_MERGE_ID, MASK_ID, PAD_ID, BbpeVocab, encode

log = logging.getLogger("reqvec.encoder")

PARAMS_FORMAT = "reqvec-encoder/1"
INIT_STD = 0.02
_MASK_BIAS = -1e9
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

Batch = Sequence[Tuple[Sequence[int], Dict[int, int]]]


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: Dict[str, np.ndarray]
    _f64: Optional[Dict[str, np.ndarray]] = field(default=None, init=False, repr=False, compare=False)

    def float64(self) -> Dict[str, np.ndarray]:
        """Float64 working copy, built once per params object."""
        if self._f64 is None:
            self._f64 = {k: np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()}
        return self._f64

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    @property
    def hidden_size(self) -> int:
        return self.config.hidden_size

    def payload(self) -> bytes:
        return tensor_io.pack_tensors(self.tensors)[1]


def param_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    V, S, H, F = config.vocab_size, config.max_seq_len, config.hidden_size, config.ffn
    shapes: Dict[str, Tuple[int, ...]] = {"tok_emb": (V, H), "pos_emb": (S, H)}
    for i in range(config.num_layers):
        p = f"layers.{i}"
        for proj in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.w{proj}"] = (H, H)
            shapes[f"{p}.attn.b{proj}"] = (H,)
        shapes[f"{p}.ln1.g"] = (H,)
        shapes[f"{p}.ln1.b"] = (H,)
        shapes[f"{p}.ffn.w1"] = (H, F)
        shapes[f"{p}.ffn.b1"] = (F,)
        shapes[f"{p}.ffn.w2"] = (F, H)
        shapes[f"{p}.ffn.b2"] = (H,)
        shapes[f"{p}.ln2.g"] = (H,)
        shapes[f"{p}.ln2.b"] = (H,)
    if not config.tie_head:
        shapes["head_w"] = (H, V)
    shapes["head_b"] = (V,)
    return shapes


def _is_bias(name: str) -> bool:
    return name.endswith((".b", "head_b")) or ".attn.b" in name or ".ffn.b" in name


def init_encoder(config: EncoderConfig) -> EncoderParams:
    """N(0, 0.02) weights, unit layer-norm gains, zero shifts and biases."""
    rng = np.random.default_rng(config.seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif _is_bias(name):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)
    log.debug(
        "Initialised encoder: %d layers, H=%d, %d parameters",
        config.num_layers,
        config.hidden_size,
        sum(t.size for t in tensors.values()),
    )
    return EncoderParams(config=config, tensors=tensors)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / _SQRT2))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u / _SQRT2)) + u * np.exp(-0.5 * u * u) / _SQRT2PI


def _layer_norm(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, xhat, inv, g):
    H = dy.shape[-1]
    dg = (dy * xhat).reshape(-1, H).sum(0)
    db = dy.reshape(-1, H).sum(0)
    dxhat = dy * g
    dx = inv * (
        dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    B, T, H = x.shape
    return x.reshape(B, T, num_heads, H // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, nh, T, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, nh * d)


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def _dropout_mask(rng, shape, rate: float) -> Optional[np.ndarray]:
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _layer_forward(P, prefix, x, key_bias, config, train_mode, rng):
    nh = config.num_heads
    eps = config.layer_norm_eps
    drop = config.dropout if train_mode else 0.0

    q = _split_heads(x @ P[f"{prefix}.attn.wq"] + P[f"{prefix}.attn.bq"], nh)
    k = _split_heads(x @ P[f"{prefix}.attn.wk"] + P[f"{prefix}.attn.bk"], nh)
    v = _split_heads(x @ P[f"{prefix}.attn.wv"] + P[f"{prefix}.attn.bv"], nh)

    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(config.head_dim) + key_bias
    scores = scores - scores.max(-1, keepdims=True)
    a = np.exp(scores)
    a /= a.sum(-1, keepdims=True)

    ctx = _merge_heads(a @ v)
    attn = ctx @ P[f"{prefix}.attn.wo"] + P[f"{prefix}.attn.bo"]
    m1 = _dropout_mask(rng, attn.shape, drop)
    if m1 is not None:
        attn = attn * m1
    h1, ln1 = _layer_norm(x + attn, P[f"{prefix}.ln1.g"], P[f"{prefix}.ln1.b"], eps)

    u = h1 @ P[f"{prefix}.ffn.w1"] + P[f"{prefix}.ffn.b1"]
    f = _gelu(u)
    out = f @ P[f"{prefix}.ffn.w2"] + P[f"{prefix}.ffn.b2"]
    m2 = _dropout_mask(rng, out.shape, drop)
    if m2 is not None:
        out = out * m2
    y, ln2 = _layer_norm(h1 + out, P[f"{prefix}.ln2.g"], P[f"{prefix}.ln2.b"], eps)

    cache = (x, q, k, v, a, ctx, m1, h1, ln1, u, f, m2, ln2)
    return y, cache


def _layer_backward(P, prefix, dy, cache, config, grads):
    x, q, k, v, a, ctx, m1, h1, ln1, u, f, m2, ln2 = cache
    nh = config.num_heads

    dr2, grads[f"{prefix}.ln2.g"], grads[f"{prefix}.ln2.b"] = _layer_norm_backward(
        dy, *ln2, P[f"{prefix}.ln2.g"]
    )
    dh1 = dr2.copy()
    dout = dr2 * m2 if m2 is not None else dr2
    grads[f"{prefix}.ffn.w2"] = _flat(f).T @ _flat(dout)
    grads[f"{prefix}.ffn.b2"] = _flat(dout).sum(0)
    du = (dout @ P[f"{prefix}.ffn.w2"].T) * _gelu_grad(u)
    grads[f"{prefix}.ffn.w1"] = _flat(h1).T @ _flat(du)
    grads[f"{prefix}.ffn.b1"] = _flat(du).sum(0)
    dh1 += du @ P[f"{prefix}.ffn.w1"].T

    dr1, grads[f"{prefix}.ln1.g"], grads[f"{prefix}.ln1.b"] = _layer_norm_backward(
        dh1, *ln1, P[f"{prefix}.ln1.g"]
    )
    dx = dr1.copy()
    dattn = dr1 * m1 if m1 is not None else dr1
    grads[f"{prefix}.attn.wo"] = _flat(ctx).T @ _flat(dattn)
    grads[f"{prefix}.attn.bo"] = _flat(dattn).sum(0)
    dctx = _split_heads(dattn @ P[f"{prefix}.attn.wo"].T, nh)

    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    ds = a * (da - (da * a).sum(-1, keepdims=True)) / math.sqrt(config.head_dim)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q

    for proj, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dm = _merge_heads(dproj)
        grads[f"{prefix}.attn.w{proj}"] = _flat(x).T @ _flat(dm)
        grads[f"{prefix}.attn.b{proj}"] = _flat(dm).sum(0)
        dx += dm @ P[f"{prefix}.attn.w{proj}"].T
    return dx


def _pad(sequences: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    B = len(sequences)
    T = max((len(s) for s in sequences), default=0)
    ids = np.full((B, T), PAD_ID, dtype=np.int64)
    valid = np.zeros((B, T), dtype=bool)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = seq
        valid[i, : len(seq)] = True
    return ids, valid


def _check_ids(config: EncoderConfig, ids: np.ndarray) -> None:
    if ids.shape[-1] > config.max_seq_len:
        raise SequenceTooLong(
            f"sequence of {ids.shape[-1]} tokens exceeds max_seq_len {config.max_seq_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ShapeMismatch(f"token id outside the embedding table of {config.vocab_size}")


def _forward(P, config, ids, valid, train_mode=False, rng=None, keep_cache=False):
    T = ids.shape[1]
    x = P["tok_emb"][ids] + P["pos_emb"][:T]
    key_bias = np.where(valid, 0.0, _MASK_BIAS)[:, None, None, :]
    hiddens = [x]
    caches = []
    for i in range(config.num_layers):
        x, cache = _layer_forward(P, f"layers.{i}", x, key_bias, config, train_mode, rng)
        hiddens.append(x)
        if keep_cache:
            caches.append(cache)
    return hiddens, caches


def forward(
    params: EncoderParams,
    ids: Sequence[int],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Hidden states of one sequence: shape (num_layers + 1, len(ids), H), the
    embedding output first. Dropout is applied only in train mode.
    """
    ids_arr = np.asarray([list(ids)], dtype=np.int64).reshape(1, -1)
    _check_ids(params.config, ids_arr)
    if train_mode and rng is None:
        rng = np.random.default_rng(params.config.seed)
    hiddens, _ = _forward(
        params.float64(), params.config, ids_arr, np.ones_like(ids_arr, dtype=bool), train_mode, rng
    )
    return np.stack([h[0] for h in hiddens])


def forward_batch(
    params: EncoderParams, sequences: Sequence[Sequence[int]]
) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode forward over padded sequences: ((L+1, B, T, H), valid (B, T))."""
    ids, valid = _pad(sequences)
    _check_ids(params.config, ids)
    hiddens, _ = _forward(params.float64(), params.config, ids, valid)
    return np.stack(hiddens), valid


def attention_weights(params: EncoderParams, ids: Sequence[int]) -> List[np.ndarray]:
    """Per-layer attention probabilities, each shaped (num_heads, T, T)."""
    ids_arr = np.asarray([list(ids)], dtype=np.int64).reshape(1, -1)
    _check_ids(params.config, ids_arr)
    _, caches = _forward(
        params.float64(),
        params.config,
        ids_arr,
        np.ones_like(ids_arr, dtype=bool),
        keep_cache=True,
    )
    return [cache[4][0] for cache in caches]


# ---------------------------------------------------------------------------
# Masked language modelling
# ---------------------------------------------------------------------------


def is_special(token_id: int) -> bool:
    return BOS_ID <= token_id < FIRST_MERGE_ID


def _random_token(rng: np.random.Generator, vocab_size: int) -> int:
    k = int(rng.integers(vocab_size - (FIRST_MERGE_ID - BOS_ID)))
    return k if k < BOS_ID else k + (FIRST_MERGE_ID - BOS_ID)


def mlm_mask(
    ids: Sequence[int],
    mask_rate: float,
    seed: Union[int, np.random.Generator] = 0,
    *,
    vocab_size: int,
) -> Tuple[List[int], Dict[int, int]]:
    """
    Select each non-special position with probability mask_rate (at least one
    is always selected). Selected positions become MASK (80%), a random
    non-special token (10%) or stay unchanged (10%).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    maskable = [i for i, t in enumerate(ids) if not is_special(t)]
    if not maskable:
        raise NothingToMask("sequence has no maskable token")

    selected = rng.random(len(maskable)) < mask_rate
    if not selected.any():
        selected[int(rng.integers(len(maskable)))] = True

    corrupted = list(ids)
    targets: Dict[int, int] = {}
    for pos, chosen in zip(maskable, selected):
        if not chosen:
            continue
        targets[pos] = corrupted[pos]
        roll = rng.random()
        if roll < 0.8:
            corrupted[pos] = MASK_ID
        elif roll < 0.9:
            corrupted[pos] = _random_token(rng, vocab_size)
    return corrupted, targets


def _mlm_forward_backward(P, config, batch: Batch, train_mode=False, rng=None, need_grads=True):
    sequences = [list(corrupted) for corrupted, _ in batch]
    ids, valid = _pad(sequences)
    _check_ids(config, ids)

    rows, cols, targets = [], [], []
    for b, (_, target_map) in enumerate(batch):
        for pos in sorted(target_map):
            rows.append(b)
            cols.append(pos)
            targets.append(target_map[pos])
    if not targets:
        raise NothingToMask("batch has no masked positions")
    rows_a, cols_a, tgt = np.asarray(rows), np.asarray(cols), np.asarray(targets)
    M = len(targets)

    hiddens, caches = _forward(P, config, ids, valid, train_mode, rng, keep_cache=need_grads)
    h = hiddens[-1][rows_a, cols_a]
    head = P["tok_emb"] if config.tie_head else P["head_w"].T
    logits = h @ head.T + P["head_b"]
    lse = logsumexp(logits, axis=1)
    nll = lse - logits[np.arange(M), tgt]
    loss = float(nll.mean())
    if not need_grads:
        return loss, M, None

    grads: Dict[str, np.ndarray] = {"tok_emb": np.zeros_like(P["tok_emb"])}
    dlogits = np.exp(logits - lse[:, None])
    dlogits[np.arange(M), tgt] -= 1.0
    dlogits /= M
    grads["head_b"] = dlogits.sum(0)
    if config.tie_head:
        grads["tok_emb"] += dlogits.T @ h
        dh = dlogits @ P["tok_emb"]
    else:
        grads["head_w"] = h.T @ dlogits
        dh = dlogits @ P["head_w"].T

    dx = np.zeros_like(hiddens[-1])
    np.add.at(dx, (rows_a, cols_a), dh)
    for i in reversed(range(config.num_layers)):
        dx = _layer_backward(P, f"layers.{i}", dx, caches[i], config, grads)

    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"] = np.zeros_like(P["pos_emb"])
    grads["pos_emb"][: ids.shape[1]] = dx.sum(0)
    return loss, M, grads


def mlm_loss_and_grads(
    params: Union[EncoderParams, Dict[str, np.ndarray]],
    batch: Batch,
    *,
    config: Optional[EncoderConfig] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean cross-entropy over the masked positions of the batch, with gradients."""
    if isinstance(params, EncoderParams):
        config = params.config
        P = params.float64()
    else:
        if config is None:
            raise ValueError("config is required with a raw tensor dict")
        P = params
    loss, _, grads = _mlm_forward_backward(P, config, batch)
    return loss, grads


def truncate(ids: Sequence[int], max_seq_len: int) -> List[int]:
    """Cut to max_seq_len, keeping a trailing EOS in place."""
    ids = list(ids)
    if len(ids) <= max_seq_len:
        return ids
    if ids[-1] == EOS_ID:
        return ids[: max_seq_len - 1] + [EOS_ID]
    return ids[:max_seq_len]


def corpus_sequences(vocab: BbpeVocab, corpus: Corpus, max_seq_len: int) -> List[List[int]]:
    """One BOS/EOS-framed sequence per non-empty line, corpus order."""
    return [
        truncate(encode(vocab, line, add_bos_eos=True), max_seq_len)
        for doc in corpus.docs
        for line in doc.lines
        if line
    ]


def _fixed_masks(sequences, config: EncoderConfig, seed: int) -> List[Tuple[List[int], Dict[int, int]]]:
    rng = np.random.default_rng(seed)
    return [mlm_mask(s, config.mask_rate, rng, vocab_size=config.vocab_size) for s in sequences]


def _perplexity_of(P, config, masked, batch_size: int = 64) -> float:
    total = 0.0
    count = 0
    for start in range(0, len(masked), batch_size):
        chunk = masked[start : start + batch_size]
        loss, m, _ = _mlm_forward_backward(P, config, chunk, need_grads=False)
        total += loss * m
        count += m
    return float(math.exp(total / count))


def mlm_perplexity(
    params: EncoderParams, sequences: Sequence[Sequence[int]], seed: int = 0
) -> float:
    """exp(mean masked cross-entropy) under a fixed seeded masking, dropout off."""
    usable = [truncate(s, params.config.max_seq_len) for s in sequences]
    usable = [s for s in usable if any(not is_special(t) for t in s)]
    if not usable:
        raise NothingToMask("no sequence has a maskable token")
    return _perplexity_of(params.float64(), params.config, _fixed_masks(usable, params.config, seed))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _decays(name: str) -> bool:
    return not (_is_bias(name) or name.endswith(".g"))


def _learning_rate(step: int, total: int, tc: TrainConfig) -> float:
    warmup = int(math.ceil(tc.warmup_fraction * total))
    if step < warmup:
        return tc.learning_rate * (step + 1) / warmup
    return tc.learning_rate * (total - step) / max(1, total - warmup)


def train_mlm(
    params: EncoderParams,
    sequences: Sequence[Sequence[int]],
    train_config: TrainConfig,
    *,
    eval_limit: int = 512,
) -> Tuple[EncoderParams, LossTrace]:
    """
    Masked-LM training with AdamW (decoupled weight decay), linear warmup and
    linear decay. Every sequence is a single segment; with dynamic masking a
    fresh mask is drawn per epoch.
    """
    config = params.config
    if train_config.epochs == 0:
        return params, LossTrace()

    data = [truncate(s, config.max_seq_len) for s in sequences]
    data = [s for s in data if any(not is_special(t) for t in s)]
    if not data:
        raise NothingToMask("no training sequence has a maskable token")

    rng = np.random.default_rng(train_config.seed)
    P = {k: np.array(v, dtype=np.float64) for k, v in params.tensors.items()}
    m_state = {k: np.zeros_like(v) for k, v in P.items()}
    v_state = {k: np.zeros_like(v) for k, v in P.items()}

    eval_order = np.random.default_rng(train_config.seed + 1).permutation(len(data))[:eval_limit]
    eval_masked = _fixed_masks([data[i] for i in sorted(eval_order)], config, train_config.seed)

    trace = LossTrace(initial_perplexity=_perplexity_of(P, config, eval_masked))
    log.info("MLM training on %d sequences, initial perplexity %.3f", len(data), trace.initial_perplexity)

    static_masks = None
    if not train_config.dynamic_masking:
        static_masks = _fixed_masks(data, config, train_config.seed)

    bs = train_config.batch_size
    steps_per_epoch = int(math.ceil(len(data) / bs))
    total = train_config.epochs * steps_per_epoch
    b1, b2, eps = train_config.beta1, train_config.beta2, train_config.adam_eps
    train_mode = config.dropout > 0.0
    step = 0

    for epoch in range(train_config.epochs):
        if static_masks is None:
            masked = [mlm_mask(s, config.mask_rate, rng, vocab_size=config.vocab_size) for s in data]
        else:
            masked = static_masks
        order = rng.permutation(len(data))
        for start in range(0, len(data), bs):
            batch = [masked[i] for i in order[start : start + bs]]
            loss, _, grads = _mlm_forward_backward(
                P, config, batch, train_mode=train_mode, rng=rng if train_mode else None
            )
            lr = _learning_rate(step, total, train_config)
            step += 1
            for name, g in grads.items():
                m_state[name] = b1 * m_state[name] + (1.0 - b1) * g
                v_state[name] = b2 * v_state[name] + (1.0 - b2) * g * g
                mhat = m_state[name] / (1.0 - b1**step)
                vhat = v_state[name] / (1.0 - b2**step)
                if _decays(name):
                    P[name] -= lr * train_config.weight_decay * P[name]
                P[name] -= lr * mhat / (np.sqrt(vhat) + eps)
            trace.step_losses.append(loss)
            log.debug("step %d/%d loss %.4f lr %.2e", step, total, loss, lr)

        ppl = _perplexity_of(P, config, eval_masked)
        trace.epoch_perplexity.append(ppl)
        log.info("Epoch %d/%d: masked perplexity %.3f", epoch + 1, train_config.epochs, ppl)

    trained = EncoderParams(
        config=config, tensors={k: v.astype(np.float32) for k, v in P.items()}
    )
    return trained, trace


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def gradient_check_report(
    config: EncoderConfig,
    seed: int = 0,
    num_coords: int = 6,
    *,
    step: float = 1e-5,
    floor: float = 1e-4,
) -> Dict[str, float]:
    """
    Max relative error per tensor between analytic and central-difference
    gradients, dropout forced off. Relative error is
    |a - n| / max(|a| + |n|, floor).
    """
    config = config.model_copy(update={"dropout": 0.0, "seed": seed})
    rng = np.random.default_rng(seed)
    P = {
        k: v.astype(np.float64) + rng.normal(0.0, 0.1, size=v.shape)
        for k, v in init_encoder(config).tensors.items()
    }

    batch = []
    for _ in range(3):
        length = int(rng.integers(2, max(3, min(8, config.max_seq_len - 1))))
        body = [_random_token(rng, config.vocab_size) for _ in range(length)]
        seq = truncate([BOS_ID, *body, EOS_ID], config.max_seq_len)
        batch.append(mlm_mask(seq, 0.3, rng, vocab_size=config.vocab_size))

    _, _, grads = _mlm_forward_backward(P, config, batch)

    def loss_at() -> float:
        return _mlm_forward_backward(P, config, batch, need_grads=False)[0]

    report: Dict[str, float] = {}
    for name, tensor in P.items():
        flat = tensor.reshape(-1)
        g = grads[name].reshape(-1)
        k = min(num_coords, flat.size)
        largest = np.argsort(-np.abs(g), kind="stable")[: (k + 1) // 2]
        rest = np.setdiff1d(np.arange(flat.size), largest)
        random = rng.choice(rest, size=min(k - largest.size, rest.size), replace=False)
        worst = 0.0
        for idx in np.concatenate([largest, random]).astype(int):
            old = flat[idx]
            flat[idx] = old + step
            plus = loss_at()
            flat[idx] = old - step
            minus = loss_at()
            flat[idx] = old
            numeric = (plus - minus) / (2.0 * step)
            err = abs(g[idx] - numeric) / max(abs(g[idx]) + abs(numeric), floor)
            worst = max(worst, err)
        report[name] = worst
    return report


def gradient_check(config: EncoderConfig, seed: int = 0, num_coords: int = 6) -> float:
    report = gradient_check_report(config, seed, num_coords)
    worst = max(report, key=report.get)
    log.info("Gradient check: max relative error %.2e (%s)", report[worst], worst)
    return report[worst]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_params(params: EncoderParams, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    tensor_io.write_tensors(
        path,
        params.tensors,
        config=params.config.model_dump(),
        meta={"format": PARAMS_FORMAT, **(meta or {})},
    )
    log.info("Saved encoder weights to %s", path)


def load_params(
    path: Union[str, Path], expected_config: Optional[EncoderConfig] = None
) -> EncoderParams:
    tensors, manifest, _ = tensor_io.read_tensors(path)
    if manifest.get("meta", {}).get("format") != PARAMS_FORMAT:
        raise FormatError(f"{path}: not an encoder weight file")
    try:
        config = EncoderConfig.model_validate(manifest["config"])
    except (ValidationError, KeyError) as exc:
        raise FormatError(f"{path}: bad encoder config: {exc}") from exc
    if expected_config is not None and expected_config != config:
        raise ShapeMismatch(f"{path}: stored config differs from the expected one")

    shapes = param_shapes(config)
    if set(shapes) != set(tensors):
        missing = sorted(set(shapes) - set(tensors))
        extra = sorted(set(tensors) - set(shapes))
        raise ShapeMismatch(f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, shape in shapes.items():
        if tensors[name].shape != shape:
            raise ShapeMismatch(
                f"{path}: {name} has shape {tensors[name].shape}, config implies {shape}"
            )
    return EncoderParams(config=config, tensors={name: tensors[name] for name in shapes})
