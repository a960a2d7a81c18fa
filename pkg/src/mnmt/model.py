"""Attention-based GRU encoder-decoder with beam-search decoding.

The encoder is a bidirectional GRU over source embeddings; the decoder is a
unidirectional GRU whose input is the previous target embedding concatenated
with an attention context, read out through a pool-2 maxout layer.  Output
logits share weights with the target embedding matrix, so the readout width
equals the embedding width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, Batch
from .numerics import (
    ParamSet,
    Tensor,
    adam_step,
    add,
    backward,
    clip_gradients,
    concat,
    constant,
    cross_entropy_rows,
    gru_step,
    matmul,
    maxout,
    mul,
    no_grad,
    rows,
    scale,
    softmax,
    stack_cols,
    sum_all,
    tanh,
    transpose,
    weighted_sum,
)

INIT_SCALE = 0.08
GRAD_CLIP = 5.0


@dataclass
class NmtConfig:
    src_vocab_size: int = 30000
    tgt_vocab_size: int = 30000
    embed_dim: int = 500      # also the output/readout width (tied embedding)
    hidden_dim: int = 1000    # per encoder direction; decoder state width
    beam_size: int = 12
    max_decode_len: int = 0   # 0: use 2 * source length + 5
    lr: float = 0.0005
    batch_size: int = 80

    def __post_init__(self):
        for name in ("src_vocab_size", "tgt_vocab_size", "embed_dim", "hidden_dim",
                     "beam_size", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_decode_len < 0:
            raise ValueError("max_decode_len must be >= 0")

    @property
    def output_dim(self) -> int:
        return self.embed_dim


@dataclass
class EncodedSource:
    """Per-position encoder states for one sentence (row j is h_j)."""

    h: np.ndarray     # [T, 2 * hidden_dim]
    mask: np.ndarray  # [T]


@dataclass
class Hypothesis:
    """A partial translation in beam search."""

    tokens: list[int]
    log_prob: float
    state: np.ndarray
    finished: bool = False

    def normalized_score(self) -> float:
        return self.log_prob / max(1, len(self.tokens))


def init_nmt_params(cfg: NmtConfig, seed: int) -> ParamSet:
    """Uniform [-0.08, 0.08] init; the attention score vector starts at zero."""
    rng = np.random.default_rng(seed)
    e, h = cfg.embed_dim, cfg.hidden_dim
    pset = ParamSet()

    def u(name: str, *shape: int) -> None:
        pset.add(name, rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape))

    u("src_embed", cfg.src_vocab_size, e)
    for d in ("enc_f_", "enc_b_"):
        for gate in ("z", "r", "h"):
            u(f"{d}W{gate}", e, h)
            u(f"{d}U{gate}", h, h)
            u(f"{d}b{gate}", h)
    u("dec_init_W", h, h)
    u("att_W", h, h)
    u("att_U", 2 * h, h)
    pset.add("att_v", np.zeros(h))
    for gate in ("z", "r", "h"):
        u(f"dec_W{gate}", e + 2 * h, h)
        u(f"dec_U{gate}", h, h)
        u(f"dec_b{gate}", h)
    u("out_U", e, 2 * e)
    u("out_V", h, 2 * e)
    u("out_C", 2 * h, 2 * e)
    u("out_b", 2 * e)
    u("tgt_embed", cfg.tgt_vocab_size, e)
    return pset


def _mask_mix(mask_col: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    """Keep the previous state on padded positions."""
    m = mask_col[:, None]
    return add(mul(constant(m), new), mul(constant(1.0 - m), old))


def encode_batch(src: np.ndarray, src_mask: np.ndarray, params: ParamSet):
    """Bidirectional encoding of a [B, S] id matrix.

    Returns the per-position states (list of [B, 2H] tensors) and the
    backward-direction state at position 0, which seeds the decoder.
    """
    b, s_len = src.shape
    hidden = params["enc_f_Uz"].data.shape[0]
    xs = [rows(params["src_embed"], src[:, t]) for t in range(s_len)]

    fwd: list[Tensor] = []
    h = constant(np.zeros((b, hidden)))
    for t in range(s_len):
        h = _mask_mix(src_mask[:, t], gru_step(xs[t], h, params, "enc_f_"), h)
        fwd.append(h)
    bwd: list[Tensor | None] = [None] * s_len
    h = constant(np.zeros((b, hidden)))
    for t in reversed(range(s_len)):
        h = _mask_mix(src_mask[:, t], gru_step(xs[t], h, params, "enc_b_"), h)
        bwd[t] = h
    states = [concat([fwd[t], bwd[t]], axis=1) for t in range(s_len)]
    return states, bwd[0]


def encode(src_ids: Sequence[int], params: ParamSet) -> EncodedSource:
    """Encode a single sentence (ids, usually ending with EOS)."""
    if len(src_ids) == 0:
        raise ValueError("cannot encode an empty sentence")
    vocab_size = params["src_embed"].data.shape[0]
    ids = np.asarray(src_ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValueError(f"source id outside vocabulary range [0, {vocab_size})")
    mask = np.ones((1, len(ids)))
    with no_grad():
        states, _ = encode_batch(ids[None, :], mask, params)
        h = np.stack([st.data[0] for st in states])
    return EncodedSource(h=h, mask=np.ones(len(ids)))


def _attention(s_prev: Tensor, uh: Sequence[Tensor], mask: np.ndarray,
               params: ParamSet) -> Tensor:
    """Alignment weights over source positions for the current decoder state."""
    sa = matmul(s_prev, params["att_W"])
    scores = [matmul(tanh(add(sa, uh_t)), params["att_v"]) for uh_t in uh]
    return softmax(stack_cols(scores), mask)


def attention_weights(s_prev: np.ndarray, enc: EncodedSource, params: ParamSet) -> np.ndarray:
    if enc.h.shape[0] == 0:
        raise ValueError("empty encoding")
    with no_grad():
        uh = [matmul(constant(enc.h[t : t + 1]), params["att_U"]) for t in range(enc.h.shape[0])]
        alpha = _attention(constant(s_prev[None, :]), uh, enc.mask[None, :], params)
    return alpha.data[0]


def context_vector(alpha: np.ndarray, enc: EncodedSource) -> np.ndarray:
    if len(alpha) != enc.h.shape[0]:
        raise ValueError("attention weights and encoder states disagree on length")
    return alpha @ enc.h


def _decoder_step(y_emb: Tensor, s_prev: Tensor, c: Tensor, params: ParamSet):
    """One decoder update; returns (next state, maxout readout)."""
    s_new = gru_step(concat([y_emb, c], axis=1), s_prev, params, "dec_")
    pre = add(
        add(add(matmul(y_emb, params["out_U"]), matmul(s_prev, params["out_V"])),
            matmul(c, params["out_C"])),
        params["out_b"],
    )
    return s_new, maxout(pre)


def decoder_step(y_prev: int, s_prev: np.ndarray, c: np.ndarray, params: ParamSet):
    with no_grad():
        y_emb = rows(params["tgt_embed"], np.array([y_prev]))
        s_new, z = _decoder_step(y_emb, constant(s_prev[None, :]), constant(c[None, :]), params)
    return s_new.data[0], z.data[0]


def output_distribution(z: np.ndarray, params: ParamSet) -> np.ndarray:
    """p(y) = softmax(E_t z): logits come from the target embedding itself."""
    with no_grad():
        logits = matmul(constant(z[None, :]), transpose(params["tgt_embed"]))
        p = softmax(logits)
    return p.data[0]


def _init_state(enc_b0: Tensor, params: ParamSet) -> Tensor:
    return tanh(matmul(enc_b0, params["dec_init_W"]))


def train_step(batch: Batch, params: ParamSet, lr: float,
               clip_norm: float = GRAD_CLIP) -> float:
    """One teacher-forced step: returns the pre-update mean token NLL."""
    loss = teacher_forced_loss(batch, params)
    backward(loss)
    grads = params.grads()
    params.zero_grads()
    clip_gradients(grads, clip_norm)
    adam_step(params, grads, lr)
    return float(loss.data)


def teacher_forced_loss(batch: Batch, params: ParamSet) -> Tensor:
    """Mask-weighted mean -log p(reference token) over a batch."""
    b, t_len = batch.tgt.shape
    states, b0 = encode_batch(batch.src, batch.src_mask, params)
    uh = [matmul(h, params["att_U"]) for h in states]
    e_t_T = transpose(params["tgt_embed"])
    s = _init_state(b0, params)
    total = None
    y_in = np.full(b, BOS_ID, dtype=np.int64)
    for i in range(t_len):
        alpha = _attention(s, uh, batch.src_mask, params)
        c = weighted_sum(alpha, states)
        y_emb = rows(params["tgt_embed"], y_in)
        s_new, z = _decoder_step(y_emb, s, c, params)
        logits = matmul(z, e_t_T)
        ce = mul(cross_entropy_rows(logits, batch.tgt[:, i]), constant(batch.tgt_mask[:, i]))
        term = sum_all(ce)
        total = term if total is None else add(total, term)
        s = s_new
        y_in = batch.tgt[:, i]
    return scale(total, 1.0 / batch.tgt_mask.sum())


def train_model(batches: list[Batch], params: ParamSet, lr: float, steps: int) -> list[float]:
    """Cycle through the batch list for a fixed number of Adam steps."""
    return [train_step(batches[i % len(batches)], params, lr) for i in range(steps)]


PosteriorHook = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def beam_search(
    src_ids: Sequence[int],
    params: ParamSet,
    beam: int = 1,
    max_len: int | None = None,
    memory_hook: PosteriorHook | None = None,
) -> Hypothesis:
    """Length-normalized beam search; beam=1 is greedy decoding.

    ``memory_hook(s_prev, y_prev, p)`` may transform each step's posterior,
    possibly extending it beyond the vocabulary; ``memory_hook.embed_proxy``
    (when present) maps extended token ids to in-vocabulary ids whose
    embeddings feed the next decoder step.  Ties break toward lower token
    ids.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if max_len is None or max_len <= 0:
        max_len = 2 * len(src_ids) + 5
    proxy = getattr(memory_hook, "embed_proxy", None)

    with no_grad():
        enc_states, b0 = encode_batch(
            np.asarray(src_ids, dtype=np.int64)[None, :], np.ones((1, len(src_ids))), params
        )
        uh = [matmul(h, params["att_U"]) for h in enc_states]
        e_t_T = transpose(params["tgt_embed"])
        src_mask = np.ones((1, len(src_ids)))
        s0 = _init_state(b0, params)

        live = [Hypothesis([], 0.0, s0.data[0])]
        finished: list[Hypothesis] = []
        while live and len(finished) < beam:
            pool: list[Hypothesis] = []
            for hyp in live:
                y_prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
                emb_id = proxy(y_prev) if proxy is not None else y_prev
                s_prev = constant(hyp.state[None, :])
                alpha = _attention(s_prev, uh, src_mask, params)
                c = weighted_sum(alpha, enc_states)
                y_emb = rows(params["tgt_embed"], np.array([emb_id]))
                s_new, z = _decoder_step(y_emb, s_prev, c, params)
                p = softmax(matmul(z, e_t_T)).data[0]
                if memory_hook is not None:
                    p = memory_hook(hyp.state, y_prev, p)
                with np.errstate(divide="ignore"):
                    lp = np.log(p)
                order = np.lexsort((np.arange(len(p)), -lp))
                for tid in order[:beam]:
                    tid = int(tid)
                    if p[tid] <= 0.0:
                        continue
                    toks = hyp.tokens + [tid]
                    done = tid == EOS_ID or len(toks) >= max_len
                    pool.append(Hypothesis(toks, hyp.log_prob + lp[tid], s_new.data[0], done))
            pool.sort(key=lambda h: (-h.log_prob, h.tokens))
            live = []
            for cand in pool:
                if cand.finished:
                    finished.append(cand)
                elif len(live) < beam:
                    live.append(cand)
    return max(finished, key=lambda h: (h.normalized_score(), [-t for t in h.tokens]))
