"""Lexicon-derived translation memory and its attention network.

Per sentence, lexicon candidates for each source word form a local memory of
(target word, source hidden state) entries.  Entries sharing a target word
are merged into one element whose hidden vector blends the contributing
source states, weighted by the reverse translation probabilities.  A small
tanh scoring net, trained against a frozen translation model, attends over
the merged entries, and its attention is interpolated into the decoder
posterior.

Out-of-vocabulary words are handled by borrowing: source-side OOVs are
replaced by an in-vocabulary similar word before encoding, and their true
translations re-enter the memory with output labels of their own, backed by
a similar in-vocabulary target embedding, so decoding can emit words the
softmax has never seen.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, Vocabulary, encode_sentence
from .lexicon import Lexicon, lexicon_lookup
from .model import (
    EncodedSource,
    NmtConfig,
    _attention,
    _decoder_step,
    _init_state,
    encode,
    encode_batch,
)
from .numerics import (
    ParamSet,
    Tensor,
    adam_step,
    add,
    backward,
    clip_gradients,
    constant,
    cross_entropy_rows,
    matmul,
    no_grad,
    reshape,
    rows,
    scale,
    softmax,
    sum_all,
    tanh,
    weighted_sum,
)

logger = logging.getLogger(__name__)

INIT_SCALE = 0.08


class EmptyLexiconError(ValueError):
    """Memory training needs a non-empty lexicon."""


@dataclass
class LocalMemoryEntry:
    """One lexicon candidate anchored at one source position."""

    target_token: str
    target_id: int
    source_pos: int
    h_src: np.ndarray
    p_t_given_s: float
    p_s_given_t: float


@dataclass
class MemoryEntry:
    """A merged element: one target label, one blended source vector."""

    label_id: int                           # vocab id, or extended OOV label id
    embed_id: int                           # in-vocabulary id backing the embedding
    h_blend: np.ndarray
    contributors: list[tuple[int, float]]   # (source position, raw blend weight)

    @property
    def positions(self) -> list[int]:
        return [p for p, _ in self.contributors]


@dataclass
class MergedMemory:
    entries: list[MemoryEntry]
    # extended label id -> (verbatim label string, in-vocab embedding id)
    oov_labels: dict[int, tuple[str, int]] = field(default_factory=dict)
    injection_skipped: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.entries)

    def embed_proxy(self, token_id: int) -> int:
        info = self.oov_labels.get(token_id)
        return token_id if info is None else info[1]

    def label_string(self, token_id: int, vocab: Vocabulary) -> str:
        info = self.oov_labels.get(token_id)
        return vocab.token_of(token_id) if info is None else info[0]


@dataclass
class SimilarWordMap:
    """OOV token -> ordered in-vocabulary stand-ins, per language side."""

    source: dict[str, list[str]] = field(default_factory=dict)
    target: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def load(cls, src_path: str | None = None, tgt_path: str | None = None) -> "SimilarWordMap":
        return cls(
            source=_load_side(src_path) if src_path else {},
            target=_load_side(tgt_path) if tgt_path else {},
        )


def _load_side(path: str) -> dict[str, list[str]]:
    side: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 2 or not fields[0]:
                continue
            seen: list[str] = []
            for cand in fields[1:]:
                if cand and cand not in seen:
                    seen.append(cand)
            side[fields[0]] = seen
    return side


@dataclass
class OovRecord:
    """What apply_oov_substitution did to one sentence."""

    substitutions: list[tuple[int, str, str]] = field(default_factory=list)  # (pos, original, substitute)
    unresolved: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class MemoryParams:
    """The memory attention net's parameters plus the interpolation factor."""

    pset: ParamSet
    beta: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")


def init_memory_params(cfg: NmtConfig, seed: int, beta: float = 1.0 / 3.0) -> MemoryParams:
    rng = np.random.default_rng(seed)
    e, h = cfg.embed_dim, cfg.hidden_dim
    a = h
    pset = ParamSet()
    pset.add("mem_Ws", rng.uniform(-INIT_SCALE, INIT_SCALE, size=(h, a)))
    pset.add("mem_Wu", rng.uniform(-INIT_SCALE, INIT_SCALE, size=(e + 2 * h, a)))
    pset.add("mem_Wy", rng.uniform(-INIT_SCALE, INIT_SCALE, size=(e, a)))
    pset.add("mem_v", np.zeros(a))
    return MemoryParams(pset, beta)


# --- memory construction --------------------------------------------------


def build_local_memory(
    tokens: list[str],
    enc: EncodedSource,
    lex: Lexicon,
    k: int,
    tgt_vocab: Vocabulary,
) -> list[LocalMemoryEntry]:
    """Top-k lexicon candidates per source position (real tokens only).

    Candidates outside the target vocabulary are skipped here; only OOV
    injection can give such targets a usable embedding.
    """
    entries = []
    for pos, tok in enumerate(tokens):
        for tgt_tok, p_ts in lexicon_lookup(lex, tok, k):
            if tgt_tok not in tgt_vocab:
                continue
            p_st = lex.entries[(tok, tgt_tok)][1]
            entries.append(
                LocalMemoryEntry(tgt_tok, tgt_vocab.id_of(tgt_tok), pos, enc.h[pos], p_ts, p_st)
            )
    return entries


def _blend(contributors: list[tuple[int, float]], h_rows) -> np.ndarray:
    """Convex combination of source states; raw weights are renormalized."""
    total = sum(w for _, w in contributors)
    if total > 0.0:
        weights = [w / total for _, w in contributors]
    else:
        weights = [1.0 / len(contributors)] * len(contributors)
    out = np.zeros_like(np.asarray(h_rows(contributors[0][0])))
    for (pos, _), w in zip(contributors, weights):
        out = out + w * np.asarray(h_rows(pos))
    return out


def merge_memory(entries: list[LocalMemoryEntry]) -> MergedMemory:
    """Consolidate local entries sharing a target word into single elements."""
    by_target: dict[int, list[LocalMemoryEntry]] = {}
    order: list[int] = []
    for e in entries:
        if e.target_id not in by_target:
            by_target[e.target_id] = []
            order.append(e.target_id)
        by_target[e.target_id].append(e)
    merged = []
    for tid in order:
        group = by_target[tid]
        contributors = [(e.source_pos, e.p_s_given_t) for e in group]
        h_by_pos = {e.source_pos: e.h_src for e in group}
        h_blend = _blend(contributors, lambda pos: h_by_pos[pos])
        merged.append(MemoryEntry(tid, tid, h_blend, contributors))
    return MergedMemory(merged)


# --- attention and interpolation ------------------------------------------


def _entry_matrix(mem: MergedMemory, tgt_embed: np.ndarray) -> np.ndarray:
    """Stack u_k = [target embedding; blended source state] as a [K, E+2H] matrix."""
    return np.stack(
        [np.concatenate([tgt_embed[e.embed_id], e.h_blend]) for e in mem.entries]
    )


def _memory_scores(s_prev: Tensor, y_emb: Tensor, u: Tensor, pset: ParamSet) -> Tensor:
    """Relevance of each memory element to the current decoding step."""
    pre = add(add(matmul(u, pset["mem_Wu"]), matmul(s_prev, pset["mem_Ws"])),
              matmul(y_emb, pset["mem_Wy"]))
    return matmul(tanh(pre), pset["mem_v"])


def memory_attention(
    s_prev: np.ndarray,
    y_prev: int,
    mem: MergedMemory,
    mparams: MemoryParams,
    nmt_params: ParamSet,
) -> np.ndarray:
    """Attention over the K merged entries; proper distribution for K >= 1."""
    if not mem.entries:
        raise ValueError("memory_attention over an empty memory; skip interpolation instead")
    tgt_embed = nmt_params["tgt_embed"].data
    with no_grad():
        u = constant(_entry_matrix(mem, tgt_embed))
        y_emb = constant(tgt_embed[mem.embed_proxy(y_prev)])
        e = _memory_scores(constant(s_prev), y_emb, u, mparams.pset)
        alpha = softmax(e)
    return alpha.data


def interpolate_posterior(
    p_nmt: np.ndarray,
    alpha_m: np.ndarray,
    mem: MergedMemory,
    beta: float,
) -> np.ndarray:
    """beta * memory attention + (1 - beta) * model posterior.

    Memory mass lands on each entry's output label; OOV labels extend the
    distribution past the vocabulary and receive memory mass only.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if not mem.entries:
        return p_nmt
    out = np.zeros(len(p_nmt) + len(mem.oov_labels))
    out[: len(p_nmt)] = (1.0 - beta) * p_nmt
    for entry, a in zip(mem.entries, alpha_m):
        if entry.label_id >= len(out):
            raise ValueError("memory label id beyond the extended distribution")
        out[entry.label_id] += beta * a
    return out


class MemoryHook:
    """Posterior transformer plugged into beam search."""

    def __init__(self, mem: MergedMemory, mparams: MemoryParams, nmt_params: ParamSet):
        self.mem = mem
        self.mparams = mparams
        self.nmt_params = nmt_params

    def __call__(self, s_prev: np.ndarray, y_prev: int, p_nmt: np.ndarray) -> np.ndarray:
        alpha = memory_attention(s_prev, y_prev, self.mem, self.mparams, self.nmt_params)
        return interpolate_posterior(p_nmt, alpha, self.mem, self.mparams.beta)

    def embed_proxy(self, token_id: int) -> int:
        return self.mem.embed_proxy(token_id)


def make_memory_hook(
    mem: MergedMemory, mparams: MemoryParams, nmt_params: ParamSet
) -> MemoryHook | None:
    """None when the memory is empty (interpolation must then be skipped)."""
    if not mem.entries:
        return None
    return MemoryHook(mem, mparams, nmt_params)


# --- OOV treatment ---------------------------------------------------------


def apply_oov_substitution(
    tokens: list[str], vocab: Vocabulary, sim: SimilarWordMap
) -> tuple[list[str], OovRecord]:
    """Replace source OOVs with similar in-vocabulary words before encoding.

    A candidate already present in the sentence is skipped to avoid
    confusing the encoder; OOVs with no usable candidate stay (and encode to
    UNK), recorded as unresolved.
    """
    record = OovRecord()
    out = list(tokens)
    present = set(tokens)
    for pos, tok in enumerate(tokens):
        if tok in vocab:
            continue
        chosen = None
        for cand in sim.source.get(tok, []):
            if cand in vocab and cand not in present:
                chosen = cand
                break
        if chosen is None:
            record.unresolved.append((pos, tok))
            continue
        out[pos] = chosen
        present.add(chosen)
        record.substitutions.append((pos, tok, chosen))
    return out, record


def inject_oov_targets(
    mem: MergedMemory,
    record: OovRecord,
    enc: EncodedSource,
    lex: Lexicon,
    tgt_vocab: Vocabulary,
    sim: SimilarWordMap,
    k: int = 3,
) -> MergedMemory:
    """Redirect substituted positions to the original words' translations.

    At each substituted position the substitute's own translations are
    withdrawn from the memory and the original OOV word's lexicon candidates
    are entered instead.  In-vocabulary candidates become plain entries; OOV
    candidates get an extended output label whose embedding is borrowed from
    a similar in-vocabulary target word.  Decoding an extended label emits
    the label string verbatim.
    """
    entries = [
        MemoryEntry(e.label_id, e.embed_id, e.h_blend.copy(), list(e.contributors))
        for e in mem.entries
    ]
    oov_labels = dict(mem.oov_labels)
    ext_by_label = {label: ext_id for ext_id, (label, _) in oov_labels.items()}
    skipped = list(mem.injection_skipped)

    def h_row(pos: int) -> np.ndarray:
        return enc.h[pos]

    for pos, orig, sub in record.substitutions:
        sub_targets = {tgt_vocab.id_of(t) for t, _ in lexicon_lookup(lex, sub, k) if t in tgt_vocab}
        survivors = []
        for e in entries:
            if e.label_id in sub_targets and pos in e.positions:
                e.contributors = [(p, w) for p, w in e.contributors if p != pos]
                if not e.contributors:
                    continue  # the substitute alone backed this entry; drop it
                e.h_blend = _blend(e.contributors, h_row)
            survivors.append(e)
        entries = survivors

        candidates = lexicon_lookup(lex, orig, k)
        if not candidates:
            skipped.append((pos, orig, ""))
            continue
        for tgt_tok, _ in candidates:
            p_st = lex.entries[(orig, tgt_tok)][1]
            if tgt_tok in tgt_vocab:
                label_id = tgt_vocab.id_of(tgt_tok)
                embed_id = label_id
            else:
                stand_ins = [c for c in sim.target.get(tgt_tok, []) if c in tgt_vocab]
                if not stand_ins:
                    skipped.append((pos, orig, tgt_tok))
                    continue
                embed_id = tgt_vocab.id_of(stand_ins[0])
                if tgt_tok in ext_by_label:
                    label_id = ext_by_label[tgt_tok]
                else:
                    label_id = len(tgt_vocab) + len(oov_labels)
                    oov_labels[label_id] = (tgt_tok, embed_id)
                    ext_by_label[tgt_tok] = label_id
            existing = next((e for e in entries if e.label_id == label_id), None)
            if existing is None:
                entries.append(MemoryEntry(label_id, embed_id, h_row(pos).copy(), [(pos, p_st)]))
            else:
                existing.contributors.append((pos, p_st))
                existing.h_blend = _blend(existing.contributors, h_row)
    if skipped:
        logger.warning("OOV injection skipped %d entries", len(skipped))
    return MergedMemory(entries, oov_labels, skipped)


def sentence_memory(
    tokens: list[str],
    enc: EncodedSource,
    lex: Lexicon,
    tgt_vocab: Vocabulary,
    k: int,
    record: OovRecord | None = None,
    sim: SimilarWordMap | None = None,
) -> MergedMemory:
    """Local memory -> merge -> (optional) OOV injection, in one call."""
    mem = merge_memory(build_local_memory(tokens, enc, lex, k, tgt_vocab))
    if record is not None and record.substitutions and sim is not None:
        mem = inject_oov_targets(mem, record, enc, lex, tgt_vocab, sim, k)
    return mem


# --- staged training --------------------------------------------------------


@dataclass
class _PairRecord:
    """Frozen-model quantities cached once per sentence pair."""

    states: list[np.ndarray]       # s_{i-1} per target step
    y_prev_ids: list[int]
    target_entry: list[int]        # index into the merged memory, per step
    u: np.ndarray                  # [K, E + 2H]


def _teacher_forced_states(
    src_ids: list[int], tgt_ids: list[int], nmt_params: ParamSet
) -> list[np.ndarray]:
    """Decoder states s_{i-1} for each target position, under the frozen model."""
    with no_grad():
        ids = np.asarray(src_ids, dtype=np.int64)[None, :]
        enc_states, b0 = encode_batch(ids, np.ones_like(ids, dtype=np.float64), nmt_params)
        uh = [matmul(h, nmt_params["att_U"]) for h in enc_states]
        mask = np.ones((1, len(src_ids)))
        s = _init_state(b0, nmt_params)
        out = []
        y_in = BOS_ID
        for i in range(len(tgt_ids)):
            out.append(s.data[0].copy())
            alpha = _attention(s, uh, mask, nmt_params)
            c = weighted_sum(alpha, enc_states)
            y_emb = rows(nmt_params["tgt_embed"], np.array([y_in]))
            s, _ = _decoder_step(y_emb, s, c, nmt_params)
            y_in = tgt_ids[i]
    return out


def train_memory_attention(
    pairs: list[tuple[list[str], list[str]]],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    nmt_params: ParamSet,
    mparams: MemoryParams,
    lex: Lexicon,
    epochs: int,
    lr: float = 0.01,
    k: int = 3,
    batch_pairs: int = 16,
    clip_norm: float = 5.0,
) -> list[float]:
    """Train the memory attention net against the frozen translation model.

    For every target position whose reference word is present in the merged
    memory, the net pays -log(attention at that entry); positions absent
    from the memory are skipped.  Only the memory parameters move; the
    translation model is read, never written.  Returns the per-epoch mean
    loss over trainable positions.
    """
    if not lex.entries:
        raise EmptyLexiconError("cannot train memory attention with an empty lexicon")
    tgt_embed = nmt_params["tgt_embed"].data

    records: list[_PairRecord] = []
    for src_tokens, tgt_tokens in pairs:
        src_ids = encode_sentence(src_tokens, src_vocab, append_eos=True)
        enc = encode(src_ids, nmt_params)
        mem = merge_memory(build_local_memory(src_tokens, enc, lex, k, tgt_vocab))
        if not mem.entries:
            continue
        entry_of_label = {e.label_id: i for i, e in enumerate(mem.entries)}
        tgt_ids = encode_sentence(tgt_tokens, tgt_vocab, append_eos=True)
        states = _teacher_forced_states(src_ids, tgt_ids, nmt_params)
        step_states, y_prevs, entry_idx = [], [], []
        for i, tid in enumerate(tgt_ids):
            if tid not in entry_of_label:
                continue
            step_states.append(states[i])
            y_prevs.append(BOS_ID if i == 0 else tgt_ids[i - 1])
            entry_idx.append(entry_of_label[tid])
        if not entry_idx:
            continue
        records.append(_PairRecord(step_states, y_prevs, entry_idx, _entry_matrix(mem, tgt_embed)))

    n_positions = sum(len(r.target_entry) for r in records)
    if n_positions == 0:
        warnings.warn("no target word ever appears in its sentence memory; nothing to train")
        return []
    logger.info("memory training: %d sentences, %d positions", len(records), n_positions)

    epoch_losses = []
    for _ in range(epochs):
        total_nll = 0.0
        for start in range(0, len(records), batch_pairs):
            chunk = records[start : start + batch_pairs]
            terms = []
            n_chunk = 0
            for rec in chunk:
                u = constant(rec.u)
                for s_vec, y_prev, k_idx in zip(rec.states, rec.y_prev_ids, rec.target_entry):
                    e = _memory_scores(
                        constant(s_vec), constant(tgt_embed[y_prev]), u, mparams.pset
                    )
                    terms.append(cross_entropy_rows(reshape(e, (1, -1)), np.array([k_idx])))
                    n_chunk += 1
            total = terms[0] if len(terms) == 1 else _sum_terms(terms)
            loss = scale(sum_all(total), 1.0 / n_chunk)
            backward(loss)
            grads = mparams.pset.grads()
            mparams.pset.zero_grads()
            clip_gradients(grads, clip_norm)
            adam_step(mparams.pset, grads, lr)
            total_nll += float(loss.data) * n_chunk
        epoch_losses.append(total_nll / n_positions)
    return epoch_losses


def _sum_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total
