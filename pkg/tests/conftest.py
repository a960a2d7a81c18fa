"""Shared builders for desk-scale synthetic translation tasks."""

from dataclasses import dataclass, field

import numpy as np

from mnmt.corpus import BOS_ID, EOS_ID, Vocabulary, build_vocabulary, encode_sentence, make_batches
from mnmt.model import (
    NmtConfig,
    attention_weights,
    context_vector,
    decoder_step,
    encode,
    init_nmt_params,
    output_distribution,
    train_model,
)


def desk_config(src_vocab: int, tgt_vocab: int, embed: int = 12, hidden: int = 16,
                beam: int = 4, batch: int = 16, lr: float = 0.01) -> NmtConfig:
    return NmtConfig(
        src_vocab_size=src_vocab,
        tgt_vocab_size=tgt_vocab,
        embed_dim=embed,
        hidden_dim=hidden,
        beam_size=beam,
        batch_size=batch,
        lr=lr,
    )


@dataclass
class SynthTask:
    """A word-for-word translation task with optional rare word pairs."""

    train_pairs: list[tuple[list[str], list[str]]]
    heldout_pairs: list[tuple[list[str], list[str]]] = field(default_factory=list)
    src_vocab: Vocabulary = None
    tgt_vocab: Vocabulary = None
    word_map: dict = field(default_factory=dict)
    rare_words: list[tuple[str, str]] = field(default_factory=list)

    def encoded_train(self):
        return [
            (encode_sentence(s, self.src_vocab, True), encode_sentence(t, self.tgt_vocab, True))
            for s, t in self.train_pairs
        ]


def make_copy_task(n_pairs: int = 100, n_words: int = 12, len_range=(4, 8), seed: int = 0) -> SynthTask:
    """Sentences copied verbatim: source and target share one vocabulary."""
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(n_words)]
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(len_range[0], len_range[1] + 1))
        sent = [words[i] for i in rng.integers(0, n_words, size=n)]
        pairs.append((sent, list(sent)))
    vocab = build_vocabulary([p[0] for p in pairs], max_size=n_words + 4)
    return SynthTask(pairs, [], vocab, vocab, {w: w for w in words})


def make_mapped_task(
    n_common: int = 16,
    n_rare: int = 0,
    n_train: int = 120,
    n_heldout: int = 0,
    len_range=(4, 7),
    seed: int = 0,
) -> SynthTask:
    """Word-for-word translation s_i -> t_i; rare pairs occur exactly once in training.

    Held-out sentences embed one rare source word each among common words, so
    a system must produce the rare target to recall it.
    """
    rng = np.random.default_rng(seed)
    commons = [(f"s{i:02d}", f"t{i:02d}") for i in range(n_common)]
    rares = [(f"rs{i:02d}", f"rt{i:02d}") for i in range(n_rare)]
    word_map = dict(commons + rares)

    def common_sentence():
        n = int(rng.integers(len_range[0], len_range[1] + 1))
        src = [commons[i][0] for i in rng.integers(0, n_common, size=n)]
        return src, [word_map[w] for w in src]

    train = [common_sentence() for _ in range(n_train)]
    for rs, _ in rares:
        src, _ = common_sentence()
        pos = int(rng.integers(0, len(src)))
        src = list(src)
        src[pos] = rs
        train.append((src, [word_map[w] for w in src]))
    order = rng.permutation(len(train))
    train = [train[i] for i in order]

    heldout = []
    for j in range(n_heldout):
        src, _ = common_sentence()
        pos = int(rng.integers(0, len(src)))
        src = list(src)
        src[pos] = rares[j % max(1, n_rare)][0] if rares else src[pos]
        heldout.append((src, [word_map[w] for w in src]))

    src_vocab = build_vocabulary([p[0] for p in train], max_size=4 + n_common + n_rare)
    tgt_vocab = build_vocabulary([p[1] for p in train], max_size=4 + n_common + n_rare)
    return SynthTask(train, heldout, src_vocab, tgt_vocab, word_map, rares)


def plant_word_pair(task: SynthTask, src_word: str, tgt_word: str, n: int, seed: int) -> SynthTask:
    """Overwrite one slot in n training sentences with a new word pair."""
    rng = np.random.default_rng(seed)
    for idx in rng.choice(len(task.train_pairs), size=n, replace=False):
        s, t = task.train_pairs[idx]
        pos = int(rng.integers(0, len(s)))
        s2, t2 = list(s), list(t)
        s2[pos] = src_word
        t2[pos] = tgt_word
        task.train_pairs[idx] = (s2, t2)
    task.word_map[src_word] = tgt_word
    task.src_vocab = build_vocabulary([p[0] for p in task.train_pairs], max_size=100)
    task.tgt_vocab = build_vocabulary([p[1] for p in task.train_pairs], max_size=100)
    return task


def quick_train(task: SynthTask, cfg: NmtConfig, seed: int, steps: int):
    """Train a fresh model on the task; returns (params, losses)."""
    batches = make_batches(task.encoded_train(), cfg.batch_size, max_len=50, seed=seed)
    params = init_nmt_params(cfg, seed)
    losses = train_model(batches, params, cfg.lr, steps)
    return params, losses


def greedy_reference(src_ids, params, max_len):
    """Independent greedy decoder composed from the public per-sentence ops."""
    enc = encode(src_ids, params)
    hidden = params["dec_init_W"].data.shape[0]
    s = np.tanh(enc.h[0, hidden:] @ params["dec_init_W"].data)
    tokens = []
    y_prev = BOS_ID
    while len(tokens) < max_len:
        alpha = attention_weights(s, enc, params)
        c = context_vector(alpha, enc)
        s_new, z = decoder_step(y_prev, s, c, params)
        p = output_distribution(z, params)
        tid = int(np.argmax(p))
        tokens.append(tid)
        if tid == EOS_ID:
            break
        s, y_prev = s_new, tid
    return tokens
