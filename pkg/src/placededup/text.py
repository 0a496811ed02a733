"""Text normalization and skip-gram word embeddings for names and addresses.

Training uses negative sampling over a unigram^0.75 noise distribution.
With subword enrichment on, a word's input vector is the mean of its own
row and the rows of its hashed character n-grams.
"""
from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._lockfree import run_steps
from .vectors import FormatError, read_vectors, write_vectors

log = logging.getLogger(__name__)


def _clean(text: str, lowercase: bool = True) -> list[str]:
    text = unicodedata.normalize("NFC", text)
    if lowercase:
        text = text.lower()
    chars = [ch if unicodedata.category(ch)[0] in "LN" else " " for ch in text]
    return "".join(chars).split()


@dataclass(frozen=True)
class NormalizerConfig:
    gazetteer: frozenset[str] = frozenset()
    lowercase: bool = True

    def __post_init__(self):
        phrases = frozenset(" ".join(_clean(p)) for p in self.gazetteer)
        object.__setattr__(self, "gazetteer", frozenset(p for p in phrases if p))

    @property
    def phrases(self) -> list[tuple[str, ...]]:
        return sorted((tuple(p.split()) for p in self.gazetteer), key=lambda t: (-len(t), t))


def normalize(text: str, cfg: NormalizerConfig | None = None) -> list[str]:
    """Tokenize ``text`` down to its shortest variant.

    Anything that is not a letter or digit becomes a space, and gazetteer
    phrases are peeled off both ends until none match. A phrase is never
    stripped if that would leave no tokens.
    """
    cfg = cfg or NormalizerConfig()
    tokens = _clean(text, cfg.lowercase)
    phrases = cfg.phrases
    if not phrases:
        return tokens
    folded = [t.lower() for t in tokens]
    changed = True
    while changed:
        changed = False
        for phrase in phrases:
            n = len(phrase)
            if len(folded) > n and tuple(folded[:n]) == phrase:
                tokens, folded = tokens[n:], folded[n:]
                changed = True
            if len(folded) > n and tuple(folded[-n:]) == phrase:
                tokens, folded = tokens[:-n], folded[:-n]
                changed = True
    return tokens


class EmptyVocabularyError(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: np.ndarray
    min_count: int = 1
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index[t] for t in tokens if t in self.index]

    def count(self, token: str) -> int:
        return int(self.counts[self.index[token]])


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    counter = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counter.update(doc)
    if n_docs == 0:
        raise EmptyVocabularyError("empty corpus")
    kept = sorted(((t, c) for t, c in counter.items() if c >= min_count), key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise EmptyVocabularyError(f"no token reaches min_count={min_count}")
    return Vocabulary(
        tokens=[t for t, _ in kept],
        counts=np.array([c for _, c in kept], dtype=np.int64),
        min_count=min_count,
    )


def _pair_positions(n: int, window: int | None) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = i != j
    if window is not None:
        keep &= np.abs(i - j) <= window
    return i[keep], j[keep]


def sample_pairs(tokens: Sequence[str], vocab: Vocabulary, window: int | None = None) -> list[tuple[int, int]]:
    """All ordered (center, context) index pairs over distinct positions.

    ``window=None`` pairs every position with every other one; short names
    then contribute no length bias. OOV tokens are dropped first.
    """
    ids = vocab.encode(tokens)
    if len(ids) < 2:
        return []
    ci, cj = _pair_positions(len(ids), window)
    return [(ids[a], ids[b]) for a, b in zip(ci.tolist(), cj.tolist())]


def fnv1a(data: bytes) -> int:
    h = 2166136261
    for byte in data:
        h ^= byte
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, nmin: int = 3, nmax: int = 5) -> list[str]:
    framed = f"<{word}>"
    return [framed[i : i + n] for n in range(nmin, nmax + 1) for i in range(len(framed) - n + 1)]


def ngram_buckets(word: str, nmin: int, nmax: int, n_buckets: int) -> list[int]:
    return [fnv1a(g.encode("utf-8")) % n_buckets for g in char_ngrams(word, nmin, nmax)]


@dataclass
class SgdConfig:
    k_neg: int = 5
    lr: float = 0.05
    epochs: int = 5
    noise_exponent: float = 0.75
    seed: int = 0
    batch_size: int = 64

    def __post_init__(self):
        if self.k_neg < 1:
            raise ValueError("k_neg must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray
    buckets: np.ndarray | None = None
    context: np.ndarray | None = None
    ngram_range: tuple[int, int] = (3, 5)
    index: dict[str, int] = field(init=False, repr=False)
    _ngram_cache: dict[str, np.ndarray] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words) or self.vectors.shape[1] < 1:
            raise ValueError(f"vectors of shape {self.vectors.shape} for {len(self.words)} words")
        if self.buckets is not None and self.buckets.shape[1] != self.dim:
            raise ValueError("bucket matrix dimension differs from word matrix")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def subword(self) -> bool:
        return self.buckets is not None

    def ngram_ids(self, token: str) -> np.ndarray:
        ids = self._ngram_cache.get(token)
        if ids is None:
            nmin, nmax = self.ngram_range
            ids = np.array(ngram_buckets(token, nmin, nmax, len(self.buckets)), dtype=np.int64)
            self._ngram_cache[token] = ids
        return ids

    def token_vector(self, token: str) -> np.ndarray | None:
        """Input vector of ``token``; None for an OOV token without subwords."""
        row = self.index.get(token)
        if not self.subword:
            return None if row is None else self.vectors[row]
        grams = self.ngram_ids(token)
        if row is None:
            if len(grams) == 0:
                return None
            return self.buckets[grams].mean(axis=0)
        return (self.vectors[row] + self.buckets[grams].sum(axis=0)) / (1 + len(grams))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def ns_batch(u: np.ndarray, v_pos: np.ndarray, v_neg: np.ndarray):
    """Negative-sampling loss for a batch and its gradients.

    Shapes: ``u`` and ``v_pos`` (b, D), ``v_neg`` (b, k, D). Returns
    per-row losses and the gradients w.r.t. ``u``, ``v_pos`` and ``v_neg``.
    """
    s_pos = np.einsum("bd,bd->b", u, v_pos)
    s_neg = np.einsum("bd,bkd->bk", u, v_neg)
    loss = -log_sigmoid(s_pos) - log_sigmoid(-s_neg).sum(axis=1)
    g_pos = sigmoid(s_pos) - 1.0
    g_neg = sigmoid(s_neg)
    grad_u = g_pos[:, None] * v_pos + np.einsum("bk,bkd->bd", g_neg, v_neg)
    grad_pos = g_pos[:, None] * u
    grad_neg = g_neg[:, :, None] * u[:, None, :]
    return loss, grad_u, grad_pos, grad_neg


def ns_loss(u, v_pos, v_negs):
    """Single-triple form of :func:`ns_batch`."""
    loss, gu, gp, gn = ns_batch(
        np.asarray(u, dtype=np.float64)[None], np.asarray(v_pos, dtype=np.float64)[None],
        np.asarray(v_negs, dtype=np.float64)[None],
    )
    return float(loss[0]), gu[0], gp[0], gn[0]


def noise_table(counts: np.ndarray, exponent: float = 0.75) -> np.ndarray:
    weights = np.asarray(counts, dtype=np.float64) ** exponent
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def draw_noise(cdf: np.ndarray, rng: np.random.Generator, shape) -> np.ndarray:
    idx = np.searchsorted(cdf, rng.random(shape), side="right")
    return np.minimum(idx, len(cdf) - 1)


def train_skipgram(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    sgd: SgdConfig | None = None,
    subword: bool = False,
    dim: int = 50,
    window: int | None = None,
    ngram_range: tuple[int, int] = (3, 5),
    n_buckets: int = 2**18,
    workers: int = 1,
    history: list | None = None,
) -> EmbeddingTable:
    sgd = sgd or SgdConfig()
    rng = np.random.default_rng(sgd.seed)
    centers, contexts = [], []
    for doc in corpus:
        ids = vocab.encode(doc)
        if len(ids) < 2:
            continue
        ci, cj = _pair_positions(len(ids), window)
        ids = np.asarray(ids, dtype=np.int64)
        centers.append(ids[ci])
        contexts.append(ids[cj])
    centers = np.concatenate(centers) if centers else np.zeros(0, dtype=np.int64)
    contexts = np.concatenate(contexts) if contexts else np.zeros(0, dtype=np.int64)

    n_words = len(vocab)
    n_rows = n_words + (n_buckets if subword else 0)
    inputs = rng.uniform(-1.0 / dim, 1.0 / dim, size=(n_rows, dim))
    ctx = np.zeros((n_words, dim))
    cdf = noise_table(vocab.counts, sgd.noise_exponent)

    if subword:
        nmin, nmax = ngram_range
        rows = [[w] + [n_words + b for b in ngram_buckets(tok, nmin, nmax, n_buckets)] for w, tok in enumerate(vocab.tokens)]
        width = max(len(r) for r in rows)
        parts = np.zeros((n_words, width), dtype=np.int64)
        mask = np.zeros((n_words, width), dtype=bool)
        for w, r in enumerate(rows):
            parts[w, : len(r)] = r
            mask[w, : len(r)] = True
        n_parts = mask.sum(axis=1).astype(np.float64)

    def step(batch, step_rng):
        c, o, lr = batch
        negs = draw_noise(cdf, step_rng, (len(c), sgd.k_neg))
        if subword:
            p, m = parts[c], mask[c]
            u = (inputs[p] * m[..., None]).sum(axis=1) / n_parts[c][:, None]
        else:
            u = inputs[c]
        loss, gu, gp, gn = ns_batch(u, ctx[o], ctx[negs])
        np.add.at(ctx, o, -lr * gp)
        np.add.at(ctx, negs.ravel(), -lr * gn.reshape(-1, dim))
        if subword:
            share = -lr * gu / n_parts[c][:, None]
            np.add.at(inputs, p[m], np.repeat(share, m.sum(axis=1), axis=0))
        else:
            np.add.at(inputs, c, -lr * gu)
        return loss.sum()

    total = max(1, sgd.epochs * len(centers))
    seen = 0
    for epoch in range(sgd.epochs):
        order = rng.permutation(len(centers))
        batches = []
        for start in range(0, len(order), sgd.batch_size):
            sel = order[start : start + sgd.batch_size]
            lr = sgd.lr * max(1e-4, 1.0 - seen / total)
            seen += len(sel)
            batches.append((centers[sel], contexts[sel], lr))
        loss = run_steps(step, batches, rng, workers)
        mean = loss / max(1, len(centers))
        log.debug("skip-gram epoch %d: mean loss %.4f", epoch + 1, mean)
        if history is not None:
            history.append(mean)

    return EmbeddingTable(
        words=list(vocab.tokens),
        vectors=inputs[:n_words].copy(),
        buckets=inputs[n_words:].copy() if subword else None,
        context=ctx,
        ngram_range=ngram_range,
    )


class TextEmbedding(NamedTuple):
    vector: np.ndarray
    empty: bool


def embed_text(tokens: Sequence[str], table: EmbeddingTable) -> TextEmbedding:
    """Average of token vectors; the zero vector flagged ``empty`` if none exist."""
    vecs = [v for v in (table.token_vector(t) for t in tokens) if v is not None]
    if not vecs:
        return TextEmbedding(np.zeros(table.dim), True)
    return TextEmbedding(np.mean(vecs, axis=0), False)


def _buckets_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".buckets")


def save_table(table: EmbeddingTable, path) -> None:
    write_vectors(path, table.words, table.vectors)
    if table.buckets is not None:
        write_vectors(_buckets_path(path), [str(i) for i in range(len(table.buckets))], table.buckets)


def load_table(path, buckets_path=None, ngram_range: tuple[int, int] = (3, 5)) -> EmbeddingTable:
    """Load a table for inference. The bucket companion is picked up if present."""
    words, vectors = read_vectors(path)
    bpath = Path(buckets_path) if buckets_path else _buckets_path(path)
    buckets = None
    if bpath.exists():
        keys, buckets = read_vectors(bpath)
        if buckets.shape[1] != vectors.shape[1]:
            raise FormatError(f"{bpath}: dimension {buckets.shape[1]} != {vectors.shape[1]}")
        if keys != [str(i) for i in range(len(keys))]:
            raise FormatError(f"{bpath}: bucket rows must be numbered 0..B-1")
    elif buckets_path:
        raise FileNotFoundError(bpath)
    return EmbeddingTable(words=words, vectors=vectors, buckets=buckets, ngram_range=ngram_range)
