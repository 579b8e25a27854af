"""Replay-style evaluation: every test session is fed item by item, the
true next item is ranked, and Recall@k / MRR@k are aggregated. Includes the
cosine top-k path for embedding-output models, S-POP and Item-KNN baselines,
and a prediction-time benchmark.

All rankings exclude the padding index and break score ties by lower item
index, so results are deterministic.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import pad_batch
from .errors import ConfigError, DataError
from .model import EMBEDDING_HEAD, ModelConfig, ModelParams, forward_embedding_output, forward_hidden, forward_softmax

_ZERO_NORM = 1e-12


@dataclass
class EvalConfig:
    k: int = 20
    batch_size: int = 512

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be at least 1")


@dataclass
class EvalReport:
    recall_at_k: float
    mrr_at_k: float
    event_count: int
    mean_batch_seconds: float
    std_batch_seconds: float
    k: int
    zero_score_events: int = 0

    def to_text(self) -> str:
        lines = [
            f"recall_at_{self.k}={self.recall_at_k:.6f}",
            f"mrr_at_{self.k}={self.mrr_at_k:.6f}",
            f"events={self.event_count}",
            f"mean_batch_seconds={self.mean_batch_seconds:.6f}",
            f"std_batch_seconds={self.std_batch_seconds:.6f}",
            f"zero_score_events={self.zero_score_events}",
        ]
        return "\n".join(lines) + "\n"


def topk_from_scores(scores: np.ndarray, k: int) -> list[int]:
    """Top-k item indices (1-based) from a score vector over real items.

    ``scores[j]`` scores item j+1. Stable argsort on the negated scores
    implements the tie rule: equal scores rank the lower item index first.
    """
    order = np.argsort(-scores, kind="stable")
    return [int(j) + 1 for j in order[:k]]


def topk_rows_from_scores(scores: np.ndarray, k: int) -> np.ndarray:
    """Batched ``topk_from_scores``; returns (batch, k) of item indices."""
    return np.argsort(-scores, axis=1, kind="stable")[:, :k] + 1


def ranks_from_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Exact rank of each label under the deterministic tie rule.

    ``scores`` is (batch, m) over real items 1..m. Equivalent to finding the
    label's position in the full ordering of ``topk_from_scores`` at k = m.
    """
    batch, m = scores.shape
    cols = labels - 1
    label_scores = scores[np.arange(batch), cols][:, None]
    greater = (scores > label_scores).sum(axis=1)
    tied_lower = ((scores == label_scores) & (np.arange(m)[None, :] < cols[:, None])).sum(axis=1)
    return 1 + greater + tied_lower


class SoftmaxRanker:
    """Scores real items with the classification head's probabilities."""

    def __init__(self, params: ModelParams, config: ModelConfig):
        self.params = params
        self.config = config
        self.m = config.vocab_size_with_pad - 1
        self.zero_score_events = 0

    def scores(self, inputs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        h_final, _ = forward_hidden(self.params, inputs, mask)
        probs = forward_softmax(self.params, h_final)
        return probs[:, 1:]  # drop the padding column from ranking


class EmbeddingRanker:
    """Scores real items by cosine similarity to the predicted embedding."""

    def __init__(self, params: ModelParams, config: ModelConfig, item_embeddings: np.ndarray | None = None):
        if config.head != EMBEDDING_HEAD:
            raise ConfigError("embedding ranking needs an embedding-head model")
        if item_embeddings is None:
            item_embeddings = params.target_embedding
        if item_embeddings is None:
            raise DataError("no item embedding matrix available for cosine ranking")
        real = item_embeddings[1:]
        norms = np.linalg.norm(real, axis=1)
        if np.any(norms < _ZERO_NORM):
            bad = (np.flatnonzero(norms < _ZERO_NORM) + 1).tolist()
            raise DataError(f"items with zero embeddings cannot be ranked: {bad[:10]}")
        self.params = params
        self.config = config
        self.unit_items = real / norms[:, None]
        self.m = real.shape[0]
        self.zero_score_events = 0

    def scores(self, inputs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        h_final, _ = forward_hidden(self.params, inputs, mask)
        preds, _ = forward_embedding_output(self.params, h_final)
        norms = np.linalg.norm(preds, axis=1)
        zero = norms < _ZERO_NORM
        if np.any(zero):
            # similarity 0 everywhere: ranking falls back to index order
            self.zero_score_events += int(zero.sum())
        unit = preds / np.where(zero, 1.0, norms)[:, None]
        unit[zero] = 0.0
        return unit @ self.unit_items.T


class RandomRanker:
    """Seeded uniform-random scores; the floor any trained model must beat."""

    def __init__(self, m: int, seed: int = 0):
        self.m = m
        self.rng = np.random.default_rng(seed)
        self.zero_score_events = 0

    def scores(self, inputs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return self.rng.random((inputs.shape[0], self.m))


def popularity_table(train_sequences: list[list[int]], m: int) -> np.ndarray:
    """Global click counts per item index; slot 0 (padding) stays zero."""
    counts = np.zeros(m + 1, dtype=np.int64)
    for seq in train_sequences:
        for item in seq:
            counts[item] += 1
    return counts


def spop_rank(prefix: list[int], popularity: np.ndarray, k: int) -> list[int]:
    """Session items by within-session count, the rest by global popularity."""
    # global order: count desc, then lower index
    global_order = np.argsort(-popularity[1:], kind="stable") + 1
    session_counts = Counter(prefix)
    global_pos = {int(item): pos for pos, item in enumerate(global_order)}
    session_ranked = sorted(session_counts, key=lambda it: (-session_counts[it], global_pos[it]))
    out = session_ranked[:k]
    if len(out) < k:
        in_session = set(session_ranked)
        for item in global_order:
            if int(item) not in in_session:
                out.append(int(item))
                if len(out) == k:
                    break
    return out[:k]


class SPopRanker:
    """S-POP baseline over a precomputed global popularity table."""

    def __init__(self, popularity: np.ndarray):
        self.popularity = popularity
        self.m = len(popularity) - 1
        self.zero_score_events = 0
        self._global_order = np.argsort(-popularity[1:], kind="stable") + 1
        self._global_pos = {int(item): pos for pos, item in enumerate(self._global_order)}

    def topk(self, prefix: list[int], k: int) -> list[int]:
        counts = Counter(prefix)
        ranked = sorted(counts, key=lambda it: (-counts[it], self._global_pos[it]))
        out = ranked[:k]
        if len(out) < k:
            chosen = set(out)
            for item in self._global_order:
                if int(item) not in chosen:
                    out.append(int(item))
                    if len(out) == k:
                        break
        return out[:k]


class ItemKnnIndex:
    """Damped cosine similarity over session co-occurrence, built sparsely.

    sim(i, j) = cooc(i, j) / (sqrt(support(i) * support(j)) + damping)
    where support counts sessions containing the item and cooc counts
    sessions containing both.
    """

    def __init__(self, train_sequences: list[list[int]], m: int, damping: float = 20.0):
        self.m = m
        self.damping = damping
        self.support = np.zeros(m + 1, dtype=np.int64)
        self.cooc: dict[int, Counter] = {}
        for seq in train_sequences:
            distinct = sorted(set(seq))
            for item in distinct:
                self.support[item] += 1
            for a_pos, a in enumerate(distinct):
                row = self.cooc.setdefault(a, Counter())
                for b in distinct[a_pos + 1 :]:
                    row[b] += 1
                    self.cooc.setdefault(b, Counter())[a] += 1

    def similarity(self, a: int, b: int) -> float:
        count = self.cooc.get(a, Counter()).get(b, 0)
        if count == 0:
            return 0.0
        return count / (np.sqrt(self.support[a] * self.support[b]) + self.damping)

    def neighbors(self, item: int) -> list[tuple[int, float]]:
        row = self.cooc.get(item)
        if not row:
            return []
        sims = [
            (other, count / (np.sqrt(self.support[item] * self.support[other]) + self.damping))
            for other, count in row.items()
        ]
        sims.sort(key=lambda pair: (-pair[1], pair[0]))
        return sims


def itemknn_rank(last_item: int, index: ItemKnnIndex, popularity: np.ndarray, k: int) -> list[int]:
    """Most similar items to the last click, popularity-filled, self excluded."""
    out = [item for item, _ in index.neighbors(last_item)][:k]
    if len(out) < k:
        chosen = set(out)
        chosen.add(last_item)
        for item in np.argsort(-popularity[1:], kind="stable") + 1:
            if int(item) not in chosen:
                out.append(int(item))
                if len(out) == k:
                    break
    return out[:k]


class ItemKnnRanker:
    """Item-KNN baseline: rank by similarity to the last clicked item."""

    def __init__(self, index: ItemKnnIndex, popularity: np.ndarray):
        self.index = index
        self.popularity = popularity
        self.m = index.m
        self.zero_score_events = 0

    def topk(self, prefix: list[int], k: int) -> list[int]:
        return itemknn_rank(prefix[-1], self.index, self.popularity, k)


def rank_topk_softmax(params: ModelParams, config: ModelConfig, prefix: list[int], k: int) -> list[int]:
    """Top-k next items for one prefix from the softmax head."""
    inputs, mask = pad_batch([prefix], config.window)
    ranker = SoftmaxRanker(params, config)
    return topk_from_scores(ranker.scores(inputs, mask)[0], k)


def rank_topk_embedding(
    params: ModelParams,
    config: ModelConfig,
    item_embeddings: np.ndarray,
    prefix: list[int],
    k: int,
) -> list[int]:
    """Top-k next items for one prefix by cosine similarity to the prediction."""
    inputs, mask = pad_batch([prefix], config.window)
    ranker = EmbeddingRanker(params, config, item_embeddings)
    return topk_from_scores(ranker.scores(inputs, mask)[0], k)


def _session_events(test_sequences: list[list[int]]) -> tuple[list[list[int]], np.ndarray]:
    prefixes: list[list[int]] = []
    labels: list[int] = []
    for seq in test_sequences:
        if len(seq) < 2:
            raise DataError("test sessions must have at least 2 events")
        for r in range(1, len(seq)):
            prefixes.append(seq[:r])
            labels.append(seq[r])
    if not prefixes:
        raise DataError("no test sessions to evaluate")
    return prefixes, np.array(labels, dtype=np.int64)


def _event_ranks(ranker, prefixes, labels, k: int, window: int, batch_size: int):
    """Per-event ranks (k+1 means 'beyond k') plus per-batch wall seconds."""
    ranks = np.zeros(len(prefixes), dtype=np.int64)
    batch_seconds = []
    for lo in range(0, len(prefixes), batch_size):
        chunk = prefixes[lo : lo + batch_size]
        chunk_labels = labels[lo : lo + batch_size]
        started = time.perf_counter()
        if hasattr(ranker, "scores"):
            inputs, mask = pad_batch(chunk, window)
            ranks[lo : lo + len(chunk)] = np.minimum(
                ranks_from_scores(ranker.scores(inputs, mask), chunk_labels), k + 1
            )
        else:
            for i, prefix in enumerate(chunk):
                top = ranker.topk(prefix[-window:], k)
                label = int(chunk_labels[i])
                ranks[lo + i] = top.index(label) + 1 if label in top else k + 1
        batch_seconds.append(time.perf_counter() - started)
    return ranks, np.array(batch_seconds)


def evaluate(ranker, test_sequences: list[list[int]], cfg: EvalConfig, window: int = 19) -> EvalReport:
    """Recall@k and MRR@k over every (prefix, next item) event in the test set.

    Prefixes are truncated to the training window, and the model sees no
    dropout. Aggregation is order-independent.
    """
    prefixes, labels = _session_events(test_sequences)
    ranks, batch_seconds = _event_ranks(ranker, prefixes, labels, cfg.k, window, cfg.batch_size)
    hits = ranks <= cfg.k
    recall = float(hits.mean())
    mrr = float(np.where(hits, 1.0 / ranks, 0.0).mean())
    return EvalReport(
        recall_at_k=recall,
        mrr_at_k=mrr,
        event_count=len(prefixes),
        mean_batch_seconds=float(batch_seconds.mean()),
        std_batch_seconds=float(batch_seconds.std()),
        k=cfg.k,
        zero_score_events=getattr(ranker, "zero_score_events", 0),
    )


def bench_prediction(ranker, batches, repetitions: int, k: int = 20) -> tuple[float, float]:
    """Mean and std wall seconds over ``repetitions`` full prediction passes.

    One pass scores every batch and materializes its top-k (the cosine
    ranking is part of the pass for embedding-head models). A warm-up pass
    runs first and is not timed.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    batches = list(batches)

    def one_pass() -> None:
        for batch in batches:
            topk_rows_from_scores(ranker.scores(batch.inputs, batch.mask), k)

    one_pass()
    samples = []
    for _ in range(repetitions):
        started = time.perf_counter()
        one_pass()
        samples.append(time.perf_counter() - started)
    arr = np.array(samples)
    return float(arr.mean()), float(arr.std())
