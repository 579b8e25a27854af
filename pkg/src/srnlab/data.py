"""Click-log ingestion, temporal split and filtering, prefix augmentation
with privileged (future) sequences, padding, batching, and a seeded
Markov-chain generator for desk-scale experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataError

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_TS_FORMATS = ("%Y-%m-%dT%H:%M:%S.%fZ", "%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ClickEvent:
    session_id: str
    timestamp_ms: int  # epoch milliseconds, UTC
    item_id: str


@dataclass
class Session:
    """Clicks of one anonymous visit, sorted ascending by timestamp."""

    session_id: str
    events: list[ClickEvent]

    @property
    def start_time(self) -> int:
        return self.events[0].timestamp_ms

    def __len__(self) -> int:
        return len(self.events)

    def item_ids(self) -> list[str]:
        return [e.item_id for e in self.events]


@dataclass
class Vocabulary:
    """Bijection between external item ids and indices 1..m; 0 is padding."""

    item_to_index: dict[str, int]
    index_to_item: list[str]  # index_to_item[0] is the padding placeholder

    @property
    def m(self) -> int:
        return len(self.item_to_index)

    def index_of(self, item_id: str) -> int:
        try:
            return self.item_to_index[item_id]
        except KeyError:
            raise DataError(f"item {item_id!r} is not in the training vocabulary") from None


@dataclass(frozen=True)
class TrainingExample:
    """A prefix, its next-item label, and the reversed future sequence."""

    prefix: tuple[int, ...]
    label: int
    privileged: tuple[int, ...]  # [x_n .. x_{r+2}] reversed future; may be empty
    session_start: int


@dataclass
class MiniBatch:
    inputs: np.ndarray  # (batch, window) int64, 0 = padding
    mask: np.ndarray  # (batch, window) float64, 1.0 at real clicks
    labels: np.ndarray  # (batch,) int64
    priv_inputs: np.ndarray | None = None
    priv_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _parse_timestamp(text: str, lineno: int) -> int:
    for fmt in _TS_FORMATS:
        try:
            dt = datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
        delta = dt - _EPOCH
        return delta.days * 86_400_000 + delta.seconds * 1000 + delta.microseconds // 1000
    raise DataError(f"line {lineno}: unparseable timestamp {text!r}")


def format_timestamp(timestamp_ms: int) -> str:
    """Inverse of the click-log timestamp parser (millisecond ISO-8601 Z)."""
    seconds, ms = divmod(timestamp_ms, 1000)
    dt = _EPOCH + timedelta(seconds=seconds)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms:03d}Z"


def parse_clicks(lines: Iterable[str]) -> list[Session]:
    """Parse ``session_id,timestamp,item_id[,category]`` lines into Sessions.

    Events are grouped by session id and sorted ascending by timestamp
    (ties keep input order). Sessions come back in order of first appearance.
    """
    by_session: dict[str, list[ClickEvent]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise DataError(f"line {lineno}: expected session_id,timestamp,item_id, got {line!r}")
        session_id, ts_text, item_id = parts[0], parts[1], parts[2]
        if not item_id:
            raise DataError(f"line {lineno}: empty item id")
        ts = _parse_timestamp(ts_text, lineno)
        by_session.setdefault(session_id, []).append(ClickEvent(session_id, ts, item_id))
    sessions = []
    for session_id, events in by_session.items():
        events.sort(key=lambda e: e.timestamp_ms)  # stable: ties keep input order
        sessions.append(Session(session_id, events))
    return sessions


def parse_clicks_file(path) -> list[Session]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_clicks(fh)


def _utc_day(timestamp_ms: int):
    return (_EPOCH + timedelta(milliseconds=timestamp_ms)).date()


def split_and_filter(
    sessions: list[Session],
    min_session_length: int = 2,
    min_item_support: int = 5,
) -> tuple[list[Session], list[Session], Vocabulary]:
    """Last-calendar-day (UTC) test split plus iterative support filtering.

    Training sessions shorter than ``min_session_length`` and items with
    fewer than ``min_item_support`` training clicks are dropped, repeatedly,
    until stable. Test clicks on items outside the training vocabulary are
    dropped, then too-short test sessions are dropped again.
    """
    if not sessions:
        raise ConfigError("no sessions to split")
    last_day = max(_utc_day(s.start_time) for s in sessions)
    train = [s for s in sessions if _utc_day(s.start_time) != last_day]
    test = [s for s in sessions if _utc_day(s.start_time) == last_day]
    if not train:
        raise ConfigError("all sessions fall on the final day; no training data survives the split")

    while True:
        train = [s for s in train if len(s) >= min_session_length]
        counts: dict[str, int] = {}
        for s in train:
            for e in s.events:
                counts[e.item_id] = counts.get(e.item_id, 0) + 1
        kept_items = {item for item, c in counts.items() if c >= min_item_support}
        if len(kept_items) == len(counts):
            break
        filtered = []
        for s in train:
            events = [e for e in s.events if e.item_id in kept_items]
            if events:
                filtered.append(Session(s.session_id, events))
        train = filtered
    if not train:
        raise ConfigError("iterative filtering removed every training session")

    item_to_index: dict[str, int] = {}
    index_to_item = [""]
    for s in train:
        for e in s.events:
            if e.item_id not in item_to_index:
                item_to_index[e.item_id] = len(index_to_item)
                index_to_item.append(e.item_id)
    vocab = Vocabulary(item_to_index, index_to_item)

    kept_test = []
    for s in test:
        events = [e for e in s.events if e.item_id in item_to_index]
        if len(events) >= min_session_length:
            kept_test.append(Session(s.session_id, events))
    return train, kept_test, vocab


def augment_prefixes(session: Session, vocab: Vocabulary) -> list[TrainingExample]:
    """Expand one session of length n into its n-1 (prefix, label) examples.

    Example r carries prefix [x_1..x_r], label x_{r+1}, and the reversed
    future [x_n..x_{r+2}] as the privileged sequence.
    """
    indices = tuple(vocab.index_of(item) for item in session.item_ids())
    n = len(indices)
    if n < 2:
        raise DataError(f"session {session.session_id!r} is too short to augment (length {n})")
    start = session.start_time
    return [
        TrainingExample(
            prefix=indices[:r],
            label=indices[r],
            privileged=tuple(reversed(indices[r + 1 :])),
            session_start=start,
        )
        for r in range(1, n)
    ]


def augment_corpus(sessions: list[Session], vocab: Vocabulary) -> list[TrainingExample]:
    examples: list[TrainingExample] = []
    for s in sessions:
        examples.extend(augment_prefixes(s, vocab))
    return examples


def temporal_fraction(examples: list[TrainingExample], fraction: float) -> list[TrainingExample]:
    """Keep the most recent ceil(fraction * N) examples by session start time."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    ordered = sorted(examples, key=lambda ex: ex.session_start)  # stable on ties
    keep = math.ceil(fraction * len(ordered))
    return ordered[len(ordered) - keep :]


def pad_truncate(prefix, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Left-pad with zeros (or keep the most recent ``window`` items)."""
    if len(prefix) == 0:
        raise DataError("cannot pad an empty prefix")
    kept = list(prefix[-window:])
    inputs = np.zeros(window, dtype=np.int64)
    mask = np.zeros(window, dtype=np.float64)
    inputs[window - len(kept) :] = kept
    mask[window - len(kept) :] = 1.0
    return inputs, mask


def pad_batch(prefixes, window: int) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.zeros((len(prefixes), window), dtype=np.int64)
    mask = np.zeros((len(prefixes), window), dtype=np.float64)
    for row, prefix in enumerate(prefixes):
        inputs[row], mask[row] = pad_truncate(prefix, window)
    return inputs, mask


def make_batches(
    examples: list[TrainingExample],
    batch_size: int,
    window: int,
    rng_seed: int,
    include_privileged: bool = False,
) -> Iterator[MiniBatch]:
    """One epoch of shuffled mini-batches; the final short batch is kept.

    The shuffle is a seeded permutation, so a given seed fixes the batch
    order exactly. Privileged rows may be empty (all-padding, mask 0).
    """
    if not examples:
        raise DataError("no training examples to batch")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(examples))
    for lo in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[lo : lo + batch_size]]
        inputs, mask = pad_batch([ex.prefix for ex in chunk], window)
        labels = np.array([ex.label for ex in chunk], dtype=np.int64)
        priv_inputs = priv_mask = None
        if include_privileged:
            priv_inputs = np.zeros((len(chunk), window), dtype=np.int64)
            priv_mask = np.zeros((len(chunk), window), dtype=np.float64)
            for row, ex in enumerate(chunk):
                if ex.privileged:
                    priv_inputs[row], priv_mask[row] = pad_truncate(ex.privileged, window)
        yield MiniBatch(inputs, mask, labels, priv_inputs, priv_mask)


def index_sessions(sessions: list[Session], vocab: Vocabulary) -> list[list[int]]:
    """Map sessions to internal index sequences for evaluation."""
    return [[vocab.index_of(item) for item in s.item_ids()] for s in sessions]


# Synthetic corpus generation. Sessions follow a seeded first-order Markov
# chain with a sparse successor table per item, so the next click is
# statistically predictable and a trained model has something to learn.

_SUCCESSOR_PROFILE = np.array([0.7, 0.2, 0.1])
_SYNTH_START_MS = 1_396_310_400_000  # 2014-04-01T00:00:00Z, matches log format era


def _successor_table(rng: np.random.Generator, n_items: int, fanout: int) -> np.ndarray:
    table = np.zeros((n_items, fanout), dtype=np.int64)
    for item in range(n_items):
        others = np.concatenate([np.arange(item), np.arange(item + 1, n_items)])
        table[item] = rng.choice(others, size=fanout, replace=False)
    return table


def synth_generate(
    seed: int,
    n_items: int,
    n_sessions: int,
    day_count: int,
    drift_at: float | None = None,
) -> list[Session]:
    """Generate a seeded Markov-chain click corpus spread over ``day_count`` days.

    Session lengths are geometric with mean 6, clamped to [2, 19]. With
    ``drift_at`` set, sessions starting after that fraction of the timeline
    use an independently redrawn transition table (a distribution shift).
    """
    if n_items < 2:
        raise ConfigError("synthetic corpus needs at least 2 items")
    rng = np.random.default_rng(seed)
    fanout = min(3, n_items - 1)
    weights = _SUCCESSOR_PROFILE[:fanout] / _SUCCESSOR_PROFILE[:fanout].sum()
    cum_weights = np.cumsum(weights)
    table_a = _successor_table(rng, n_items, fanout)
    table_b = _successor_table(rng, n_items, fanout) if drift_at is not None else table_a

    # mildly skewed start-item popularity so popularity baselines are non-trivial
    start_probs = 1.0 / np.arange(1, n_items + 1)
    start_probs /= start_probs.sum()

    span_ms = day_count * 86_400_000
    starts = _SYNTH_START_MS + rng.integers(0, span_ms - 20_000, size=n_sessions)
    lengths = np.clip(rng.geometric(1.0 / 6.0, size=n_sessions), 2, 19)
    drifted = (
        np.zeros(n_sessions, dtype=bool)
        if drift_at is None
        else (starts - _SYNTH_START_MS) >= drift_at * span_ms
    )

    current = rng.choice(n_items, size=n_sessions, p=start_probs)
    items = np.zeros((n_sessions, int(lengths.max())), dtype=np.int64)
    items[:, 0] = current
    for step in range(1, int(lengths.max())):
        active = lengths > step
        slot = np.searchsorted(cum_weights, rng.random(n_sessions))
        nxt = np.where(drifted, table_b[current, slot], table_a[current, slot])
        items[active, step] = nxt[active]
        current = np.where(active, nxt, current)

    width = len(str(n_items))
    item_ids = [f"i{idx:0{width}d}" for idx in range(n_items)]
    sessions = []
    for s in range(n_sessions):
        sid = str(s + 1)
        events = [
            ClickEvent(sid, int(starts[s]) + 1000 * t, item_ids[items[s, t]])
            for t in range(int(lengths[s]))
        ]
        sessions.append(Session(sid, events))
    return sessions


def write_clicks(sessions: list[Session], path) -> None:
    """Serialize sessions in the click-log CSV format parse_clicks reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            for e in s.events:
                fh.write(f"{e.session_id},{format_timestamp(e.timestamp_ms)},{e.item_id}\n")


def dump_examples(examples: list[TrainingExample], path) -> None:
    """Write ``prefix|label|privileged`` lines with space-separated indices."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            prefix = " ".join(map(str, ex.prefix))
            priv = " ".join(map(str, ex.privileged))
            fh.write(f"{prefix}|{ex.label}|{priv}\n")
