"""Interaction logs, vocabularies, chronological splits, and padded batches.

Input format: UTF-8 TSV with header ``user_id\titem_id\texpl_id\ttimestamp``,
one interaction per line. Timestamps are integer Unix seconds; ties are
broken by file order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

HEADER = ("user_id", "item_id", "expl_id", "timestamp")
PAD = 0  # sentinel index stored in padded cells; never read via a masked path


@dataclass
class Interaction:
    user_id: str
    item_id: str
    expl_id: str
    timestamp: int

    def __post_init__(self):
        if not (self.user_id and self.item_id and self.expl_id):
            raise DataError("empty id field")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


@dataclass
class InteractionSequence:
    """One user's chronologically sorted history (dense indices)."""

    user_index: int
    items: list[int]
    expls: list[int]
    times: list[int]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SplitSequence:
    """Leave-one-out split: last step is the test target, second-to-last the
    validation target, the remaining prefix is for training."""

    train: InteractionSequence
    valid_target: tuple[int, int, int]   # (item, expl, time)
    test_target: tuple[int, int, int]


@dataclass
class Corpus:
    sequences: list[InteractionSequence]
    item_vocab: dict[str, int]
    expl_vocab: dict[str, int]
    user_vocab: dict[str, int]
    dropped_users: int

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    @property
    def n_expls(self) -> int:
        return len(self.expl_vocab)


@dataclass
class Batch:
    """Right-padded (B, L) index matrices plus validity mask and lengths."""

    items: np.ndarray
    expls: np.ndarray
    times: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    user_indices: np.ndarray


# -- I/O ---------------------------------------------------------------------

def load_interactions(path) -> list[Interaction]:
    """Parse a TSV log; malformed rows raise DataError with the line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != HEADER:
            raise DataError(f"bad header {header!r}, expected {list(HEADER)}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(fields)}")
            try:
                ts = int(fields[3])
            except ValueError:
                raise DataError(f"line {lineno}: non-integer timestamp {fields[3]!r}") from None
            try:
                out.append(Interaction(fields[0], fields[1], fields[2], ts))
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    return out


def write_interactions(path, interactions: list[Interaction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(HEADER) + "\n")
        for it in interactions:
            fh.write(f"{it.user_id}\t{it.item_id}\t{it.expl_id}\t{it.timestamp}\n")


# -- corpus construction -----------------------------------------------------

def build_corpus(interactions: list[Interaction], min_length: int = 3) -> Corpus:
    """Group by user, sort stably by timestamp, index vocabularies densely.

    Users with fewer than `min_length` interactions are dropped (the split
    needs a train prefix plus two held-out targets).
    """
    if not interactions:
        raise DataError("empty interaction list")
    item_vocab: dict[str, int] = {}
    expl_vocab: dict[str, int] = {}
    per_user: dict[str, list[Interaction]] = {}
    for it in interactions:
        item_vocab.setdefault(it.item_id, len(item_vocab))
        expl_vocab.setdefault(it.expl_id, len(expl_vocab))
        per_user.setdefault(it.user_id, []).append(it)

    sequences = []
    user_vocab: dict[str, int] = {}
    dropped = 0
    for user_id, rows in per_user.items():
        if len(rows) < min_length:
            dropped += 1
            continue
        rows = sorted(rows, key=lambda r: r.timestamp)  # stable: ties keep file order
        idx = len(user_vocab)
        user_vocab[user_id] = idx
        sequences.append(InteractionSequence(
            user_index=idx,
            items=[item_vocab[r.item_id] for r in rows],
            expls=[expl_vocab[r.expl_id] for r in rows],
            times=[r.timestamp for r in rows],
        ))
    if not sequences:
        raise DataError(f"no user has >= {min_length} interactions")
    return Corpus(sequences, item_vocab, expl_vocab, user_vocab, dropped)


def split_leave_one_out(seq: InteractionSequence) -> SplitSequence:
    n = len(seq)
    if n < 3:
        raise DataError(f"sequence length {n} < 3, cannot split")
    train = InteractionSequence(seq.user_index, seq.items[:n - 2],
                                seq.expls[:n - 2], seq.times[:n - 2])
    return SplitSequence(
        train=train,
        valid_target=(seq.items[n - 2], seq.expls[n - 2], seq.times[n - 2]),
        test_target=(seq.items[n - 1], seq.expls[n - 1], seq.times[n - 1]),
    )


# -- batching ----------------------------------------------------------------

def pad_sequences(sequences: list[InteractionSequence], max_len: int) -> Batch:
    """Truncate to the most recent `max_len` steps and right-pad to a block."""
    kept = [(s.items[-max_len:], s.expls[-max_len:], s.times[-max_len:], s.user_index)
            for s in sequences]
    lengths = np.array([len(k[0]) for k in kept], dtype=np.int64)
    B, L = len(kept), int(lengths.max())
    items = np.full((B, L), PAD, dtype=np.int64)
    expls = np.full((B, L), PAD, dtype=np.int64)
    times = np.zeros((B, L), dtype=np.int64)
    for b, (vi, ei, ti, _) in enumerate(kept):
        n = len(vi)
        items[b, :n] = vi
        expls[b, :n] = ei
        times[b, :n] = ti
    mask = np.arange(L)[None, :] < lengths[:, None]
    users = np.array([k[3] for k in kept], dtype=np.int64)
    return Batch(items, expls, times, mask, lengths, users)


def make_batches(sequences: list[InteractionSequence], batch_size: int,
                 max_len: int, seed: int) -> list[Batch]:
    """Seed-shuffled padded batches; deterministic for a fixed seed."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(sequences))
    shuffled = [sequences[i] for i in order]
    return [pad_sequences(shuffled[i:i + batch_size], max_len)
            for i in range(0, len(shuffled), batch_size)]
