"""Weighted-triple files, vocabularies, negative sampling and batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigurationError, ParseError, ValidationError

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 100


class WeightedTriple(NamedTuple):
    h: int
    r: int
    t: int
    s: float


@dataclass
class Triples:
    """Column arrays of an ordered triple list."""

    h: np.ndarray
    r: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.float64)
        if not (len(self.h) == len(self.r) == len(self.t) == len(self.s)):
            raise ConfigurationError("triple columns have different lengths")

    @classmethod
    def from_list(cls, triples) -> "Triples":
        triples = list(triples)
        if not triples:
            return cls.empty()
        h, r, t, s = zip(*triples)
        return cls(h, r, t, s)

    @classmethod
    def empty(cls) -> "Triples":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self):
        return len(self.h)

    def __iter__(self) -> Iterator[WeightedTriple]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> WeightedTriple:
        return WeightedTriple(int(self.h[i]), int(self.r[i]), int(self.t[i]), float(self.s[i]))

    def subset(self, index) -> "Triples":
        return Triples(self.h[index], self.r[index], self.t[index], self.s[index])

    @staticmethod
    def concat(parts) -> "Triples":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Triples.empty()
        return Triples(*(np.concatenate([getattr(p, c) for p in parts]) for c in "hrts"))


def load_split(path) -> Triples:
    """Read a ``head<TAB>relation<TAB>tail<TAB>score`` file.

    Blank lines are skipped; anything else malformed is a
    :class:`ParseError` naming the line.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            try:
                h, r, t = (int(x) for x in fields[:3])
                s = float(fields[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if min(h, r, t) < 0:
                raise ParseError(f"{path}:{lineno}: ids must be non-negative")
            if not 0.0 <= s <= 1.0:
                raise ValidationError(f"{path}:{lineno}: score {s} outside [0, 1]")
            rows.append((h, r, t, s))
    return Triples.from_list(rows)


def write_split(triples: Triples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t, s in triples:
            fh.write(f"{h}\t{r}\t{t}\t{s!r}\n")


def load_vocabulary(path) -> list[str]:
    """Names indexed by id from a two-column ``name<TAB>id`` (or ``id<TAB>name``) file."""
    path = Path(path)
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 tab-separated fields")
            a, b = fields
            if b.strip().isdigit():
                idx, name = int(b), a
            elif a.strip().isdigit():
                idx, name = int(a), b
            else:
                raise ParseError(f"{path}:{lineno}: no integer id column")
            if idx in pairs:
                raise ValidationError(f"{path}:{lineno}: duplicate id {idx}")
            pairs[idx] = name
    n = max(pairs) + 1 if pairs else 0
    if sorted(pairs) != list(range(n)):
        raise ValidationError(f"{path}: ids are not dense in [0, {n})")
    return [pairs[i] for i in range(n)]


def write_vocabulary(names, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(names):
            fh.write(f"{name}\t{i}\n")


class ObservedSet:
    """Membership test for (h, r, t) keys, vectorised over arrays."""

    def __init__(self, triples: Triples, n_entities: int, n_relations: int):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self._keys = np.unique(self.encode(triples.h, triples.r, triples.t))

    def encode(self, h, r, t):
        return (np.asarray(h) * self.n_relations + np.asarray(r)) * self.n_entities + np.asarray(t)

    def contains(self, h, r, t) -> np.ndarray:
        keys = self.encode(h, r, t)
        if len(self._keys) == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(self._keys, keys), len(self._keys) - 1)
        return self._keys[pos] == keys

    def __len__(self):
        return len(self._keys)


@dataclass
class Dataset:
    train: Triples
    val: Triples
    test: Triples
    entity_names: list
    relation_names: list
    _observed: ObservedSet | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.train) == 0:
            raise ValidationError("training split is empty")
        for name, split in (("train", self.train), ("val", self.val), ("test", self.test)):
            if len(split) == 0:
                continue
            if max(split.h.max(), split.t.max()) >= self.n_entities:
                raise ValidationError(f"{name} split references an entity outside the vocabulary")
            if split.r.max() >= self.n_relations:
                raise ValidationError(f"{name} split references a relation outside the vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def observed(self) -> ObservedSet:
        """Train-split (h, r, t) set used to filter corruptions."""
        if self._observed is None:
            self._observed = ObservedSet(self.train, self.n_entities, self.n_relations)
        return self._observed

    def all_triples(self) -> Triples:
        return Triples.concat([self.train, self.val, self.test])

    def split(self, name: str) -> Triples:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split {name!r}") from None


def tail_index(triples: Triples) -> dict:
    """``(h, r) -> {t: s}`` for one triple list."""
    index: dict = {}
    for h, r, t, s in triples:
        index.setdefault((h, r), {})[t] = s
    return index


def load_dataset(train, val=None, test=None, entity_vocab=None, relation_vocab=None) -> Dataset:
    """Load splits and optional vocabularies.

    Without vocabulary files, ids are named by their decimal string and the
    counts are one past the largest id seen in any split.
    """
    if not Path(train).exists():
        raise FileNotFoundError(f"split not found: {train}")
    splits = []
    for path in (train, val, test):
        if path is None:
            splits.append(Triples.empty())
            continue
        if not Path(path).exists():
            raise FileNotFoundError(f"split not found: {path}")
        splits.append(load_split(path))
    every = Triples.concat(splits)
    n_e = int(max(every.h.max(), every.t.max())) + 1
    n_r = int(every.r.max()) + 1
    ents = load_vocabulary(entity_vocab) if entity_vocab else [str(i) for i in range(n_e)]
    rels = load_vocabulary(relation_vocab) if relation_vocab else [str(i) for i in range(n_r)]
    return Dataset(*splits, entity_names=ents, relation_names=rels)


def load_dataset_dir(directory) -> Dataset:
    """``train.tsv``/``val.tsv``/``test.tsv`` plus optional id files in one folder."""
    directory = Path(directory)

    def opt(name):
        p = directory / name
        return p if p.exists() else None

    return load_dataset(
        directory / "train.tsv",
        opt("val.tsv"),
        opt("test.tsv"),
        opt("entity_id.tsv"),
        opt("relation_id.tsv"),
    )


# -- negative sampling --------------------------------------------------------


@dataclass
class SamplerStats:
    exhausted: int = 0


def corrupt(h, r, t, n: int, observed: ObservedSet, rng: np.random.Generator, stats: SamplerStats | None = None):
    """``n`` head-or-tail corruptions of each triple in the aligned arrays.

    Returns ``(h', r', t')`` arrays of length ``len(h) * n``, grouped by
    source triple.  Candidates in ``observed`` are redrawn up to 100 times;
    after that the last candidate is kept and ``stats.exhausted`` counts it.
    """
    if n < 1:
        raise ConfigurationError("number of negatives must be >= 1")
    h = np.repeat(np.asarray(h, dtype=np.int64), n)
    r = np.repeat(np.asarray(r, dtype=np.int64), n)
    t = np.repeat(np.asarray(t, dtype=np.int64), n)
    corrupt_head = rng.random(h.size) < 0.5
    nh, nt = h.copy(), t.copy()
    todo = np.arange(h.size)
    for _ in range(MAX_RESAMPLE):
        repl = rng.integers(0, observed.n_entities, size=todo.size)
        ch = corrupt_head[todo]
        nh[todo] = np.where(ch, repl, h[todo])
        nt[todo] = np.where(ch, t[todo], repl)
        clash = observed.contains(nh[todo], r[todo], nt[todo])
        todo = todo[clash]
        if todo.size == 0:
            break
    if todo.size:
        if stats is not None:
            stats.exhausted += int(todo.size)
            logger.debug("accepted %d corruptions after %d redraws", todo.size, MAX_RESAMPLE)
        else:
            logger.warning("accepted %d corruptions after %d redraws", todo.size, MAX_RESAMPLE)
    return nh, r, nt


def negative_sample(triple, n: int, dataset: Dataset, rng: np.random.Generator, stats: SamplerStats | None = None):
    """Corruptions of a single triple as a list of ``(h', r, t')``."""
    h, r, t = int(triple[0]), int(triple[1]), int(triple[2])
    nh, nr, nt = corrupt([h], [r], [t], n, dataset.observed, rng, stats)
    return [(int(a), int(b), int(c)) for a, b, c in zip(nh, nr, nt)]


def batch_iter(n_items: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Index batches of one shuffled epoch; the last batch may be short."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n_items)
    for start in range(0, n_items, batch_size):
        yield order[start : start + batch_size]
