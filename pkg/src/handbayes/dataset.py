"""Data model for handwriting feature collections.

A record is one repetition of one character by one writer, described by a
9-dimensional feature vector: the surface size S followed by the first four
pairs of Fourier coefficients, in the fixed order

    (S, a1, b1, a2, b2, a3, b3, a4, b4).

Datasets are immutable after construction and safe to share across threads.
The CSV contract is pinned to p = 9 columns; in-memory datasets accept any
dimension so reduced test instances can reuse the same machinery.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadLabel,
    BadValue,
    DegenerateScale,
    DuplicateRecord,
    SplitInfeasible,
    UnknownWriter,
)

P = 9
FEATURE_NAMES = ("S", "a1", "b1", "a2", "b2", "a3", "b3", "a4", "b4")
CHARACTERS = ("a", "d", "o", "q")
CSV_HEADER = ("writer", "char", "rep") + FEATURE_NAMES


class Record(NamedTuple):
    writer: int
    character: str
    repetition: int
    features: np.ndarray


class CellStats(NamedTuple):
    """Raw sufficient statistics of one writer-character cell."""

    n: int
    total: np.ndarray    # sum of feature vectors, shape (p,)
    raw_ss: np.ndarray   # sum of outer products x x', shape (p, p)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.n

    @property
    def scatter(self) -> np.ndarray:
        """Sum of (x - mean)(x - mean)' over the cell."""
        m = self.mean
        return self.raw_ss - self.n * np.outer(m, m)


def feature_vector(s: float, pairs: Sequence[Sequence[float]]) -> np.ndarray:
    """Assemble (S, a1, b1, ..., a4, b4) from the surface size and 4 pairs."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.shape != (4, 2):
        raise BadValue(f"expected 4 coefficient pairs, got shape {pairs.shape}")
    out = np.concatenate(([float(s)], pairs.ravel()))
    return validate_features(out)


def validate_features(x: np.ndarray, p: int = P) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise BadValue(f"feature vector must have length {p}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise BadValue("feature vector contains a non-finite value")
    return x


def surface_size(x: np.ndarray) -> float:
    return float(x[0])


def harmonic_pair(x: np.ndarray, h: int) -> tuple[float, float]:
    """(a_h, b_h) of harmonic h in 1..4."""
    if not 1 <= h <= 4:
        raise BadValue(f"harmonic index must be 1..4, got {h}")
    return float(x[2 * h - 1]), float(x[2 * h])


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar collection of handwriting feature records."""

    writers: np.ndarray
    characters: np.ndarray
    repetitions: np.ndarray
    X: np.ndarray
    scaling: np.ndarray | None = field(default=None)

    def __post_init__(self):
        writers = np.asarray(self.writers, dtype=int)
        chars = np.asarray(self.characters, dtype="U8")
        reps = np.asarray(self.repetitions, dtype=int)
        X = np.asarray(self.X, dtype=float)
        n = len(writers)
        if not (len(chars) == len(reps) == X.shape[0] == n):
            raise BadValue("column lengths disagree")
        if X.ndim != 2:
            raise BadValue("feature matrix must be 2-dimensional")
        if not np.all(np.isfinite(X)):
            raise BadValue("feature matrix contains a non-finite value")
        bad = set(chars) - set(CHARACTERS)
        if bad:
            raise BadLabel(f"unsupported character labels: {sorted(bad)}")
        triples = list(zip(writers.tolist(), chars.tolist(), reps.tolist()))
        if len(set(triples)) != n:
            seen, dup = set(), None
            for t in triples:
                if t in seen:
                    dup = t
                    break
                seen.add(t)
            raise DuplicateRecord(f"duplicate (writer, char, rep) triple: {dup}")
        scaling = self.scaling
        if scaling is not None:
            scaling = np.asarray(scaling, dtype=float)
            if scaling.shape != (X.shape[1],):
                raise BadValue("scaling length must match feature dimension")
            if not np.all(np.isfinite(scaling)) or np.any(scaling <= 0):
                raise BadValue("scaling divisors must be strictly positive")
            scaling = scaling.copy()
            scaling.setflags(write=False)
        for arr in (writers, chars, reps, X):
            arr.setflags(write=False)
        object.__setattr__(self, "writers", writers)
        object.__setattr__(self, "characters", chars)
        object.__setattr__(self, "repetitions", reps)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "scaling", scaling)

    # -- basic views ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.writers)

    @property
    def n(self) -> int:
        return len(self.writers)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def writer_ids(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.writers.tolist())))

    @cached_property
    def character_labels(self) -> tuple[str, ...]:
        present = set(self.characters.tolist())
        return tuple(c for c in CHARACTERS if c in present)

    def records(self) -> Iterator[Record]:
        for i in range(self.n):
            yield Record(
                int(self.writers[i]),
                str(self.characters[i]),
                int(self.repetitions[i]),
                self.X[i],
            )

    @classmethod
    def from_records(cls, records: Iterable[Record | tuple],
                     scaling: np.ndarray | None = None) -> "Dataset":
        rows = list(records)
        if not rows:
            return cls.empty(scaling=scaling)
        w = np.array([r[0] for r in rows], dtype=int)
        c = np.array([r[1] for r in rows], dtype="U8")
        j = np.array([r[2] for r in rows], dtype=int)
        X = np.array([np.asarray(r[3], dtype=float) for r in rows])
        return cls(w, c, j, X, scaling=scaling)

    @classmethod
    def empty(cls, p: int = P, scaling: np.ndarray | None = None) -> "Dataset":
        return cls(
            np.zeros(0, dtype=int),
            np.zeros(0, dtype="U8"),
            np.zeros(0, dtype=int),
            np.zeros((0, p)),
            scaling=scaling,
        )

    # -- selection ------------------------------------------------------

    def _select(self, mask: np.ndarray) -> "Dataset":
        return Dataset(
            self.writers[mask],
            self.characters[mask],
            self.repetitions[mask],
            self.X[mask],
            scaling=self.scaling,
        )

    def filter_writers(self, writers: Iterable[int]) -> "Dataset":
        keep = set(int(w) for w in writers)
        mask = np.array([w in keep for w in self.writers.tolist()])
        return self._select(mask)

    def filter_characters(self, labels: Iterable[str]) -> "Dataset":
        keep = set(labels)
        mask = np.array([c in keep for c in self.characters.tolist()])
        return self._select(mask)

    # -- sufficient statistics -------------------------------------------

    @cached_property
    def cell_stats(self) -> dict[tuple[int, str], CellStats]:
        """Per writer-character raw sufficient statistics."""
        out: dict[tuple[int, str], CellStats] = {}
        order = np.lexsort((self.repetitions, self.characters, self.writers))
        for i in order:
            key = (int(self.writers[i]), str(self.characters[i]))
            x = self.X[i]
            if key not in out:
                out[key] = CellStats(0, np.zeros(self.p), np.zeros((self.p, self.p)))
            st = out[key]
            out[key] = CellStats(st.n + 1, st.total + x, st.raw_ss + np.outer(x, x))
        return out

    def pooled_stats(self) -> tuple[int, np.ndarray, np.ndarray]:
        """(n, mean, scatter about the mean) over all records."""
        if self.n == 0:
            raise BadValue("dataset is empty")
        mean = self.X.mean(axis=0)
        centred = self.X - mean
        return self.n, mean, centred.T @ centred

    def character_stats(self) -> dict[str, tuple[int, np.ndarray, np.ndarray]]:
        """Per character: (n, mean, scatter about the character mean)."""
        out = {}
        for label in self.character_labels:
            sub = self.X[self.characters == label]
            mean = sub.mean(axis=0)
            centred = sub - mean
            out[label] = (len(sub), mean, centred.T @ centred)
        return out

    # -- serialization ----------------------------------------------------

    def to_csv(self) -> str:
        if self.p != P:
            raise BadValue(f"CSV schema is fixed at p={P}; dataset has p={self.p}")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in self.records():
            writer.writerow(
                [rec.writer, rec.character, rec.repetition]
                + [repr(float(v)) for v in rec.features]
            )
        return buf.getvalue()


# -- operations ---------------------------------------------------------------


def parse_dataset(csv_text: str) -> Dataset:
    """Parse the pinned CSV schema into a Dataset.

    Header must be exactly ``writer,char,rep,S,a1,b1,a2,b2,a3,b3,a4,b4``.
    Row order is preserved; no scaling is applied.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise BadValue("empty CSV: missing header row") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise BadValue(
            f"bad header: expected {','.join(CSV_HEADER)}, got {','.join(header)}"
        )
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CSV_HEADER):
            raise BadValue(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        try:
            writer = int(row[0])
            rep = int(row[2])
        except ValueError as exc:
            raise BadValue(f"line {lineno}: bad integer field: {exc}") from None
        if writer < 0:
            raise BadValue(f"line {lineno}: writer id must be non-negative")
        char = row[1].strip()
        if char not in CHARACTERS:
            raise BadLabel(f"line {lineno}: unknown character label {char!r}")
        try:
            values = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise BadValue(f"line {lineno}: bad numeric field: {exc}") from None
        if not all(math.isfinite(v) for v in values):
            raise BadValue(f"line {lineno}: non-finite feature value")
        rows.append(Record(writer, char, rep, np.array(values)))
    return Dataset.from_records(rows)


def standardize(data: Dataset, reference: Dataset) -> Dataset:
    """Divide every feature column of `data` by the per-column sample
    standard deviation (n-1 denominator) computed over all of `reference`.

    The divisors are recorded in the output's scaling field. The reference
    should be background data only, never the case material, so no case
    information leaks into the scale.
    """
    if reference.n < 2:
        raise DegenerateScale("reference needs at least 2 records")
    sd = reference.X.std(axis=0, ddof=1)
    if np.any(sd == 0) or not np.all(np.isfinite(sd)):
        bad = [FEATURE_NAMES[i] if reference.p == P else str(i)
               for i in np.nonzero(~(sd > 0))[0]]
        raise DegenerateScale(f"zero-variance reference column(s): {bad}")
    return Dataset(
        data.writers,
        data.characters,
        data.repetitions,
        data.X / sd,
        scaling=sd,
    )


def dummy_code(character: str, labels: Sequence[str] = CHARACTERS) -> np.ndarray:
    """Corner-point indicator row for a character.

    The first label is the reference group absorbed into the intercept:
    with the default labels, a -> (1,0,0,0), d -> (1,1,0,0), o -> (1,0,1,0),
    q -> (1,0,0,1).
    """
    if character not in labels:
        raise BadLabel(f"unknown character label {character!r}")
    row = np.zeros(len(labels), dtype=float)
    row[0] = 1.0
    idx = labels.index(character)
    if idx > 0:
        row[idx] = 1.0
    return row


def design_matrix(data: Dataset, labels: Sequence[str] | None = None) -> np.ndarray:
    """Stack of dummy-coded rows, one per record."""
    labels = tuple(labels) if labels is not None else CHARACTERS
    return np.array([dummy_code(c, labels) for c in data.characters.tolist()])


def split_writer(data: Dataset, writer: int, pi_split: float,
                 seed: int) -> tuple[Dataset, Dataset]:
    """Partition one writer's records into (questioned, control).

    Stratified per character: each character contributes
    round(pi_split * n) repetitions to the questioned side, clamped so both
    sides keep at least one. Deterministic given the seed.
    """
    if not 0.0 < pi_split < 1.0:
        raise BadValue(f"pi_split must be in (0, 1), got {pi_split}")
    writer = int(writer)
    if writer not in data.writer_ids:
        raise UnknownWriter(f"writer {writer} not in dataset")
    own = data.filter_writers([writer])
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), writer)))
    questioned_idx: list[int] = []
    for label in own.character_labels:
        idx = np.nonzero(own.characters == label)[0]
        idx = idx[np.argsort(own.repetitions[idx])]
        if len(idx) < 2:
            raise SplitInfeasible(
                f"writer {writer} character {label!r} has fewer than 2 repetitions"
            )
        k = int(math.floor(pi_split * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        questioned_idx.extend(idx[perm[:k]].tolist())
    mask = np.zeros(own.n, dtype=bool)
    mask[questioned_idx] = True
    return own._select(mask), own._select(~mask)


def background_excluding(data: Dataset, writers: Iterable[int]) -> Dataset:
    """All records whose writer id is not in the excluded set."""
    excluded = set(int(w) for w in writers)
    mask = np.array([w not in excluded for w in data.writers.tolist()], dtype=bool)
    if data.n == 0:
        return data
    return data._select(mask)
