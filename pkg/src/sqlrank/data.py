"""Rating ingestion, binarization and per-user train/test splitting."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EXPLICIT = "explicit"
IMPLICIT = "implicit"

_AUTO_DELIMITERS = {"::": "::", ",": ",", "\t": "\t"}


class DataError(ValueError):
    """Base class for every error raised while reading or splitting ratings."""


class ParseError(DataError):
    def __init__(self, path, lineno, line, reason):
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line!r}")


class DuplicateObservationError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class EmptySplitError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """Sparse observed ratings: the index set of observed pairs plus their scores.

    ``users``, ``items`` and ``scores`` are parallel integer arrays. ``user_ids``
    and ``item_ids`` map dense indices back to the original identifiers.
    """

    n: int
    m: int
    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    mode: str = EXPLICIT
    user_ids: tuple = field(default=(), repr=False)
    item_ids: tuple = field(default=(), repr=False)

    def __post_init__(self):
        for name in ("users", "items", "scores"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.users) == len(self.items) == len(self.scores)):
            raise DataError("users, items and scores must have equal length")
        if self.mode not in (EXPLICIT, IMPLICIT):
            raise DataError(f"unknown mode {self.mode!r}")
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.n:
                raise DataError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.m:
                raise DataError("item index out of range")
            if self.scores.min() < 0:
                raise DataError("scores must be non-negative")
        if self.mode == IMPLICIT and np.any(self.scores != 1):
            raise DataError("implicit datasets store only 1's")
        keys = self.users * self.m + self.items
        if len(np.unique(keys)) != len(keys):
            raise DuplicateObservationError("duplicate (user, item) observation")
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(u) for u in range(self.n)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(j) for j in range(self.m)))
        if len(self.user_ids) != self.n or len(self.item_ids) != self.m:
            raise DataError("id maps do not match n, m")

    def __len__(self):
        return len(self.users)

    @property
    def entries(self):
        return list(zip(self.users.tolist(), self.items.tolist(), self.scores.tolist()))

    @cached_property
    def _grouped(self):
        order = np.lexsort((self.items, self.users))
        counts = np.bincount(self.users, minlength=self.n)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return order, indptr

    @property
    def indptr(self):
        """CSR row pointer over users (entries sorted by user, then item)."""
        return self._grouped[1]

    def counts(self):
        return np.diff(self.indptr)

    def user_items(self, i):
        order, indptr = self._grouped
        return self.items[order[indptr[i]:indptr[i + 1]]]

    def user_rows(self):
        """Yield ``(user, items, scores)`` for each user, in index order."""
        order, indptr = self._grouped
        items, scores = self.items[order], self.scores[order]
        for i in range(self.n):
            lo, hi = indptr[i], indptr[i + 1]
            yield i, items[lo:hi], scores[lo:hi]

    def sorted_arrays(self):
        order, _ = self._grouped
        return self.users[order], self.items[order], self.scores[order]

    def with_entries(self, users, items, scores, **changes):
        kwargs = dict(n=self.n, m=self.m, mode=self.mode,
                      user_ids=self.user_ids, item_ids=self.item_ids)
        kwargs.update(changes)
        return RatingsDataset(users=users, items=items, scores=scores, **kwargs)

    def id_map(self):
        return {
            "mode": self.mode,
            "users": {u: i for i, u in enumerate(self.user_ids)},
            "items": {v: j for j, v in enumerate(self.item_ids)},
        }


@dataclass(frozen=True)
class SplitSpec:
    min_ratings_per_user: int
    train_per_user: int
    implicit_threshold: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.train_per_user < 1:
            raise ValueError("train_per_user must be positive")
        if self.train_per_user >= self.min_ratings_per_user:
            raise ValueError("train_per_user must be smaller than min_ratings_per_user")


def _split_line(line, delimiter):
    if delimiter is None:
        return line.split()
    return [tok.strip() for tok in line.split(delimiter)]


def detect_delimiter(line):
    """Pick ``::``, comma, tab or generic whitespace for a sample line."""
    for ch, delim in _AUTO_DELIMITERS.items():
        if ch in line:
            return delim
    if re.search(r"\s", line.strip()):
        return None
    raise DataError(f"cannot detect delimiter in {line!r}; pass one explicitly")


def load_ratings(path, delimiter="auto", mode=EXPLICIT, id_map=None):
    """Read ``user item score`` lines into a densely re-indexed dataset.

    Args:
        path: text file, one observation per line.
        delimiter: ``"auto"`` (``::``, comma, tab or whitespace), ``None`` for any
            whitespace, or an explicit separator string such as ``"::"``.
        mode: ``"explicit"`` or ``"implicit"``. Implicit input clips positive
            scores to 1 and drops zeros.
        id_map: optional mapping as produced by :meth:`RatingsDataset.id_map`;
            when given, identifiers are resolved through it instead of being
            assigned fresh indices, so several files share one index space.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if id_map is not None:
        user_index = dict(id_map["users"])
        item_index = dict(id_map["items"])
    else:
        user_index, item_index = {}, {}
    users, items, scores = [], [], []
    seen = set()
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if delimiter == "auto":
                delimiter = detect_delimiter(line)
            toks = _split_line(line, delimiter)
            if len(toks) < 3:
                raise ParseError(path, lineno, line, "expected user, item, score")
            uid, iid, s = toks[0], toks[1], toks[2]
            try:
                score = int(float(s))
            except ValueError:
                raise ParseError(path, lineno, line, "score is not numeric") from None
            if score < 0 or float(s) != score:
                raise ParseError(path, lineno, line, "score must be a non-negative integer")
            if id_map is not None:
                if uid not in user_index or iid not in item_index:
                    raise ParseError(path, lineno, line, "identifier missing from id map")
            u = user_index.setdefault(uid, len(user_index))
            j = item_index.setdefault(iid, len(item_index))
            if (u, j) in seen:
                raise DuplicateObservationError(
                    f"{path}:{lineno}: duplicate observation ({uid}, {iid})")
            seen.add((u, j))
            users.append(u)
            items.append(j)
            scores.append(score)
    if not users and id_map is None:
        raise EmptyDatasetError(f"{path}: no observations")
    scores = np.asarray(scores, dtype=np.int64)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if mode == IMPLICIT:
        keep = scores > 0
        users, items, scores = users[keep], items[keep], np.ones(keep.sum(), np.int64)
    user_ids = tuple(sorted(user_index, key=user_index.get))
    item_ids = tuple(sorted(item_index, key=item_index.get))
    return RatingsDataset(n=len(user_ids), m=len(item_ids), users=users, items=items,
                          scores=scores, mode=mode, user_ids=user_ids, item_ids=item_ids)


def binarize(ds, threshold):
    """Keep scores ``>= threshold`` as 1's and drop the rest."""
    if ds.mode != EXPLICIT:
        raise DataError("binarize expects an explicit dataset")
    keep = ds.scores >= threshold
    return ds.with_entries(ds.users[keep], ds.items[keep],
                           np.ones(int(keep.sum()), np.int64), mode=IMPLICIT)


def split_train_test(ds, spec):
    """Per-user random split; users below ``spec.min_ratings_per_user`` are dropped.

    Surviving users are re-indexed densely (in original index order); the item
    index space is kept whole, including items left with no training data.
    """
    rng = np.random.default_rng(spec.seed)
    counts = ds.counts()
    survivors = np.flatnonzero(counts >= spec.min_ratings_per_user)
    if len(survivors) == 0:
        raise EmptySplitError(
            f"no user has at least {spec.min_ratings_per_user} observations")
    new_index = np.full(ds.n, -1, dtype=np.int64)
    new_index[survivors] = np.arange(len(survivors))

    users, items, scores = ds.sorted_arrays()
    indptr = ds.indptr
    train_mask = np.zeros(len(users), dtype=bool)
    keep_mask = np.zeros(len(users), dtype=bool)
    for i in survivors:
        lo, hi = indptr[i], indptr[i + 1]
        picked = rng.choice(hi - lo, size=spec.train_per_user, replace=False)
        train_mask[lo + picked] = True
        keep_mask[lo:hi] = True
    test_mask = keep_mask & ~train_mask

    user_ids = tuple(ds.user_ids[i] for i in survivors)
    common = dict(n=len(survivors), user_ids=user_ids)
    train = ds.with_entries(new_index[users[train_mask]], items[train_mask],
                            scores[train_mask], **common)
    test = ds.with_entries(new_index[users[test_mask]], items[test_mask],
                           scores[test_mask], **common)
    return train, test


def save_ratings(ds, path, delimiter="\t"):
    """Write observations with their ORIGINAL identifiers, sorted by (user, item)."""
    users, items, scores = ds.sorted_arrays()
    with Path(path).open("w") as fh:
        for u, j, s in zip(users.tolist(), items.tolist(), scores.tolist()):
            fh.write(f"{ds.user_ids[u]}{delimiter}{ds.item_ids[j]}{delimiter}{s}\n")


def save_id_map(ds, path):
    Path(path).write_text(json.dumps(ds.id_map(), indent=1) + "\n")


def read_id_map(path):
    return json.loads(Path(path).read_text())


def load_split_file(path, id_map, delimiter="auto"):
    """Load a train/test file written by :func:`save_ratings` in the map's index space."""
    ds = load_ratings(path, delimiter=delimiter, mode=id_map.get("mode", EXPLICIT),
                      id_map=id_map)
    return ds
