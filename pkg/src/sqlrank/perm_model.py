"""Permutation probability model over scored items.

Weights are ``phi(s) = exp(sigmoid(s))`` so every weight lies in ``(1, e)``;
plain suffix sums of weights are therefore safe without log-sum-exp tricks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import IMPLICIT

log = logging.getLogger(__name__)


def sigmoid(x):
    return expit(x)


def phi(x):
    """Item weight ``exp(sigmoid(x))``; strictly increasing with range (1, e)."""
    return np.exp(expit(x))


def log_permutation_probability(s, pi, k=None):
    """Log-probability of the top-``k`` prefix of ordering ``pi`` under scores ``s``.

    ``pi[0]`` is the slot ranked first. ``k=None`` (or any ``k >= len(s)``)
    gives the probability of the full ordering.
    """
    s = np.asarray(s, dtype=float)
    pi = np.asarray(pi, dtype=np.int64)
    if k is None:
        k = len(s)
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    if len(pi) != len(s):
        raise ValueError("permutation and score vector differ in length")
    g = expit(s[pi])
    w = np.exp(g)
    suffix = np.cumsum(w[::-1])[::-1]
    top = min(k, len(s))
    return float(np.sum(g[:top] - np.log(suffix[:top])))


def sample_permutation_exponential(s, rng, size=None):
    """Order items by independent exponential clocks with rates ``phi(s)``.

    Returns one permutation, or a ``(size, len(s))`` array of them.
    """
    s = np.asarray(s, dtype=float)
    rate = phi(s)
    shape = (len(s),) if size is None else (size, len(s))
    u = 1.0 - rng.random(shape)  # (0, 1]
    y = -np.log(u) / rate
    return np.argsort(y, axis=-1, kind="stable")


@dataclass(frozen=True, eq=False)
class PermutationMatrix:
    """Per-user ranked item lists stored CSR-style.

    Row ``i`` is ``items[indptr[i]:indptr[i+1]]``, best first. For implicit
    data the last ``n_negatives[i]`` slots are sampled unobserved items.
    """

    m: int
    items: np.ndarray
    indptr: np.ndarray
    n_negatives: np.ndarray
    n_capped: int = 0

    @property
    def n(self):
        return len(self.indptr) - 1

    @property
    def lengths(self):
        return np.diff(self.indptr)

    def row(self, i):
        return self.items[self.indptr[i]:self.indptr[i + 1]]

    def rows(self):
        return [self.row(i) for i in range(self.n)]

    @classmethod
    def from_rows(cls, rows, m, n_negatives=None):
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        items = (np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])
                 if rows else np.zeros(0, np.int64))
        if n_negatives is None:
            n_negatives = np.zeros(len(rows), dtype=np.int64)
        return cls(m=m, items=items, indptr=indptr,
                   n_negatives=np.asarray(n_negatives, dtype=np.int64))

    def take_users(self, order):
        """Rows reordered as ``order``; used to check user exchangeability."""
        return PermutationMatrix.from_rows([self.row(i) for i in order], self.m,
                                           self.n_negatives[np.asarray(order)])


def _tie_shuffled_rows(ds, rng):
    users, items, scores = ds.sorted_arrays()
    # a uniform random key within equal (user, score) blocks is an exact shuffle
    key = rng.random(len(users))
    order = np.lexsort((key, -scores, users))
    return items[order], ds.indptr


def _sample_negatives(ds, need, rng):
    """Uniform draws without replacement from each user's unobserved items.

    Returns a list of arrays in draw order (itself uniformly random).
    """
    m = ds.m
    counts = ds.counts()
    out = [np.zeros(0, np.int64) for _ in range(ds.n)]
    observed_keys = np.sort(ds.users * m + ds.items)
    pending = np.flatnonzero(need > 0)
    avail = m - counts
    dense = pending[2 * need[pending] > avail[pending]]
    sparse = pending[2 * need[pending] <= avail[pending]]

    for i in dense:
        pool = np.setdiff1d(np.arange(m), ds.user_items(i), assume_unique=True)
        out[i] = rng.permutation(pool)[:need[i]]

    remaining = need.copy()
    chosen_keys = np.zeros(0, np.int64)
    todo = sparse
    while len(todo):
        draw = np.ceil(remaining[todo] * 1.25).astype(np.int64) + 4
        cand_users = np.repeat(todo, draw)
        cand_items = rng.integers(0, m, size=len(cand_users))
        keys = cand_users * m + cand_items
        ok = ~np.isin(keys, observed_keys) & ~np.isin(keys, chosen_keys)
        keys, cand_users, cand_items = keys[ok], cand_users[ok], cand_items[ok]
        _, first = np.unique(keys, return_index=True)
        first.sort()
        cand_users, cand_items = cand_users[first], cand_items[first]
        # keep the earliest `remaining` survivors per user
        start = np.searchsorted(cand_users, cand_users, side="left")
        rank = np.arange(len(cand_users)) - start
        take = rank < remaining[cand_users]
        cand_users, cand_items = cand_users[take], cand_items[take]
        bounds = np.searchsorted(cand_users, todo, side="left")
        ends = np.searchsorted(cand_users, todo, side="right")
        for i, lo, hi in zip(todo, bounds, ends):
            if hi > lo:
                out[i] = np.concatenate([out[i], cand_items[lo:hi]])
        remaining[todo] -= ends - bounds
        chosen_keys = np.concatenate([chosen_keys, cand_users * m + cand_items])
        chosen_keys.sort()
        todo = todo[remaining[todo] > 0]
    return out


def stochastic_queue(ds, rho=0.0, rng=None, neg_rng=None):
    """Draw one valid ranking matrix: tie blocks shuffled, negatives appended.

    Args:
        ds: training ratings.
        rho: negatives per observed 1 (implicit data only; ignored otherwise).
            ``rho * count`` is rounded to the nearest integer per user.
        rng: generator for tie shuffling.
        neg_rng: generator for negative sampling; defaults to ``rng``.
    """
    if rng is None:
        rng = np.random.default_rng()
    neg_rng = rng if neg_rng is None else neg_rng
    items, indptr = _tie_shuffled_rows(ds, rng)
    if ds.mode != IMPLICIT or rho == 0:
        return PermutationMatrix(m=ds.m, items=items, indptr=indptr.copy(),
                                 n_negatives=np.zeros(ds.n, np.int64))
    if rho < 0:
        raise ValueError("rho must be non-negative")

    counts = ds.counts()
    need = np.rint(rho * counts).astype(np.int64)
    avail = ds.m - counts
    capped = need > avail
    n_capped = int(capped.sum())
    if n_capped:
        log.warning("%d users have fewer unobserved items than requested negatives; "
                    "capping", n_capped)
        need = np.minimum(need, avail)
    negatives = _sample_negatives(ds, need, neg_rng)

    rows = [np.concatenate([items[indptr[i]:indptr[i + 1]], negatives[i]])
            for i in range(ds.n)]
    pm = PermutationMatrix.from_rows(rows, ds.m, need)
    return PermutationMatrix(m=pm.m, items=pm.items, indptr=pm.indptr,
                             n_negatives=pm.n_negatives, n_capped=n_capped)
