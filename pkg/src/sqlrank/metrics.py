"""Top-k evaluation: precision@k over non-training items and NDCG@k over test items."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# users scored per block when ranking the full catalogue
_BLOCK = 512


@dataclass
class EvalReport:
    precision: dict
    users_evaluated: int
    excluded_users: int
    ndcg: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"precision": {str(k): v for k, v in sorted(self.precision.items())}}
        if self.ndcg:
            out["ndcg"] = {str(k): v for k, v in sorted(self.ndcg.items())}
        out["users_evaluated"] = self.users_evaluated
        out["excluded_users"] = self.excluded_users
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)


@dataclass(frozen=True)
class RankedList:
    items: list
    short: bool


def _order(scores):
    # descending score, ties by ascending index
    return np.argsort(-scores, kind="stable")


def rank_items(model, user, exclude=(), top_k=10):
    """Best ``top_k`` items for ``user`` outside ``exclude``.

    The result carries ``short=True`` when fewer than ``top_k`` candidates exist.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores = model.U[:, user] @ model.V
    keep = np.ones(model.m, dtype=bool)
    keep[list(exclude)] = False
    order = _order(scores)
    order = order[keep[order]]
    return RankedList(order[:top_k].tolist(), short=len(order) < top_k)


def _top_hits(model, train, relevant, ks):
    """Per-user hit counts in the top ``k`` non-training items, for each ``k``.

    ``relevant`` holds sorted keys ``user * m + item``.
    """
    kmax = max(ks)
    n, m = model.n, model.m
    hits = np.zeros((n, len(ks)))
    for lo in range(0, n, _BLOCK):
        hi = min(n, lo + _BLOCK)
        S = model.scores(slice(lo, hi))
        sel = (train.users >= lo) & (train.users < hi)
        S[train.users[sel] - lo, train.items[sel]] = -np.inf
        order = np.argsort(-S, axis=1, kind="stable")[:, :kmax]
        valid = np.isfinite(np.take_along_axis(S, order, axis=1))
        keys = (np.arange(lo, hi)[:, None] * m + order)
        rel = np.isin(keys, relevant) & valid
        cum = np.cumsum(rel, axis=1)
        for c, k in enumerate(ks):
            if cum.shape[1]:
                hits[lo:hi, c] = cum[:, min(k, cum.shape[1]) - 1]
    return hits


def _precision(model, train, test, ks, relevant_mask):
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    has_test = np.bincount(test.users, minlength=model.n) > 0
    evaluated = int(has_test.sum())
    relevant = np.sort(test.users[relevant_mask] * model.m + test.items[relevant_mask])
    precision = {}
    if evaluated:
        hits = _top_hits(model, train, relevant, ks)
        for c, k in enumerate(ks):
            precision[k] = float(hits[has_test, c].sum() / (evaluated * k))
    else:
        precision = {k: 0.0 for k in ks}
    return EvalReport(precision=precision, users_evaluated=evaluated,
                      excluded_users=model.n - evaluated)


def precision_at_k_implicit(model, train, test, ks=(1, 5, 10)):
    """Fraction of test 1's among each user's top-k non-training items."""
    return _precision(model, train, test, ks, test.scores >= 1)


def precision_at_k_explicit(model, train, test, ks=(1, 5, 10), low=4, high=5):
    """As the implicit version, with relevance meaning a test rating in [low, high]."""
    return _precision(model, train, test, ks, (test.scores >= low) & (test.scores <= high))


def dcg(gains, k):
    gains = np.asarray(gains, dtype=float)[:k]
    return float(np.sum((2.0 ** gains - 1.0) / np.log2(np.arange(2, len(gains) + 2))))


def ndcg_at_k(model, train, test, k=10):
    """Mean NDCG@k where each user's TEST items are ordered by model score.

    Users whose ideal DCG is zero (or who have no test items) are skipped.
    ``train`` is accepted for interface symmetry; it does not affect the pool.
    """
    del train
    values = []
    for i, items, ratings in test.user_rows():
        if len(items) == 0:
            continue
        ideal = dcg(np.sort(ratings)[::-1], k)
        if ideal <= 0:
            continue
        scores = model.U[:, i] @ model.V[:, items]
        values.append(dcg(ratings[_order(scores)], k) / ideal)
    return float(np.mean(values)) if values else 0.0


def evaluate(model, train, test, ks=(1, 5, 10), ndcg_k=10):
    """Implicit report for implicit data; explicit precision plus NDCG otherwise."""
    if test.mode == "implicit":
        return precision_at_k_implicit(model, train, test, ks)
    report = precision_at_k_explicit(model, train, test, ks)
    report.ndcg = {ndcg_k: ndcg_at_k(model, train, test, ndcg_k)}
    return report
