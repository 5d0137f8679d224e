"""Planted low-rank fixtures with a known ground-truth score matrix."""

from __future__ import annotations

import numpy as np

from .data import EXPLICIT, IMPLICIT, RatingsDataset


def planted_scores(n, m, r, rng):
    U = rng.standard_normal((r, n))
    V = rng.standard_normal((r, m))
    return U.T @ V


def _split_rows(rows, n, m, n_train, rng, mode):
    """``rows[i]`` is a list of (item, score); returns train/valid datasets."""
    parts = {"train": ([], [], []), "valid": ([], [], [])}
    for i, row in enumerate(rows):
        order = rng.permutation(len(row))
        for pos, idx in enumerate(order):
            item, score = row[idx]
            dest = parts["train"] if pos < n_train else parts["valid"]
            dest[0].append(i)
            dest[1].append(item)
            dest[2].append(score)
    return tuple(RatingsDataset(n=n, m=m, users=u, items=j, scores=s, mode=mode)
                 for u, j, s in (parts["train"], parts["valid"]))


def planted_implicit(n=60, m=40, r=2, n_train=10, seed=0):
    """Each user's true top half becomes 1's; ``n_train`` of them go to training.

    Returns ``(train, valid, X)`` where ``X`` is the planted score matrix.
    """
    rng = np.random.default_rng(seed)
    X = planted_scores(n, m, r, rng)
    half = m // 2
    rows = []
    for i in range(n):
        top = np.argsort(-X[i], kind="stable")[:half]
        rows.append([(int(j), 1) for j in top])
    train, valid = _split_rows(rows, n, m, n_train, rng, IMPLICIT)
    return train, valid, X


def planted_explicit(n=60, m=40, r=2, n_rated=30, n_train=20, noise=0.3, seed=0):
    """Graded 1-5 ratings from per-user quintiles of a noisy planted score.

    Each user rates ``n_rated`` random items; ``n_train`` go to training.
    """
    rng = np.random.default_rng(seed)
    X = planted_scores(n, m, r, rng)
    rows = []
    for i in range(n):
        items = rng.choice(m, size=n_rated, replace=False)
        noisy = X[i, items] + noise * rng.standard_normal(n_rated)
        ranks = np.argsort(np.argsort(noisy))
        levels = 1 + (5 * ranks) // n_rated
        rows.append([(int(j), int(s)) for j, s in zip(items, levels)])
    train, valid = _split_rows(rows, n, m, n_train, rng, EXPLICIT)
    return train, valid, X


def random_baseline_precision(train, valid, k):
    """Expected precision@k of a uniformly random ranking of non-training items.

    For each evaluated user this is ``|valid items| / |candidates|`` as long as
    ``k`` does not exceed the candidate count.
    """
    pos = np.bincount(valid.users, minlength=train.n)
    cand = train.m - np.bincount(train.users, minlength=train.n)
    keep = pos > 0
    return float(np.mean(pos[keep] / cand[keep]))
