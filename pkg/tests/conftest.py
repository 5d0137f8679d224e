import numpy as np
import pytest

from sqlrank.data import EXPLICIT, IMPLICIT, RatingsDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_dataset(triples, n=None, m=None, mode=EXPLICIT):
    users, items, scores = zip(*triples) if triples else ((), (), ())
    n = n if n is not None else max(users) + 1
    m = m if m is not None else max(items) + 1
    return RatingsDataset(n=n, m=m, users=list(users), items=list(items),
                          scores=list(scores), mode=mode)


def implicit_dataset(rows, m):
    triples = [(i, j, 1) for i, row in enumerate(rows) for j in row]
    return make_dataset(triples, n=len(rows), m=m, mode=IMPLICIT)
