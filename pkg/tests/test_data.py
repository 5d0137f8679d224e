import json

import numpy as np
import pytest

from sqlrank import data
from sqlrank.data import (DataError, DuplicateObservationError, EmptyDatasetError,
                          EmptySplitError, ParseError, SplitSpec, binarize, load_ratings,
                          split_train_test)

from .conftest import make_dataset


def write(tmp_path, text, name="ratings.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_three_lines(tmp_path):
    ds = load_ratings(write(tmp_path, "u1 i1 5\nu1 i2 3\nu2 i1 4\n"))
    assert (ds.n, ds.m, len(ds)) == (2, 2, 3)
    assert ds.entries == [(0, 0, 5), (0, 1, 3), (1, 0, 4)]
    assert ds.user_ids == ("u1", "u2")


@pytest.mark.parametrize("text,delim", [
    ("a,b,5\nc,b,4\n", "auto"),
    ("a\tb\t5\nc\tb\t4\n", "auto"),
    ("a::b::5::978300760\nc::b::4::978300761\n", "::"),
])
def test_delimiters(tmp_path, text, delim):
    ds = load_ratings(write(tmp_path, text), delimiter=delim)
    assert ds.entries == [(0, 0, 5), (1, 0, 4)]


def test_autodetect_double_colon(tmp_path):
    ds = load_ratings(write(tmp_path, "a::b::5::978300760\n"))
    assert ds.entries == [(0, 0, 5)]


def test_autodetect_rejects_unknown_separator(tmp_path):
    with pytest.raises(DataError):
        load_ratings(write(tmp_path, "a|b|5\n"))


def test_empty_file(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_ratings(write(tmp_path, ""))


def test_duplicate_pair(tmp_path):
    with pytest.raises(DuplicateObservationError):
        load_ratings(write(tmp_path, "u1 i1 5\nu2 i1 3\nu1 i1 4\n"))


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_ratings(write(tmp_path, "u1 i1 5\nu2 i2\n"))
    assert exc.value.lineno == 2
    with pytest.raises(ParseError):
        load_ratings(write(tmp_path, "u1 i1 five\n"))


def test_implicit_load_clips_counts(tmp_path):
    ds = load_ratings(write(tmp_path, "u1 v1 3\nu1 v2 1\nu2 v1 0\n"), mode="implicit")
    assert ds.mode == "implicit"
    assert ds.entries == [(0, 0, 1), (0, 1, 1)]


def test_dataset_invariants():
    with pytest.raises(DataError):
        make_dataset([(0, 5, 1)], n=1, m=3)
    with pytest.raises(DataError):
        make_dataset([(0, 0, 2)], mode="implicit")
    with pytest.raises(DuplicateObservationError):
        make_dataset([(0, 0, 2), (0, 0, 3)])


def test_binarize_threshold_four():
    ds = make_dataset([(0, j, s) for j, s in enumerate([5, 4, 3, 2, 1])])
    out = binarize(ds, 4)
    assert out.mode == "implicit"
    assert out.entries == [(0, 0, 1), (0, 1, 1)]


def test_binarize_extremes():
    ds = make_dataset([(0, j, s) for j, s in enumerate([5, 4, 3, 2, 1])])
    assert len(binarize(ds, 1)) == 5
    assert len(binarize(ds, 6)) == 0
    with pytest.raises(DataError):
        binarize(binarize(ds, 4), 1)


def _user_with(count, user, start=0):
    return [(user, start + j, 1 + j % 5) for j in range(count)]


def test_split_drops_small_users():
    ds = make_dataset(_user_with(19, 0) + _user_with(25, 1), m=30)
    train, test = split_train_test(ds, SplitSpec(20, 10, seed=1))
    assert train.n == test.n == 1
    assert train.user_ids == (ds.user_ids[1],)
    assert len(train) == 10 and len(test) == 15
    assert train.m == test.m == ds.m


def test_split_exact_minimum():
    ds = make_dataset(_user_with(20, 0), m=20)
    train, test = split_train_test(ds, SplitSpec(20, 10, seed=3))
    assert len(train) == 10 and len(test) == 10
    assert not set(train.items.tolist()) & set(test.items.tolist())


def test_split_round_trip_and_determinism(rng):
    triples = [(i, int(j), int(rng.integers(1, 6)))
               for i in range(30) for j in rng.choice(50, size=rng.integers(5, 40), replace=False)]
    ds = make_dataset(triples, n=30, m=50)
    spec = SplitSpec(15, 8, seed=11)
    a = split_train_test(ds, spec)
    b = split_train_test(ds, spec)
    for x, y in zip(a, b):
        assert x.entries == y.entries
    train, test = a
    original = {(ds.user_ids[u], j, s) for u, j, s in ds.entries}
    kept = {(train.user_ids[u], j, s) for u, j, s in train.entries + test.entries}
    assert len(train) + len(test) == len(kept)
    survivors = set(train.user_ids)
    assert kept == {t for t in original if t[0] in survivors}
    assert np.all(np.bincount(train.users, minlength=train.n) == 8)


def test_split_empty():
    ds = make_dataset(_user_with(5, 0))
    with pytest.raises(EmptySplitError):
        split_train_test(ds, SplitSpec(20, 10))


def test_split_spec_invariant():
    with pytest.raises(ValueError):
        SplitSpec(10, 10)


def test_export_and_reload_share_index_space(tmp_path, rng):
    triples = [(f"u{i}", f"m{j}", int(rng.integers(1, 6)))
               for i in range(12) for j in rng.choice(40, size=25, replace=False)]
    write(tmp_path, "".join(f"{u},{j},{s}\n" for u, j, s in triples))
    ds = load_ratings(tmp_path / "ratings.txt")
    train, test = split_train_test(ds, SplitSpec(20, 10, seed=5))
    data.save_ratings(train, tmp_path / "train.txt")
    data.save_ratings(test, tmp_path / "test.txt")
    data.save_id_map(train, tmp_path / "idmap.json")
    id_map = data.read_id_map(tmp_path / "idmap.json")
    assert json.loads((tmp_path / "idmap.json").read_text())["users"]["u0"] == 0
    train2 = data.load_split_file(tmp_path / "train.txt", id_map)
    test2 = data.load_split_file(tmp_path / "test.txt", id_map)
    assert train2.entries == train.entries
    assert test2.entries == test.entries
    # bijection back to the original identifiers
    orig = {(u, j): s for u, j, s in triples}
    for u, j, s in train2.entries:
        assert orig[(train2.user_ids[u], train2.item_ids[j])] == s
