import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlrank.objective import FactorModel, grad_fast, grad_naive, loss
from sqlrank.perm_model import PermutationMatrix, log_permutation_probability, stochastic_queue

from .conftest import implicit_dataset, make_dataset


def random_model(rng, n, m, r, scale=1.0):
    return FactorModel(scale * rng.standard_normal((r, n)), scale * rng.standard_normal((r, m)))


def random_rows(rng, n, m, lo=1, hi=None):
    hi = m if hi is None else hi
    return PermutationMatrix.from_rows(
        [rng.permutation(m)[:rng.integers(lo, hi + 1)] for _ in range(n)], m)


def fd_gradient(model, pi, k, lam, step=1e-5):
    out = []
    for name in ("U", "V"):
        base = getattr(model, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            plus, minus = model.copy(), model.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            g[idx] = (loss(plus, pi, k, lam).total - loss(minus, pi, k, lam).total) / (2 * step)
        out.append(g)
    return out


def rel_err(a, b, floor):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def test_loss_all_equal_scores():
    model = FactorModel(np.zeros((2, 1)), np.zeros((2, 2)))
    pi = PermutationMatrix.from_rows([[0, 1]], 2)
    value = loss(model, pi, 2, 0.0)
    assert value.data_term == pytest.approx(math.log(2), rel=1e-15)
    assert value.reg_term == 0.0


def test_loss_single_item_lists(rng):
    model = random_model(rng, 4, 6, 3)
    pi = PermutationMatrix.from_rows([[j] for j in (0, 3, 5, 1)], 6)
    assert loss(model, pi, None, 0.0).data_term == pytest.approx(0.0, abs=1e-15)


def test_loss_matches_permutation_model(rng):
    model = random_model(rng, 3, 9, 4)
    pi = PermutationMatrix.from_rows([rng.permutation(9)[:5] for _ in range(3)], 9)
    X = model.scores()
    expected = 0.0
    for i in range(3):
        row = pi.row(i)
        expected -= log_permutation_probability(X[i, row], np.arange(5), 5)
    assert loss(model, pi, 5, 0.0).data_term == pytest.approx(expected, rel=1e-13)


def test_loss_regularizer(rng):
    model = random_model(rng, 3, 4, 2)
    value = loss(model, PermutationMatrix.from_rows([[], [], []], 4), None, 0.7)
    expected = 0.35 * (np.sum(model.U ** 2) + np.sum(model.V ** 2))
    assert value.reg_term == pytest.approx(expected)
    assert value.total == value.data_term + value.reg_term


def test_loss_user_exchangeable(rng):
    model = random_model(rng, 6, 10, 3)
    pi = random_rows(rng, 6, 10)
    order = rng.permutation(6)
    shuffled = FactorModel(model.U[:, order], model.V)
    assert loss(shuffled, pi.take_users(order), None, 0.1).total == pytest.approx(
        loss(model, pi, None, 0.1).total, rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_monotone_in_cutoff(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 8, 2, scale=2.0)
    pi = random_rows(rng, 4, 8)
    values = [loss(model, pi, k, 0.0).data_term for k in range(1, 9)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] == loss(model, pi, None, 0.0).data_term


def test_pure_regularizer_gradient(rng):
    model = random_model(rng, 0, 5, 3)
    empty = PermutationMatrix.from_rows([], 5)
    for fn in (grad_naive, grad_fast):
        gU, gV = fn(model, empty, None, 1.0)
        assert gU.shape == (3, 0)
        np.testing.assert_array_equal(gV, model.V)


def test_no_signal_zero_gradient(rng):
    model = random_model(rng, 4, 6, 3)
    pi = PermutationMatrix.from_rows([[j] for j in (0, 3, 5, 1)], 6)
    for fn in (grad_naive, grad_fast):
        gU, gV = fn(model, pi, None, 0.0)
        assert np.max(np.abs(gU)) < 1e-15 and np.max(np.abs(gV)) < 1e-15


def test_step_of_one_over_lambda_zeroes_model(rng):
    model = random_model(rng, 4, 6, 3)
    pi = PermutationMatrix.from_rows([[j] for j in (0, 3, 5, 1)], 6)
    lam = 2.5
    gU, gV = grad_fast(model, pi, None, lam)
    assert np.max(np.abs(model.U - gU / lam)) < 1e-15
    assert np.max(np.abs(model.V - gV / lam)) < 1e-15


@pytest.mark.parametrize("k", [None, 2, 4])
def test_naive_matches_finite_differences(k):
    rng = np.random.default_rng(100 + (k or 0))
    model = random_model(rng, 5, 8, 3)
    pi = random_rows(rng, 5, 8)
    gU, gV = grad_naive(model, pi, k, 0.1)
    fU, fV = fd_gradient(model, pi, k, 0.1)
    assert rel_err(gU, fU, 1e-3) < 1e-5
    assert rel_err(gV, fV, 1e-3) < 1e-5


def test_short_lists_exact(rng):
    model = random_model(rng, 6, 7, 3)
    pi = random_rows(rng, 6, 7, lo=1, hi=2)
    for k in (None, 1):
        a = grad_fast(model, pi, k, 0.2)
        b = grad_naive(model, pi, k, 0.2)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([None, 1, 2, 3, 6]))
def test_fast_equals_naive(seed, k):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 5, 8, 3)
    pi = random_rows(rng, 5, 8, lo=0)
    a = grad_fast(model, pi, k, 0.05)
    b = grad_naive(model, pi, k, 0.05)
    for x, y in zip(a, b):
        assert rel_err(x, y, 1e-12) < 1e-10


def test_fast_equals_naive_implicit_rows(rng):
    ds = implicit_dataset([[0, 4], [1], [2, 3, 7], [9]], m=15)
    pi = stochastic_queue(ds, rho=3, rng=rng)
    model = random_model(rng, 4, 15, 5)
    for k in (None, 2):
        for x, y in zip(grad_fast(model, pi, k, 0.0), grad_naive(model, pi, k, 0.0)):
            assert rel_err(x, y, 1e-12) < 1e-10


def test_chunking_and_threads_bit_identical(rng, monkeypatch):
    from sqlrank import objective

    model = random_model(rng, 40, 30, 4)
    pi = random_rows(rng, 40, 30)
    ref = grad_fast(model, pi, None, 0.1)
    monkeypatch.setattr(objective, "_CHUNK_BUDGET", 500)
    assert len(objective._chunks(pi, model.r)) > 1
    chunked = grad_fast(model, pi, None, 0.1, threads=1)
    threaded = grad_fast(model, pi, None, 0.1, threads=3)
    for x, y, z in zip(ref, chunked, threaded):
        np.testing.assert_allclose(x, y, rtol=1e-12)
        np.testing.assert_array_equal(y, z)
    assert loss(model, pi, None, 0.1, threads=3).total == pytest.approx(
        loss(model, pi, None, 0.1).total, rel=1e-13)


def test_mismatched_shapes(rng):
    model = random_model(rng, 2, 4, 2)
    with pytest.raises(ValueError):
        loss(model, PermutationMatrix.from_rows([[0]], 4))
    with pytest.raises(ValueError):
        grad_fast(model, PermutationMatrix.from_rows([[0], [7]], 8))
    with pytest.raises(ValueError):
        FactorModel(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        loss(model, PermutationMatrix.from_rows([[0], [1]], 4), k=0)


def test_explicit_queue_feeds_gradient(rng):
    ds = make_dataset([(0, 0, 5), (0, 1, 5), (0, 2, 1), (1, 2, 4), (1, 3, 4)], m=5)
    pi = stochastic_queue(ds, rng=rng)
    model = random_model(rng, 2, 5, 2)
    for x, y in zip(grad_fast(model, pi), grad_naive(model, pi)):
        assert rel_err(x, y, 1e-12) < 1e-10
