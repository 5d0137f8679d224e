"""Listwise negative log-likelihood of a low-rank score matrix and its gradients.

Scores are ``X = U.T @ V`` with ``U`` of shape ``(r, n)`` and ``V`` of shape
``(r, m)``. For one user with ranked list ``p`` of length ``L`` and cutoff
``K = min(k, L)`` the data term is::

    -sum_{t < K} [ sigmoid(h_t) - log sum_{l >= t} phi(h_l) ],   h_t = u . v_{p_t}

Users are processed in fixed-size chunks of padded ``(users, L)`` arrays; the
chunking does not depend on the thread count, so results are bit-identical
for any ``threads`` value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

# Budget (in float64 elements) for the per-chunk (users, L, r) gather.
_CHUNK_BUDGET = 1 << 22


@dataclass(eq=False)
class FactorModel:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[0] != self.V.shape[0]:
            raise ValueError(f"incompatible factor shapes {self.U.shape}, {self.V.shape}")

    @property
    def r(self):
        return self.U.shape[0]

    @property
    def n(self):
        return self.U.shape[1]

    @property
    def m(self):
        return self.V.shape[1]

    def scores(self, users=None):
        U = self.U if users is None else self.U[:, users]
        return U.T @ self.V

    def copy(self):
        return FactorModel(self.U.copy(), self.V.copy())


@dataclass(frozen=True)
class LossValue:
    data_term: float
    reg_term: float

    @property
    def total(self):
        return self.data_term + self.reg_term


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("SQLRANK_THREADS", "1") or 1)
    return max(1, int(threads))


def _cutoff(k, lengths):
    if k is None or k == "full":
        return lengths
    if int(k) < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    return np.minimum(int(k), lengths)


def _chunks(pi, r, budget=None, quadratic=False):
    budget = _CHUNK_BUDGET if budget is None else budget
    lengths = pi.lengths
    if not len(lengths):
        return []
    width = max(int(lengths.max()), 1)
    if len(lengths) * width * (width if quadratic else max(r, 1)) <= budget:
        return [(0, len(lengths))]
    bounds = [0]
    width = 0
    for i, length in enumerate(lengths):
        width = max(width, int(length))
        size = (i + 1 - bounds[-1]) * max(width, 1)
        size *= max(width, 1) if quadratic else max(r, 1)
        if size > budget and i > bounds[-1]:
            bounds.append(i)
            width = int(length)
    bounds.append(len(lengths))
    return [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _padded(pi, lo, hi):
    lengths = pi.lengths[lo:hi]
    width = int(lengths.max()) if len(lengths) else 0
    mask = np.arange(width) < lengths[:, None]
    P = np.zeros((hi - lo, width), dtype=np.int64)
    P[mask] = pi.items[pi.indptr[lo]:pi.indptr[hi]]
    return P, mask, lengths


def _map_chunks(fn, chunks, threads):
    threads = resolve_threads(threads)
    if threads == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _check(model, pi):
    if pi.n != model.n:
        raise ValueError(f"permutation matrix has {pi.n} users, model has {model.n}")
    if len(pi.items) and pi.items.max() >= model.m:
        raise ValueError("permutation matrix references items beyond the model")


def _reg(model, lam):
    return 0.5 * lam * (np.sum(model.U ** 2) + np.sum(model.V ** 2))


def _chunk_terms(model, pi, k, lo, hi):
    P, mask, lengths = _padded(pi, lo, hi)
    Vg = model.V.T[P]                              # (users, L, r)
    h = np.einsum("ulr,ru->ul", Vg, model.U[:, lo:hi])
    g = expit(h)
    w = np.where(mask, np.exp(g), 0.0)
    suffix = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
    top = np.arange(P.shape[1]) < _cutoff(k, lengths)[:, None]
    return P, mask, Vg, g, w, suffix, top


def loss(model, pi, k=None, lam=0.0, threads=None):
    """Regularized negative log-likelihood of ``pi``; linear in the list lengths."""
    _check(model, pi)

    def part(bounds):
        lo, hi = bounds
        _, _, _, g, _, suffix, top = _chunk_terms(model, pi, k, lo, hi)
        safe = np.where(top, suffix, 1.0)
        return -np.sum(np.where(top, g - np.log(safe), 0.0))

    data = sum(_map_chunks(part, _chunks(pi, model.r), threads), 0.0)
    return LossValue(float(data), float(_reg(model, lam)))


def grad_fast(model, pi, k=None, lam=0.0, threads=None):
    """Exact gradient ``(gU, gV)`` in O(total list length * r).

    Per user, with suffix sums ``S_t`` and ``T_t = sum_{tau <= t, tau < K} 1/S_tau``,
    the derivative with respect to score ``h_t`` is
    ``-g'(h_t) [t < K] + phi(h_t) g'(h_t) T_t``.
    """
    _check(model, pi)

    def part(bounds):
        lo, hi = bounds
        P, mask, Vg, g, w, suffix, top = _chunk_terms(model, pi, k, lo, hi)
        dg = g * (1.0 - g)
        inv = np.where(top, 1.0 / np.where(top, suffix, 1.0), 0.0)
        running = np.cumsum(inv, axis=1)
        c = np.where(mask, w * dg * running - dg * top, 0.0)
        gU = np.einsum("ul,ulr->ru", c, Vg)
        # items are distinct within a row, so this is a plain scatter-add
        C = sp.csr_matrix((c[mask], P[mask], pi.indptr[lo:hi + 1] - pi.indptr[lo]),
                          shape=(hi - lo, model.m))
        gV = np.asarray(C.T @ model.U[:, lo:hi].T).T
        return lo, hi, gU, gV

    gU = lam * model.U
    gV = lam * model.V
    for lo, hi, pu, pv in _map_chunks(part, _chunks(pi, model.r), threads):
        gU[:, lo:hi] += pu
        gV += pv
    return gU, gV


def grad_naive(model, pi, k=None, lam=0.0, threads=None):
    """Reference gradient built from the full position-by-position Jacobian.

    Every denominator ``sum_{l >= tau} phi(h_l)`` is summed directly and every
    (term, position) pair is materialized, so the cost is O(total L^2 + L r).
    Intended as a correctness oracle for :func:`grad_fast`.
    """
    _check(model, pi)

    def part(bounds):
        lo, hi = bounds
        P, mask, lengths = _padded(pi, lo, hi)
        L = P.shape[1]
        Vg = model.V.T[P]
        Ub = model.U[:, lo:hi]
        h = np.einsum("ulr,ru->ul", Vg, Ub)
        g = 1.0 / (1.0 + np.exp(-h))
        w = np.exp(g) * mask
        dg = g * (1.0 - g)
        pos = np.arange(L)
        later = pos[None, :] >= pos[:, None]                    # [tau, t]: t >= tau
        denom = np.einsum("tl,ul->ut", later.astype(float), w)  # sum_{l >= tau} w_l
        active = pos[None, :] < _cutoff(k, lengths)[:, None]    # term tau is in the sum
        # J[u, tau, t] = d(term tau)/d h_t
        J = (later[None] * active[:, :, None]) * (w * dg)[:, None, :] \
            / np.where(active, denom, 1.0)[:, :, None]
        J -= np.eye(L)[None] * (dg * active)[:, :, None]
        c = J.sum(axis=1) * mask
        gU = np.einsum("ul,ulr->ru", c, Vg)
        gV = np.zeros_like(model.V)
        for row in range(hi - lo):
            length = lengths[row]
            gV[:, P[row, :length]] += np.outer(Ub[:, row], c[row, :length])
        return lo, hi, gU, gV

    gU = lam * model.U
    gV = lam * model.V
    chunks = _chunks(pi, model.r, quadratic=True)
    for lo, hi, pu, pv in _map_chunks(part, chunks, threads):
        gU[:, lo:hi] += pu
        gV += pv
    return gU, gV
