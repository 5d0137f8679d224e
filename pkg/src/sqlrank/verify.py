"""Self-contained numerical checks: gradients, normalization, sampler, scaling."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from ._random import substream
from .data import EXPLICIT, IMPLICIT, RatingsDataset
from .objective import FactorModel, grad_fast, grad_naive, loss
from .perm_model import (PermutationMatrix, log_permutation_probability,
                         sample_permutation_exponential, stochastic_queue)

FD_STEP = 1e-5
FD_TOL = 1e-5
FD_FLOOR = 1e-3
KERNEL_TOL = 1e-10
NORM_TOL = 1e-12
TV_TOL = 0.02
MC_NOMINAL = 100_000
FAST_BAND = (1.6, 2.6)
NAIVE_MIN = 3.2


def random_instance(rng, n=5, m=8, r=3, rho=0.0, lam=0.1):
    """Small random model plus one queued ranking matrix.

    ``rho > 0`` builds implicit data (so negatives are appended); otherwise
    explicit 1-5 ratings with ties.
    """
    users, items, scores = [], [], []
    implicit = rho > 0
    for i in range(n):
        count = int(rng.integers(1, 3)) if implicit else int(rng.integers(1, m + 1))
        for j in rng.choice(m, size=count, replace=False):
            users.append(i)
            items.append(int(j))
            scores.append(1 if implicit else int(rng.integers(1, 6)))
    ds = RatingsDataset(n=n, m=m, users=users, items=items, scores=scores,
                        mode=IMPLICIT if implicit else EXPLICIT)
    pi = stochastic_queue(ds, rho, rng)
    model = FactorModel(rng.standard_normal((r, n)), rng.standard_normal((r, m)))
    return model, pi, lam


def gradient_instances(seed=0, count=20):
    """``count`` instances cycling through k in {2, full} and rho in {0, 2}."""
    rng = substream(seed, "grad-instances")
    out = []
    for idx in range(count):
        k = 2 if idx % 2 == 0 else None
        rho = 0.0 if (idx // 2) % 2 == 0 else 2.0
        model, pi, lam = random_instance(rng, rho=rho)
        out.append((model, pi, k, lam))
    return out


def ragged_instances(seed=0):
    """Extra kernel cases: very uneven list lengths, empty rows, k < L, long lists."""
    rng = substream(seed, "ragged")
    m, r = 30, 4
    cases = []
    for k in (None, 1, 3, 7):
        lengths = [0, 1, 2, 5, 13, 30, 9]
        rows = [rng.permutation(m)[:L] for L in lengths]
        pi = PermutationMatrix.from_rows(rows, m)
        model = FactorModel(rng.standard_normal((r, len(rows))), rng.standard_normal((r, m)))
        cases.append((model, pi, k, 0.05))
    for rho in (1.0, 3.0):
        ds_users = np.repeat(np.arange(6), [1, 2, 3, 4, 5, 6])
        ds_items = np.concatenate([rng.choice(m, size=c, replace=False) for c in range(1, 7)])
        ds = RatingsDataset(n=6, m=m, users=ds_users, items=ds_items,
                            scores=np.ones(len(ds_users), int), mode=IMPLICIT)
        pi = stochastic_queue(ds, rho, rng)
        model = FactorModel(rng.standard_normal((r, 6)), rng.standard_normal((r, m)))
        cases.append((model, pi, None, 0.0))
    return cases


def finite_difference_grad(model, pi, k, lam, step=FD_STEP):
    """Central differences of the total loss, one coordinate at a time."""
    grads = []
    for name in ("U", "V"):
        base = getattr(model, name)
        out = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            vals = []
            for sign in (1, -1):
                trial = model.copy()
                getattr(trial, name)[idx] += sign * step
                vals.append(loss(trial, pi, k, lam).total)
            out[idx] = (vals[0] - vals[1]) / (2 * step)
        grads.append(out)
    return tuple(grads)


def relative_error(a, b, floor):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor),
                        initial=0.0))


def check_finite_difference(instances):
    worst = 0.0
    for model, pi, k, lam in instances:
        gU, gV = grad_naive(model, pi, k, lam)
        fU, fV = finite_difference_grad(model, pi, k, lam)
        worst = max(worst, relative_error(gU, fU, FD_FLOOR), relative_error(gV, fV, FD_FLOOR))
    return {"name": "finite_difference", "max_rel_error": worst, "tolerance": FD_TOL,
            "instances": len(instances), "passed": worst < FD_TOL}


def check_kernel_equivalence(instances, fast=grad_fast):
    worst = 0.0
    for model, pi, k, lam in instances:
        a = fast(model, pi, k, lam)
        b = grad_naive(model, pi, k, lam)
        for x, y in zip(a, b):
            worst = max(worst, relative_error(x, y, 1e-12))
    return {"name": "fast_vs_naive", "max_rel_error": worst, "tolerance": KERNEL_TOL,
            "instances": len(instances), "passed": worst < KERNEL_TOL}


def enumeration_total(s):
    return math.fsum(math.exp(log_permutation_probability(s, pi))
                     for pi in itertools.permutations(range(len(s))))


def check_normalization(seed=0, count=10):
    rng = substream(seed, "normalization")
    worst = 0.0
    for idx in range(count):
        s = 3.0 * rng.standard_normal(2 + idx % 5)
        worst = max(worst, abs(enumeration_total(s) - 1.0))
    return {"name": "normalization", "max_abs_error": worst, "tolerance": NORM_TOL,
            "vectors": count, "passed": worst < NORM_TOL}


def monte_carlo_table(s, samples, rng):
    """Empirical vs model probability for every ordering of ``len(s)`` items."""
    draws = sample_permutation_exponential(s, rng, size=samples)
    m = len(s)
    codes = draws @ (m ** np.arange(m - 1, -1, -1))
    freq = np.bincount(codes, minlength=m ** m) / samples
    table = []
    for perm in itertools.permutations(range(m)):
        code = sum(p * m ** (m - 1 - i) for i, p in enumerate(perm))
        table.append({"permutation": list(perm), "empirical": float(freq[code]),
                      "model": math.exp(log_permutation_probability(s, perm))})
    return table


def tv_threshold(probs, samples, z=3.0):
    """TV tolerance: nominal 0.02, widened by binomial standard errors for small N."""
    if samples >= MC_NOMINAL:
        return TV_TOL
    se = np.sqrt(np.asarray(probs) * (1 - np.asarray(probs)) / samples)
    return max(TV_TOL, float(0.5 * z * se.sum()))


def check_monte_carlo(seed=0, samples=MC_NOMINAL, s=(1.0, -1.0, 0.5, 2.0)):
    table = monte_carlo_table(np.asarray(s, float), samples, substream(seed, "mc"))
    tv = 0.5 * sum(abs(row["empirical"] - row["model"]) for row in table)
    threshold = tv_threshold([row["model"] for row in table], samples)
    return {"name": "monte_carlo", "samples": samples, "tv_distance": tv,
            "threshold": threshold, "widened": threshold > TV_TOL,
            "passed": tv < threshold, "table": table}


def timing_ratio(fn, model, pi_small, pi_large, repeats=7):
    def best(pi):
        fn(model, pi)
        t = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(model, pi)
            t = min(t, time.perf_counter() - t0)
        return t
    small, large = best(pi_small), best(pi_large)
    return small, large, large / small


def check_timing(seed=0, n=100, r=10, lengths=(200, 400), m=1000):
    rng = substream(seed, "timing")
    model = FactorModel(0.1 * rng.standard_normal((r, n)), 0.1 * rng.standard_normal((r, m)))
    pis = [PermutationMatrix.from_rows([rng.permutation(m)[:L] for _ in range(n)], m)
           for L in lengths]
    fs, fl, fast_ratio = timing_ratio(grad_fast, model, *pis)
    ns, nl, naive_ratio = timing_ratio(grad_naive, model, *pis, repeats=5)
    passed = FAST_BAND[0] <= fast_ratio <= FAST_BAND[1] and naive_ratio > NAIVE_MIN
    return {"name": "timing", "lengths": list(lengths),
            "fast_seconds": [fs, fl], "fast_ratio": fast_ratio, "fast_band": list(FAST_BAND),
            "naive_seconds": [ns, nl], "naive_ratio": naive_ratio, "naive_min": NAIVE_MIN,
            "passed": passed}


def perturbed(fn, amount):
    def wrapped(*args, **kwargs):
        return tuple(g + amount for g in fn(*args, **kwargs))
    return wrapped


def run_all(seed=0, mc_samples=MC_NOMINAL, inject_fault=False):
    instances = gradient_instances(seed)
    fast = perturbed(grad_fast, 1e-3) if inject_fault else grad_fast
    return [
        check_finite_difference(instances[:6]),
        check_kernel_equivalence(instances + ragged_instances(seed), fast=fast),
        check_normalization(seed),
        check_monte_carlo(seed, mc_samples),
        check_timing(seed),
    ]
