"""Regenerate tests/fixtures/tiny_ratings.dat (MovieLens-style ``::`` lines)."""

import sys
from pathlib import Path

import numpy as np


def main(path):
    rng = np.random.default_rng(2018)
    n, m, r = 50, 200, 3
    X = rng.standard_normal((n, r)) @ rng.standard_normal((r, m))
    lines = []
    for i in range(n):
        count = int(rng.integers(100, 190))
        items = rng.choice(m, size=count, replace=False)
        noisy = X[i, items] + 0.5 * rng.standard_normal(count)
        levels = 1 + (5 * np.argsort(np.argsort(noisy))) // count
        for j, s in zip(items, levels):
            lines.append(f"{1000 + i}::{5000 + int(j)}::{int(s)}::{978300000 + len(lines)}")
    Path(path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/tiny_ratings.dat")
