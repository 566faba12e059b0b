"""Synthetic MIL bags with a planted positive signal."""
from __future__ import annotations

import numpy as np

from .data import Bag, Dataset


def planted_bags(n_bags=8, dim=4, bag_size=(4, 8), n_planted=2, spread=0.1, center=3.0, seed=0):
    """Half the bags are positive; each positive bag hides ``n_planted``
    instances near ``center * ones(dim)`` among standard-normal background.

    Instance labels mark the planted rows.
    """
    rng = np.random.default_rng(seed)
    target = np.full(dim, center)
    bags = []
    for i in range(n_bags):
        label = i % 2
        k = int(rng.integers(bag_size[0], bag_size[1] + 1))
        x = rng.standard_normal((k, dim))
        inst = np.zeros(k, dtype=int)
        if label:
            rows = rng.choice(k, size=min(n_planted, k), replace=False)
            x[rows] = target + spread * rng.standard_normal((len(rows), dim))
            inst[rows] = 1
        bags.append(Bag(f"b{i}", label, x, inst))
    return Dataset("planted", bags)
