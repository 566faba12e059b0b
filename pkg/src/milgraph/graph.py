"""Turn bags into graphs by thresholding pairwise Euclidean distance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

INF = math.inf


@dataclass
class BagGraph:
    adjacency: np.ndarray  # K x K, entries in {0, 1}
    features: np.ndarray  # K x D
    label: int
    bag_id: str
    self_loops: bool = False

    @property
    def size(self):
        return self.adjacency.shape[0]

    def neighbor_lists(self):
        return neighbor_lists(self)

    def mean_operator(self):
        """Row k averages the set N(k) and k itself, so a stored self-loop
        does not count the node twice."""
        m = self.adjacency.copy()
        np.fill_diagonal(m, 1.0)
        return m / m.sum(axis=1, keepdims=True)


def parse_eta(text):
    """Accept a float, ``INF`` or a percentile such as ``p50``."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    if s.upper() in ("INF", "+INF", "INFINITY"):
        return INF
    if s.lower().startswith("p"):
        q = float(s[1:])
        if not 0 <= q <= 100:
            raise ValueError(f"percentile out of range: {s}")
        return s.lower()
    value = float(s)
    if value < 0:
        raise ValueError(f"eta must be >= 0, got {value}")
    return value


def pairwise_distances(x):
    return squareform(pdist(x, metric="euclidean"))


def resolve_eta(eta, bags):
    """Map a percentile request to a distance using within-bag pairs of ``bags``.

    Only the bags passed in are read, so callers pass training bags.
    """
    if not isinstance(eta, str):
        return float(eta)
    q = float(eta[1:])
    dists = []
    for b in bags:
        if b.size > 1:
            d = pairwise_distances(b.instances)
            dists.append(d[np.triu_indices(b.size, 1)])
    if not dists:
        return 0.0
    return float(np.percentile(np.concatenate(dists), q))


def build_graph(bag, eta, self_loops=False):
    """A_mn = 1 iff m != n and ||x_m - x_n|| < eta (strict)."""
    if isinstance(eta, str):
        raise ValueError("percentile eta must be resolved with resolve_eta first")
    if eta < 0 or math.isnan(eta):
        raise ValueError(f"eta must be >= 0, got {eta}")
    x = bag.instances
    k = x.shape[0]
    if math.isinf(eta):
        adj = np.ones((k, k)) - np.eye(k)
    elif eta == 0:
        adj = np.zeros((k, k))
    else:
        adj = (pairwise_distances(x) < eta).astype(np.float64)
        np.fill_diagonal(adj, 0.0)
    if self_loops and eta > 0:
        np.fill_diagonal(adj, 1.0)
    return BagGraph(adj, x, bag.label, bag.id, self_loops)


def build_graphs(bags, eta, self_loops=False):
    return [build_graph(b, eta, self_loops) for b in bags]


def neighbor_lists(graph):
    return [np.flatnonzero(row).tolist() for row in graph.adjacency]


class GraphBatch:
    """Several graphs stacked block-diagonally for layer-wise batching."""

    def __init__(self, graphs):
        self.graphs = list(graphs)
        sizes = [g.size for g in self.graphs]
        self.offsets = np.cumsum([0] + sizes)
        self.features = np.vstack([g.features for g in self.graphs])

    def __len__(self):
        return len(self.graphs)

    def bounds(self, i):
        return int(self.offsets[i]), int(self.offsets[i + 1])

    def mean_operator(self):
        return sp.block_diag([g.mean_operator() for g in self.graphs], format="csr")
