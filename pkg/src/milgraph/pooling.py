"""Graph-level aggregation: differentiable pooling and attention pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import SageLayer, mlp_forward


@dataclass
class AssignmentMatrix:
    s: Tensor  # K x C, row-stochastic
    logits: Tensor  # pre-softmax cluster scores
    bag_id: str = ""

    @property
    def n_clusters(self):
        return self.s.shape[1]


@dataclass
class CoarseGraph:
    features: Tensor  # C x D'
    adjacency: Tensor  # C x C, real valued


def assign_clusters(graph, cluster_logits):
    if cluster_logits.shape[1] < 1:
        raise ValueError("need at least one cluster")
    bag_id = getattr(graph, "bag_id", "")
    return AssignmentMatrix(ad.softmax_rows(cluster_logits), cluster_logits, bag_id)


def diff_pool(s, z, adjacency):
    """Coarsen to C nodes: features S^T Z, adjacency S^T A S."""
    if isinstance(s, AssignmentMatrix):
        s = s.s
    st = ad.transpose(s)
    feats = ad.matmul(st, z)
    adj = ad.matmul(st, ad.sparse_matmul(np.asarray(adjacency, dtype=np.float64), s))
    return CoarseGraph(feats, adj)


def link_pred_loss(s, adjacency, normalize=False):
    """||A - S S^T||_F, optionally divided by K^2."""
    if isinstance(s, AssignmentMatrix):
        s = s.s
    diff = ad.sub(np.asarray(adjacency, dtype=np.float64), ad.matmul(s, ad.transpose(s)))
    loss = ad.frobenius_norm(diff)
    if normalize:
        k = s.shape[0]
        loss = ad.scale(loss, 1.0 / (k * k))
    return loss


def attention_pool(z, att_mlp):
    """Softmax-over-instances weighted sum of rows of ``z``.

    Returns the 1 x D' pooled row and the K x 1 attention weights.
    """
    scores = mlp_forward(att_mlp, z)
    if scores.shape[1] != 1:
        raise ValueError(f"attention MLP must emit one score per instance, got {scores.shape[1]}")
    return attention_from_scores(z, scores)


def attention_from_scores(z, scores):
    alpha = ad.softmax_rows(ad.transpose(scores))  # 1 x K
    return ad.matmul(alpha, z), ad.transpose(alpha)


def coarse_sage_forward(coarse, layer: SageLayer):
    """SAGE-mean on the coarsened graph.

    Off-diagonal entries of A* act as neighbour weights and the node itself
    has weight 1; on a 0/1 adjacency this is the ordinary neighbourhood mean.
    """
    c = coarse.features.shape[0]
    if c == 1:
        agg = coarse.features
    else:
        off = ad.mul(coarse.adjacency, 1.0 - np.eye(c))
        w = ad.add(off, np.eye(c))
        deg = ad.matmul(w, np.ones((c, 1)))
        agg = ad.div(ad.matmul(w, coarse.features), deg)
    return ad.leaky_relu(layer.linear(agg), layer.slope)


def readout(h, mode="max"):
    """Reduce C x D' cluster embeddings to a single row."""
    c = h.shape[0]
    if c == 1:
        return h
    if mode == "max":
        return ad.max_rows(h)
    if mode == "concat":
        return ad.concat_cols([ad.slice_rows(h, i, i + 1) for i in range(c)])
    raise ValueError(f"unknown readout mode {mode!r}")


def node_pool(x, mode="max"):
    """Pool node rows for the deep-supervision heads."""
    if mode == "max":
        return ad.max_rows(x)
    if mode == "mean":
        return ad.col_mean(x)
    raise ValueError(f"unknown node pooling {mode!r}")
