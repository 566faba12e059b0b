"""The graph MIL network: embedding GNN, pooling, classifier and DS heads."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphBatch
from .layers import SLOPE, Linear, MlpBlock, NormState, SageLayer, mlp_forward, norm_forward, sage_forward
from .pooling import (
    assign_clusters,
    attention_from_scores,
    coarse_sage_forward,
    diff_pool,
    link_pred_loss,
    node_pool,
    readout,
)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    pool: str = "diffpool"
    eta: float | str = math.inf
    clusters: int = 1
    readout: str = "max"
    ds_weight: float = 0.5
    lp_weight: float = 0.5
    lp_normalize: bool = True
    ds_pool: str = "max"
    embed_dim: int | None = None
    self_loops: bool = False
    cluster_input: str = "V"
    sage_bias: bool = True
    slope: float = SLOPE
    norm_momentum: float = 0.1

    def validate(self):
        if self.pool not in ("diffpool", "attention"):
            raise ValueError(f"pool must be diffpool or attention, got {self.pool!r}")
        if self.clusters not in (1, 2):
            raise ValueError(f"clusters must be 1 or 2, got {self.clusters}")
        if self.readout not in ("max", "concat"):
            raise ValueError(f"readout must be max or concat, got {self.readout!r}")
        if self.ds_pool not in ("max", "mean"):
            raise ValueError(f"ds_pool must be max or mean, got {self.ds_pool!r}")
        if self.cluster_input not in ("V", "Z"):
            raise ValueError(f"cluster_input must be V or Z, got {self.cluster_input!r}")
        if self.ds_weight < 0 or self.lp_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.slope < 0:
            raise ValueError("slope must be >= 0")
        if isinstance(self.eta, (int, float)) and (self.eta < 0 or math.isnan(self.eta)):
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        return self

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.eta, float) and math.isinf(self.eta):
            d["eta"] = "INF"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("eta") == "INF":
            d["eta"] = math.inf
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelParams:
    embd: SageLayer
    embd_norm: NormState
    main: MlpBlock
    ds_embd: MlpBlock
    ds_pool: MlpBlock
    cluster: SageLayer | None = None
    cluster_norm: NormState | None = None
    cluster_mlp: MlpBlock | None = None
    embd2: SageLayer | None = None
    embd2_norm: NormState | None = None
    att: MlpBlock | None = None
    in_dim: int = 0
    n_classes: int = 2

    def named_tensors(self):
        """Flat ``name -> Tensor`` mapping in a fixed order."""
        out = {}
        for name in ("embd", "cluster", "embd2"):
            layer = getattr(self, name)
            if layer is not None:
                out[f"{name}.weight"] = layer.linear.weight
                if layer.linear.bias is not None:
                    out[f"{name}.bias"] = layer.linear.bias
        for name in ("embd_norm", "cluster_norm", "embd2_norm"):
            st = getattr(self, name)
            if st is not None:
                out[f"{name}.gamma"] = st.gamma
                out[f"{name}.beta"] = st.beta
        for name in ("cluster_mlp", "att", "main", "ds_embd", "ds_pool"):
            block = getattr(self, name)
            if block is not None:
                for i, layer in enumerate(block.layers):
                    out[f"{name}.{i}.weight"] = layer.weight
                    out[f"{name}.{i}.bias"] = layer.bias
        return out

    def parameters(self):
        return list(self.named_tensors().values())

    def norm_states(self):
        return {n: getattr(self, n) for n in ("embd_norm", "cluster_norm", "embd2_norm") if getattr(self, n) is not None}


def _half(d):
    return max(1, d // 2)


def init_params(config, in_dim, n_classes=2, rng=None):
    config.validate()
    if rng is None:
        rng = np.random.default_rng(0)
    d = config.embed_dim or in_dim
    bias = config.sage_bias
    slope = config.slope

    def head(width):
        return MlpBlock.init(rng, [width, _half(width), n_classes], slope)

    embd = SageLayer.init(rng, in_dim, d, bias, slope)
    embd_norm = NormState.init(d, config.norm_momentum)
    if config.pool == "attention":
        att = MlpBlock.init(rng, [d, _half(d), 1], slope)
        return ModelParams(embd, embd_norm, head(d), head(d), head(d), att=att, in_dim=in_dim, n_classes=n_classes)
    c_in = in_dim if config.cluster_input == "V" else d
    cluster = SageLayer.init(rng, c_in, c_in, bias, slope)
    cluster_norm = NormState.init(c_in, config.norm_momentum)
    cluster_mlp = MlpBlock.init(rng, [c_in, config.clusters], slope, final_activation=True)
    embd2 = SageLayer.init(rng, d, d, bias, slope)
    embd2_norm = NormState.init(d, config.norm_momentum)
    emb_width = d * config.clusters if (config.clusters > 1 and config.readout == "concat") else d
    return ModelParams(
        embd,
        embd_norm,
        head(emb_width),
        head(d),
        head(d),
        cluster=cluster,
        cluster_norm=cluster_norm,
        cluster_mlp=cluster_mlp,
        embd2=embd2,
        embd2_norm=embd2_norm,
        in_dim=in_dim,
        n_classes=n_classes,
    )


@dataclass
class ForwardOutput:
    logits: Tensor
    ds_logits: list[Tensor]
    embedding: Tensor
    assignment: Tensor | None = None
    cluster_logits: Tensor | None = None
    attention: Tensor | None = None
    attention_scores: Tensor | None = None
    bag_id: str = ""
    extras: dict = field(default_factory=dict)


def forward_batch(params, config, graphs, train=False):
    """Run the network over several graphs; node-level batch norm sees all of them."""
    batch = GraphBatch(graphs)
    v = ad.constant(batch.features)
    z = norm_forward(params.embd_norm, sage_forward(batch, v, params.embd), train)
    outputs = []
    if config.pool == "attention":
        scores = mlp_forward(params.att, z)
        embs, z_pools, alphas = [], [], []
        for i in range(len(batch)):
            a, b = batch.bounds(i)
            zi = ad.slice_rows(z, a, b)
            emb, alpha = attention_from_scores(zi, ad.slice_rows(scores, a, b))
            embs.append(emb)
            z_pools.append(node_pool(zi, config.ds_pool))
            alphas.append(alpha)
        p1, p2, p3 = _heads(params, [embs, z_pools, embs])
        for i, g in enumerate(batch.graphs):
            a, b = batch.bounds(i)
            outputs.append(
                ForwardOutput(
                    logits=p1[i],
                    ds_logits=[p2[i], p3[i]],
                    embedding=embs[i],
                    attention=alphas[i],
                    attention_scores=ad.slice_rows(scores, a, b),
                    bag_id=g.bag_id,
                )
            )
        return outputs

    c_in = v if config.cluster_input == "V" else z
    cl = norm_forward(params.cluster_norm, sage_forward(batch, c_in, params.cluster), train)
    cl = mlp_forward(params.cluster_mlp, cl)
    coarse_rows, pending = [], []
    for i, g in enumerate(batch.graphs):
        a, b = batch.bounds(i)
        zi = ad.slice_rows(z, a, b)
        assign = assign_clusters(g, ad.slice_rows(cl, a, b))
        coarse = diff_pool(assign.s, zi, g.adjacency)
        coarse_rows.append(coarse_sage_forward(coarse, params.embd2))
        pending.append((g, zi, assign, coarse))
    h = norm_forward(params.embd2_norm, ad.concat_rows(coarse_rows), train)
    c = config.clusters
    embs = [readout(ad.slice_rows(h, i * c, (i + 1) * c), config.readout) for i in range(len(pending))]
    z_pools = [node_pool(zi, config.ds_pool) for _, zi, _, _ in pending]
    v_pools = [node_pool(coarse.features, config.ds_pool) for _, _, _, coarse in pending]
    p1, p2, p3 = _heads(params, [embs, z_pools, v_pools])
    for i, (g, zi, assign, coarse) in enumerate(pending):
        outputs.append(
            ForwardOutput(
                logits=p1[i],
                ds_logits=[p2[i], p3[i]],
                embedding=embs[i],
                assignment=assign.s,
                cluster_logits=assign.logits,
                bag_id=g.bag_id,
                extras={"coarse_adjacency": coarse.adjacency},
            )
        )
    return outputs


def _heads(params, inputs):
    """Apply main, DS-embedding and DS-pool heads to stacked bag rows."""
    results = []
    for block, rows in zip((params.main, params.ds_embd, params.ds_pool), inputs):
        out = mlp_forward(block, ad.concat_rows(rows) if len(rows) > 1 else rows[0])
        results.append([ad.slice_rows(out, i, i + 1) for i in range(len(rows))] if len(rows) > 1 else [out])
    return results


def forward(params, config, graph, train=False):
    return forward_batch(params, config, [graph], train)[0]


def loss(output, label, config, graph=None):
    """CE(pred1) + ds_weight * (CE(pred2) + CE(pred3)) + lp_weight * link loss."""
    total = ad.cross_entropy_with_logits(output.logits, label)
    if config.ds_weight:
        ds = ad.add(*(ad.cross_entropy_with_logits(l, label) for l in output.ds_logits))
        total = ad.add(total, ad.scale(ds, config.ds_weight))
    if config.lp_weight and output.assignment is not None and graph is not None:
        lp = link_pred_loss(output.assignment, graph.adjacency, config.lp_normalize)
        total = ad.add(total, ad.scale(lp, config.lp_weight))
    return total


def batch_loss(params, config, graphs, train=True):
    """Mean loss over ``graphs`` and the per-bag outputs."""
    outs = forward_batch(params, config, graphs, train)
    terms = [loss(o, g.label, config, g) for o, g in zip(outs, graphs)]
    total = ad.sum_all(ad.concat_rows(terms))
    return ad.scale(total, 1.0 / len(terms)), outs


def predict(output):
    """Argmax of the main logits; ties go to the lower class index."""
    logits = output.logits.value if isinstance(output, ForwardOutput) else np.asarray(output)
    return int(np.argmax(np.asarray(logits).ravel()))


# --------------------------------------------------------------- checkpoint


def params_to_state(params):
    tensors = {
        name: {"shape": list(t.shape), "values": t.value.ravel().tolist()} for name, t in params.named_tensors().items()
    }
    norms = {
        name: {"running_mean": st.running_mean.ravel().tolist(), "running_var": st.running_var.ravel().tolist()}
        for name, st in params.norm_states().items()
    }
    return {"tensors": tensors, "norms": norms, "in_dim": params.in_dim, "n_classes": params.n_classes}


def load_params_state(config, state):
    params = init_params(config, state["in_dim"], state["n_classes"], np.random.default_rng(0))
    named = params.named_tensors()
    if set(named) != set(state["tensors"]):
        raise ValueError("checkpoint tensors do not match the model configuration")
    for name, t in named.items():
        entry = state["tensors"][name]
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {t.shape}")
        t.value = arr
    for name, st in params.norm_states().items():
        entry = state["norms"][name]
        st.running_mean = np.array(entry["running_mean"], dtype=np.float64).reshape(1, -1)
        st.running_var = np.array(entry["running_var"], dtype=np.float64).reshape(1, -1)
    return params


def save_checkpoint(path, params, config, **extra):
    """JSON container; Python float repr makes the round trip bit-exact."""
    doc = {
        "format": "milgraph-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "params": params_to_state(params),
    }
    doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(params, config, doc)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "milgraph-checkpoint":
        raise ValueError(f"{path} is not a milgraph checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig.from_dict(doc["model_config"])
    return load_params_state(config, doc["params"]), config, doc
