"""Independent oracles shared by the test modules."""
import numpy as np

FD_STEP = 1e-5


def numeric_grad(f, array, h=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``array``
    (perturbed in place)."""
    out = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        fp = f()
        array[idx] = orig - h
        fm = f()
        array[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))


def leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _affine(x, p, name):
    b = p.get(f"{name}.bias")
    out = x @ p[f"{name}.weight"].T
    return out if b is None else out + b


def _bn(x, p, name, eps=1e-5):
    return (x - p[f"{name}.running_mean"]) / np.sqrt(p[f"{name}.running_var"] + eps) * p[f"{name}.gamma"] + p[f"{name}.beta"]


def _mlp(x, p, name, n_layers, final_act=False):
    for i in range(n_layers):
        x = _affine(x, p, f"{name}.{i}")
        if i < n_layers - 1 or final_act:
            x = leaky(x)
    return x


def param_dict(model_params, dtype=np.float64):
    """Copy every tensor and running statistic into a plain name -> array dict."""
    p = {k: np.array(t.value, dtype=dtype) for k, t in model_params.named_tensors().items()}
    for name, st in model_params.norm_states().items():
        p[f"{name}.running_mean"] = np.array(st.running_mean, dtype=dtype)
        p[f"{name}.running_var"] = np.array(st.running_var, dtype=dtype)
    return p


def oracle_forward(p, config, adjacency, features):
    """Straight-line numpy evaluation of the eval-mode network for one bag.

    ``p`` comes from :func:`param_dict`; the arithmetic runs in its dtype.
    Returns (logits, ds_logits_2, ds_logits_3, embedding, S or alpha).
    """
    if not isinstance(p, dict):
        p = param_dict(p)
    dtype = next(iter(p.values())).dtype
    a = np.asarray(adjacency, dtype=dtype)
    v = np.asarray(features, dtype=dtype)
    k = a.shape[0]
    closed = np.where(np.eye(k, dtype=bool), 1, a)
    mean_op = closed / closed.sum(axis=1, keepdims=True)
    z = _bn(leaky(_affine(mean_op @ v, p, "embd")), p, "embd_norm")

    def pool(x):
        return x.max(axis=0, keepdims=True) if config.ds_pool == "max" else x.mean(axis=0, keepdims=True)

    if config.pool == "attention":
        scores = _mlp(z, p, "att", 2)
        alpha = softmax(scores.T)
        emb = alpha @ z
        return _mlp(emb, p, "main", 2), _mlp(pool(z), p, "ds_embd", 2), _mlp(emb, p, "ds_pool", 2), emb, alpha.T

    cin = v if config.cluster_input == "V" else z
    cl = _bn(leaky(_affine(mean_op @ cin, p, "cluster")), p, "cluster_norm")
    cl = _mlp(cl, p, "cluster_mlp", 1, final_act=True)
    s = softmax(cl)
    v_star = s.T @ z
    a_star = s.T @ a @ s
    c = s.shape[1]
    if c == 1:
        agg = v_star
    else:
        ec = np.eye(c, dtype=dtype)
        w = a_star * (1 - ec) + ec
        agg = (w @ v_star) / w.sum(axis=1, keepdims=True)
    h = _bn(leaky(_affine(agg, p, "embd2")), p, "embd2_norm")
    if c == 1:
        emb = h
    elif config.readout == "max":
        emb = h.max(axis=0, keepdims=True)
    else:
        emb = h.reshape(1, -1)
    return _mlp(emb, p, "main", 2), _mlp(pool(z), p, "ds_embd", 2), _mlp(pool(v_star), p, "ds_pool", 2), emb, s


def _ce(logits, label):
    row = logits[0]
    m = row.max()
    return m + np.log(np.exp(row - m).sum()) - row[label]


def oracle_loss(p, config, graphs):
    """Mean composite loss over ``graphs`` evaluated by the straight-line oracle."""
    total = 0
    for g in graphs:
        p1, p2, p3, _, weights = oracle_forward(p, config, g.adjacency, g.features)
        term = _ce(p1, g.label) + config.ds_weight * (_ce(p2, g.label) + _ce(p3, g.label))
        if config.pool == "diffpool" and config.lp_weight:
            a = np.asarray(g.adjacency, dtype=weights.dtype)
            lp = np.sqrt(((a - weights @ weights.T) ** 2).sum())
            if config.lp_normalize:
                lp = lp / (a.shape[0] ** 2)
            term = term + config.lp_weight * lp
        total = total + term
    return total / len(graphs)


def model_gradient_errors(model_params, config, graphs, loss_fn):
    """Relative error of autodiff gradients against central differences of
    the extended-precision oracle loss, per parameter tensor."""
    from milgraph import autodiff as ad

    ad.zero_grad(model_params.parameters())
    total, _ = loss_fn(model_params, config, graphs, train=False)
    ad.backward(total)
    p = param_dict(model_params, np.longdouble)
    errors = {}
    for name, t in model_params.named_tensors().items():
        numeric = numeric_grad(lambda: oracle_loss(p, config, graphs), p[name])
        errors[name] = rel_err(t.grad, numeric.astype(np.float64))
    return errors
def randomize_norms(model_params, rng):
    """Give every norm state non-trivial running stats and affine params."""
    for name, st in model_params.norm_states().items():
        d = st.running_mean.shape[1]
        st.running_mean = rng.uniform(-0.5, 0.5, (1, d))
        st.running_var = rng.uniform(0.5, 2.0, (1, d))
        st.gamma.value[:] = rng.uniform(0.5, 1.5, (1, d))
        st.beta.value[:] = rng.uniform(-0.5, 0.5, (1, d))
