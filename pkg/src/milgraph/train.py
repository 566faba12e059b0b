"""Training loop, cross-validation driver and classification metrics."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Normalizer, apply_normalizer, fit_normalizer, make_folds
from .graph import build_graphs, resolve_eta
from .model import ModelConfig, batch_loss, forward_batch, init_params, predict

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 3e-4
    weight_decay: float = 1e-3
    seed: int = 1
    repeats: int = 1
    folds: int = 10
    optimizer: str = "adamw"
    momentum: float = 0.9
    jobs: int = 1

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if self.folds < 2:
            raise ValueError("fold count must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be adamw or sgd, got {self.optimizer!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self


def cosine_lr(step, total_steps, lr_max):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_max * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr, weight_decay=0.0, grads=None):
        grads = grads if grads is not None else [p.grad for p in self.params]
        _check_finite(self.params, grads)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if weight_decay:
                p.value *= 1.0 - lr * weight_decay
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    """Momentum SGD with the same decoupled weight decay."""

    def __init__(self, params, momentum=0.9):
        self.params = list(params)
        self.momentum = momentum
        self.buf = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr, weight_decay=0.0, grads=None):
        grads = grads if grads is not None else [p.grad for p in self.params]
        _check_finite(self.params, grads)
        for p, g, b in zip(self.params, grads, self.buf):
            b *= self.momentum
            b += g
            if weight_decay:
                p.value *= 1.0 - lr * weight_decay
            p.value -= lr * b


def optimizer_step(optimizer, lr, weight_decay=0.0):
    optimizer.step(lr, weight_decay)


def _check_finite(params, grads):
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter #{i} (shape {params[i].shape})")


def make_optimizer(params, tcfg):
    if tcfg.optimizer == "sgd":
        return SGD(params, tcfg.momentum)
    return AdamW(params)


# ------------------------------------------------------------------ model


@dataclass
class TrainedModel:
    """Parameters plus the preprocessing fitted alongside them."""

    params: object
    config: ModelConfig
    normalizer: Normalizer
    eta: float
    curve: list[float] = field(default_factory=list)

    def graphs(self, bags):
        return build_graphs(apply_normalizer(self.normalizer, bags), self.eta, self.config.self_loops)

    def forward(self, bags, chunk=256):
        graphs = self.graphs(bags)
        outs = []
        for i in range(0, len(graphs), chunk):
            outs.extend(forward_batch(self.params, self.config, graphs[i : i + chunk], train=False))
        return outs

    def predict(self, bags):
        return np.array([predict(o) for o in self.forward(bags)], dtype=int)


def train_one_model(bags, mcfg, tcfg, n_classes=2, key=(0, 0)):
    """Fit normaliser, threshold and network on ``bags``.

    ``key`` (typically ``(repeat, fold)``) is mixed with the seed so every
    CV job draws its own reproducible streams.
    """
    if not bags:
        raise ValueError("training set is empty")
    mcfg.validate()
    tcfg.validate()
    normalizer = fit_normalizer(bags)
    normed = apply_normalizer(normalizer, bags)
    eta = resolve_eta(mcfg.eta, normed)
    graphs = build_graphs(normed, eta, mcfg.self_loops)
    params = init_params(mcfg, bags[0].instances.shape[1], n_classes, np.random.default_rng([tcfg.seed, *key, 0]))
    plist = params.parameters()
    opt = make_optimizer(plist, tcfg)
    n = len(graphs)
    per_epoch = math.ceil(n / tcfg.batch_size)
    total = tcfg.epochs * per_epoch
    step = 0
    curve = []
    for epoch in range(tcfg.epochs):
        order = np.random.default_rng([tcfg.seed, *key, epoch + 1]).permutation(n)
        running = 0.0
        for start in range(0, n, tcfg.batch_size):
            chunk = [graphs[i] for i in order[start : start + tcfg.batch_size]]
            ad.zero_grad(plist)
            loss, _ = batch_loss(params, mcfg, chunk, train=True)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            ad.backward(loss)
            opt.step(cosine_lr(step, total, tcfg.lr), tcfg.weight_decay)
            step += 1
            running += value * len(chunk)
        curve.append(running / n)
        log.debug("epoch %d loss %.6f", epoch, curve[-1])
    return TrainedModel(params, mcfg, normalizer, eta, curve)


# ---------------------------------------------------------------- metrics


@dataclass
class ConfusionCounts:
    tn: int = 0
    fp: int = 0
    fn: int = 0
    tp: int = 0

    @property
    def total(self):
        return self.tn + self.fp + self.fn + self.tp

    def __add__(self, other):
        return ConfusionCounts(self.tn + other.tn, self.fp + other.fp, self.fn + other.fn, self.tp + other.tp)

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total

    @property
    def f1(self):
        precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        if precision + recall == 0:
            return 0.0
        return 2 * precision * recall / (precision + recall)


@dataclass
class Metrics:
    accuracy: float
    f1: float
    confusion: ConfusionCounts


def confusion_counts(predictions, labels):
    p = np.asarray(predictions, dtype=int)
    y = np.asarray(labels, dtype=int)
    return ConfusionCounts(
        tn=int(((p != 1) & (y != 1)).sum()),
        fp=int(((p == 1) & (y != 1)).sum()),
        fn=int(((p != 1) & (y == 1)).sum()),
        tp=int(((p == 1) & (y == 1)).sum()),
    )


def compute_metrics(predictions, labels):
    """Accuracy and positive-class F1 (0 when precision + recall is 0)."""
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if len(labels) == 0:
        raise ValueError("cannot score an empty evaluation set")
    cm = confusion_counts(predictions, labels)
    acc = float(np.mean(np.asarray(predictions) == np.asarray(labels)))
    return Metrics(acc, cm.f1, cm)


# -------------------------------------------------------- cross-validation


@dataclass
class CvReport:
    dataset: str
    model_config: dict
    train_config: dict
    folds: list[dict]
    repeats: list[dict]
    acc_mean: float
    acc_std: float
    f1_mean: float
    f1_std: float
    fold_acc_std: float
    confusion: ConfusionCounts

    def to_dict(self):
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        with open(out / "folds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=FOLD_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in self.folds:
                w.writerow({k: row[k] for k in FOLD_COLUMNS})
        return out / "report.json", out / "folds.csv"


FOLD_COLUMNS = ["repeat", "fold", "seed", "n_train", "n_test", "accuracy", "f1", "tn", "fp", "fn", "tp"]


def _fold_job(args):
    dataset, mcfg, tcfg, repeat, fold, train_idx, test_idx = args
    model = train_one_model([dataset.bags[i] for i in train_idx], mcfg, tcfg, dataset.n_classes, key=(repeat, fold))
    test = [dataset.bags[i] for i in test_idx]
    return model.predict(test), np.array([b.label for b in test])


def run_cross_validation(dataset, mcfg, tcfg, progress=None):
    """Repeated stratified k-fold CV.

    Accuracy/F1 per repeat are computed on that repeat's pooled held-out
    predictions; means and (population) standard deviations are taken over
    repeats.
    """
    mcfg.validate()
    tcfg.validate()
    jobs = []
    for r in range(tcfg.repeats):
        plan = make_folds(dataset, tcfg.folds, tcfg.seed, repeat=r)
        for f in range(tcfg.folds):
            train_idx, test_idx = plan.fold_indices(dataset, f)
            jobs.append((dataset, mcfg, tcfg, r, f, train_idx, test_idx))

    if tcfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=tcfg.jobs) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_fold_job(job))
            if progress:
                progress(job[3], job[4], results[-1])

    folds, repeats = [], []
    pooled = ConfusionCounts()
    per_repeat: dict[int, list] = {}
    for job, (pred, y) in zip(jobs, results):
        _, _, _, r, f, train_idx, test_idx = job
        m = compute_metrics(pred, y)
        cm = m.confusion
        folds.append(
            {
                "repeat": r,
                "fold": f,
                "seed": tcfg.seed,
                "n_train": len(train_idx),
                "n_test": len(test_idx),
                "accuracy": m.accuracy,
                "f1": m.f1,
                "tn": cm.tn,
                "fp": cm.fp,
                "fn": cm.fn,
                "tp": cm.tp,
            }
        )
        acc = per_repeat.setdefault(r, [ConfusionCounts(), 0])
        acc[0] = acc[0] + cm
        pooled = pooled + cm
    for r in sorted(per_repeat):
        cm = per_repeat[r][0]
        repeats.append({"repeat": r, "accuracy": cm.accuracy, "f1": cm.f1})
    accs = np.array([x["accuracy"] for x in repeats])
    f1s = np.array([x["f1"] for x in repeats])
    return CvReport(
        dataset=dataset.name,
        model_config=mcfg.to_dict(),
        train_config=asdict(tcfg),
        folds=folds,
        repeats=repeats,
        acc_mean=float(accs.mean()),
        acc_std=float(accs.std()),
        f1_mean=float(f1s.mean()),
        f1_std=float(f1s.std()),
        fold_acc_std=float(np.std([x["accuracy"] for x in folds])),
        confusion=pooled,
    )
