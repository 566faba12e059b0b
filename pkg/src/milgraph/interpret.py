"""Export assignment matrices and attention weights per bag."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import predict


@dataclass
class ExplanationRecord:
    bag_id: str
    label: int
    predicted: int
    weights: np.ndarray  # K x C assignment S, or K x 1 attention alpha
    scores: np.ndarray  # pre-softmax cluster logits / attention scores
    kind: str  # "assignment" or "attention"

    @property
    def n_instances(self):
        return self.weights.shape[0]


def collect_explanations(model, bags):
    """Eval-mode forward over ``bags``; ``model`` is a TrainedModel."""
    records = []
    for bag, out in zip(bags, model.forward(bags)):
        if out.assignment is not None:
            w, s, kind = out.assignment.value, out.cluster_logits.value, "assignment"
        else:
            w, s, kind = out.attention.value, out.attention_scores.value, "attention"
        records.append(ExplanationRecord(bag.id, bag.label, predict(out), w.copy(), s.copy(), kind))
    return records


def gray_levels(matrix, stretch=False):
    """Map values in [0, 1] to 0..255; ``stretch`` min-max scales first."""
    m = np.asarray(matrix, dtype=np.float64)
    if stretch:
        lo, hi = m.min(), m.max()
        m = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    # round half up so 0.5 maps to 128
    return np.floor(np.clip(m, 0.0, 1.0) * 255 + 0.5).astype(int)


def pgm_text(matrix, stretch=False):
    """P2 graymap; rows are matrix rows, columns matrix columns."""
    levels = gray_levels(matrix, stretch)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    return "\n".join(lines) + "\n"


def write_heatmap(record, path, stretch=False):
    """Write a clusters-by-instances PGM plus CSVs of the exact weights and
    of the pre-softmax scores. Returns the three paths written.
    """
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    scores_path = path.with_suffix(".scores.csv")
    try:
        path.write_text(pgm_text(record.weights.T, stretch), encoding="ascii")
        write_explanation_csv([record], csv_path)
        write_explanation_csv([record], scores_path, field="scores")
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return path, csv_path, scores_path


EXPLANATION_COLUMNS = ["bag_id", "instance_index", "cluster_index", "value"]


def write_explanation_csv(records, path, field="weights"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXPLANATION_COLUMNS)
        for rec in records:
            for k, row in enumerate(getattr(rec, field)):
                for c, v in enumerate(row):
                    w.writerow([rec.bag_id, k, c, repr(float(v))])


def read_explanation_csv(path):
    """Return ``{bag_id: K x C matrix}``."""
    cells: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cells.setdefault(row["bag_id"], {})[(int(row["instance_index"]), int(row["cluster_index"]))] = float(row["value"])
    out = {}
    for bag_id, entries in cells.items():
        k = max(i for i, _ in entries) + 1
        c = max(j for _, j in entries) + 1
        m = np.zeros((k, c))
        for (i, j), v in entries.items():
            m[i, j] = v
        out[bag_id] = m
    return out
