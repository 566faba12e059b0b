"""Bag datasets: parsing, feature normalization and stratified folds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised for malformed dataset files; carries the offending line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class Bag:
    id: str
    label: int
    instances: np.ndarray  # K x D
    instance_labels: np.ndarray | None = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError(f"bag {self.id!r} needs a K x D instance matrix with K >= 1")

    @property
    def size(self):
        return self.instances.shape[0]

    def with_instances(self, instances):
        return Bag(self.id, self.label, instances, self.instance_labels)


@dataclass
class Dataset:
    name: str
    bags: list[Bag]
    dim: int = 0
    n_classes: int = 2

    def __post_init__(self):
        ids = [b.id for b in self.bags]
        if len(set(ids)) != len(ids):
            raise ValueError("bag ids must be unique")
        if self.bags:
            dims = {b.instances.shape[1] for b in self.bags}
            if len(dims) != 1:
                raise ValueError(f"bags disagree on feature dimension: {sorted(dims)}")
            self.dim = dims.pop()
            labels = sorted({b.label for b in self.bags})
            if labels != list(range(len(labels))):
                raise ValueError(f"class labels must be 0..C-1, got {labels}")
            self.n_classes = max(2, len(labels))

    def __len__(self):
        return len(self.bags)

    @property
    def labels(self):
        return np.array([b.label for b in self.bags], dtype=int)

    def subset(self, indices, name=None):
        return Dataset(name or self.name, [self.bags[i] for i in indices], self.dim, self.n_classes)

    def summary(self):
        y = self.labels
        return f"bags={len(self)} pos={int((y == 1).sum())} neg={int((y == 0).sum())} dim={self.dim}"


# ------------------------------------------------------------------ parsers


def parse_canonical_csv(path, name=None):
    """Read ``bag_id,label,f1..fD`` rows, grouping rows by bag id (first appearance
    fixes the bag order).

    An optional ``instance_label`` column directly after ``label`` carries
    ground-truth instance labels.
    """
    path = Path(path)
    groups: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(path, 1, "empty file, header required") from None
        header = [h.strip() for h in header]
        if header[:2] != ["bag_id", "label"]:
            raise DataFormatError(path, 1, "header must start with bag_id,label")
        has_inst = len(header) > 2 and header[2] == "instance_label"
        first = 3 if has_inst else 2
        dim = len(header) - first
        if dim < 1:
            raise DataFormatError(path, 1, "header declares no feature columns")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            bag_id = row[0].strip()
            try:
                label = int(row[1])
                inst_label = int(row[2]) if has_inst else None
                feats = [float(v) for v in row[first:]]
            except ValueError as exc:
                raise DataFormatError(path, lineno, f"non-numeric value ({exc})") from None
            if not all(math.isfinite(v) for v in feats):
                raise DataFormatError(path, lineno, "non-finite feature value")
            entry = groups.setdefault(bag_id, [label, [], [], lineno])
            if entry[0] != label:
                raise DataFormatError(path, lineno, f"bag {bag_id!r} has conflicting labels {entry[0]} and {label}")
            entry[1].append(feats)
            entry[2].append(inst_label)
    bags = [
        Bag(bid, lab, np.array(rows), np.array(il, dtype=int) if has_inst else None)
        for bid, (lab, rows, il, _) in groups.items()
    ]
    return Dataset(name or path.stem, bags)


def parse_svmlight_bags(path, name=None):
    """Read ``label bag_id index:value ...`` lines (1-based sparse indices)."""
    path = Path(path)
    raw: list[tuple[str, int, list[tuple[int, float]], int]] = []
    dim = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise DataFormatError(path, lineno, "expected 'label bag_id index:value ...'")
            try:
                label = int(float(tokens[0]))
            except ValueError:
                raise DataFormatError(path, lineno, f"bad label {tokens[0]!r}") from None
            entries = []
            prev = 0
            for tok in tokens[2:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DataFormatError(path, lineno, f"bad feature token {tok!r}") from None
                if not sep or idx < 1:
                    raise DataFormatError(path, lineno, f"bad feature token {tok!r}")
                if idx <= prev:
                    raise DataFormatError(path, lineno, f"indices must be strictly increasing ({prev} then {idx})")
                prev = idx
                entries.append((idx, val))
            dim = max(dim, prev)
            raw.append((tokens[1], label, entries, lineno))
    # -1/+1 labels are mapped onto 0/1
    if any(lab < 0 for _, lab, _, _ in raw):
        raw = [(b, 1 if lab > 0 else 0, e, ln) for b, lab, e, ln in raw]
    groups: dict[str, list] = {}
    for bag_id, label, entries, lineno in raw:
        vec = np.zeros(max(dim, 1))
        for idx, val in entries:
            vec[idx - 1] = val
        entry = groups.setdefault(bag_id, [label, []])
        if entry[0] != label:
            raise DataFormatError(path, lineno, f"bag {bag_id!r} has conflicting labels {entry[0]} and {label}")
        entry[1].append(vec)
    bags = [Bag(bid, lab, np.array(rows)) for bid, (lab, rows) in groups.items()]
    return Dataset(name or path.stem, bags)


def load_dataset(path, fmt="canonical"):
    if fmt == "canonical":
        return parse_canonical_csv(path)
    if fmt == "svmlight-bags":
        return parse_svmlight_bags(path)
    raise ValueError(f"unknown format {fmt!r}")


def write_canonical_csv(dataset, path):
    """Write ``dataset`` in canonical CSV; floats use ``repr`` so reparse is exact."""
    has_inst = any(b.instance_labels is not None for b in dataset.bags)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["bag_id", "label"] + (["instance_label"] if has_inst else [])
        w.writerow(head + [f"f{j + 1}" for j in range(dataset.dim)])
        for bag in dataset.bags:
            for k, row in enumerate(bag.instances):
                extra = [int(bag.instance_labels[k]) if bag.instance_labels is not None else 0] if has_inst else []
                w.writerow([bag.id, bag.label] + extra + [repr(float(v)) for v in row])


# -------------------------------------------------------------- normalizer


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray  # 1.0 where the column is degenerate

    def transform(self, x):
        return (x - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_normalizer(bags, min_std=1e-12):
    """Per-dimension z-score statistics pooled over every training instance."""
    pool = np.vstack([b.instances for b in bags])
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)
    degenerate = std < min_std
    # degenerate columns pass through unscaled and unshifted
    mean = np.where(degenerate, 0.0, mean)
    std = np.where(degenerate, 1.0, std)
    return Normalizer(mean, std)


def apply_normalizer(normalizer, bags):
    return [b.with_instances(normalizer.transform(b.instances)) for b in bags]


# ------------------------------------------------------------------- folds


@dataclass
class FoldPlan:
    seed: int
    k: int
    assignments: dict[str, int] = field(default_factory=dict)

    def fold_indices(self, dataset, fold):
        """Return (train_indices, test_indices) for ``fold``."""
        test = [i for i, b in enumerate(dataset.bags) if self.assignments[b.id] == fold]
        train = [i for i, b in enumerate(dataset.bags) if self.assignments[b.id] != fold]
        return train, test


def make_folds(dataset, k, seed, repeat=0):
    """Stratified k-fold assignment.

    Each class is shuffled with a PCG64 generator seeded by ``(seed, repeat)``
    and the classes are dealt round-robin into folds, continuing the deal
    position across classes so fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    labels = dataset.labels
    rng = np.random.default_rng([seed, repeat])
    assignments: dict[str, int] = {}
    offset = 0
    for cls in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise ValueError(f"class {cls} has {len(members)} bags, fewer than {k} folds")
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            assignments[dataset.bags[idx].id] = (offset + j) % k
        offset = (offset + len(members)) % k
    return FoldPlan(seed, k, assignments)
