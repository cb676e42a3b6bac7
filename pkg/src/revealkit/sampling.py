"""Class rebalancing: random undersampling of the majority plus SMOTE."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class FeatureRecord:
    id: str
    features: np.ndarray
    label: int
    project: str = ""
    synthetic: bool = False

    def to_json(self) -> dict:
        return {"id": self.id, "label": self.label, "project": self.project,
                "features": self.features.tolist(), "synthetic": self.synthetic}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureRecord":
        return cls(str(obj["id"]), np.asarray(obj["features"], dtype=np.float64), int(obj["label"]),
                   obj.get("project", ""), bool(obj.get("synthetic", False)))


def save_records(records: Iterable[FeatureRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_records(path) -> list[FeatureRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(FeatureRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad feature record ({exc})") from None
    if out and len({r.features.shape for r in out}) > 1:
        raise ValueError(f"{path}: feature vectors have inconsistent lengths")
    return out


def feature_matrix(records: Sequence[FeatureRecord]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([r.features for r in records])
    y = np.array([r.label for r in records], dtype=np.int64)
    return X, y


def class_roles(records: Sequence[FeatureRecord]) -> tuple[int, int]:
    """Return ``(majority_label, minority_label)``; ties make label 1 the minority."""
    n1 = sum(r.label for r in records)
    n0 = len(records) - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes must be present")
    return (1, 0) if n1 > n0 else (0, 1)


def k_nearest(X: np.ndarray, i: int, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows to ``X[i]`` (Euclidean), ties by index."""
    d = ((X - X[i]) ** 2).sum(axis=1)
    d[i] = np.inf
    order = np.argsort(d, kind="stable")
    return order[:min(k, len(X) - 1)]


def smote(records: Sequence[FeatureRecord], k: int = 5, m: int | None = None,
          seed: int = 0) -> list[FeatureRecord]:
    """Balance both classes to exactly ``m`` records.

    Majority records are removed uniformly at random until at most ``m``
    remain. Minority records are then synthesized: a random original
    minority record ``x`` is picked, and for each of its ``k`` nearest
    original minority neighbours ``n`` a point ``x + lam * (n - x)`` with
    ``lam`` uniform in the open interval (0, 1) is added. The last batch is
    truncated so the minority count lands exactly on ``m``.

    Surviving originals keep their order; synthetic records are appended
    and carry ids of the form ``<source id>#smote<i>``. ``m`` defaults to
    the majority count.
    """
    records = list(records)
    major, minor = class_roles(records)
    maj_idx = [i for i, r in enumerate(records) if r.label == major]
    min_idx = [i for i, r in enumerate(records) if r.label == minor]
    if m is None:
        m = len(maj_idx)
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    if m < len(min_idx):
        raise ValueError(f"m={m} is below the minority count {len(min_idx)}; originals are never dropped")
    if len(min_idx) < 2 and m > len(min_idx):
        raise ValueError("cannot interpolate a singleton class")
    rng = np.random.default_rng(seed)

    drop: set[int] = set()
    if len(maj_idx) > m:
        drop = set(rng.choice(maj_idx, size=len(maj_idx) - m, replace=False).tolist())
    out = [r for i, r in enumerate(records) if i not in drop]

    need = m - len(min_idx)
    if need == 0:
        return out
    X_min = np.stack([records[i].features for i in min_idx])
    neighbours: dict[int, np.ndarray] = {}
    made = 0
    while made < need:
        j = int(rng.integers(len(min_idx)))
        if j not in neighbours:
            neighbours[j] = k_nearest(X_min, j, k)
        src = records[min_idx[j]]
        for n in neighbours[j]:
            if made == need:
                break
            lam = rng.random()
            while lam == 0.0:
                lam = rng.random()
            point = X_min[j] + lam * (X_min[n] - X_min[j])
            out.append(FeatureRecord(f"{src.id}#smote{made}", point, minor, src.project, True))
            made += 1
    return out


def rebalance_ratio(records: Sequence[FeatureRecord], oversample_factor: float, seed: int = 0,
                    k: int = 5) -> list[FeatureRecord]:
    """SMOTE with ``m = min(majority, ceil(factor * minority))``.

    ``factor=1`` is a pure undersample; a large factor is a full oversample.
    """
    if oversample_factor < 1:
        raise ValueError("oversample_factor must be >= 1")
    major, minor = class_roles(records)
    n_major = sum(1 for r in records if r.label == major)
    n_minor = len(records) - n_major
    m = min(n_major, math.ceil(oversample_factor * n_minor))
    return smote(records, k=k, m=m, seed=seed)
