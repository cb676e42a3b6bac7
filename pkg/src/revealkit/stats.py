"""Classification metrics and the statistics used to compare repeated runs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class RunMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def compute_metrics(preds: Sequence[int], labels: Sequence[int]) -> RunMetrics:
    """Confusion counts and accuracy/precision/recall/F1 for label 1.

    A metric whose denominator is zero is reported as 0 and its name is
    listed in ``undefined``.
    """
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError(f"predictions ({p.size}) and labels ({y.size}) differ in length")
    if p.size == 0:
        raise ValueError("no predictions")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return RunMetrics(tp, fp, tn, fn, (tp + tn) / p.size, precision, recall, f1, tuple(undefined))


@dataclass(frozen=True)
class MetricDistribution:
    values: tuple[float, ...]
    median: float
    iqr: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "MetricDistribution":
        med, iqr = median_iqr(values)
        return cls(tuple(float(v) for v in values), med, iqr)

    def to_json(self) -> dict:
        return {"values": list(self.values), "median": self.median, "iqr": self.iqr}


def median_iqr(values: Sequence[float]) -> tuple[float, float]:
    """Median and Q3 - Q1, quartiles by linear interpolation (inclusive method)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("median_iqr of an empty sequence")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return float(med), float(q3 - q1)


def bootstrap_test(a: Sequence[float], b: Sequence[float], resamples: int = 10_000,
                   seed: int = 0) -> float:
    """Two-sided bootstrap p-value for a difference in medians.

    Under H0 both samples come from the pooled data; ``p`` is the fraction
    of resampled pairs whose absolute median difference reaches the
    observed one.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("bootstrap_test needs two non-empty samples")
    observed = abs(np.median(a) - np.median(b))
    pool = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, 2_000_000 // pool.size)
    done = 0
    while done < resamples:
        r = min(chunk, resamples - done)
        ra = pool[rng.integers(0, pool.size, size=(r, a.size))]
        rb = pool[rng.integers(0, pool.size, size=(r, b.size))]
        diff = np.abs(np.median(ra, axis=1) - np.median(rb, axis=1))
        # tolerance absorbs float noise when the observed difference is 0
        hits += int((diff >= observed - 1e-12).sum())
        done += r
    return hits / resamples


def a12(a: Sequence[float], b: Sequence[float]) -> float:
    """Vargha-Delaney A12: P(a > b) + 0.5 * P(a == b) over all pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("a12 needs two non-empty samples")
    gt = (a[:, None] > b[None, :]).sum()
    eq = (a[:, None] == b[None, :]).sum()
    return float((gt + 0.5 * eq) / (a.size * b.size))


SIGNIFICANCE = 0.01
SMALL_EFFECT = 0.6


def compare(a: Sequence[float], b: Sequence[float], seed: int = 0,
            resamples: int = 10_000) -> str:
    """``"distinct"`` when bootstrap p <= 0.01 and the A12 effect is not small."""
    p = bootstrap_test(a, b, resamples=resamples, seed=seed)
    effect = a12(a, b)
    if p <= SIGNIFICANCE and max(effect, 1.0 - effect) >= SMALL_EFFECT:
        return "distinct"
    return "indistinct"


@dataclass(frozen=True)
class RankedTreatment:
    rank: int
    name: str
    median: float
    iqr: float

    def to_json(self) -> dict:
        return asdict(self)


def scott_knott(treatments: Mapping[str, Sequence[float]], seed: int = 0,
                resamples: int = 10_000) -> list[RankedTreatment]:
    """Rank treatments into statistically distinct groups, best median first.

    Treatments are sorted by median (descending). The cut maximising the
    between-group sum of squares is taken, and kept only when the two
    sides' pooled values compare as distinct; both sides are then split
    recursively. Members of one group share a rank.
    """
    if not treatments:
        raise ValueError("scott_knott needs at least one treatment")
    names = sorted(treatments, key=lambda n: (-float(np.median(treatments[n])), n))
    values = [np.asarray(treatments[n], dtype=np.float64) for n in names]
    groups: list[list[int]] = []

    def split(lo: int, hi: int) -> None:
        if hi - lo < 2:
            groups.append(list(range(lo, hi)))
            return
        allv = np.concatenate(values[lo:hi])
        mu = allv.mean()
        best, cut = -1.0, None
        for c in range(lo + 1, hi):
            left = np.concatenate(values[lo:c])
            right = np.concatenate(values[c:hi])
            ss = left.size * (left.mean() - mu) ** 2 + right.size * (right.mean() - mu) ** 2
            if ss > best:
                best, cut = ss, c
        left = np.concatenate(values[lo:cut])
        right = np.concatenate(values[cut:hi])
        if compare(left, right, seed=seed, resamples=resamples) == "distinct":
            split(lo, cut)
            split(cut, hi)
        else:
            groups.append(list(range(lo, hi)))

    split(0, len(names))
    out = []
    for rank, members in enumerate(groups, 1):
        for i in members:
            med, iqr = median_iqr(values[i])
            out.append(RankedTreatment(rank, names[i], med, iqr))
    return out


def centroid_distance(features: Sequence[Sequence[float]] | np.ndarray,
                      labels: Sequence[int]) -> float:
    """Euclidean distance between the per-class mean vectors."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    if not ((y == 1).any() and (y == 0).any()):
        raise ValueError("centroid_distance needs both classes")
    return float(np.linalg.norm(X[y == 1].mean(axis=0) - X[y == 0].mean(axis=0)))
