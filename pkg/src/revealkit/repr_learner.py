"""MLP representation learner trained with the triplet objective.

The objective is ``CE + alpha * L_p + beta * L_reg`` where ``L_p`` is the
(absolute, not hinged) cosine-distance margin term between an anchor, a
same-class example and a different-class example, and ``L_reg`` is the sum
of their latent norms. ``alpha = beta = 0`` gives the plain NLL baseline.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .nn import autodiff as ad
from .nn.autodiff import Var
from .nn.layers import MlpParams, mlp_forward
from .nn.optim import AdamState, adam_step
from .sampling import FeatureRecord
from .stats import compute_metrics

log = logging.getLogger(__name__)


class DegenerateLatentError(ValueError):
    """A zero vector reached a cosine-distance term."""


@dataclass
class TripletConfig:
    gamma: float = 0.5
    alpha: float = 0.5
    beta: float = 0.001
    lr: float = 0.001
    dropout: float = 0.2
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 128
    hinge: bool = False       # max(0, .) instead of |.| in the projection term
    hidden: tuple[int, ...] = (256, 128, 256)

    def __post_init__(self):
        if self.gamma < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("gamma, alpha and beta must be non-negative")
        self.hidden = tuple(self.hidden)

    @classmethod
    def nll(cls, **kw) -> "TripletConfig":
        """Cross-entropy-only variant."""
        return cls(alpha=0.0, beta=0.0, **kw)

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TripletBatch:
    anchors: list[FeatureRecord]
    sames: list[FeatureRecord]
    diffs: list[FeatureRecord]

    def __post_init__(self):
        if not len(self.anchors) == len(self.sames) == len(self.diffs):
            raise ValueError("anchors, sames and diffs must be aligned")
        for a, s, d in zip(self.anchors, self.sames, self.diffs):
            if s.label != a.label or d.label == a.label:
                raise ValueError(f"invalid triplet for anchor {a.id}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([a.label for a in self.anchors], dtype=np.int64)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.stack([r.features for r in self.anchors]),
                np.stack([r.features for r in self.sames]),
                np.stack([r.features for r in self.diffs]))


def cosine_distance(v1, v2) -> float:
    """``1 - |cos(v1, v2)|``; antiparallel vectors are at distance 0."""
    a = np.asarray(v1, dtype=np.float64)
    b = np.asarray(v2, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateLatentError("undefined cosine distance for a zero vector")
    # rounding can push |cos| a hair above 1
    return float(1.0 - min(abs(a @ b / (na * nb)), 1.0))


def projection_loss(h, h_same, h_diff, gamma: float = 0.5, hinge: bool = False) -> float:
    gap = cosine_distance(h, h_same) - cosine_distance(h, h_diff) + gamma
    return max(gap, 0.0) if hinge else abs(gap)


def regularization_loss(h, h_same, h_diff) -> float:
    return float(sum(np.linalg.norm(np.asarray(v, dtype=np.float64)) for v in (h, h_same, h_diff)))


def _cosine_distance_rows(a: Var, b: Var) -> Var:
    na, nb = ad.row_norm(a), ad.row_norm(b)
    if (na.data == 0).any() or (nb.data == 0).any():
        raise DegenerateLatentError("undefined cosine distance for a zero latent vector")
    return 1.0 - ad.absolute(ad.row_dot(a, b) / (na * nb))


def triplet_objective(anchors: np.ndarray, sames: np.ndarray, diffs: np.ndarray, labels: np.ndarray,
                      params: MlpParams, cfg: TripletConfig, training: bool = False,
                      rng: np.random.Generator | None = None) -> Var:
    """Differentiable batch-mean triplet objective over feature arrays."""
    B = anchors.shape[0]
    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        _, logits = mlp_forward(anchors, params, training, rng)
        return ad.mean(ad.pick(ad.log_softmax(logits), labels)) * -1.0
    latent, logits = mlp_forward(np.concatenate([anchors, sames, diffs]), params, training, rng)
    ia, is_, id_ = np.arange(B), np.arange(B, 2 * B), np.arange(2 * B, 3 * B)
    ce = ad.mean(ad.pick(ad.log_softmax(ad.take_rows(logits, ia)), labels)) * -1.0
    h, hs, hd = ad.take_rows(latent, ia), ad.take_rows(latent, is_), ad.take_rows(latent, id_)
    loss = ce
    if cfg.alpha:
        gap = _cosine_distance_rows(h, hs) - _cosine_distance_rows(h, hd) + cfg.gamma
        lp = ad.relu(gap) if cfg.hinge else ad.absolute(gap)
        loss = loss + cfg.alpha * ad.mean(lp)
    if cfg.beta:
        reg = ad.row_norm(h) + ad.row_norm(hs) + ad.row_norm(hd)
        loss = loss + cfg.beta * ad.mean(reg)
    return loss


def triplet_loss(batch: TripletBatch, params: MlpParams, cfg: TripletConfig,
                 training: bool = False, rng: np.random.Generator | None = None) -> float:
    a, s, d = batch.arrays()
    return triplet_objective(a, s, d, batch.labels, params, cfg, training, rng).item()


def _draw_partner(pool: np.ndarray, exclude_pos: int | None, rng: np.random.Generator) -> int:
    if exclude_pos is None or len(pool) < 2:
        return int(pool[rng.integers(len(pool))])
    j = int(rng.integers(len(pool) - 1))
    if j >= exclude_pos:
        j += 1
    return int(pool[j])


def iter_triplet_batches(train: Sequence[FeatureRecord], batch_size: int,
                         rng: np.random.Generator) -> Iterator[TripletBatch]:
    """One epoch of triplet batches: every record is an anchor once."""
    labels = np.array([r.label for r in train])
    pools = {c: np.flatnonzero(labels == c) for c in (0, 1)}
    if len(pools[0]) == 0 or len(pools[1]) == 0:
        raise ValueError("triplet sampling needs both classes")
    pos_in_pool = {c: {int(i): p for p, i in enumerate(pools[c])} for c in (0, 1)}
    order = rng.permutation(len(train))
    for start in range(0, len(order), batch_size):
        anchors, sames, diffs = [], [], []
        for i in order[start:start + batch_size]:
            c = int(labels[i])
            same = _draw_partner(pools[c], pos_in_pool[c][int(i)], rng)
            diff = _draw_partner(pools[1 - c], None, rng)
            anchors.append(train[i])
            sames.append(train[same])
            diffs.append(train[diff])
        yield TripletBatch(anchors, sames, diffs)


def sample_triplets(train: Sequence[FeatureRecord], batch_size: int, seed: int = 0) -> TripletBatch:
    """First batch of a freshly shuffled epoch."""
    return next(iter_triplet_batches(train, batch_size, np.random.default_rng(seed)))


def predict(records: Sequence[FeatureRecord], params: MlpParams) -> list[tuple[float, int]]:
    """``(P(class 1), argmax label)`` per record, inference mode."""
    if not records:
        return []
    X = np.stack([r.features for r in records])
    if X.shape[1] != params.input_dim:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model input dimension "
                         f"{params.input_dim}")
    _, logits = mlp_forward(X, params, training=False)
    prob = ad.softmax(logits.data)[:, 1]
    pred = logits.data.argmax(axis=1)
    return [(float(p), int(k)) for p, k in zip(prob, pred)]


def latents(records: Sequence[FeatureRecord], params: MlpParams) -> np.ndarray:
    X = np.stack([r.features for r in records])
    return mlp_forward(X, params, training=False)[0].data


@dataclass
class ReprLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = -1.0
    stopped_early: bool = False

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "best_f1": self.best_f1,
                "stopped_early": self.stopped_early, "epochs_run": len(self.epochs)}


def train_repr(train: Sequence[FeatureRecord], valid: Sequence[FeatureRecord],
               cfg: TripletConfig | None = None, seed: int = 0) -> tuple[MlpParams, ReprLog]:
    """Adam on the triplet objective with validation-F1 early stopping."""
    cfg = cfg or TripletConfig()
    if not train or not valid:
        raise ValueError("training needs non-empty train and validation splits")
    if {r.label for r in train} != {0, 1}:
        raise ValueError("training set must contain both labels")
    rng = np.random.default_rng(seed)
    params = MlpParams.init(train[0].features.shape[0], rng, hidden=cfg.hidden, dropout=cfg.dropout)
    tensors = params.tensors()
    best = dict(tensors)
    state = AdamState()
    rlog = ReprLog()
    since_best = 0
    valid_labels = [r.label for r in valid]
    for epoch in range(cfg.max_epochs):
        total, n = 0.0, 0
        for batch in iter_triplet_batches(train, cfg.batch_size, rng):
            leaves = {k: Var(v, requires_grad=True) for k, v in tensors.items()}
            a, s, d = batch.arrays()
            loss = triplet_objective(a, s, d, batch.labels, params.replace_tensors(leaves), cfg,
                                     training=True, rng=rng)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            grads = {k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                     for k, leaf in leaves.items()}
            tensors, state = adam_step(tensors, grads, state, cfg.lr)
            total += loss.item() * len(batch.anchors)
            n += len(batch.anchors)
        params = params.replace_tensors(tensors)
        preds = [p for _, p in predict(valid, params)]
        f1 = compute_metrics(preds, valid_labels).f1
        rlog.epochs.append({"epoch": epoch, "loss": total / n, "valid_f1": f1})
        log.debug("repr epoch %d loss %.4f valid F1 %.4f", epoch, total / n, f1)
        if f1 > rlog.best_f1:
            rlog.best_f1, rlog.best_epoch = f1, epoch
            best = dict(tensors)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                rlog.stopped_early = True
                break
    return params.replace_tensors(best), rlog
