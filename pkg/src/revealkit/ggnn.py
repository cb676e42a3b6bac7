"""Gated graph neural network over code property graphs.

Vertices start from their (zero-padded) features and exchange typed
messages for a fixed number of rounds; every round all vertices update
synchronously through one shared GRU cell. The graph embedding is the sum
of the final vertex states.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import DEFAULT_EDGE_TYPES, CodeGraph
from .nn import autodiff as ad
from .nn.autodiff import Var
from .nn.layers import GruParams, gru_cell, xavier_uniform
from .nn.optim import AdamState, adam_step
from .sampling import FeatureRecord
from .stats import compute_metrics

log = logging.getLogger(__name__)


@dataclass
class GgnnConfig:
    hidden: int = 200
    steps: int = 8
    lr: float = 1e-4
    max_epochs: int = 500
    patience: int = 50
    batch_size: int = 32
    edge_types: tuple[str, ...] = DEFAULT_EDGE_TYPES
    shared_transform: bool = False   # one message transform for all edge types
    reverse_edges: bool = False      # also pass messages against edge direction
    learned_lift: bool = False       # linear input lift instead of zero padding
    gate_bias: float = -3.0          # initial GRU update-gate bias; negative keeps states near their inputs

    def to_json(self) -> dict:
        d = asdict(self)
        d["edge_types"] = list(self.edge_types)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "GgnnConfig":
        obj = dict(obj)
        if "edge_types" in obj:
            obj["edge_types"] = tuple(obj["edge_types"])
        return cls(**obj)


@dataclass
class GgnnParams:
    msg_W: np.ndarray                 # [n_transforms, hidden, hidden]
    msg_b: np.ndarray                 # [n_transforms, hidden]
    gru: GruParams
    head_W: np.ndarray                # [2, hidden]
    head_b: np.ndarray                # [2]
    lift_W: np.ndarray | None = None  # [hidden, input]
    lift_b: np.ndarray | None = None

    @property
    def hidden(self) -> int:
        return ad.value(self.head_W).shape[1]

    @classmethod
    def init(cls, input_dim: int, config: GgnnConfig, rng: np.random.Generator) -> "GgnnParams":
        H = config.hidden
        if not config.learned_lift and input_dim > H:
            raise ValueError(f"input dimension {input_dim} exceeds hidden size {H}; enable learned_lift")
        n = 1 if config.shared_transform else len(config.edge_types)
        lift_W = xavier_uniform(rng, H, input_dim) if config.learned_lift else None
        return cls(
            msg_W=np.stack([xavier_uniform(rng, H, H) for _ in range(n)]),
            msg_b=np.zeros((n, H)),
            gru=replace(GruParams.init(H, H, rng), bz=np.full(H, float(config.gate_bias))),
            head_W=xavier_uniform(rng, 2, H),
            head_b=np.zeros(2),
            lift_W=lift_W,
            lift_b=np.zeros(H) if config.learned_lift else None,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"msg_W": self.msg_W, "msg_b": self.msg_b, "head_W": self.head_W, "head_b": self.head_b}
        if self.lift_W is not None:
            out["lift_W"], out["lift_b"] = self.lift_W, self.lift_b
        out.update({f"gru.{k}": v for k, v in self.gru.tensors().items()})
        return {k: ad.value(v) for k, v in out.items()}

    def replace_tensors(self, t: dict) -> "GgnnParams":
        gru = self.gru.replace_tensors({k[4:]: v for k, v in t.items() if k.startswith("gru.")})
        return GgnnParams(
            msg_W=t.get("msg_W", self.msg_W), msg_b=t.get("msg_b", self.msg_b), gru=gru,
            head_W=t.get("head_W", self.head_W), head_b=t.get("head_b", self.head_b),
            lift_W=t.get("lift_W", self.lift_W), lift_b=t.get("lift_b", self.lift_b),
        )

    def as_vars(self) -> "GgnnParams":
        return self.replace_tensors({k: Var(v, requires_grad=True) for k, v in self.tensors().items()})


@dataclass
class EncodedGraph:
    """A graph paired with its initial vertex feature matrix."""

    graph: CodeGraph
    features: np.ndarray


@dataclass
class GraphBatch:
    """Disjoint union of several graphs, ready for batched propagation."""

    features: np.ndarray                 # [total vertices, input dim]
    graph_index: np.ndarray              # vertex -> graph position
    edges: list[tuple[np.ndarray, np.ndarray]]  # per transform: (src, dst)
    n_graphs: int
    labels: np.ndarray

    @classmethod
    def build(cls, items: Sequence[EncodedGraph], config: GgnnConfig) -> "GraphBatch":
        n_tf = 1 if config.shared_transform else len(config.edge_types)
        tf_of = {t: (0 if config.shared_transform else i) for i, t in enumerate(config.edge_types)}
        srcs: list[list[np.ndarray]] = [[] for _ in range(n_tf)]
        dsts: list[list[np.ndarray]] = [[] for _ in range(n_tf)]
        feats, gidx = [], []
        offset = 0
        for gi, item in enumerate(items):
            g = item.graph
            if item.features.shape[0] != len(g.vertices):
                raise ValueError(f"graph {g.id}: {item.features.shape[0]} feature rows for "
                                 f"{len(g.vertices)} vertices")
            feats.append(item.features)
            gidx.append(np.full(len(g.vertices), gi, dtype=np.intp))
            for e in g.edges:
                if e.etype not in tf_of:
                    raise ValueError(f"graph {g.id}: edge type {e.etype!r} not configured")
                k = tf_of[e.etype]
                srcs[k].append(np.array([e.src + offset]))
                dsts[k].append(np.array([e.dst + offset]))
                if config.reverse_edges:
                    srcs[k].append(np.array([e.dst + offset]))
                    dsts[k].append(np.array([e.src + offset]))
            offset += len(g.vertices)
        edges = []
        for k in range(n_tf):
            if srcs[k]:
                edges.append((np.concatenate(srcs[k]), np.concatenate(dsts[k])))
            else:
                edges.append((np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)))
        dims = {f.shape[1] for f in feats}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature widths {sorted(dims)}")
        return cls(np.concatenate(feats) if feats else np.zeros((0, 0)),
                   np.concatenate(gidx) if gidx else np.zeros(0, dtype=np.intp),
                   edges, len(items), np.array([it.graph.label for it in items], dtype=np.int64))


def _initial_state(features: np.ndarray, params: GgnnParams) -> Var:
    H = params.hidden
    if params.lift_W is not None:
        return ad.linear(features, params.lift_W, params.lift_b)
    d = features.shape[1]
    if d > H:
        raise ValueError(f"feature dimension {d} exceeds hidden size {H}")
    return Var(np.pad(features, ((0, 0), (0, H - d))))


def propagate_batch(batch: GraphBatch, params: GgnnParams, steps: int) -> Var:
    """Vertex states ``[total vertices, hidden]`` after ``steps`` message rounds."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x = _initial_state(batch.features, params)
    N = x.shape[0]
    n_tf = ad.value(params.msg_W).shape[0]
    if len(batch.edges) != n_tf:
        raise ValueError(f"batch has {len(batch.edges)} edge groups, parameters have {n_tf} transforms")
    for _ in range(steps):
        msg = Var(np.zeros((N, params.hidden)))
        for k, (src, dst) in enumerate(batch.edges):
            if src.size == 0:
                continue
            W = ad.take_rows(params.msg_W, k)
            b = ad.take_rows(params.msg_b, k)
            msg = msg + ad.segment_sum(ad.linear(ad.take_rows(x, src), W, b), dst, N)
        x = gru_cell(x, msg, params.gru)
    return x


def propagate(g: CodeGraph, feats: np.ndarray, params: GgnnParams, steps: int = 8,
              config: GgnnConfig | None = None) -> Var:
    """Propagate a single graph; ``feats`` holds one row per vertex."""
    config = config or GgnnConfig(hidden=params.hidden)
    return propagate_batch(GraphBatch.build([EncodedGraph(g, np.asarray(feats))], config), params, steps)


def graph_embed(states, graph_index: np.ndarray | None = None, n_graphs: int | None = None) -> Var:
    """Element-wise sum of vertex states, per graph when ``graph_index`` is given."""
    s = ad.as_var(states)
    if s.shape[0] == 0:
        raise ValueError("empty graph")
    if graph_index is None:
        return ad.sum(s, axis=0)
    return ad.segment_sum(s, graph_index, n_graphs)


def head_logits(xg, params: GgnnParams) -> Var:
    return ad.linear(xg, params.head_W, params.head_b)


def pretrain_objective(batch: GraphBatch, params: GgnnParams, steps: int) -> Var:
    """Mean per-graph cross-entropy of the classification head."""
    states = propagate_batch(batch, params, steps)
    xg = graph_embed(states, batch.graph_index, batch.n_graphs)
    logp = ad.log_softmax(head_logits(xg, params))
    return ad.mean(ad.pick(logp, batch.labels)) * -1.0


def _embed_all(items: Sequence[EncodedGraph], params: GgnnParams, config: GgnnConfig,
               chunk: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(items), chunk):
        batch = GraphBatch.build(items[start:start + chunk], config)
        states = propagate_batch(batch, params, config.steps)
        out.append(graph_embed(states, batch.graph_index, batch.n_graphs).data)
    return np.concatenate(out) if out else np.zeros((0, params.hidden))


def predict_graphs(items: Sequence[EncodedGraph], params: GgnnParams, config: GgnnConfig) -> np.ndarray:
    logits = _embed_all(items, params, config) @ params.head_W.T + params.head_b
    return logits.argmax(axis=1)


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = -1.0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "best_f1": self.best_f1,
                "stopped_early": self.stopped_early, "epochs_run": self.epochs_run}


def _check_gradients(grads: dict[str, np.ndarray]) -> None:
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {k}")


def pretrain_ggnn(train: Sequence[EncodedGraph], valid: Sequence[EncodedGraph],
                  config: GgnnConfig | None = None, seed: int = 0,
                  params: GgnnParams | None = None) -> tuple[GgnnParams, TrainLog]:
    """Train the GGNN with a 2-way classification head on graph labels.

    Adam over shuffled minibatches of whole graphs; validation F1 after every
    epoch; stops when it has not improved for ``config.patience`` epochs and
    returns the best-validation parameters.
    """
    config = config or GgnnConfig()
    if not train or not valid:
        raise ValueError("pretraining needs non-empty train and validation splits")
    labels = {it.graph.label for it in train}
    if labels != {0, 1}:
        raise ValueError("training set must contain both labels")
    rng = np.random.default_rng(seed)
    if params is None:
        params = GgnnParams.init(train[0].features.shape[1], config, rng)
    tensors = params.tensors()
    state = AdamState()
    best = dict(tensors)
    tlog = TrainLog()
    since_best = 0
    valid_labels = [it.graph.label for it in valid]
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        total, n = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = GraphBatch.build([train[i] for i in idx], config)
            leaves = {k: Var(v, requires_grad=True) for k, v in tensors.items()}
            loss = pretrain_objective(batch, params.replace_tensors(leaves), config.steps)
            loss.backward()
            grads = {k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                     for k, leaf in leaves.items()}
            _check_gradients(grads)
            tensors, state = adam_step(tensors, grads, state, config.lr)
            total += loss.item() * len(idx)
            n += len(idx)
        params = params.replace_tensors(tensors)
        preds = predict_graphs(valid, params, config)
        f1 = compute_metrics(preds, valid_labels).f1
        tlog.epochs.append({"epoch": epoch, "loss": total / n, "valid_f1": f1})
        log.debug("ggnn epoch %d loss %.4f valid F1 %.4f", epoch, total / n, f1)
        if f1 > tlog.best_f1:
            tlog.best_f1, tlog.best_epoch = f1, epoch
            best = dict(tensors)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                tlog.stopped_early = True
                break
    return params.replace_tensors(best), tlog


def extract_features(items: Sequence[EncodedGraph], params: GgnnParams,
                     config: GgnnConfig | None = None) -> list[FeatureRecord]:
    """Graph embeddings as FeatureRecords, in input order."""
    config = config or GgnnConfig(hidden=params.hidden)
    emb = _embed_all(items, params, config)
    for it, row in zip(items, emb):
        if not np.isfinite(row).all():
            raise FloatingPointError(f"non-finite embedding for graph {it.graph.id}")
    return [FeatureRecord(it.graph.id, row, it.graph.label, it.graph.project)
            for it, row in zip(items, emb)]


def raw_features(items: Sequence[EncodedGraph]) -> list[FeatureRecord]:
    """Sum of initial vertex features per graph; the no-GGNN ablation."""
    out = []
    for it in items:
        if it.features.shape[0] == 0:
            raise ValueError(f"empty graph {it.graph.id}")
        out.append(FeatureRecord(it.graph.id, it.features.sum(axis=0), it.graph.label, it.graph.project))
    return out
