"""Seeded multi-run experiments over the full pipeline, with ablation arms.

A run splits the labeled graphs, optionally pretrains the GGNN and extracts
graph embeddings, optionally rebalances the training split with SMOTE,
trains the representation learner and scores the test split. Arms that
share a run share its split and its GGNN, so they differ only in the
ablated stage.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataprep import inject_imbalance, split
from .embed import TokenEmbedding, featurize_graph, train_skipgram
from .ggnn import EncodedGraph, GgnnConfig, extract_features, pretrain_ggnn, raw_features
from .graph import DEFAULT_VERTEX_VOCAB, CodeGraph, graph_tokens, load_graphs
from .repr_learner import TripletConfig, predict, train_repr
from .sampling import FeatureRecord, load_records, smote
from .stats import MetricDistribution, a12, bootstrap_test, compare, compute_metrics, scott_knott

log = logging.getLogger(__name__)

ABLATIONS = ("ggnn", "smote", "loss")
METRICS = ("accuracy", "precision", "recall", "f1")
THREADS_ENV = "REVEALKIT_THREADS"


@dataclass
class EmbedConfig:
    window: int = 10
    dim: int = 100
    epochs: int = 5
    negatives: int = 5


@dataclass
class SamplingConfig:
    k: int = 5
    m: int = 0          # target per-class count; 0 means the majority count


@dataclass
class SplitConfig:
    train: float = 0.8
    valid: float = 0.1
    test: float = 0.1
    stratify: bool = True
    test_vulnerable_fraction: float = 0.0   # 0 leaves the test split as drawn

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.valid, self.test)


@dataclass
class RunConfig:
    graphs: str = ""
    features: str = ""      # precomputed FeatureRecords; skips embedding and GGNN
    out: str = "out"
    n_runs: int = 30
    seed: int = 0
    use_ggnn: bool = True
    use_smote: bool = True
    loss: str = "triplet"
    ablations: tuple[str, ...] = ()
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    ggnn: GgnnConfig = field(default_factory=GgnnConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    repr: TripletConfig = field(default_factory=TripletConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self):
        if self.loss not in ("triplet", "nll"):
            raise ValueError(f"loss must be 'triplet' or 'nll', not {self.loss!r}")
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ValueError(f"unknown ablation {bad[0]!r}; choose from {', '.join(ABLATIONS)}")
        self.ablations = tuple(dict.fromkeys(self.ablations))
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        d["ggnn"] = self.ggnn.to_json()
        d["repr"] = self.repr.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        subs = {"embed": EmbedConfig, "sampling": SamplingConfig, "split": SplitConfig}
        for key, kind in subs.items():
            if key in obj:
                obj[key] = kind(**obj[key])
        if "ggnn" in obj:
            obj["ggnn"] = GgnnConfig.from_json(obj["ggnn"])
        if "repr" in obj:
            obj["repr"] = TripletConfig(**obj["repr"])
        if "ablations" in obj:
            obj["ablations"] = tuple(obj["ablations"])
        return cls(**obj)

    def arms(self) -> dict[str, dict]:
        """Arm name -> stage switches. The first arm is the configured pipeline."""
        base = {"use_ggnn": self.use_ggnn, "use_smote": self.use_smote, "loss": self.loss}
        out = {"reveal": base}
        if "ggnn" in self.ablations:
            out["no-ggnn"] = dict(base, use_ggnn=False)
        if "smote" in self.ablations:
            out["no-smote"] = dict(base, use_smote=False)
        if "loss" in self.ablations:
            out["nll-loss"] = dict(base, loss="nll")
        return out


# provenance of each default, shown by `show-config`
PAPER_TABLE = {
    "embed.window", "embed.dim", "ggnn.hidden", "ggnn.steps", "ggnn.lr",
    "repr.hidden", "repr.dropout", "repr.gamma", "repr.alpha", "repr.beta", "repr.lr",
}
PAPER_TEXT = {"ggnn.max_epochs", "ggnn.patience", "repr.max_epochs", "repr.patience", "n_runs"}
# keys that do not change any result and so stay out of the hash
UNHASHED = {"out"}


def provenance(key: str) -> str:
    if key in PAPER_TABLE:
        return "paper-table"
    if key in PAPER_TEXT:
        return "paper-text"
    return "artifact-default"


def config_hash(cfg: RunConfig) -> str:
    d = {k: v for k, v in cfg.to_json().items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(master: int, index: int) -> int:
    """Per-run seed from hashing ``(master seed, run index)``."""
    digest = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# key-value config files

_SECTIONS = ("embed", "ggnn", "sampling", "repr", "split")


def _format(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "yes", "1")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(t) for t in items)
        return tuple(items)
    return text


def dump_config(cfg: RunConfig, provenance_comments: bool = True) -> str:
    """Render ``cfg`` as an INI document, optionally tagging every key with its provenance."""
    lines = []

    def emit(prefix, obj):
        for f in fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            tag = f"  # {provenance(key)}" if provenance_comments else ""
            lines.append(f"{f.name} = {_format(v)}{tag}")

    lines.append("[experiment]")
    for f in fields(cfg):
        if f.name not in _SECTIONS:
            v = getattr(cfg, f.name)
            tag = f"  # {provenance(f.name)}" if provenance_comments else ""
            lines.append(f"{f.name} = {_format(v)}{tag}")
    for sec in _SECTIONS:
        lines.append("")
        lines.append(f"[{sec}]")
        emit(f"{sec}.", getattr(cfg, sec))
    return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from None
    cfg = RunConfig()
    unknown = [s for s in cp.sections() if s not in _SECTIONS + ("experiment",)]
    if unknown:
        raise ValueError(f"{source}: unknown section [{unknown[0]}]")

    def fill(obj, section):
        names = {f.name for f in fields(obj)} - (set(_SECTIONS) if obj is cfg else set())
        for key, raw in cp.items(section):
            if key not in names:
                raise ValueError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                setattr(obj, key, _parse(raw, getattr(obj, key)))
            except ValueError as exc:
                raise ValueError(f"{source}: [{section}] {key}: {exc}") from None

    if cp.has_section("experiment"):
        fill(cfg, "experiment")
    for sec in _SECTIONS:
        if cp.has_section(sec):
            fill(getattr(cfg, sec), sec)
    cfg.__post_init__()
    cfg.repr.__post_init__()
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(), str(path))


# one run

class StageError(RuntimeError):
    def __init__(self, stage: str, run: int, cause: BaseException):
        super().__init__(f"run {run}: stage {stage!r} failed: {cause}")
        self.stage, self.run, self.cause = stage, run, cause


@dataclass
class RunInputs:
    graphs: list[CodeGraph] | None = None
    embedding: TokenEmbedding | None = None
    features: list[FeatureRecord] | None = None


@contextmanager
def _stage(name: str, run: int):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, run, exc) from exc


def _repr_cfg(cfg: RunConfig, loss: str) -> TripletConfig:
    if loss == "nll":
        return TripletConfig(**dict(cfg.repr.to_json(), alpha=0.0, beta=0.0))
    return cfg.repr


def _by_ids(records: Sequence[FeatureRecord], ids: Sequence[str]) -> list[FeatureRecord]:
    index = {r.id: r for r in records}
    return [index[i] for i in ids]


def run_once(cfg: RunConfig, inputs: RunInputs, run: int) -> dict:
    """One seeded run over every arm. Returns per-arm metrics or failures."""
    seed = derive_seed(cfg.seed, run)
    arms = cfg.arms()
    result: dict = {"run": run, "seed": seed, "arms": {}}
    try:
        with _stage("split", run):
            units = inputs.graphs if inputs.graphs is not None else inputs.features
            parts = split(units, cfg.split.fractions, seed=seed, stratify=cfg.split.stratify)
            ids = [[u.id for u in p] for p in parts]
            if cfg.split.test_vulnerable_fraction > 0:
                test = inject_imbalance(parts[2], cfg.split.test_vulnerable_fraction, seed=seed)
                ids[2] = [u.id for u in test]
        feature_sets: dict[bool, list[FeatureRecord]] = {}
        if inputs.features is not None:
            feature_sets[True] = feature_sets[False] = inputs.features
        else:
            with _stage("featurize", run):
                encoded = [EncodedGraph(g, featurize_graph(g, inputs.embedding)) for g in inputs.graphs]
            if any(a["use_ggnn"] for a in arms.values()):
                with _stage("pretrain-ggnn", run):
                    train_e = [encoded[i] for i in _positions(inputs.graphs, ids[0])]
                    valid_e = [encoded[i] for i in _positions(inputs.graphs, ids[1])]
                    params, glog = pretrain_ggnn(train_e, valid_e, cfg.ggnn, seed=seed)
                    result["ggnn"] = {"best_epoch": glog.best_epoch, "best_f1": glog.best_f1,
                                      "epochs_run": glog.epochs_run}
                with _stage("extract", run):
                    feature_sets[True] = extract_features(encoded, params, cfg.ggnn)
            if any(not a["use_ggnn"] for a in arms.values()):
                with _stage("extract", run):
                    feature_sets[False] = raw_features(encoded)
    except StageError as exc:
        log.warning("%s", exc)
        for name in arms:
            result["arms"][name] = {"failed": {"stage": exc.stage, "error": str(exc.cause)}}
        return result

    for name, arm in arms.items():
        try:
            feats = feature_sets[arm["use_ggnn"]]
            train, valid, test = (_by_ids(feats, i) for i in ids)
            if arm["use_smote"]:
                with _stage("smote", run):
                    m = cfg.sampling.m or None
                    train = smote(train, k=cfg.sampling.k, m=m, seed=seed)
            with _stage("train-repr", run):
                model, rlog = train_repr(train, valid, _repr_cfg(cfg, arm["loss"]), seed=seed)
            with _stage("evaluate", run):
                preds = [p for _, p in predict(test, model)]
                metrics = compute_metrics(preds, [r.label for r in test])
            result["arms"][name] = {"metrics": metrics.to_json(), "repr_best_epoch": rlog.best_epoch,
                                    "repr_epochs_run": len(rlog.epochs)}
        except StageError as exc:
            log.warning("arm %s: %s", name, exc)
            result["arms"][name] = {"failed": {"stage": exc.stage, "error": str(exc.cause)}}
    return result


def _positions(units: Sequence, ids: Sequence[str]) -> list[int]:
    where = {u.id: i for i, u in enumerate(units)}
    return [where[i] for i in ids]


# whole experiment

def load_inputs(cfg: RunConfig) -> RunInputs:
    if bool(cfg.graphs) == bool(cfg.features):
        raise ValueError("configure exactly one of 'graphs' and 'features'")
    if cfg.features:
        if "ggnn" in cfg.ablations:
            raise ValueError("the ggnn ablation needs graph input, not precomputed features")
        records = load_records(cfg.features)
        _check_unique([r.id for r in records], cfg.features)
        return RunInputs(features=records)
    graphs = load_graphs(cfg.graphs, DEFAULT_VERTEX_VOCAB)
    _check_unique([g.id for g in graphs], cfg.graphs)
    # the token embedding is unsupervised and shared by every run
    emb = train_skipgram(graph_tokens(graphs), window=cfg.embed.window, dim=cfg.embed.dim,
                         epochs=cfg.embed.epochs, seed=cfg.seed, negatives=cfg.embed.negatives)
    return RunInputs(graphs=graphs, embedding=emb)


def _check_unique(ids: list[str], source: str) -> None:
    if len(set(ids)) != len(ids):
        raise ValueError(f"{source}: duplicate record ids")


def worker_count(n_runs: int) -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(n, n_runs))


def _run_star(args):
    return run_once(*args)


def run_experiment(cfg: RunConfig, inputs: RunInputs | None = None) -> dict:
    """Run ``cfg.n_runs`` seeded runs and assemble the report (merged in run order)."""
    inputs = inputs or load_inputs(cfg)
    jobs = [(cfg, inputs, i) for i in range(cfg.n_runs)]
    workers = worker_count(cfg.n_runs)
    if workers == 1:
        runs = [run_once(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_star, jobs))
    return build_report(cfg, runs)


def build_report(cfg: RunConfig, runs: list[dict]) -> dict:
    runs = sorted(runs, key=lambda r: r["run"])
    arms = list(cfg.arms())
    # the output directory is left out so relocated reruns stay byte-identical
    shown = {k: v for k, v in cfg.to_json().items() if k not in UNHASHED}
    report: dict = {"config": shown, "config_hash": config_hash(cfg), "seed": cfg.seed,
                    "n_runs": cfg.n_runs, "arms": {}, "failures": [], "runs": runs}
    f1s: dict[str, list[float]] = {}
    for name in arms:
        ok = [r["arms"][name]["metrics"] for r in runs if "metrics" in r["arms"][name]]
        for r in runs:
            if "failed" in r["arms"][name]:
                report["failures"].append(dict(r["arms"][name]["failed"], arm=name, run=r["run"]))
        agg = {m: MetricDistribution.of([x[m] for x in ok]).to_json() if ok else None for m in METRICS}
        report["arms"][name] = {"completed": len(ok), "failed": cfg.n_runs - len(ok), "aggregate": agg}
        if ok:
            f1s[name] = [x["f1"] for x in ok]
    if len(f1s) > 1:
        names = list(f1s)
        report["comparisons"] = [
            {"a": a, "b": b, "metric": "f1", "p_value": bootstrap_test(f1s[a], f1s[b], seed=cfg.seed),
             "a12": a12(f1s[a], f1s[b]), "verdict": compare(f1s[a], f1s[b], seed=cfg.seed)}
            for i, a in enumerate(names) for b in names[i + 1:]
        ]
        report["scott_knott"] = [t.to_json() for t in scott_knott(f1s, seed=cfg.seed)]
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_csv(report: dict) -> str:
    """Per-arm summary: median and IQR of each metric, plus the Scott-Knott rank."""
    ranks = {t["name"]: t["rank"] for t in report.get("scott_knott", [])}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "completed", "failed", "rank"]
               + [f"{m}_{s}" for m in METRICS for s in ("median", "iqr")])
    for name, arm in report["arms"].items():
        row = [name, arm["completed"], arm["failed"], ranks.get(name, 1 if arm["completed"] else "")]
        for m in METRICS:
            d = arm["aggregate"][m]
            row += [repr(d["median"]), repr(d["iqr"])] if d else ["", ""]
        w.writerow(row)
    return buf.getvalue()


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / "report.json", out / "report.csv"
    jpath.write_text(report_json(report))
    cpath.write_text(report_csv(report))
    return jpath, cpath
