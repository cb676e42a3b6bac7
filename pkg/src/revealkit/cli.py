"""Command-line entry point: ``revealkit <command> [options]``.

Each pipeline stage is its own subcommand so intermediate artifacts can be
inspected; ``experiment`` runs every stage for several seeded runs. Success
prints a JSON summary on stdout and exits 0. Failures print
``{"error": {...}}`` on stderr and exit 1; argument errors exit 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .dataprep import dedup, label_patch, load_patches, split, tangled_filter
from .embed import TokenEmbedding, featurize_graph, train_skipgram
from .ggnn import EncodedGraph, GgnnParams, extract_features, pretrain_ggnn, raw_features
from .graph import CodeGraph, dump_graphs, graph_fingerprint, graph_tokens, load_graphs, tokenize
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import MlpParams
from .repr_learner import TripletConfig, predict, train_repr
from .sampling import load_records, save_records, smote
from .stats import compute_metrics

log = logging.getLogger("revealkit")


class CliError(Exception):
    """An expected failure reported to the user without a traceback."""


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> ex.RunConfig:
    cfg = ex.load_config(args.config) if args.config else ex.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "runs", None) is not None:
        cfg.n_runs = args.runs
    cfg.out = args.out
    cfg.__post_init__()
    return cfg


def _run_seed(cfg: ex.RunConfig) -> int:
    # staged commands reproduce run 0 of an experiment
    return ex.derive_seed(cfg.seed, 0)


def _meta_path(features: Path) -> Path:
    return features.with_name(features.name + ".meta.json")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CliError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return rows


# commands

def cmd_ingest(args) -> dict:
    patches = load_patches(args.patches)
    kept = patches if args.keep_tangled else tangled_filter(patches)
    labeled = [f for p in kept for f in label_patch(p)]
    out = _out(args)
    with open(out / "labeled.jsonl", "w") as fh:
        for f in labeled:
            fh.write(json.dumps(f.to_json(), sort_keys=True) + "\n")
    summary = {"patches": len(patches), "patches_kept": len(kept), "functions": len(labeled),
               "vulnerable": sum(f.label for f in labeled), "labeled": str(out / "labeled.jsonl")}
    if args.graphs:
        labels = {f.id: f.label for f in labeled}
        graphs = load_graphs(args.graphs)
        matched = [g.with_label(labels[g.id]) for g in graphs if g.id in labels]
        dump_graphs(matched, out / "graphs.jsonl")
        have = {g.id for g in matched}
        summary.update(graphs=len(matched), graphs_unmatched=len(graphs) - len(matched),
                       functions_without_graph=sum(1 for i in labels if i not in have),
                       graphs_path=str(out / "graphs.jsonl"))
    return summary


def _detect_kind(row: dict) -> str:
    if "vertices" in row:
        return "graphs"
    if "features" in row:
        return "features"
    if "body" in row:
        return "functions"
    raise CliError("cannot tell the record type: expected graph, feature or labeled-function records")


def cmd_stats(args) -> dict:
    rows = _read_jsonl(args.data)
    if not rows:
        raise CliError(f"{args.data}: no records")
    kind = _detect_kind(rows[0])
    if kind == "graphs":
        graphs = load_graphs(args.data)
        labels = [g.label for g in graphs]
        _, dup = dedup(graphs, key=graph_fingerprint)
    elif kind == "features":
        recs = load_records(args.data)
        labels = [r.label for r in recs]
        _, dup = dedup(recs, key=lambda r: r.features.tobytes())
    else:
        labels = [int(r["label"]) for r in rows]
        _, dup = dedup(rows, key=lambda r: tuple(tokenize(r["body"])))
    n_vuln = sum(1 for y in labels if y == 1)
    return {"kind": kind, "records": len(labels), "vulnerable": n_vuln, "clean": len(labels) - n_vuln,
            "vulnerable_fraction": n_vuln / len(labels), "duplicate_fraction": dup}


def _load_graph_input(path) -> list[CodeGraph]:
    graphs = load_graphs(path)
    if not graphs:
        raise CliError(f"{path}: no graphs")
    return graphs


def cmd_train_embed(args) -> dict:
    cfg = _config(args)
    graphs = _load_graph_input(args.graphs)
    e = cfg.embed
    emb = train_skipgram(graph_tokens(graphs), window=e.window, dim=e.dim, epochs=e.epochs,
                         seed=cfg.seed, negatives=e.negatives)
    path = _out(args) / "embedding.json"
    doc = emb.to_json()
    doc.update(config_hash=ex.config_hash(cfg), seed=cfg.seed)
    path.write_text(json.dumps(doc, sort_keys=True))
    return {"embedding": str(path), "vocab": len(emb.vocab), "dim": emb.dim,
            "final_loss": emb.epoch_losses[-1] if emb.epoch_losses else None}


def _load_embedding(args) -> TokenEmbedding:
    path = Path(args.embedding) if args.embedding else Path(args.out) / "embedding.json"
    if not path.exists():
        raise CliError(f"embedding not found: {path} (run train-embed first)")
    return TokenEmbedding.load(path)


def _encode(graphs, emb) -> list[EncodedGraph]:
    return [EncodedGraph(g, featurize_graph(g, emb)) for g in graphs]


def cmd_pretrain_ggnn(args) -> dict:
    cfg = _config(args)
    seed = _run_seed(cfg)
    graphs = _load_graph_input(args.graphs)
    encoded = _encode(graphs, _load_embedding(args))
    train, valid, test = _split_encoded(encoded, cfg, seed)
    params, tlog = pretrain_ggnn(train, valid, cfg.ggnn, seed=seed)
    out = _out(args)
    save_checkpoint(out / "ggnn.json", params.tensors(), kind="ggnn", seed=seed,
                    config=cfg.ggnn.to_json(), config_hash=ex.config_hash(cfg),
                    extra={"input_dim": int(encoded[0].features.shape[1])})
    _write_json(out / "ggnn_log.json", tlog.to_json())
    _write_json(out / "split.json", {"seed": seed, "train": [e.graph.id for e in train],
                                     "valid": [e.graph.id for e in valid],
                                     "test": [e.graph.id for e in test]})
    return {"checkpoint": str(out / "ggnn.json"), "best_epoch": tlog.best_epoch,
            "best_valid_f1": tlog.best_f1, "epochs_run": tlog.epochs_run,
            "stopped_early": tlog.stopped_early}


def _split_encoded(encoded, cfg, seed):
    # split on graphs so the partition matches one computed later on features
    parts = split([e.graph for e in encoded], cfg.split.fractions, seed=seed, stratify=cfg.split.stratify)
    pos = {e.graph.id: e for e in encoded}
    return tuple([pos[g.id] for g in p] for p in parts)


def _load_ggnn(path) -> tuple[GgnnParams, dict]:
    doc = load_checkpoint(path, kind="ggnn")
    gcfg = ex.GgnnConfig.from_json(doc["config"])
    shell = GgnnParams.init(doc["input_dim"], gcfg, np.random.default_rng(0))
    expected = shell.tensors()
    for k, v in doc["params"].items():
        if k not in expected or expected[k].shape != v.shape:
            raise CliError(f"{path}: tensor {k} has shape {v.shape}, expected "
                           f"{expected[k].shape if k in expected else 'no such tensor'}")
    return shell.replace_tensors(doc["params"]), doc


def cmd_extract(args) -> dict:
    cfg = _config(args)
    graphs = _load_graph_input(args.graphs)
    encoded = _encode(graphs, _load_embedding(args))
    out = _out(args)
    if "ggnn" in args.ablate:
        records = raw_features(encoded)
        source, seed, chash = "raw", cfg.seed, ex.config_hash(cfg)
    else:
        path = Path(args.ggnn) if args.ggnn else out / "ggnn.json"
        if not path.exists():
            raise CliError(f"GGNN checkpoint not found: {path} (run pretrain-ggnn first)")
        params, doc = _load_ggnn(path)
        width = encoded[0].features.shape[1]
        if width != doc["input_dim"]:
            raise CliError(f"vertex feature dimension {width} does not match the checkpoint's "
                           f"input dimension {doc['input_dim']}")
        records = extract_features(encoded, params, ex.GgnnConfig.from_json(doc["config"]))
        source, seed, chash = "ggnn", doc["seed"], doc["config_hash"]
    fpath = out / "features.jsonl"
    save_records(records, fpath)
    meta = {"config_hash": chash, "seed": seed, "source": source, "records": len(records),
            "dim": int(records[0].features.shape[0])}
    _write_json(_meta_path(fpath), meta)
    return dict(meta, features=str(fpath))


def _load_features(path) -> tuple[list, dict]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"features not found: {path}")
    recs = load_records(path)
    if not recs:
        raise CliError(f"{path}: no records")
    meta_path = _meta_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return recs, meta


def _feature_splits(recs, cfg: ex.RunConfig, seed: int):
    return split(recs, cfg.split.fractions, seed=seed, stratify=cfg.split.stratify)


def cmd_train_repr(args) -> dict:
    cfg = _config(args)
    seed = _run_seed(cfg)
    fpath = Path(args.features) if args.features else Path(args.out) / "features.jsonl"
    recs, meta = _load_features(fpath)
    train, valid, _ = _feature_splits(recs, cfg, seed)
    if "smote" not in args.ablate:
        train = smote(train, k=cfg.sampling.k, m=cfg.sampling.m or None, seed=seed)
    rcfg = cfg.repr if "loss" not in args.ablate else TripletConfig(**dict(cfg.repr.to_json(), alpha=0.0, beta=0.0))
    params, rlog = train_repr(train, valid, rcfg, seed=seed)
    out = _out(args)
    save_checkpoint(out / "repr.json", params.tensors(), kind="repr", seed=seed, config=rcfg.to_json(),
                    config_hash=meta.get("config_hash", ex.config_hash(cfg)),
                    extra={"input_dim": params.input_dim, "ablate": sorted(args.ablate)})
    _write_json(out / "repr_log.json", rlog.to_json())
    return {"checkpoint": str(out / "repr.json"), "train_records": len(train),
            "best_epoch": rlog.best_epoch, "best_valid_f1": rlog.best_f1, "epochs_run": len(rlog.epochs)}


def _load_repr(path) -> tuple[MlpParams, dict]:
    doc = load_checkpoint(path, kind="repr")
    c = doc["config"]
    shell = MlpParams.init(doc["input_dim"], np.random.default_rng(0), hidden=tuple(c["hidden"]),
                           dropout=c["dropout"])
    expected = shell.tensors()
    for k, v in doc["params"].items():
        if k not in expected or expected[k].shape != v.shape:
            raise CliError(f"{path}: tensor {k} has shape {v.shape}, expected "
                           f"{expected[k].shape if k in expected else 'no such tensor'}")
    return shell.replace_tensors(doc["params"]), doc


def cmd_evaluate(args) -> dict:
    cfg = _config(args)
    fpath = Path(args.features) if args.features else Path(args.out) / "features.jsonl"
    mpath = Path(args.model) if args.model else Path(args.out) / "repr.json"
    if not mpath.exists():
        raise CliError(f"model checkpoint not found: {mpath}")
    recs, meta = _load_features(fpath)
    params, doc = _load_repr(mpath)
    if meta and doc.get("config_hash") != meta.get("config_hash") and not args.force:
        raise CliError(f"config hash mismatch: model {doc.get('config_hash')} vs features "
                       f"{meta.get('config_hash')} (use --force to evaluate anyway)")
    dim = recs[0].features.shape[0]
    if dim != params.input_dim:
        raise CliError(f"feature dimension {dim} does not match model input dimension {params.input_dim}")
    if args.split == "all":
        chosen = recs
    else:
        parts = dict(zip(("train", "valid", "test"), _feature_splits(recs, cfg, _run_seed(cfg))))
        chosen = parts[args.split]
    preds = [p for _, p in predict(chosen, params)]
    metrics = compute_metrics(preds, [r.label for r in chosen])
    result = {"split": args.split, "records": len(chosen), "metrics": metrics.to_json(),
              "config_hash": doc.get("config_hash"), "seed": doc.get("seed")}
    _write_json(_out(args) / f"metrics_{args.split}.json", result)
    return result


def cmd_experiment(args) -> dict:
    cfg = _config(args)
    if args.graphs:
        cfg.graphs, cfg.features = args.graphs, ""
    if args.features:
        cfg.features, cfg.graphs = args.features, ""
    if args.ablate:
        cfg.ablations = tuple(cfg.ablations) + tuple(args.ablate)
        cfg.__post_init__()
    report = ex.run_experiment(cfg)
    jpath, cpath = ex.write_report(report, cfg.out)
    summary = {"report": str(jpath), "summary": str(cpath), "config_hash": report["config_hash"],
               "failures": len(report["failures"]),
               "f1_median": {a: (v["aggregate"]["f1"] or {}).get("median")
                             for a, v in report["arms"].items()}}
    if "scott_knott" in report:
        summary["scott_knott"] = [[t["rank"], t["name"]] for t in report["scott_knott"]]
    return summary


def cmd_show_config(args) -> str:
    return ex.dump_config(_config(args))


# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key-value config file (see show-config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    ablate = argparse.ArgumentParser(add_help=False)
    ablate.add_argument("--ablate", action="append", default=[], choices=ex.ABLATIONS,
                        help="disable a stage: ggnn, smote, or loss (NLL instead of triplet); repeatable")

    p = argparse.ArgumentParser(prog="revealkit", description="Graph-based vulnerability prediction pipeline.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("ingest", parents=[common], help="label patch functions (and matching graphs)")
    s.add_argument("--patches", required=True, metavar="PATH", help="PatchRecord JSONL")
    s.add_argument("--graphs", metavar="PATH", help="unlabeled graphs whose ids match labeled functions")
    s.add_argument("--keep-tangled", action="store_true", help="keep patches changing several functions")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("stats", parents=[common], help="class balance and duplicate fraction")
    s.add_argument("--data", required=True, metavar="PATH", help="graph, feature or labeled-function JSONL")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train-embed", parents=[common], help="train the skip-gram token embedding")
    s.add_argument("--graphs", required=True, metavar="PATH")
    s.set_defaults(func=cmd_train_embed)

    s = sub.add_parser("pretrain-ggnn", parents=[common], help="pretrain the GGNN with its classification head")
    s.add_argument("--graphs", required=True, metavar="PATH")
    s.add_argument("--embedding", metavar="PATH", help="default: OUT/embedding.json")
    s.set_defaults(func=cmd_pretrain_ggnn)

    s = sub.add_parser("extract", parents=[common, ablate], help="write graph embeddings as feature records")
    s.add_argument("--graphs", required=True, metavar="PATH")
    s.add_argument("--embedding", metavar="PATH", help="default: OUT/embedding.json")
    s.add_argument("--ggnn", metavar="PATH", help="default: OUT/ggnn.json")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train-repr", parents=[common, ablate], help="train the representation learner")
    s.add_argument("--features", metavar="PATH", help="default: OUT/features.jsonl")
    s.set_defaults(func=cmd_train_repr)

    s = sub.add_parser("evaluate", parents=[common], help="score a trained model on a split")
    s.add_argument("--features", metavar="PATH", help="default: OUT/features.jsonl")
    s.add_argument("--model", metavar="PATH", help="default: OUT/repr.json")
    s.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    s.add_argument("--force", action="store_true", help="ignore a config hash mismatch")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", parents=[common, ablate], help="seeded multi-run experiment")
    s.add_argument("--runs", type=int, metavar="N", help="number of runs (overrides the config)")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--graphs", metavar="PATH", help="labeled graph JSONL")
    src.add_argument("--features", metavar="PATH", help="precomputed feature records (skips the GGNN)")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("show-config", parents=[common], help="print the effective config with provenance")
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (CliError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        err = {"error": {"command": args.command, "type": type(exc).__name__, "message": str(msg)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        print(json.dumps(result, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
