"""Command-line orchestration of the pipeline.

Stages: synth -> build-corpus -> propose -> gen-queries -> build-dataset ->
train -> eval, plus ablate / sweep / report. Every stage reads and writes only
documented files under the data root (--out, PSVL_DATA_DIR, or ./psvl_data) and
is reproducible byte-for-byte from (inputs, config, seed). Ground-truth eval
segments are read exclusively by the eval and report stages.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import proposals as prop_mod
from . import queries as query_mod
from . import training as train_mod
from .config import ConfigError, PipelineConfig, apply_override, load_config, save_config
from .data import (
    load_detections,
    load_eval_samples,
    load_feature_manifest,
    load_supervision,
    load_word_embeddings,
    read_manifest,
    resample_features,
    save_supervision,
)
from .model import EmbeddingTable, load_checkpoint, save_checkpoint
from .synthetic import synth_generate
from .tagging import rule_based_tagger

COMMANDS = (
    "synth",
    "build-corpus",
    "propose",
    "gen-queries",
    "build-dataset",
    "train",
    "eval",
    "ablate",
    "sweep",
    "report",
)


def _data_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("PSVL_DATA_DIR", "psvl_data"))


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    for override in args.set or []:
        if "=" not in override:
            raise ConfigError(f"--set expects key=value, got {override!r}")
        key, value = override.split("=", 1)
        cfg = apply_override(cfg, key, value)
    return cfg


def _embeddings(cfg: PipelineConfig, root: Path) -> EmbeddingTable:
    table = load_word_embeddings(root / cfg.data.embeddings, cfg.model.word_dim)
    return EmbeddingTable(table, cfg.model.word_dim)


# ---------------------------------------------------------------------------
# stages


def cmd_synth(cfg: PipelineConfig, root: Path, args) -> dict:
    paths = synth_generate(cfg.synth, root)
    return {
        "videos": cfg.synth.num_videos,
        "eval_videos": cfg.synth.eval_videos,
        "manifest_train": str(paths.manifest_train),
        "manifest_eval": str(paths.manifest_eval),
    }


def cmd_build_corpus(cfg: PipelineConfig, root: Path, args) -> dict:
    sentences = corpus_mod.ingest_corpus(root / cfg.data.corpus, rule_based_tagger)
    model = corpus_mod.build_cooccurrence(
        sentences,
        min_count=cfg.corpus.min_count,
        stop_verbs=frozenset(cfg.corpus.stop_verbs),
    )
    corpus_mod.save_model(model, root / cfg.data.cooccurrence)
    return {
        "sentences": len(sentences),
        "nouns": len(model.noun_vocab),
        "verbs": len(model.verb_vocab),
        "model": str(root / cfg.data.cooccurrence),
    }


def cmd_propose(cfg: PipelineConfig, root: Path, args) -> dict:
    features = load_feature_manifest(root / cfg.data.manifest_train)
    rows = []
    for video_id in sorted(features):
        feats = resample_features(features[video_id], cfg.model.video_len)
        seed = prop_mod.per_video_seed(cfg.proposal.seed, video_id)
        sampled, atomics = prop_mod.propose_for_video(feats, cfg.proposal, seed)
        for comp in sampled:
            score = None
            if cfg.proposal.scoring != "uniform" and comp.atomic_span is not None:
                score = prop_mod.score_composite(comp, feats, atomics, cfg.proposal.scoring)
            rows.append(
                prop_mod.Proposal(
                    video_id=video_id,
                    segment=comp.segment,
                    method=cfg.proposal.method,
                    score=score,
                )
            )
    prop_mod.save_proposals(rows, root / cfg.data.proposals)
    return {"proposals": len(rows), "path": str(root / cfg.data.proposals)}


def cmd_gen_queries(cfg: PipelineConfig, root: Path, args) -> dict:
    proposals = prop_mod.load_proposals(root / cfg.data.proposals)
    detections = load_detections(root / cfg.data.detections)
    predictor = corpus_mod.load_model(root / cfg.data.cooccurrence)
    manifest = read_manifest(root / cfg.data.manifest_train)
    video_frames = {e.video_id: e.num_frames for e in manifest.entries}
    samples, dropped = query_mod.build_dataset(
        video_frames,
        [(p.video_id, p.segment) for p in proposals],
        detections,
        predictor,
        cfg.query,
    )
    save_supervision(samples, root / cfg.data.queries)
    return {"samples": len(samples), "dropped": dropped, "path": str(root / cfg.data.queries)}


def cmd_build_dataset(cfg: PipelineConfig, root: Path, args) -> dict:
    samples = load_supervision(root / cfg.data.queries)
    target = cfg.build.target_size
    if target is not None and target < len(samples):
        rng = np.random.default_rng(cfg.build.subsample_seed)
        keep = sorted(rng.choice(len(samples), size=target, replace=False).tolist())
        samples = [samples[i] for i in keep]
    save_supervision(samples, root / cfg.data.dataset)
    return {"samples": len(samples), "path": str(root / cfg.data.dataset)}


def cmd_train(cfg: PipelineConfig, root: Path, args) -> dict:
    samples = load_supervision(root / cfg.data.dataset)
    features = load_feature_manifest(root / cfg.data.manifest_train)
    embeddings = _embeddings(cfg, root)
    model, history = train_mod.train(samples, features, embeddings, cfg.model, cfg.train)
    save_checkpoint(model, root / cfg.data.checkpoint)
    history.save_csv(root / cfg.data.history)
    best = max((r.miou for _, r in history.epoch_reports), default=0.0)
    return {
        "steps": len(history.steps),
        "best_val_miou": best,
        "checkpoint": str(root / cfg.data.checkpoint),
    }


def cmd_eval(cfg: PipelineConfig, root: Path, args) -> dict:
    model = load_checkpoint(root / cfg.data.checkpoint)
    features = load_feature_manifest(root / cfg.data.manifest_eval)
    eval_samples = load_eval_samples(root / cfg.data.eval_samples)
    embeddings = _embeddings(cfg, root)
    report = train_mod.evaluate(
        model,
        eval_samples,
        features,
        embeddings,
        rule_based_tagger,
        thresholds=cfg.eval.thresholds,
        strict=cfg.eval.strict_recall,
    )
    metrics_path = root / cfg.data.metrics
    train_mod.save_metric_report(report, metrics_path, metrics_path.with_suffix(".txt"))
    return report.to_dict()


def cmd_ablate(cfg: PipelineConfig, root: Path, args) -> dict:
    samples = load_supervision(root / cfg.data.dataset)
    model = corpus_mod.load_model(root / cfg.data.cooccurrence)
    ablated = train_mod.ablate_dataset(
        samples, args.mode, model.verbs, model.nouns, seed=cfg.train.seed
    )
    out_path = root / f"dataset_{args.mode}.jsonl"
    save_supervision(ablated, out_path)
    return {"mode": args.mode, "samples": len(ablated), "path": str(out_path)}


def cmd_sweep(cfg: PipelineConfig, root: Path, args) -> dict:
    detections = load_detections(root / cfg.data.detections)
    predictor = corpus_mod.load_model(root / cfg.data.cooccurrence)
    features = load_feature_manifest(root / cfg.data.manifest_train)
    eval_features = load_feature_manifest(root / cfg.data.manifest_eval)
    eval_samples = load_eval_samples(root / cfg.data.eval_samples)
    embeddings = _embeddings(cfg, root)
    video_frames = {vid: seq.num_frames for vid, seq in features.items()}

    reference = cfg.sweep.reference_size
    if reference is None:
        reference = len(features) * cfg.synth.blocks_per_video

    def generate(target: int, seed: int):
        import dataclasses

        per_video = max(1, math.ceil(target / len(features)))
        pcfg = dataclasses.replace(cfg.proposal, samples_per_video=per_video, seed=seed)
        pairs = []
        for video_id in sorted(features):
            feats = resample_features(features[video_id], cfg.model.video_len)
            vseed = prop_mod.per_video_seed(seed, video_id)
            sampled, _ = prop_mod.propose_for_video(feats, pcfg, vseed)
            pairs.extend((video_id, c.segment) for c in sampled)
        samples, _ = query_mod.build_dataset(
            video_frames, pairs, detections, predictor, cfg.query
        )
        if len(samples) > target:
            rng = np.random.default_rng(seed)
            keep = sorted(rng.choice(len(samples), size=target, replace=False).tolist())
            samples = [samples[i] for i in keep]
        return samples

    def eval_fn(model):
        return train_mod.evaluate(
            model, eval_samples, eval_features, embeddings, rule_based_tagger,
            thresholds=cfg.eval.thresholds, strict=cfg.eval.strict_recall,
        )

    results = train_mod.quantity_sweep(
        cfg.sweep.factors, reference, generate, features, embeddings,
        cfg.model, cfg.train, eval_fn,
    )
    train_mod.save_sweep_csv(results, root / "sweep.csv")
    return {
        "reference_size": reference,
        "results": [{"factor": f, **r.to_dict()} for f, r in results],
        "path": str(root / "sweep.csv"),
    }


def cmd_report(cfg: PipelineConfig, root: Path, args) -> dict:
    lines = []
    out = {"root": str(root)}
    metrics_path = root / cfg.data.metrics
    if metrics_path.exists():
        with open(metrics_path, encoding="utf-8") as fh:
            metrics = json.load(fh)
        lines.append("evaluation metrics")
        lines.append(json.dumps(metrics, indent=2))
        out["metrics"] = metrics
    sweep_path = root / "sweep.csv"
    if sweep_path.exists():
        import csv as _csv

        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        with open(sweep_path, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        factors = [float(r["factor"]) for r in rows]
        mious = [float(r["miou"]) for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(factors, mious, marker="o")
        ax.set_xlabel("pseudo-supervision size (x reference)")
        ax.set_ylabel("mIoU (%)")
        ax.set_title("quantity vs quality")
        fig.tight_layout()
        curve_path = root / "quantity_curve.png"
        fig.savefig(curve_path, dpi=150)
        plt.close(fig)
        lines.append(f"quantity curve: {curve_path}")
        out["quantity_curve"] = str(curve_path)
        out["sweep_rows"] = len(rows)
    report_path = root / "report.txt"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    out["report"] = str(report_path)
    return out


_HANDLERS = {
    "synth": cmd_synth,
    "build-corpus": cmd_build_corpus,
    "propose": cmd_propose,
    "gen-queries": cmd_gen_queries,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psvl",
        description="Zero-shot video localization via generated pseudo-supervision.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override every stage seed")
        p.add_argument("--out", help="data root (default $PSVL_DATA_DIR or ./psvl_data)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config path, e.g. proposal.k=4",
        )
        if name == "ablate":
            p.add_argument("--mode", required=True, choices=train_mod.ABLATION_MODES)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        root = _data_root(args)
        root.mkdir(parents=True, exist_ok=True)
        save_config(cfg, root / f"config_used_{args.command.replace('-', '_')}.json")
        summary = _HANDLERS[args.command](cfg, root, args)
    except Exception as exc:  # pragma: no cover - exercised via CLI tests
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    print(json.dumps({"command": args.command, **summary}, indent=2))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
