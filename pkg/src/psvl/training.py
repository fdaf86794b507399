"""Training loop, recall/mIoU metrics, ablation dataset builders, and the
pseudo-supervision quantity sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from .corpus import Tagger
from .data import (
    EvalSample,
    FrameFeatureSequence,
    SupervisionSample,
    TemporalSegment,
    resample_features,
    temporal_iou,
)
from .model import EmbeddingTable, LocalizationModel, ModelConfig, localize, loss_total
from .queries import simplify_query

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)

ABLATION_MODES = ("rnd_query", "rnd_time", "nouns_only", "verbs_only")


class TrainingDiverged(Exception):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    lr: float = 4e-4
    grad_clip: float = 10.0
    val_fraction: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class MetricReport:
    """Recall-at-IoU percentages plus mean IoU over n samples."""

    r_at: dict[float, float]
    miou: float
    n: int
    fallback_count: int = 0

    def __post_init__(self):
        thresholds = sorted(self.r_at)
        values = [self.r_at[t] for t in thresholds]
        if any(a < b for a, b in zip(values, values[1:])):
            raise ValueError("recall must be non-increasing in the threshold")

    def to_dict(self) -> dict:
        out = {f"r@{t:g}": self.r_at[t] for t in sorted(self.r_at)}
        out["miou"] = self.miou
        out["n"] = self.n
        out["fallback_count"] = self.fallback_count
        return out

    def table(self) -> str:
        header = " | ".join([f"R@{t:g}" for t in sorted(self.r_at)] + ["mIoU", "n"])
        row = " | ".join(
            [f"{self.r_at[t]:5.2f}" for t in sorted(self.r_at)]
            + [f"{self.miou:5.2f}", str(self.n)]
        )
        return header + "\n" + row


def metrics_from_ious(
    ious: Sequence[float],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    strict: bool = False,
    fallback_count: int = 0,
) -> MetricReport:
    """R@t = share of IoUs meeting threshold t (inclusive by default), as percent."""
    if not ious:
        raise ValueError("empty evaluation set")
    arr = np.asarray(ious, dtype=np.float64)
    r_at = {}
    for t in thresholds:
        hits = (arr > t) if strict else (arr >= t)
        r_at[float(t)] = 100.0 * float(hits.mean())
    return MetricReport(
        r_at=r_at, miou=100.0 * float(arr.mean()), n=len(ious), fallback_count=fallback_count
    )


def _resampled_cache(
    features: Mapping[str, FrameFeatureSequence], video_len: int
) -> dict[str, np.ndarray]:
    return {vid: resample_features(seq, video_len) for vid, seq in features.items()}


def predict_segments(
    model: LocalizationModel,
    video_ids: Sequence[str],
    token_lists: Sequence[Sequence[str]],
    features_128: Mapping[str, np.ndarray],
    embeddings: EmbeddingTable,
    batch_size: int = 64,
) -> list[TemporalSegment]:
    """Batched eval-mode inference; output order matches the input order."""
    was_training = model.training
    model.eval()
    preds = []
    try:
        with torch.no_grad():
            for lo in range(0, len(video_ids), batch_size):
                vids = video_ids[lo : lo + batch_size]
                toks = token_lists[lo : lo + batch_size]
                feats = torch.from_numpy(
                    np.stack([features_128[v] for v in vids]).astype(np.float32)
                )
                word_vecs, mask = embeddings.encode_batch(toks, model.cfg.max_tokens)
                out = model(feats, word_vecs, mask)
                for row in out.pred.cpu().numpy():
                    preds.append(TemporalSegment(float(row[0]), float(row[1])))
    finally:
        if was_training:
            model.train()
    return preds


def evaluate(
    model: LocalizationModel,
    eval_samples: Sequence[EvalSample],
    features: Mapping[str, FrameFeatureSequence],
    embeddings: EmbeddingTable,
    tagger: Tagger,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    strict: bool = False,
) -> MetricReport:
    """Localize each natural-language query (simplified on the fly) and score it.

    Queries that simplify to nothing fall back to predicting the whole video;
    they are counted in the report.
    """
    if not eval_samples:
        raise ValueError("empty evaluation set")
    cache = _resampled_cache(features, model.cfg.video_len)
    queries = [
        simplify_query(s.sentence, tagger, max_tokens=model.cfg.max_tokens)
        for s in eval_samples
    ]
    keep = [i for i, q in enumerate(queries) if q.tokens]
    preds = {
        i: p
        for i, p in zip(
            keep,
            predict_segments(
                model,
                [eval_samples[i].video_id for i in keep],
                [list(queries[i].tokens) for i in keep],
                cache,
                embeddings,
            ),
        )
    }
    fallback = len(eval_samples) - len(keep)
    ious = [
        temporal_iou(preds.get(i, TemporalSegment(0.0, 1.0)), s.segment)
        for i, s in enumerate(eval_samples)
    ]
    return metrics_from_ious(ious, thresholds, strict, fallback_count=fallback)


def evaluate_tokens(
    model: LocalizationModel,
    samples: Sequence[SupervisionSample],
    features_128: Mapping[str, np.ndarray],
    embeddings: EmbeddingTable,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> MetricReport:
    """Internal validation on token-form samples (no sentence simplification)."""
    if not samples:
        raise ValueError("empty validation set")
    preds = predict_segments(
        model,
        [s.video_id for s in samples],
        [list(s.tokens) for s in samples],
        features_128,
        embeddings,
    )
    ious = [temporal_iou(p, s.segment) for p, s in zip(preds, samples)]
    return metrics_from_ious(ious, thresholds)


def random_baseline(
    eval_samples: Sequence[EvalSample],
    seed: int = 0,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> MetricReport:
    """Predict a sorted uniform pair per sample; the no-learning floor."""
    if not eval_samples:
        raise ValueError("empty evaluation set")
    rng = np.random.default_rng(seed)
    ious = []
    for sample in eval_samples:
        a, b = sorted(rng.uniform(0.0, 1.0, size=2).tolist())
        ious.append(temporal_iou(TemporalSegment(a, b), sample.segment))
    return metrics_from_ious(ious, thresholds)


# ---------------------------------------------------------------------------
# ablation dataset builders


def ablate_dataset(
    samples: Sequence[SupervisionSample],
    mode: str,
    verb_vocab: Sequence[str],
    noun_vocab: Sequence[str],
    seed: int = 0,
) -> list[SupervisionSample]:
    """Table-2-style corruptions of a pseudo-supervision dataset.

    rnd_query: all tokens replaced by random vocabulary words (same counts).
    rnd_time: segments replaced by sorted uniform pairs, tokens untouched.
    nouns_only: keep grounded nouns, randomize verbs.
    verbs_only: keep inferred verbs, randomize nouns.
    """
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}")
    rng = np.random.default_rng(seed)
    nouns = sorted(noun_vocab)
    verbs = sorted(verb_vocab)

    def rand_words(vocab, count):
        return tuple(vocab[i] for i in rng.integers(len(vocab), size=count))

    out = []
    for s in samples:
        segment = s.segment
        new_nouns, new_verbs = s.nouns, s.verbs
        if mode == "rnd_time":
            a, b = sorted(rng.uniform(0.0, 1.0, size=2).tolist())
            segment = TemporalSegment(a, b)
        elif mode == "rnd_query":
            new_nouns = rand_words(nouns, len(s.nouns))
            new_verbs = rand_words(verbs, len(s.verbs))
        elif mode == "nouns_only":
            new_verbs = rand_words(verbs, len(s.verbs))
        elif mode == "verbs_only":
            new_nouns = rand_words(nouns, len(s.nouns))
        out.append(
            SupervisionSample(
                video_id=s.video_id,
                segment=segment,
                nouns=new_nouns,
                verbs=new_verbs,
                source="ablation",
            )
        )
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    epoch_reports: list[tuple[int, MetricReport]] = field(default_factory=list)

    def save_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["step", "loss_total", "loss_reg", "loss_guide"]
            )
            writer.writeheader()
            writer.writerows(self.steps)


def train(
    train_samples: Sequence[SupervisionSample],
    features: Mapping[str, FrameFeatureSequence],
    embeddings: EmbeddingTable,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[LocalizationModel, TrainHistory]:
    """Adam on shuffled mini-batches; keeps the epoch snapshot with the best
    held-out mIoU (90/10 split of the supervision by default)."""
    if not train_samples:
        raise ValueError("no training samples")
    missing = {s.video_id for s in train_samples} - set(features)
    if missing:
        raise ValueError(f"features missing for video(s): {sorted(missing)[:3]}")

    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    cache = _resampled_cache(features, model_cfg.video_len)

    order = rng.permutation(len(train_samples))
    n_val = int(len(train_samples) * train_cfg.val_fraction)
    val_set = [train_samples[i] for i in order[:n_val]]
    fit_set = [train_samples[i] for i in order[n_val:]] or list(train_samples)

    model = LocalizationModel(model_cfg)
    optim = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    history = TrainHistory()

    def batch_tensors(batch: Sequence[SupervisionSample]):
        feats = torch.from_numpy(
            np.stack([cache[s.video_id] for s in batch]).astype(np.float32)
        )
        word_vecs, mask = embeddings.encode_batch(
            [list(s.tokens) for s in batch], model_cfg.max_tokens
        )
        gt = torch.tensor([[s.segment.start, s.segment.end] for s in batch])
        return feats, word_vecs, mask, gt

    best_state = None
    best_miou = -1.0
    step = 0
    for epoch in range(train_cfg.epochs):
        model.train()
        perm = rng.permutation(len(fit_set))
        for lo in range(0, len(fit_set), train_cfg.batch_size):
            batch = [fit_set[i] for i in perm[lo : lo + train_cfg.batch_size]]
            feats, word_vecs, mask, gt = batch_tensors(batch)
            total, parts = loss_total(model(feats, word_vecs, mask), gt, model_cfg)
            if not torch.isfinite(total):
                raise TrainingDiverged(step)
            optim.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optim.step()
            history.steps.append(
                {
                    "step": step,
                    "loss_total": total.item(),
                    "loss_reg": parts["loss_reg"].item(),
                    "loss_guide": parts["loss_guide"].item(),
                }
            )
            step += 1
        report = evaluate_tokens(model, val_set or fit_set, cache, embeddings)
        history.epoch_reports.append((epoch, report))
        logger.info("epoch %d: val mIoU %.2f", epoch, report.miou)
        if report.miou > best_miou:
            best_miou = report.miou
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


# ---------------------------------------------------------------------------
# quantity-vs-quality sweep


def quantity_sweep(
    factors: Sequence[float],
    reference_size: int,
    generate_fn: Callable[[int, int], list[SupervisionSample]],
    features: Mapping[str, FrameFeatureSequence],
    embeddings: EmbeddingTable,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    eval_fn: Callable[[LocalizationModel], MetricReport],
) -> list[tuple[float, MetricReport]]:
    """Regenerate, train, and evaluate at each dataset-size factor.

    generate_fn(target_size, seed) must return a fresh pseudo-supervision
    dataset of (up to) target_size samples. No monotonicity is asserted
    anywhere: the quantity/quality trade-off is an empirical question.
    """
    if any(f <= 0 for f in factors):
        raise ValueError("factors must be positive")
    results = []
    for i, factor in enumerate(factors):
        target = int(round(factor * reference_size))
        samples = generate_fn(target, train_cfg.seed + i)
        if not samples:
            raise ValueError(f"factor {factor} produced an empty dataset")
        model, _ = train(samples, features, embeddings, model_cfg, train_cfg)
        results.append((float(factor), eval_fn(model)))
    return results


def save_sweep_csv(results: Sequence[tuple[float, MetricReport]], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        thresholds = sorted(results[0][1].r_at) if results else []
        writer.writerow(["factor", "n"] + [f"r@{t:g}" for t in thresholds] + ["miou"])
        for factor, report in results:
            writer.writerow(
                [factor, report.n]
                + [f"{report.r_at[t]:.4f}" for t in thresholds]
                + [f"{report.miou:.4f}"]
            )


def save_metric_report(report: MetricReport, json_path, text_path=None) -> None:
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(report.table() + "\n")
