"""Temporal event proposals: atomic event discovery and composite enumeration.

Atomic events come from clustering per-frame "contextualized features" (columns
of the frame-wise cosine self-similarity matrix) jointly with the frame index,
then converting the label sequence to contiguous runs. Composite events are all
consecutive spans of atomic events; a few are sampled per video as the final
proposals. Baselines: sliding windows, adjacent-feature-difference boundaries,
and clustering of the raw frame features.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import TemporalSegment

logger = logging.getLogger(__name__)

SCORING_METHODS = ("uniform", "compactness", "diversity")

# Adjacent runs whose mean features are this cosine-similar are treated as one
# event: k-means can split a stationary region purely on the index coordinate.
COALESCE_SIMILARITY = 0.999


@dataclass(frozen=True)
class AtomicEvent:
    """Contiguous frame run [frame_start, frame_end) assigned to one cluster."""

    frame_start: int
    frame_end: int
    cluster_id: int

    def __post_init__(self):
        if not (0 <= self.frame_start < self.frame_end):
            raise ValueError(f"bad atomic event [{self.frame_start}, {self.frame_end})")


@dataclass(frozen=True)
class CompositeEvent:
    """Consecutive span of atomic events; atomic_span is None for window baselines."""

    atomic_span: Optional[tuple[int, int]]  # (first, last) inclusive
    segment: TemporalSegment


@dataclass(frozen=True)
class ProposalConfig:
    k: int = 5
    index_weight: float = 1.0
    min_run: int = 3
    samples_per_video: int = 2
    scoring: str = "uniform"
    seed: int = 0
    method: str = "contextual"  # contextual | frame | actionbyte | sliding_window
    window_lengths: tuple[int, ...] = (16, 32, 64)
    window_stride: int = 8
    boundary_tau: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.min_run < 1 or self.samples_per_video < 1:
            raise ValueError("k, min_run, and samples_per_video must be >= 1")
        if self.scoring not in SCORING_METHODS:
            raise ValueError(f"unknown scoring {self.scoring!r}")


def per_video_seed(seed: int, video_id: str) -> int:
    """Stable per-video seed so fan-out across workers cannot change results."""
    return (seed ^ zlib.crc32(video_id.encode("utf-8"))) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# self-similarity


def self_similarity(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of frame features; column j contextualizes frame j.

    Zero-norm rows get similarity 0 to every other row and 1 to themselves.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError(f"expected a T x D matrix, got shape {feats.shape}")
    norms = np.linalg.norm(feats, axis=1)
    zero = norms == 0.0
    if zero.any():
        logger.warning("self_similarity: %d zero-norm frame(s)", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    unit = feats / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    np.fill_diagonal(sim, 1.0)
    return sim


# ---------------------------------------------------------------------------
# k-means (seeded, restarted, empty clusters re-seeded to the farthest point)


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _kmeans(points: np.ndarray, k: int, rng, n_restarts: int = 10, max_iter: int = 100):
    """Lloyd's algorithm; returns the labels of the best restart by inertia."""
    n = points.shape[0]
    k = min(k, n)
    best_labels = None
    best_inertia = np.inf
    for _ in range(n_restarts):
        centers = _kmeans_pp_init(points, k, rng)
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            assigned = d2[np.arange(n), new_labels]
            for c in range(k):
                members = new_labels == c
                if not members.any():
                    far = int(assigned.argmax())
                    centers[c] = points[far]
                    new_labels[far] = c
                    assigned[far] = 0.0
                    members = new_labels == c
                centers[c] = points[members].mean(axis=0)
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


# ---------------------------------------------------------------------------
# label runs -> atomic events


def _runs_from_labels(labels: Sequence[int]) -> list[list[int]]:
    """Maximal contiguous runs as [start, end, label] triples."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append([start, i, int(labels[start])])
            start = i
    return runs


def _mean_cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def _coalesce_same_label(runs):
    merged = [runs[0]]
    for run in runs[1:]:
        if run[2] == merged[-1][2]:
            merged[-1] = [merged[-1][0], run[1], merged[-1][2]]
        else:
            merged.append(run)
    return merged


def _merge_short_runs(runs, vectors, min_run):
    """Fold runs shorter than min_run into the more feature-similar neighbor."""

    def run_mean(run):
        return vectors[run[0] : run[1]].mean(axis=0)

    while len(runs) > 1:
        lengths = [r[1] - r[0] for r in runs]
        shortest = min(range(len(runs)), key=lambda i: (lengths[i], i))
        if lengths[shortest] >= min_run:
            break
        mean = run_mean(runs[shortest])
        left_sim = -np.inf if shortest == 0 else _mean_cosine(mean, run_mean(runs[shortest - 1]))
        right_sim = (
            -np.inf if shortest == len(runs) - 1 else _mean_cosine(mean, run_mean(runs[shortest + 1]))
        )
        target = shortest - 1 if left_sim >= right_sim else shortest + 1
        lo, hi = min(shortest, target), max(shortest, target)
        runs[lo : hi + 1] = [[runs[lo][0], runs[hi][1], runs[target][2]]]
        runs = _coalesce_same_label(runs)
    return runs


def _coalesce_similar_runs(runs, vectors, threshold=COALESCE_SIMILARITY):
    """Merge adjacent runs whose mean features are effectively identical.

    Needed because the index coordinate makes k-means split stationary regions
    into arbitrary time chunks with indistinguishable features.
    """
    merged = [runs[0]]
    for run in runs[1:]:
        prev_mean = vectors[merged[-1][0] : merged[-1][1]].mean(axis=0)
        cur_mean = vectors[run[0] : run[1]].mean(axis=0)
        if _mean_cosine(prev_mean, cur_mean) >= threshold:
            merged[-1] = [merged[-1][0], run[1], merged[-1][2]]
        else:
            merged.append(run)
    return merged


def _runs_to_events(runs) -> list[AtomicEvent]:
    return [AtomicEvent(frame_start=r[0], frame_end=r[1], cluster_id=r[2]) for r in runs]


def _cluster_to_atomics(vectors, cfg: ProposalConfig, seed: int) -> list[AtomicEvent]:
    """Cluster per-frame vectors (with appended scaled index) into atomic events."""
    t = vectors.shape[0]
    index_col = cfg.index_weight * np.arange(t, dtype=np.float64)[:, None] / t
    points = np.concatenate([np.asarray(vectors, dtype=np.float64), index_col], axis=1)
    rng = np.random.default_rng(seed)
    labels = _kmeans(points, min(cfg.k, t), rng)
    runs = _runs_from_labels(labels)
    runs = _merge_short_runs(runs, vectors, cfg.min_run)
    runs = _coalesce_similar_runs(runs, vectors)
    return _runs_to_events(runs)


def atomic_events(similarity: np.ndarray, cfg: ProposalConfig, seed: Optional[int] = None) -> list[AtomicEvent]:
    """Atomic events from contextualized features (columns of the similarity matrix)."""
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity must be square, got shape {sim.shape}")
    return _cluster_to_atomics(sim.T, cfg, cfg.seed if seed is None else seed)


def frame_feature_atomics(features: np.ndarray, cfg: ProposalConfig, seed: Optional[int] = None) -> list[AtomicEvent]:
    """Baseline: cluster raw frame features instead of contextualized ones."""
    feats = np.asarray(features, dtype=np.float64)
    return _cluster_to_atomics(feats, cfg, cfg.seed if seed is None else seed)


def actionbyte_boundaries(features: np.ndarray, cfg: ProposalConfig) -> list[AtomicEvent]:
    """Baseline: cut where adjacent-frame feature differences are abnormally large.

    A boundary is placed at t+1 when ||f_{t+1} - f_t|| exceeds mean + tau * std
    of all adjacent-difference norms; short runs merge as in atomic_events.
    """
    feats = np.asarray(features, dtype=np.float64)
    t = feats.shape[0]
    if t < 2:
        raise ValueError("need at least 2 frames")
    diffs = np.linalg.norm(np.diff(feats, axis=0), axis=1)
    threshold = diffs.mean() + cfg.boundary_tau * diffs.std()
    cuts = [0] + [i + 1 for i in range(t - 1) if diffs[i] > threshold] + [t]
    runs = [[cuts[i], cuts[i + 1], i] for i in range(len(cuts) - 1)]
    runs = _merge_short_runs(runs, feats, cfg.min_run)
    return _runs_to_events(runs)


# ---------------------------------------------------------------------------
# composites


def atomic_boundaries(atomics: Sequence[AtomicEvent]) -> list[int]:
    return [atomics[0].frame_start] + [a.frame_end for a in atomics]


def _check_partition(atomics: Sequence[AtomicEvent]) -> int:
    if not atomics:
        raise ValueError("empty atomic event list")
    if atomics[0].frame_start != 0:
        raise ValueError("atomic events must start at frame 0")
    for prev, cur in zip(atomics, atomics[1:]):
        if cur.frame_start != prev.frame_end:
            raise ValueError("atomic events must be contiguous")
    return atomics[-1].frame_end


def enumerate_composites(atomics: Sequence[AtomicEvent]) -> list[CompositeEvent]:
    """All m(m+1)/2 consecutive spans of the atomic partition, in (i, j) order."""
    t = _check_partition(atomics)
    out = []
    for i in range(len(atomics)):
        for j in range(i, len(atomics)):
            seg = TemporalSegment(atomics[i].frame_start / t, atomics[j].frame_end / t)
            out.append(CompositeEvent(atomic_span=(i, j), segment=seg))
    return out


def score_composite(
    composite: CompositeEvent,
    features: np.ndarray,
    atomics: Sequence[AtomicEvent],
    method: str,
) -> float:
    """Compactness: mean pairwise frame cosine inside the span. Diversity: mean
    pairwise (1 - cosine) between the member atomic events' mean features."""
    if composite.atomic_span is None:
        raise ValueError("composite has no atomic span to score")
    feats = np.asarray(features, dtype=np.float64)
    first, last = composite.atomic_span
    if method == "compactness":
        lo = atomics[first].frame_start
        hi = atomics[last].frame_end
        if hi - lo < 2:
            return 1.0
        sim = self_similarity(feats[lo:hi])
        n = hi - lo
        iu = np.triu_indices(n, k=1)
        return float(sim[iu].mean())
    if method == "diversity":
        if last == first:
            return 0.0
        means = [feats[a.frame_start : a.frame_end].mean(axis=0) for a in atomics[first : last + 1]]
        dists = [
            1.0 - _mean_cosine(means[i], means[j])
            for i in range(len(means))
            for j in range(i + 1, len(means))
        ]
        return float(np.mean(dists))
    raise ValueError(f"unknown scoring method {method!r}")


def sample_composites(
    composites: Sequence[CompositeEvent],
    cfg: ProposalConfig,
    features: Optional[np.ndarray] = None,
    atomics: Optional[Sequence[AtomicEvent]] = None,
    seed: Optional[int] = None,
) -> list[CompositeEvent]:
    """Pick samples_per_video composites: seeded uniform draw without replacement,
    or the top scorers under the configured scoring function."""
    if not composites:
        raise ValueError("no composites to sample from")
    n_take = min(cfg.samples_per_video, len(composites))
    if cfg.scoring == "uniform":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        chosen = sorted(rng.choice(len(composites), size=n_take, replace=False).tolist())
        return [composites[i] for i in chosen]
    if features is None or atomics is None:
        raise ValueError(f"{cfg.scoring} scoring needs features and atomics")
    scored = [
        (score_composite(c, features, atomics, cfg.scoring), c.atomic_span, c) for c in composites
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [c for _, _, c in scored[:n_take]]


def sliding_window_proposals(t: int, cfg: ProposalConfig) -> list[CompositeEvent]:
    """Baseline: fixed-length windows over the frame timeline.

    Enumerates every window of each configured length that fits in [0, t);
    lengths longer than the video yield nothing. Sampling is the caller's job.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    out = []
    for length in cfg.window_lengths:
        for start in range(0, t - length + 1, cfg.window_stride):
            seg = TemporalSegment(start / t, (start + length) / t)
            out.append(CompositeEvent(atomic_span=None, segment=seg))
    return out


# ---------------------------------------------------------------------------
# proposal export (JSON-lines)


@dataclass(frozen=True)
class Proposal:
    """One exported proposal row."""

    video_id: str
    segment: TemporalSegment
    method: str
    score: Optional[float] = None


def save_proposals(proposals: Iterable[Proposal], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in proposals:
            row = {
                "video_id": p.video_id,
                "start": p.segment.start,
                "end": p.segment.end,
                "method": p.method,
                "score": p.score,
            }
            fh.write(json.dumps(row) + "\n")


def load_proposals(path) -> list[Proposal]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            out.append(
                Proposal(
                    video_id=raw["video_id"],
                    segment=TemporalSegment(float(raw["start"]), float(raw["end"])),
                    method=raw["method"],
                    score=raw.get("score"),
                )
            )
    return out


def propose_for_video(
    features: np.ndarray, cfg: ProposalConfig, seed: int
) -> tuple[list[CompositeEvent], list[AtomicEvent]]:
    """Run the configured proposal method on one video's (resampled) features."""
    t = features.shape[0]
    if cfg.method == "sliding_window":
        windows = sliding_window_proposals(t, cfg)
        return sample_composites(windows, cfg, seed=seed), []
    if cfg.method == "contextual":
        atomics = atomic_events(self_similarity(features), cfg, seed=seed)
    elif cfg.method == "frame":
        atomics = frame_feature_atomics(features, cfg, seed=seed)
    elif cfg.method == "actionbyte":
        atomics = actionbyte_boundaries(features, cfg)
    else:
        raise ValueError(f"unknown proposal method {cfg.method!r}")
    composites = enumerate_composites(atomics)
    sampled = sample_composites(composites, cfg, features=features, atomics=atomics, seed=seed)
    return sampled, atomics
