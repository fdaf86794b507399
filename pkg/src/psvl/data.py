"""Domain types, temporal IoU, feature resampling, and file I/O shared by the pipeline.

Timestamps are stored normalized to [0, 1]; conversion to seconds (via a video's
``fps_hint``) only ever happens at report time. Feature binaries are raw
row-major little-endian float32 with no header; all shape metadata lives in the
JSON manifest next to them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

SUPERVISION_SOURCES = ("pseudo", "ablation", "ground_truth", "synthetic")


class DatasetError(Exception):
    """Base class for data-loading failures."""


class DimensionMismatchError(DatasetError):
    """Stored matrix shape disagrees with the manifest entry."""


class NonFiniteError(DatasetError):
    """A loaded matrix contains NaN or infinity."""


class RecordParseError(DatasetError):
    """A JSON-lines record failed to parse; carries the 1-based line number."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class RecordRangeError(DatasetError):
    """A record field is outside its legal range."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class SchemaError(DatasetError):
    """A record carries an unknown or missing field."""


@dataclass(frozen=True)
class TemporalSegment:
    """Normalized [start, end] interval on a video timeline, 0 <= start <= end <= 1."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise ValueError(f"invalid segment [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start


def temporal_iou(a: TemporalSegment, b: TemporalSegment) -> float:
    """Intersection over union of two segments; 0 when the union has zero length."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class FrameFeatureSequence:
    """Per-video matrix of T frame features of dimension D (precomputed, read-only)."""

    video_id: str
    features: np.ndarray  # (T, D) float32
    fps_hint: Optional[float] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a T x D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise NonFiniteError(f"non-finite feature values in video {self.video_id!r}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DetectionRecord:
    """One object detection: (video, frame, label, confidence, optional box)."""

    video_id: str
    frame_index: int
    label: str
    confidence: float
    box: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.box is not None:
            object.__setattr__(self, "box", tuple(float(v) for v in self.box))


@dataclass(frozen=True)
class SupervisionSample:
    """One supervision record: a segment plus noun/verb query tokens."""

    video_id: str
    segment: TemporalSegment
    nouns: tuple[str, ...]
    verbs: tuple[str, ...]
    source: str = "pseudo"

    def __post_init__(self):
        object.__setattr__(self, "nouns", tuple(self.nouns))
        object.__setattr__(self, "verbs", tuple(self.verbs))
        if self.source not in SUPERVISION_SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "pseudo" and (not self.nouns or not self.verbs):
            raise ValueError("pseudo samples need non-empty nouns and verbs")

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.nouns + self.verbs


@dataclass(frozen=True)
class EvalSample:
    """Held-out ground truth: a natural-language sentence paired with its segment."""

    video_id: str
    sentence: str
    segment: TemporalSegment


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    feature_path: str
    num_frames: int
    dim: int


@dataclass(frozen=True)
class DatasetManifest:
    """Index of feature binaries plus optional companion file paths."""

    entries: tuple[ManifestEntry, ...]
    detection_path: Optional[str] = None
    samples_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate video_id in manifest")


def resample_features(f: FrameFeatureSequence, length: int) -> np.ndarray:
    """Uniformly sample `length` rows by floor-index mapping (row i -> floor(i*T/L)).

    Rows are duplicated when T < length; no interpolation, features are opaque.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    t = f.num_frames
    idx = (np.arange(length, dtype=np.int64) * t) // length
    return f.features[idx]


# ---------------------------------------------------------------------------
# feature manifest I/O


def write_feature_file(path, features: np.ndarray) -> None:
    """Raw row-major little-endian float32, no header."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(path)


def save_feature_manifest(manifest: DatasetManifest, path) -> None:
    payload = {"entries": [vars(e).copy() for e in manifest.entries]}
    if manifest.detection_path is not None:
        payload["detection_path"] = manifest.detection_path
    if manifest.samples_path is not None:
        payload["samples_path"] = manifest.samples_path
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    known = {"entries", "detection_path", "samples_path"}
    unknown = set(payload) - known
    if unknown:
        raise SchemaError(f"unknown manifest field {sorted(unknown)[0]!r}")
    entries = []
    for raw in payload["entries"]:
        extra = set(raw) - {"video_id", "feature_path", "num_frames", "dim"}
        if extra:
            raise SchemaError(f"unknown manifest entry field {sorted(extra)[0]!r}")
        entries.append(ManifestEntry(**raw))
    return DatasetManifest(
        entries=tuple(entries),
        detection_path=payload.get("detection_path"),
        samples_path=payload.get("samples_path"),
    )


def load_feature_manifest(path) -> dict[str, FrameFeatureSequence]:
    """Load every entry of a manifest, cross-checking shapes against the binaries.

    Raises FileNotFoundError for a missing binary, DimensionMismatchError when
    the stored element count disagrees with (num_frames, dim), NonFiniteError
    for NaN/inf payloads.
    """
    path = Path(path)
    manifest = read_manifest(path)
    out = {}
    for entry in manifest.entries:
        fpath = path.parent / entry.feature_path
        if not fpath.exists():
            raise FileNotFoundError(f"feature file missing: {fpath}")
        raw = np.fromfile(fpath, dtype="<f4")
        if raw.size != entry.num_frames * entry.dim:
            raise DimensionMismatchError(
                f"{entry.video_id}: manifest says {entry.num_frames}x{entry.dim} "
                f"but file holds {raw.size} values"
            )
        feats = raw.reshape(entry.num_frames, entry.dim)
        if not np.all(np.isfinite(feats)):
            raise NonFiniteError(f"non-finite values in {fpath}")
        out[entry.video_id] = FrameFeatureSequence(entry.video_id, feats)
    return out


# ---------------------------------------------------------------------------
# detections (JSON-lines)

_DETECTION_FIELDS = {"video_id", "frame_index", "label", "confidence", "box"}


def load_detections(path) -> dict[str, list[DetectionRecord]]:
    """Read detection records grouped by video and sorted by frame index."""
    out: dict[str, list[DetectionRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, line_no, f"bad JSON: {exc.msg}") from exc
            if not isinstance(raw, dict):
                raise RecordParseError(path, line_no, "record is not an object")
            unknown = set(raw) - _DETECTION_FIELDS
            if unknown:
                raise RecordParseError(path, line_no, f"unknown field {sorted(unknown)[0]!r}")
            try:
                conf = float(raw["confidence"])
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordParseError(path, line_no, "missing or bad confidence") from exc
            if not (0.0 <= conf <= 1.0):
                raise RecordRangeError(path, line_no, f"confidence {conf} outside [0, 1]")
            try:
                rec = DetectionRecord(
                    video_id=raw["video_id"],
                    frame_index=int(raw["frame_index"]),
                    label=str(raw["label"]),
                    confidence=conf,
                    box=tuple(raw["box"]) if raw.get("box") is not None else None,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordParseError(path, line_no, str(exc)) from exc
            out.setdefault(rec.video_id, []).append(rec)
    for records in out.values():
        records.sort(key=lambda r: r.frame_index)
    return out


def save_detections(records: Iterable[DetectionRecord], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {
                "video_id": rec.video_id,
                "frame_index": rec.frame_index,
                "label": rec.label,
                "confidence": rec.confidence,
            }
            if rec.box is not None:
                row["box"] = list(rec.box)
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# supervision samples (JSON-lines)

_SAMPLE_FIELDS = {"video_id", "start", "end", "nouns", "verbs", "source"}


def save_supervision(samples: Iterable[SupervisionSample], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            row = {
                "video_id": s.video_id,
                "start": s.segment.start,
                "end": s.segment.end,
                "nouns": list(s.nouns),
                "verbs": list(s.verbs),
                "source": s.source,
            }
            fh.write(json.dumps(row) + "\n")


def load_supervision(path) -> list[SupervisionSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, line_no, f"bad JSON: {exc.msg}") from exc
            unknown = set(raw) - _SAMPLE_FIELDS
            if unknown:
                raise SchemaError(f"{path}:{line_no}: unknown field {sorted(unknown)[0]!r}")
            missing = _SAMPLE_FIELDS - set(raw)
            if missing:
                raise SchemaError(f"{path}:{line_no}: missing field {sorted(missing)[0]!r}")
            try:
                out.append(
                    SupervisionSample(
                        video_id=raw["video_id"],
                        segment=TemporalSegment(float(raw["start"]), float(raw["end"])),
                        nouns=tuple(raw["nouns"]),
                        verbs=tuple(raw["verbs"]),
                        source=raw["source"],
                    )
                )
            except ValueError as exc:
                raise RecordParseError(path, line_no, str(exc)) from exc
    return out


# ---------------------------------------------------------------------------
# evaluation samples (JSON-lines)


def save_eval_samples(samples: Iterable[EvalSample], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            row = {
                "video_id": s.video_id,
                "sentence": s.sentence,
                "start": s.segment.start,
                "end": s.segment.end,
            }
            fh.write(json.dumps(row) + "\n")


def load_eval_samples(path) -> list[EvalSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, line_no, f"bad JSON: {exc.msg}") from exc
            out.append(
                EvalSample(
                    video_id=raw["video_id"],
                    sentence=raw["sentence"],
                    segment=TemporalSegment(float(raw["start"]), float(raw["end"])),
                )
            )
    return out


# ---------------------------------------------------------------------------
# word embeddings ("word v1 ... vD" plain text)


def load_word_embeddings(path, dim: int) -> dict[str, np.ndarray]:
    """Plain-text embedding table; each line is a word followed by `dim` floats."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise RecordParseError(
                    path, line_no, f"expected {dim} values, got {len(parts) - 1}"
                )
            vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float32)
            table[parts[0]] = vec
    return table


def save_word_embeddings(table: Mapping[str, np.ndarray], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(table):
            vec = " ".join(f"{v:.6f}" for v in np.asarray(table[word]).ravel())
            fh.write(f"{word} {vec}\n")
