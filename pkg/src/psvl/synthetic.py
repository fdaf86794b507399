"""Desk-scale synthetic benchmark with planted ground truth.

Each synthetic video is a sequence of stationary feature blocks. A block's
feature vector is the signature of its planted noun, so localization is
learnable across videos; the paired verb for every noun is realized in the
generated text corpus. All planted truths (boundaries, pairings) are saved so
tests can use them as oracles. Ground-truth eval segments live only in the
eval-samples file, which generation and training stages must never read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    DetectionRecord,
    EvalSample,
    ManifestEntry,
    TemporalSegment,
    save_detections,
    save_eval_samples,
    save_feature_manifest,
    save_word_embeddings,
    write_feature_file,
)
from .tagging import KNOWN_NOUNS, KNOWN_OTHER, KNOWN_VERBS

NOUN_WORDS = sorted(KNOWN_NOUNS)
VERB_WORDS = sorted(KNOWN_VERBS)


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 50
    eval_videos: int = 10
    frames_per_video: int = 128
    feature_dim: int = 16
    blocks_per_video: int = 5
    noise_sigma: float = 0.05
    noun_vocab_size: int = 20
    verb_vocab_size: int = 20
    pairing_seed: int = 0
    seed: int = 0
    sentences_per_pair: int = 50
    distractors_per_frame: int = 2
    min_block_frames: int = 8
    word_dim: int = 50

    def __post_init__(self):
        if self.blocks_per_video < 1:
            raise ValueError("blocks_per_video must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noun_vocab_size > len(NOUN_WORDS) or self.verb_vocab_size > len(VERB_WORDS):
            raise ValueError("vocab size exceeds the bundled word lists")
        if self.blocks_per_video * self.min_block_frames > self.frames_per_video:
            raise ValueError("blocks do not fit at min_block_frames")


def third_person(verb: str) -> str:
    if verb.endswith("y") and verb[-2:-1] not in "aeiou":
        return verb[:-1] + "ies"
    if verb.endswith(("s", "sh", "ch", "x", "o")):
        return verb + "es"
    return verb + "s"


def noun_verb_pairing(spec: SyntheticSpec) -> dict[str, str]:
    """Planted noun -> verb map; bijective when the vocab sizes match."""
    rng = np.random.default_rng(spec.pairing_seed)
    nouns = NOUN_WORDS[: spec.noun_vocab_size]
    verbs = VERB_WORDS[: spec.verb_vocab_size]
    perm = rng.permutation(len(verbs))
    return {n: verbs[perm[i % len(verbs)]] for i, n in enumerate(nouns)}


def sample_block_boundaries(rng, frames: int, blocks: int, min_len: int) -> list[int]:
    """Random partition of [0, frames) into `blocks` runs of at least min_len."""
    extra = frames - blocks * min_len
    weights = rng.random(blocks)
    shares = np.floor(extra * weights / weights.sum()).astype(int)
    shares[: extra - int(shares.sum())] += 1
    lengths = (min_len + shares).tolist()
    bounds = [0]
    for length in lengths:
        bounds.append(bounds[-1] + length)
    return bounds


def block_features(rng, boundaries, vectors, sigma: float) -> np.ndarray:
    """Stationary per-block feature rows: block vector plus Gaussian noise."""
    dim = vectors[0].shape[0]
    rows = np.empty((boundaries[-1], dim), dtype=np.float32)
    for i in range(len(boundaries) - 1):
        lo, hi = boundaries[i], boundaries[i + 1]
        rows[lo:hi] = vectors[i][None, :] + sigma * rng.standard_normal((hi - lo, dim))
    return rows


def repeating_block_video(
    rng, frames: int = 128, dim: int = 16, sigma: float = 0.05
) -> tuple[np.ndarray, list[int]]:
    """A-B-A video: the first and last blocks repeat the same feature vector."""
    bounds = sample_block_boundaries(rng, frames, 3, max(8, frames // 8))
    v_a = rng.standard_normal(dim)
    v_a /= np.linalg.norm(v_a)
    v_b = rng.standard_normal(dim)
    v_b -= (v_b @ v_a) * v_a  # orthogonal so the two events are clearly distinct
    v_b /= np.linalg.norm(v_b)
    return block_features(rng, bounds, [v_a, v_b, v_a], sigma), bounds


@dataclass(frozen=True)
class SyntheticPaths:
    root: Path
    manifest_train: Path
    manifest_eval: Path
    detections: Path
    corpus: Path
    embeddings: Path
    eval_samples: Path
    truth: Path


def synthetic_paths(root) -> SyntheticPaths:
    root = Path(root)
    return SyntheticPaths(
        root=root,
        manifest_train=root / "manifest_train.json",
        manifest_eval=root / "manifest_eval.json",
        detections=root / "detections.jsonl",
        corpus=root / "corpus.txt",
        embeddings=root / "embeddings.txt",
        eval_samples=root / "eval_samples.jsonl",
        truth=root / "truth.json",
    )


def _noun_vectors(rng, spec: SyntheticSpec) -> dict[str, np.ndarray]:
    out = {}
    for noun in NOUN_WORDS[: spec.noun_vocab_size]:
        vec = rng.standard_normal(spec.feature_dim)
        out[noun] = vec / np.linalg.norm(vec)
    return out


def _corpus_sentences(rng, pairing: dict[str, str], per_pair: int) -> list[str]:
    templates = (
        "the {noun} {verb} .",
        "a {noun} {verb} quickly .",
        "the {noun} {verb} again .",
        "then the {noun} {verb} .",
        "a {noun} {verb} slowly .",
    )
    sentences = []
    for noun, verb in sorted(pairing.items()):
        form = third_person(verb)
        for i in range(per_pair):
            sentences.append(templates[i % len(templates)].format(noun=noun, verb=form))
    order = rng.permutation(len(sentences))
    return [sentences[i] for i in order]


def _generate_video(rng, spec: SyntheticSpec, noun_vecs, nouns_pool):
    bounds = sample_block_boundaries(
        rng, spec.frames_per_video, spec.blocks_per_video, spec.min_block_frames
    )
    replace = spec.blocks_per_video > len(nouns_pool)
    block_nouns = [
        nouns_pool[i] for i in rng.choice(len(nouns_pool), spec.blocks_per_video, replace=replace)
    ]
    feats = block_features(
        rng, bounds, [noun_vecs[n] for n in block_nouns], spec.noise_sigma
    )
    return feats, bounds, block_nouns


def _detections_for_video(rng, spec, video_id, bounds, block_nouns, nouns_pool):
    records = []
    for b in range(len(bounds) - 1):
        for frame in range(bounds[b], bounds[b + 1]):
            records.append(
                DetectionRecord(
                    video_id=video_id,
                    frame_index=frame,
                    label=block_nouns[b],
                    confidence=float(rng.uniform(0.6, 1.0)),
                )
            )
            for _ in range(spec.distractors_per_frame):
                label = nouns_pool[int(rng.integers(len(nouns_pool)))]
                records.append(
                    DetectionRecord(
                        video_id=video_id,
                        frame_index=frame,
                        label=label,
                        confidence=float(rng.uniform(0.05, 0.45)),
                    )
                )
    return records


def synth_generate(spec: SyntheticSpec, out_dir) -> SyntheticPaths:
    """Write the full synthetic workspace: features, detections, corpus,
    embeddings, eval samples, and the planted-truth record for oracles."""
    paths = synthetic_paths(out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    pairing = noun_verb_pairing(spec)
    nouns_pool = NOUN_WORDS[: spec.noun_vocab_size]
    noun_vecs = _noun_vectors(rng, spec)

    truth: dict = {"pairing": pairing, "videos": {}}
    detections: list[DetectionRecord] = []
    eval_samples: list[EvalSample] = []
    train_entries = []
    eval_entries = []

    for split, count, entries in (
        ("train", spec.num_videos, train_entries),
        ("eval", spec.eval_videos, eval_entries),
    ):
        for i in range(count):
            video_id = f"{split}_{i:04d}"
            feats, bounds, block_nouns = _generate_video(rng, spec, noun_vecs, nouns_pool)
            rel = f"features/{video_id}.f32"
            write_feature_file(paths.root / rel, feats)
            entries.append(
                ManifestEntry(
                    video_id=video_id,
                    feature_path=rel,
                    num_frames=spec.frames_per_video,
                    dim=spec.feature_dim,
                )
            )
            truth["videos"][video_id] = {"boundaries": bounds, "block_nouns": block_nouns}
            if split == "train":
                detections.extend(
                    _detections_for_video(rng, spec, video_id, bounds, block_nouns, nouns_pool)
                )
            else:
                t = spec.frames_per_video
                for b in range(len(bounds) - 1):
                    noun = block_nouns[b]
                    sentence = f"the {noun} {third_person(pairing[noun])}"
                    eval_samples.append(
                        EvalSample(
                            video_id=video_id,
                            sentence=sentence,
                            segment=TemporalSegment(bounds[b] / t, bounds[b + 1] / t),
                        )
                    )

    save_feature_manifest(DatasetManifest(entries=tuple(train_entries)), paths.manifest_train)
    save_feature_manifest(DatasetManifest(entries=tuple(eval_entries)), paths.manifest_eval)
    save_detections(detections, paths.detections)
    save_eval_samples(eval_samples, paths.eval_samples)

    with open(paths.corpus, "w", encoding="utf-8") as fh:
        for sentence in _corpus_sentences(rng, pairing, spec.sentences_per_pair):
            fh.write(sentence + "\n")

    emb_rng = np.random.default_rng(spec.seed + 1)
    vocabulary = sorted(set(nouns_pool) | set(pairing.values()) | set(KNOWN_OTHER))
    table = {w: emb_rng.normal(0.0, 0.3, size=spec.word_dim) for w in vocabulary}
    save_word_embeddings(table, paths.embeddings)

    with open(paths.truth, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    return paths
