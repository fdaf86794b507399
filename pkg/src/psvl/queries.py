"""Pseudo-query generation and inference-time query simplification.

A pseudo-query is a structure-less token set: the nouns detected frequently and
confidently inside a proposal segment, followed by the verbs a co-occurrence
predictor infers from those nouns. Natural-language queries are reduced to the
same form (noun/verb lemmas) before they reach the localization model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import DEFAULT_STOP_VERBS, Tagger, VerbPredictor
from .data import DetectionRecord, SupervisionSample, TemporalSegment
from .tagging import NOUN, VERB

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryConfig:
    top_n_nouns: int = 5
    top_m_verbs: int = 3
    conf_threshold: float = 0.5
    max_tokens: int = 8

    def __post_init__(self):
        if self.top_n_nouns < 1 or self.top_m_verbs < 1:
            raise ValueError("top_n_nouns and top_m_verbs must be >= 1")
        if self.top_n_nouns + self.top_m_verbs > self.max_tokens:
            raise ValueError("top_n_nouns + top_m_verbs must fit in max_tokens")


@dataclass(frozen=True)
class SimplifiedQuery:
    """Ordered lower-case lemma tokens with a parallel noun mask."""

    tokens: tuple[str, ...]
    noun_mask: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "noun_mask", tuple(self.noun_mask))
        if len(self.tokens) != len(self.noun_mask):
            raise ValueError("tokens and noun_mask must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def nouns(self) -> tuple[str, ...]:
        return tuple(t for t, m in zip(self.tokens, self.noun_mask) if m)

    @property
    def verbs(self) -> tuple[str, ...]:
        return tuple(t for t, m in zip(self.tokens, self.noun_mask) if not m)


def select_nouns(
    detections: Sequence[DetectionRecord],
    segment: TemporalSegment,
    num_frames: int,
    cfg: QueryConfig,
) -> list[str]:
    """Top-N detected labels inside the segment, by count then mean confidence.

    Only detections with confidence >= conf_threshold on frames with
    segment.start <= frame / num_frames < segment.end count. Returns [] when
    nothing qualifies (the caller drops the sample).
    """
    counts: dict[str, int] = {}
    conf_sums: dict[str, float] = {}
    for det in detections:
        pos = det.frame_index / num_frames
        if not (segment.start <= pos < segment.end):
            continue
        if det.confidence < cfg.conf_threshold:
            continue
        label = det.label.lower()
        counts[label] = counts.get(label, 0) + 1
        conf_sums[label] = conf_sums.get(label, 0.0) + det.confidence
    ranked = sorted(
        counts, key=lambda lab: (-counts[lab], -conf_sums[lab] / counts[lab], lab)
    )
    return ranked[: cfg.top_n_nouns]


def make_pseudo_query(
    nouns: Sequence[str], predictor: VerbPredictor, cfg: QueryConfig
) -> SimplifiedQuery:
    """Nouns in frequency order followed by predicted verbs in score order."""
    if not nouns:
        raise ValueError("cannot build a pseudo-query from an empty noun list")
    verbs = [v for v, _ in predictor.predict(list(nouns), cfg.top_m_verbs)]
    tokens = tuple(nouns) + tuple(verbs)
    mask = (True,) * len(nouns) + (False,) * len(verbs)
    return SimplifiedQuery(tokens=tokens, noun_mask=mask)


def simplify_query(
    sentence: str,
    tagger: Tagger,
    max_tokens: int = 8,
    stop_verbs: frozenset[str] = DEFAULT_STOP_VERBS,
) -> SimplifiedQuery:
    """Keep noun/verb lemmas of a sentence in surface order, up to max_tokens.

    A sentence with no nouns or verbs yields an empty query; evaluation then
    falls back to predicting the whole video.
    """
    if not sentence.strip():
        raise ValueError("empty sentence")
    tagged = tagger(sentence)
    tokens = []
    mask = []
    for tag, lemma in zip(tagged.tags, tagged.lemmas):
        if len(tokens) >= max_tokens:
            break
        if tag == NOUN:
            tokens.append(lemma)
            mask.append(True)
        elif tag == VERB and lemma not in stop_verbs:
            tokens.append(lemma)
            mask.append(False)
    if not tokens:
        logger.warning("query simplified to nothing: %r", sentence)
    return SimplifiedQuery(tokens=tuple(tokens), noun_mask=tuple(mask))


def build_dataset(
    video_frames: Mapping[str, int],
    proposals: Iterable[tuple[str, TemporalSegment]],
    detections: Mapping[str, Sequence[DetectionRecord]],
    predictor: VerbPredictor,
    cfg: QueryConfig,
) -> tuple[list[SupervisionSample], int]:
    """One supervision sample per proposal with a non-empty grounded noun set.

    Returns (samples, dropped) where dropped counts proposals whose segment
    contained no qualifying detection.
    """
    samples = []
    dropped = 0
    for video_id, segment in proposals:
        nouns = select_nouns(
            detections.get(video_id, ()), segment, video_frames[video_id], cfg
        )
        if not nouns:
            dropped += 1
            continue
        query = make_pseudo_query(nouns, predictor, cfg)
        samples.append(
            SupervisionSample(
                video_id=video_id,
                segment=segment,
                nouns=query.nouns,
                verbs=query.verbs,
                source="pseudo",
            )
        )
    if dropped:
        logger.info("dropped %d proposal(s) without grounded nouns", dropped)
    return samples, dropped
