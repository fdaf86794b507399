"""Noun-to-verb co-occurrence model built from an unpaired text corpus.

This is the verb predictor for pseudo-query generation: given object nouns
grounded in a video segment, rank the verbs most likely to describe the action.
Scores are summed smoothed PMI over sentence-level noun/verb co-occurrence
counts. A masked-LM predictor can be plugged in over a line protocol instead
(see ExternalPredictor); both sides satisfy the same predict() contract.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .tagging import NOUN, VERB, TaggedSentence

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_STOP_VERBS = frozenset({"be", "have", "do"})
DEFAULT_MIN_COUNT = 5

Tagger = Callable[[str], TaggedSentence]


class CorpusModelError(Exception):
    """Base class for co-occurrence model failures."""


class OOVError(CorpusModelError):
    """Noun or verb not present in the model vocabulary."""


class ModelVersionError(CorpusModelError):
    """Persisted model was written by an incompatible format version."""


class CorruptModelError(CorpusModelError):
    """Persisted model file is unreadable or internally inconsistent."""


class VerbPredictor(Protocol):
    def predict(self, nouns: Sequence[str], top_m: int) -> list[tuple[str, float]]:
        """Ranked (verb, score) list, verbs drawn from a fixed verb vocabulary."""
        ...


def ingest_corpus(path, tagger: Tagger) -> list[TaggedSentence]:
    """Tag one sentence per non-empty line; lines the tagger rejects are skipped."""
    sentences = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                sentences.append(tagger(line))
            except Exception:
                skipped += 1
    if skipped:
        logger.warning("tagger failed on %d corpus line(s); skipped", skipped)
    return sentences


def normalize_noun(label: str) -> str:
    """Lower-case and reduce multiword detector labels to their head noun."""
    return label.lower().split()[-1] if label.strip() else label.lower()


@dataclass(frozen=True)
class CooccurrenceModel:
    """Sentence-window noun/verb counts with PMI scoring.

    count_nv[n, v] counts sentences where noun n and verb v co-occur (once per
    sentence per pair); count_n / count_v count lemma occurrences. Arrays are
    frozen after construction; safe for concurrent reads.
    """

    noun_vocab: dict[str, int]
    verb_vocab: dict[str, int]
    count_nv: np.ndarray
    count_n: np.ndarray
    count_v: np.ndarray
    total: int
    min_count: int
    stop_verbs: frozenset[str]

    def __post_init__(self):
        for arr in (self.count_nv, self.count_n, self.count_v):
            arr.flags.writeable = False
        if self.stop_verbs & set(self.verb_vocab):
            raise ValueError("stop verbs leaked into the verb vocabulary")

    @property
    def nouns(self) -> list[str]:
        return sorted(self.noun_vocab, key=self.noun_vocab.get)

    @property
    def verbs(self) -> list[str]:
        return sorted(self.verb_vocab, key=self.verb_vocab.get)

    def predict(self, nouns: Sequence[str], top_m: int) -> list[tuple[str, float]]:
        return predict_verbs(self, nouns, top_m)


def build_cooccurrence(
    sentences: Iterable[TaggedSentence],
    min_count: int = DEFAULT_MIN_COUNT,
    stop_verbs: frozenset[str] = DEFAULT_STOP_VERBS,
) -> CooccurrenceModel:
    """Count noun/verb co-occurrence over sentences and assemble the model.

    Lemmas with corpus frequency below min_count are dropped from the
    vocabularies; stop verbs never enter the verb vocabulary.
    """
    sentences = list(sentences)
    stop_verbs = frozenset(stop_verbs)

    noun_freq: dict[str, int] = {}
    verb_freq: dict[str, int] = {}
    for sent in sentences:
        for tag, lemma in zip(sent.tags, sent.lemmas):
            if tag == NOUN:
                noun_freq[lemma] = noun_freq.get(lemma, 0) + 1
            elif tag == VERB and lemma not in stop_verbs:
                verb_freq[lemma] = verb_freq.get(lemma, 0) + 1

    noun_vocab = {w: i for i, w in enumerate(sorted(w for w, c in noun_freq.items() if c >= min_count))}
    verb_vocab = {w: i for i, w in enumerate(sorted(w for w, c in verb_freq.items() if c >= min_count))}

    count_nv = np.zeros((len(noun_vocab), len(verb_vocab)), dtype=np.int64)
    count_n = np.zeros(len(noun_vocab), dtype=np.int64)
    count_v = np.zeros(len(verb_vocab), dtype=np.int64)

    for sent in sentences:
        sent_nouns = []
        sent_verbs = []
        for tag, lemma in zip(sent.tags, sent.lemmas):
            if tag == NOUN and lemma in noun_vocab:
                sent_nouns.append(lemma)
                count_n[noun_vocab[lemma]] += 1
            elif tag == VERB and lemma in verb_vocab:
                sent_verbs.append(lemma)
                count_v[verb_vocab[lemma]] += 1
        for n in set(sent_nouns):
            for v in set(sent_verbs):
                count_nv[noun_vocab[n], verb_vocab[v]] += 1

    return CooccurrenceModel(
        noun_vocab=noun_vocab,
        verb_vocab=verb_vocab,
        count_nv=count_nv,
        count_n=count_n,
        count_v=count_v,
        total=int(count_nv.sum()),
        min_count=min_count,
        stop_verbs=stop_verbs,
    )


def pmi(model: CooccurrenceModel, noun: str, verb: str) -> float:
    """log((count_nv + 1) * total / (count_n * count_v)), add-1 on the pair count."""
    if noun not in model.noun_vocab:
        raise OOVError(f"noun {noun!r} not in vocabulary")
    if verb not in model.verb_vocab:
        raise OOVError(f"verb {verb!r} not in vocabulary")
    ni = model.noun_vocab[noun]
    vi = model.verb_vocab[verb]
    total = max(model.total, 1)
    return math.log(
        (model.count_nv[ni, vi] + 1) * total / (model.count_n[ni] * model.count_v[vi])
    )


def predict_verbs(
    model: CooccurrenceModel, nouns: Sequence[str], top_m: int
) -> list[tuple[str, float]]:
    """Rank verbs by summed PMI over the known nouns; ties break lexicographically.

    OOV nouns are ignored. When no noun is known, falls back to the globally
    most frequent verbs (logged); scores are then raw verb counts.
    """
    if top_m < 1:
        raise ValueError(f"top_m must be >= 1, got {top_m}")
    if not model.verb_vocab:
        return []
    known = [n for n in (normalize_noun(x) for x in nouns) if n in model.noun_vocab]
    verbs = model.verbs
    if not known:
        logger.warning("no noun in vocabulary; falling back to global verb frequency")
        ranked = sorted(verbs, key=lambda v: (-model.count_v[model.verb_vocab[v]], v))
        return [(v, float(model.count_v[model.verb_vocab[v]])) for v in ranked[:top_m]]
    scores = {v: sum(pmi(model, n, v) for n in known) for v in verbs}
    ranked = sorted(verbs, key=lambda v: (-scores[v], v))
    return [(v, scores[v]) for v in ranked[:top_m]]


MASK_TOKEN = "<MASK>"


def render_template(nouns: Sequence[str]) -> str:
    """Prompt for an external masked-LM verb predictor, mask at the verb slot."""
    if not nouns:
        raise ValueError("cannot render a template for an empty noun list")
    return "the " + " and the ".join(nouns) + f" {MASK_TOKEN} ."


# ---------------------------------------------------------------------------
# persistence (versioned JSON)


def save_model(model: CooccurrenceModel, path) -> None:
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "nouns": model.nouns,
        "verbs": model.verbs,
        "count_nv": model.count_nv.ravel().tolist(),
        "count_n": model.count_n.tolist(),
        "count_v": model.count_v.tolist(),
        "total": model.total,
        "min_count": model.min_count,
        "stop_verbs": sorted(model.stop_verbs),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> CooccurrenceModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"unreadable model file {path}: {exc}") from exc
    version = payload.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    try:
        nouns = payload["nouns"]
        verbs = payload["verbs"]
        count_nv = np.asarray(payload["count_nv"], dtype=np.int64)
        if count_nv.size != len(nouns) * len(verbs):
            raise CorruptModelError(f"count matrix size mismatch in {path}")
        return CooccurrenceModel(
            noun_vocab={w: i for i, w in enumerate(nouns)},
            verb_vocab={w: i for i, w in enumerate(verbs)},
            count_nv=count_nv.reshape(len(nouns), len(verbs)),
            count_n=np.asarray(payload["count_n"], dtype=np.int64),
            count_v=np.asarray(payload["count_v"], dtype=np.int64),
            total=int(payload["total"]),
            min_count=int(payload["min_count"]),
            stop_verbs=frozenset(payload["stop_verbs"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"inconsistent model file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# external masked-LM adapter


class ExternalPredictor:
    """Adapter to an external verb predictor speaking a JSON line protocol.

    One request per line: {"nouns": [...], "template": "...", "top_m": m}
    One response per line: {"verbs": [["hit", 0.41], ...]}
    """

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc: subprocess.Popen | None = None

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def predict(self, nouns: Sequence[str], top_m: int) -> list[tuple[str, float]]:
        proc = self._ensure_started()
        request = {"nouns": list(nouns), "template": render_template(nouns), "top_m": top_m}
        proc.stdin.write(json.dumps(request) + "\n")
        proc.stdin.flush()
        line = proc.stdout.readline()
        if not line:
            raise CorpusModelError("external predictor closed its output stream")
        response = json.loads(line)
        return [(str(v), float(s)) for v, s in response["verbs"]][:top_m]

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
