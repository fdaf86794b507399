"""Small rule-based part-of-speech tagger so the pipeline runs hermetically.

The pipeline treats the tagger as an injected dependency with a fixed contract:
callable(sentence) -> TaggedSentence with coarse {NOUN, VERB, OTHER} tags and
lemmas. Swap in a real tagger (spaCy, NLTK) for production corpora; this one
covers the bundled word lists plus common suffix heuristics.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

NOUN = "NOUN"
VERB = "VERB"
OTHER = "OTHER"


@dataclass(frozen=True)
class TaggedSentence:
    """Tokens with parallel coarse POS tags and lemmas."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    lemmas: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "lemmas", tuple(self.lemmas))
        if not (len(self.tokens) == len(self.tags) == len(self.lemmas)):
            raise ValueError("tokens, tags, and lemmas must have equal length")


# Word lists shared with the synthetic data generator; keep lemmas only.
KNOWN_NOUNS = frozenset(
    """person man woman child dog cat ball bat table chair shirt door window cup
    bag book pizza tv wall hammer car bottle phone laptop floor bed sofa box
    glass plate towel shoe hat broom pillow blanket mirror sink camera light
    guitar piano bike rope ladder bucket knife spoon fork pan pot apple bread
    doughnut sandwich coffee milk water key wallet coat jacket glove sock
    """.split()
)

KNOWN_VERBS = frozenset(
    """run eat hit sit look stand wear carry sell walk hold jump throw catch
    read open close push pull climb drink cook wash drive ride play kick cut
    clean paint write sleep smile dance sing swim fall lift point wave grab
    fix build repair sweep pour fold hang wipe shake turn move watch
    """.split()
)

# Determiners, prepositions, conjunctions, pronouns, particles, auxiliaries.
KNOWN_OTHER = frozenset(
    """a an the and or but then while when at on in to from of with without
    up down over under into onto off out he she it they we you i his her its
    their this that these those is are was were be been being am has have had
    do does did will would can could not no yes very some any there here
    quickly quietly slowly carefully again also just still
    """.split()
)

_STRIP = string.punctuation + string.whitespace


def _strip_word(token: str) -> str:
    return token.strip(_STRIP)


def _verb_lemma(word: str) -> str | None:
    """Return the lemma if `word` inflects a known verb, else None."""
    if word in KNOWN_VERBS:
        return word
    if word.endswith("ies") and word[:-3] + "y" in KNOWN_VERBS:
        return word[:-3] + "y"
    if word.endswith("es") and word[:-2] in KNOWN_VERBS:
        return word[:-2]
    if word.endswith("s") and word[:-1] in KNOWN_VERBS:
        return word[:-1]
    if word.endswith("ing"):
        for stem in (word[:-3], word[:-3] + "e", word[:-4]):
            if stem in KNOWN_VERBS:
                return stem
    if word.endswith("ed"):
        for stem in (word[:-2], word[:-1], word[:-3]):
            if stem in KNOWN_VERBS:
                return stem
    return None


def _noun_lemma(word: str) -> str | None:
    if word in KNOWN_NOUNS:
        return word
    if word.endswith("ies") and word[:-3] + "y" in KNOWN_NOUNS:
        return word[:-3] + "y"
    if word.endswith("es") and word[:-2] in KNOWN_NOUNS:
        return word[:-2]
    if word.endswith("s") and word[:-1] in KNOWN_NOUNS:
        return word[:-1]
    return None


def rule_based_tagger(sentence: str) -> TaggedSentence:
    """Whitespace-tokenize, lower-case, and tag with lexicon + suffix rules.

    Unknown words fall back to NOUN (object-detector labels are nouns), except
    -ly adverbs which are tagged OTHER.
    """
    tokens = tuple(sentence.lower().split())
    tags = []
    lemmas = []
    for token in tokens:
        word = _strip_word(token)
        if not word or word in KNOWN_OTHER:
            tags.append(OTHER)
            lemmas.append(word or token)
            continue
        verb = _verb_lemma(word)
        if verb is not None:
            tags.append(VERB)
            lemmas.append(verb)
            continue
        noun = _noun_lemma(word)
        if noun is not None:
            tags.append(NOUN)
            lemmas.append(noun)
            continue
        if word.endswith("ly"):
            tags.append(OTHER)
            lemmas.append(word)
        elif word.endswith("s") and len(word) > 3:
            tags.append(NOUN)
            lemmas.append(word[:-1])
        else:
            tags.append(NOUN)
            lemmas.append(word)
    return TaggedSentence(tokens=tokens, tags=tuple(tags), lemmas=tuple(lemmas))
