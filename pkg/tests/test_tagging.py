import pytest

from psvl.tagging import NOUN, OTHER, VERB, TaggedSentence, rule_based_tagger


def test_basic_sentence():
    tagged = rule_based_tagger("A dog runs.")
    assert tagged.tokens == ("a", "dog", "runs.")
    assert tagged.tags == (OTHER, NOUN, VERB)
    assert tagged.lemmas == ("a", "dog", "run")


@pytest.mark.parametrize(
    "sentence,expected",
    [
        ("The person stands up and eats pizza", ["person", "stand", "eat", "pizza"]),
        ("the person sits then looks at the TV", ["person", "sit", "look", "tv"]),
    ],
)
def test_noun_verb_extraction(sentence, expected):
    tagged = rule_based_tagger(sentence)
    kept = [l for l, t in zip(tagged.lemmas, tagged.tags) if t in (NOUN, VERB)]
    assert kept == expected


def test_adverbs_are_other():
    tagged = rule_based_tagger("quickly and quietly")
    assert all(t == OTHER for t in tagged.tags)


@pytest.mark.parametrize(
    "word,lemma",
    [("carries", "carry"), ("pushes", "push"), ("running", "run"), ("walked", "walk")],
)
def test_verb_inflections(word, lemma):
    tagged = rule_based_tagger(f"the dog {word}")
    assert tagged.tags[-1] == VERB
    assert tagged.lemmas[-1] == lemma


def test_plural_nouns():
    tagged = rule_based_tagger("two dogs and three balls")
    lemmas = [l for l, t in zip(tagged.lemmas, tagged.tags) if t == NOUN]
    assert lemmas == ["two", "dog", "three", "ball"]


def test_parallel_lengths_enforced():
    with pytest.raises(ValueError):
        TaggedSentence(tokens=("a",), tags=(OTHER, NOUN), lemmas=("a",))
