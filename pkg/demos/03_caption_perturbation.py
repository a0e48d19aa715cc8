#!/usr/bin/env python3
"""Single-word caption edits, sorted into positives and negatives.

Contrastive training gets much harder negatives from near-miss captions
than from random ones. The recipe: pick up to three noun or verb
positions, ask a masked-LM oracle for the top five single-word
replacements at each, then consult a synonym/hypernym lexicon. An edit
the lexicon calls equivalent ("girl" -> "woman") becomes an extra
positive; everything else ("girl" -> "boy") becomes an adversarial
negative, a caption that is one word away from true.
"""

import numpy as np

from cmkt.perturbation import (
    EQUIVALENT_POSITIVE,
    Lexicon,
    MockOracle,
    PosTagger,
    mini_lexicon_path,
    mini_pos_tags_path,
    perturb_caption,
    select_content_words,
)

caption = "A girl puts an apple in her bag"
lexicon = Lexicon.load(mini_lexicon_path())
tagger = PosTagger.load(mini_pos_tags_path())

print(f"caption: {caption!r}\n")

print("=== step 1: which words are worth attacking ===")
words = caption.lower().split()
for i, word in enumerate(words):
    print(f"  {i}: {word:<6} tagged {tagger.tag(word)}")
positions = select_content_words(caption, tagger, np.random.default_rng(4), n=3)
print(f"chosen positions: {positions}\n")

print("=== step 2: no-context oracle suggestions, lexicon verdicts ===")
oracle = MockOracle(
    {
        "girl": ["woman", "boy", "dog", "cat", "man"],
        "puts": ["places", "holds", "carries", "eats", "rides"],
        "apple": ["fruit", "dog", "cat", "car", "bag"],
        "bag": ["container", "car", "dog", "sofa", "couch"],
    }
)
records = perturb_caption(
    caption, tagger, oracle, lexicon, np.random.default_rng(4)
)
for r in records:
    arrow = f"{r.original} -> {r.replacement}"
    print(f"  {arrow:<22} {r.verdict}")

positives = [r for r in records if r.verdict == EQUIVALENT_POSITIVE]
print(f"\n{len(records)} records: {len(positives)} positives, "
      f"{len(records) - len(positives)} negatives")
print("\n=== step 3: what the trainer sees ===")
sample = [r for r in records if r.verdict != EQUIVALENT_POSITIVE][:3]
for r in sample:
    print(f"  hard negative: {r.perturbed_caption()!r}")
if positives:
    print(f"  extra positive: {positives[0].perturbed_caption()!r}")
print("\nthe lexicon check matters: without it, 'girl'->'woman' would be")
print("pushed away from its own image, training the encoder to separate")
print("captions that mean the same thing")
