#!/usr/bin/env python3
"""Dynamic masking, drawn fresh every epoch.

The masked-prediction objective needs corrupted inputs. The pipeline
selects about 15% of ordinary tokens, then masks 80% of the selected,
keeps 10% unchanged, and swaps 10% for random words. Plans are drawn
from epoch-derived generators, so the same sentence is corrupted
differently in every epoch but identically in every re-run.
"""

import numpy as np

from cmkt.corpus import Vocab, apply_masking_plan, plan_dynamic_masking, tokenize
from cmkt.seeding import derive_seed, rng_for

sentence = "the quick brown fox jumps over the lazy dog near the red barn"
vocab = Vocab.from_texts([sentence])
tokens = tokenize(sentence, vocab)

print(f"sentence: {sentence!r}")
print(f"token ids: {tokens}\n")

print("=== the same sentence across three epochs ===")
for epoch in range(3):
    rng = rng_for(derive_seed(0, "mask", epoch, 0), "plan")
    plan = plan_dynamic_masking(tokens, vocab, rng)
    corrupted = apply_masking_plan(tokens, plan, vocab)
    shown = " ".join(vocab.word_of(t) for t in corrupted)
    print(f"epoch {epoch}: {shown}")
    print(f"         positions {plan.positions} actions {plan.actions}")
print()

print("=== statistics over 100k tokens ===")
content = vocab.content_ids()
stream = [int(content[i % len(content)]) for i in range(100_000)]
rng = rng_for(0, "stats")
selected, actions = 0, {"mask": 0, "keep": 0, "random": 0}
for start in range(0, len(stream), 500):
    plan = plan_dynamic_masking(stream[start:start + 500], vocab, rng)
    selected += len(plan.positions)
    for a in plan.actions:
        actions[a] += 1
print(f"selection rate: {selected / len(stream):.4f}  (target 0.15)")
for name in ("mask", "keep", "random"):
    print(f"{name:>7} share: {actions[name] / selected:.4f}")
print("\nre-running this script reproduces these numbers exactly: every")
print("plan comes from a generator derived from (seed, purpose, epoch)")
