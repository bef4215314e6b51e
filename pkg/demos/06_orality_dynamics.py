"""
Orality clues: reading frustration off the transcript
=====================================================

Frustrated callers repeat themselves, hesitate, and negate. The orality
analyzer counts seven such clues per time bin and lines them up with
the satisfaction track, so drops in satisfaction can be matched against
surges in the clues.
"""

import numpy as np

from dimemo.corpus import SyntheticSpec, TimedWord, generate_synthetic, gold_reference
from dimemo.lingua import (
    FEATURES, align_profile_with_reference, extract_profile, tag_events,
)


def spoken(text, step=0.3):
    return [
        TimedWord(tok, round(i * step, 3), round(i * step + 0.2, 3))
        for i, tok in enumerate(text.split())
    ]


# 1. The counting rules on a hand-checkable utterance: one repetition,
#    one filled pause, one negation, and "c'est" twice (the repetition
#    is counted on whole tokens, the lexicon on apostrophe-split ones).
profile = extract_profile(spoken("c'est c'est pas bien hein"))
print("c'est c'est pas bien hein  ->",
      {name: profile.totals[name] for name in FEATURES if profile.totals[name]})

# 2. A synthetic conversation with injected frustration drops.
spec = SyntheticSpec(
    seed=31, train_count=4, dev_count=1, test_count=1,
    duration_mean=120.0, duration_min=90.0, duration_max=180.0,
    drops_per_minute=1.0,
)
corpus = generate_synthetic(spec)
conv = max(corpus.conversations.values(), key=lambda c: len(c.latent.drop_times))
gold = gold_reference(conv).values
print(f"\n{conv.id}: {conv.duration:.0f} s, drops at "
      f"{['%.0fs' % t for t in conv.latent.drop_times]}")

# 3. Clue counts per 10 s bin, aligned with the mean gold satisfaction
#    of the same bin. Watch filled pauses and negations swell after a
#    drop while satisfaction sinks.
table = align_profile_with_reference(extract_profile(conv.transcript), gold)
filled = FEATURES.index("filled")
neg = FEATURES.index("neg")
print("\n  bin    filled  neg   satisfaction")
for k, start in enumerate(table.bin_starts):
    print(f"  {start:4.0f}s   {table.counts[k, filled]:4d} {table.counts[k, neg]:4d}"
          f"       {table.satisfaction[k]:.2f}")

# 4. Event tagging on the gold track itself: sustained low-satisfaction
#    intervals and sharp forward-looking drops.
events = tag_events(gold)
print(f"\n{len(events)} events:")
for event in events[:8]:
    print(f"  {event.kind:<16s} {event.start:6.1f}s - {event.end:6.1f}s")
