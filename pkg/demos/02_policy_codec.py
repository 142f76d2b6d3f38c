"""Decoding 30-dim vectors into augmentation policies.

Ten consecutive triples become ten operations; pairs of operations form
five sub-policies. Triple layout: bucketed kind, raw probability, and a
magnitude mapped affinely into the kind's physical range.
"""

import numpy as np

from augsearch import decode_policy, decode_triple, default_ranges, parse_policy, serialize_policy

ranges = default_ranges()

print("the 16 operation kinds and their magnitude ranges:")
for i, k in enumerate(ranges.kinds):
    span = "(no magnitude)" if k.magnitude_free else f"[{k.min}, {k.max}] {k.unit}"
    print(f"  {i:2d} {k.name:<13} {span}")

print("\none triple, three interpretations:")
for a in ([0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.29, 0.9, 0.75]):
    op = decode_triple(a)
    print(f"  {a} -> {ranges.name_of(op.kind):<12} p={op.probability:.2f} "
          f"magnitude={op.magnitude:.2f}")

rng = np.random.default_rng(5)
vector = rng.random(30)
policy = decode_policy(vector)
print(f"\na random vector decodes into {len(policy)} sub-policies:")
text = serialize_policy(policy)
print(text)

# The canonical text round-trips (at its two-decimal storage precision).
reparsed = parse_policy(text)
print("round trip stable:", serialize_policy(reparsed) == text)
