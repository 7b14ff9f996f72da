"""Named random streams.

Every source of randomness (noise injection, weight init, epoch shuffling,
mixup draws) pulls from its own counter-based Philox stream, derived from a
root seed plus a label path. Streams never overlap, so adding draws to one
consumer cannot silently shift another.
"""

import hashlib

import numpy as np


def _label_word(label) -> int:
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(root_seed: int, *labels) -> np.random.Generator:
    """Return the generator for ``(root_seed, *labels)``.

    The same arguments always yield the same stream, independent of any
    other stream's consumption.
    """
    root = int(root_seed)
    entropy = [root & 0xFFFFFFFF, (root >> 32) & 0xFFFFFFFF]
    entropy.extend(_label_word(label) for label in labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
