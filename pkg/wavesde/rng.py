"""Named, counter-based random substreams.

Every random draw in the engine comes from ``substream(seed, *key)``. The
stream depends only on the seed and the key, never on how many streams were
created before it, so serial and parallel slice processing draw identical
numbers.
"""

import hashlib
from typing import Union

import numpy as np


KeyPart = Union[int, str]


def _key_word(part: KeyPart) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream key parts must be non-negative, got {part}")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *key: KeyPart) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *key)``."""
    entropy = [_key_word(seed)] + [_key_word(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
