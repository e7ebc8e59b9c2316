import hashlib

import numpy as np


def derive_seed(master_seed: int, *keys: object) -> int:
    """Hash a master seed and a key path into a 64-bit seed.

    Streams derived this way do not depend on the order in which work is scheduled, so
    threaded runs reproduce sequential ones bit for bit.
    """
    base = "|".join([str(int(master_seed)), *(str(k) for k in keys)])
    digest = hashlib.sha256(base.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))
