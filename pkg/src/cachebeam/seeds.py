"""Counter-based RNG streams with a documented split contract.

All randomness in the package flows from a single base seed. Independent
streams are obtained from the counter-based Philox generator keyed as

    key = (base_seed XOR index, purpose_id)

so the per-interval seed for a given purpose is derivable as
``seed ^ interval_index`` without generating intermediate states. Streams
for distinct purposes or indices never overlap (distinct Philox keys).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Fixed purpose ids; extending the table is backwards compatible as long as
# existing entries keep their values.
PURPOSES = {
    "layout": 0,
    "users": 1,
    "channels": 2,
    "requests": 3,
    "cache": 4,
    "randomization": 5,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the deterministic RNG stream for (seed, purpose, index)."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown RNG purpose {purpose!r}")
    key = ((seed ^ index) & _MASK64, PURPOSES[purpose])
    return np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))
