"""Deterministic seed derivation.

A single master seed fans out to every stochastic consumer through labeled
derivation, so partial reruns of a pipeline stay consistent.
"""

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed from a master seed and a label path."""
    key = ":".join([str(int(master))] + [str(l) for l in labels])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
