"""Deterministic sub-seed derivation.

A single top-level experiment seed is expanded into independent
per-component seeds by hashing a label path into the seed with a
splitmix64 finalizer.  Because each sub-seed depends only on
(root seed, label path), adding components to a config never perturbs
the streams of the others.
"""

_MASK = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (the finalizer, stateless form)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(root: int, *labels: str) -> int:
    """Derive a 64-bit sub-seed from ``root`` and a path of string labels."""
    state = splitmix64(root & _MASK)
    for label in labels:
        state = splitmix64(state ^ _fnv1a64(label.encode("utf-8")))
    return state
