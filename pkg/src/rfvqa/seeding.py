"""Deterministic per-record seed derivation.

Batch generation parallelizes per record; every record derives its own
64-bit seed from the master seed and a sequence of identifying parts
(strings and integers), so workers never share RNG state.
"""

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a 64-bit seed from a master seed and identifying parts.

    The derivation is a BLAKE2b hash over the master seed and the
    length-delimited, type-tagged parts, so distinct part sequences
    cannot collide by concatenation. Stable across platforms and runs.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master_seed & _MASK64))
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(data)) + data)
        elif isinstance(part, (int,)):
            h.update(b"i" + struct.pack("<q", part))
        else:
            raise TypeError(f"unsupported seed part type: {type(part).__name__}")
    return int.from_bytes(h.digest(), "little")
