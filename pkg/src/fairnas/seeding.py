"""Stable per-component seeds derived from one root seed."""

from __future__ import annotations

import hashlib
import json


def derive_seed(root: int, *names) -> int:
    """A 63-bit seed that depends only on ``root`` and the component ``names``."""
    payload = json.dumps([int(root), *map(str, names)]).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big") >> 1
