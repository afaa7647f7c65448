"""Deterministic seeding helpers.

Every stochastic decision in the simulator draws from an RNG keyed by a
stable hash of the decision's identifying parts (purpose label, seeds,
content digests).  Draws therefore never depend on call order, process,
platform, or PYTHONHASHSEED, which is what makes seed-matched reruns
byte-identical and lets independent episodes run in parallel.
"""

from __future__ import annotations

import hashlib
from statistics import NormalDist

import numpy as np

_SEP = b"\x1f"
_NORMAL = NormalDist()


def _encode(part) -> bytes:
    if isinstance(part, bytes):
        return b"b" + part
    if isinstance(part, str):
        return b"s" + part.encode("utf-8")
    if isinstance(part, bool):
        return b"o1" if part else b"o0"
    if isinstance(part, (int, np.integer)):
        return b"i" + str(int(part)).encode()
    if isinstance(part, (float, np.floating)):
        return b"f" + repr(float(part)).encode()
    if part is None:
        return b"n"
    if isinstance(part, (tuple, list)):
        return b"t" + _SEP.join(_encode(p) for p in part) + b";"
    raise TypeError(f"unhashable seed part: {type(part)!r}")


def stable_digest(*parts) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(_encode(part))
        h.update(_SEP)
    return h.digest()


def stable_seed(*parts) -> int:
    """64-bit integer seed derived from the parts."""
    return int.from_bytes(stable_digest(*parts)[:8], "big")


def rng_for(*parts) -> np.random.Generator:
    """Fresh generator keyed by the parts; use when several draws are needed."""
    return np.random.default_rng(stable_seed(*parts))


def uniform_for(*parts) -> float:
    """Single U[0,1) draw keyed by the parts (cheaper than rng_for)."""
    return stable_seed(*parts) / 2.0**64


def normal_for(*parts) -> float:
    """Single standard-normal draw keyed by the parts."""
    u = (stable_seed(*parts) + 0.5) / 2.0**64
    return _NORMAL.inv_cdf(u)
