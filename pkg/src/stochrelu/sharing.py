"""Two-party additive secret sharing and Beaver-triple multiplication.

A value ``x`` is split as ``client = r`` and ``server = x - r (mod p)`` for a
uniform mask ``r``.  Triples come from a trusted dealer; each triple may be
consumed exactly once.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .field import DEFAULT_PARAMS, FieldElement, FieldParams


class ProtocolError(RuntimeError):
    """A party deviated from the expected message flow or reused material."""


class SharePair(NamedTuple):
    client: FieldElement
    server: FieldElement


def share(x, rng: np.random.Generator, params: FieldParams = DEFAULT_PARAMS) -> SharePair:
    x = int(x) % params.p
    r = int(rng.integers(0, params.p))
    return share_with_mask(x, r, params)


def share_with_mask(x, r, params: FieldParams = DEFAULT_PARAMS) -> SharePair:
    return SharePair(FieldElement(int(r) % params.p, params), FieldElement((int(x) - int(r)) % params.p, params))


def reconstruct(s: SharePair, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    return FieldElement((int(s.client) + int(s.server)) % params.p, params)


class BeaverTriple:
    """Shares of ``(a, b, ab)``; refuses to be consumed twice."""

    __slots__ = ("a", "b", "ab", "_used", "_lock")

    def __init__(self, a: SharePair, b: SharePair, ab: SharePair):
        self.a, self.b, self.ab = a, b, ab
        self._used = False
        self._lock = threading.Lock()

    @property
    def used(self) -> bool:
        return self._used

    def consume(self) -> BeaverTriple:
        with self._lock:
            if self._used:
                raise ProtocolError("Beaver triple already consumed")
            self._used = True
        return self


def gen_triples(n: int, rng: np.random.Generator, params: FieldParams = DEFAULT_PARAMS) -> list[BeaverTriple]:
    """Dealer-side generation of ``n`` independent triples."""
    if n < 0:
        raise ValueError("negative triple count")
    out = []
    for _ in range(n):
        a, b, ra, rb, rab = (int(v) for v in rng.integers(0, params.p, size=5))
        ab = a * b % params.p
        out.append(BeaverTriple(share_with_mask(a, ra, params), share_with_mask(b, rb, params), share_with_mask(ab, rab, params)))
    return out


class TriplePool:
    """Hands out triples in order under a lock; each exactly once."""

    def __init__(self, triples):
        self._triples = list(triples)
        self._next = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._triples) - self._next

    def take(self) -> BeaverTriple:
        with self._lock:
            if self._next >= len(self._triples):
                raise ProtocolError("triple pool exhausted")
            t = self._triples[self._next]
            self._next += 1
        return t


def beaver_mul(
    x: SharePair,
    y: SharePair,
    triple: BeaverTriple,
    params: FieldParams = DEFAULT_PARAMS,
    transcript: list | None = None,
) -> SharePair:
    """Multiply shared ``x`` and ``y`` consuming ``triple``.

    Round one opens ``d = x - a`` and ``e = y - b``; round two is local.  Only
    the server adds the public ``d * e`` term.  If ``transcript`` is given,
    every opened share is appended to it as ``(party, d_share, e_share)``.
    """
    triple.consume()
    p = params.p
    views = {}
    for party, xs, ys, a, b in (
        ("client", x.client, y.client, triple.a.client, triple.b.client),
        ("server", x.server, y.server, triple.a.server, triple.b.server),
    ):
        views[party] = ((int(xs) - int(a)) % p, (int(ys) - int(b)) % p)
        if transcript is not None:
            transcript.append((party, *views[party]))
    d = (views["client"][0] + views["server"][0]) % p
    e = (views["client"][1] + views["server"][1]) % p
    zc = beaver_combine(d, e, int(triple.a.client), int(triple.b.client), int(triple.ab.client), False, params)
    zs = beaver_combine(d, e, int(triple.a.server), int(triple.b.server), int(triple.ab.server), True, params)
    return SharePair(FieldElement(int(zc), params), FieldElement(int(zs), params))


def beaver_open(x_share, y_share, a_share, b_share, params: FieldParams = DEFAULT_PARAMS):
    """One party's contribution to the openings of ``d`` and ``e``."""
    p = params.p
    return np.mod(np.subtract(x_share, a_share), p), np.mod(np.subtract(y_share, b_share), p)


def beaver_combine(d, e, a_share, b_share, ab_share, adds_public_term: bool, params: FieldParams = DEFAULT_PARAMS):
    """Local step: ``ab + d*b + e*a (+ d*e)``.  Works on ints or int64 arrays."""
    p = params.p
    if isinstance(d, np.ndarray):
        z = _mulmod(d, b_share, p) + _mulmod(e, a_share, p) + np.asarray(ab_share, dtype=np.int64)
        if adds_public_term:
            z = z + _mulmod(d, e, p)
        return np.mod(z, p)
    z = int(ab_share) + int(d) * int(b_share) + int(e) * int(a_share)
    if adds_public_term:
        z += int(d) * int(e)
    return z % p


def _mulmod(a, b, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if p < 2**31:
        return np.mod(a * b, p)
    return (a.astype(object) * b.astype(object) % p).astype(np.int64)


@dataclass
class TripleArrays:
    """A batch of triples laid out as one party's share vectors."""

    a: np.ndarray
    b: np.ndarray
    ab: np.ndarray


def gen_triple_arrays(n: int, rng: np.random.Generator, params: FieldParams = DEFAULT_PARAMS):
    """Vectorised dealer: returns (client batch, server batch)."""
    p = params.p
    a = rng.integers(0, p, size=n, dtype=np.int64)
    b = rng.integers(0, p, size=n, dtype=np.int64)
    ab = _mulmod(a, b, p)
    masks = rng.integers(0, p, size=(3, n), dtype=np.int64)
    client = TripleArrays(masks[0], masks[1], masks[2])
    server = TripleArrays(np.mod(a - masks[0], p), np.mod(b - masks[1], p), np.mod(ab - masks[2], p))
    return client, server
