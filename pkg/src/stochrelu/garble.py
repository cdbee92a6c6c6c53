"""Half-gates garbling with free XOR and point-and-permute.

Labels are 128-bit Python ints.  The least significant bit is the colour
bit; ``Delta`` has colour bit 1, so the two labels of every wire have
opposite colours.

Hash: ``H(L, j) = BLAKE2b-128(key=_HASH_KEY, L || j)`` with ``L`` as 16
little-endian bytes and ``j`` an 8-byte little-endian tweak (``2g`` and
``2g + 1`` for the g-th AND gate).  Seed expansion uses BLAKE2b with a
different personalisation.  Both are part of the wire format and must not
change between versions.

Serialized layout (integers 4-byte LE)::

    circuit_id | and_count | n_inputs | n_outputs | n_const_outputs
    | seed commitment (16) | payload

where payload = AND tables (32 B each, gate order) | packed decode bits
| active labels of constant outputs (16 B each).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .circuit import BooleanCircuit, Op, decode_map_bytes

LABEL_BYTES = 16
HEADER = struct.Struct("<5I16s")
_HASH_KEY = b"stochrelu-hg-v1\x00"
_MASK = (1 << 128) - 1


class GarbleError(ValueError):
    pass


class IntegrityError(GarbleError):
    """An output label is neither of the two valid labels for its wire."""


_KEYED = hashlib.blake2b(digest_size=16, key=_HASH_KEY)


def _h(label: int, tweak: int) -> int:
    d = _KEYED.copy()
    d.update(label.to_bytes(16, "little") + tweak.to_bytes(8, "little"))
    return int.from_bytes(d.digest(), "little")


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    return int(seed).to_bytes(32, "little", signed=True)


class _Expander:
    def __init__(self, seed):
        self._seed = _seed_bytes(seed)

    def label(self, *path: int) -> int:
        d = hashlib.blake2b(self._seed + struct.pack(f"<{len(path)}q", *path), digest_size=16, person=b"stochrelu-seed")
        return int.from_bytes(d.digest(), "little")


@dataclass(frozen=True)
class InputEncoding:
    """Garbler's zero-labels for every input bundle."""

    zero: dict[str, tuple[int, ...]]
    delta: int

    def labels(self, bundle: str, bits) -> list[int]:
        zs = self.zero[bundle]
        if len(bits) != len(zs):
            raise GarbleError(f"bundle {bundle!r} needs {len(zs)} bits")
        d = self.delta
        return [z ^ d if b else z for z, b in zip(zs, bits)]

    def encode(self, inputs: dict[str, list[int]]) -> dict[str, list[int]]:
        return {name: self.labels(name, bits) for name, bits in inputs.items()}


@dataclass(frozen=True)
class OutputDecoder:
    """Garbler-side decode map; authenticates labels before decoding."""

    zero: tuple[int, ...]
    delta: int


@dataclass(frozen=True)
class GarbledCircuit:
    circuit: BooleanCircuit
    tables: tuple[tuple[int, int], ...]
    decode_bits: tuple[int, ...]
    const_labels: tuple[int, ...]
    commitment: bytes
    circuit_id: int = 0

    def payload(self) -> bytes:
        out = bytearray()
        for tg, te in self.tables:
            out += tg.to_bytes(16, "little")
            out += te.to_bytes(16, "little")
        packed = bytearray(decode_map_bytes(self.circuit))
        for i, b in enumerate(self.decode_bits):
            packed[i // 8] |= b << (i % 8)
        out += packed
        for lab in self.const_labels:
            out += lab.to_bytes(16, "little")
        return bytes(out)

    def to_bytes(self) -> bytes:
        c = self.circuit
        head = HEADER.pack(self.circuit_id, len(self.tables), c.input_width, len(c.outputs), len(self.const_labels), self.commitment)
        return head + self.payload()

    @classmethod
    def from_bytes(cls, data: bytes, circuit: BooleanCircuit) -> GarbledCircuit:
        if len(data) < HEADER.size:
            raise GarbleError("garbled circuit truncated in header")
        cid, n_and, n_in, n_out, n_const, commit = HEADER.unpack_from(data)
        expected_and = sum(1 for g in circuit.gates if g.op == Op.AND)
        if (n_and, n_in, n_out) != (expected_and, circuit.input_width, len(circuit.outputs)):
            raise GarbleError("garbled circuit header does not match the circuit")
        dec_len = decode_map_bytes(circuit)
        need = HEADER.size + 32 * n_and + dec_len + 16 * n_const
        if len(data) != need:
            raise GarbleError(f"garbled circuit is {len(data)} bytes, expected {need}")
        pos = HEADER.size
        tables = []
        for _ in range(n_and):
            tables.append((int.from_bytes(data[pos : pos + 16], "little"), int.from_bytes(data[pos + 16 : pos + 32], "little")))
            pos += 32
        packed = data[pos : pos + dec_len]
        pos += dec_len
        bits = tuple((packed[i // 8] >> (i % 8)) & 1 for i in range(n_out))
        consts = tuple(int.from_bytes(data[pos + 16 * i : pos + 16 * i + 16], "little") for i in range(n_const))
        return cls(circuit, tuple(tables), bits, consts, commit, cid)


def garble(c: BooleanCircuit, seed, circuit_id: int = 0) -> tuple[GarbledCircuit, InputEncoding, OutputDecoder]:
    """Garble ``c``; all randomness is derived from ``seed``."""
    ex = _Expander(seed)
    delta = ex.label(-1) | 1
    zero = [0] * c.n_wires
    enc = {}
    for bi, (name, wires) in enumerate(c.inputs.items()):
        labs = []
        for wi, w in enumerate(wires):
            zero[w] = ex.label(bi, wi)
            labs.append(zero[w])
        enc[name] = tuple(labs)
    for w in c.constants:
        zero[w] = ex.label(-2, w)

    tables = []
    j = 0
    for g in c.gates:
        if g.op == Op.XOR:
            zero[g.out] = zero[g.a] ^ zero[g.b]
        elif g.op == Op.NOT:
            zero[g.out] = zero[g.a] ^ delta
        else:
            a0, b0 = zero[g.a], zero[g.b]
            a1, b1 = a0 ^ delta, b0 ^ delta
            pa, pb = a0 & 1, b0 & 1
            t0, t1 = 2 * j, 2 * j + 1
            ha0, ha1 = _h(a0, t0), _h(a1, t0)
            hb0, hb1 = _h(b0, t1), _h(b1, t1)
            tg = ha0 ^ ha1 ^ (delta if pb else 0)
            wg = ha0 ^ (tg if pa else 0)
            te = hb0 ^ hb1 ^ a0
            we = hb0 ^ ((te ^ a0) if pb else 0)
            zero[g.out] = wg ^ we
            tables.append((tg, te))
            j += 1

    out_zero = tuple(zero[w] for w in c.outputs)
    decode_bits = tuple(z & 1 for z in out_zero)
    const_labels = tuple(zero[w] ^ (delta if c.constants[w] else 0) for w in c.outputs if w in c.constants)
    commitment = hashlib.blake2b(_seed_bytes(seed), digest_size=16, person=b"stochrelu-commit").digest()
    gc = GarbledCircuit(c, tuple(tables), decode_bits, const_labels, commitment, circuit_id)
    return gc, InputEncoding(enc, delta), OutputDecoder(out_zero, delta)


def evaluate(gc: GarbledCircuit, input_labels: dict[str, list[int]]) -> list[int]:
    """Evaluate on one active label per input wire; returns output labels."""
    c = gc.circuit
    lab = [0] * c.n_wires
    for name, wires in c.inputs.items():
        given = input_labels.get(name)
        if given is None or len(given) != len(wires):
            raise GarbleError(f"bundle {name!r} needs {len(wires)} labels")
        for w, L in zip(wires, given):
            lab[w] = L
    const_iter = iter(gc.const_labels)
    for w in c.outputs:
        if w in c.constants:
            lab[w] = next(const_iter)
    tables = gc.tables
    j = 0
    for g in c.gates:
        if g.op == Op.XOR:
            lab[g.out] = lab[g.a] ^ lab[g.b]
        elif g.op == Op.NOT:
            lab[g.out] = lab[g.a]
        else:
            a, b = lab[g.a], lab[g.b]
            tg, te = tables[j]
            wg = _h(a, 2 * j) ^ (tg if a & 1 else 0)
            we = _h(b, 2 * j + 1) ^ ((te ^ a) if b & 1 else 0)
            lab[g.out] = wg ^ we
            j += 1
    return [lab[w] for w in c.outputs]


def decode(labels, decoder: OutputDecoder) -> list[int]:
    """Garbler-side decode; rejects any label that is not valid for its wire."""
    if len(labels) != len(decoder.zero):
        raise IntegrityError(f"expected {len(decoder.zero)} output labels, got {len(labels)}")
    bits = []
    for L, z in zip(labels, decoder.zero):
        if L == z:
            bits.append(0)
        elif L == z ^ decoder.delta:
            bits.append(1)
        else:
            raise IntegrityError("output label does not match either valid label")
    return bits


def decode_colors(labels, decode_bits) -> list[int]:
    """Evaluator-side decode from the public colour-bit map (no integrity check)."""
    return [(L & 1) ^ d for L, d in zip(labels, decode_bits)]
