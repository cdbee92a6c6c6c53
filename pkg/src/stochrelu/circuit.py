"""Boolean circuits for ReLU and sign tests over secret shares.

Three constructions are synthesized:

* ``RELU_FULL``: modular addition of the shares, comparison with the field
  midpoint, a zeroing MUX and a modular subtraction of the output mask.
* ``SIGN_NAIVE``: the same modular addition and comparison, followed by a MUX
  between the client-supplied ``-r`` and ``1 - r``.
* ``SIGN_STOCH``: a single comparator on the (optionally truncated) server
  share and negated client share, feeding the same MUX.

Bundles are little-endian (wire 0 of a bundle is the least significant bit).
Gates use one AND per full-adder bit via ``c' = ((a^c) & (b^c)) ^ c``; XOR
and NOT are free under free-XOR garbling.  Constants are folded away while
building, so gates never read a constant wire.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .field import DEFAULT_PARAMS, FieldParams


class CircuitError(ValueError):
    pass


class Op(enum.IntEnum):
    XOR = 0
    AND = 1
    NOT = 2


class Gate(NamedTuple):
    op: Op
    a: int
    b: int  # -1 for NOT
    out: int


class Mode(str, enum.Enum):
    POS_ZERO = "poszero"
    NEG_PASS = "negpass"


class Variant(str, enum.Enum):
    RELU_FULL = "relu-full"
    SIGN_NAIVE = "sign-naive"
    SIGN_STOCH = "sign-stoch"


@dataclass(frozen=True)
class BooleanCircuit:
    n_wires: int
    inputs: dict[str, tuple[int, ...]]
    outputs: tuple[int, ...]
    gates: tuple[Gate, ...]
    constants: dict[int, int] = field(default_factory=dict)
    name: str = "circuit"

    def __post_init__(self):
        defined = set(self.constants)
        for bundle in self.inputs.values():
            for w in bundle:
                if w in defined:
                    raise CircuitError(f"wire {w} appears in more than one input bundle")
                defined.add(w)
        for g in self.gates:
            ins = (g.a,) if g.op == Op.NOT else (g.a, g.b)
            for w in ins:
                if w not in defined:
                    raise CircuitError(f"gate {g.out} reads undefined wire {w}")
            if g.out in defined:
                raise CircuitError(f"wire {g.out} assigned twice")
            defined.add(g.out)
        for w in self.outputs:
            if w not in defined:
                raise CircuitError(f"output wire {w} is never driven")
        if defined and max(defined) >= self.n_wires:
            raise CircuitError("wire id beyond n_wires")

    @property
    def input_width(self) -> int:
        return sum(len(b) for b in self.inputs.values())


class CircuitBuilder:
    """Incremental gate-list builder with constant folding."""

    def __init__(self, name: str = "circuit"):
        self.name = name
        self._n = 0
        self._inputs: dict[str, tuple[int, ...]] = {}
        self._gates: list[Gate] = []
        self._const_wire: dict[int, int] = {}  # bit -> wire
        self._const_of: dict[int, int] = {}  # wire -> bit
        self._outputs: tuple[int, ...] = ()

    def _fresh(self) -> int:
        w = self._n
        self._n += 1
        return w

    def input(self, name: str, width: int) -> list[int]:
        if name in self._inputs:
            raise CircuitError(f"duplicate bundle {name}")
        wires = [self._fresh() for _ in range(width)]
        self._inputs[name] = tuple(wires)
        return wires

    def const(self, bit: int) -> int:
        bit &= 1
        if bit not in self._const_wire:
            w = self._fresh()
            self._const_wire[bit] = w
            self._const_of[w] = bit
        return self._const_wire[bit]

    def const_bits(self, value: int, width: int) -> list[int]:
        return [self.const((value >> i) & 1) for i in range(width)]

    def _emit(self, op: Op, a: int, b: int = -1) -> int:
        out = self._fresh()
        self._gates.append(Gate(op, a, b, out))
        return out

    def xor(self, a: int, b: int) -> int:
        ca, cb = self._const_of.get(a), self._const_of.get(b)
        if ca is not None and cb is not None:
            return self.const(ca ^ cb)
        if ca is not None:
            a, b, ca, cb = b, a, cb, ca
        if cb is not None:
            return self.not_(a) if cb else a
        if a == b:
            return self.const(0)
        return self._emit(Op.XOR, a, b)

    def and_(self, a: int, b: int) -> int:
        ca, cb = self._const_of.get(a), self._const_of.get(b)
        if ca is not None and cb is not None:
            return self.const(ca & cb)
        if ca is not None:
            a, b, ca, cb = b, a, cb, ca
        if cb is not None:
            return a if cb else self.const(0)
        if a == b:
            return a
        return self._emit(Op.AND, a, b)

    def not_(self, a: int) -> int:
        ca = self._const_of.get(a)
        if ca is not None:
            return self.const(1 - ca)
        return self._emit(Op.NOT, a)

    # -- arithmetic fragments -------------------------------------------

    def carry(self, a: int, b: int, c: int) -> int:
        return self.xor(self.and_(self.xor(a, c), self.xor(b, c)), c)

    def add(self, a: list[int], b: list[int], carry_in: int | None = None) -> tuple[list[int], int]:
        """Ripple-carry sum of equal-width bundles; returns (sum, carry_out)."""
        if len(a) != len(b) or not a:
            raise CircuitError("adder operands must be equal, non-zero width")
        c = self.const(0) if carry_in is None else carry_in
        out = []
        for x, y in zip(a, b):
            out.append(self.xor(self.xor(x, y), c))
            c = self.carry(x, y, c)
        return out, c

    def sub(self, a: list[int], b: list[int]) -> tuple[list[int], int]:
        """``a - b mod 2^w``; returns (difference, borrow_out)."""
        diff, c = self.add(a, [self.not_(w) for w in b], self.const(1))
        return diff, self.not_(c)

    def geq(self, a: list[int], b: list[int]) -> int:
        """[a >= b] as the carry out of ``a + ~b + 1``; one AND per bit."""
        if len(a) != len(b) or not a:
            raise CircuitError("comparator operands must be equal, non-zero width")
        c = self.const(1)
        for x, y in zip(a, b):
            c = self.carry(x, self.not_(y), c)
        return c

    def le(self, a: list[int], b: list[int]) -> int:
        return self.geq(b, a)

    def lt(self, a: list[int], b: list[int]) -> int:
        return self.not_(self.geq(a, b))

    def mux(self, s: int, a: list[int], b: list[int]) -> list[int]:
        """Per bit ``a if s else b``."""
        if len(a) != len(b):
            raise CircuitError("mux operands must be equal width")
        return [self.xor(y, self.and_(s, self.xor(x, y))) for x, y in zip(a, b)]

    def output(self, wires) -> None:
        self._outputs = tuple(wires)

    def build(self) -> BooleanCircuit:
        return BooleanCircuit(
            n_wires=self._n,
            inputs=dict(self._inputs),
            outputs=self._outputs,
            gates=tuple(self._gates),
            constants=dict(self._const_of),
            name=self.name,
        )


def _check_width(m: int) -> None:
    if m < 1:
        raise CircuitError("bit width must be at least 1")


def build_adder(m: int) -> BooleanCircuit:
    """Inputs ``a``, ``b``; outputs m sum bits then the carry."""
    _check_width(m)
    cb = CircuitBuilder(f"add{m}")
    a, b = cb.input("a", m), cb.input("b", m)
    s, c = cb.add(a, b)
    cb.output(s + [c])
    return cb.build()


def build_subtractor(m: int) -> BooleanCircuit:
    """Inputs ``a``, ``b``; outputs m difference bits then the borrow."""
    _check_width(m)
    cb = CircuitBuilder(f"sub{m}")
    a, b = cb.input("a", m), cb.input("b", m)
    d, borrow = cb.sub(a, b)
    cb.output(d + [borrow])
    return cb.build()


def build_comparator(m: int, strict: bool = False) -> BooleanCircuit:
    """Single output ``[a < b]`` if strict else ``[a <= b]``."""
    _check_width(m)
    cb = CircuitBuilder(f"cmp{m}{'lt' if strict else 'le'}")
    a, b = cb.input("a", m), cb.input("b", m)
    cb.output([cb.lt(a, b) if strict else cb.le(a, b)])
    return cb.build()


def build_mux(m: int) -> BooleanCircuit:
    """Inputs ``s`` (1 bit), ``a``, ``b``; outputs ``a if s else b``."""
    _check_width(m)
    cb = CircuitBuilder(f"mux{m}")
    s = cb.input("s", 1)[0]
    a, b = cb.input("a", m), cb.input("b", m)
    cb.output(cb.mux(s, a, b))
    return cb.build()


@dataclass(frozen=True)
class SignCircuitSpec:
    m: int
    k: int = 0
    mode: Mode = Mode.POS_ZERO
    variant: Variant = Variant.SIGN_STOCH

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "variant", Variant(self.variant))
        _check_width(self.m)
        if not 0 <= self.k < self.m:
            raise CircuitError(f"truncation k={self.k} outside [0, {self.m})")
        if self.variant != Variant.SIGN_STOCH and self.k != 0:
            raise CircuitError(f"{self.variant.value} does not support truncation")

    @property
    def compare_width(self) -> int:
        return self.m - self.k if self.variant == Variant.SIGN_STOCH else self.m


def _mod_add_and_sign(cb: CircuitBuilder, s: list[int], c: list[int], params: FieldParams):
    """Shared front end: x = s + c mod p, neg = [x >= half]."""
    m = params.m
    z, carry = cb.add(s, c)
    z = z + [carry]
    zp, borrow = cb.sub(z, cb.const_bits(params.p, m + 1))
    x = cb.mux(borrow, z[:m], zp[:m])
    neg = cb.geq(x, cb.const_bits(params.half, m))
    return x, neg


def synth(spec: SignCircuitSpec, params: FieldParams = DEFAULT_PARAMS) -> BooleanCircuit:
    """Synthesize the ReLU or sign circuit described by ``spec``.

    Bundle names:

    * ``server_share_bits``: the server's share (``m - k`` high bits for
      ``SIGN_STOCH``).
    * ``client_share_bits``: the client's share (``RELU_FULL``/``SIGN_NAIVE``).
    * ``client_neg_share_bits``: ``(p - client_share) mod p``, truncated the
      same way as the server share (``SIGN_STOCH``).
    * ``r_bits``: output mask (``RELU_FULL``), output is ``ReLU(x) - r``.
    * ``neg_r_bits`` / ``one_minus_r_bits``: ``-r`` and ``1 - r`` mod p for
      the sign variants, output is ``sign(x) - r``.
    """
    m = params.m
    if spec.m != m:
        raise CircuitError(f"spec width {spec.m} does not match field width {m}")
    cb = CircuitBuilder(f"{spec.variant.value}-m{m}-k{spec.k}-{spec.mode.value}")
    if spec.variant == Variant.RELU_FULL:
        s = cb.input("server_share_bits", m)
        c = cb.input("client_share_bits", m)
        r = cb.input("r_bits", m)
        x, neg = _mod_add_and_sign(cb, s, c, params)
        y = cb.mux(neg, cb.const_bits(0, m), x)
        d, borrow = cb.sub(y, r)
        d_plus_p, _ = cb.add(d, cb.const_bits(params.p, m))
        cb.output(cb.mux(borrow, d_plus_p, d))
    elif spec.variant == Variant.SIGN_NAIVE:
        s = cb.input("server_share_bits", m)
        c = cb.input("client_share_bits", m)
        neg_r = cb.input("neg_r_bits", m)
        one_minus_r = cb.input("one_minus_r_bits", m)
        _, neg = _mod_add_and_sign(cb, s, c, params)
        cb.output(cb.mux(neg, neg_r, one_minus_r))
    else:
        w = spec.compare_width
        s = cb.input("server_share_bits", w)
        t = cb.input("client_neg_share_bits", w)
        neg_r = cb.input("neg_r_bits", m)
        one_minus_r = cb.input("one_minus_r_bits", m)
        neg = cb.le(s, t) if spec.mode == Mode.POS_ZERO else cb.lt(s, t)
        cb.output(cb.mux(neg, neg_r, one_minus_r))
    return cb.build()


def gc_input_values(spec: SignCircuitSpec, params: FieldParams, server_share: int, client_share: int, r: int) -> dict[str, int]:
    """Integer value of every input bundle for one activation."""
    p = params.p
    if spec.variant == Variant.RELU_FULL:
        return {"server_share_bits": server_share, "client_share_bits": client_share, "r_bits": r}
    masks = {"neg_r_bits": -r % p, "one_minus_r_bits": (1 - r) % p}
    if spec.variant == Variant.SIGN_NAIVE:
        return {"server_share_bits": server_share, "client_share_bits": client_share, **masks}
    return {
        "server_share_bits": server_share >> spec.k,
        "client_neg_share_bits": (-client_share % p) >> spec.k,
        **masks,
    }


SERVER_BUNDLES = frozenset({"server_share_bits"})


# -- evaluation ------------------------------------------------------------


class EvaluationError(CircuitError):
    pass


def int_to_bits(value: int, width: int) -> list[int]:
    return [(value >> i) & 1 for i in range(width)]


def bits_to_int(bits) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))


def assign(c: BooleanCircuit, values: dict[str, int]) -> dict[str, list[int]]:
    """Turn integer bundle values into bit lists."""
    return {name: int_to_bits(values[name], len(wires)) for name, wires in c.inputs.items() if name in values}


def eval_plain(c: BooleanCircuit, inputs: dict[str, list[int]]) -> list[int]:
    """Reference evaluator over clear bits."""
    wires = [0] * c.n_wires
    for name, bundle in c.inputs.items():
        if name not in inputs:
            raise EvaluationError(f"missing input bundle {name!r}")
        bits = inputs[name]
        if len(bits) != len(bundle):
            raise EvaluationError(f"bundle {name!r} expects {len(bundle)} bits, got {len(bits)}")
        for w, b in zip(bundle, bits):
            wires[w] = int(b) & 1
    for w, b in c.constants.items():
        wires[w] = b
    for g in c.gates:
        if g.op == Op.XOR:
            wires[g.out] = wires[g.a] ^ wires[g.b]
        elif g.op == Op.AND:
            wires[g.out] = wires[g.a] & wires[g.b]
        else:
            wires[g.out] = wires[g.a] ^ 1
    return [wires[w] for w in c.outputs]


# -- cost model --------------------------------------------------------------


@dataclass(frozen=True)
class CircuitCost:
    and_count: int
    xor_count: int
    not_count: int
    estimated_garbled_bytes: int


def constant_outputs(c: BooleanCircuit) -> int:
    return sum(1 for w in c.outputs if w in c.constants)


def decode_map_bytes(c: BooleanCircuit) -> int:
    return math.ceil(len(c.outputs) / 8)


def cost(c: BooleanCircuit, label_bytes: int = 16) -> CircuitCost:
    """Gate census and garbled size under half-gates with free XOR.

    Bytes = two ciphertexts per AND, one packed decode bit per output, and
    one active label per output that is a constant wire.
    """
    counts = {op: 0 for op in Op}
    for g in c.gates:
        counts[g.op] += 1
    size = counts[Op.AND] * 2 * label_bytes + decode_map_bytes(c) + constant_outputs(c) * label_bytes
    return CircuitCost(counts[Op.AND], counts[Op.XOR], counts[Op.NOT], size)


# -- text dump ---------------------------------------------------------------
#
#   CIRCUIT <name> <n_wires>
#   INPUT <bundle> <wire>...
#   CONST <wire> <bit>
#   OUTPUT <wire>...
#   GATE <out> XOR|AND|NOT <in1> [<in2>]
#
# Header lines (CIRCUIT, INPUT, CONST, OUTPUT) precede all GATE lines.


def dumps(c: BooleanCircuit) -> str:
    lines = [f"CIRCUIT {c.name} {c.n_wires}"]
    for name, wires in c.inputs.items():
        lines.append(" ".join(["INPUT", name, *map(str, wires)]))
    for w, b in sorted(c.constants.items()):
        lines.append(f"CONST {w} {b}")
    lines.append(" ".join(["OUTPUT", *map(str, c.outputs)]))
    for g in c.gates:
        ins = f"{g.a}" if g.op == Op.NOT else f"{g.a} {g.b}"
        lines.append(f"GATE {g.out} {g.op.name} {ins}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> BooleanCircuit:
    name, n_wires = "circuit", 0
    inputs: dict[str, tuple[int, ...]] = {}
    constants: dict[int, int] = {}
    outputs: tuple[int, ...] = ()
    gates = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            kind = parts[0]
            if kind == "CIRCUIT":
                name, n_wires = parts[1], int(parts[2])
            elif kind == "INPUT":
                inputs[parts[1]] = tuple(int(w) for w in parts[2:])
            elif kind == "CONST":
                constants[int(parts[1])] = int(parts[2])
            elif kind == "OUTPUT":
                outputs = tuple(int(w) for w in parts[1:])
            elif kind == "GATE":
                op = Op[parts[2]]
                b = -1 if op == Op.NOT else int(parts[4])
                gates.append(Gate(op, int(parts[3]), b, int(parts[1])))
            else:
                raise CircuitError(f"unknown record {kind!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise CircuitError(f"line {lineno}: {exc}") from exc
    return BooleanCircuit(n_wires, inputs, outputs, tuple(gates), constants, name)
