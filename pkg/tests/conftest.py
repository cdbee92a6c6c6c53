import numpy as np
import pytest

from stochrelu.circuit import BooleanCircuit, Gate, Op


def random_circuit(rng: np.random.Generator, n_inputs: int, n_gates: int, ops=(Op.XOR, Op.AND, Op.NOT)) -> BooleanCircuit:
    """Random DAG over two input bundles; every gate reads earlier wires."""
    split = int(rng.integers(0, n_inputs + 1))
    inputs = {"a": tuple(range(split)), "b": tuple(range(split, n_inputs))}
    gates = []
    n = n_inputs
    for _ in range(n_gates):
        op = Op(ops[int(rng.integers(len(ops)))])
        a, b = (int(v) for v in rng.integers(0, n, size=2))
        gates.append(Gate(op, a, -1 if op == Op.NOT else b, n))
        n += 1
    n_out = int(rng.integers(1, min(n, 8) + 1))
    outputs = tuple(int(v) for v in rng.choice(n, size=n_out, replace=False))
    return BooleanCircuit(n, inputs, outputs, tuple(gates))


def split_bits(c: BooleanCircuit, value: int) -> dict[str, list[int]]:
    out, pos = {}, 0
    for name, wires in c.inputs.items():
        out[name] = [(value >> (pos + i)) & 1 for i in range(len(wires))]
        pos += len(wires)
    return out


def eval_batch(c: BooleanCircuit, values: dict[str, np.ndarray]) -> np.ndarray:
    """Evaluate ``c`` on many integer assignments at once; returns output ints."""
    n = len(next(iter(values.values())))
    wires = np.zeros((c.n_wires, n), dtype=np.uint8)
    for name, bundle in c.inputs.items():
        v = np.asarray(values[name], dtype=np.int64)
        for i, w in enumerate(bundle):
            wires[w] = (v >> i) & 1
    for w, b in c.constants.items():
        wires[w] = b
    for g in c.gates:
        if g.op == Op.XOR:
            wires[g.out] = wires[g.a] ^ wires[g.b]
        elif g.op == Op.AND:
            wires[g.out] = wires[g.a] & wires[g.b]
        else:
            wires[g.out] = wires[g.a] ^ 1
    out = np.zeros(n, dtype=np.int64)
    for i, w in enumerate(c.outputs):
        out |= wires[w].astype(np.int64) << i
    return out


@pytest.fixture
def make_circuit():
    return random_circuit


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    """Record one acceptance verdict and fail the test when it does not hold."""
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
