"""Two-party offline/online inference with garbled sign tests.

The model is cut into *blocks*: a run of linear layers followed by one ReLU
(the last block has no ReLU and yields the logits).  Between blocks the
parties hold ``client = r_i`` and ``server = y_i - r_i``.

Offline, a trusted :class:`Dealer` stands in for homomorphic encryption and
oblivious transfer.  Per block it gives the client ``W_i r_i - s_i`` and the
server ``s_i``; per ReLU it garbles one circuit with the server's seed and
hands the client the active labels of every input the client already knows
(its share of ``x``, and ``r`` or ``-r``/``1 - r``).  The dealer therefore
sees both parties' randomness; this is a semi-honest simulation boundary,
not a secure deployment.

Online, per block with a ReLU:

1. server -> client  ``GC_LABELS``: garbled tables and the server's labels,
   streamed in activation order;
2. client -> server  ``GC_OUTPUT_LABELS`` (and, for sign variants,
   ``BEAVER_OPEN`` with the client's halves of ``d``/``e``);
3. sign variants only: server -> client ``BEAVER_OPEN``, then client ->
   server ``LINEAR_MASKED`` with ``z_c - r_{i+1}`` so the next block starts
   from the standard layout.

``RELU_FULL`` outputs ``ReLU(x) - r_{i+1}`` straight from the circuit.  The
server adds the public ``d * e`` term in Beaver multiplication.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .circuit import Mode, Op, SignCircuitSpec, Variant, assign, bits_to_int, constant_outputs, decode_map_bytes, gc_input_values, synth
from .field import DEFAULT_PARAMS, FieldParams, encode_array
from .garble import HEADER, LABEL_BYTES, GarbledCircuit, InputEncoding, OutputDecoder, decode, evaluate, garble
from .nn import LINEAR_TYPES, Model, ReLU, StochasticReluConfig, apply_linear
from .sharing import ProtocolError, TripleArrays, beaver_combine, beaver_open, gen_triple_arrays
from .transport import Endpoint, FrameType, Transcript, loopback_pair, parse_elements, serialize_elements

SERVER_BUNDLE = "server_share_bits"
MAX_ACTS_PER_FRAME = 2048


class ConfigMismatch(ProtocolError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    params: FieldParams = DEFAULT_PARAMS
    relu: StochasticReluConfig = StochasticReluConfig()
    variant: Variant = Variant.SIGN_STOCH
    rescale: str = "local"  # "local" share truncation or "none"
    client_seed: int = 1
    server_seed: int = 2
    dealer_seed: int = 3

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.rescale not in ("local", "none"):
            raise ValueError(f"unknown rescale policy {self.rescale!r}")
        self.relu.check(self.params)
        if self.variant != Variant.SIGN_STOCH and self.relu.k:
            raise ValueError(f"{self.variant.value} does not truncate; k must be 0")

    def circuit_spec(self) -> SignCircuitSpec:
        return SignCircuitSpec(self.params.m, self.relu.k, self.relu.mode, self.variant)

    def public(self) -> dict:
        spec = self.circuit_spec()
        return {"p": self.params.p, "variant": spec.variant.value, "k": spec.k, "mode": spec.mode.value, "rescale": self.rescale}

    def hash(self) -> bytes:
        return hashlib.sha256(json.dumps(self.public(), sort_keys=True).encode()).digest()


# -- block structure -----------------------------------------------------------------


@dataclass
class Block:
    layers: list
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    relu: bool


def split_blocks(model: Model) -> list[Block]:
    blocks, current = [], []
    shape_in = model.input_shape
    shapes = model.shapes()
    shape = shape_in
    for layer, out in zip(model.layers, shapes):
        if isinstance(layer, ReLU):
            blocks.append(Block(current, shape_in, shape, True))
            current, shape_in = [], out
        elif isinstance(layer, LINEAR_TYPES):
            current.append(layer)
        else:
            raise ProtocolError(f"unsupported layer {type(layer).__name__}")
        shape = out
    blocks.append(Block(current, shape_in, shape, False))
    return blocks


def _trunc_server(v: np.ndarray, shift: int) -> np.ndarray:
    return v >> shift


def _trunc_client(v: np.ndarray, shift: int, p: int) -> np.ndarray:
    return np.mod(-(np.mod(-v, p) >> shift), p)


def run_block_linear(block: Block, share: np.ndarray, params: FieldParams, server: bool, rescale: str) -> np.ndarray:
    """Apply a block's linear layers to one party's share (batch axis 1).

    The server adds biases; each party truncates its own share after a layer
    with ``shift > 0``.
    """
    y = share[None]
    for layer in block.layers:
        y = apply_linear(layer, y, params, with_bias=server)
        shift = getattr(layer, "shift", 0)
        if shift:
            if rescale != "local":
                raise ProtocolError("model rescales but the session disables rescaling")
            y = _trunc_server(y, shift) if server else _trunc_client(y, shift, params.p)
    return y[0]


# -- offline material ----------------------------------------------------------------


@dataclass
class ClientBlock:
    r_in: np.ndarray
    x_share: np.ndarray  # W r - s, flattened activation order
    labels: list[list[int]] | None = None  # per activation, client-bundle labels in bundle order
    r_v: np.ndarray | None = None
    triples: TripleArrays | None = None


@dataclass
class ServerBlock:
    s: np.ndarray
    gcs: list[GarbledCircuit] = field(default_factory=list)
    encodings: list[InputEncoding] = field(default_factory=list)
    decoders: list[OutputDecoder] = field(default_factory=list)
    triples: TripleArrays | None = None
    spent: bool = False


@dataclass
class ClientMaterial:
    config_hash: bytes
    input_shape: tuple[int, ...]
    out_shapes: list[tuple[int, ...]]
    blocks: list[ClientBlock]
    used: bool = False

    def mask_trace(self, params: FieldParams) -> list[np.ndarray]:
        """Per-ReLU masks ``t = -x_client`` shaped ``(1, *activation_shape)``."""
        return [np.mod(-b.x_share, params.p).reshape((1, *shape)) for b, shape in zip(self.blocks, self.out_shapes) if b.labels is not None]

    def consume(self) -> None:
        if self.used:
            raise ProtocolError("offline material already used for an inference")
        self.used = True


@dataclass
class ServerMaterial:
    config_hash: bytes
    blocks: list[ServerBlock]
    used: bool = False

    def consume(self) -> None:
        if self.used:
            raise ProtocolError("offline material already used for an inference")
        self.used = True

    @property
    def gc_count(self) -> int:
        return sum(len(b.gcs) for b in self.blocks)


def client_bundles(spec: SignCircuitSpec) -> list[str]:
    if spec.variant == Variant.RELU_FULL:
        return ["client_share_bits", "r_bits"]
    first = "client_share_bits" if spec.variant == Variant.SIGN_NAIVE else "client_neg_share_bits"
    return [first, "neg_r_bits", "one_minus_r_bits"]


class Dealer:
    """Trusted generator of correlated offline material.

    ``linear`` plays the role of the homomorphic linear precomputation and
    ``relu_unit`` that of garbling plus label transfer.  A cryptographic
    back end can replace either without touching the online code.
    """

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.params = cfg.params
        self.spec = cfg.circuit_spec()
        self.circuit = synth(self.spec, self.params)
        self.client_rng = np.random.default_rng(np.random.SeedSequence([cfg.client_seed, 0xC1]))
        self.server_rng = np.random.default_rng(np.random.SeedSequence([cfg.server_seed, 0x5E]))
        self.dealer_rng = np.random.default_rng(np.random.SeedSequence([cfg.dealer_seed, 0xDE]))

    def linear(self, block: Block, r_in: np.ndarray, s: np.ndarray) -> np.ndarray:
        lin_r = run_block_linear(block, r_in, self.params, server=False, rescale=self.cfg.rescale)
        return np.mod(lin_r - s, self.params.p)

    def relu_unit(self, block_index: int, x_client: np.ndarray, r_out: np.ndarray):
        """Garble one circuit per activation; returns (client, server) parts."""
        p = self.params.p
        n = x_client.size
        variant = self.spec.variant
        if variant == Variant.RELU_FULL:
            r_v = None
            masks = r_out.ravel()
        else:
            r_v = self.client_rng.integers(0, p, size=n, dtype=np.int64)
            masks = r_v
        names = client_bundles(self.spec)
        labels, gcs, encs, decs = [], [], [], []
        for j in range(n):
            seed = hashlib.sha256(f"{self.cfg.server_seed}:{block_index}:{j}".encode()).digest()
            gc, enc, dec = garble(self.circuit, seed, circuit_id=j)
            values = gc_input_values(self.spec, self.params, 0, int(x_client[j]), int(masks[j]))
            bits = assign(self.circuit, {k: values[k] for k in names})
            labels.append([lab for name in names for lab in enc.labels(name, bits[name])])
            gcs.append(gc)
            encs.append(enc)
            decs.append(dec)
        ct = st = None
        if variant != Variant.RELU_FULL:
            ct, st = gen_triple_arrays(n, self.dealer_rng, self.params)
        return (labels, r_v, ct), ServerBlock(s=np.empty(0), gcs=gcs, encodings=encs, decoders=decs, triples=st)


def offline_phase(model: Model, cfg: SessionConfig, dealer: Dealer | None = None) -> tuple[ClientMaterial, ServerMaterial]:
    if model.params.p != cfg.params.p:
        raise ProtocolError("model and session use different fields")
    dealer = dealer or Dealer(cfg)
    p = cfg.params.p
    blocks = split_blocks(model)
    r_ins = [dealer.client_rng.integers(0, p, size=b.in_shape, dtype=np.int64) for b in blocks]
    client_blocks, server_blocks = [], []
    for i, block in enumerate(blocks):
        s = dealer.server_rng.integers(0, p, size=block.out_shape, dtype=np.int64)
        x_client = dealer.linear(block, r_ins[i], s).ravel()
        cb = ClientBlock(r_in=r_ins[i], x_share=x_client)
        if block.relu:
            (labels, r_v, ct), sb = dealer.relu_unit(i, x_client, r_ins[i + 1])
            cb.labels, cb.r_v, cb.triples = labels, r_v, ct
            sb.s = s
        else:
            sb = ServerBlock(s=s)
        client_blocks.append(cb)
        server_blocks.append(sb)
    h = cfg.hash()
    return ClientMaterial(h, model.input_shape, [b.out_shape for b in blocks], client_blocks), ServerMaterial(h, server_blocks)


# -- online phase ----------------------------------------------------------------------


def exchange_config(ep: Endpoint, cfg: SessionConfig) -> None:
    ep.send(FrameType.CONFIG_HASH, cfg.hash())
    other = ep.recv(FrameType.CONFIG_HASH).payload
    if other != cfg.hash():
        ep.abort("configuration hash mismatch")
        raise ConfigMismatch("peer configuration hash differs")


def _labels_to_bytes(labels) -> bytes:
    return b"".join(int(L).to_bytes(LABEL_BYTES, "little") for L in labels)


def _bytes_to_labels(data: bytes) -> list[int]:
    return [int.from_bytes(data[i : i + LABEL_BYTES], "little") for i in range(0, len(data), LABEL_BYTES)]


def _chunks(n: int):
    for lo in range(0, n, MAX_ACTS_PER_FRAME):
        yield lo, min(n, lo + MAX_ACTS_PER_FRAME)


def online_linear(block: Block, server_in: np.ndarray, mat: ServerBlock, cfg: SessionConfig) -> np.ndarray:
    """Server side of a linear block: ``W (y - r) + s``.  No messages."""
    out = run_block_linear(block, server_in, cfg.params, server=True, rescale=cfg.rescale)
    return np.mod(out + mat.s, cfg.params.p).ravel()


def online_relu_server(ep: Endpoint, mat: ServerBlock, x_server: np.ndarray, cfg: SessionConfig, block_index: int = 0) -> np.ndarray:
    """Returns the server's share of the next block input (``y - r_{i+1}``)."""
    p = cfg.params.p
    spec = cfg.circuit_spec()
    n = x_server.size
    if len(mat.gcs) != n:
        raise ProtocolError(f"block {block_index}: {len(mat.gcs)} circuits for {n} activations")
    if mat.spent:
        raise ProtocolError(f"block {block_index}: garbled circuits already used")
    mat.spent = True
    for lo, hi in _chunks(n):
        parts = []
        for j in range(lo, hi):
            value = gc_input_values(spec, cfg.params, int(x_server[j]), 0, 0)[SERVER_BUNDLE]
            bits = [(value >> b) & 1 for b in range(len(mat.encodings[j].zero[SERVER_BUNDLE]))]
            parts.append(mat.gcs[j].to_bytes())
            parts.append(_labels_to_bytes(mat.encodings[j].labels(SERVER_BUNDLE, bits)))
        ep.send(FrameType.GC_LABELS, b"".join(parts))

    out_labels = []
    while len(out_labels) < n * spec.m:
        out_labels += _bytes_to_labels(ep.recv(FrameType.GC_OUTPUT_LABELS).payload)
    if len(out_labels) != n * spec.m:
        raise ProtocolError(f"block {block_index}: wrong number of output labels")
    m = spec.m
    decoded = np.array([bits_to_int(decode(out_labels[j * m : (j + 1) * m], mat.decoders[j])) for j in range(n)], dtype=np.int64)
    if spec.variant == Variant.RELU_FULL:
        return decoded

    v_server = decoded  # sign(x) - r_v
    client_open = parse_elements(ep.recv(FrameType.BEAVER_OPEN).payload)
    t = mat.triples
    d_s, e_s = beaver_open(x_server, v_server, t.a, t.b, cfg.params)
    ep.send(FrameType.BEAVER_OPEN, serialize_elements(np.concatenate([d_s, e_s])))
    if client_open.size != 2 * n:
        raise ProtocolError(f"block {block_index}: malformed Beaver opening")
    d = np.mod(d_s + client_open[:n], p)
    e = np.mod(e_s + client_open[n:], p)
    z_s = beaver_combine(d, e, t.a, t.b, t.ab, True, cfg.params)
    masked = parse_elements(ep.recv(FrameType.LINEAR_MASKED).payload)
    if masked.size != n:
        raise ProtocolError(f"block {block_index}: malformed reshare")
    return np.mod(z_s + masked, p)


def online_relu_client(ep: Endpoint, mat: ClientBlock, r_next: np.ndarray, cfg: SessionConfig, circuit, block_index: int = 0) -> None:
    """Evaluate this block's circuits and finish with the client share ``r_{i+1}``."""
    p = cfg.params.p
    spec = cfg.circuit_spec()
    n = mat.x_share.size
    w = len(circuit.inputs[SERVER_BUNDLE])
    gc_len = garbled_size(circuit)
    stride = gc_len + w * LABEL_BYTES
    names = client_bundles(spec)
    widths = [len(circuit.inputs[name]) for name in names]
    out = bytearray()
    got = 0
    while got < n:
        payload = ep.recv(FrameType.GC_LABELS).payload
        if len(payload) % stride:
            raise ProtocolError(f"block {block_index}: garbled batch has a partial record")
        for pos in range(0, len(payload), stride):
            j = got
            if j >= n:
                raise ProtocolError(f"block {block_index}: more circuits than activations")
            gc = GarbledCircuit.from_bytes(payload[pos : pos + gc_len], circuit)
            labels = {SERVER_BUNDLE: _bytes_to_labels(payload[pos + gc_len : pos + stride])}
            flat, off = mat.labels[j], 0
            for name, width in zip(names, widths):
                labels[name] = flat[off : off + width]
                off += width
            out += _labels_to_bytes(evaluate(gc, labels))
            got += 1
    per = spec.m * LABEL_BYTES
    for lo, hi in _chunks(n):
        ep.send(FrameType.GC_OUTPUT_LABELS, bytes(out[lo * per : hi * per]))
    if spec.variant == Variant.RELU_FULL:
        return

    t = mat.triples
    d_c, e_c = beaver_open(mat.x_share, mat.r_v, t.a, t.b, cfg.params)
    ep.send(FrameType.BEAVER_OPEN, serialize_elements(np.concatenate([d_c, e_c])))
    server_open = parse_elements(ep.recv(FrameType.BEAVER_OPEN).payload)
    if server_open.size != 2 * n:
        raise ProtocolError(f"block {block_index}: malformed Beaver opening")
    d = np.mod(d_c + server_open[:n], p)
    e = np.mod(e_c + server_open[n:], p)
    z_c = beaver_combine(d, e, t.a, t.b, t.ab, False, cfg.params)
    ep.send(FrameType.LINEAR_MASKED, serialize_elements(np.mod(z_c - r_next.ravel(), p)))


def garbled_size(circuit) -> int:
    """Wire size of one garbled circuit, header included."""
    n_and = sum(1 for g in circuit.gates if g.op == Op.AND)
    return HEADER.size + 32 * n_and + decode_map_bytes(circuit) + LABEL_BYTES * constant_outputs(circuit)


@dataclass
class PartyResult:
    logits: np.ndarray | None
    transcript: Transcript
    online_seconds: float


def run_server(ep: Endpoint, model: Model, cfg: SessionConfig, mat: ServerMaterial, handshake: bool = True) -> PartyResult:
    if mat.config_hash != cfg.hash():
        raise ProtocolError("material was generated for a different configuration")
    mat.consume()
    ep.transcript.phase = "online"
    if handshake:
        exchange_config(ep, cfg)
    t0 = time.perf_counter()
    blocks = split_blocks(model)
    if len(blocks) != len(mat.blocks):
        raise ProtocolError("material does not match the model structure")
    try:
        share = parse_elements(ep.recv(FrameType.LINEAR_MASKED).payload)
        for i, (block, bm) in enumerate(zip(blocks, mat.blocks)):
            if share.size != int(np.prod(block.in_shape)):
                raise ProtocolError(f"block {i}: expected {np.prod(block.in_shape)} input shares, got {share.size}")
            x_s = online_linear(block, share.reshape(block.in_shape), bm, cfg)
            if block.relu:
                share = online_relu_server(ep, bm, x_s, cfg, i)
            else:
                ep.send(FrameType.LOGITS, serialize_elements(x_s))
    except ProtocolError as exc:
        ep.abort(str(exc))
        raise
    return PartyResult(None, ep.transcript, time.perf_counter() - t0)


def run_client(ep: Endpoint, x, cfg: SessionConfig, mat: ClientMaterial, handshake: bool = True) -> PartyResult:
    """``x`` is a residue tensor of the model's input shape."""
    p = cfg.params.p
    if mat.config_hash != cfg.hash():
        raise ProtocolError("material was generated for a different configuration")
    x = np.asarray(x, dtype=np.int64)
    if x.shape != mat.input_shape:
        raise ProtocolError(f"input shape {x.shape} does not match {mat.input_shape}")
    mat.consume()
    ep.transcript.phase = "online"
    if handshake:
        exchange_config(ep, cfg)
    t0 = time.perf_counter()
    circuit = synth(cfg.circuit_spec(), cfg.params)
    try:
        ep.send(FrameType.LINEAR_MASKED, serialize_elements(np.mod(x - mat.blocks[0].r_in, p)))
        logits = None
        for i, bm in enumerate(mat.blocks):
            if bm.labels is not None:
                online_relu_client(ep, bm, mat.blocks[i + 1].r_in, cfg, circuit, i)
            else:
                server_share = parse_elements(ep.recv(FrameType.LOGITS).payload)
                logits = np.mod(server_share + bm.x_share, p).reshape(mat.out_shapes[i])
    except ProtocolError as exc:
        ep.abort(str(exc))
        raise
    return PartyResult(logits, ep.transcript, time.perf_counter() - t0)


def run_inference(role: str, ep: Endpoint, model_or_input, cfg: SessionConfig, material):
    if role == "server":
        return run_server(ep, model_or_input, cfg, material)
    if role == "client":
        return run_client(ep, model_or_input, cfg, material)
    raise ValueError(f"unknown role {role!r}")


@dataclass
class LoopbackRun:
    logits: np.ndarray
    client: PartyResult
    server: PartyResult
    client_material: ClientMaterial
    server_material: ServerMaterial


def private_inference(model: Model, x, cfg: SessionConfig, materials=None) -> LoopbackRun:
    """Offline phase plus both parties over an in-process channel.

    ``x`` is a single residue tensor (no batch axis).
    """
    cm, sm = materials if materials is not None else offline_phase(model, cfg)
    a, b = loopback_pair()
    server_ep, client_ep = Endpoint(a), Endpoint(b)
    box: dict = {}

    def serve():
        try:
            box["server"] = run_server(server_ep, model, cfg, sm)
        except BaseException as exc:  # surfaced below
            box["server_error"] = exc
            server_ep.close()

    th = threading.Thread(target=serve, daemon=True)
    th.start()
    try:
        client = run_client(client_ep, x, cfg, cm)
    except BaseException:
        client_ep.close()
        th.join(timeout=10)
        if "server_error" in box:
            raise box["server_error"]
        raise
    th.join()
    if "server_error" in box:
        raise box["server_error"]
    return LoopbackRun(client.logits, client, box["server"], cm, sm)


# -- material files ----------------------------------------------------------------------
#
# A material file is an ``.npz`` archive.  Field vectors are stored as
# little-endian uint64 residues; labels as (count, 16) uint8 rows; garbled
# circuits as their wire serialization concatenated into one uint8 array.
# ``meta`` is a JSON document with the configuration hash and shapes.


def _meta(d: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(d).encode(), dtype=np.uint8)


def _u64(a) -> np.ndarray:
    return np.asarray(a, dtype="<u8")


def _labels_array(labels) -> np.ndarray:
    return np.frombuffer(_labels_to_bytes(labels), dtype=np.uint8).reshape(-1, LABEL_BYTES)


def _array_labels(arr: np.ndarray) -> list[int]:
    return _bytes_to_labels(arr.tobytes())


def client_material_bytes(mat: ClientMaterial) -> bytes:
    arrays = {}
    blocks_meta = []
    for i, b in enumerate(mat.blocks):
        arrays[f"b{i}_r"] = _u64(b.r_in)
        arrays[f"b{i}_x"] = _u64(b.x_share)
        relu = b.labels is not None
        if relu:
            arrays[f"b{i}_labels"] = _labels_array([L for row in b.labels for L in row])
            if b.r_v is not None:
                arrays[f"b{i}_rv"] = _u64(b.r_v)
                arrays[f"b{i}_ta"], arrays[f"b{i}_tb"], arrays[f"b{i}_tab"] = _u64(b.triples.a), _u64(b.triples.b), _u64(b.triples.ab)
        blocks_meta.append({"relu": relu, "labels_per_act": len(b.labels[0]) if relu and b.labels else 0, "beaver": b.r_v is not None})
    meta = {"role": "client", "hash": mat.config_hash.hex(), "input_shape": list(mat.input_shape), "out_shapes": [list(s) for s in mat.out_shapes], "blocks": blocks_meta}
    buf = io.BytesIO()
    np.savez(buf, meta=_meta(meta), **arrays)
    return buf.getvalue()


def client_material_from_bytes(data: bytes) -> ClientMaterial:
    with np.load(io.BytesIO(data)) as z:
        meta = json.loads(z["meta"].tobytes())
        if meta.get("role") != "client":
            raise ProtocolError("not a client material file")
        blocks = []
        for i, bmeta in enumerate(meta["blocks"]):
            b = ClientBlock(z[f"b{i}_r"].astype(np.int64), z[f"b{i}_x"].astype(np.int64))
            if bmeta["relu"]:
                flat = _array_labels(z[f"b{i}_labels"])
                per = bmeta["labels_per_act"]
                b.labels = [flat[j : j + per] for j in range(0, len(flat), per)]
                if bmeta["beaver"]:
                    b.r_v = z[f"b{i}_rv"].astype(np.int64)
                    b.triples = TripleArrays(z[f"b{i}_ta"].astype(np.int64), z[f"b{i}_tb"].astype(np.int64), z[f"b{i}_tab"].astype(np.int64))
            blocks.append(b)
    return ClientMaterial(bytes.fromhex(meta["hash"]), tuple(meta["input_shape"]), [tuple(s) for s in meta["out_shapes"]], blocks)


def server_material_bytes(mat: ServerMaterial) -> bytes:
    arrays = {}
    blocks_meta = []
    for i, b in enumerate(mat.blocks):
        arrays[f"b{i}_s"] = _u64(b.s)
        n = len(b.gcs)
        if n:
            arrays[f"b{i}_gc"] = np.frombuffer(b"".join(g.to_bytes() for g in b.gcs), dtype=np.uint8)
            arrays[f"b{i}_delta"] = _labels_array([e.delta for e in b.encodings])
            arrays[f"b{i}_in0"] = _labels_array([L for e in b.encodings for name in e.zero for L in e.zero[name]])
            arrays[f"b{i}_out0"] = _labels_array([L for d in b.decoders for L in d.zero])
            if b.triples is not None:
                arrays[f"b{i}_ta"], arrays[f"b{i}_tb"], arrays[f"b{i}_tab"] = _u64(b.triples.a), _u64(b.triples.b), _u64(b.triples.ab)
        bundles = {name: len(w) for name, w in b.encodings[0].zero.items()} if n else {}
        blocks_meta.append({"gcs": n, "bundles": bundles, "beaver": b.triples is not None, "s_shape": list(b.s.shape)})
    meta = {"role": "server", "hash": mat.config_hash.hex(), "blocks": blocks_meta}
    buf = io.BytesIO()
    np.savez(buf, meta=_meta(meta), **arrays)
    return buf.getvalue()


def server_material_from_bytes(data: bytes, circuit) -> ServerMaterial:
    with np.load(io.BytesIO(data)) as z:
        meta = json.loads(z["meta"].tobytes())
        if meta.get("role") != "server":
            raise ProtocolError("not a server material file")
        blocks = []
        for i, bmeta in enumerate(meta["blocks"]):
            b = ServerBlock(z[f"b{i}_s"].astype(np.int64).reshape(bmeta["s_shape"]))
            n = bmeta["gcs"]
            if n:
                raw = z[f"b{i}_gc"].tobytes()
                size = len(raw) // n
                b.gcs = [GarbledCircuit.from_bytes(raw[j * size : (j + 1) * size], circuit) for j in range(n)]
                deltas = _array_labels(z[f"b{i}_delta"])
                in0 = _array_labels(z[f"b{i}_in0"])
                out0 = _array_labels(z[f"b{i}_out0"])
                widths = bmeta["bundles"]
                per_in = sum(widths.values())
                per_out = len(circuit.outputs)
                for j in range(n):
                    row, off, zero = in0[j * per_in : (j + 1) * per_in], 0, {}
                    for name, w in widths.items():
                        zero[name] = tuple(row[off : off + w])
                        off += w
                    b.encodings.append(InputEncoding(zero, deltas[j]))
                    b.decoders.append(OutputDecoder(tuple(out0[j * per_out : (j + 1) * per_out]), deltas[j]))
                if bmeta["beaver"]:
                    b.triples = TripleArrays(z[f"b{i}_ta"].astype(np.int64), z[f"b{i}_tb"].astype(np.int64), z[f"b{i}_tab"].astype(np.int64))
            blocks.append(b)
    return ServerMaterial(bytes.fromhex(meta["hash"]), blocks)


def input_residues(model: Model, x_signed) -> np.ndarray:
    return encode_array(np.asarray(x_signed).reshape(model.input_shape), model.params)


__all__ = [
    "Block",
    "ClientMaterial",
    "ConfigMismatch",
    "Dealer",
    "Mode",
    "ServerMaterial",
    "SessionConfig",
    "offline_phase",
    "online_linear",
    "online_relu_client",
    "online_relu_server",
    "private_inference",
    "run_client",
    "run_inference",
    "run_server",
    "split_blocks",
]
