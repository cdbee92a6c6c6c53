"""Model manifests, seeded random models and a synthetic classification task.

On-disk model layout (one directory)::

    manifest.json
    <name>.bin          raw little-endian uint64 field residues, C order

Manifest schema (``format: "stochrelu-model/1"``)::

    {"format": ..., "p": int, "frac_bits": int, "input_shape": [..],
     "layers": [
        {"type": "conv2d", "weight": "l0_w.bin", "weight_shape": [o,i,kh,kw],
         "bias": "l0_b.bin" | null, "stride": int, "pad": int, "shift": int},
        {"type": "fc", "weight": ..., "weight_shape": [o,i], "bias": ..., "shift": int},
        {"type": "relu"}, {"type": "avgpool", "size": int}, {"type": "flatten"}]}

Weights must decode to magnitudes below 2^15.  Biases live at the product
scale and are not capped.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .field import QUANT_BITS, FieldParams, FixedPointScale, decode_array, encode_array, quantize_array
from .nn import AvgPool, Conv2D, Flatten, FullyConnected, Model, ReLU, ShapeError, output_shape

FORMAT = "stochrelu-model/1"


class ModelFormatError(ValueError):
    pass


def _check_cap(name: str, w: np.ndarray, params: FieldParams) -> None:
    if w.size and np.abs(decode_array(w, params)).max() >= 2**QUANT_BITS:
        raise ModelFormatError(f"{name}: weight magnitude reaches the 2^{QUANT_BITS} cap")


def validate(model: Model) -> None:
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Conv2D, FullyConnected)):
            _check_cap(f"layer {i}", layer.weight, model.params)
            if layer.bias is not None and layer.bias.shape != (layer.weight.shape[0],):
                raise ModelFormatError(f"layer {i}: bias shape {layer.bias.shape} mismatches weights")
    model.shapes()


def _write(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<u8").tobytes())


def _read(path: Path, shape) -> np.ndarray:
    if not path.exists():
        raise ModelFormatError(f"missing tensor file {path.name}")
    data = np.frombuffer(path.read_bytes(), dtype="<u8")
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"{path.name} holds {data.size} elements, manifest says {list(shape)}")
    return data.astype(np.int64).reshape(shape)


def save_model(model: Model, path) -> None:
    validate(model)
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Conv2D, FullyConnected)):
            entry = {"type": "conv2d" if isinstance(layer, Conv2D) else "fc"}
            entry["weight"] = f"l{i}_w.bin"
            entry["weight_shape"] = list(layer.weight.shape)
            _write(d / entry["weight"], layer.weight)
            entry["bias"] = None
            if layer.bias is not None:
                entry["bias"] = f"l{i}_b.bin"
                _write(d / entry["bias"], layer.bias)
            if isinstance(layer, Conv2D):
                entry.update(stride=layer.stride, pad=layer.pad)
            entry["shift"] = layer.shift
        elif isinstance(layer, ReLU):
            entry = {"type": "relu"}
        elif isinstance(layer, AvgPool):
            entry = {"type": "avgpool", "size": layer.size}
        else:
            entry = {"type": "flatten"}
        layers.append(entry)
    manifest = {
        "format": FORMAT,
        "p": model.params.p,
        "frac_bits": model.frac_bits,
        "input_shape": list(model.input_shape),
        "layers": layers,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_model(path) -> Model:
    d = Path(path)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise ModelFormatError(f"no manifest.json in {d}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed manifest: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ModelFormatError(f"unsupported format {manifest.get('format')!r}")
    try:
        params = FieldParams(int(manifest["p"]))
        layers = []
        for entry in manifest["layers"]:
            kind = entry["type"]
            if kind in ("conv2d", "fc"):
                w = _read(d / entry["weight"], entry["weight_shape"])
                b = _read(d / entry["bias"], [entry["weight_shape"][0]]) if entry.get("bias") else None
                if kind == "conv2d":
                    layers.append(Conv2D(w, b, int(entry.get("stride", 1)), int(entry.get("pad", 0)), int(entry.get("shift", 0))))
                else:
                    layers.append(FullyConnected(w, b, int(entry.get("shift", 0))))
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "avgpool":
                layers.append(AvgPool(int(entry["size"])))
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise ModelFormatError(f"unknown layer type {kind!r}")
        model = Model(layers, tuple(manifest["input_shape"]), params, int(manifest.get("frac_bits", 0)))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed manifest: {exc!r}") from exc
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from exc
    validate(model)
    return model


# -- seeded random models ------------------------------------------------------

_TOKEN = re.compile(
    r"^(?:in:(?P<in>\d+(?:x\d+)*)"
    r"|conv:(?P<co>\d+)x(?P<ck>\d+)(?:/s(?P<cs>\d+))?(?:/p(?P<cp>\d+))?"
    r"|fc:(?P<fc>\d+)"
    r"|pool:(?P<pool>\d+)"
    r"|(?P<relu>relu)|(?P<flatten>flatten))$"
)


def parse_layer_spec(spec: str) -> tuple[tuple[int, ...], list[tuple]]:
    """Parse e.g. ``"in:1x8x8,conv:4x3/p1,relu,pool:2,flatten,fc:10"``."""
    tokens = [t.strip() for t in spec.split(",") if t.strip()]
    if not tokens:
        raise ShapeError("empty layer spec")
    items = []
    input_shape = None
    for tok in tokens:
        m = _TOKEN.match(tok)
        if not m:
            raise ShapeError(f"cannot parse layer token {tok!r}")
        if m["in"]:
            if input_shape is not None or items:
                raise ShapeError("'in:' must come first and only once")
            input_shape = tuple(int(v) for v in m["in"].split("x"))
        elif m["co"]:
            items.append(("conv", int(m["co"]), int(m["ck"]), int(m["cs"] or 1), int(m["cp"] or 0)))
        elif m["fc"]:
            items.append(("fc", int(m["fc"])))
        elif m["pool"]:
            items.append(("pool", int(m["pool"])))
        elif m["relu"]:
            items.append(("relu",))
        else:
            items.append(("flatten",))
    if input_shape is None:
        raise ShapeError("layer spec needs a leading 'in:<shape>'")
    return input_shape, items


def gen_model(spec: str, seed: int, params: FieldParams | None = None, frac_bits: int = 0, weight_bound: int = 8) -> Model:
    """Seeded random model.

    Weights are uniform integers in ``[-weight_bound, weight_bound]``; when
    ``frac_bits > 0`` they are scaled as fixed-point reals in ``[-1, 1]`` and
    every multiplying layer rescales by ``frac_bits``.
    """
    params = params or FieldParams()
    input_shape, items = parse_layer_spec(spec)
    rng = np.random.default_rng(seed)
    layers = []
    shape = input_shape
    for i, item in enumerate(items):
        kind = item[0]
        if kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"conv at position {i} needs a CxHxW input, got {shape}")
            _, out, k, stride, pad = item
            w_shape = (out, shape[0], k, k)
            w, b = _random_weights(rng, w_shape, params, frac_bits, weight_bound)
            layer = Conv2D(w, b, stride, pad, frac_bits)
        elif kind == "fc":
            if len(shape) != 1:
                raise ShapeError(f"fc at position {i} needs a flat input, got {shape}; add 'flatten'")
            w, b = _random_weights(rng, (item[1], shape[0]), params, frac_bits, weight_bound)
            layer = FullyConnected(w, b, frac_bits)
        elif kind == "pool":
            layer = AvgPool(item[1])
        elif kind == "relu":
            layer = ReLU()
        else:
            layer = Flatten()
        shape = output_shape(layer, shape, i)
        layers.append(layer)
    return Model(layers, input_shape, params, frac_bits)


def _random_weights(rng, shape, params, frac_bits, bound):
    if frac_bits:
        scale = FixedPointScale(frac_bits)
        w = quantize_array(rng.uniform(-1, 1, size=shape), scale, params)
        b = encode_array(np.round(rng.uniform(-1, 1, size=shape[0]) * 2.0 ** (2 * frac_bits)).astype(np.int64), params)
    else:
        w = encode_array(rng.integers(-bound, bound + 1, size=shape), params)
        b = encode_array(rng.integers(-bound, bound + 1, size=shape[0]), params)
    return w, b


def random_inputs(model: Model, n: int, seed: int, bound: int = 8) -> np.ndarray:
    """Signed integer inputs; ``bound`` is in quantized units."""
    rng = np.random.default_rng(seed)
    return rng.integers(-bound, bound + 1, size=(n, *model.input_shape))


# -- synthetic classification task -----------------------------------------------


def make_task(seed: int = 0, n: int = 1000, hidden: int = 64, frac_bits: int = 8, params: FieldParams | None = None):
    """Three concentric rings in 2-D, lifted to 4 features, and a one-hidden-layer
    ReLU classifier fitted by ridge regression on random ReLU features.

    The rings are not linearly separable, so both saturating a ReLU at zero and
    letting it pass negatives hurt accuracy.  Returns ``(model, X, y)`` with ``X``
    as signed integers at ``frac_bits`` fractional bits.
    """
    params = params or FieldParams()
    rng = np.random.default_rng(seed)
    n_train = 4 * n
    labels = rng.integers(0, 3, size=n + n_train)
    radius = 0.25 + 0.25 * labels + rng.normal(0, 0.04, size=labels.size)
    theta = rng.uniform(0, 2 * np.pi, size=labels.size)
    pts = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    feats = np.concatenate([pts, pts @ np.array([[0.6, -0.8], [0.8, 0.6]])], axis=1)
    feats = np.clip(feats, -0.999, 0.999)

    scale = FixedPointScale(frac_bits)
    w1 = rng.uniform(-1, 1, size=(hidden, 4))
    b1 = rng.uniform(-0.6, 0.6, size=hidden)
    w1q = np.round(w1 * 2**frac_bits) / 2**frac_bits
    b1q = np.round(b1 * 2 ** (2 * frac_bits)) / 2 ** (2 * frac_bits)
    xq = np.round(feats * 2**frac_bits) / 2**frac_bits
    h = np.maximum(xq @ w1q.T + b1q, 0)
    onehot = np.eye(3)[labels]
    tr = slice(n, None)
    hh = np.concatenate([h[tr], np.ones((n_train, 1))], axis=1)
    sol = np.linalg.solve(hh.T @ hh + 1e-3 * np.eye(hidden + 1), hh.T @ onehot[tr])
    w2, b2 = sol[:hidden].T, sol[hidden]
    w2 = w2 / max(1.0, np.abs(w2).max() / 0.999)  # stay inside the 15-bit cap; argmax unaffected
    b2 = b2 / max(1.0, np.abs(sol[:hidden]).max() / 0.999)

    layers = [
        FullyConnected(quantize_array(w1, scale, params), encode_array(np.round(b1 * 2 ** (2 * frac_bits)).astype(np.int64), params), frac_bits),
        ReLU(),
        FullyConnected(quantize_array(w2, scale, params), encode_array(np.round(b2 * 2 ** (2 * frac_bits)).astype(np.int64), params), frac_bits),
    ]
    model = Model(layers, (4,), params, frac_bits)
    x_test = np.round(feats[:n] * 2**frac_bits).astype(np.int64)
    return model, x_test, labels[:n]


def save_dataset(x: np.ndarray, y: np.ndarray, path) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "X.npy", np.asarray(x, dtype=np.int64))
    np.save(d / "y.npy", np.asarray(y, dtype=np.int64))


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    d = Path(path)
    try:
        return np.load(d / "X.npy"), np.load(d / "y.npy")
    except FileNotFoundError as exc:
        raise ModelFormatError(f"dataset missing {exc.filename}") from exc
