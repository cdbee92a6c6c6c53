"""Integer neural-network inference over F_p.

Tensors are int64 numpy arrays of canonical residues with a leading batch
axis, ``(N, C, H, W)`` for images and ``(N, F)`` after flattening.  Linear
layers are exact modular arithmetic; a layer with ``shift > 0`` is followed
by a signed rescale ``round(v / 2^shift)`` (half away from zero).

``AvgPool`` emits window *sums*; the ``1/size^2`` factor is left to the
following layer's weights, which keeps the layer exactly linear over F_p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .circuit import Mode
from .faultmodel import stoch_sign
from .field import DEFAULT_PARAMS, FieldParams, decode_array, encode_array, matmul_mod, rescale_signed


class ShapeError(ValueError):
    pass


@dataclass
class Conv2D:
    weight: np.ndarray  # (out, in, kh, kw) residues
    bias: np.ndarray | None = None  # (out,) residues
    stride: int = 1
    pad: int = 0
    shift: int = 0


@dataclass
class FullyConnected:
    weight: np.ndarray  # (out, in) residues
    bias: np.ndarray | None = None
    shift: int = 0


@dataclass
class ReLU:
    pass


@dataclass
class AvgPool:
    size: int = 2


@dataclass
class Flatten:
    pass


Layer = Union[Conv2D, FullyConnected, ReLU, AvgPool, Flatten]
LINEAR_TYPES = (Conv2D, FullyConnected, AvgPool, Flatten)


@dataclass
class Model:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    params: FieldParams = DEFAULT_PARAMS
    frac_bits: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.shapes()  # validates

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample output shape after every layer."""
        shape = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            shape = output_shape(layer, shape, i)
            out.append(shape)
        return out

    @property
    def relu_count(self) -> int:
        return sum(int(np.prod(s)) for layer, s in zip(self.layers, self.shapes()) if isinstance(layer, ReLU))

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes()[-1] if self.layers else self.input_shape


def output_shape(layer: Layer, shape: tuple[int, ...], index: int = 0) -> tuple[int, ...]:
    where = f"layer {index} ({type(layer).__name__})"
    if isinstance(layer, Conv2D):
        if len(shape) != 3:
            raise ShapeError(f"{where} needs a CxHxW input, got {shape}")
        o, i, kh, kw = layer.weight.shape
        if i != shape[0]:
            raise ShapeError(f"{where} expects {i} input channels, got {shape[0]}")
        h = (shape[1] + 2 * layer.pad - kh) // layer.stride + 1
        w = (shape[2] + 2 * layer.pad - kw) // layer.stride + 1
        if h < 1 or w < 1:
            raise ShapeError(f"{where} kernel larger than padded input {shape}")
        return (o, h, w)
    if isinstance(layer, FullyConnected):
        if len(shape) != 1:
            raise ShapeError(f"{where} needs a flat input, got {shape}")
        o, i = layer.weight.shape
        if i != shape[0]:
            raise ShapeError(f"{where} expects {i} features, got {shape[0]}")
        return (o,)
    if isinstance(layer, AvgPool):
        if len(shape) != 3 or shape[1] < layer.size or shape[2] < layer.size:
            raise ShapeError(f"{where} cannot pool {shape} with window {layer.size}")
        return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, ReLU):
        return shape
    raise ShapeError(f"{where}: unsupported layer")


def _batched(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.shape == model.input_shape:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    return x


def apply_linear(layer: Layer, x: np.ndarray, params: FieldParams, with_bias: bool = True) -> np.ndarray:
    """One linear layer on a batch of residues (no rescale)."""
    p = params.p
    if isinstance(layer, FullyConnected):
        y = matmul_mod(x, layer.weight.T, params)
        if with_bias and layer.bias is not None:
            y = np.mod(y + layer.bias, p)
        return y
    if isinstance(layer, Conv2D):
        o, c, kh, kw = layer.weight.shape
        if layer.pad:
            x = np.pad(x, ((0, 0), (0, 0), (layer.pad, layer.pad), (layer.pad, layer.pad)))
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, :: layer.stride, :: layer.stride]
        n, _, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
        y = matmul_mod(cols, layer.weight.reshape(o, -1).T, params)
        y = y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
        if with_bias and layer.bias is not None:
            y = np.mod(y + layer.bias[None, :, None, None], p)
        return np.ascontiguousarray(y)
    if isinstance(layer, AvgPool):
        s = layer.size
        n, c, h, w = x.shape
        h2, w2 = h // s, w // s
        blocks = x[:, :, : h2 * s, : w2 * s].reshape(n, c, h2, s, w2, s)
        return np.mod(blocks.sum(axis=(3, 5)), p)
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    raise TypeError(f"{type(layer).__name__} is not linear")


def rescale(x: np.ndarray, shift: int, params: FieldParams) -> np.ndarray:
    if not shift:
        return x
    return np.mod(rescale_signed(decode_array(x, params), shift), params.p)


def relu_exact(x: np.ndarray, params: FieldParams) -> np.ndarray:
    return np.where(x < params.half, x, 0)


def infer_plain(model: Model, x) -> np.ndarray:
    """Exact integer inference; returns residues of the logits."""
    params = model.params
    y = _batched(model, x)
    for layer in model.layers:
        if isinstance(layer, ReLU):
            y = relu_exact(y, params)
        else:
            y = apply_linear(layer, y, params)
            y = rescale(y, getattr(layer, "shift", 0), params)
    return y


@dataclass(frozen=True)
class StochasticReluConfig:
    k: int = 0
    mode: Mode = Mode.POS_ZERO
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.k < 0:
            raise ValueError("k must be non-negative")

    def check(self, params: FieldParams) -> None:
        if not 0 <= self.k < params.m:
            raise ValueError(f"k={self.k} outside [0, {params.m})")


def stochastic_relu_sim(x, cfg: StochasticReluConfig, rng: np.random.Generator | None = None, params: FieldParams = DEFAULT_PARAMS, mask=None):
    """Cleartext model of one stochastic ReLU.

    The mask ``t`` is drawn from ``rng`` unless given.  Shares are formed as
    ``server = x + t`` and ``client = -t`` and compared after dropping ``k``
    low bits; the result is ``x`` or ``0``.  Scalars or arrays.
    """
    cfg.check(params)
    p = params.p
    xv = np.asarray(x, dtype=np.int64)
    if mask is None:
        mask = rng.integers(0, p, size=xv.shape, dtype=np.int64)
    t = np.asarray(mask, dtype=np.int64)
    sign = stoch_sign(np.mod(xv + t, p), t, cfg.k, cfg.mode)
    out = np.where(np.asarray(sign) == 1, xv, 0)
    return int(out) if out.ndim == 0 else out


def relu_masks(model: Model, n: int, seed: int, offset: int = 0) -> list[np.ndarray]:
    """Default mask trace: one uniform mask per activation.

    Sample ``i`` and ReLU layer ``j`` draw from ``SeedSequence([seed, offset+i, j])``
    so masks do not depend on batch composition or scheduling.
    """
    p = model.params.p
    shapes = [s for layer, s in zip(model.layers, model.shapes()) if isinstance(layer, ReLU)]
    out = [np.empty((n, *s), dtype=np.int64) for s in shapes]
    for i in range(n):
        for j, s in enumerate(shapes):
            rng = np.random.default_rng(np.random.SeedSequence([seed, offset + i, j]))
            out[j][i] = rng.integers(0, p, size=s, dtype=np.int64)
    return out


@dataclass
class ReluRecord:
    """Pre-activations and outputs of one ReLU layer during simulation."""

    pre: np.ndarray
    out: np.ndarray
    faults: np.ndarray = field(repr=False, default=None)


def infer_stochastic(model: Model, x, cfg: StochasticReluConfig, masks: list[np.ndarray] | None = None, record: list | None = None, offset: int = 0) -> np.ndarray:
    """``infer_plain`` with every ReLU replaced by the stochastic ReLU.

    ``masks`` supplies one mask array per ReLU layer (batch-shaped); when
    omitted they come from ``relu_masks(model, N, cfg.seed, offset)``.
    """
    params = model.params
    cfg.check(params)
    y = _batched(model, x)
    if masks is None:
        masks = relu_masks(model, y.shape[0], cfg.seed, offset)
    j = 0
    for layer in model.layers:
        if isinstance(layer, ReLU):
            out = stochastic_relu_sim(y, cfg, params=params, mask=masks[j])
            if record is not None:
                exact = relu_exact(y, params)
                record.append(ReluRecord(y, out, out != exact))
            y = out
            j += 1
        else:
            y = apply_linear(layer, y, params)
            y = rescale(y, getattr(layer, "shift", 0), params)
    return y


def logits_signed(y: np.ndarray, params: FieldParams) -> np.ndarray:
    return decode_array(y, params)


def predict(model: Model, x, cfg: StochasticReluConfig | None = None) -> np.ndarray:
    y = infer_plain(model, x) if cfg is None else infer_stochastic(model, x, cfg)
    return logits_signed(y, model.params).reshape(y.shape[0], -1).argmax(axis=1)


def encode_input(model: Model, x_signed) -> np.ndarray:
    return encode_array(x_signed, model.params)
