"""Uni-directional LSTM layers with dropout on the inputs of upper layers.

Gate order in the packed weight matrices is input, forget, cell, output::

    z = x W + h_prev U + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c = f * c_prev + i * g
    h = o * tanh(c)

The first layer sees the raw input; every layer from
``StackConfig.apply_dropout_from_layer`` on has its whole input sequence
passed through one dropout call (one mask per sequence) in training mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dropout import DropoutConfig, DropoutTrace, Mode, apply_trace, dropout_backward, dropout_forward
from .tensor import Rng, Tensor, sigmoid

GATES = ("input", "forget", "cell", "output")


@dataclass
class LstmParams:
    """Packed parameters of one layer: ``W`` (D_in, 4H), ``U`` (H, 4H), ``b`` (4H,).

    The same structure holds gradients.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.U.shape[0]
        if self.W.ndim != 2 or self.U.shape != (H, 4 * H) or self.W.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ValueError(
                f"inconsistent LSTM parameter shapes W={self.W.shape} U={self.U.shape} b={self.b.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    def gate(self, name: str):
        """``(W, U, b)`` slices for one gate."""
        H = self.hidden_size
        k = GATES.index(name)
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def zeros_like(self) -> "LstmParams":
        return LstmParams(np.zeros_like(self.W), np.zeros_like(self.U), np.zeros_like(self.b))

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.U.copy(), self.b.copy())


def init_lstm_params(rng: Rng, input_size: int, hidden_size: int) -> LstmParams:
    bound = 1.0 / np.sqrt(hidden_size)
    H = hidden_size
    W = rng.uniform(-bound, bound, (input_size, 4 * H))
    U = rng.uniform(-bound, bound, (H, 4 * H))
    b = rng.uniform(-bound, bound, (4 * H,))
    b[H : 2 * H] += 1.0  # forget gate
    return LstmParams(W, U, b)


@dataclass
class StackConfig:
    layer_sizes: list[int]
    dropout: DropoutConfig | None = None
    apply_dropout_from_layer: int = 1

    def __post_init__(self):
        if not self.layer_sizes:
            raise ValueError("an LSTM stack needs at least one layer")


def init_stack_params(rng: Rng, input_size: int, layer_sizes) -> list[LstmParams]:
    params = []
    for h in layer_sizes:
        params.append(init_lstm_params(rng, input_size, h))
        input_size = h
    return params


# -- single step ---------------------------------------------------------------


def _step(zx, h_prev, c_prev, U):
    H = h_prev.shape[1]
    z = zx + h_prev @ U
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (h_prev, c_prev, i, f, g, o, tc)


def _step_backward(dh, dc, gates_cache, U):
    h_prev, c_prev, i, f, g, o, tc = gates_cache
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=1,
    )
    return dz, dz @ U.T, dc * f


def lstm_cell_forward(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One time step on a ``(B, D_in)`` input. Returns ``(h_t, c_t, cache)``."""
    B = x_t.shape[0]
    H = params.hidden_size
    if x_t.ndim != 2 or x_t.shape[1] != params.input_size:
        raise ValueError(f"x_t shape {x_t.shape} does not match input size {params.input_size}")
    if h_prev.shape != (B, H) or c_prev.shape != (B, H):
        raise ValueError(f"state shapes {h_prev.shape}, {c_prev.shape} do not match ({B}, {H})")
    h, c, gates = _step(x_t @ params.W + params.b, h_prev, c_prev, params.U)
    return h, c, (x_t, gates)


def lstm_cell_backward(grad_h: Tensor, grad_c: Tensor, cache, params: LstmParams):
    """Returns ``(grad_x, grad_h_prev, grad_c_prev, grad_params)``."""
    x_t, gates = cache
    if grad_h.shape != gates[0].shape or grad_c.shape != gates[1].shape:
        raise ValueError(f"gradient shapes {grad_h.shape}, {grad_c.shape} do not match cached state")
    h_prev = gates[0]
    dz, dh_prev, dc_prev = _step_backward(grad_h, grad_c, gates, params.U)
    grads = LstmParams(x_t.T @ dz, h_prev.T @ dz, dz.sum(axis=0))
    return dz @ params.W.T, dh_prev, dc_prev, grads


# -- whole sequences -----------------------------------------------------------


def lstm_layer_forward(x: Tensor, params: LstmParams):
    """Run one layer over ``(B, T, D_in)`` from zero initial state."""
    B, T, D = x.shape
    if D != params.input_size:
        raise ValueError(f"layer input has {D} features, parameters expect {params.input_size}")
    H = params.hidden_size
    zx = x @ params.W + params.b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    steps = []
    for t in range(T):
        h, c, gates = _step(zx[:, t], h, c, params.U)
        hs[:, t] = h
        steps.append(gates)
    return hs, (x, steps)


def lstm_layer_backward(grad_hs: Tensor, cache, params: LstmParams):
    """BPTT through one layer; returns ``(grad_x, grad_params)``."""
    x, steps = cache
    B, T, H = grad_hs.shape
    dz_all = np.empty((B, T, 4 * H))
    dU = np.zeros_like(params.U)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        dz, dh, dc = _step_backward(grad_hs[:, t] + dh, dc, steps[t], params.U)
        dz_all[:, t] = dz
        dU += steps[t][0].T @ dz
    dW = np.einsum("btd,btg->dg", x, dz_all)
    db = dz_all.sum(axis=(0, 1))
    return dz_all @ params.W.T, LstmParams(dW, dU, db)


@dataclass
class StackCache:
    layers: list = field(default_factory=list)
    traces: list[DropoutTrace | None] = field(default_factory=list)
    # layer inputs before dropout, for inspection
    inputs: list[Tensor] = field(default_factory=list)


def stack_forward(
    x: Tensor,
    params: list[LstmParams],
    cfg: StackConfig,
    rng: Rng | None,
    mode: Mode = Mode.TRAIN,
    frozen_traces: list[DropoutTrace | None] | None = None,
):
    """Run the stack over ``(B, T, D)``; returns ``(outputs, cache)``.

    ``frozen_traces`` replays previously drawn masks and scales instead of
    drawing new ones (used for finite-difference checks).
    """
    if x.ndim != 3:
        raise ValueError(f"stack input must be (B, T, D), got shape {x.shape}")
    if len(params) != len(cfg.layer_sizes):
        raise ValueError(f"{len(params)} parameter sets for {len(cfg.layer_sizes)} layers")
    cache = StackCache()
    h = x
    for layer, p in enumerate(params):
        cache.inputs.append(h)
        trace = None
        if frozen_traces is not None:
            trace = frozen_traces[layer]
            if trace is not None:
                h = apply_trace(h, trace)
        elif cfg.dropout is not None and mode is Mode.TRAIN and layer >= cfg.apply_dropout_from_layer:
            h, trace = dropout_forward(h, cfg.dropout.with_mode(Mode.TRAIN), rng)
        cache.traces.append(trace)
        h, layer_cache = lstm_layer_forward(h, p)
        cache.layers.append(layer_cache)
    return h, cache


def stack_backward(grad_out: Tensor, cache: StackCache, params: list[LstmParams]):
    """Returns ``(grad_x, [grad_params per layer])``."""
    grads: list[LstmParams] = [None] * len(params)  # type: ignore[list-item]
    g = grad_out
    for layer in reversed(range(len(params))):
        g, grads[layer] = lstm_layer_backward(g, cache.layers[layer], params[layer])
        trace = cache.traces[layer]
        if trace is not None:
            g = dropout_backward(g, trace)
    return g, grads


# -- checkpoints ---------------------------------------------------------------


def params_to_arrays(params: list[LstmParams], prefix: str = "lstm") -> dict[str, np.ndarray]:
    return {f"{prefix}{i}.{k}": v for i, p in enumerate(params) for k, v in p.arrays().items()}


def arrays_to_params(arrays: dict[str, np.ndarray], prefix: str = "lstm") -> list[LstmParams]:
    params = []
    i = 0
    while f"{prefix}{i}.W" in arrays:
        params.append(LstmParams(arrays[f"{prefix}{i}.W"], arrays[f"{prefix}{i}.U"], arrays[f"{prefix}{i}.b"]))
        i += 1
    return params


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Uncompressed ``.npz``: one float64 array per name (``lstm0.W``, ``readout.W`` ...)."""
    with Path(path).open("wb") as fh:
        np.savez(fh, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
