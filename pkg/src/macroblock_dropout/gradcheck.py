"""Central finite-difference checks for the hand-written backward passes.

Every check contracts the output with a fixed random tensor ``R`` so the
scalar objective is ``sum(R * f(x))``; the analytic gradient is then the
backward pass fed with ``R``. Dropout masks and scales are frozen from one
training-mode forward pass and replayed for every perturbed evaluation.

The reported error for an array is ``max|analytic - numeric| / max(|numeric|)``
(max-norm relative error), and a check reports the worst array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dropout import DropoutConfig, Mode, PartitionDims, apply_trace, dropout_backward, macro_block_dropout_forward
from .rnn import (
    StackConfig,
    init_lstm_params,
    init_stack_params,
    lstm_cell_backward,
    lstm_cell_forward,
    stack_backward,
    stack_forward,
)
from .tensor import Rng

STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<24} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e}"


def numeric_gradient(f, arr: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        fp = f()
        arr[idx] = orig - step
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _corrupt(grad: np.ndarray) -> np.ndarray:
    bad = grad.copy()
    bad.flat[0] += 1.0
    return bad


def check_dropout_backward(seed: int = 0, shape=(5, 8), corrupt: bool = False) -> CheckResult:
    rng = Rng(seed)
    x = rng.normal(shape)
    cfg = DropoutConfig(q=0.2, partition=PartitionDims(1, 4), seed=seed)
    _, trace = macro_block_dropout_forward(x, cfg, rng)
    R = rng.normal(shape)
    analytic = dropout_backward(R, trace)
    if corrupt:
        analytic = _corrupt(analytic)
    numeric = numeric_gradient(lambda: float(np.sum(R * apply_trace(x, trace))), x)
    return CheckResult("dropout_backward", rel_error(analytic, numeric))


def check_lstm_cell(seed: int = 0, batch: int = 2, size: int = 3, corrupt: bool = False) -> CheckResult:
    rng = Rng(seed)
    params = init_lstm_params(rng, size, size)
    x = rng.normal((batch, size))
    h0 = rng.normal((batch, size), 0.5)
    c0 = rng.normal((batch, size), 0.5)
    Rh = rng.normal((batch, size))
    Rc = rng.normal((batch, size))

    def f():
        h, c, _ = lstm_cell_forward(x, h0, c0, params)
        return float(np.sum(Rh * h) + np.sum(Rc * c))

    _, _, cache = lstm_cell_forward(x, h0, c0, params)
    gx, gh, gc, gp = lstm_cell_backward(Rh, Rc, cache, params)
    pairs = [(gx, x), (gh, h0), (gc, c0)] + [(gp.arrays()[k], v) for k, v in params.arrays().items()]
    if corrupt:
        pairs[0] = (_corrupt(pairs[0][0]), pairs[0][1])
    worst = max(rel_error(a, numeric_gradient(f, v)) for a, v in pairs)
    return CheckResult("lstm_cell", worst)


def check_lstm_stack(
    seed: int = 0,
    batch: int = 2,
    steps: int = 4,
    size: int = 3,
    partition: PartitionDims = PartitionDims(2, 3),
    corrupt: bool = False,
) -> CheckResult:
    """Two-layer stack, dropout on the second layer's input, full BPTT."""
    rng = Rng(seed)
    cfg = StackConfig([size, size], DropoutConfig(q=0.2, partition=partition, seed=seed))
    params = init_stack_params(rng, size, cfg.layer_sizes)
    x = rng.normal((batch, steps, size))
    out, cache = stack_forward(x, params, cfg, rng, Mode.TRAIN)
    R = rng.normal(out.shape)
    gx, grads = stack_backward(R, cache, params)
    traces = cache.traces

    def f():
        return float(np.sum(R * stack_forward(x, params, cfg, None, frozen_traces=traces)[0]))

    pairs = [(gx, x)]
    for p, g in zip(params, grads):
        pairs += [(g.arrays()[k], v) for k, v in p.arrays().items()]
    if corrupt:
        pairs[-1] = (_corrupt(pairs[-1][0]), pairs[-1][1])
    worst = max(rel_error(a, numeric_gradient(f, v)) for a, v in pairs)
    return CheckResult("lstm_stack_bptt", worst)


def run_all(seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    return [
        check_dropout_backward(seed, corrupt=corrupt),
        check_lstm_cell(seed, corrupt=corrupt),
        check_lstm_stack(seed, corrupt=corrupt),
    ]
