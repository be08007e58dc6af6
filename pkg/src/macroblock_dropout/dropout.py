"""Inverted dropout and macro-block dropout.

Macro-block dropout draws one Bernoulli decision per partition cell of a
``(time, feature)`` input, blows the small decision grid up to the input size
with a nearest-neighbour (floor) index map, masks the input and rescales it so
that the absolute sum of the input is preserved::

    scale = | sum(x) / sum(x * mask) |      (0 when the denominator is 0)

Inputs of rank 3 ``(batch, time, feature)`` get an independent mask and scale
per batch element. The scale is treated as a constant in the backward pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import Rng, Tensor, bernoulli, check_same_shape


class Mode(enum.Enum):
    TRAIN = "train"
    INFERENCE = "inference"


class Scaling(enum.Enum):
    DYNAMIC_SUM = "dynamic"
    FIXED_INVERSE = "fixed"


class Method(enum.Enum):
    MACRO = "macro"
    BASELINE = "baseline"


@dataclass(frozen=True)
class PartitionDims:
    """Number of macro-blocks along the time and feature axes."""

    p_time: int = 1
    p_feature: int = 4

    def __post_init__(self):
        if int(self.p_time) < 1 or int(self.p_feature) < 1:
            raise ValueError(f"partition dims must be >= 1, got ({self.p_time}, {self.p_feature})")

    @property
    def one_dimensional(self) -> bool:
        return self.p_time == 1

    @property
    def n_blocks(self) -> int:
        return self.p_time * self.p_feature

    @classmethod
    def parse(cls, text: str) -> "PartitionDims":
        """Parse ``"TxF"`` (e.g. ``"1x4"``)."""
        try:
            t, f = text.lower().split("x")
            return cls(int(t), int(f))
        except ValueError as exc:
            raise ValueError(f"partition must look like TxF (e.g. 1x4), got {text!r}") from exc

    def __str__(self) -> str:
        return f"{self.p_time}x{self.p_feature}"


@dataclass(frozen=True)
class DropoutConfig:
    q: float = 0.2
    partition: PartitionDims = field(default_factory=PartitionDims)
    mode: Mode = Mode.TRAIN
    scaling: Scaling = Scaling.DYNAMIC_SUM
    seed: int = 0
    method: Method = Method.MACRO

    def __post_init__(self):
        check_rate(self.q)

    def with_mode(self, mode: Mode) -> "DropoutConfig":
        return replace(self, mode=mode)

    def describe(self) -> str:
        if self.method is Method.BASELINE:
            return f"baseline q={self.q:g}"
        suffix = "" if self.scaling is Scaling.DYNAMIC_SUM else " fixed-scale"
        return f"macro ({self.partition.p_time},{self.partition.p_feature}) q={self.q:g}{suffix}"


@dataclass
class DropoutTrace:
    """What a forward pass drew, kept for the backward pass.

    ``scale`` broadcasts against ``mask``: a 0-d array for rank-2 inputs and
    shape ``(B, 1, 1)`` for rank-3 inputs. ``block_draws`` is the small
    decision grid before resizing (equal to ``mask`` for baseline dropout).
    """

    mask: Tensor
    scale: np.ndarray | None
    block_draws: Tensor


def check_rate(q: float) -> None:
    if not 0.0 <= q < 1.0:
        raise ValueError(f"dropout rate q must lie in [0, 1), got {q}")


def _identity_trace(x: Tensor) -> DropoutTrace:
    return DropoutTrace(mask=np.ones_like(x), scale=np.float64(1.0), block_draws=np.ones_like(x))


def baseline_dropout_forward(x: Tensor, q: float, rng: Rng, mode: Mode = Mode.TRAIN):
    """Inverted dropout: per-unit Bernoulli(1 - q) mask, kept units scaled by 1/(1 - q)."""
    check_rate(q)
    if mode is Mode.INFERENCE:
        return x, _identity_trace(x)
    mask = bernoulli(rng, x.shape, 1.0 - q)
    scale = np.float64(1.0 / (1.0 - q))
    return (x * mask) * scale, DropoutTrace(mask=mask, scale=scale, block_draws=mask)


def block_index_map(n: int, p: int) -> np.ndarray:
    """Source block for each of ``n`` target positions: ``floor(i * p / n)``."""
    return (np.arange(n) * p) // n


def resize_nearest(block_draws: np.ndarray, target_shape) -> np.ndarray:
    """Nearest-neighbour resize over the last two axes."""
    T, D = target_shape
    p_time, p_feature = block_draws.shape[-2:]
    rows = block_index_map(T, p_time)
    cols = block_index_map(D, p_feature)
    return block_draws[..., rows[:, None], cols[None, :]]


def make_block_masks(rng: Rng, partition: PartitionDims, q: float, target_shape, count: int):
    """Draw ``count`` independent block masks at once.

    Returns ``(masks, block_draws)`` with shapes ``(count, T, D)`` and
    ``(count, p_time, p_feature)``. Consumes the stream exactly as ``count``
    successive :func:`make_block_mask` calls would.
    """
    T, D = (int(s) for s in target_shape)
    if T < partition.p_time or D < partition.p_feature:
        raise ValueError(
            f"target shape {(T, D)} is smaller than partition "
            f"({partition.p_time}, {partition.p_feature})"
        )
    draws = bernoulli(rng, (count, partition.p_time, partition.p_feature), 1.0 - q)
    return resize_nearest(draws, (T, D)), draws


def make_block_mask(rng: Rng, partition: PartitionDims, q: float, target_shape) -> DropoutTrace:
    """One block mask for a ``(T, D)`` input. The returned trace has no scale yet."""
    masks, draws = make_block_masks(rng, partition, q, target_shape, 1)
    return DropoutTrace(mask=masks[0], scale=None, block_draws=draws[0])


def _safe_abs_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return np.abs(out)


def dynamic_scale(x: Tensor, mask: Tensor) -> float:
    """``|sum(x) / sum(x * mask)|`` with 0 returned for a zero denominator."""
    check_same_shape(x, mask, "input and mask")
    return float(_safe_abs_ratio(np.sum(x), np.sum(x * mask)))


def macro_block_dropout_forward(x: Tensor, cfg: DropoutConfig, rng: Rng):
    """Macro-block dropout on a ``(T, D)`` or ``(B, T, D)`` input.

    Returns ``(x_out, trace)``. In inference mode the input object itself is
    returned untouched.
    """
    check_rate(cfg.q)
    if x.ndim not in (2, 3):
        raise ValueError(f"macro-block dropout expects rank 2 or 3 input, got shape {x.shape}")
    if cfg.mode is Mode.INFERENCE:
        return x, _identity_trace(x)

    batched = x.ndim == 3
    xb = x if batched else x[None]
    masks, draws = make_block_masks(rng, cfg.partition, cfg.q, xb.shape[1:], xb.shape[0])
    x_masked = xb * masks
    if cfg.scaling is Scaling.DYNAMIC_SUM:
        scale = _safe_abs_ratio(xb.sum(axis=(1, 2)), x_masked.sum(axis=(1, 2)))
    else:
        scale = np.full(xb.shape[0], 1.0 / (1.0 - cfg.q))
    scale = scale[:, None, None]
    out = x_masked * scale
    if batched:
        return out, DropoutTrace(mask=masks, scale=scale, block_draws=draws)
    return out[0], DropoutTrace(mask=masks[0], scale=scale[0, 0, 0], block_draws=draws[0])


def macro_block_dropout_backward(upstream_grad: Tensor, trace: DropoutTrace) -> Tensor:
    """Gradient of ``x -> scale * (x * mask)`` with mask and scale held fixed."""
    check_same_shape(upstream_grad, trace.mask, "upstream gradient and mask")
    return (upstream_grad * trace.mask) * trace.scale


def dropout_forward(x: Tensor, cfg: DropoutConfig, rng: Rng):
    """Dispatch on ``cfg.method``."""
    if cfg.method is Method.BASELINE:
        return baseline_dropout_forward(x, cfg.q, rng, cfg.mode)
    return macro_block_dropout_forward(x, cfg, rng)


# both variants share the same frozen-mask Jacobian
dropout_backward = macro_block_dropout_backward


def apply_trace(x: Tensor, trace: DropoutTrace) -> Tensor:
    """Re-apply a recorded mask and scale to a new input (frozen forward)."""
    check_same_shape(x, trace.mask, "input and mask")
    return (x * trace.mask) * trace.scale
