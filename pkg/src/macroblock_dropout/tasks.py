"""Synthetic sequence tasks used by the training harness.

``adding``: two input channels, a value in [0, 1) and a marker that is 1 at
exactly two steps (one in each half of the sequence). The target is the sum
of the two marked values.

``copy``: one-hot symbols from an alphabet of ``n_symbols``; the target at
step ``t`` is the symbol seen at ``t - delay`` and a blank class
(``n_symbols``) for the first ``delay`` steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import Rng


class TaskKind(enum.Enum):
    ADDING = "adding"
    COPY = "copy"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = TaskKind.ADDING
    seq_len: int = 50
    train_size: int = 2000
    val_size: int = 500
    seed: int = 0
    n_symbols: int = 8
    delay: int = 0
    target_noise: float = 0.0  # std of Gaussian noise added to adding-problem training targets

    def __post_init__(self):
        if self.seq_len < 2:
            raise ValueError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.train_size < 1 or self.val_size < 1:
            raise ValueError("train_size and val_size must be positive")
        if self.kind is TaskKind.COPY and not 0 <= self.delay < self.seq_len:
            raise ValueError(f"delay must lie in [0, seq_len), got {self.delay}")

    @property
    def input_size(self) -> int:
        return 2 if self.kind is TaskKind.ADDING else self.n_symbols

    @property
    def output_size(self) -> int:
        return 1 if self.kind is TaskKind.ADDING else self.n_symbols + 1


@dataclass
class Dataset:
    spec: TaskSpec
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray


def adding_target(x: np.ndarray) -> np.ndarray:
    """Sum of marked values for ``(B, T, 2)`` inputs, shape ``(B, 1)``."""
    return np.sum(x[..., 0] * x[..., 1], axis=-1, keepdims=True)


def _adding(rng: Rng, n: int, T: int):
    x = np.zeros((n, T, 2))
    x[..., 0] = rng.random((n, T))
    half = T // 2
    first = rng.integers(0, half, n)
    second = rng.integers(half, T, n)
    rows = np.arange(n)
    x[rows, first, 1] = 1.0
    x[rows, second, 1] = 1.0
    return x, adding_target(x)


def copy_targets(symbols: np.ndarray, n_symbols: int, delay: int) -> np.ndarray:
    """Class index per step: the symbol ``delay`` steps back, blank before that."""
    y = np.full(symbols.shape, n_symbols, dtype=np.int64)
    y[:, delay:] = symbols[:, : symbols.shape[1] - delay]
    return y


def _copy(rng: Rng, n: int, T: int, n_symbols: int, delay: int):
    symbols = rng.integers(0, n_symbols, (n, T))
    x = np.eye(n_symbols)[symbols]
    return x, copy_targets(symbols, n_symbols, delay)


def generate_task(spec: TaskSpec, rng: Rng | None = None) -> Dataset:
    """Deterministic dataset; ``rng`` defaults to ``Rng(spec.seed)``."""
    rng = rng if rng is not None else Rng(spec.seed)
    n = spec.train_size + spec.val_size
    if spec.kind is TaskKind.ADDING:
        x, y = _adding(rng, n, spec.seq_len)
    else:
        x, y = _copy(rng, n, spec.seq_len, spec.n_symbols, spec.delay)
    tx, ty = x[: spec.train_size], y[: spec.train_size]
    vx, vy = x[spec.train_size :], y[spec.train_size :]
    if spec.kind is TaskKind.ADDING and spec.target_noise > 0:
        ty = ty + rng.normal(ty.shape, spec.target_noise)
    return Dataset(spec, tx, ty, vx, vy)
