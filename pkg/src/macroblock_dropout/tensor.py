"""Dense float64 tensors and a seeded random stream.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 with rank at most
3 (batch, time, feature). The helpers below add the shape checks and error
messages the rest of the package relies on; everything else is ordinary numpy.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

MAX_RANK = 3

Tensor = np.ndarray


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    """Build a float64 tensor from nested lists or a flat sequence plus ``shape``."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
    return arr


def zeros(*shape: int) -> Tensor:
    return np.zeros(shape, dtype=np.float64)


def ones(*shape: int) -> Tensor:
    return np.ones(shape, dtype=np.float64)


def check_same_shape(a: Tensor, b: Tensor, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch between {what}: {a.shape} vs {b.shape}")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of two equally shaped tensors."""
    check_same_shape(a, b)
    return a * b


def add(a: Tensor, b: Tensor) -> Tensor:
    check_same_shape(a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    check_same_shape(a, b)
    return a - b


def scale(a: Tensor, s: float) -> Tensor:
    return a * float(s)


def sum_all(a: Tensor) -> float:
    """Sum over every element; 0.0 for an empty tensor."""
    return float(np.sum(a))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose expects a rank-2 tensor, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def sigmoid(a: Tensor) -> Tensor:
    # exp of a non-positive argument only: no overflow, full relative precision in both tails
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(a: Tensor) -> Tensor:
    return np.tanh(a)


class Rng:
    """Seeded PCG64 stream.

    Equal seeds give equal draw sequences on every platform numpy supports.
    A generator belongs to one thread of execution; use :meth:`spawn` to hand
    independent streams to workers.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def random(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self.generator.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def spawn(self, n: int) -> list["Rng"]:
        """Derive ``n`` statistically independent child streams."""
        children = []
        for child_seq in self._seq.spawn(n):
            child = Rng.__new__(Rng)
            child.seed = self.seed
            child._seq = child_seq
            child.generator = np.random.Generator(np.random.PCG64(child_seq))
            children.append(child)
        return children


def bernoulli(rng: Rng, shape, keep_prob: float) -> Tensor:
    """0/1 tensor whose entries are independently 1 with probability ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    # uniform draws are in [0, 1), so keep_prob=1 keeps everything and 0 nothing
    return (rng.random(shape) < keep_prob).astype(np.float64)
