"""Distribution of the kept-unit ratio under block-wise dropout.

With ``N`` independent blocks each kept with probability ``1 - q``, the number
of kept blocks is Binomial(N, 1 - q); the kept ratio ``k / N`` therefore has
mean ``1 - q`` and standard deviation ``sqrt(q (1 - q) / N)``. Small ``N``
gives a wide spread of effective dropout rates, large ``N`` a near-delta.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Rng, bernoulli

# exact integer binomials up to here, log-space above
_EXACT_LIMIT = 30
_MC_CHUNK = 1 << 16


def _check(n_blocks: int, q: float) -> None:
    if int(n_blocks) < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")


@dataclass
class KeptRatioPmf:
    n_blocks: int
    q: float
    ratios: np.ndarray
    probs: np.ndarray

    @property
    def support(self) -> list[tuple[float, float]]:
        return list(zip(self.ratios.tolist(), self.probs.tolist()))

    def prob_kept(self, k: int) -> float:
        """Probability that exactly ``k`` of the blocks are kept."""
        return float(self.probs[k])


@dataclass
class KeptRatioHistogram:
    n_blocks: int
    q: float
    counts: np.ndarray  # counts[k] = trials with k blocks kept

    @property
    def trials(self) -> int:
        return int(self.counts.sum())

    @property
    def ratios(self) -> np.ndarray:
        return np.arange(self.n_blocks + 1) / self.n_blocks

    @property
    def probs(self) -> np.ndarray:
        return self.counts / max(self.trials, 1)


def kept_ratio_pmf(n_blocks: int, q: float) -> KeptRatioPmf:
    """Exact PMF of the kept ratio ``k / N`` for ``k = 0..N``."""
    _check(n_blocks, q)
    n = int(n_blocks)
    p = 1.0 - q
    ks = np.arange(n + 1)
    if q == 0.0 or q == 1.0:
        probs = np.zeros(n + 1)
        probs[n if q == 0.0 else 0] = 1.0
    elif n <= _EXACT_LIMIT:
        probs = np.array([math.comb(n, k) * p**k * q ** (n - k) for k in range(n + 1)])
    else:
        log_comb = np.array(
            [math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) for k in range(n + 1)]
        )
        probs = np.exp(log_comb + ks * math.log(p) + (n - ks) * math.log(q))
    return KeptRatioPmf(n_blocks=n, q=q, ratios=ks / n, probs=probs)


def kept_ratio_moments(n_blocks: int, q: float) -> tuple[float, float]:
    """Closed-form ``(mean, std)`` of the kept ratio."""
    _check(n_blocks, q)
    return 1.0 - q, math.sqrt(q * (1.0 - q) / n_blocks)


def pmf_moments(pmf: KeptRatioPmf) -> tuple[float, float]:
    """``(mean, std)`` by direct summation over the support."""
    mean = float(np.sum(pmf.ratios * pmf.probs))
    var = float(np.sum((pmf.ratios - mean) ** 2 * pmf.probs))
    return mean, math.sqrt(max(var, 0.0))


def monte_carlo_kept_ratio(rng: Rng, n_blocks: int, q: float, trials: int) -> KeptRatioHistogram:
    """Histogram of kept-block counts over ``trials`` independent draws."""
    _check(n_blocks, q)
    if int(trials) < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    counts = np.zeros(n_blocks + 1, dtype=np.int64)
    remaining = int(trials)
    while remaining:
        m = min(remaining, _MC_CHUNK)
        kept = bernoulli(rng, (m, n_blocks), 1.0 - q).sum(axis=1).astype(np.int64)
        counts += np.bincount(kept, minlength=n_blocks + 1)
        remaining -= m
    return KeptRatioHistogram(n_blocks=n_blocks, q=q, counts=counts)


def kept_block_histogram(block_draws: np.ndarray, q: float) -> KeptRatioHistogram:
    """Histogram of kept-block counts from stacked ``(count, P_t, P_f)`` block draws."""
    n = block_draws.shape[-2] * block_draws.shape[-1]
    kept = block_draws.reshape(-1, n).sum(axis=1).astype(np.int64)
    return KeptRatioHistogram(n_blocks=n, q=q, counts=np.bincount(kept, minlength=n + 1))


def gaussian_approximation(n_blocks: int, q: float, grid) -> np.ndarray:
    """Normal density with the kept-ratio moments, evaluated on ``grid``.

    With zero variance (q = 0 or 1) the density degenerates to a spike: ``inf``
    at the mean and 0 elsewhere.
    """
    _check(n_blocks, q)
    grid = np.asarray(grid, dtype=np.float64)
    mean, std = kept_ratio_moments(n_blocks, q)
    if std == 0.0:
        return np.where(grid == mean, np.inf, 0.0)
    z = (grid - mean) / std
    return np.exp(-0.5 * z * z) / (std * math.sqrt(2.0 * math.pi))


def chi_square_statistic(counts, probs) -> tuple[float, int]:
    """Pearson statistic and degrees of freedom, ignoring zero-probability cells."""
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    live = probs > 0
    expected = counts.sum() * probs[live]
    stat = float(np.sum((counts[live] - expected) ** 2 / expected))
    return stat, int(live.sum()) - 1


def write_pmf_csv(path, pmf: KeptRatioPmf, hist: KeptRatioHistogram | None = None) -> None:
    """Columns ``ratio, exact_prob``, plus ``empirical_prob`` when a histogram is given."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ratio", "exact_prob"] + (["empirical_prob"] if hist is not None else []))
        for k, (r, p) in enumerate(zip(pmf.ratios, pmf.probs)):
            row = [f"{r:.6g}", repr(float(p))]
            if hist is not None:
                row.append(repr(float(hist.probs[k])))
            w.writerow(row)
