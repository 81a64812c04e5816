"""Normality diagnostics for cache activations.

Standardization, Q-Q point generation and the D'Agostino-Pearson omnibus
test, applied per block of a token (or pooled across tokens).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from nqkv.codec import normal_quantile
from nqkv.errors import DegenerateDataError, SampleSizeError, ShapeError

MIN_DAP_SAMPLES = 20


@dataclass(frozen=True)
class NormalityReport:
    block_index: int
    n: int
    skew_z: float
    kurt_z: float
    k2: float
    p_value: float
    normal_at_alpha: bool

    def to_dict(self) -> dict:
        return asdict(self)


class QQPoints(NamedTuple):
    theoretical: np.ndarray
    empirical: np.ndarray


def _sample(sample, min_n: int) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size < min_n:
        raise SampleSizeError(f"need at least {min_n} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateDataError("sample contains non-finite values")
    if np.all(x == x[0]):
        raise DegenerateDataError("sample has zero variance")
    return x


def standardize(sample) -> np.ndarray:
    """Shift to mean 0 and scale to unit sample standard deviation (n-1 divisor)."""
    x = _sample(sample, 2)
    centered = x - x.mean()
    sd = np.sqrt(np.sum(centered**2) / (x.size - 1))
    if sd == 0.0:
        raise DegenerateDataError("sample has zero variance")
    return centered / sd


def qq_points(sample) -> QQPoints:
    """Standard-normal quantiles at plotting positions (i + 0.5)/n vs the sorted standardized sample."""
    z = np.sort(standardize(_sample(sample, 3)))
    n = z.size
    theoretical = normal_quantile((np.arange(n) + 0.5) / n)
    return QQPoints(theoretical, z)


def skew_z(g1: float, n: int) -> float:
    """D'Agostino (1970) normalizing transform of the sample skewness."""
    y = g1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3) / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9))
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1.0))
    return delta * math.asinh(y / alpha)


def kurtosis_z(b2: float, n: int) -> float:
    """Anscombe-Glynn (1983) normalizing transform of the sample kurtosis ``b2`` (not excess)."""
    mean = 3.0 * (n - 1) / (n + 1)
    var = 24.0 * n * (n - 2) * (n - 3) / ((n + 1.0) ** 2 * (n + 3) * (n + 5))
    x = (b2 - mean) / math.sqrt(var)
    root_beta1 = (
        6.0 * (n * n - 5 * n + 2) / ((n + 7.0) * (n + 9))
        * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2.0) * (n - 3)))
    )
    a = 6.0 + 8.0 / root_beta1 * (2.0 / root_beta1 + math.sqrt(1.0 + 4.0 / root_beta1**2))
    denom = 1.0 + x * math.sqrt(2.0 / (a - 4.0))
    if denom == 0.0:
        return math.inf if x < 0 else -math.inf
    term = float(np.cbrt((1.0 - 2.0 / a) / denom))
    return (1.0 - 2.0 / (9.0 * a) - term) / math.sqrt(2.0 / (9.0 * a))


def dap_test(sample, alpha: float = 0.05, block_index: int = 0) -> NormalityReport:
    """D'Agostino-Pearson K^2 test; ``p = exp(-K^2 / 2)`` is the chi-square(2) tail."""
    x = _sample(sample, MIN_DAP_SAMPLES)
    n = x.size
    c = x - x.mean()
    m2 = np.mean(c**2)
    if m2 == 0.0:
        raise DegenerateDataError("sample has zero variance")
    g1 = np.mean(c**3) / m2**1.5
    b2 = np.mean(c**4) / m2**2
    z1 = skew_z(float(g1), n)
    z2 = kurtosis_z(float(b2), n)
    k2 = z1 * z1 + z2 * z2
    p = math.exp(-k2 / 2.0)
    return NormalityReport(block_index, n, z1, z2, k2, p, p > alpha)


def block_normality_report(matrix, block_size: int, alpha: float = 0.05, token: int | None = 0) -> list[NormalityReport]:
    """Run :func:`dap_test` on every column block of ``matrix``.

    ``token`` selects a single row (the default, row 0); ``None`` pools
    each block's columns across all rows.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if block_size < MIN_DAP_SAMPLES:
        raise SampleSizeError(f"block_size must be >= {MIN_DAP_SAMPLES}, got {block_size}")
    if token is not None:
        if not -m.shape[0] <= token < m.shape[0]:
            raise ShapeError(f"token {token} outside a {m.shape[0]}-row matrix")
        m = m[token : token + 1] if token >= 0 else m[token:][:1]
    cols = m.shape[1]
    reports = []
    for b, lo in enumerate(range(0, cols, block_size)):
        reports.append(dap_test(m[:, lo : lo + block_size], alpha, block_index=b))
    return reports


def format_table(reports: list[NormalityReport], alpha: float = 0.05) -> str:
    """Aligned two-column-group text table: block, pvalue, > alpha?"""
    half = -(-len(reports) // 2)
    left, right = reports[:half], reports[half:]
    head = f"{'block':>5}  {'pvalue':>8}  {'>' + format(alpha, 'g') + '?':>7}"
    lines = [head + "    " + head if right else head]
    for i, r in enumerate(left):
        cells = [_cell(r)]
        if i < len(right):
            cells.append(_cell(right[i]))
        lines.append("    ".join(cells))
    return "\n".join(lines)


def _cell(r: NormalityReport) -> str:
    mark = "yes" if r.normal_at_alpha else "no"
    return f"{r.block_index:>5}  {r.p_value:>8.5f}  {mark:>7}"
