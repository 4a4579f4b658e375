"""Monte Carlo summaries, proportion intervals, power-law fits and KS tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

from .errors import ParameterError

Z95 = 1.959963984540054


@dataclass(frozen=True)
class MCResult:
    n: int
    mean: float
    stderr: float

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - Z95 * self.stderr, self.mean + Z95 * self.stderr)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


@dataclass(frozen=True)
class Partial:
    """Mergeable running moments (count, mean, centred sum of squares)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, samples) -> "Partial":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        return cls(int(x.size), mu, float(((x - mu) ** 2).sum()))

    def merge(self, other: "Partial") -> "Partial":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return Partial(n, mean, m2)

    def result(self) -> MCResult:
        if self.n == 0:
            raise ParameterError("cannot aggregate an empty sample")
        if self.n == 1:
            return MCResult(1, self.mean, math.inf)
        var = self.m2 / (self.n - 1)
        return MCResult(self.n, self.mean, math.sqrt(var / self.n))

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan


def aggregate(samples) -> MCResult:
    return Partial.of(samples).result()


def merge_all(parts) -> Partial:
    out = Partial()
    for p in parts:
        out = out.merge(p)
    return out


@dataclass(frozen=True)
class Proportion:
    successes: int
    n: int
    low: float
    high: float

    @property
    def estimate(self) -> float:
        return self.successes / self.n

    def excludes_zero(self) -> bool:
        return self.low > 0.0


def wilson_interval(successes: int, n: int, z: float = Z95) -> Proportion:
    if n <= 0:
        raise ParameterError("Wilson interval needs at least one trial")
    if not 0 <= successes <= n:
        raise ParameterError("successes must lie in [0, n]")
    ph = successes / n
    den = 1 + z * z / n
    centre = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    # the exact endpoints at 0 and n; rounding can otherwise leave 1e-17 residue
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == n else min(1.0, centre + half)
    return Proportion(int(successes), int(n), low, high)


def proportion_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float


def loglog_slope(T, p) -> SlopeFit:
    """Least squares fit of log p against log T."""
    T = np.asarray(T, dtype=float)
    p = np.asarray(p, dtype=float)
    if T.size < 2 or T.size != p.size:
        raise ParameterError("need at least two (T, p) pairs")
    if np.any(T <= 0) or np.any(p <= 0):
        raise ParameterError("log-log fit needs positive T and p")
    if T.size == 2:
        x, y = np.log(T), np.log(p)
        s = (y[1] - y[0]) / (x[1] - x[0])
        return SlopeFit(float(s), 0.0, float(y[0] - s * x[0]))
    fit = _st.linregress(np.log(T), np.log(p))
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.intercept))


def weighted_loglog_slope(T, p, n) -> SlopeFit:
    """Fit weighted by the binomial variance of log p-hat, delta method."""
    T = np.asarray(T, dtype=float)
    p = np.asarray(p, dtype=float)
    if T.size < 2:
        raise ParameterError("need at least two (T, p) pairs")
    w = n * p / np.maximum(1 - p, 1e-300)
    x, y = np.log(T), np.log(p)
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (X * w[:, None])
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return SlopeFit(float(beta[1]), float(math.sqrt(cov[1, 1])), float(beta[0]))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    passed: bool


def ks_distance(a, b, alpha: float = 0.01) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test; passes when p >= alpha."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ParameterError("KS test needs nonempty samples")
    r = _st.ks_2samp(a, b)
    return KSResult(float(r.statistic), float(r.pvalue), bool(r.pvalue >= alpha))
