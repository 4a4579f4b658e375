"""Lower bound for integrals of powers of Hölder functions.

For nonnegative f with |f(x) - f(y)| <= C |x - y|^beta and 0 < alpha < 1,

    ∫ f^alpha  >=  K(beta, C) * (∫ f)^((alpha*beta + 1)/(beta + 1)),
    K(beta, C) = min(1, (2C)^(-1/beta)).

The module provides the constant, a checker on sampled functions, the
rescaling that reduces the general case to ∫f = 1, random certified test
functions, and a pair-scan estimate of the Hölder constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ContractError, ParameterError
from .noise import GENERATOR, SUITE_PARAMS, SeedSpec

EXHAUSTIVE_LIMIT = 2048
SUITE_ALPHAS = tuple(i / 10 for i in range(1, 10))
SHORT_LAGS = 64


@dataclass(frozen=True)
class HolderClass:
    beta: float
    C: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.C > 0.0 or not math.isfinite(self.C):
            raise ParameterError(f"Hölder constant must be positive, got {self.C}")


@dataclass
class SampledFn:
    grid: np.ndarray
    values: np.ndarray
    certified_class: HolderClass | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise ContractError("grid and values must be 1-D arrays of equal length")
        if np.any(self.values < 0):
            raise ContractError("sampled function must be nonnegative")

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def integral(self, power: float = 1.0) -> float:
        v = self.values if power == 1.0 else self.values ** power
        return trapezoid(v, self.dx)


@dataclass(frozen=True)
class RALResult:
    lhs: float
    rhs: float
    holds: bool
    tol: float = 0.0
    ratio: float = field(default=math.inf)


def trapezoid(v: np.ndarray, dx: float) -> float:
    if v.size < 2:
        return float(v.sum() * dx)
    return float(dx * (v.sum() - 0.5 * (v[0] + v[-1])))


def ral_constant(beta: float, C: float) -> float:
    HolderClass(beta, C)
    return min(1.0, (2.0 * C) ** (-1.0 / beta))


def ral_exponent(alpha: float, beta: float) -> float:
    return (alpha * beta + 1.0) / (beta + 1.0)


def ral_check(f: SampledFn, alpha: float) -> RALResult:
    """Check the inequality for one sampled function.

    The tolerance is 10 times the largest jump of f^alpha between
    neighbouring samples, relative to max f^alpha (a scale-free version of
    10*dx*Lip(f^alpha)), capped at 1/2.
    """
    if f.certified_class is None:
        raise ContractError("ral_check needs a function with a certified Hölder class")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    cls = f.certified_class
    fa = f.values ** alpha
    lhs = trapezoid(fa, f.dx)
    mass = f.integral()
    rhs = ral_constant(cls.beta, cls.C) * mass ** ral_exponent(alpha, cls.beta)
    top = fa.max() if fa.size else 0.0
    tol = 0.0
    if top > 0:
        tol = min(0.5, 10.0 * float(np.abs(np.diff(fa)).max(initial=0.0)) / top)
    ratio = lhs / rhs if rhs > 0 else math.inf
    return RALResult(lhs, rhs, bool(lhs >= rhs * (1.0 - tol)), tol, ratio)


def scale_reduce(f: SampledFn) -> tuple[SampledFn, float]:
    """g(x) = b^-beta f(b x) with b = (∫f)^(1/(beta+1)), so that ∫g = 1.

    Returns (g, b); g stays in the same Hölder class.
    """
    if f.certified_class is None:
        raise ContractError("scale_reduce needs a certified function")
    beta = f.certified_class.beta
    mass = f.integral()
    if mass <= 0:
        raise ContractError("cannot rescale a function with zero integral")
    b = mass ** (1.0 / (beta + 1.0))
    return SampledFn(f.grid / b, f.values * b ** (-beta), f.certified_class), b


def pair_lags(n: int, max_lag: int | None = None) -> np.ndarray:
    """Deterministic lag schedule for the pair scan on n samples."""
    top = n - 1 if max_lag is None else min(n - 1, max_lag)
    if top < 1:
        return np.zeros(0, dtype=np.int64)
    if n <= EXHAUSTIVE_LIMIT:
        return np.arange(1, top + 1, dtype=np.int64)
    lags = set(range(1, min(SHORT_LAGS, top) + 1))
    k = SHORT_LAGS
    while k <= top:
        lags.update((k, min(top, k + k // 2)))
        k *= 2
    lags.add(top)
    return np.array(sorted(lags), dtype=np.int64)


@numba.njit(cache=True)
def _scan(values, lags, dx, beta):
    n = values.shape[0]
    best = 0.0
    for li in range(lags.shape[0]):
        lag = lags[li]
        inv = 1.0 / (lag * dx) ** beta
        m = 0.0
        for i in range(n - lag):
            d = abs(values[i + lag] - values[i])
            if d > m:
                m = d
        m *= inv
        if m > best:
            best = m
    return best


def holder_scan(values: np.ndarray, dx: float, beta: float, max_distance: float | None = 1.0) -> float:
    """Pair-scan Hölder quotient of raw samples, restricted to the support.

    Only the window from one cell before the first nonzero sample to one cell
    after the last one is scanned; pairs with both ends outside contribute
    nothing and the nearest zero bounds every pair with one end outside.
    """
    v = np.asarray(values, dtype=float)
    nz = np.flatnonzero(v)
    if nz.size == 0:
        return 0.0
    lo = max(nz[0] - 1, 0)
    hi = min(nz[-1] + 2, v.size)
    w = np.ascontiguousarray(v[lo:hi])
    if w.size < 2:
        return 0.0
    max_lag = None if max_distance is None else int(math.floor(max_distance / dx + 1e-9))
    lags = pair_lags(w.size, max_lag)
    if lags.size == 0:
        return 0.0
    return float(_scan(w, lags, float(dx), float(beta)))


def holder_constant_estimate(f: SampledFn, beta: float, max_distance: float | None = 1.0) -> float:
    """Largest |f(x) - f(x')| / |x - x'|^beta over the pair schedule.

    Pairs up to `max_distance` apart are scanned (all pairs when None).
    """
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    return holder_scan(f.values, f.dx, beta, max_distance)


def hat_function(grid: np.ndarray, height: float = 1.0, halfwidth: float = 1.0) -> np.ndarray:
    return height * np.maximum(0.0, 1.0 - np.abs(grid) / halfwidth)


def hat_ratio(alpha: float, beta: float, C: float) -> float:
    """∫f^alpha / (∫f)^exponent for a hat with Hölder constant exactly C.

    Independent of the hat's width, so it bounds K(beta, C) from above.
    """
    return 2.0 * C ** ((alpha - 1.0) / (beta + 1.0)) / (alpha + 1.0)


def generate_holder_fn(seed: SeedSpec, cls: HolderClass, support_halfwidth: float,
                       n: int = 1025) -> SampledFn:
    """Random compactly supported function certified in `cls`.

    A random cosine series with coefficients decaying like k^-(beta + 1/2) is
    shifted, rectified at 0 and multiplied by a compact envelope; the result
    is rescaled so its exhaustive pair-scan constant is a random fraction in
    [1/2, 1] of C, and the certificate is re-verified.
    """
    if support_halfwidth <= 0:
        raise ParameterError("support_halfwidth must be positive")
    if n > EXHAUSTIVE_LIMIT:
        raise ParameterError(f"certificates need an exhaustive scan, n <= {EXHAUSTIVE_LIMIT}")
    rng = np.random.Generator(seed.stream(GENERATOR).bit_generator())
    w = float(support_halfwidth)
    x = np.linspace(-1.05 * w, 1.05 * w, n)
    modes = int(rng.integers(3, 40))
    k = np.arange(1, modes + 1)
    amp = rng.standard_normal(modes) * k ** -(cls.beta + 0.5)
    phase = rng.uniform(0, 2 * np.pi, modes)
    series = (amp[:, None] * np.cos(np.pi * k[:, None] * x[None, :] / w + phase[:, None])).sum(axis=0)
    shift = rng.uniform(-0.5, 1.0) * np.abs(amp).sum()
    env = np.clip(1.0 - (x / w) ** 2, 0.0, None) ** rng.uniform(0.3, 1.5)
    f = np.maximum(series + shift, 0.0) * env
    if not np.any(f > 0):
        f = env.copy()
    f[0] = f[-1] = 0.0
    dx = x[1] - x[0]
    est = holder_scan(f, dx, cls.beta, None)
    target = cls.C * rng.uniform(0.5, 1.0)
    f *= target / est
    est = holder_scan(f, dx, cls.beta, None)
    if est > cls.C * (1 + 1e-12):
        raise AssertionError("generated function failed its certificate")
    return SampledFn(x, f, cls)


@dataclass(frozen=True)
class SuiteRow:
    alpha: float
    C: float
    halfwidth: float
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    scaled_holds: bool


def suite_case(seed: SeedSpec, beta: float = 0.25, alphas=SUITE_ALPHAS) -> list[SuiteRow]:
    """One generated function checked at every alpha, before and after rescaling.

    C is log-uniform on [1/2, 8] and the support half-width log-uniform on
    [1/8, 8], both drawn from the seed's parameter stream.
    """
    rng = np.random.Generator(seed.stream(SUITE_PARAMS).bit_generator())
    C = 2.0 ** rng.uniform(-1, 3)
    w = 2.0 ** rng.uniform(-3, 3)
    f = generate_holder_fn(seed, HolderClass(beta, C), w)
    g, _ = scale_reduce(f)
    rows = []
    for a in alphas:
        r = ral_check(f, a)
        rows.append(SuiteRow(a, C, w, r.lhs, r.rhs, r.ratio, r.holds, ral_check(g, a).holds))
    return rows
