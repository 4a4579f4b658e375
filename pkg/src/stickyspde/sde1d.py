"""One-dimensional sticky diffusion  dX = b dt + X^q dB,  X >= 0.

With gamma = 1 - 2q and A = 2b/(K gamma) the scale function is

    s(x) = ∫_0^x exp(-A y^gamma) dy = s_inf * P(1/gamma, A x^gamma),
    s_inf = Gamma(1/gamma + 1) / A^(1/gamma),

(P the regularized lower incomplete gamma function), so s, s' and s^-1 are
all available in closed form.  The speed measure in natural scale has
density 1/(s'(x)^2 K x^(2q)) at y = s(x), with cumulative form
M(y) = (1/s'(x) - 1)/(2b) (K A gamma = 2b), plus an atom 1/b at zero.

The exact simulator runs a reflected walk R in natural scale, accumulates
the clock A = ∫ m(R) du + L^R(0)/b and reads X = s^-1(R) off the clock.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate, special

from ._special import TWO_M53, raw_to_normal
from .errors import DomainError, ParameterError
from .holder_lemma import ral_constant
from .noise import DRIVER_NOISE, EULER_NOISE, LOCAL_TIME_CONSTANT, SeedSpec
from .stats import Proportion, loglog_slope, wilson_interval


@dataclass(frozen=True)
class ScaleFn:
    b: float = 1.0
    q: float = 0.25
    K: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ParameterError("drift b must be positive")
        if not 0.0 < self.q < 0.5:
            raise ParameterError(f"exponent q must lie in (0, 1/2), got {self.q}")
        if not self.K > 0:
            raise ParameterError("K must be positive")

    @property
    def gamma(self) -> float:
        return 1.0 - 2.0 * self.q

    @property
    def A(self) -> float:
        return 2.0 * self.b / (self.K * self.gamma)

    @property
    def log_s_inf(self) -> float:
        g = self.gamma
        return special.gammaln(1.0 / g + 1.0) - math.log(self.A) / g

    @property
    def s_inf(self) -> float:
        return math.exp(self.log_s_inf)

    def derivative(self, x):
        return np.exp(-self.A * np.asarray(x, dtype=float) ** self.gamma)

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        return -self.A * self.gamma * x ** (self.gamma - 1.0) * self.derivative(x)

    def ode_residual(self, x):
        """(K x^(2q)/2) s'' + b s' at x > 0."""
        x = np.asarray(x, dtype=float)
        return 0.5 * self.K * x ** (2 * self.q) * self.second_derivative(x) + self.b * self.derivative(x)

    def speed_cumulative(self, x):
        """M(s(x)) = ∫_0^{s(x)} m(dy) without the atom."""
        z = self.A * np.asarray(x, dtype=float) ** self.gamma
        return np.expm1(z) / (2.0 * self.b)


@dataclass(frozen=True)
class SpeedMeasure:
    scale: ScaleFn

    @property
    def atom_at_zero(self) -> float:
        return 1.0 / self.scale.b

    def density(self, y):
        x = scale_inv(self.scale, y)
        return 1.0 / (self.scale.derivative(x) ** 2 * self.scale.K * x ** (2 * self.scale.q))


def scale_eval(s: ScaleFn, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("scale function is defined on [0, inf)")
    out = s.s_inf * special.gammainc(1.0 / s.gamma, s.A * x ** s.gamma)
    return float(out) if out.ndim == 0 else out


def log_scale_eval(s: ScaleFn, x: float) -> float:
    """log s(x), accurate when s(x) underflows (large K^-1)."""
    if x <= 0:
        return -math.inf
    z = s.A * x ** s.gamma
    a = 1.0 / s.gamma
    p = special.gammainc(a, z)
    if p > 1e-300:
        return s.log_s_inf + math.log(p)
    # small z: P(a, z) ~ z^a / Gamma(a + 1)
    return s.log_s_inf + a * math.log(z) - special.gammaln(a + 1.0)


def scale_inv(s: ScaleFn, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y >= s.s_inf):
        raise DomainError(f"scale_inv needs y in [0, {s.s_inf:.6g})")
    a = 1.0 / s.gamma
    z = special.gammaincinv(a, y / s.s_inf)
    x = (z / s.A) ** a
    # two Newton polishing steps on s(x) = y
    for _ in range(2):
        pos = x > 0
        x = np.where(pos, x - (s.s_inf * special.gammainc(a, s.A * x ** s.gamma) - y) / s.derivative(x), x)
        x = np.maximum(x, 0.0)
    return float(x) if x.ndim == 0 else x


def scale_quad(s: ScaleFn, x: float) -> float:
    """Adaptive quadrature of the integrand, an oracle for the closed form.

    Integrates in log y, where the integrand exp(t - A e^(gamma t)) is
    smooth even when its bulk sits many decades below x.
    """
    if x <= 0:
        return 0.0
    val, _ = integrate.quad(lambda t: math.exp(t - s.A * math.exp(s.gamma * t)), -math.inf, math.log(x),
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return val


# ---------------------------------------------------------------- parameter ledger

def p_prime(p: float) -> float:
    return (p + 2.0) / 5.0


def scale_k(b: float, p: float, k: float) -> ScaleFn:
    """s_k: exponent p' = (p+2)/5 with K = ral_constant(1/4, k)."""
    return ScaleFn(b, p_prime(p), ral_constant(0.25, k))


@dataclass(frozen=True)
class EpsilonLedger:
    b: float
    p: float
    k: float
    p_prime: float
    K: float
    log_sk1: float
    eps0: float
    x0_max: float
    ratio_ok: bool
    log_p1: float
    log_p2: float

    @property
    def sk1(self) -> float:
        return math.exp(self.log_sk1)


def epsilon_ledger(b: float, p: float, k: float, eps: float | None = None) -> EpsilonLedger:
    """Smallness conditions: s_k(2b eps) < 3b eps and 2b eps < x0 <= s_k(1)/6.

    The first holds for every eps since s_k' <= 1; the second gives
    eps0 = s_k(1)/(12 b) with x0 = s_k(1)/6.  With those choices the ratio
    p2/p1 = (b eps/x0) / (s_k(2b eps)/s_k(1)) is checked to be >= 2.
    """
    sk = scale_k(b, p, k)
    log_sk1 = log_scale_eval(sk, 1.0)
    x0 = math.exp(log_sk1) / 6.0
    eps0 = math.exp(log_sk1) / (12.0 * b)
    e = eps0 * 0.5 if eps is None else eps
    log_p1 = log_scale_eval(sk, 2 * b * e) - log_sk1
    log_p2 = math.log(b * e) - (log_sk1 - math.log(6.0))
    return EpsilonLedger(b, p, k, sk.q, sk.K, log_sk1, eps0, x0,
                         bool(log_p2 - log_p1 >= math.log(2.0) - 1e-12), log_p1, log_p2)


# ---------------------------------------------------------------- exact sticky simulator

@dataclass
class PathSummary:
    final_value: float
    hit_times: dict = field(default_factory=dict)
    occupation_time_at_zero: float = 0.0
    local_time_driver: float = 0.0
    elapsed: float = 0.0
    driver_time: float = math.nan
    hit_zero_time: float = math.nan
    clip_count: int = 0
    steps: int = 0


_TABLE_T = 60001


@functools.lru_cache(maxsize=32)
def _inverse_table(b: float, q: float, K: float):
    """z = A x^gamma as a function of t = w^gamma, w = -log(1 - y/s_inf)."""
    s = ScaleFn(b, q, K)
    g = s.gamma
    w_max = 36.0
    t = np.linspace(0.0, w_max ** g, _TABLE_T)
    w = t ** (1.0 / g)
    z = special.gammainccinv(1.0 / g, np.exp(-w))
    z[0] = 0.0
    return t, np.ascontiguousarray(z)


@numba.njit(cache=True)
def _z_of_y(y, s_inf, g, ht, zt):
    if y <= 0.0:
        return 0.0
    w = -math.log1p(-y / s_inf)
    c = w ** g / ht
    n = zt.shape[0] - 1
    if c >= n:
        return zt[n]
    i = int(c)
    a = c - i
    return (1.0 - a) * zt[i] + a * zt[i + 1]


@numba.njit(cache=True)
def _speed_cum(y, s_inf, g, kb, ht, zt):
    # K (exp(z) - 1) / (2b)
    return kb * math.expm1(_z_of_y(y, s_inf, g, ht, zt))


@numba.njit(cache=True)
def _bin_mean(r, hb, gap, s_inf, g, kb, ht, zt):
    lo = r - hb
    if lo < 0.0:
        lo = 0.0
    hi = r + hb
    if hi > r + 0.5 * gap:
        hi = r + 0.5 * gap
    if hi <= lo:
        return 0.0
    return (_speed_cum(hi, s_inf, g, kb, ht, zt) - _speed_cum(lo, s_inf, g, kb, ht, zt)) / (hi - lo)


@numba.njit(cache=True)
def _sticky_kernel(raw, pos, st, s_inf, g, kb, b, ht, zt, dt, clock_cap, c_lt,
                   t_end, upper, stop_zero, bridge):
    """Advance one sticky path using raw words from `raw[pos:]`.

    st = [R, u, A, L, occ, done, hit_upper, hit_zero, steps]
    The driver step is dt, shortened so that one step adds at most
    clock_cap to the clock and moves at most a tenth of the way to s_inf.
    The density part of the clock is the speed measure averaged over a bin
    of half-width sqrt(step) around R.
    Returns the new read position; st[5] = 1 when the path has finished.
    """
    n = raw.shape[0]
    while pos + 3 <= n:
        r = st[0]
        gap = s_inf - r
        di = dt
        if di > (0.1 * gap) ** 2:
            di = (0.1 * gap) ** 2
        mbar = _bin_mean(r, math.sqrt(di), gap, s_inf, g, kb, ht, zt)
        for _ in range(4):
            if mbar * di <= clock_cap:
                break
            di = clock_cap / mbar
            mbar = _bin_mean(r, math.sqrt(di), gap, s_inf, g, kb, ht, zt)
        hs = math.sqrt(di)
        dl = c_lt * hs if r < hs else 0.0
        da = mbar * di + dl / b
        xi = raw_to_normal(raw[pos])
        pos += 1
        rn = r + hs * xi
        hit0 = False
        hitu = False
        if rn <= 0.0:
            hit0 = True
        elif bridge and stop_zero and r > 0.0:
            u = ((raw[pos] >> np.uint64(11)) + 0.5) * TWO_M53
            pos += 1
            if u < math.exp(-2.0 * r * rn / di):
                hit0 = True
        if upper > 0.0 and not hit0:
            if rn >= upper:
                hitu = True
            elif bridge:
                u = ((raw[pos] >> np.uint64(11)) + 0.5) * TWO_M53
                pos += 1
                if u < math.exp(-2.0 * (upper - r) * (upper - rn) / di):
                    hitu = True
        rn = abs(rn)
        if rn >= s_inf:
            rn = r + 0.5 * gap
        frac = 1.0
        if st[2] + da >= t_end and not (hit0 and stop_zero) and not hitu:
            frac = (t_end - st[2]) / da if da > 0.0 else 1.0
            rn = r + frac * (rn - r)
            st[5] = 1.0
        st[0] = rn
        st[1] += frac * di
        st[2] += frac * da
        st[3] += frac * dl
        st[4] += frac * dl / b
        st[8] += 1.0
        if hit0 and math.isnan(st[7]):
            st[7] = st[2]
            if stop_zero:
                st[5] = 1.0
        if hitu and math.isnan(st[6]):
            st[6] = st[2]
            st[5] = 1.0
        if st[5] == 1.0:
            return pos
    return pos


def simulate_sticky_exact(seed: SeedSpec, m: SpeedMeasure, x0: float, t_end: float, dt: float,
                          target: float | None = None, stop_at_zero: bool = False,
                          bridge: bool = True, clock_step: float | None = None,
                          max_steps: int = 50_000_000) -> PathSummary:
    """Exact time-change construction of the sticky diffusion.

    Runs until the clock reaches t_end, or earlier when `target` is hit or
    (with stop_at_zero) when X reaches 0.  Hits between grid points are
    detected with the Brownian-bridge crossing probability.  `dt` is the
    driver step and `clock_step` (default dt) the largest clock increment per
    step; pass clock_step=inf when only hitting events matter.
    """
    if x0 < 0:
        raise ParameterError("x0 must be nonnegative")
    if dt <= 0 or t_end <= 0:
        raise ParameterError("dt and t_end must be positive")
    s = m.scale
    ht_grid, zt = _inverse_table(s.b, s.q, s.K)
    ht = ht_grid[1] - ht_grid[0]
    upper = scale_eval(s, target) if target is not None else -1.0
    st = np.array([scale_eval(s, x0), 0.0, 0.0, 0.0, 0.0, 0.0, np.nan, np.nan, 0.0])
    if target is not None and x0 >= target:
        st[6] = 0.0
        st[5] = 1.0
    if stop_at_zero and x0 == 0:
        st[7] = 0.0
        st[5] = 1.0
    cap = dt if clock_step is None else clock_step
    bg = seed.stream(DRIVER_NOISE).bit_generator()
    chunk = 4096
    while st[5] == 0.0 and st[8] < max_steps:
        raw = bg.random_raw(chunk)
        # words left over in a finished chunk are discarded
        _sticky_kernel(raw, 0, st, s.s_inf, s.gamma, 1.0 / (2 * s.b), s.b, ht, zt,
                       dt, cap, LOCAL_TIME_CONSTANT, t_end, upper, stop_at_zero, bridge)
        chunk = min(chunk * 2, 1 << 20)
    r = min(st[0], s.s_inf * (1 - 1e-16))
    x = scale_inv(s, r) if r > 0 else 0.0
    hits = {}
    if target is not None:
        hits[target] = st[6]
    return PathSummary(final_value=float(x), hit_times=hits, occupation_time_at_zero=float(st[4]),
                       local_time_driver=float(st[3]), elapsed=float(st[2]), driver_time=float(st[1]),
                       hit_zero_time=float(st[7]), steps=int(st[8]))


def sticky_hitting(seed: SeedSpec, m: SpeedMeasure, x_start: float, x_target: float,
                   n_paths: int, dt: float = 1e-6) -> Proportion:
    """Fraction of paths from x_start that reach x_target before 0."""
    wins = 0
    for i in range(n_paths):
        ps = simulate_sticky_exact(seed.replicate(i), m, x_start, math.inf, dt,
                                   target=x_target, stop_at_zero=True, clock_step=math.inf)
        wins += not math.isnan(ps.hit_times[x_target])
    return wilson_interval(wins, n_paths)


def sticky_occupation(seed: SeedSpec, m: SpeedMeasure, x0: float, t_end: float, n_paths: int,
                      dt: float = 1e-4, clock_step: float = 1e-3):
    """Per-path (occupation time at 0, driver local time, elapsed clock)."""
    out = np.empty((n_paths, 3))
    for i in range(n_paths):
        ps = simulate_sticky_exact(seed.replicate(i), m, x0, t_end, dt, clock_step=clock_step)
        out[i] = (ps.occupation_time_at_zero, ps.local_time_driver, ps.elapsed)
    return out


# ---------------------------------------------------------------- Euler schemes

@numba.njit(cache=True)
def _euler_kernel(raw, x0, b, p, dt, levels, hits, zero_level):
    x = x0
    h = math.sqrt(dt)
    clips = 0
    at_zero = 0
    for i in range(raw.shape[0]):
        if x <= zero_level:
            at_zero += 1
        v = x + b * dt + (x ** p if x > 0.0 else 0.0) * h * raw_to_normal(raw[i])
        if v < 0.0:
            v = 0.0
            clips += 1
        x = v
        for j in range(levels.shape[0]):
            if math.isnan(hits[j]) and x >= levels[j]:
                hits[j] = (i + 1) * dt
    return x, clips, at_zero


def simulate_sde_euler(seed: SeedSpec, b: float, p: float, x0: float, t_end: float, dt: float,
                       levels=(), zero_level: float = 0.0) -> PathSummary:
    """Clipped Euler scheme X' = max(X + b dt + X^p sqrt(dt) xi, 0)."""
    if not 0.0 < p < 0.5:
        raise ParameterError(f"p must lie in (0, 1/2), got {p}")
    if x0 < 0 or dt <= 0:
        raise ParameterError("x0 must be nonnegative and dt positive")
    n = int(round(t_end / dt))
    raw = seed.stream(EULER_NOISE).bit_generator().random_raw(n)
    lv = np.asarray(levels, dtype=float)
    hits = np.full(lv.size, np.nan)
    x, clips, at_zero = _euler_kernel(raw, float(x0), float(b), float(p), float(dt), lv, hits, zero_level)
    return PathSummary(final_value=float(x), hit_times=dict(zip(lv.tolist(), hits.tolist())),
                       occupation_time_at_zero=at_zero * dt, elapsed=n * dt,
                       clip_count=int(clips), steps=n)


@numba.njit(cache=True)
def _absorbed_kernel(raw, pos, st, q, h, n_max):
    # st = [y, steps, absorbed]
    y = st[0]
    k = st[1]
    n = raw.shape[0]
    while pos < n and k < n_max:
        y = y + y ** q * h * raw_to_normal(raw[pos])
        pos += 1
        k += 1
        if y <= 0.0:
            st[0] = 0.0
            st[1] = k
            st[2] = 1.0
            return pos
    st[0] = y
    st[1] = k
    return pos


def absorption_time(seed: SeedSpec, q: float, y0: float, t_max: float, dt: float) -> float:
    """Euler first time at or below 0 of dY = Y^q dB, inf if beyond t_max."""
    n_max = int(math.ceil(t_max / dt))
    bg = seed.stream(EULER_NOISE).bit_generator()
    st = np.array([float(y0), 0.0, 0.0])
    chunk = 1024
    h = math.sqrt(dt)
    while st[2] == 0.0 and st[1] < n_max:
        _absorbed_kernel(bg.random_raw(chunk), 0, st, q, h, n_max)
        chunk = min(chunk * 4, 1 << 18)
    return st[1] * dt if st[2] else math.inf


def absorption_times(seed: SeedSpec, q: float, y0: float, t_max: float, dt: float, n_paths: int,
                     start: int = 0) -> np.ndarray:
    return np.array([absorption_time(seed.replicate(start + i), q, y0, t_max, dt) for i in range(n_paths)])


def survival_exact(q: float, y0: float, T) -> np.ndarray:
    """P(T0 > T) for dY = Y^q dB from y0 (squared Bessel duality)."""
    nu = 1.0 / (2.0 * (1.0 - q))
    lam = y0 ** (2 * (1 - q)) / ((1 - q) ** 2 * 2.0 * np.asarray(T, dtype=float))
    return special.gammainc(nu, lam)


@dataclass
class SurvivalResult:
    T: np.ndarray
    survival: np.ndarray
    intervals: list
    slope: float
    slope_stderr: float
    exact: np.ndarray
    n_paths: int


def girsanov_survival(seed: SeedSpec, q: float, y0: float, T_list, n_paths: int = 10_000,
                      dt: float = 0.01) -> SurvivalResult:
    """Survival P(T0 > T) of dY = |Y|^q dB absorbed at 0, with a log-log slope."""
    if not 0.0 < q < 0.5:
        raise ParameterError(f"q must lie in (0, 1/2), got {q}")
    if y0 <= 0:
        raise ParameterError("y0 must be positive")
    T = np.sort(np.asarray(T_list, dtype=float))
    times = absorption_times(seed, q, y0, T.max(), dt, n_paths)
    surv = np.array([(times > t).sum() for t in T])
    props = [wilson_interval(int(k), n_paths) for k in surv]
    p_hat = surv / n_paths
    fit = loglog_slope(T, p_hat)
    return SurvivalResult(T, p_hat, props, fit.slope, fit.stderr, survival_exact(q, y0, T), n_paths)


# ---------------------------------------------------------------- time change

@dataclass
class TimeChange:
    tau: np.ndarray           # tau at each original grid time
    tau_prime: np.ndarray     # per-step derivative of tau
    clock: np.ndarray         # A(u) at each original grid time
    mass_on_tau: np.ndarray   # mass sampled on the uniform tau clock
    tau_grid: np.ndarray


def time_change_tau(mass_path, qv_increments, K: float, p_prime: float, dt: float,
                    n_out: int | None = None) -> TimeChange:
    """Inverse of A(u) = sum <N>'/(K M^(2p')); steps with M = 0 add dt (flat pieces).

    mass_path has one more entry than qv_increments (value before each step).
    """
    M = np.asarray(mass_path, dtype=float)
    qv = np.asarray(qv_increments, dtype=float)
    if M.size != qv.size + 1:
        raise ParameterError("mass_path must be one longer than qv_increments")
    pre = M[:-1]
    target = K * np.where(pre > 0, pre, 0.0) ** (2 * p_prime) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(pre > 0, qv / target * dt, dt)
        tp = np.where(pre > 0, target / qv, 1.0)
    a = np.where((pre > 0) & (qv <= 0), np.inf, a)
    tp = np.where((pre > 0) & (qv <= 0), 0.0, tp)
    clock = np.concatenate([[0.0], np.cumsum(a)])
    t_orig = np.arange(M.size) * dt
    finite = np.isfinite(clock)
    n_out = n_out or M.size
    top = clock[finite][-1]
    grid = np.linspace(0.0, top, n_out)
    # tau(t) = A^{-1}(t) by monotone interpolation
    tau_t = np.interp(grid, clock[finite], t_orig[finite])
    mass_tau = np.interp(tau_t, t_orig, M)
    return TimeChange(tau_t, tp, clock, mass_tau, grid)
