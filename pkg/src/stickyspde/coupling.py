"""Coupled excursion construction of two solutions driven by one noise.

An excursion j starts from X = Y = 0.  For a time eps the owner (X for even
j, Y for odd j) follows the deterministic ramp dZ = Z''/2 + 2 psi while the
other field stays at 0.  Then both fields follow the SPDE with source psi
and the same noise slice, the owner dominating the other, until the owner's
mass hits 0; both fields are reset to 0 and roles swap.

Over a trial the immigration actually received by X differs from psi * t by
A1(t, x) = psi(x) a(t), a(t) = sum_j (-1)^j |[T_j, U_j] ∩ [0, t]|, so
|A1| <= eps psi.  The trial stops when |<X,1> - <Y,1>| reaches x0
(separation) or when <X,1> v <Y,1> reaches 1 (escape), whichever is first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from ._special import raw_to_normal
from .errors import ConfigurationError, ContractError, ParameterError
from .heat_spde import (Field, GridSpec, SourceFn, StepContext, heat_into, noise_into,
                        ramp_states, zero_mass_threshold)
from .holder_lemma import pair_lags, ral_constant
from .noise import SPDE_NOISE, NoiseSlice, NoiseStream, SeedSpec, white_noise_slice
from .sde1d import p_prime

DEFAULT_KS = (8.0, 16.0, 32.0)
LADDER_KS = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


class Phase(Enum):
    RAMP = 0
    STOCHASTIC = 1


@dataclass
class CoupledState:
    X: Field
    Y: Field
    phase: Phase
    j: int
    t_start: float
    ramp_end: float
    eps: float
    p: float
    step: int = 0
    ramp_step: int = 0

    @property
    def owner(self) -> str:
        return "X" if self.j % 2 == 0 else "Y"

    @property
    def t(self) -> float:
        return self.step * self.X.grid.dt


@dataclass
class ExcursionRecord:
    j: int
    t_start: float
    t_ramp_end: float
    t_end: float
    peak_mass: float
    peak_separation: float
    hit_one: bool
    hit_x0: bool


@dataclass
class TrialResult:
    separated_first: bool
    outcome: str
    n_excursions: int
    records: list
    t_end: float
    steps: int
    vk_times: dict
    vk_flags: dict
    tau_prime_max: dict
    ledger_max: float
    ledger_ok: bool
    dominance_min: float
    violation_fraction: float
    tau_prime_active: dict = field(default_factory=dict)   # max over steps with positive mass
    mass_path: np.ndarray = field(repr=False, default=None)
    holder_path: np.ndarray = field(repr=False, default=None)


@dataclass
class ImmigrationLedger:
    """A1(t, x) = psi(x) a(t); a is rebuilt from the source scales applied to X."""

    a: np.ndarray
    eps: float

    @classmethod
    def from_phases(cls, phase, j, dt, eps) -> "ImmigrationLedger":
        scale_x = np.where(phase == 1, 1.0, np.where(j % 2 == 0, 2.0, 0.0))
        return cls(np.cumsum(scale_x - 1.0) * dt, float(eps))

    def A1(self, step: int, psi: np.ndarray) -> np.ndarray:
        return self.a[step] * psi

    def A2(self, step: int, psi: np.ndarray) -> np.ndarray:
        return -self.A1(step, psi)

    @property
    def sup(self) -> float:
        return float(np.abs(self.a).max(initial=0.0))

    def holds(self, rtol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.a) <= self.eps * (1 + rtol)))


class CouplingModel:
    """Fixed ingredients of the construction for one (grid, eps, p, source)."""

    def __init__(self, grid: GridSpec, eps: float, p: float, src: SourceFn | None = None,
                 scheme: str = "exact", zero_tol: float | None = None):
        if not 0.0 < eps < 1.0:
            raise ParameterError("eps must lie in (0, 1)")
        if not 0.0 < p < 0.5:
            raise ParameterError(f"p must lie in (0, 1/2), got {p}")
        self.grid = grid.aligned(eps)
        self.eps, self.p = float(eps), float(p)
        self.src = src or SourceFn()
        self.ctx = StepContext(self.grid, p, scheme)
        self.ramp = ramp_states(self.src, eps, self.grid)
        self.n_ramp = self.ramp.shape[0] - 1
        self.psi = self.src.cells(self.grid)
        self.srcdt = self.grid.dt * self.psi
        if zero_tol is None:
            zero_tol = zero_mass_threshold(self.grid) if scheme == "euler" else 0.0
        self.zero_tol = float(zero_tol)
        self.lags = pair_lags(self.grid.n_cells)

    def initial_state(self) -> CoupledState:
        g = self.grid
        return CoupledState(Field.zeros(g), Field.zeros(g), Phase.RAMP, 0, 0.0, self.eps, self.eps, self.p)


@numba.njit(cache=True)
def _support_window(X, Y):
    n = X.shape[0]
    lo = n
    hi = -1
    for i in range(n):
        if X[i] != 0.0 or Y[i] != 0.0:
            if i < lo:
                lo = i
            hi = i
    if hi < 0:
        return 0, 0
    lo = lo - 1 if lo > 0 else 0
    hi = hi + 2 if hi + 2 <= n else n
    return lo, hi


@numba.njit(cache=True)
def pair_holder2(X, Y, dx, beta, lags):
    """max over scheduled pairs of (|dX| + |dY|) / |dx|^beta, support window only."""
    lo, hi = _support_window(X, Y)
    w = hi - lo
    best = 0.0
    for li in range(lags.shape[0]):
        lag = lags[li]
        if lag >= w:
            break
        m = 0.0
        for i in range(lo, hi - lag):
            d = abs(X[i + lag] - X[i]) + abs(Y[i + lag] - Y[i])
            if d > m:
                m = d
        m /= (lag * dx) ** beta
        if m > best:
            best = m
    return best


@numba.njit(cache=True)
def _trial_kernel(raw, X, Y, st, ramp, srcdt, r, dx, zero_tol, x0, budget, lags, holder_stride, euler,
                  p, kappa, sig, nu, gt, et, ht,
                  o_mx, o_my, o_h, o_qv, o_phase, o_j, o_viol):
    """Run coupled steps over the rows of `raw`.

    st = [phase, j, ramp_step, step, status]; status 1 = separated,
    2 = escaped, 3 = excursion budget used up.  Per-step diagnostics are
    written to the o_* arrays and the number of steps taken is returned.
    """
    n = X.shape[0]
    n_ramp = ramp.shape[0] - 1
    gx = np.empty(n)
    gy = np.empty(n)
    xi = np.zeros(n)
    for kk in range(raw.shape[0]):
        phase = int(st[0])
        j = int(st[1])
        if phase == 0:
            rs = int(st[2]) + 1
            if j % 2 == 0:
                X[:] = ramp[rs]
                Y[:] = 0.0
            else:
                Y[:] = ramp[rs]
                X[:] = 0.0
            st[2] = rs
            if rs == n_ramp:
                st[0] = 1
        else:
            heat_into(X, gx, r, srcdt)
            heat_into(Y, gy, r, srcdt)
            for i in range(n):
                if gx[i] > 0.0 or gy[i] > 0.0:
                    xi[i] = raw_to_normal(raw[kk, i])
                else:
                    xi[i] = 0.0
            noise_into(gx, X, xi, X, euler, p, kappa, sig, nu, gt, et, ht)
            noise_into(gy, Y, xi, Y, euler, p, kappa, sig, nu, gt, et, ht)
        st[3] += 1
        mx = 0.0
        my = 0.0
        qv = 0.0
        viol = 0.0
        for i in range(n):
            mx += X[i]
            my += Y[i]
            d = Y[i] - X[i] if j % 2 == 0 else X[i] - Y[i]
            if d > viol:
                viol = d
        mx *= dx
        my *= dx
        dom = X if j % 2 == 0 else Y
        for i in range(n):
            if dom[i] > 0.0:
                qv += dom[i] ** (2.0 * p)
        o_mx[kk] = mx
        o_my[kk] = my
        o_qv[kk] = qv * dx
        o_phase[kk] = phase
        o_j[kk] = j
        o_viol[kk] = viol
        if holder_stride > 0 and int(st[3]) % holder_stride == 0:
            o_h[kk] = pair_holder2(X, Y, dx, 0.25, lags)
        else:
            o_h[kk] = np.nan
        if phase == 1:
            if max(mx, my) >= 1.0:
                st[4] = 2
                return kk + 1
            if abs(mx - my) >= x0:
                st[4] = 1
                return kk + 1
            mdom = mx if j % 2 == 0 else my
            if mdom <= zero_tol:
                X[:] = 0.0
                Y[:] = 0.0
                st[0] = 0
                st[1] = j + 1
                st[2] = 0
                if j + 1 >= budget:
                    st[4] = 3
                    return kk + 1
    return raw.shape[0]


def couple_step(s: CoupledState, noise: NoiseSlice, model: CouplingModel | None = None) -> CoupledState:
    """Advance the coupled pair by one time step (same rules as the trial kernel)."""
    model = model or CouplingModel(s.X.grid, s.eps, s.p)
    g = model.grid
    if s.X.grid != g:
        raise ContractError("state grid does not match the model grid")
    X = s.X.values.copy()
    Y = s.Y.values.copy()
    st = np.array([s.phase.value, s.j, s.ramp_step, s.step, 0], dtype=float)
    raw_dummy = np.zeros((1, g.n_cells), dtype=np.uint64)
    # the kernel reads raw words; feed it normals through the shared noise step instead
    if s.phase is Phase.RAMP:
        _trial_kernel(raw_dummy, X, Y, st, model.ramp, model.srcdt, g.ratio, g.dx, model.zero_tol,
                      math.inf, 1 << 62, model.lags, 0, model.ctx.scheme == "euler", *model.ctx.args(),
                      *_scratch(1))
    else:
        xi = np.ascontiguousarray(noise.values, dtype=float)
        gx = np.empty(g.n_cells)
        gy = np.empty(g.n_cells)
        heat_into(X, gx, g.ratio, model.srcdt)
        heat_into(Y, gy, g.ratio, model.srcdt)
        noise_into(gx, X.copy(), xi, X, model.ctx.scheme == "euler", *model.ctx.args())
        noise_into(gy, Y.copy(), xi, Y, model.ctx.scheme == "euler", *model.ctx.args())
        st[3] += 1
        dom = X if s.j % 2 == 0 else Y
        if dom.sum() * g.dx <= model.zero_tol:
            X[:] = 0.0
            Y[:] = 0.0
            st[0], st[1], st[2] = 0, s.j + 1, 0
    phase = Phase(int(st[0]))
    j = int(st[1])
    t_start = s.t_start if j == s.j else st[3] * g.dt
    return CoupledState(Field(g, X), Field(g, Y), phase, j, t_start, t_start + model.eps,
                        model.eps, model.p, int(st[3]), int(st[2]))


def _scratch(n):
    return (np.empty(n), np.empty(n), np.empty(n), np.empty(n),
            np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64), np.empty(n))


def check_separation_params(eps: float, b: float, x0: float):
    if not 2 * b * eps < x0 < 1:
        raise ConfigurationError(
            f"separation level must satisfy 2*b*eps < x0 < 1; got 2*b*eps = {2 * b * eps:g}, x0 = {x0:g}")


def run_separation_trial(seed: SeedSpec, eps: float, p: float, x0: float, grid: GridSpec,
                         src: SourceFn | None = None, ks=DEFAULT_KS, max_excursions: int | None = None,
                         model: CouplingModel | None = None, holder_stride: int = 1,
                         chunk: int = 2048, keep_paths: bool = False) -> TrialResult:
    """One trial of the construction; see the module docstring."""
    src = src or SourceFn()
    check_separation_params(eps, src.b, x0)
    model = model or CouplingModel(grid, eps, p, src)
    g = model.grid
    budget = max_excursions or math.ceil(10.0 / eps)
    X = np.zeros(g.n_cells)
    Y = np.zeros(g.n_cells)
    st = np.zeros(5)
    stream = NoiseStream(seed.stream(SPDE_NOISE), g.n_cells)
    parts = []
    while True:
        raw = stream.raw(chunk)
        sc = _scratch(chunk)
        used = _trial_kernel(raw, X, Y, st, model.ramp, model.srcdt, g.ratio, g.dx, model.zero_tol,
                             x0, budget, model.lags, holder_stride, model.ctx.scheme == "euler",
                             *model.ctx.args(), *sc)
        parts.append(tuple(a[:used] for a in sc))
        if st[4] != 0:
            break
    mx, my, hol, qv, phase, jj, viol = (np.concatenate([p_[i] for p_ in parts]) for i in range(7))
    outcome = {1: "separated", 2: "escaped"}.get(int(st[4]), "budget")
    return _summarize(model, eps, x0, ks, outcome, mx, my, hol, qv, phase, jj, viol, keep_paths)


def _summarize(model, eps, x0, ks, outcome, mx, my, hol, qv, phase, jj, viol, keep_paths):
    g = model.grid
    dt = g.dt
    n = mx.size
    t = (np.arange(n) + 1) * dt
    records = []
    starts = np.flatnonzero(np.diff(np.concatenate([[-1], jj])) != 0)
    ends = np.concatenate([starts[1:], [n]])
    for s0, e0 in zip(starts, ends):
        sep = np.abs(mx[s0:e0] - my[s0:e0])
        top = np.maximum(mx[s0:e0], my[s0:e0])
        t0 = s0 * dt
        records.append(ExcursionRecord(int(jj[s0]), float(t0), float(t0 + model.n_ramp * dt), float(e0 * dt),
                                       float(top.max()), float(sep.max()),
                                       bool(top.max() >= 1.0), bool((sep >= x0).any())))
    # immigration ledger, rebuilt from the source scales applied to X each step
    led = ImmigrationLedger.from_phases(phase, jj, dt, eps)
    ledger_max, ledger_ok = led.sup, led.holds()
    # V_k and the time-change derivative of the dominant mass
    pp = p_prime(model.p)
    mdom = np.where(jj % 2 == 0, mx, my)
    vk_times, vk_flags, taus, active = {}, {}, {}, {}
    h = np.where(np.isnan(hol), -np.inf, hol)
    for k in ks:
        over = np.flatnonzero(h > k)
        vk = over[0] if over.size else n
        vk_times[k] = float((vk + 1) * dt) if over.size else math.inf
        vk_flags[k] = bool(over.size)
        K = ral_constant(0.25, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = np.where(mdom > 0, K * mdom ** (2 * pp) / qv, 1.0)
        tp[vk:] = 1.0            # padded process after V_k
        taus[k] = float(tp.max(initial=1.0))
        live = mdom[:vk] > 0
        active[k] = float(tp[:vk][live].max(initial=0.0))
    top = np.where(jj % 2 == 0, mx, my)
    frac = np.where(top > 0, viol * g.dx / np.maximum(top, 1e-300), 0.0)
    return TrialResult(outcome == "separated", outcome, int(jj.max(initial=0)) + 1, records, n * dt, n,
                       vk_times, vk_flags, taus, ledger_max, ledger_ok, float(-viol.max(initial=0.0)),
                       float(frac.max(initial=0.0)), active,
                       np.column_stack([t, mx, my]) if keep_paths else None,
                       hol if keep_paths else None)


def replay_difference(seed: SeedSpec, model: CouplingModel, X0: np.ndarray, Y0: np.ndarray,
                      start_step: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Recompute D = X - Y over a stochastic stretch from the stored noise.

    Y is stepped as usual and D with the difference noise
    N(g_Y + g_D, xi) - N(g_Y, xi) (exact scheme) or [(Y+D)^p - Y^p] xi
    (Euler, with each of Y and X = Y + D clipped at 0), g_D being the heat
    step of D without source.  Returns (D, X - Y)
    where the second array comes from the direct coupled stepping.
    """
    g = model.grid
    euler = model.ctx.scheme == "euler"
    args = model.ctx.args()
    X = X0.astype(float).copy()
    Y = Y0.astype(float).copy()
    D = X - Y
    Yr = Y.copy()
    zero = np.zeros(g.n_cells)
    gx, gy, gd, gyr = (np.empty(g.n_cells) for _ in range(4))
    tmp = np.empty(g.n_cells)
    for k in range(start_step, start_step + n_steps):
        xi = white_noise_slice(seed.stream(SPDE_NOISE), k, g.n_cells).values
        heat_into(X, gx, g.ratio, model.srcdt)
        heat_into(Y, gy, g.ratio, model.srcdt)
        noise_into(gx, X.copy(), xi, X, euler, *args)
        noise_into(gy, Y.copy(), xi, Y, euler, *args)
        heat_into(Yr, gyr, g.ratio, model.srcdt)
        heat_into(D, gd, g.ratio, zero)
        if euler:
            y_pre = gyr + Yr ** model.p * model.ctx.sig * xi
            d_pre = gd + (np.maximum(Yr + D, 0.0) ** model.p - Yr ** model.p) * model.ctx.sig * xi
            # clipping acts on Y and on X = Y + D separately
            Yr = np.maximum(y_pre, 0.0)
            D = np.maximum(y_pre + d_pre, 0.0) - Yr
            Yr[gyr <= 0.0] = 0.0
            dead = (gyr + gd) <= 0.0
            D[dead] = -Yr[dead]
        else:
            noise_into(gyr + gd, Yr + D, xi, tmp, False, *args)
            new_y = np.empty(g.n_cells)
            noise_into(gyr, Yr, xi, new_y, False, *args)
            D = tmp - new_y
            Yr = new_y
    return D, X - Y


# ---------------------------------------------------------------- signed excursions

@dataclass
class SignedResult:
    escaped: bool
    excursion_count: int
    escape_time: float
    mass_path: np.ndarray = field(repr=False)


@numba.njit(cache=True)
def _signed_kernel(raw, F, st, start, r, dx, zero_tol, nosrc, p, kappa, sig, nu, gt, et, ht, masses):
    """st = [sign, count, step, escaped]; F holds |X|."""
    n = F.shape[0]
    g = np.empty(n)
    xi = np.zeros(n)
    for kk in range(raw.shape[0]):
        heat_into(F, g, r, nosrc)
        sgn = st[0]
        for i in range(n):
            xi[i] = sgn * raw_to_normal(raw[kk, i]) if g[i] > 0.0 else 0.0
        noise_into(g, F, xi, F, False, p, kappa, sig, nu, gt, et, ht)
        st[2] += 1
        m = 0.0
        for i in range(n):
            m += F[i]
        m *= dx
        masses[kk] = sgn * m
        if m >= 1.0:
            st[3] = 1
            return kk + 1
        if m <= zero_tol:
            st[0] = -sgn
            st[1] += 1
            F[:] = start
    return raw.shape[0]


def run_signed_excursions(seed: SeedSpec, eps: float, p: float, T_horizon: float, grid: GridSpec,
                          src: SourceFn | None = None, record_every: int = 16,
                          chunk: int = 2048) -> SignedResult:
    """Excursions of dX = X''/2 + |X|^p dW started alternately at +-eps psi.

    |X| is carried as a nonnegative field whose noise is multiplied by the
    current sign, so the signed path is driven by one white noise.  A new
    excursion with the opposite sign starts when the mass reaches 0; the run
    escapes when |<X,1>| reaches 1 before T_horizon.
    """
    if not 0.0 < eps < 1.0:
        raise ParameterError("eps must lie in (0, 1)")
    if not 0.0 < p < 0.5:
        raise ParameterError(f"p must lie in (0, 1/2), got {p}")
    src = src or SourceFn()
    ctx = StepContext(grid, p, "exact")
    start = eps * src.cells(grid) / src.b
    F = start.copy()
    st = np.array([1.0, 1.0, 0.0, 0.0])
    stream = NoiseStream(seed.stream(SPDE_NOISE), grid.n_cells)
    n_max = grid.steps(T_horizon) if math.isfinite(T_horizon) else None
    kept = []
    nosrc = np.zeros(grid.n_cells)
    while st[3] == 0 and (n_max is None or st[2] < n_max):
        c = chunk if n_max is None else int(min(chunk, n_max - st[2]))
        masses = np.empty(c)
        used = _signed_kernel(stream.raw(c), F, st, start, grid.ratio, grid.dx, 0.0, nosrc,
                              *ctx.args(), masses)
        kept.append(masses[:used][::record_every])
    esc = bool(st[3])
    return SignedResult(esc, int(st[1]), st[2] * grid.dt if esc else math.inf,
                        np.concatenate(kept) if kept else np.zeros(0))
