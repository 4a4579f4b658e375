"""Exact-in-law noise step for one grid cell.

Between heat steps each cell follows  dF = F^p dB / sqrt(dx), absorbed at 0.
Q = F^(2(1-p)) (1-p)^-2 dx is a squared Bessel process of dimension
(1-2p)/(1-p), whose transition law is known in closed form:

    P(alive at dt) = P(nu, lam),        nu = 1/(2(1-p)),  lam = Q0/(2 dt)
    P(Q_dt > y)    = chi2'cdf(2 lam; df 2 nu, noncentrality y/dt)

so F_dt is a deterministic, monotone function of (F_0, xi) with xi ~ N(0,1):
the lowest 1-P(nu, lam) quantiles are absorbed, the rest are mapped through
the conditional quantile.  The conditional quantile of Z = Q_dt/(2 dt) is
tabulated on a grid of (s = sqrt(lam), eta = conditional normal score), and
F_dt = F_0 * Z^nu / (P * E[Z^nu | alive]) with the expectation taken of the
interpolant itself, so the step is a martingale to rounding error.  Above
s_max the law is Gaussian to within a few percent and an Euler step is used.
"""
from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import special, stats

from ._special import ndtri, norm_sf

S_MAX = 40.0
HS = 0.05
ETA_MAX = 8.5
HETA = 0.05
H_FINE = 0.001
_VERSION = 1


@dataclass(frozen=True)
class CEVTable:
    p: float
    nu: float
    g: np.ndarray        # Z^nu at (s_j, eta_i)
    e: np.ndarray        # E over eta ~ N(0,1) of the interpolated row
    h: np.ndarray        # log P(nu, s^2) - 2 nu log s on the fine grid

    def args(self):
        return (self.nu, self.g, self.e, self.h)


def _row_expectations(g, eta):
    lo, hi = eta[:-1], eta[1:]
    ga, gb = g[:, :-1], g[:, 1:]
    slope = (gb - ga) / (hi - lo)
    mass0 = stats.norm.cdf(hi) - stats.norm.cdf(lo)
    mass1 = stats.norm.pdf(lo) - stats.norm.pdf(hi)
    inner = ((ga - slope * lo) * mass0 + slope * mass1).sum(axis=1)
    return inner + g[:, 0] * stats.norm.cdf(eta[0]) + g[:, -1] * stats.norm.sf(eta[-1])


def _build(p: float) -> CEVTable:
    nu = 1.0 / (2.0 * (1.0 - p))
    s = np.arange(0.0, S_MAX + 1.5 * HS, HS)
    eta = np.arange(-ETA_MAX, ETA_MAX + 0.5 * HETA, HETA)
    lam = s[:, None] ** 2
    surv_alive = stats.norm.sf(eta)[None, :]
    with np.errstate(all="ignore"):
        pi = special.gammainc(nu, lam)
        nc = special.chndtrinc(2.0 * lam, 2.0 * nu, surv_alive * pi)
    z = nc / 2.0
    z[0] = -special.log_ndtr(-eta)          # lam -> 0: conditional law is Exp(1)
    if not np.all(np.isfinite(z)):
        raise RuntimeError("non-finite entries in quantile table")
    z = np.maximum.accumulate(np.maximum(z, 0.0), axis=1)
    g = z ** nu
    e = _row_expectations(g, eta)
    sf = np.arange(0.0, S_MAX + 2 * HS + H_FINE, H_FINE)
    h = np.empty_like(sf)
    h[0] = -special.gammaln(nu + 1.0)
    h[1:] = np.log(special.gammainc(nu, sf[1:] ** 2)) - 2.0 * nu * np.log(sf[1:])
    return CEVTable(p, nu, g, e, h)


def _cache_dir() -> Path | None:
    root = os.environ.get("STICKYSPDE_CACHE")
    if root == "":
        return None
    base = Path(root) if root else Path.home() / ".cache" / "stickyspde"
    try:
        base.mkdir(parents=True, exist_ok=True)
    except OSError:
        return None
    return base


@functools.lru_cache(maxsize=16)
def cev_table(p: float) -> CEVTable:
    """Quantile table for exponent p, memoised in-process and on disk."""
    p = float(p)
    d = _cache_dir()
    path = None
    if d is not None:
        path = d / f"cev_v{_VERSION}_{p.hex()}_{S_MAX}_{HS}_{ETA_MAX}_{HETA}.npz"
        if path.exists():
            try:
                z = np.load(path)
                return CEVTable(p, float(z["nu"]), z["g"], z["e"], z["h"])
            except (OSError, ValueError, KeyError):
                pass
    t = _build(p)
    if path is not None:
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
        try:
            np.savez(tmp, nu=t.nu, g=t.g, e=t.e, h=t.h)
            os.replace(tmp, path)
        except OSError:
            pass
    return t


@numba.njit(cache=True)
def cev_sample(g0, xi, p, kappa, sig, nu, gt, et, ht):
    """Value after one noise sub-step from g0 >= 0 with driving normal xi.

    kappa = dx / (2 (1-p)^2 dt) converts g0 to lam; sig = sqrt(dt/dx).
    """
    if g0 <= 0.0:
        return 0.0
    lam = g0 ** (2.0 * (1.0 - p)) * kappa
    s = math.sqrt(lam)
    if s >= S_MAX:
        v = g0 + g0 ** p * sig * xi
        return v if v > 0.0 else 0.0
    y = s / H_FINE
    k = int(y)
    w = y - k
    logpi = (1.0 - w) * ht[k] + w * ht[k + 1] + 2.0 * nu * math.log(s)
    pi = math.exp(logpi) if logpi < 0.0 else 1.0
    q = norm_sf(xi)
    if q >= pi:
        return 0.0
    eta = -ndtri(q / pi)
    y = s / HS
    j = int(y)
    a = y - j
    c = (eta + ETA_MAX) / HETA
    m = gt.shape[1] - 1
    if c <= 0.0:
        i = 0
        b = 0.0
    elif c >= m:
        i = m - 1
        b = 1.0
    else:
        i = int(c)
        b = c - i
    r0 = (1.0 - b) * gt[j, i] + b * gt[j, i + 1]
    r1 = (1.0 - b) * gt[j + 1, i] + b * gt[j + 1, i + 1]
    gz = (1.0 - a) * r0 + a * r1
    ez = (1.0 - a) * et[j] + a * et[j + 1]
    return g0 * gz / (pi * ez)


def cev_reference(g0: np.ndarray, p: float, dx: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Independent exact sampler (Poisson mixture of Gammas) used as an oracle."""
    nu = 1.0 / (2.0 * (1.0 - p))
    c = (1.0 - p) ** 2 / dx
    g0 = np.asarray(g0, dtype=float)
    lam = g0 ** (2.0 * (1.0 - p)) / c / (2.0 * dt)
    G = rng.gamma(nu, size=g0.shape)
    alive = G < lam
    K = rng.poisson(np.where(alive, lam - G, 0.0))
    z = rng.gamma(K + 1.0)
    return np.where(alive, (c * 2.0 * dt * z) ** (1.0 / (2.0 * (1.0 - p))), 0.0)
