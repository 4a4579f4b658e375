"""Seeded white noise, Brownian increments and reflecting Brownian motion.

Every random quantity in the package is drawn from a PCG64 stream keyed by a
:class:`SeedSpec`.  A stream is consumed at a fixed rate of one raw 64-bit
word per normal draw, so the draw for (step k, cell i) of an n-cell field is
always word ``k*n + i`` of its stream.  Slices can therefore be regenerated
in any order, by any worker, and come out bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from ._special import raw_to_normal, raw_to_normal_array
from .errors import ParameterError

# stream tags used across the package
SPDE_NOISE = 0
DRIVER_NOISE = 1
EULER_NOISE = 2
GENERATOR = 3
SUITE_PARAMS = 4

# Discrete local time is  c * sqrt(dt) * #{i : R_i < sqrt(dt)}.  Calibrating
# E[L_1] of the walk from 0 against E|B_1| = sqrt(2/pi) gives
# c = 1/2 + 0.16*sqrt(dt) + O(dt); the limit 1/2 is used (calibrate_local_time).
LOCAL_TIME_CONSTANT = 0.5


@dataclass(frozen=True)
class SeedSpec:
    """Key of one independent random stream."""

    master_seed: int
    replicate_index: int = 0
    stream_tag: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ParameterError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.replicate_index < 0 or self.stream_tag < 0:
            raise ParameterError("replicate_index and stream_tag must be nonnegative")

    def bit_generator(self, position: int = 0) -> np.random.PCG64:
        ss = np.random.SeedSequence(int(self.master_seed),
                                    spawn_key=(int(self.replicate_index), int(self.stream_tag)))
        bg = np.random.PCG64(ss)
        if position:
            bg.advance(int(position))
        return bg

    def stream(self, tag: int) -> "SeedSpec":
        return replace(self, stream_tag=tag)

    def replicate(self, index: int) -> "SeedSpec":
        return replace(self, replicate_index=index)


@dataclass(frozen=True)
class NoiseSlice:
    """Standard normal draws for one time step, one per spatial cell."""

    values: np.ndarray
    step_index: int = 0

    def __len__(self):
        return self.values.shape[0]


class NoiseStream:
    """Sequential reader over a seeded stream, in units of n_cells per step.

    Reading steps k, k+1, ... from a stream yields exactly the slices that
    white_noise_slice(seed, k, n_cells) would return one by one.
    """

    def __init__(self, seed: SeedSpec, n_cells: int, start_step: int = 0):
        if n_cells < 1:
            raise ParameterError("n_cells must be at least 1")
        self.seed = seed
        self.n_cells = int(n_cells)
        self.step = int(start_step)
        self._bg = seed.bit_generator(self.step * self.n_cells)

    def raw(self, n_steps: int) -> np.ndarray:
        out = self._bg.random_raw(n_steps * self.n_cells).reshape(n_steps, self.n_cells)
        self.step += n_steps
        return out

    def normals(self, n_steps: int) -> np.ndarray:
        raw = self.raw(n_steps)
        return raw_to_normal_array(raw.ravel()).reshape(raw.shape)

    def next_slice(self) -> NoiseSlice:
        k = self.step
        return NoiseSlice(self.normals(1)[0], k)


def normals_from_raw(raw: np.ndarray) -> np.ndarray:
    raw = np.ascontiguousarray(raw, dtype=np.uint64)
    return raw_to_normal_array(raw.ravel()).reshape(raw.shape)


def standard_normals(seed: SeedSpec, n: int, position: int = 0) -> np.ndarray:
    """n normals starting at word `position` of the stream."""
    return normals_from_raw(seed.bit_generator(position).random_raw(n))


def white_noise_slice(seed: SeedSpec, step_index: int, n_cells: int) -> NoiseSlice:
    if n_cells < 1:
        raise ParameterError("n_cells must be at least 1")
    if step_index < 0:
        raise ParameterError("step_index must be nonnegative")
    raw = seed.bit_generator(step_index * n_cells).random_raw(n_cells)
    return NoiseSlice(normals_from_raw(raw), step_index)


def white_noise_integral(values: np.ndarray, dt: float, dx: float, phi=None) -> float:
    """Discrete  ∫∫ φ dW  over the box covered by `values` (steps x cells)."""
    incr = values * math.sqrt(dt * dx)
    if phi is None:
        return float(incr.sum())
    return float((incr * phi).sum())


@dataclass
class ReflectedPath:
    times: np.ndarray
    values: np.ndarray
    local_time: np.ndarray
    dt: float = field(default=0.0)


@numba.njit(cache=True)
def _reflect_kernel(raw, x0, dt, c, values, local):
    h = math.sqrt(dt)
    r = x0
    lt = 0.0
    values[0] = r
    local[0] = 0.0
    for i in range(raw.shape[0]):
        if r < h:
            lt += c * h
        r = abs(r + h * raw_to_normal(raw[i]))
        values[i + 1] = r
        local[i + 1] = lt


def reflecting_bm(seed: SeedSpec, dt: float, n_steps: int, x0: float = 0.0,
                  constant: float = LOCAL_TIME_CONSTANT) -> ReflectedPath:
    """Reflected Euler walk R_{i+1} = |R_i + sqrt(dt) xi_i| with discrete local time."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if x0 < 0:
        raise ParameterError("x0 must be nonnegative")
    raw = seed.bit_generator().random_raw(int(n_steps))
    values = np.empty(n_steps + 1)
    local = np.empty(n_steps + 1)
    _reflect_kernel(raw, float(x0), float(dt), float(constant), values, local)
    return ReflectedPath(np.arange(n_steps + 1) * dt, values, local, dt)


@numba.njit(cache=True)
def _count_kernel(raw, n_paths, n_steps):
    # number of pre-step visits below one step size, in walk units (dt = 1)
    out = np.empty(n_paths)
    for j in range(n_paths):
        r = 0.0
        cnt = 0
        base = j * n_steps
        for i in range(n_steps):
            if r < 1.0:
                cnt += 1
            r = abs(r + raw_to_normal(raw[base + i]))
        out[j] = cnt
    return out


def calibrate_local_time(seed: SeedSpec, n_paths: int, n_steps: int):
    """Estimate the local-time constant from walks started at 0.

    Returns (constant, stderr): the c making c * E[sqrt(dt) * count] over
    [0, 1] equal to sqrt(2/pi), with dt = 1/n_steps.
    """
    raw = seed.bit_generator().random_raw(n_paths * n_steps)
    counts = _count_kernel(raw, n_paths, n_steps) / math.sqrt(n_steps)
    m = counts.mean()
    se = counts.std(ddof=1) / math.sqrt(n_paths)
    c = math.sqrt(2.0 / math.pi) / m
    return c, c * se / m
