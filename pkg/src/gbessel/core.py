"""Isotropic G-functions, volatility controls and controlled path simulation.

Under the isotropic (trace) class the generator reduces to the scalar function
``g_prime(x) = (sigma_hi**2 * x^+ - sigma_lo**2 * x^-) / 2`` applied to the
trace of the Hessian.  A d-dimensional G-Brownian motion is realised, one
probability measure at a time, as ``dB = theta * dW`` where ``W`` is a
classical Brownian motion and the scalar variance ``nu = theta**2`` is chosen
by a :class:`ControlPolicy` inside ``[sigma_lo**2, sigma_hi**2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "BandError",
    "ControlError",
    "VolatilityBand",
    "GammaSet",
    "TimeGrid",
    "ControlPolicy",
    "ConstantControl",
    "PiecewiseControl",
    "BangBangControl",
    "FeedbackControl",
    "GPath",
    "DimensionCheck",
    "g_prime",
    "g_sup",
    "dimension_check",
    "draw_normals",
    "draw_uniforms",
    "coarsen_normals",
    "simulate_gpath",
    "simulate_paths",
    "realized_covariation",
    "check_nu",
    "fit_order",
]


class BandError(ValueError):
    """Raised for an invalid volatility band or dimension."""


class ControlError(RuntimeError):
    """Raised when a control emits a variance outside the band."""


@dataclass(frozen=True)
class VolatilityBand:
    """Volatility interval ``[sigma_lo, sigma_hi]`` with ``0 < sigma_lo <= sigma_hi``."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (0.0 < lo <= hi < math.inf):
            raise BandError(f"need 0 < sigma_lo <= sigma_hi < inf, got ({lo}, {hi})")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    @property
    def nu_lo(self) -> float:
        return self.sigma_lo**2

    @property
    def nu_hi(self) -> float:
        return self.sigma_hi**2

    def rho(self) -> float:
        """``sigma_lo**2 / (2 sigma_hi**2)``, always in ``(0, 1/2]``."""
        return self.nu_lo / (2.0 * self.nu_hi)

    def ratio_floor(self) -> int:
        # guard against 3.9999999 from squaring
        return int(math.floor(self.nu_hi / self.nu_lo + 1e-12))

    def contains(self, nu) -> bool:
        nu = np.asarray(nu, dtype=float)
        return bool(np.all((nu >= self.nu_lo) & (nu <= self.nu_hi)))

    def to_dict(self) -> dict:
        return {"sigma_lo": self.sigma_lo, "sigma_hi": self.sigma_hi}


def g_prime(x, band: VolatilityBand):
    """Scalar generator ``(sigma_hi^2 x^+ - sigma_lo^2 x^-) / 2``; vectorised."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * (band.nu_hi * np.maximum(x, 0.0) - band.nu_lo * np.maximum(-x, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GammaSet:
    """Finite set of symmetric positive semidefinite covariance matrices."""

    matrices: tuple

    def __post_init__(self):
        mats = tuple(np.array(m, dtype=float) for m in self.matrices)
        if not mats:
            raise ValueError("gamma set is empty")
        dim = mats[0].shape
        for m in mats:
            if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape != dim:
                raise ValueError("gamma matrices must be square and of equal size")
            if not np.allclose(m, m.T, rtol=0, atol=1e-12):
                raise ValueError("gamma matrix is not symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError("gamma matrix is not positive semidefinite")
            m.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0]

    @classmethod
    def isotropic(cls, band: VolatilityBand, d: int) -> "GammaSet":
        """The endpoints ``{nu I : nu in {sigma_lo^2, sigma_hi^2}}``."""
        eye = np.eye(d)
        return cls((band.nu_lo * eye, band.nu_hi * eye))


def g_sup(A, gamma: GammaSet) -> float:
    """``max_gamma tr(gamma A) / 2`` over a finite gamma set."""
    A = np.asarray(A, dtype=float)
    if A.shape != (gamma.dim, gamma.dim):
        raise ValueError(f"matrix shape {A.shape} does not match gamma dimension {gamma.dim}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise ValueError("A must be symmetric")
    return 0.5 * max(float(np.sum(g * A)) for g in gamma.matrices)


@dataclass(frozen=True)
class DimensionCheck:
    passed: bool
    threshold: int

    def __bool__(self):
        return self.passed


def dimension_check(d: int, band: VolatilityBand, require_uniqueness: bool = False) -> DimensionCheck:
    """Check ``d >= floor(sigma_hi^2/sigma_lo^2) + 1`` (and ``>= 3`` for uniqueness)."""
    if int(d) != d or d < 2:
        raise BandError(f"dimension must be an integer >= 2, got {d}")
    threshold = band.ratio_floor() + 1
    if require_uniqueness:
        threshold = max(threshold, 3)
    return DimensionCheck(passed=d >= threshold, threshold=threshold)


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > 0):
            raise ValueError("t_end must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be an integer >= 1")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        k = round(t / self.dt)
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"time {t} is not a point of the grid")
        return int(k)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_end, self.n_steps * factor)

    def to_dict(self) -> dict:
        return {"t_end": self.t_end, "n_steps": self.n_steps}


# ---------------------------------------------------------------------------
# controls


class ControlPolicy:
    """A variance selector ``nu_t`` evaluated at the left end of each step.

    Open-loop policies implement :meth:`schedule`; feedback policies set
    ``state_dependent = True`` and implement :meth:`nu`.
    """

    state_dependent = False

    def schedule(self, grid: TimeGrid) -> np.ndarray:
        """Per-step variances (length ``n_steps``) for open-loop policies."""
        return np.array([self.nu(t, None) for t in grid.times[:-1]], dtype=float)

    def nu(self, t: float, x):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"


@dataclass(frozen=True, repr=False)
class ConstantControl(ControlPolicy):
    value: float

    def nu(self, t, x):
        if x is None:
            return self.value
        return np.full(np.shape(x)[0], self.value)

    def schedule(self, grid):
        return np.full(grid.n_steps, self.value)

    def describe(self):
        return {"kind": "constant", "nu": self.value}


@dataclass(frozen=True, repr=False)
class PiecewiseControl(ControlPolicy):
    """``values[i]`` on ``[breakpoints[i-1], breakpoints[i])``; needs ``len(values) == len(breakpoints) + 1``."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("need one more value than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    def _at(self, t):
        idx = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
        return np.asarray(self.values)[idx]

    def nu(self, t, x):
        v = float(self._at(t))
        return v if x is None else np.full(np.shape(x)[0], v)

    def schedule(self, grid):
        return self._at(grid.times[:-1]).astype(float)

    def describe(self):
        return {"kind": "piecewise", "breakpoints": list(self.breakpoints), "values": list(self.values)}


class BangBangControl(PiecewiseControl):
    """Alternates between the band endpoints at the given switch times."""

    def __init__(self, switch_times: Sequence[float], band: VolatilityBand, start_high: bool = True):
        first, second = (band.nu_hi, band.nu_lo) if start_high else (band.nu_lo, band.nu_hi)
        values = [first if i % 2 == 0 else second for i in range(len(switch_times) + 1)]
        super().__init__(tuple(switch_times), tuple(values))
        object.__setattr__(self, "start_high", bool(start_high))

    def describe(self):
        return {"kind": "bang_bang", "switch_times": list(self.breakpoints),
                "start_high": self.start_high}


@dataclass(frozen=True, repr=False)
class FeedbackControl(ControlPolicy):
    """Bang-bang feedback: ``sigma_hi^2`` where ``hint(t, x) >= 0`` else ``sigma_lo^2``.

    ``hint`` must only look at the current time and state, which keeps the
    policy adapted.  ``high_when_positive=False`` mirrors the choice.
    """

    hint: Callable
    band: VolatilityBand
    high_when_positive: bool = True
    name: str = "feedback"

    state_dependent = True

    def nu(self, t, x):
        h = np.asarray(self.hint(t, x), dtype=float)
        hi = h >= 0.0 if self.high_when_positive else h < 0.0
        return np.where(hi, self.band.nu_hi, self.band.nu_lo)

    def schedule(self, grid):
        raise TypeError("feedback controls have no open-loop schedule")

    def describe(self):
        return {"kind": "feedback", "name": self.name, "high_when_positive": self.high_when_positive}


def check_nu(nu, band: VolatilityBand, policy) -> None:
    nu = np.asarray(nu)
    if not band.contains(nu):
        bad = nu[(nu < band.nu_lo) | (nu > band.nu_hi)]
        raise ControlError(f"{policy!r} emitted nu={bad.flat[0]!r} outside "
                           f"[{band.nu_lo}, {band.nu_hi}]")


# ---------------------------------------------------------------------------
# randomness

_NORMAL_TAG = 0
_UNIFORM_TAG = 1


def _stream(seed: int, path: int, tag: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path), tag))
    return np.random.Generator(np.random.Philox(ss))


def _path_indices(paths) -> np.ndarray:
    if np.ndim(paths) != 1:
        raise TypeError("paths must be a 1-D sequence of path indices, e.g. range(n)")
    return np.asarray(paths, dtype=np.int64)


def draw_normals(seed: int, paths, n_steps: int, d: int) -> np.ndarray:
    """Standard normals of shape ``(len(paths), n_steps, d)``.

    ``paths`` lists path indices. Each index owns an independent Philox
    substream keyed by ``(seed, path)``, so results do not depend on how
    paths are batched.
    """
    paths = _path_indices(paths)
    out = np.empty((paths.size, n_steps, d))
    for j, p in enumerate(paths):
        out[j] = _stream(seed, p, _NORMAL_TAG).standard_normal((n_steps, d))
    return out


def draw_uniforms(seed: int, paths, n_steps: int) -> np.ndarray:
    """Uniforms of shape ``(len(paths), n_steps)`` from a second per-path substream."""
    paths = _path_indices(paths)
    out = np.empty((paths.size, n_steps))
    for j, p in enumerate(paths):
        out[j] = _stream(seed, p, _UNIFORM_TAG).random(n_steps)
    return out


def coarsen_normals(normals: np.ndarray, factor: int) -> np.ndarray:
    """Aggregate ``factor`` consecutive fine-grid normals into one coarse normal.

    Summing fine increments gives the coarse increment of the same driving
    Brownian motion, which is what nested refinement studies need.
    """
    m, n, d = normals.shape
    if n % factor:
        raise ValueError(f"{n} steps cannot be coarsened by {factor}")
    return normals.reshape(m, n // factor, factor, d).sum(axis=2) / math.sqrt(factor)


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class GPath:
    """Sampled G-Brownian path(s) under one control.

    ``values`` has shape ``(n_steps + 1, d)`` for a single path or
    ``(n_paths, n_steps + 1, d)`` for a batch; ``qv`` and ``nu`` carry the
    matching leading axis.  ``qv`` is the common quadratic variation of every
    coordinate and ``nu`` the per-step variance actually used.
    """

    grid: TimeGrid
    start: np.ndarray
    values: np.ndarray
    qv: np.ndarray
    nu: np.ndarray

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    @property
    def is_batch(self) -> bool:
        return self.values.ndim == 3

    def path(self, i: int) -> "GPath":
        if not self.is_batch:
            raise IndexError("not a batch")
        return GPath(self.grid, self.start, self.values[i], self.qv[i], self.nu[i])

    def realized_qv(self) -> np.ndarray:
        """Per-coordinate running sum of squared increments, shape ``(..., n+1, d)``."""
        sq = self.increments**2
        out = np.zeros_like(self.values)
        np.cumsum(sq, axis=-2, out=out[..., 1:, :])
        return out


def _as_start(start, d: int) -> np.ndarray:
    x = np.zeros(d) if start is None else np.asarray(start, dtype=float).reshape(-1)
    if x.size == 1 and d > 1:
        x = np.concatenate([x, np.zeros(d - 1)])
    if x.shape != (d,):
        raise ValueError(f"start point must have {d} coordinates")
    return x


def _integrate(grid, band, start, policy, normals):
    m, n, d = normals.shape
    sqdt = math.sqrt(grid.dt)
    if not policy.state_dependent:
        nu = policy.schedule(grid)
        check_nu(nu, band, policy)
        nu = np.broadcast_to(nu, (m, n)).copy()
        inc = np.sqrt(nu)[:, :, None] * sqdt * normals
        values = np.empty((m, n + 1, d))
        values[:, 0, :] = start
        np.cumsum(inc, axis=1, out=values[:, 1:, :])
        values[:, 1:, :] += start
    else:
        values = np.empty((m, n + 1, d))
        values[:, 0, :] = start
        nu = np.empty((m, n))
        times = grid.times
        for k in range(n):
            nk = np.broadcast_to(np.asarray(policy.nu(times[k], values[:, k, :]), dtype=float), (m,))
            check_nu(nk, band, policy)
            nu[:, k] = nk
            values[:, k + 1, :] = values[:, k, :] + (np.sqrt(nk) * sqdt)[:, None] * normals[:, k, :]
    qv = np.zeros((m, n + 1))
    np.cumsum(nu * grid.dt, axis=1, out=qv[:, 1:])
    return values, qv, nu


def simulate_paths(grid: TimeGrid, band: VolatilityBand, d: int, start, policy: ControlPolicy,
                   seed: int = 0, n_paths: int = 1, *, first_path: int = 0,
                   normals: Optional[np.ndarray] = None,
                   check_dimension: bool = False) -> GPath:
    """Batch of controlled paths ``dB = sqrt(nu_k) sqrt(dt) Z_k`` started at ``start``.

    ``normals`` (shape ``(n_paths, n_steps, d)``) overrides the seeded
    draws; it is the hook for common random numbers and frozen paths.
    """
    if check_dimension and not dimension_check(d, band):
        raise BandError(f"d={d} is below the dimension threshold "
                        f"{dimension_check(d, band).threshold} for band {band}")
    x0 = _as_start(start, d)
    if normals is None:
        normals = draw_normals(seed, np.arange(first_path, first_path + n_paths), grid.n_steps, d)
    normals = np.asarray(normals, dtype=float)
    if normals.shape[1:] != (grid.n_steps, d):
        raise ValueError(f"normals shape {normals.shape} does not match grid/dimension")
    values, qv, nu = _integrate(grid, band, x0, policy, normals)
    return GPath(grid, x0, values, qv, nu)


def simulate_gpath(grid: TimeGrid, band: VolatilityBand, d: int, start, policy: ControlPolicy,
                   seed: int = 0, *, path_index: int = 0, normals: Optional[np.ndarray] = None,
                   check_dimension: bool = True) -> GPath:
    """Single controlled G-Brownian path; deterministic in ``(seed, path_index)``."""
    if normals is not None:
        normals = np.asarray(normals, dtype=float)[None]
    batch = simulate_paths(grid, band, d, start, policy, seed, 1, first_path=path_index,
                           normals=normals, check_dimension=check_dimension)
    return batch.path(0)


def realized_covariation(path: GPath, i: int, j: int) -> np.ndarray:
    """Running sum of ``dB_i dB_j`` along the path(s)."""
    inc = path.increments
    prod = inc[..., i] * inc[..., j]
    out = np.zeros(path.values.shape[:-1])
    np.cumsum(prod, axis=-1, out=out[..., 1:])
    return out


def fit_order(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``.

    Returns ``inf`` when every error is exactly zero (nothing left to converge).
    """
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.size < 4:
        raise ValueError("need at least 4 refinement levels")
    if np.all(err == 0.0):
        return math.inf
    if np.any(err <= 0.0):
        raise ValueError("errors must be positive to fit an order")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])
