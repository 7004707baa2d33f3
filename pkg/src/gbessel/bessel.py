"""G-Bessel processes: radial part of an isotropic G-Brownian motion.

Covers the pathwise objects ``R = |B^x|`` and the driver
``beta = sum_i int B^(i)/R dB^(i)``, the radial SDE
``R_t = r + beta_t + (d-1)/2 int 1/R d<beta>``, the truncated singular SDE
``X = r + beta + m int min(1/|X|, n) d<beta>`` with its scale function
``h(x) = x^(1-2m)``, and the smoothed-square-root Ito decomposition
``phi(Y) = phi(r^2) + I + J + K`` for ``Y = R^2``.

All stochastic sums use left-point (Ito) evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (ConstantControl, ControlPolicy, GPath, PiecewiseControl, TimeGrid,
                   VolatilityBand, check_nu, coarsen_normals, draw_normals, draw_uniforms,
                   fit_order, simulate_paths)
from .montecarlo import ControlFamily, EstimateReport, Payoff, estimate_upper, summarize

__all__ = [
    "BesselPath",
    "TruncatedSdeConfig",
    "TruncatedPath",
    "ScaleFault",
    "bessel_direct",
    "extract_beta",
    "sde_residual",
    "euler_truncated",
    "first_hit",
    "first_hit_index",
    "bridged_hit",
    "scale_function_check",
    "moment_bounds",
    "smooth_sqrt",
    "ito_decomposition",
    "k_term_trend",
    "nonattainability_trend",
    "drift_integrability",
    "scaling_check",
    "Refinement",
    "residual_refinement",
    "ito_refinement",
]


class ScaleFault(RuntimeError):
    """A truncated path became nonpositive before the stopping level was detected."""


@dataclass(frozen=True)
class BesselPath:
    """Radial process ``R`` (shape ``(..., n+1)``) with optional extracted driver."""

    grid: TimeGrid
    r0: float
    R: np.ndarray
    qv: np.ndarray
    d: int
    beta: Optional[np.ndarray] = None


def bessel_direct(gpath: GPath) -> BesselPath:
    R = np.linalg.norm(gpath.values, axis=-1)
    return BesselPath(gpath.grid, float(np.linalg.norm(gpath.start)), R, gpath.qv, gpath.d)


def extract_beta(gpath: GPath) -> BesselPath:
    """Left-point sums of ``(B/R) . dB``; the integrand is 0 where ``R = 0``."""
    bp = bessel_direct(gpath)
    left = gpath.values[..., :-1, :]
    r_left = bp.R[..., :-1]
    safe = np.where(r_left > 0, r_left, 1.0)
    unit = np.where((r_left > 0)[..., None], left / safe[..., None], 0.0)
    dbeta = np.sum(unit * gpath.increments, axis=-1)
    beta = np.zeros_like(bp.R)
    np.cumsum(dbeta, axis=-1, out=beta[..., 1:])
    return BesselPath(bp.grid, bp.r0, bp.R, bp.qv, bp.d, beta)


@dataclass(frozen=True)
class SdeResidual:
    residual: np.ndarray
    sup_residual: np.ndarray
    floor: float


def sde_residual(bp: BesselPath, d: Optional[int] = None, floor: Optional[float] = None) -> SdeResidual:
    """``R_k - r - beta_k - sum_{j<k} (d-1)/(2 max(R_j, floor)) dqv_j``.

    ``floor`` defaults to ``dt^(1/4)``; it keeps the drift sum finite on paths
    that graze the origin and vanishes under refinement.
    """
    if bp.beta is None:
        raise ValueError("extract beta first")
    if not bp.r0 > 0:
        raise ValueError("the radial SDE needs r > 0")
    d = bp.d if d is None else d
    floor = bp.grid.dt ** 0.25 if floor is None else floor
    dq = np.diff(bp.qv, axis=-1)
    drift = (d - 1) / (2.0 * np.maximum(bp.R[..., :-1], floor)) * dq
    acc = np.zeros_like(bp.R)
    np.cumsum(drift, axis=-1, out=acc[..., 1:])
    res = bp.R - bp.r0 - bp.beta - acc
    return SdeResidual(res, np.max(np.abs(res), axis=-1), floor)


# ---------------------------------------------------------------------------
# truncated singular SDE


def _truncated_inverse(x, n):
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / np.abs(x), n)


@dataclass(frozen=True)
class TruncatedSdeConfig:
    r: float
    m: float
    n: int
    band: VolatilityBand
    grid: TimeGrid

    def __post_init__(self):
        if not self.m > 0.5:
            raise ValueError(f"drift weight m must exceed 1/2, got {self.m}")
        if not self.r > 0:
            raise ValueError(f"start r must be positive, got {self.r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"truncation level n must be an integer >= 1, got {self.n}")

    @property
    def level(self) -> float:
        return 1.0 / self.n

    def f_n(self, x):
        return _truncated_inverse(x, self.n)

    def h(self, x):
        return np.asarray(x, dtype=float) ** (1.0 - 2.0 * self.m)

    def second_moment_bound(self, T: Optional[float] = None) -> float:
        T = self.grid.t_end if T is None else T
        return self.r**2 + (2 * self.m + 1) * self.band.nu_hi * T

    def fourth_moment_bound(self, T: Optional[float] = None) -> float:
        T = self.grid.t_end if T is None else T
        m, s2 = self.m, self.band.nu_hi
        return self.r**4 + (4 * m + 6) * s2 * self.r**2 + (2 * m + 1) * (4 * m + 6) * s2**2 * T**2

    def to_dict(self) -> dict:
        return {"r": self.r, "m": self.m, "n": self.n, "band": self.band.to_dict(),
                "grid": self.grid.to_dict()}


@dataclass(frozen=True)
class TruncatedPath:
    grid: TimeGrid
    X: np.ndarray
    dbeta: np.ndarray
    qv: np.ndarray
    nu: np.ndarray


def euler_truncated(cfg: TruncatedSdeConfig, policy: ControlPolicy, seed: int = 0,
                    n_paths: int = 1, *, first_path: int = 0,
                    normals: Optional[np.ndarray] = None) -> TruncatedPath:
    """Euler steps ``X += dbeta + m f_n(X) dqv`` with ``dbeta = theta sqrt(dt) Z``.

    Feedback policies see the state as shape ``(n_paths, 1)``.
    """
    grid, band = cfg.grid, cfg.band
    n = grid.n_steps
    if normals is None:
        normals = draw_normals(seed, np.arange(first_path, first_path + n_paths), n, 1)[..., 0]
    normals = np.asarray(normals, dtype=float).reshape(-1, n)
    m_paths = normals.shape[0]
    dt, sqdt = grid.dt, math.sqrt(grid.dt)
    X = np.empty((m_paths, n + 1))
    X[:, 0] = cfg.r
    if policy.state_dependent:
        nu = np.empty((m_paths, n))
    else:
        sched = policy.schedule(grid)
        check_nu(sched, band, policy)
        nu = np.broadcast_to(sched, (m_paths, n))
    dbeta = np.empty((m_paths, n))
    times = grid.times
    for k in range(n):
        x = X[:, k]
        if policy.state_dependent:
            nk = np.broadcast_to(np.asarray(policy.nu(times[k], x[:, None]), dtype=float), (m_paths,))
            check_nu(nk, band, policy)
            nu[:, k] = nk
        else:
            nk = nu[:, k]
        db = np.sqrt(nk) * sqdt * normals[:, k]
        dbeta[:, k] = db
        X[:, k + 1] = x + db + cfg.m * _truncated_inverse(x, cfg.n) * nk * dt
    qv = np.zeros((m_paths, n + 1))
    np.cumsum(nu * dt, axis=1, out=qv[:, 1:])
    return TruncatedPath(grid, X, dbeta, qv, np.asarray(nu))


def first_hit_index(X: np.ndarray, level: float) -> np.ndarray:
    """Index of the first grid value ``<= level`` per path, ``-1`` if none."""
    if not level > 0:
        raise ValueError("level must be positive")
    below = np.asarray(X) <= level
    idx = np.argmax(below, axis=-1)
    return np.where(below.any(axis=-1), idx, -1)


def first_hit(X: np.ndarray, level: float, grid: TimeGrid):
    """First grid time at which a single path is ``<= level``, or ``None``."""
    k = int(first_hit_index(np.asarray(X).reshape(-1), level))
    return None if k < 0 else float(grid.times[k])


def bridged_hit(X: np.ndarray, nu: np.ndarray, dt: float, level: float,
                uniforms: np.ndarray):
    """Hit detection with a Brownian-bridge crossing test between grid points.

    Returns ``(hit, value)``: whether the level was reached on ``[0, T]`` and
    the stopped value ``X_{T ^ tau}``.  A crossing inside a step stops the path
    exactly at ``level``; a path starting at or below the level stops at ``X_0``.
    """
    X = np.asarray(X)
    above = X - level
    a0, a1 = above[:, :-1], above[:, 1:]
    with np.errstate(over="ignore", invalid="ignore"):
        p_cross = np.where((a0 > 0) & (a1 > 0), np.exp(-2.0 * a0 * a1 / (nu * dt)), 1.0)
    crossed = (uniforms < p_cross) & (a0 > 0)
    start_hit = above[:, 0] <= 0
    hit = start_hit | crossed.any(axis=1)
    value = np.where(hit, level, X[:, -1])
    value = np.where(start_hit, X[:, 0], value)
    return hit, value


@dataclass
class PolicyScale:
    policy: dict
    mean_h: float
    stderr_h: float
    target_h: float
    hit_freq: float
    hit_stderr: float
    derived_bound: float
    printed_bound: float
    k_sigma: float = 3.0

    @property
    def martingale_pass(self) -> bool:
        return abs(self.mean_h - self.target_h) <= self.k_sigma * self.stderr_h + 1e-12 * abs(self.target_h)

    @property
    def hit_pass(self) -> bool:
        return self.hit_freq <= self.derived_bound + self.k_sigma * self.hit_stderr

    def to_dict(self) -> dict:
        return {**self.__dict__, "martingale_pass": self.martingale_pass, "hit_pass": self.hit_pass}


@dataclass
class ScaleReport:
    config: dict
    per_policy: list
    bridge: bool

    @property
    def passed(self) -> bool:
        return all(p.martingale_pass and p.hit_pass for p in self.per_policy)

    def to_dict(self) -> dict:
        return {"config": self.config, "bridge": self.bridge, "pass": self.passed,
                "per_policy": [p.to_dict() for p in self.per_policy]}


def _blocks(n_paths, n_steps, budget=48 * 2**20):
    size = int(max(1, min(n_paths, budget // (4 * 8 * (n_steps + 1)))))
    return [(lo, min(lo + size, n_paths)) for lo in range(0, n_paths, size)]


def _mean_se(v):
    if np.all(v == v[0]):
        return float(v[0]), 0.0
    return math.fsum(v) / v.size, float(np.std(v, ddof=1) / math.sqrt(v.size))


def scale_function_check(cfg: TruncatedSdeConfig, family: ControlFamily, n_paths: int,
                         T: Optional[float] = None, seed: int = 0, bridge: bool = True,
                         k_sigma: float = 3.0) -> ScaleReport:
    """Per-policy optional-stopping check of ``h(X_{T ^ tau_n}) = h(r)`` and hit bounds.

    ``tau_n`` is the first time ``X <= 1/n``.  With ``bridge=False`` hits are
    detected on the grid only and ``h`` is evaluated at the overshot value.
    """
    if T is not None and abs(T - cfg.grid.t_end) > 1e-12 * T:
        raise ValueError("T must equal the grid horizon")
    level = cfg.level
    n_steps = cfg.grid.n_steps
    hv = np.empty((len(family), n_paths))
    hits = np.empty((len(family), n_paths))
    for lo, hi in _blocks(n_paths, n_steps):
        idx = np.arange(lo, hi)
        normals = draw_normals(seed, idx, n_steps, 1)[..., 0]
        unif = draw_uniforms(seed, idx, n_steps) if bridge else None
        for p, policy in enumerate(family.policies):
            path = euler_truncated(cfg, policy, normals=normals)
            if bridge:
                hit, stopped = bridged_hit(path.X, path.nu, cfg.grid.dt, level, unif)
            else:
                k = first_hit_index(path.X, level)
                hit = k >= 0
                stopped = np.where(hit, path.X[np.arange(len(k)), np.maximum(k, 0)], path.X[:, -1])
                if np.any(stopped <= 0):
                    raise ScaleFault("path reached a nonpositive value at the detected hit; "
                                     "refine dt or enable bridge detection")
            hv[p, idx] = cfg.h(stopped)
            hits[p, idx] = hit
    out = []
    for p, policy in enumerate(family.policies):
        mh, sh = _mean_se(hv[p])
        mf, sf = _mean_se(hits[p])
        out.append(PolicyScale(policy.describe(), mh, sh, float(cfg.h(cfg.r)), mf, sf,
                               (cfg.n * cfg.r) ** (1 - 2 * cfg.m),
                               (cfg.r / cfg.n) ** (2 * cfg.m - 1), k_sigma))
    return ScaleReport(cfg.to_dict(), out, bridge)


def _truncated_samples(cfg, family, n_paths, seed, fn):
    out = np.empty((len(family), n_paths))
    for lo, hi in _blocks(n_paths, cfg.grid.n_steps):
        idx = np.arange(lo, hi)
        normals = draw_normals(seed, idx, cfg.grid.n_steps, 1)[..., 0]
        for p, policy in enumerate(family.policies):
            out[p, idx] = fn(euler_truncated(cfg, policy, normals=normals))
    return out


@dataclass
class MomentReport:
    second: EstimateReport
    fourth: EstimateReport
    second_bound: float
    fourth_bound: float
    k_sigma: float = 3.0

    @property
    def passed(self) -> bool:
        return (self.second.value <= self.second_bound + self.k_sigma * self.second.stderr
                and self.fourth.value <= self.fourth_bound + self.k_sigma * self.fourth.stderr)

    def to_dict(self) -> dict:
        return {"second": self.second.to_dict(), "second_bound": self.second_bound,
                "fourth": self.fourth.to_dict(), "fourth_bound": self.fourth_bound,
                "pass": self.passed}


def moment_bounds(cfg: TruncatedSdeConfig, family: ControlFamily, n_paths: int, seed: int = 0) -> MomentReport:
    """Upper-expectation estimates of ``X_T^2`` and ``X_T^4`` against their bounds."""
    samples = _truncated_samples(cfg, family, n_paths, seed, lambda p: p.X[:, -1])
    second = summarize(samples**2, family, bounded=False)
    fourth = summarize(samples**4, family, bounded=False)
    return MomentReport(second, fourth, cfg.second_moment_bound(), cfg.fourth_moment_bound())


# ---------------------------------------------------------------------------
# smoothed square root and the Ito decomposition of R = sqrt(Y)


def smooth_sqrt(eps: float, y, order: int = 0):
    """C^2 extension of ``sqrt`` below ``eps`` by the quadratic
    ``3/8 sqrt(eps) + 3/(4 sqrt(eps)) y - y^2 / (8 eps^(3/2))``; ``order`` selects
    the value or its first or second derivative."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    y = np.asarray(y, dtype=float)
    se = math.sqrt(eps)
    low = y < eps
    ys = np.where(low, eps, y)  # keeps sqrt away from negative arguments
    if order == 0:
        out = np.where(low, 0.375 * se + 0.75 / se * y - y**2 / (8 * eps * se), np.sqrt(ys))
    elif order == 1:
        out = np.where(low, 0.75 / se - y / (4 * eps * se), 0.5 / np.sqrt(ys))
    elif order == 2:
        out = np.where(low, -1.0 / (4 * eps * se), -0.25 * ys**-1.5)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ItoReport:
    eps: float
    I: np.ndarray
    I_total: np.ndarray
    J: np.ndarray
    K: np.ndarray
    identity_residual: np.ndarray


def ito_decomposition(gpath: GPath, n: int, eps: Optional[float] = None) -> ItoReport:
    """Discrete ``phi(Y_t) = phi(r^2) + sum_i I^(i) + J + K`` with ``eps = 2^-n``.

    ``I``, ``J``, ``K`` are reported at the final time (``I`` per coordinate);
    ``identity_residual`` is the sup over grid times of the mismatch.
    """
    eps = 2.0**-n if eps is None else eps
    se = math.sqrt(eps)
    d = gpath.d
    vals = gpath.values
    Y = np.sum(vals**2, axis=-1)
    R = np.sqrt(Y)
    Yl, Rl = Y[..., :-1], R[..., :-1]
    low = Yl < eps
    safe_r = np.where(low, 1.0, Rl)
    coef = np.where(low, (3.0 - Yl / eps) / (2.0 * se), 1.0 / safe_r)
    dI = coef[..., None] * vals[..., :-1, :] * gpath.increments
    dq = np.diff(gpath.qv, axis=-1)
    dJ = np.where(low, 0.0, (d - 1) / (2.0 * safe_r)) * dq
    dK = np.where(low, (3 * d - (d + 2) * Yl / eps) / (4.0 * se), 0.0) * dq
    total = np.sum(dI, axis=-1) + dJ + dK
    acc = np.zeros_like(Y)
    np.cumsum(total, axis=-1, out=acc[..., 1:])
    phi = smooth_sqrt(eps, Y)
    r2 = float(np.sum(np.asarray(gpath.start) ** 2))
    res = np.abs(phi - smooth_sqrt(eps, r2) - acc)
    I = np.sum(dI, axis=-2)
    return ItoReport(eps, I, I.sum(axis=-1), dJ.sum(axis=-1), dK.sum(axis=-1),
                     np.max(res, axis=-1))


def k_term_trend(x, ns: Sequence[int], family: ControlFamily, grid: TimeGrid,
                 n_paths: int, seed: int = 0) -> list:
    """Upper-expectation estimates of ``|K_T(2^-n)|`` for each ``n``."""
    x = np.asarray(x, dtype=float)
    out = []
    for n in ns:
        pay = Payoff(lambda p, n=n: np.abs(ito_decomposition(p, n).K), kind="pathwise",
                     name=f"|K|(n={n})")
        out.append(estimate_upper(pay, family, grid, x.size, x, n_paths, seed))
    return out


# ---------------------------------------------------------------------------
# nonattainability, drift integrability, scaling


def nonattainability_trend(x, ns: Sequence[int], family: ControlFamily, grid: TimeGrid,
                           n_paths: int, seed: int = 0, k_sigma: float = 3.0) -> list:
    """Capacity of ``{min_t R_t <= 1/n}`` per ``n`` with the scale bound ``(n r)^(2-d)``.

    Each entry reports the estimate and whether every policy's hit frequency
    stays below the bound within ``k_sigma`` standard errors.
    """
    x = np.asarray(x, dtype=float)
    d, r = x.size, float(np.linalg.norm(x))
    out = []
    for n in ns:
        pay = Payoff(lambda p, n=n: (np.linalg.norm(p.values, axis=-1).min(axis=-1) <= 1.0 / n)
                     .astype(float), kind="pathwise", name=f"min R <= 1/{n}")
        rep = estimate_upper(pay, family, grid, d, x, n_paths, seed)
        bound = min(1.0, (n * r) ** (2 - d))
        ok = all(mu <= bound + k_sigma * se
                 for mu, se in zip(rep.per_policy_means, rep.per_policy_stderr))
        out.append({"n": n, "estimate": rep.value, "stderr": rep.stderr, "bound": bound,
                    "pass": ok})
    return out


def drift_integrability(x, ns: Sequence[int], family: ControlFamily, grid: TimeGrid,
                        n_paths: int, alpha: float, seed: int = 0, k_sigma: float = 3.0) -> list:
    """Estimates of ``int_0^T 1{R >= 2^-n} (d-1)/(2R) dt`` and their successive gaps.

    The gap between levels ``n`` and ``n+1`` is the estimate over the shell
    ``2^-(n+1) <= R < 2^-n`` and is compared with
    ``(d-1)/(1-alpha) exp(1/(2 sigma_hi^2)) T^(1-alpha) (2^n)^(1-2 alpha)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    band = family.band
    T, dt = grid.t_end, grid.dt

    def shell(lo, hi):
        def fn(p):
            R = np.linalg.norm(p.values[:, :-1, :], axis=-1)
            w = (R >= lo) & (R < hi)
            return np.sum(np.where(w, (d - 1) / (2 * np.where(R > 0, R, 1.0)), 0.0), axis=-1) * dt
        return fn

    out = []
    for n in ns:
        level = estimate_upper(Payoff(shell(2.0**-n, np.inf), kind="pathwise", bounded=False),
                               family, grid, d, x, n_paths, seed)
        gap = estimate_upper(Payoff(shell(2.0**-(n + 1), 2.0**-n), kind="pathwise", bounded=False),
                             family, grid, d, x, n_paths, seed)
        bound = ((d - 1) / (1 - alpha) * math.exp(1 / (2 * band.nu_hi)) * T ** (1 - alpha)
                 * (2.0**n) ** (1 - 2 * alpha))
        out.append({"n": n, "estimate": level.value, "gap": gap.value, "gap_stderr": gap.stderr,
                    "gap_bound": bound, "pass": gap.value <= bound + k_sigma * gap.stderr})
    return out


def _rescaled(policy: ControlPolicy, lam: float) -> ControlPolicy:
    if isinstance(policy, ConstantControl):
        return policy
    if isinstance(policy, PiecewiseControl):
        return PiecewiseControl(tuple(b / lam**2 for b in policy.breakpoints), policy.values)
    raise TypeError("scaling check supports open-loop constant or piecewise controls")


def scaling_check(band: VolatilityBand, d: int, r: float, lam: float, policy: ControlPolicy,
                  T: float, n_steps: int, n_paths: int, seed: int = 0,
                  n_times: int = 3, k_sigma: float = 3.0) -> list:
    """Compare the first four moments of ``R_{lam^2 t}/lam`` and of a process started
    at ``r/lam`` under the time-rescaled control, on independent draws."""
    x = np.zeros(d)
    x[0] = r
    slow = simulate_paths(TimeGrid(lam**2 * T, n_steps), band, d, x, policy, seed, n_paths)
    fast = simulate_paths(TimeGrid(T, n_steps), band, d, x / lam, _rescaled(policy, lam),
                          seed + 1_000_003, n_paths)
    Ra = np.linalg.norm(slow.values, axis=-1) / lam
    Rb = np.linalg.norm(fast.values, axis=-1)
    ks = np.unique(np.linspace(0, n_steps, n_times + 1).round().astype(int)[1:])
    checks = []
    for k in ks:
        for p in range(1, 5):
            ma, sa = _mean_se(Ra[:, k] ** p)
            mb, sb = _mean_se(Rb[:, k] ** p)
            joint = math.hypot(sa, sb)
            checks.append({"t": float(k * T / n_steps), "moment": p, "scaled": ma, "direct": mb,
                           "joint_stderr": joint, "pass": abs(ma - mb) <= k_sigma * joint})
    return checks


# ---------------------------------------------------------------------------
# nested-grid refinement studies


@dataclass(frozen=True)
class Refinement:
    dts: list
    values: list
    order: float
    min_order: float

    @property
    def passed(self) -> bool:
        return self.order >= self.min_order

    def to_dict(self) -> dict:
        return {"dt": self.dts, "median": self.values, "order": self.order,
                "min_order": self.min_order, "pass": self.passed}


def _refine(statistic, band, d, r, policy, t_end, levels, n_paths, seed, min_order):
    levels = sorted(int(k) for k in levels)
    if len(levels) < 4:
        raise ValueError("need at least 4 refinement levels")
    x = np.zeros(d)
    x[0] = r
    finest = levels[-1]
    z = draw_normals(seed, np.arange(n_paths), 2**finest, d)
    dts, vals = [], []
    for k in levels:
        grid = TimeGrid(t_end, 2**k)
        path = simulate_paths(grid, band, d, x, policy, normals=coarsen_normals(z, 2 ** (finest - k)))
        dts.append(grid.dt)
        vals.append(float(np.median(statistic(path))))
    return Refinement(dts, vals, fit_order(dts, vals), min_order)


def residual_refinement(band: VolatilityBand, d: int, r: float, policy: ControlPolicy,
                        t_end: float = 1.0, levels: Sequence[int] = (8, 9, 10, 11, 12),
                        n_paths: int = 256, seed: int = 0, min_order: float = 0.4) -> Refinement:
    """Median sup-residual of the radial SDE on nested grids with ``dt = t_end 2^-k``."""
    if not r > 0:
        raise ValueError("the radial SDE needs r > 0")
    return _refine(lambda p: sde_residual(extract_beta(p)).sup_residual, band, d, r, policy,
                   t_end, levels, n_paths, seed, min_order)


def ito_refinement(band: VolatilityBand, d: int, r: float, policy: ControlPolicy, n: int,
                   t_end: float = 1.0, levels: Sequence[int] = (8, 9, 10, 11, 12),
                   n_paths: int = 256, seed: int = 0, min_order: float = 0.4) -> Refinement:
    """Median sup-mismatch of the discrete smoothed-square-root identity on nested grids."""
    return _refine(lambda p: ito_decomposition(p, n).identity_residual, band, d, r, policy,
                   t_end, levels, n_paths, seed, min_order)
