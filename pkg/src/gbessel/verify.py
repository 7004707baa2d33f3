"""Property suites for rotation invariance, the isotropic-covariance equivalence
and the one-dimensional driver of the radial process.

Each suite returns a :class:`SuiteReport` listing named checks with the
statistic, the threshold it was compared against and a pass flag.  Sample
statistics are compared with ``k_sigma`` standard-error bands and convergence
orders are least-squares slopes on log-log refinement data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bessel import extract_beta
from .core import (ConstantControl, PiecewiseControl, TimeGrid, VolatilityBand, coarsen_normals,
                   draw_normals, fit_order, simulate_paths)
from .montecarlo import MEMORY_BUDGET, ControlFamily, summarize

__all__ = [
    "Check",
    "SuiteReport",
    "PANEL",
    "rotation_suite",
    "radial_law_suite",
    "equivalence_suite",
    "beta_suite",
    "fit_order",
]

ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    name: str
    statistic: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "threshold": self.threshold,
                "pass": self.passed, **self.detail}


@dataclass
class SuiteReport:
    name: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.name, "pass": self.passed, "checks": [c.to_dict() for c in self.checks]}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# Bounded Lipschitz test functions of the radius.
PANEL: tuple = (
    ("gauss_1", lambda R: np.exp(-0.5 * R**2)),
    ("gauss_4", lambda R: np.exp(-R**2 / 8.0)),
    ("cauchy", lambda R: 1.0 / (1.0 + R**2)),
    ("clip_lin", lambda R: np.minimum(R, 2.0)),
    ("clip_sq", lambda R: np.minimum(R**2, 4.0)),
    ("step_1", lambda R: _sigmoid((R - 1.0) / 0.2)),
    ("step_2", lambda R: _sigmoid((R - 2.0) / 0.2)),
    ("cosine", lambda R: np.cos(R)),
)


def _fine_normals(normals, seed, n_paths, n_steps, d):
    if normals is None:
        return None
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (n_paths, n_steps, d):
        raise ValueError(f"normals must have shape {(n_paths, n_steps, d)}, got {normals.shape}")
    return normals


def _multi_samples(stats: Callable, n_stats: int, family: ControlFamily, grid: TimeGrid, d: int,
                   start, n_paths: int, seed: int, normals=None) -> np.ndarray:
    """Statistics of shape ``(n_stats, policies, n_paths)`` under shared draws."""
    normals = _fine_normals(normals, seed, n_paths, grid.n_steps, d)
    block = int(max(1, min(n_paths, MEMORY_BUDGET // (3 * (grid.n_steps + 1) * d * 8))))
    out = np.empty((n_stats, len(family), n_paths))
    for lo in range(0, n_paths, block):
        idx = np.arange(lo, min(lo + block, n_paths))
        z = draw_normals(seed, idx, grid.n_steps, d) if normals is None else normals[idx]
        for p, policy in enumerate(family.policies):
            path = simulate_paths(grid, family.band, d, start, policy, normals=z)
            out[:, p, idx] = stats(path)
    return out


def _panel_stats(grid: TimeGrid, n_times: int, transform=None):
    ks = [int(round(grid.n_steps * (j + 1) / n_times)) for j in range(n_times)]

    def stats(path):
        vals = path.values if transform is None else transform(path.values)
        R = np.linalg.norm(vals[:, ks, :], axis=-1)
        return np.stack([fn(R[:, j]) for _, fn in PANEL for j in range(n_times)])
    return stats, ks


def _compare_arms(name, x, y, family, grid, n_paths, seed, transform, n_times, k_sigma, normals):
    d = x.size
    if any(p.state_dependent for p in family):
        raise ValueError("arm comparison needs open-loop policies; a state feedback "
                         "hint is not rotation invariant in general")
    stats_a, ks = _panel_stats(grid, n_times, transform)
    stats_b, _ = _panel_stats(grid, n_times)
    n_stats = len(PANEL) * n_times
    a = _multi_samples(stats_a, n_stats, family, grid, d, x, n_paths, seed, normals)
    b = _multi_samples(stats_b, n_stats, family, grid, d, y, n_paths, seed, normals)
    checks = []
    for s in range(n_stats):
        fname, j = PANEL[s // n_times][0], s % n_times
        ra, rb = summarize(a[s], family), summarize(b[s], family)
        joint = math.hypot(ra.stderr, rb.stderr)
        diff = abs(ra.value - rb.value)
        checks.append(Check(f"{fname}@t={grid.times[ks[j]]:.6g}", diff, k_sigma * joint,
                            diff <= k_sigma * joint,
                            {"arm_a": ra.value, "arm_b": rb.value, "joint_stderr": joint}))
    return SuiteReport(name, checks)


def rotation_suite(x, Q, family: ControlFamily, grid: TimeGrid, n_paths: int, seed: int = 0,
                   n_times: int = 3, k_sigma: float = 3.0, normals=None) -> SuiteReport:
    """Panel estimates of ``|Q B^x|`` against ``|B^{Qx}|`` simulated directly.

    Both arms use the same seeds, so ``Q = I`` gives identical estimates.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (x.size, x.size):
        raise ValueError(f"Q must be {x.size}x{x.size}")
    if np.max(np.abs(Q.T @ Q - np.eye(x.size))) > ORTHO_TOL:
        raise ValueError("Q is not orthogonal (Q^T Q != I within 1e-12)")
    return _compare_arms("rotation", x, Q @ x, family, grid, n_paths, seed,
                         lambda v: v @ Q.T, n_times, k_sigma, normals)


def radial_law_suite(x, y, family: ControlFamily, grid: TimeGrid, n_paths: int, seed: int = 0,
                     n_times: int = 3, k_sigma: float = 3.0) -> SuiteReport:
    """Panel estimates of ``|B^x|`` against ``|B^y|`` for two starts of equal norm."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("start points must have the same dimension")
    if not math.isclose(np.linalg.norm(x), np.linalg.norm(y), rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("start points must have equal norm")
    return _compare_arms("radial_law", x, y, family, grid, n_paths, seed, None, n_times,
                         k_sigma, None)


def equivalence_suite(band: VolatilityBand, d: int, grid: TimeGrid, n_paths: int, seed: int = 0,
                      n_levels: int = 5, min_order: float = 0.4, k_sigma: float = 3.0,
                      policy=None, normals=None) -> SuiteReport:
    """Pathwise isotropy of the simulated covariance under refinement.

    ``grid`` is the finest level; coarser levels aggregate its normals, so
    every level sees the same driving noise.  Statistics are path averages of
    ``max_{i,t} |[B_i]_t - [B_1]_t|`` and ``max_{i<j,t} |[B_i, B_j]_t|``.
    A constant-control check compares ``[B_i]_T / T`` with ``nu``.
    """
    if d < 2:
        raise ValueError("equivalence suite needs d >= 2")
    if n_levels < 4:
        raise ValueError("need at least 4 refinement levels")
    top = 2 ** (n_levels - 1)
    if grid.n_steps % top:
        raise ValueError(f"finest grid must have a multiple of {top} steps")
    if policy is None:
        policy = PiecewiseControl((grid.t_end / 2,), (band.nu_hi, band.nu_lo))
    z = _fine_normals(normals, seed, n_paths, grid.n_steps, d)
    if z is None:
        z = draw_normals(seed, np.arange(n_paths), grid.n_steps, d)

    dts, diag, cross = [], [], []
    for lev in range(n_levels):
        factor = 2**lev
        g = TimeGrid(grid.t_end, grid.n_steps // factor)
        path = simulate_paths(g, band, d, None, policy, normals=coarsen_normals(z, factor))
        inc = path.increments
        rqv = path.realized_qv()
        diag.append(float(np.mean(np.max(np.abs(rqv - rqv[..., :1]), axis=(-2, -1)))))
        worst = np.zeros(n_paths)
        for i in range(d):
            for j in range(i + 1, d):
                cv = np.cumsum(inc[..., i] * inc[..., j], axis=-1)
                worst = np.maximum(worst, np.max(np.abs(cv), axis=-1))
        cross.append(float(np.mean(worst)))
        dts.append(g.dt)

    checks = []
    for name, stat in (("qv_diagonal_order", diag), ("cross_variation_order", cross)):
        order = fit_order(dts, stat)
        checks.append(Check(name, order, min_order, order >= min_order,
                            {"dt": dts, "values": stat}))

    for nu in (band.nu_lo, band.nu_hi):
        path = simulate_paths(grid, band, d, None, ConstantControl(nu), normals=z)
        ratio = path.realized_qv()[:, -1, :] / grid.t_end
        for i in range(d):
            col = ratio[:, i]
            mean = math.fsum(col) / col.size
            se = float(np.std(col, ddof=1) / math.sqrt(col.size)) if col.size > 1 else 0.0
            dev = abs(mean - nu)
            checks.append(Check(f"qv_rate[nu={nu:g},i={i}]", dev, k_sigma * se,
                                dev <= k_sigma * se, {"mean": mean, "nu": nu, "stderr": se}))
    return SuiteReport("equivalence", checks)


def beta_suite(x, family: ControlFamily, grid: TimeGrid, n_paths: int, seed: int = 0,
               n_lags: int = 5, min_exponent: float = 1.4, k_sigma: float = 3.0,
               normals=None) -> SuiteReport:
    """Diagnostics of the extracted driver ``beta`` of the radial process.

    The family is extended by the constant ``sigma_hi^2`` policy when absent,
    since the upper end of ``E_hat[beta_T^2]`` is checked against it.  Third
    moments use lags ``T / 2^j`` (``j = 1..n_lags``) from time 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.linalg.norm(x) > 0:
        raise ValueError("beta suite needs |x| > 0")
    band = family.band
    T = grid.t_end
    top = ConstantControl(band.nu_hi)
    if not any(isinstance(p, ConstantControl) and p.value == band.nu_hi for p in family):
        family = family.extended([top])
    top_idx = next(i for i, p in enumerate(family.policies)
                   if isinstance(p, ConstantControl) and p.value == band.nu_hi)
    lags = [grid.n_steps >> j for j in range(1, n_lags + 1)]
    if min(lags) < 1 or any(grid.n_steps % (1 << j) for j in range(1, n_lags + 1)):
        raise ValueError(f"grid steps must be divisible by 2^{n_lags}")

    def stats(path):
        beta = extract_beta(path).beta
        rows = [beta[:, -1], beta[:, -1] ** 2]
        rows += [np.abs(beta[:, k]) ** 3 for k in lags]
        return np.stack(rows)

    s = _multi_samples(stats, 2 + n_lags, family, grid, x.size, x, n_paths, seed, normals)
    checks = []
    for p, policy in enumerate(family.policies):
        row = s[0, p]
        mean = math.fsum(row) / row.size
        se = float(np.std(row, ddof=1) / math.sqrt(row.size))
        checks.append(Check(f"mean_beta_T[{p}]", abs(mean), k_sigma * se,
                            abs(mean) <= k_sigma * se, {"policy": policy.describe()}))

    sq = summarize(s[1], family, bounded=False)
    lo, hi = band.nu_lo * T - k_sigma * sq.stderr, band.nu_hi * T + k_sigma * sq.stderr
    checks.append(Check("upper_beta_T_squared_in_band", sq.value, hi, lo <= sq.value <= hi,
                        {"lower": lo}))
    top_row = s[1, top_idx]
    top_mean = math.fsum(top_row) / top_row.size
    top_se = float(np.std(top_row, ddof=1) / math.sqrt(top_row.size))
    checks.append(Check("beta_T_squared_at_sigma_hi", abs(top_mean - band.nu_hi * T),
                        k_sigma * top_se, abs(top_mean - band.nu_hi * T) <= k_sigma * top_se,
                        {"mean": top_mean, "target": band.nu_hi * T}))

    eps = [k * grid.dt for k in lags]
    third = [summarize(s[2 + j], family, bounded=False).value for j in range(n_lags)]
    exponent = fit_order(eps, third)
    prefactor = max(m / e**1.5 for m, e in zip(third, eps))
    checks.append(Check("third_moment_exponent", exponent, min_exponent, exponent >= min_exponent,
                        {"lags": eps, "values": third, "max_prefactor": prefactor}))
    return SuiteReport("beta", checks)
