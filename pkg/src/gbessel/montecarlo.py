"""Upper expectations as maxima of sample means over a family of controls.

Every policy in a :class:`ControlFamily` is driven by the *same* normal draws
(path ``i`` always uses substream ``(seed, i)``), so the estimator

    E_hat[xi] = max_policy mean_i xi(path_i^policy)

is itself a sublinear functional on the simulated sample: monotone, constant
preserving, subadditive and positively homogeneous.  Means are computed with
``math.fsum`` so monotonicity also holds after rounding.

The family is a finite inner approximation of the representing set of
measures; estimates are therefore lower bounds of the true upper expectation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (BangBangControl, ConstantControl, ControlPolicy, FeedbackControl, GPath,
                   TimeGrid, VolatilityBand, draw_normals, simulate_paths)

__all__ = [
    "Payoff",
    "ControlFamily",
    "EstimateReport",
    "BoundReport",
    "default_family",
    "estimate_upper",
    "estimate_lower",
    "policy_samples",
    "summarize",
    "capacity_ball",
    "capacity_bound",
    "occupation_integral",
    "occupation_bound",
    "ball_hint",
    "field_hint",
]

MEMORY_BUDGET = 48 * 2**20  # bytes of path storage per block


@dataclass(frozen=True)
class Payoff:
    """Functional of a simulated path batch.

    ``kind="terminal"``: ``fn(x)`` with ``x`` of shape ``(m, d)`` at ``t_end``.
    ``kind="pathwise"``: ``fn(path)`` with ``path`` a batch :class:`GPath`.
    ``hint(t, x)`` optionally marks where the value function is convex; it
    drives the feedback members of the default family.
    """

    fn: Callable
    kind: str = "terminal"
    bounded: bool = True
    hint: Optional[Callable] = None
    name: str = "payoff"

    def __post_init__(self):
        if self.kind not in ("terminal", "pathwise"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")

    def evaluate(self, path: GPath) -> np.ndarray:
        m = path.values.shape[0]
        if self.kind == "terminal":
            out = self.fn(path.values[:, -1, :])
        else:
            out = self.fn(path)
        out = np.broadcast_to(np.asarray(out, dtype=float), (m,))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"payoff {self.name!r} produced non-finite values")
        return out

    @classmethod
    def constant(cls, c: float) -> "Payoff":
        return cls(lambda x: np.full(x.shape[0], float(c)), name=f"constant({c})")

    def _combine(self, other: "Payoff", op, name) -> "Payoff":
        return Payoff(lambda p: op(self.evaluate(p), other.evaluate(p)), kind="pathwise",
                      bounded=self.bounded and other.bounded, name=name)

    def __add__(self, other):
        return self._combine(other, np.add, f"({self.name}+{other.name})")

    def __neg__(self):
        return Payoff(lambda p: -self.evaluate(p), kind="pathwise", bounded=self.bounded,
                      hint=None, name=f"-{self.name}")

    def scaled(self, lam: float) -> "Payoff":
        return Payoff(lambda p: lam * self.evaluate(p), kind="pathwise", bounded=self.bounded,
                      hint=self.hint, name=f"{lam}*{self.name}")


@dataclass(frozen=True)
class ControlFamily:
    policies: tuple
    band: VolatilityBand
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        if not self.policies:
            raise ValueError("control family is empty")

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def extended(self, extra: Sequence[ControlPolicy]) -> "ControlFamily":
        return ControlFamily(self.policies + tuple(extra), self.band, dict(self.spec))

    @classmethod
    def constants(cls, band: VolatilityBand, n_values: int = 2) -> "ControlFamily":
        nus = np.linspace(band.nu_lo, band.nu_hi, n_values) if n_values > 1 else [band.nu_hi]
        return cls(tuple(ConstantControl(float(v)) for v in nus), band,
                   {"n_constant": n_values, "n_bang_bang": 0, "feedback": False})


def default_family(band: VolatilityBand, t_end: float, hint: Optional[Callable] = None,
                   n_constant: int = 9, n_bang_bang: int = 32, seed: int = 0) -> ControlFamily:
    """Constant controls on an equispaced variance grid, random two-switch
    bang-bang controls and, given a convexity ``hint``, the two feedback
    controls selecting ``sigma_hi^2`` on either sign of the hint."""
    policies = [ConstantControl(float(v)) for v in np.linspace(band.nu_lo, band.nu_hi, n_constant)]
    if band.nu_lo == band.nu_hi:
        # every control coincides on a degenerate band
        policies = policies[:1]
        n_bang_bang = 0
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2**31,)))
    for _ in range(n_bang_bang):
        switches = np.sort(rng.uniform(0.0, t_end, size=2))
        policies.append(BangBangControl(tuple(switches), band, start_high=bool(rng.integers(2))))
    if hint is not None:
        policies.append(FeedbackControl(hint, band, True, "hint>=0 -> sigma_hi"))
        policies.append(FeedbackControl(hint, band, False, "hint<0 -> sigma_hi"))
    spec = {"n_constant": n_constant, "n_bang_bang": n_bang_bang, "feedback": hint is not None,
            "seed": seed}
    return ControlFamily(tuple(policies), band, spec)


@dataclass
class EstimateReport:
    value: float
    argmax_policy: ControlPolicy
    argmax_index: int
    stderr: float
    n_paths: int
    per_policy_means: list
    per_policy_stderr: list
    selection_ambiguous: bool = False
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_paths": self.n_paths,
                "argmax_index": self.argmax_index, "argmax_policy": self.argmax_policy.describe(),
                "selection_ambiguous": self.selection_ambiguous, "warnings": list(self.warnings)}


def _block_size(n_paths: int, n_steps: int, d: int) -> int:
    per_path = 3 * (n_steps + 1) * d * 8
    return int(max(1, min(n_paths, MEMORY_BUDGET // per_path)))


def policy_samples(payoff: Payoff, family: ControlFamily, grid: TimeGrid, d: int, start,
                   n_paths: int, seed: int, threads: int = 1,
                   block_size: Optional[int] = None) -> np.ndarray:
    """Payoff samples of shape ``(len(family), n_paths)`` under shared draws."""
    block = block_size or _block_size(n_paths, grid.n_steps, d)
    starts = list(range(0, n_paths, block))
    out = np.empty((len(family), n_paths))

    def run(lo):
        idx = np.arange(lo, min(lo + block, n_paths))
        normals = draw_normals(seed, idx, grid.n_steps, d)
        for p, policy in enumerate(family.policies):
            path = simulate_paths(grid, family.band, d, start, policy, normals=normals)
            out[p, idx] = payoff.evaluate(path)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return out


def _mean(v: np.ndarray) -> float:
    if np.all(v == v[0]):
        return float(v[0])
    return math.fsum(v) / v.size


def _stderr(v: np.ndarray) -> float:
    if v.size < 2 or np.all(v == v[0]):
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def summarize(samples: np.ndarray, family: ControlFamily, bounded: bool = True) -> EstimateReport:
    """Reduce a ``(policies, paths)`` sample matrix to an :class:`EstimateReport`."""
    means = [_mean(row) for row in samples]
    errs = [_stderr(row) for row in samples]
    best = int(np.argmax(means))
    ambiguous = False
    if len(means) > 1:
        order = np.argsort(means, kind="stable")
        second = int(order[-2]) if int(order[-1]) == best else int(order[-1])
        joint = _stderr(samples[best] - samples[second])
        ambiguous = bool(means[best] - means[second] <= joint and second != best
                         and not np.array_equal(samples[best], samples[second]))
    warnings = []
    if not bounded:
        warnings.append("payoff is unbounded; the standard error may be unreliable")
    return EstimateReport(value=means[best], argmax_policy=family.policies[best],
                          argmax_index=best, stderr=errs[best], n_paths=samples.shape[1],
                          per_policy_means=means, per_policy_stderr=errs,
                          selection_ambiguous=ambiguous, warnings=warnings)


def estimate_upper(payoff: Payoff, family: ControlFamily, grid: TimeGrid, d: int, start,
                   n_paths: int, seed: int, threads: int = 1,
                   block_size: Optional[int] = None) -> EstimateReport:
    """Largest per-policy sample mean of ``payoff`` under common random numbers."""
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    samples = policy_samples(payoff, family, grid, d, start, n_paths, seed, threads, block_size)
    return summarize(samples, family, payoff.bounded)


def estimate_lower(payoff: Payoff, family: ControlFamily, grid: TimeGrid, d: int, start,
                   n_paths: int, seed: int, threads: int = 1) -> EstimateReport:
    """``-estimate_upper(-payoff)``: the smallest per-policy mean."""
    rep = estimate_upper(-payoff, family, grid, d, start, n_paths, seed, threads)
    rep.value = -rep.value
    rep.per_policy_means = [-m for m in rep.per_policy_means]
    return rep


# ---------------------------------------------------------------------------
# capacities of small balls and occupation times


def ball_hint(a, eps: float, t_target: float, band: VolatilityBand, d: int,
              spread: float = 1.0) -> Callable:
    """Sign proxy for the Laplacian of a Gaussian-shaped value function centred at ``a``.

    ``exp(-r^2 / (2V))`` is convex exactly where ``r^2 > d V``; the effective
    variance ``V`` combines the ball size with the remaining diffusion time.
    """
    a = np.asarray(a, dtype=float)
    nu_ref = 0.5 * (band.nu_lo + band.nu_hi)

    def hint(t, x):
        var = eps**2 / (d + 2) + spread * nu_ref * max(t_target - t, 0.0)
        r2 = np.sum((np.asarray(x) - a) ** 2, axis=-1)
        return r2 - d * var
    return hint


def field_hint(field, a=None) -> Callable:
    """Feedback hint from a solved radial G-heat field: the discrete Laplacian
    of ``u(T - t, |x - a|)``, which is the sign the optimal control follows."""
    from .gheat import _laplacian_operator

    prob = field.problem
    lap = _laplacian_operator(prob)
    laps = np.array([lap(u) for u in field.values])
    T = prob.t_end
    coords = field.coords
    a = np.zeros(1) if a is None else np.asarray(a, dtype=float)

    def hint(t, x):
        k = int(np.clip(np.searchsorted(field.times, T - t), 0, len(field.times) - 1))
        if prob.mode == "radial":
            s = np.sqrt(np.sum((np.asarray(x) - a) ** 2, axis=-1))
        else:
            s = np.asarray(x)[..., 0] - prob.a_offset
        return np.interp(s, coords, laps[k])
    return hint


def capacity_bound(t: float, eps: float, c: float, band: VolatilityBand) -> float:
    """``exp(1/(2 sigma_hi^2)) eps^(2 c rho) / t^(c rho)``."""
    cr = c * band.rho()
    return math.exp(1.0 / (2.0 * band.nu_hi)) * eps ** (2 * cr) / t**cr


def occupation_bound(T: float, eps: float, alpha: float, band: VolatilityBand) -> float:
    """``exp(1/(2 sigma_hi^2)) eps^(2 alpha - 1) T^(1 - alpha) / (1 - alpha)``."""
    return math.exp(1.0 / (2.0 * band.nu_hi)) * eps ** (2 * alpha - 1) * T ** (1 - alpha) / (1 - alpha)


@dataclass
class BoundReport:
    """An estimate checked against an analytic upper bound at ``k_sigma`` standard errors."""

    estimate: EstimateReport
    bound: Optional[float]
    smoothed: Optional[EstimateReport] = None
    k_sigma: float = 3.0
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.bound is None:
            return True
        return self.estimate.value <= self.bound + self.k_sigma * self.estimate.stderr

    def to_dict(self) -> dict:
        out = {**self.params, **self.estimate.to_dict(), "bound": self.bound, "pass": self.passed}
        if self.smoothed is not None:
            out["smoothed"] = {"value": self.smoothed.value, "stderr": self.smoothed.stderr}
        return out


def capacity_ball(t: float, a, eps: float, family: ControlFamily, grid: TimeGrid, d: int,
                  n_paths: int, seed: int, start=None, c: Optional[float] = None,
                  threads: int = 1, smoothed: bool = True) -> BoundReport:
    """Capacity of ``{|B_t - a| < eps}`` and its Gaussian majorant.

    The smoothed estimate is ``exp(n eps^2/(2 sigma_hi^2)) E_hat[exp(-n |B_t-a|^2/(2 sigma_hi^2))]``
    with ``n = 1/eps^2``, which dominates the indicator pathwise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    k = grid.index_of(t)
    a = np.broadcast_to(np.asarray(a, dtype=float), (d,))
    band = family.band
    if c is not None and not 0 <= c <= d:
        raise ValueError(f"c must lie in [0, d], got {c}")

    def dist2(path):
        return np.sum((path.values[:, k, :] - a) ** 2, axis=-1)

    ind = Payoff(lambda p: (dist2(p) < eps**2).astype(float), kind="pathwise",
                 name="ball_indicator")
    est = estimate_upper(ind, family, grid, d, start, n_paths, seed, threads)
    smooth_rep = None
    if smoothed:
        n = 1.0 / eps**2
        scale = math.exp(n * eps**2 / (2 * band.nu_hi))
        gauss = Payoff(lambda p: scale * np.exp(-n * dist2(p) / (2 * band.nu_hi)),
                       kind="pathwise", name="ball_gaussian")
        smooth_rep = estimate_upper(gauss, family, grid, d, start, n_paths, seed, threads)
    bound = None if c is None or t <= 0 else capacity_bound(t, eps, c, band)
    params = {"t": t, "a": a.tolist(), "eps": eps, "c": c, "d": d}
    return BoundReport(est, bound, smooth_rep, params=params)


def occupation_integral(T: float, a, eps: float, family: ControlFamily, grid: TimeGrid, d: int,
                        n_paths: int, seed: int, alpha: float, start=None,
                        threads: int = 1) -> BoundReport:
    """Upper expectation of ``(1/eps) sum_k 1{|B_{t_k} - a| < eps} dt`` over ``[0, T)``."""
    band = family.band
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0.5 < alpha < 1:
        raise ValueError(f"alpha must lie in (1/2, 1), got {alpha}")
    if alpha > d * band.rho() + 1e-12:
        raise ValueError(f"alpha={alpha} needs c = alpha/rho <= d; requires d*rho > 1/2 "
                         f"(d*rho = {d * band.rho():.4f})")
    if abs(grid.t_end - T) > 1e-12 * T:
        raise ValueError("grid must end at T")
    a = np.broadcast_to(np.asarray(a, dtype=float), (d,))
    dt = grid.dt

    def occ(path):
        inside = np.sum((path.values[:, :-1, :] - a) ** 2, axis=-1) < eps**2
        return inside.sum(axis=1) * (dt / eps)

    payoff = Payoff(occ, kind="pathwise", name="occupation")
    est = estimate_upper(payoff, family, grid, d, start, n_paths, seed, threads)
    params = {"T": T, "a": a.tolist(), "eps": eps, "alpha": alpha, "d": d}
    return BoundReport(est, occupation_bound(T, eps, alpha, band), params=params)
