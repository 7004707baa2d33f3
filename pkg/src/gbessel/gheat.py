"""Explicit monotone finite differences for the isotropic G-heat equation.

Solves ``u_t = g_prime(Laplacian u)`` for Gaussian initial data
``exp(-n s^2 / (2 sigma_hi^2))`` either on a line (``s = x - a``) or for
radially symmetric data in ``d`` dimensions (``s = |x - a|``).

The radial Laplacian ``u_rr + (d-1)/r u_r`` is discretised in conservative
flux form ``(1/V_j) [A_{j+1/2} (u_{j+1}-u_j) - A_{j-1/2} (u_j-u_{j-1})] / ds``
with face areas ``A = r^(d-1)`` and cell volumes ``V``.  All neighbour weights
are nonnegative, so the explicit step is monotone under the CFL condition, and
at ``r = 0`` the stencil is exactly ``d * 2 (u_1 - u_0) / ds^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BandError, VolatilityBand, dimension_check, g_prime

__all__ = [
    "CFLError",
    "DomainError",
    "HeatProblem",
    "RadialField",
    "DecayBoundReport",
    "heat_solve",
    "decay_bound",
    "verify_decay_bound",
    "supersolution_residual",
    "default_domain_radius",
    "write_field_csv",
    "classical_solution",
    "classical_error",
]

BOUNDARY_TOL = 1e-8


class CFLError(ValueError):
    """Time step too large for a monotone explicit step."""


class DomainError(ValueError):
    """Truncated domain too small for the Gaussian initial data."""


def default_domain_radius(band: VolatilityBand, n: float, t_end: float) -> float:
    """Radius where both the data and its spread are below the boundary tolerance."""
    return 6.0 * band.sigma_hi * math.sqrt(t_end) + 6.5 * band.sigma_hi / math.sqrt(n)


@dataclass(frozen=True)
class HeatProblem:
    """Gaussian-data G-heat problem on a truncated line or radial grid.

    ``n_space`` counts grid intervals, so ``ds = domain_radius / n_space``.
    ``n_time`` defaults to the smallest step count meeting the CFL bound
    ``dt <= ds^2 / (sigma_hi^2 (d + kappa))``.
    """

    band: VolatilityBand
    d: int = 1
    mode: str = "line"
    n: float = 1.0
    a_offset: float = 0.0
    domain_radius: Optional[float] = None
    n_space: Optional[int] = None
    ds: Optional[float] = None
    t_end: float = 1.0
    n_time: Optional[int] = None
    kappa: float = 1.0
    n_save: int = 101
    zero_data: bool = False

    def __post_init__(self):
        if self.mode not in ("line", "radial"):
            raise ValueError(f"mode must be 'line' or 'radial', got {self.mode!r}")
        if self.mode == "line" and self.d != 1:
            raise ValueError("line mode is one-dimensional (d=1)")
        if self.mode == "radial" and self.d < 2:
            raise ValueError("radial mode needs d >= 2")
        if not self.n > 0:
            raise ValueError("sharpness n must be positive")
        if self.kappa < 1:
            raise ValueError("CFL safety kappa must be >= 1")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        radius = self.domain_radius
        if radius is None:
            radius = default_domain_radius(self.band, self.n, self.t_end)
            if self.ds is not None:
                radius = math.ceil(radius / self.ds) * self.ds
        object.__setattr__(self, "domain_radius", float(radius))
        if self.n_space is None:
            if self.ds is None:
                raise ValueError("give n_space or ds")
            object.__setattr__(self, "n_space", int(round(radius / self.ds)))
        object.__setattr__(self, "ds", self.domain_radius / self.n_space)
        if self.n_time is None:
            object.__setattr__(self, "n_time", math.ceil(self.t_end / self.cfl_dt() * (1 + 1e-12)))

    def cfl_dt(self) -> float:
        return self.ds**2 / (self.band.nu_hi * (self.d + self.kappa))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_time

    def coordinates(self) -> np.ndarray:
        """Signed offsets from ``a`` (line) or radii (radial)."""
        if self.mode == "line":
            return np.linspace(-self.domain_radius, self.domain_radius, 2 * self.n_space + 1)
        return np.linspace(0.0, self.domain_radius, self.n_space + 1)

    def initial(self, s=None) -> np.ndarray:
        s = self.coordinates() if s is None else np.asarray(s, dtype=float)
        if self.zero_data:
            return np.zeros_like(s)
        return np.exp(-self.n * s**2 / (2.0 * self.band.nu_hi))

    def validate(self) -> None:
        if self.dt > self.cfl_dt() * (1 + 1e-12):
            raise CFLError(f"CFL violated: dt={self.dt:.3e} > ds^2/(sigma_hi^2 (d+kappa))"
                           f"={self.cfl_dt():.3e}; use n_time >= "
                           f"{math.ceil(self.t_end / self.cfl_dt())}")
        edge = float(self.initial(np.array([self.domain_radius]))[0])
        if edge > BOUNDARY_TOL:
            raise DomainError(f"domain too small: initial data is {edge:.2e} at the boundary "
                              f"(> {BOUNDARY_TOL:g}); radius >= "
                              f"{default_domain_radius(self.band, self.n, self.t_end):.3f} suggested")

    def to_dict(self) -> dict:
        return {"band": self.band.to_dict(), "d": self.d, "mode": self.mode, "n": self.n,
                "a_offset": self.a_offset, "domain_radius": self.domain_radius,
                "n_space": self.n_space, "ds": self.ds, "t_end": self.t_end,
                "n_time": self.n_time, "kappa": self.kappa}


@dataclass(frozen=True)
class RadialField:
    """Snapshots ``values[k, j] = u(times[k], coords[j])``."""

    times: np.ndarray
    coords: np.ndarray
    values: np.ndarray
    problem: HeatProblem

    def at_center(self) -> np.ndarray:
        j = int(np.argmin(np.abs(self.coords)))
        return self.values[:, j]


def _radial_weights(s: np.ndarray, d: int, ds: float):
    """Left/right neighbour weights of the flux-form radial Laplacian."""
    right_face = s + ds / 2
    left_face = np.maximum(s - ds / 2, 0.0)
    vol = (right_face**d - left_face**d) / d
    a_right = right_face ** (d - 1)
    a_left = left_face ** (d - 1)
    w_right = a_right / (vol * ds)
    w_left = a_left / (vol * ds)
    return w_left, w_right


def _laplacian_operator(problem: HeatProblem):
    s = problem.coordinates()
    ds = problem.ds
    if problem.mode == "line":
        inv = 1.0 / ds**2

        def lap(u):
            out = np.zeros_like(u)
            out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) * inv
            return out
        return lap

    w_left, w_right = _radial_weights(s, problem.d, ds)
    wl = w_left[1:-1]
    wr = w_right[1:-1]
    w0 = w_right[0]

    def lap(u):
        out = np.zeros_like(u)
        out[0] = w0 * (u[1] - u[0])
        out[1:-1] = wr * (u[2:] - u[1:-1]) - wl * (u[1:-1] - u[:-2])
        return out
    return lap


def heat_solve(problem: HeatProblem) -> RadialField:
    """March ``u <- u + dt g_prime(L u)`` with zero Dirichlet data at the far edge."""
    problem.validate()
    lap = _laplacian_operator(problem)
    band, dt = problem.band, problem.dt
    u = problem.initial().copy()
    u[-1] = 0.0
    if problem.mode == "line":
        u[0] = 0.0
    n_save = max(2, min(problem.n_save, problem.n_time + 1))
    save_steps = np.unique(np.round(np.linspace(0, problem.n_time, n_save)).astype(int))
    snaps = [u.copy()]
    nxt = 1
    for k in range(1, problem.n_time + 1):
        u = u + dt * g_prime(lap(u), band)
        if nxt < save_steps.size and k == save_steps[nxt]:
            snaps.append(u.copy())
            nxt += 1
    times = save_steps * dt
    times[-1] = problem.t_end
    return RadialField(times=times, coords=problem.coordinates(), values=np.array(snaps),
                       problem=problem)


def decay_bound(t, n: float, c: float, band: VolatilityBand, d: Optional[int] = None):
    """Decay bound ``(1 + n t)^(-c rho)`` with ``rho = sigma_lo^2 / (2 sigma_hi^2)``."""
    if c < 0 or (d is not None and c > d):
        raise ValueError(f"c must lie in [0, d], got c={c}, d={d}")
    t = np.asarray(t, dtype=float)
    out = (1.0 + n * t) ** (-c * band.rho())
    return out if out.ndim else float(out)


def _supersolution(t, s, problem: HeatProblem, c: float):
    n, nu_hi = problem.n, problem.band.nu_hi
    return (1.0 + n * t) ** (-c * problem.band.rho()) * np.exp(-n * s**2 / (2.0 * (1.0 + n * t) * nu_hi))


@dataclass
class DecayBoundReport:
    max_violation: float
    argmax: tuple
    tolerance: float
    center_gap: float
    c: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation, "argmax": list(self.argmax),
                "tolerance": self.tolerance, "center_gap": self.center_gap, "c": self.c,
                "pass": self.passed}


def verify_decay_bound(field: RadialField, problem: HeatProblem, c: float,
                   tolerance: Optional[float] = None) -> DecayBoundReport:
    """Largest excess of the solved field over the decay bound.

    ``center_gap`` is ``max_t |u(t, a) - bound(t)|``; it is small exactly when
    the bound is attained at the centre (the classical case with ``c = d``).
    """
    if problem.mode == "radial" and not dimension_check(problem.d, problem.band):
        raise BandError(f"d={problem.d} is below the dimension threshold for {problem.band}")
    bound = decay_bound(field.times, problem.n, c, problem.band, d=problem.d)
    excess = field.values - bound[:, None]
    k, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
    if tolerance is None:
        tolerance = 10.0 * problem.ds**2 * problem.n * problem.band.nu_hi * problem.t_end
    gap = float(np.max(np.abs(field.at_center() - bound)))
    return DecayBoundReport(max_violation=float(excess[k, j]),
                         argmax=(float(field.times[k]), float(field.coords[j])),
                         tolerance=float(tolerance), center_gap=gap, c=float(c))


def supersolution_residual(problem: HeatProblem, c: float, n_check: int = 50) -> float:
    """Most negative discrete residual ``(v^{k+1}-v^k)/dt - g_prime(L v^k)`` of the
    Gaussian supersolution, sampled on ``n_check`` time levels.

    Boundary nodes are excluded since the far edge is clamped.
    """
    lap = _laplacian_operator(problem)
    s = problem.coordinates()
    dt = problem.dt
    worst = math.inf
    for k in np.unique(np.linspace(0, problem.n_time - 1, n_check).round().astype(int)):
        t = k * dt
        v0 = _supersolution(t, s, problem, c)
        v1 = _supersolution(t + dt, s, problem, c)
        res = (v1 - v0) / dt - g_prime(lap(v0), problem.band)
        inner = res[1:-1] if problem.mode == "line" else res[:-1]
        worst = min(worst, float(inner.min()))
    return worst


def classical_solution(problem: HeatProblem, t, s):
    """Closed form for a degenerate band: ``(1+nt)^(-d/2) exp(-n s^2 / (2 sigma^2 (1+nt)))``."""
    if problem.band.nu_lo != problem.band.nu_hi:
        raise BandError("the closed form needs sigma_lo == sigma_hi")
    t = np.asarray(t, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)
    grow = 1.0 + problem.n * t
    return grow ** (-problem.d / 2.0) * np.exp(-problem.n * s**2 / (2.0 * problem.band.nu_hi * grow))


def classical_error(field: RadialField) -> float:
    """Sup-norm distance of a solved field to the closed form over all snapshots."""
    exact = classical_solution(field.problem, field.times, field.coords)
    return float(np.max(np.abs(field.values - exact)))


def write_field_csv(field: RadialField, path) -> None:
    a = field.problem.a_offset if field.problem.mode == "line" else 0.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "u"])
        for k, t in enumerate(field.times):
            for s, u in zip(field.coords, field.values[k]):
                w.writerow([repr(float(t)), repr(float(s + a)), repr(float(u))])
