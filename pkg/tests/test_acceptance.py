"""Acceptance battery: one test per criterion, each logging a PASS/FAIL line.

Oracles are computed independently of the package (closed-form Gaussians,
scipy's chi distribution, explicit bound formulas) wherever possible.
"""

import math

import numpy as np
import pytest
from scipy import stats

from gbessel import cli, montecarlo
from gbessel.bessel import (TruncatedSdeConfig, ito_refinement, k_term_trend, moment_bounds,
                            residual_refinement, scale_function_check, smooth_sqrt)
from gbessel.core import (BangBangControl, ConstantControl, PiecewiseControl, TimeGrid,
                          VolatilityBand)
from gbessel.gheat import HeatProblem, heat_solve, verify_decay_bound
from gbessel.montecarlo import (ControlFamily, Payoff, ball_hint, capacity_ball, default_family,
                                estimate_upper, occupation_integral)
from gbessel.verify import beta_suite, equivalence_suite, rotation_suite

CLASSICAL = VolatilityBand(1.0, 1.0)
WIDE = VolatilityBand(1.0, 2.0)


def _gaussian_oracle(t, s, n, d):
    grow = 1.0 + n * np.asarray(t)[:, None]
    return grow ** (-d / 2) * np.exp(-n * np.asarray(s) ** 2 / (2 * grow))


def _small_family(band):
    return ControlFamily((ConstantControl(band.nu_lo), ConstantControl(band.nu_hi),
                          PiecewiseControl((2.5,), (band.nu_hi, band.nu_lo)),
                          BangBangControl((1.0, 3.0), band)), band)


# 1 -------------------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 3])
def test_classical_heat_matches_gaussian(record, d):
    mode = "line" if d == 1 else "radial"
    errs = []
    for ds in (0.02, 0.01):
        prob = HeatProblem(CLASSICAL, d, mode, n=1.0, ds=ds, t_end=1.0)
        fld = heat_solve(prob)
        errs.append(float(np.max(np.abs(fld.values - _gaussian_oracle(fld.times, fld.coords, 1.0, d)))))
    ratio = errs[0] / errs[1]
    ok = errs[0] <= 1e-3 and ratio >= 3.0
    assert record(f"1 classical heat d={d}", ok,
                  f"Linf(ds=0.02)={errs[0]:.3e} <= 1e-3, halving ratio={ratio:.2f} >= 3")


# 2 -------------------------------------------------------------------------


def test_decay_bound_suite(record):
    lines = []
    ok = True
    for n in (1, 4, 16):
        prob = HeatProblem(WIDE, 5, "radial", n=n, ds=0.02, t_end=1.0)
        fld = heat_solve(prob)
        for c in (0.0, 2.5, 5.0):
            rep = verify_decay_bound(fld, prob, c)
            ok &= rep.passed
            lines.append(f"n={n},c={c}:{rep.max_violation:.1e}/{rep.tolerance:.2g}")
        cprob = HeatProblem(CLASSICAL, 5, "radial", n=n, ds=0.02, t_end=1.0)
        crep = verify_decay_bound(heat_solve(cprob), cprob, 5.0)
        sat = crep.passed and crep.center_gap <= 2 * crep.tolerance
        ok &= sat
        lines.append(f"classical n={n} gap={crep.center_gap:.1e}<=2*{crep.tolerance:.2g}")
    assert record("2 decay bound suite", ok, "; ".join(lines))


# 3 -------------------------------------------------------------------------


def test_capacity_bounds(record):
    d, t = 5, 1.0
    grid = TimeGrid(t, 200)
    a = np.zeros(d)
    lines, ok = [], True
    for eps in (0.2, 0.1, 0.05):
        fam = default_family(WIDE, t, hint=ball_hint(a, eps, t, WIDE, d))
        rep = capacity_ball(t, a, eps, fam, grid, d, 4000, seed=31, c=5.0)
        oracle = math.exp(1 / 8) * eps**1.25
        good = rep.estimate.value <= oracle + 3 * rep.estimate.stderr
        ok &= good
        lines.append(f"eps={eps}: {rep.estimate.value:.2e}+-{rep.estimate.stderr:.1e} <= {oracle:.4f}")
    for eps in (0.5, 1.0):
        fam = default_family(CLASSICAL, t)
        rep = capacity_ball(t, np.zeros(3), eps, fam, TimeGrid(t, 50), 3, 20000, seed=32,
                            smoothed=False)
        p = stats.chi(3).cdf(eps)
        good = abs(rep.estimate.value - p) <= 3 * rep.estimate.stderr
        ok &= good
        lines.append(f"chi3 eps={eps}: {rep.estimate.value:.4f} vs {p:.4f} (se {rep.estimate.stderr:.4f})")
    assert record("3 capacity bounds", ok, "; ".join(lines))


# 4 -------------------------------------------------------------------------


def test_occupation_integral(record):
    d, T, alpha = 5, 1.0, 0.625
    grid = TimeGrid(T, 500)
    a = np.array([0.1, 0, 0, 0, 0])
    fam = default_family(WIDE, T)
    vals, ok, lines = [], True, []
    for eps in (0.2, 0.1, 0.05):
        rep = occupation_integral(T, a, eps, fam, grid, d, 4000, seed=41, alpha=alpha)
        oracle = math.exp(1 / (2 * WIDE.nu_hi)) * eps ** (2 * alpha - 1) * T ** (1 - alpha) / (1 - alpha)
        ok &= rep.estimate.value <= oracle + 3 * rep.estimate.stderr
        vals.append(rep.estimate.value)
        lines.append(f"eps={eps}: {rep.estimate.value:.4g}+-{rep.estimate.stderr:.1e} <= {oracle:.3f}")
    mono = vals[0] > vals[1] > vals[2]
    assert record("4 occupation integral", ok and mono, "; ".join(lines) + f"; decreasing={mono}")


# 5 -------------------------------------------------------------------------


@pytest.mark.parametrize("band,d", [(CLASSICAL, 3), (WIDE, 5)])
def test_bessel_sde_residual_order(record, band, d):
    policy = PiecewiseControl((0.5,), (band.nu_hi, band.nu_lo))
    ref = residual_refinement(band, d, 1.0, policy, 1.0, levels=range(8, 13), n_paths=256, seed=51)
    decreasing = all(b < a for a, b in zip(ref.values, ref.values[1:]))
    assert record(f"5 radial SDE residual band={band.sigma_lo},{band.sigma_hi} d={d}",
                  ref.passed and decreasing,
                  f"medians={[f'{v:.3g}' for v in ref.values]}, order={ref.order:.3f} >= 0.4")


# 6 -------------------------------------------------------------------------


@pytest.mark.slow
def test_scale_function_and_hitting(record):
    grid = TimeGrid(5.0, 10_000)
    cfg = TruncatedSdeConfig(1.0, 1.0, 10, CLASSICAL, grid)
    rep = scale_function_check(cfg, ControlFamily((ConstantControl(1.0),), CLASSICAL), 10_000, seed=61)
    p = rep.per_policy[0]
    classical_ok = abs(p.mean_h - 1.0) <= 3 * p.stderr_h and p.hit_freq <= 0.1 + 3 * p.hit_stderr
    lines = [f"classical mean 1/X={p.mean_h:.4f}+-{p.stderr_h:.4f}, hit={p.hit_freq:.4f} <= 0.1"]

    gcfg = TruncatedSdeConfig(1.0, 2.0, 10, WIDE, grid)
    grep = scale_function_check(gcfg, _small_family(WIDE), 10_000, seed=62)
    target, bound = 1.0 ** (1 - 2 * 2.0), (10 * 1.0) ** (1 - 2 * 2.0)
    g_ok = True
    for q in grep.per_policy:
        g_ok &= abs(q.mean_h - target) <= 3 * q.stderr_h and q.hit_freq <= bound + 3 * q.hit_stderr
        lines.append(f"{q.policy['kind']}: h={q.mean_h:.3f}+-{q.stderr_h:.3f}, hit={q.hit_freq:.4f}")
    assert record("6 scale function / hitting", classical_ok and g_ok, "; ".join(lines))


# 7 -------------------------------------------------------------------------


def test_moment_bounds(record):
    cfg = TruncatedSdeConfig(1.0, 1.0, 10, WIDE, TimeGrid(1.0, 1000))
    rep = moment_bounds(cfg, default_family(WIDE, 1.0), 4000, seed=71)
    assert record("7 moment bounds", rep.passed,
                  f"E[X^2]={rep.second.value:.3f}+-{rep.second.stderr:.3f} <= {rep.second_bound:g}; "
                  f"E[X^4]={rep.fourth.value:.2f}+-{rep.fourth.stderr:.2f} <= {rep.fourth_bound:g}")


# 8 -------------------------------------------------------------------------


def _dyadic_payoff(coef):
    # values on a 2^-16 lattice in [-64, 64] keep every sum and mean exact
    def fn(x):
        raw = coef[0] + coef[1] * x[:, 0] + coef[2] * x[:, 1] ** 2 + coef[3] * np.sin(3 * x[:, 0] * x[:, 1])
        return np.clip(np.round(raw * 2**16) / 2**16, -64, 64)
    return Payoff(fn)


def test_axioms_exact(record):
    band = WIDE
    grid = TimeGrid(1.0, 16)
    fam = ControlFamily((ConstantControl(1.0), ConstantControl(2.5), ConstantControl(4.0),
                         BangBangControl((0.3, 0.6), band), BangBangControl((0.5, 0.8), band, False)),
                        band)
    rng = np.random.default_rng(81)
    n_paths = 128

    def E(p):
        return estimate_upper(p, fam, grid, 2, None, n_paths, seed=82).value

    counts = dict(monotone=0, constant=0, subadditive=0, homogeneous=0)
    for _ in range(100):
        X = _dyadic_payoff(rng.uniform(-2, 2, 4))
        Y = _dyadic_payoff(rng.uniform(-2, 2, 4))
        absY = Payoff(lambda x, Y=Y: np.abs(Y.fn(x)))
        c = float(np.round(rng.uniform(-5, 5) * 2**10) / 2**10)
        lam = float(rng.integers(1, 64)) / 8
        ex, ey = E(X), E(Y)
        counts["monotone"] += E(X + absY) >= ex
        counts["constant"] += E(Payoff.constant(c)) == c
        counts["subadditive"] += E(X + Y) <= ex + ey
        counts["homogeneous"] += E(X.scaled(lam)) == lam * ex
    ok = all(v == 100 for v in counts.values())
    assert record("8 sublinear axioms (exact)", ok, ", ".join(f"{k} {v}/100" for k, v in counts.items()))


# 9 -------------------------------------------------------------------------


def test_structural_suites(record):
    rot = rotation_suite([1.0, 0.0], [[0.0, -1.0], [1.0, 0.0]], default_family(WIDE, 1.0),
                         TimeGrid(1.0, 200), 4000, seed=91)
    eq = equivalence_suite(WIDE, 3, TimeGrid(1.0, 4096), 500, seed=92)
    beta = beta_suite([1.0, 0, 0, 0, 0], default_family(WIDE, 1.0), TimeGrid(1.0, 512), 2000, seed=93)
    expo = beta.checks[-1].statistic

    gaps = []
    for k in range(2, 14):
        eps = 2.0**-k
        below = np.nextafter(eps, 0.0)
        for order in range(3):
            lo, hi = smooth_sqrt(eps, below, order), smooth_sqrt(eps, eps, order)
            gaps.append(abs(lo - hi) / abs(hi))
    c2 = max(gaps) <= 1e-12

    policy = PiecewiseControl((0.5,), (WIDE.nu_hi, WIDE.nu_lo))
    ito = ito_refinement(WIDE, 5, 0.1, policy, 6, 1.0, levels=range(8, 13), n_paths=256, seed=94)
    x = np.array([0.1, 0, 0, 0, 0])
    trend = k_term_trend(x, [4, 6, 8], ControlFamily((ConstantControl(1.0), ConstantControl(4.0),
                         PiecewiseControl((0.5,), (4.0, 1.0)), PiecewiseControl((0.5,), (1.0, 4.0))),
                         WIDE), TimeGrid(1.0, 2000), 2000, seed=95)
    k = [t.value for t in trend]
    k_dec = k[0] > k[1] > k[2]
    ok = rot.passed and eq.passed and beta.passed and c2 and ito.passed and k_dec
    assert record("9 structural suites", ok,
                  f"rotation={rot.passed}, equivalence={eq.passed} "
                  f"(orders {eq.checks[0].statistic:.2f},{eq.checks[1].statistic:.2f}), "
                  f"beta={beta.passed} (exponent {expo:.3f}), C2 gap={max(gaps):.1e}, "
                  f"ito order={ito.order:.3f}, E|K|={[f'{v:.3g}' for v in k]}")


# 10 ------------------------------------------------------------------------


def test_cli_determinism(record, tmp_path, monkeypatch):
    conf = tmp_path / "run.yaml"
    conf.write_text("band: [1, 1.2]\nd: 3\nn_paths: 300\nn_steps: 128\nrefine_paths: 64\nds: 0.05\n")
    outs = []
    for i, threads in enumerate((1, 4, 1)):
        if i > 0:
            # force several path blocks so the pool has work to split
            monkeypatch.setattr(montecarlo, "MEMORY_BUDGET", 200_000)
        out = tmp_path / f"run{i}"
        code = cli.main(["all", "--config", str(conf), "--seed", "5", "--threads", str(threads),
                         "--out", str(out)])
        assert code in (0, 1)
        outs.append((out / "report.json").read_bytes())
    same = outs[0] == outs[1] == outs[2]
    assert record("10 determinism", same, f"{len(outs)} runs (threads 1/4/1, block sizes varied) "
                  f"byte-identical={same}")
