"""Convergence experiments: ensemble sweeps over the scaling parameter,
regime classification of the introductory weight dynamics, and the paired
continuous/discrete calcium comparison."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from . import analytics, engine, limits, model


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SIM_THREADS", "1")))
    except ValueError:
        return 1


def _run_replicas(fn: Callable[[int], object], replicas: int) -> list:
    """Run fn(replica) for each replica index; results ordered by index so
    downstream statistics do not depend on the worker count."""
    n = worker_count()
    if n == 1:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(replicas)))


# ---------------------------------------------------------------------------
# epsilon sweeps


@dataclass
class SweepReport:
    eps_list: list
    grid: np.ndarray
    limit_w: np.ndarray
    limit_ref: str
    n_replicas: dict  # eps -> replicas included in statistics
    mean_w: dict      # eps -> per-grid-point ensemble mean
    sd_w: dict        # eps -> per-grid-point ensemble sd
    se_w: dict        # eps -> standard error of the mean
    sup_err: dict     # eps -> sup_t |mean - limit|
    blowup_frac: dict
    mean_t_exp: dict  # eps -> mean blow-up time of exploded replicas (or nan)
    excluded: dict    # eps -> replicas dropped (blowup or budget)


def eps_sweep(simulate: Callable, limit_w: np.ndarray, eps_list: list,
              replicas: int, seed: int, grid: np.ndarray,
              limit_ref: str = "limit") -> SweepReport:
    """Ensemble statistics of the scaled weight against a limit reference.

    ``simulate(eps, seed, replica)`` must return a Trajectory sampled on
    ``grid``.  Replicas that blow up or exhaust their budget are excluded
    from the moment statistics and counted separately.
    """
    if replicas < 2:
        raise model.SpecError("need at least 2 replicas for sd")
    grid = np.asarray(grid, float)
    limit_w = np.asarray(limit_w, float)
    report = SweepReport(eps_list=list(eps_list), grid=grid, limit_w=limit_w,
                         limit_ref=limit_ref, n_replicas={}, mean_w={},
                         sd_w={}, se_w={}, sup_err={}, blowup_frac={},
                         mean_t_exp={}, excluded={})
    for i, eps in enumerate(eps_list):
        seed_eps = seed + 1000 * i

        def one(replica):
            return simulate(eps, seed_eps, replica)

        trajs = _run_replicas(one, replicas)
        t_exps, excluded = [], 0
        for tr in trajs:
            if tr.terminated != "completed":
                excluded += 1
                if tr.terminated == "blowup" and tr.t_exp is not None:
                    t_exps.append(tr.t_exp)
        # blown-up or exhausted replicas still contribute their sampled
        # prefix; unreached grid points are NaN in the sample block
        arr = np.asarray([tr.column("w") for tr in trajs])
        counts = np.sum(np.isfinite(arr), axis=0)
        if not np.any(counts >= 2):
            raise engine.NumericError(
                f"fewer than 2 contributing replicas at eps={eps}")
        finite = np.isfinite(arr)
        filled = np.where(finite, arr, 0.0)
        n = np.maximum(counts, 1)
        mean = filled.sum(axis=0) / n
        var = (((filled - np.where(finite, mean, 0.0)) ** 2).sum(axis=0)
               / np.maximum(counts - 1, 1))
        ok = counts >= 2
        mean = np.where(ok, mean, np.nan)
        sd = np.where(ok, np.sqrt(var), np.nan)
        se = np.where(ok, sd / np.sqrt(n), np.nan)
        mask = np.isfinite(limit_w) & np.isfinite(mean)
        report.n_replicas[eps] = replicas - excluded
        report.mean_w[eps] = mean
        report.sd_w[eps] = sd
        report.se_w[eps] = se
        report.sup_err[eps] = (float(np.max(np.abs(mean[mask] - limit_w[mask])))
                               if np.any(mask) else float("nan"))
        report.blowup_frac[eps] = len(t_exps) / replicas
        report.mean_t_exp[eps] = float(np.mean(t_exps)) if t_exps else float("nan")
        report.excluded[eps] = excluded
    return report


# ---------------------------------------------------------------------------
# introductory model: drive coefficients and regime classification


def toy_drive_coeffs(B1: float, B2: float, gamma: float, lam: float,
                     nu: float, slope: float) -> tuple:
    """Coefficients (c0, c1, c2) of the averaged single-trace drive
    E[beta(X) Z] at pinned weight w, which is c0 + c1 w + c2 w^2.

    Derived from the stationary moment balance of the pinned fast process:
    E[Z] = (lam B1 + B2 E[beta(X)]) / gamma with E[beta(X)] = nu + slope
    lam w; (1+gamma) E[XZ] = lam w E[Z] + lam B1 E[X] + lam w B1
    + B2 (nu E[X] + slope E[X^2]); E[X] = lam w, E[X^2] = (lam^2
    + lam/2) w^2.
    """
    z0 = (lam * B1 + nu * B2) / gamma
    z1 = slope * lam * B2 / gamma
    c0 = nu * z0
    c1 = nu * z1 + slope * (lam * z0 + lam ** 2 * B1 + lam * B1
                            + B2 * nu * lam) / (1.0 + gamma)
    c2 = slope * (lam * z1 + B2 * slope * (lam ** 2 + lam / 2.0)) / (1.0 + gamma)
    return c0, c1, c2


def toy_analytic_solution(c0: float, c1: float, c2: float, mu: float,
                          w0: float, t: np.ndarray) -> np.ndarray:
    """Closed-form solution of w' = c0 + (c1 - mu) w + c2 w^2.

    Quadratic case requires real roots (Riccati with constant
    coefficients); values past a finite-time pole are NaN.
    """
    t = np.asarray(t, float)
    b = c1 - mu
    if abs(c2) < 1e-300:
        return limits.affine_solution(c0, b, w0, t)
    disc = b * b - 4.0 * c2 * c0
    if disc < 0:
        raise model.SpecError("complex-root drive has no real closed form here")
    r1 = (-b - math.sqrt(disc)) / (2.0 * c2)
    r2 = (-b + math.sqrt(disc)) / (2.0 * c2)
    if abs(r1 - r2) < 1e-14:
        # double root: w' = c2 (w - r)^2
        r = r1
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r + (w0 - r) / (1.0 - c2 * (w0 - r) * t)
        if w0 != r:
            t_pole = 1.0 / (c2 * (w0 - r))
            if t_pole > 0:
                out = np.where(t < t_pole, out, np.nan)
        return out
    # w' = c2 (w - r1)(w - r2)
    k = c2 * (r1 - r2)
    e = np.exp(k * t)
    num = r1 * (w0 - r2) - r2 * (w0 - r1) * e
    den = (w0 - r2) - (w0 - r1) * e
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    # the solution blows up where the denominator crosses zero
    sign0 = den[0]
    out = np.where(np.sign(den) == np.sign(sign0), out, np.nan)
    return out


@dataclass
class RegimeReport:
    regime: str  # explosive | divergent | bistable | stable | undetermined
    w_eq: Optional[float]
    fates: dict  # w0 -> "explodes(t)" | "converges(w)" | "vanishes" | "diverges"
    t_exp: dict  # w0 -> finite blow-up time or nan
    diagnostics: dict = field(default_factory=dict)


def classify_regime(params: dict, w0_list, horizon: float = 15.0) -> RegimeReport:
    """Classify the asymptotic weight dynamics of the introductory model.

    The limit ODE is w' = q(w) with q(w) = c0 + (c1 - mu) w + c2 w^2 from
    toy_drive_coeffs.  Each initial condition is integrated; explosion is a
    crossing of the solver's blow-up threshold, divergence is unbounded
    growth whose inverse-drive integral diverges, and equilibria are located
    by bisection on q.
    """
    c0, c1, c2 = toy_drive_coeffs(params["B1"], params["B2"], params["gamma"],
                                  params["lam"], params["nu"], params["slope"])
    mu = params["mu"]

    def q(w):
        return c0 + (c1 - mu) * w + c2 * w * w

    plast = model.PlasticityMapSpec(form="instantaneous", mu=mu,
                                    Mbar_p=lambda w: 1.0,
                                    Mbar_d=lambda w: 0.0)
    drive_p = lambda w: c0 + c1 * w + c2 * w * w

    # equilibria of q on [0, 1e6] by sign-change bisection
    ws = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 400)])
    qs = np.array([q(w) for w in ws])
    roots = []
    for i in range(len(ws) - 1):
        if qs[i] == 0.0:
            roots.append(ws[i])
        elif qs[i] * qs[i + 1] < 0:
            roots.append(brentq(q, ws[i], ws[i + 1], xtol=1e-12))
    roots = sorted(set(round(r, 12) for r in roots))

    def explosion_integral_converges(w_ref):
        # finite integral of 1/q up to infinity means finite-time blow-up
        total, prev = 0.0, w_ref
        for k in np.geomspace(w_ref * 10, w_ref * 1e10, 10):
            grid = np.linspace(prev, k, 200)
            vals = 1.0 / np.array([q(g) for g in grid])
            total += np.trapezoid(vals, grid)
            prev = k
        tail = np.trapezoid(1.0 / np.array([q(g) for g in
                                        np.linspace(prev, prev * 10, 200)]),
                        np.linspace(prev, prev * 10, 200))
        return tail < 1e-3 * max(total, 1e-12)

    fates, t_exps = {}, {}
    for w0 in w0_list:
        sol = limits.solve_nofilter(drive_p, lambda w: 0.0, plast, w0, horizon)
        if sol.blowup is not None:
            fates[w0] = f"explodes"
            t_exps[w0] = sol.blowup.t_exp
            continue
        t_exps[w0] = float("nan")
        wT = sol.w[np.isfinite(sol.w)][-1]
        stable = [r for r in roots if q(r - 1e-9 * (1 + r)) > 0 > q(r + 1e-9 * (1 + r))
                  or abs(wT - r) < 1e-3 * (1 + r)]
        near = [r for r in roots if abs(wT - r) < 1e-2 * (1 + r)]
        if near:
            fates[w0] = f"converges({near[0]:.6g})"
        elif wT < 1e-3 * max(w0, 1.0):
            fates[w0] = "vanishes"
        elif wT > 10.0 * max(w0, 1.0) and q(wT) > 0:
            fates[w0] = "diverges" if not explosion_integral_converges(wT) \
                else "undetermined"
        else:
            fates[w0] = "undetermined"

    kinds = set(f.split("(")[0] for f in fates.values())
    regime, w_eq = "undetermined", None
    if kinds == {"explodes"}:
        regime = "explosive"
    elif kinds == {"diverges"}:
        regime = "divergent"
    elif kinds == {"converges"}:
        vals = [float(f[10:-1]) for f in fates.values()]
        if max(vals) - min(vals) < 1e-6 * (1 + max(vals)):
            regime, w_eq = "stable", float(np.mean(vals))
    elif kinds == {"vanishes", "explodes"} or kinds == {"converges", "explodes"}:
        # split must be monotone in w0 around an unstable equilibrium
        unstable = [r for r in roots
                    if r > 0 and q(r - 1e-6 * (1 + r)) < 0 < q(r + 1e-6 * (1 + r))]
        lows = [w0 for w0, f in fates.items() if not f.startswith("explodes")]
        highs = [w0 for w0, f in fates.items() if f.startswith("explodes")]
        if unstable and lows and highs and max(lows) < min(highs):
            w_u = unstable[0]
            if max(lows) < w_u < min(highs):
                regime, w_eq = "bistable", w_u
    return RegimeReport(regime=regime, w_eq=w_eq, fates=fates, t_exp=t_exps,
                        diagnostics={"c0": c0, "c1": c1, "c2": c2,
                                     "roots": roots})


def figure1_golden_params() -> dict:
    """Parameter sets exhibiting the four asymptotic regimes with initial
    weights 1.0 and 3.0.  These values are artifact-chosen (coarse grid
    search over the jump amplitudes with the rates pinned), not taken from
    any published experiment."""
    base = dict(lam=1.0, gamma=1.0, nu=0.0, slope=1.0)
    return {
        "explosive": dict(base, nu=1.0, B1=1.0, B2=1.0, mu=0.0),
        "divergent": dict(base, B1=1.0, B2=0.0, mu=1.0),
        "bistable": dict(base, B1=1.0, B2=1.0, mu=4.0),
        "stable": dict(base, nu=1.0, B1=1.0, B2=0.0, mu=2.0),
    }


def toy_bundle_simulate(params: dict, w0: float, grid: np.ndarray,
                        max_events: int = 50_000_000):
    """simulate(eps, seed, replica) closure for the introductory model."""
    kernel = model.simple_kernel(params["B1"], params["B2"], params["gamma"])
    activation = model.ActivationSpec(nu=params["nu"], slope=params["slope"])
    reset = model.ResetSpec()
    plast = model.PlasticityMapSpec(form="instantaneous", mu=params["mu"],
                                    Mbar_p=lambda w: 1.0,
                                    Mbar_d=lambda w: 0.0)
    horizon = float(grid[-1])

    def simulate(eps, seed, replica):
        cfg = engine.SimConfig(epsilon=eps, horizon=horizon, seed=seed,
                               sample_grid=grid, replica=replica,
                               max_events=max_events)
        init = model.zero_state(1, w=w0)
        return engine.simulate_nofilter_scaled(kernel, activation, reset,
                                               plast, init, cfg,
                                               lam=params["lam"])

    return simulate


# ---------------------------------------------------------------------------
# continuous/discrete calcium comparison


def figure2_params() -> dict:
    """Shared parameters of the calcium comparison figure; the caption's
    delta is interpreted as the weight leak mu (both are zero there)."""
    return dict(lam=0.1, gamma=2.0, C1=1, C2=1, B_p=2, B_d=1,
                slope=0.01, nu=0.0, alpha=0.01, mu=0.0)


def discrete_drive_ar(theta_p: float, theta_d: float,
                      params: dict) -> Callable[[int], tuple]:
    """Threshold drives E[h_a(C)] per integer weight from the stationary
    tail formulas (unit calcium jumps)."""
    cq = analytics.CQParams(C1=params["C1"], C2=params["C2"],
                            gamma=params["gamma"], lam=params["lam"],
                            beta=params["slope"])

    def tail(w, theta):
        n = int(math.ceil(theta))
        if n <= 0:
            return 1.0
        if n > 2:
            raise model.SpecError("analytic tails cover thresholds <= 2")
        return analytics.cq_tail(w, n, cq)

    return lambda w: (tail(w, theta_p), tail(w, theta_d))


def discrete_drive_mc(theta_p: float, theta_d: float, params: dict,
                      horizon: float = 2e4, seed: int = 0
                      ) -> Callable[[int], tuple]:
    """Same drives estimated by ergodic averaging of the pinned fast chain."""
    dparams = engine.DiscreteParams(
        lam=params["lam"], gamma=params["gamma"], C1=params["C1"],
        C2=params["C2"], B_p=params["B_p"], B_d=params["B_d"],
        mu=params["mu"], alpha=params["alpha"],
        activation=model.ActivationSpec(nu=params["nu"], slope=params["slope"]),
        calcium=model.CalciumDriveSpec(theta_p=theta_p, theta_d=theta_d))

    def drive(w):
        est = engine.simulate_discrete_fast(
            int(w), dparams, horizon, seed + 7919 * int(w),
            {"hp": lambda c: 1.0 if c >= theta_p else 0.0,
             "hd": lambda c: 1.0 if c >= theta_d else 0.0})
        return est["hp"][0], est["hd"][0]

    return drive


def limit_discrete_ensemble(drive, params: dict, w0: int, grid: np.ndarray,
                            replicas: int, seed: int) -> tuple:
    """Ensemble mean/sd/se of the limiting jump process on the grid."""
    horizon = float(grid[-1])

    def one(replica):
        return limits.simulate_limit_discrete(
            drive, {"alpha": params["alpha"], "mu": params["mu"],
                    "B_p": params["B_p"], "B_d": params["B_d"]},
            w0, horizon, seed, grid, replica=replica)

    trajs = _run_replicas(one, replicas)
    arr = np.asarray([tr.column("w") for tr in trajs])
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1)
    return mean, sd, sd / math.sqrt(len(trajs))


def discrete_bundle_simulate(theta_p: float, theta_d: float, params: dict,
                             w0: int, grid: np.ndarray,
                             max_events: int = 100_000_000):
    """simulate(eps, seed, replica) closure for the scaled discrete model."""
    dparams = engine.DiscreteParams(
        lam=params["lam"], gamma=params["gamma"], C1=params["C1"],
        C2=params["C2"], B_p=params["B_p"], B_d=params["B_d"],
        mu=params["mu"], alpha=params["alpha"],
        activation=model.ActivationSpec(nu=params["nu"], slope=params["slope"]),
        calcium=model.CalciumDriveSpec(theta_p=theta_p, theta_d=theta_d))
    horizon = float(grid[-1])

    def simulate(eps, seed, replica):
        cfg = engine.SimConfig(epsilon=eps, horizon=horizon, seed=seed,
                               sample_grid=grid, replica=replica,
                               max_events=max_events)
        init = model.DiscreteState(t=0.0, x=0, c=0, w=w0)
        return engine.simulate_discrete_scaled(dparams, init, cfg)

    return simulate


def continuous_bundle_simulate(theta_p: float, theta_d: float, params: dict,
                               w0: float, grid: np.ndarray,
                               max_events: int = 100_000_000):
    """simulate(eps, seed, replica) closure for the scaled continuous
    calcium model with step threshold drives and a linear weight map."""
    drive = model.CalciumDriveSpec(theta_p=theta_p, theta_d=theta_d)
    kernel = model.calcium_kernel(params["C1"], params["C2"], params["gamma"],
                                  drive)
    kernel.params["lambda"] = params["lam"]
    activation = model.ActivationSpec(nu=params["nu"], slope=params["slope"])
    reset = model.ResetSpec()
    plast = model.PlasticityMapSpec(form="linear", mu=params["mu"])
    horizon = float(grid[-1])

    def simulate(eps, seed, replica):
        cfg = engine.SimConfig(epsilon=eps, horizon=horizon, seed=seed,
                               sample_grid=grid, replica=replica,
                               max_events=max_events)
        init = model.SystemState(t=0.0, x=0.0, z=np.zeros(1), w=w0)
        return engine.simulate_scaled(kernel, activation, reset, plast, init,
                                      cfg, lam=params["lam"],
                                      alpha=params["alpha"])

    return simulate


def continuous_drive_table(theta_p: float, theta_d: float, params: dict,
                           w_grid: np.ndarray, horizon: float = 2e4,
                           seed: int = 0) -> limits.DriveTable:
    """Threshold-drive table for the continuous calcium model, estimated by
    ergodic averaging (no closed form exists for the threshold functional)."""
    drive = model.CalciumDriveSpec(theta_p=theta_p, theta_d=theta_d)
    kernel = model.calcium_kernel(params["C1"], params["C2"], params["gamma"],
                                  drive)
    kernel.params["lambda"] = params["lam"]
    activation = model.ActivationSpec(nu=params["nu"], slope=params["slope"])
    reset = model.ResetSpec()
    dp, dd, sp, sd = [], [], [], []
    for i, w in enumerate(w_grid):
        est = analytics.mc_invariant(
            kernel, activation, reset, float(w),
            {"hp": lambda x, z: (z[:, 0] >= theta_p).astype(float),
             "hd": lambda x, z: (z[:, 0] >= theta_d).astype(float)},
            horizon=horizon, seed=seed + 104729 * i)
        dp.append(est.means["hp"])
        dd.append(est.means["hd"])
        sp.append(est.stderrs["hp"])
        sd.append(est.stderrs["hd"])
    return limits.DriveTable(w_grid=np.asarray(w_grid, float),
                             drive_p=np.asarray(dp), drive_d=np.asarray(dd),
                             se_p=np.asarray(sp), se_d=np.asarray(sd))


def reproduce_figure2(theta_p: float, theta_d: float, eps_list: list,
                      replicas: int, seed: int, w0: int = 10,
                      horizon: float = 50.0, n_grid: int = 101,
                      limit_replicas: int = 400,
                      include_continuous: bool = True,
                      params: Optional[dict] = None) -> dict:
    """All curves of the calcium comparison: scaled discrete ensembles per
    eps, the two limit references (Monte Carlo drives and analytic tails),
    the sd inset, and optionally the scaled continuous model with its
    table-driven limit."""
    if params is None:
        params = figure2_params()
    grid = np.linspace(0.0, horizon, n_grid)

    drive_ar = discrete_drive_ar(theta_p, theta_d, params)
    drive_mc = discrete_drive_mc(theta_p, theta_d, params, seed=seed + 31)
    mean_ar, sd_ar, se_ar = limit_discrete_ensemble(
        drive_ar, params, w0, grid, limit_replicas, seed + 1)
    mean_mc, sd_mc, se_mc = limit_discrete_ensemble(
        drive_mc, params, w0, grid, limit_replicas, seed + 2)

    sweep = eps_sweep(
        discrete_bundle_simulate(theta_p, theta_d, params, w0, grid),
        mean_ar, eps_list, replicas, seed + 3, grid, limit_ref="w_AR")

    sd_inset = {eps: float(sweep.sd_w[eps][-1]) for eps in eps_list}
    sd_inset["limit"] = float(sd_ar[-1])

    out = {
        "grid": grid,
        "params": dict(params, theta_p=theta_p, theta_d=theta_d, w0=w0),
        "discrete_sweep": sweep,
        "limit_ar": {"mean": mean_ar, "sd": sd_ar, "se": se_ar},
        "limit_mc": {"mean": mean_mc, "sd": sd_mc, "se": se_mc},
        "sd_inset": sd_inset,
    }
    if include_continuous:
        w_hi = max(w0 * 3, w0 + 10)
        table = continuous_drive_table(theta_p, theta_d, params,
                                       np.linspace(0.0, w_hi, 9),
                                       seed=seed + 5)
        plast = model.PlasticityMapSpec(form="linear", mu=params["mu"])
        limit_c = limits.solve_limit_table(table, plast, params["alpha"],
                                           float(w0), horizon, grid)
        out["continuous_sweep"] = eps_sweep(
            continuous_bundle_simulate(theta_p, theta_d, params, float(w0),
                                       grid),
            limit_c.w, eps_list, replicas, seed + 6, grid,
            limit_ref="limit_table_mc")
        out["continuous_limit"] = limit_c
        out["continuous_table"] = table
    return out
