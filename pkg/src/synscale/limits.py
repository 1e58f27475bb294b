"""Limiting slow dynamics: filtered ODE systems, the no-filter weight ODE,
and the discrete limiting jump process.

All deterministic systems are integrated with an adaptive explicit
Runge-Kutta pair (rtol 1e-9, atol 1e-12).  Where the weight map is linear
and the drive affine, the exact matrix-exponential solution of the 3x3
affine system is computed as well and the two are required to agree.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .engine import NumericError, Trajectory, _advance_filter, _filter_integral, \
    _invert_filter_clock
from .model import CalciumDriveSpec, PlasticityMapSpec, SpecError
from .streams import stream

ODE_RTOL = 1e-9
ODE_ATOL = 1e-12
W_EXPLODE = 1e8


class RangeError(ValueError):
    """Solution left the region where the drive is defined."""


@dataclass(frozen=True)
class DriveTable:
    """Averaged drives per weight for interpolation in the limit ODE."""

    w_grid: np.ndarray
    drive_p: np.ndarray
    drive_d: np.ndarray
    se_p: Optional[np.ndarray] = None
    se_d: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.w_grid, float)
        dp = np.asarray(self.drive_p, float)
        dd = np.asarray(self.drive_d, float)
        if np.any(np.diff(w) <= 0):
            raise SpecError("w_grid must be strictly increasing")
        if dp.shape != w.shape or dd.shape != w.shape:
            raise SpecError("drive arrays must match the grid")
        if not (np.all(np.isfinite(dp)) and np.all(np.isfinite(dd))):
            raise SpecError("drives must be finite")
        if np.any(dp < 0) or np.any(dd < 0):
            raise SpecError("drives must be nonnegative")
        object.__setattr__(self, "w_grid", w)
        object.__setattr__(self, "drive_p", dp)
        object.__setattr__(self, "drive_d", dd)

    def lookup(self, a: str, w: float) -> float:
        if w < self.w_grid[0] or w > self.w_grid[-1]:
            raise RangeError(f"w={w} outside table range "
                             f"[{self.w_grid[0]}, {self.w_grid[-1]}]")
        vals = self.drive_p if a == "p" else self.drive_d
        return float(np.interp(w, self.w_grid, vals))


def save_drive_table(table: DriveTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["w", "drive_p", "drive_d", "se_p", "se_d"])
        n = len(table.w_grid)
        sp = table.se_p if table.se_p is not None else np.zeros(n)
        sd = table.se_d if table.se_d is not None else np.zeros(n)
        for i in range(n):
            wr.writerow(["%.17g" % v for v in
                         (table.w_grid[i], table.drive_p[i], table.drive_d[i],
                          sp[i], sd[i])])


def load_drive_table(path: str) -> DriveTable:
    with open(path, newline="") as fh:
        rd = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(rd)
        if header[:3] != ["w", "drive_p", "drive_d"]:
            raise SpecError(f"unexpected drive table header {header!r}")
        rows = [[float(v) for v in row] for row in rd]
    arr = np.asarray(rows)
    return DriveTable(w_grid=arr[:, 0], drive_p=arr[:, 1], drive_d=arr[:, 2],
                      se_p=arr[:, 3], se_d=arr[:, 4])


@dataclass
class BlowupReport:
    t_exp: float
    bracket: tuple


@dataclass
class LimitSolution:
    times: np.ndarray
    omega_p: np.ndarray
    omega_d: np.ndarray
    w: np.ndarray
    blowup: Optional[BlowupReport] = None
    diagnostics: dict = field(default_factory=dict)


def detect_blowup(solution: LimitSolution) -> Optional[BlowupReport]:
    return solution.blowup


# ---------------------------------------------------------------------------
# generic filtered system integrator


def _integrate_filtered(drive_p: Callable[[float], float],
                        drive_d: Callable[[float], float],
                        plasticity: PlasticityMapSpec, alpha: float,
                        w0: float, horizon: float,
                        grid: Optional[np.ndarray] = None,
                        guard: Optional[Callable[[float], float]] = None
                        ) -> LimitSolution:
    """omega_a' = -alpha omega_a + drive_a(w), w' = M(omega_p, omega_d, w).

    ``guard`` maps w to a signed distance that must stay positive (used for
    table-range enforcement); crossing it raises RangeError.
    """
    if grid is None:
        grid = np.linspace(0.0, horizon, 201)

    def rhs(t, y):
        return [-alpha * y[0] + drive_p(y[2]),
                -alpha * y[1] + drive_d(y[2]),
                plasticity.rate(y[0], y[1], y[2])]

    def blow_event(t, y):
        return y[2] - W_EXPLODE

    blow_event.terminal = True
    events = [blow_event]
    if guard is not None:
        def guard_event(t, y):
            return guard(y[2])

        guard_event.terminal = True
        events.append(guard_event)

    sol = solve_ivp(rhs, (0.0, horizon), [0.0, 0.0, w0], method="DOP853",
                    rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=True,
                    events=events, max_step=horizon)
    if guard is not None and sol.t_events[1].size:
        raise RangeError(f"solution left the drive table range at "
                         f"t={sol.t_events[1][0]:.6g}")
    blow = None
    t_end = sol.t[-1]
    if sol.t_events[0].size:
        t1 = float(sol.t_events[0][0])
        w1 = float(sol.y_events[0][0][2])
        f1 = rhs(t1, sol.y_events[0][0])[2]
        width = w1 / f1 if f1 > 0 else 0.0
        blow = BlowupReport(t_exp=t1, bracket=(t1, t1 + width))
        t_end = t1
    elif sol.status != 0:
        raise NumericError(f"limit ODE solver failed: {sol.message}")

    mask = grid <= t_end
    out = np.full((3, len(grid)), np.nan)
    if mask.any():
        out[:, mask] = sol.sol(grid[mask])
    return LimitSolution(times=grid, omega_p=out[0], omega_d=out[1],
                         w=out[2], blowup=blow,
                         diagnostics={"nfev": sol.nfev})


# ---------------------------------------------------------------------------
# all-to-all pair limit


def solve_limit_pa(coeffs, plasticity: PlasticityMapSpec, alpha: float,
                   w0: float, horizon: float,
                   grid: Optional[np.ndarray] = None) -> LimitSolution:
    """Limit of the pair model: affine drives in w.  For a linear weight
    map the exact 3x3 affine-system solution is returned and the adaptive
    integrator is checked against it."""
    sol = _integrate_filtered(lambda w: coeffs.drive("p", w),
                              lambda w: coeffs.drive("d", w),
                              plasticity, alpha, w0, horizon, grid)
    if plasticity.form != "linear" or sol.blowup is not None:
        return sol

    c1p = coeffs.lambda_p1 + coeffs.lambda_p2
    c1d = coeffs.lambda_d1 + coeffs.lambda_d2
    c0 = coeffs.nu / (coeffs.beta * coeffs.lam)
    A = np.array([[-alpha, 0.0, c1p],
                  [0.0, -alpha, c1d],
                  [1.0, -1.0, -plasticity.mu]])
    b = np.array([c0 * coeffs.lambda_p1, c0 * coeffs.lambda_d1, 0.0])
    aug = np.zeros((4, 4))
    aug[:3, :3] = A
    aug[:3, 3] = b
    y0 = np.array([0.0, 0.0, w0, 1.0])
    exact = np.empty((3, len(sol.times)))
    for i, t in enumerate(sol.times):
        exact[:, i] = (expm(aug * t) @ y0)[:3]

    num = np.vstack([sol.omega_p, sol.omega_d, sol.w])
    scale = max(1.0, float(np.nanmax(np.abs(exact))))
    err = float(np.nanmax(np.abs(num - exact))) / scale
    if err > 1e-8:
        raise NumericError(f"adaptive and exact linear solutions disagree "
                           f"(rel sup-norm {err:.3g})")
    sol.omega_p, sol.omega_d, sol.w = exact[0], exact[1], exact[2]
    sol.diagnostics["linear_check_rel_err"] = err
    return sol


def pa_integral_residual(sol: LimitSolution, coeffs, alpha: float) -> float:
    """Max residual of the integral form omega_a(t) = c0*Lambda_a1*(1-e^{-at})/a
    + (Lambda_a1+Lambda_a2) e^{-at} int e^{as} w(s) ds along the solution."""
    t = sol.times
    c0 = coeffs.nu / (coeffs.beta * coeffs.lam)
    # cumulative integral of e^{alpha s} w(s) on the solution grid
    integrand = np.exp(alpha * t) * sol.w
    cum = np.concatenate([[0.0], np.cumsum(
        0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    resid = 0.0
    for a, l1, l2, om in (("p", coeffs.lambda_p1, coeffs.lambda_p2, sol.omega_p),
                          ("d", coeffs.lambda_d1, coeffs.lambda_d2, sol.omega_d)):
        pred = (c0 * l1 * -np.expm1(-alpha * t) / alpha
                + (l1 + l2) * np.exp(-alpha * t) * cum)
        resid = max(resid, float(np.nanmax(np.abs(pred - om))))
    return resid


# ---------------------------------------------------------------------------
# table-driven limit


def solve_limit_table(table: DriveTable, plasticity: PlasticityMapSpec,
                      alpha: float, w0: float, horizon: float,
                      grid: Optional[np.ndarray] = None) -> LimitSolution:
    lo, hi = table.w_grid[0], table.w_grid[-1]
    if not (lo <= w0 <= hi):
        raise RangeError(f"w0={w0} outside table range [{lo}, {hi}]")

    def guard(w):
        return min(w - lo, hi - w)

    return _integrate_filtered(lambda w: table.lookup("p", w),
                               lambda w: table.lookup("d", w),
                               plasticity, alpha, w0, horizon, grid,
                               guard=guard)


# ---------------------------------------------------------------------------
# instantaneous (no-filter) limit


def solve_nofilter(drive_p: Callable[[float], float],
                   drive_d: Callable[[float], float],
                   plasticity: PlasticityMapSpec, w0: float, horizon: float,
                   grid: Optional[np.ndarray] = None) -> LimitSolution:
    """dw/dt = Mbar_p(w) drive_p(w) - Mbar_d(w) drive_d(w) - mu w."""
    if plasticity.form != "instantaneous":
        raise SpecError("solve_nofilter needs an instantaneous map")
    if grid is None:
        grid = np.linspace(0.0, horizon, 201)

    def f(w):
        return (plasticity.Mbar_p(w) * drive_p(w)
                - plasticity.Mbar_d(w) * drive_d(w) - plasticity.mu * w)

    def blow_event(t, y):
        return y[0] - W_EXPLODE

    blow_event.terminal = True
    sol = solve_ivp(lambda t, y: [f(y[0])], (0.0, horizon), [w0],
                    method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL,
                    dense_output=True, events=[blow_event], max_step=horizon)
    blow = None
    t_end = sol.t[-1]
    if sol.t_events[0].size:
        t1 = float(sol.t_events[0][0])
        w1 = float(sol.y_events[0][0][0])
        f1 = f(w1)
        blow = BlowupReport(t_exp=t1, bracket=(t1, t1 + (w1 / f1 if f1 > 0 else 0.0)))
        t_end = t1
    elif sol.status != 0:
        raise NumericError(f"limit ODE solver failed: {sol.message}")
    mask = grid <= t_end
    wv = np.full(len(grid), np.nan)
    if mask.any():
        wv[mask] = sol.sol(grid[mask])[0]
    zeros = np.zeros(len(grid))
    return LimitSolution(times=grid, omega_p=zeros, omega_d=zeros, w=wv,
                         blowup=blow, diagnostics={"nfev": sol.nfev})


def pa_offset_drive(coeffs, D: dict) -> tuple:
    """Per-branch drive callables for the pair kernel whose event drives
    carry constant offsets D[(a, i)] on top of the traces.  Both drives are
    affine in w; also returns (A, B) of the net affine rate
    drive_p - drive_d = A + B w for closed-form comparisons."""
    lam, nu, beta = coeffs.lam, coeffs.nu, coeffs.beta

    def make(a, l1, l2):
        d1, d2 = D.get((a, 1), 0.0), D.get((a, 2), 0.0)

        def drive(w):
            return (lam * d1 + d2 * (nu + beta * lam * w)
                    + (nu / (beta * lam)) * l1 + (l1 + l2) * w)

        return drive

    dp = make("p", coeffs.lambda_p1, coeffs.lambda_p2)
    dd = make("d", coeffs.lambda_d1, coeffs.lambda_d2)
    A = dp(0.0) - dd(0.0)
    B = (dp(1.0) - dd(1.0)) - A
    return dp, dd, A, B


def affine_solution(A: float, B: float, w0: float, t: np.ndarray) -> np.ndarray:
    """Closed form of w' = A + B w."""
    t = np.asarray(t, float)
    if abs(B) < 1e-300:
        return w0 + A * t
    return -A / B + (w0 + A / B) * np.exp(B * t)


# ---------------------------------------------------------------------------
# discrete limiting jump process


def simulate_limit_discrete(drive_of_w: Callable[[int], tuple],
                            params: dict, w0: int, horizon: float,
                            seed: int, sample_grid: np.ndarray,
                            replica: int = 0, max_events: int = 10_000_000
                            ) -> Trajectory:
    """Hybrid limit of the integer calcium model.

    ``drive_of_w`` maps an integer weight to (E[h_p(C)], E[h_d(C)]) under
    the pinned-w stationary law; values are cached per w.  The weight is an
    integer jump process (leak rate mu*w, +B_p at intensity omega_p, guarded
    -B_d at intensity omega_d) while each omega relaxes toward its drive.
    """
    alpha, mu = params["alpha"], params["mu"]
    B_p, B_d = params["B_p"], params["B_d"]
    if alpha <= 0 or mu < 0:
        raise SpecError("alpha must be positive and mu nonnegative")
    rng = stream(seed, replica, "limit-jumps")
    cache: dict = {}

    def drives(w):
        if w not in cache:
            hp, hd = drive_of_w(w)
            if not (0.0 <= hp < math.inf and 0.0 <= hd < math.inf):
                raise RangeError(f"drive undefined at w={w}")
            cache[w] = (hp, hd)
        return cache[w]

    t, w = 0.0, int(w0)
    om_p = om_d = 0.0
    om_bound = 0.0
    grid = np.asarray(sample_grid, float)
    cols = ["t", "omega_p", "omega_d", "w"]
    samples = np.full((len(grid), 4), np.nan)
    gi = 0
    events = []
    target_p, target_d = rng.exponential(), rng.exponential()
    acc_p = acc_d = 0.0
    n_events = 0
    terminated = "completed"

    while t < horizon:
        hp, hd = drives(w)
        om_bound = max(om_bound, om_p, om_d, hp / alpha, hd / alpha)
        r_leak = mu * w
        tau_leak = rng.exponential(1.0 / r_leak) if r_leak > 0 else math.inf
        tau_cap = min(tau_leak, horizon - t)
        tau_p = _invert_filter_clock(om_p, hp, alpha, target_p - acc_p, tau_cap)
        tau_d = None
        if w >= B_d:
            tau_d = _invert_filter_clock(om_d, hd, alpha, target_d - acc_d, tau_cap)

        tau, kind = tau_cap, ("weight-leak" if tau_leak <= horizon - t else None)
        if tau_p is not None and tau_p < tau:
            tau, kind = tau_p, "potentiation-jump"
        if tau_d is not None and tau_d < tau:
            tau, kind = tau_d, "depression-jump"

        while gi < len(grid) and grid[gi] < t + tau:
            s = grid[gi] - t
            samples[gi] = [grid[gi], _advance_filter(om_p, hp, alpha, s),
                           _advance_filter(om_d, hd, alpha, s), w]
            gi += 1

        acc_p += _filter_integral(om_p, hp, alpha, tau)
        if w >= B_d:
            acc_d += _filter_integral(om_d, hd, alpha, tau)
        om_p = _advance_filter(om_p, hp, alpha, tau)
        om_d = _advance_filter(om_d, hd, alpha, tau)
        t += tau
        if kind is None:
            break
        if kind == "weight-leak":
            w -= 1
        elif kind == "potentiation-jump":
            w += B_p
            target_p, acc_p = rng.exponential(), 0.0
        else:
            w -= B_d
            target_d, acc_d = rng.exponential(), 0.0
        events.append((t, kind))
        n_events += 1
        while gi < len(grid) and grid[gi] == t:
            samples[gi] = [t, om_p, om_d, w]
            gi += 1
        if n_events >= max_events:
            terminated = "budget-exhausted"
            break

    if terminated == "completed":
        while gi < len(grid) and grid[gi] <= t + 1e-12:
            samples[gi] = [t, om_p, om_d, w]
            gi += 1
    return Trajectory(columns=cols, samples=samples, terminated=terminated,
                      events=events)
