"""Exact event-driven simulation of the scaled plasticity systems.

All simulators share the same structure: presynaptic spikes are a Poisson
stream, postsynaptic spikes are generated by thinning against the firing
rate at the last event (the potential only decays between events, so that
rate is a valid per-interval bound), and every state component follows its
closed-form flow between events.  No time-stepping error is introduced for
the fast variables; the filtered slow variables use closed forms where the
weight map is linear and an error-controlled one-step integrator otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import (ActivationSpec, CalciumDriveSpec, DiscreteState,
                    KernelSpec, PlasticityMapSpec, ResetSpec, SpecError,
                    SystemState, validate)
from .streams import stream


class NumericError(ArithmeticError):
    """NaN/overflow escaping from user drive functions or quadratures."""


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    horizon: float
    seed: int
    sample_grid: np.ndarray
    max_events: int = 50_000_000
    blowup_threshold: Optional[float] = None
    log_events: bool = False
    replica: int = 0

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise SpecError("epsilon must lie in (0, 1]")
        if self.max_events <= 0:
            raise SpecError("max_events must be positive")
        grid = np.asarray(self.sample_grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise SpecError("sample_grid must be strictly increasing")
        if grid.size and (grid[0] < 0 or grid[-1] > self.horizon):
            raise SpecError("sample_grid must lie in [0, horizon]")
        object.__setattr__(self, "sample_grid", grid)


def uniform_grid(horizon: float, n: int = 101) -> np.ndarray:
    return np.linspace(0.0, horizon, n)


@dataclass
class Trajectory:
    """Grid-sampled states plus an optional event log.

    ``samples`` has one row per requested grid time; rows after an early
    termination are NaN.  ``terminated`` is "completed", "blowup" or
    "budget-exhausted"; ``t_exp`` is the blow-up crossing time.
    """

    columns: list
    samples: np.ndarray
    terminated: str = "completed"
    t_exp: Optional[float] = None
    events: Optional[list] = None  # (time, kind) pairs when logging is on

    @property
    def times(self):
        return self.samples[:, 0]

    def column(self, name):
        return self.samples[:, self.columns.index(name)]


@dataclass
class FastTrajectory:
    """Fixed-weight fast process realization for ergodic averaging."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray  # (n, ell)
    presyn_times: np.ndarray
    postsyn_times: np.ndarray
    horizon: float
    w: float


# ---------------------------------------------------------------------------
# thinning


def thinning_next_postsyn(x: float, epsilon: float, activation: ActivationSpec,
                          rng, max_elapsed: float = math.inf,
                          decay: bool = True):
    """Elapsed time of the next accepted postsynaptic spike, or None.

    Candidates arrive at the dominating rate beta(x)/epsilon and are
    accepted with probability beta(x e^{-tau/eps})/beta(x); the bound is
    refreshed after each rejection, which stays valid because the potential
    is nonincreasing between events.  ``decay=False`` freezes the potential
    (acceptance probability one), used to test the degenerate homogeneous
    case.
    """
    elapsed = 0.0
    bound = activation(x)
    while True:
        if bound <= 0.0:
            return None
        elapsed += rng.exponential(epsilon / bound)
        if elapsed >= max_elapsed:
            return None
        if not decay:
            return elapsed
        lam = activation(x * math.exp(-elapsed / epsilon))
        if rng.random() * bound <= lam:
            return elapsed
        bound = lam


# ---------------------------------------------------------------------------
# closed-form flows


def _z_flow(z, tau_fast, gamma, k0, zbar, pos):
    """Trace vector after tau units of fast time."""
    out = z + k0 * tau_fast
    if pos.any():
        decay = np.exp(-gamma[pos] * tau_fast)
        out[pos] = zbar[pos] + (z[pos] - zbar[pos]) * decay
    return out


def _phi(x):
    # (1 - e^{-x}) / x, stable near 0
    if abs(x) < 1e-12:
        return 1.0 - 0.5 * x
    return -math.expm1(-x) / x


def _psi(x):
    # (1 - phi(x)) / x, stable near 0
    if abs(x) < 1e-6:
        return 0.5 - x / 6.0
    return (1.0 - _phi(x)) / x


def _advance_filter(om, h, alpha, tau):
    """omega' = -alpha*omega + h with constant h, exact (alpha >= 0)."""
    return om * math.exp(-alpha * tau) + h * tau * _phi(alpha * tau)


def _filter_integral(om, h, alpha, tau):
    """Integral of the filter over [0, tau] (used as a jump intensity)."""
    x = alpha * tau
    return om * tau * _phi(x) + h * tau * tau * _psi(x)


def _advance_linear_w(w, om_p, om_d, hp, hd, alpha, mu, tau):
    """w' = om_p(t) - om_d(t) - mu*w with exponential-plus-constant filters."""
    D = (hp - hd) / alpha
    E = (om_p - hp / alpha) - (om_d - hd / alpha)
    i1 = tau * _phi(mu * tau)
    i2 = math.exp(-alpha * tau) * tau * _phi((mu - alpha) * tau)
    return w * math.exp(-mu * tau) + D * i1 + E * i2


def _rk_step(y, f, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk_refine(y0, f, tau, rel=1e-9):
    """Classical RK4 over [0, tau] with halving until successive
    refinements agree to ``rel``."""
    n = 1
    prev = None
    for _ in range(22):
        y = np.asarray(y0, dtype=float)
        h = tau / n
        for _ in range(n):
            y = _rk_step(y, f, h)
        if prev is not None:
            scale = np.maximum(np.abs(y), 1.0)
            if np.max(np.abs(y - prev) / scale) < rel:
                return y
        prev = y
        n *= 2
    return prev


class _SlowAdvancer:
    """Advance (omega_p, omega_d, w) over an inter-event interval.

    Builds the piecewise-constant dt-drive segments implied by the kernel
    (none for pair models; threshold-crossing pieces for the calcium trace,
    whose crossing times are closed-form) and advances each segment exactly
    for linear weight maps, by error-controlled RK otherwise.
    """

    def __init__(self, kernel: KernelSpec, plasticity: PlasticityMapSpec,
                 alpha: float, epsilon: float):
        if alpha <= 0:
            raise SpecError("filter leak alpha must be positive")
        self.kernel = kernel
        self.plasticity = plasticity
        self.alpha = alpha
        self.eps = epsilon
        self.kind = kernel.n0_kind
        if self.kind == "calcium-threshold":
            drive = kernel.params["drive"]
            self.thetas = (drive.theta_p, drive.theta_d)
            self.cgamma = kernel.gamma[0]

    def _segments(self, z, tau):
        """(duration, h_p, h_d) pieces covering [0, tau]."""
        if self.kind == "zero":
            return [(tau, 0.0, 0.0)]
        if self.kind == "calcium-threshold":
            c0 = z[0]
            # downward crossings of each threshold; c(t) = c0 e^{-gamma t/eps}
            cuts = [0.0]
            for th in self.thetas:
                if th > 0 and c0 >= th:
                    tc = (self.eps / self.cgamma) * math.log(c0 / th)
                    if 0.0 < tc < tau:
                        cuts.append(tc)
            cuts = sorted(set(cuts)) + [tau]
            segs = []
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b <= a:
                    continue
                cm = c0 * math.exp(-self.cgamma * 0.5 * (a + b) / self.eps)
                segs.append((b - a, self.kernel.n_p0(np.array([cm])),
                             self.kernel.n_d0(np.array([cm]))))
            return segs
        return None  # generic: caller integrates with RK substeps

    def advance(self, om_p, om_d, w, z, tau):
        if tau <= 0.0:
            return om_p, om_d, w
        segs = self._segments(z, tau)
        if segs is None:
            return self._advance_generic(om_p, om_d, w, z, tau)
        lin = self.plasticity.form == "linear"
        for dt, hp, hd in segs:
            if lin:
                w = _advance_linear_w(w, om_p, om_d, hp, hd, self.alpha,
                                      self.plasticity.mu, dt)
            else:
                w = self._advance_w_rk(om_p, om_d, w, hp, hd, dt)
            om_p = _advance_filter(om_p, hp, self.alpha, dt)
            om_d = _advance_filter(om_d, hd, self.alpha, dt)
        return om_p, om_d, w

    def _advance_w_rk(self, om_p0, om_d0, w, hp, hd, tau):
        alpha, plast = self.alpha, self.plasticity

        def f(y):
            s = y[0]
            op = _advance_filter(om_p0, hp, alpha, s)
            od = _advance_filter(om_d0, hd, alpha, s)
            return np.array([1.0, plast.rate(op, od, y[1])])

        return _rk_refine(np.array([0.0, w]), f, tau)[1]

    def _advance_generic(self, om_p, om_d, w, z, tau):
        """dt-drive depends smoothly on the trace; integrate on substeps."""
        kernel, alpha, plast, eps = self.kernel, self.alpha, self.plasticity, self.eps
        gamma, k0 = kernel.gamma, kernel.k0
        pos = gamma > 0
        zbar = np.where(pos, np.divide(k0, np.where(pos, gamma, 1.0)), 0.0)

        def f(y):
            s = y[0]
            zs = _z_flow(z, s / eps, gamma, k0, zbar, pos)
            return np.array([
                1.0,
                -alpha * y[1] + kernel.n_p0(zs),
                -alpha * y[2] + kernel.n_d0(zs),
                plast.rate(y[1], y[2], y[3]),
            ])

        y = np.array([0.0, om_p, om_d, w])
        sub = max(1, int(math.ceil(tau / (self.eps / 10.0))))
        for i in range(sub):
            y = _rk_refine(y, f, tau / sub)
        return y[1], y[2], y[3]


# ---------------------------------------------------------------------------
# scaled continuous system


def simulate_scaled(kernel: KernelSpec, activation: ActivationSpec,
                    reset: ResetSpec, plasticity: PlasticityMapSpec,
                    init: SystemState, cfg: SimConfig, lam: float,
                    alpha: float = 1.0) -> Trajectory:
    """One statistically exact realization of the scaled filtered system.

    ``lam`` is the presynaptic rate before scaling; ``alpha`` the filter
    leak of the slow plasticity variables.
    """
    report = validate(kernel, activation, reset, plasticity)
    if not report.ok:
        raise SpecError(f"assumption failures: {report.failed()}")
    if plasticity.form == "instantaneous":
        raise SpecError("use simulate_nofilter_scaled for instantaneous maps")

    eps = cfg.epsilon
    rng_pre = stream(cfg.seed, cfg.replica, "presyn")
    rng_thin = stream(cfg.seed, cfg.replica, "thinning")
    adv = _SlowAdvancer(kernel, plasticity, alpha, eps)

    gamma, k0 = kernel.gamma, kernel.k0
    pos = gamma > 0
    zbar = np.where(pos, np.divide(k0, np.where(pos, gamma, 1.0)), 0.0)

    t = init.t
    x = init.x
    z = init.z.copy()
    om_p, om_d, w = init.omega_p, init.omega_d, init.w
    blow = cfg.blowup_threshold or 1e6 * max(1.0, abs(init.w))

    grid = cfg.sample_grid
    ell = kernel.ell
    cols = ["t", "x"] + [f"z_{i+1}" for i in range(ell)] + ["omega_p", "omega_d", "w"]
    samples = np.full((len(grid), len(cols)), np.nan)
    gi = 0
    events = [] if cfg.log_events else None
    n_events = 0
    terminated = "completed"
    t_exp = None

    def record(idx, tg):
        tau = tg - t
        xs = x * math.exp(-tau / eps)
        zs = _z_flow(z, tau / eps, gamma, k0, zbar, pos)
        ops, ods, ws = adv.advance(om_p, om_d, w, z, tau)
        samples[idx] = [tg, xs, *zs, ops, ods, ws]

    next_pre = t + rng_pre.exponential(eps / lam) if lam > 0 else math.inf

    while True:
        t_stop = min(next_pre, cfg.horizon)
        tp = thinning_next_postsyn(x, eps, activation, rng_thin,
                                   max_elapsed=t_stop - t)
        if tp is not None:
            t_ev, kind = t + tp, "postsyn"
        elif next_pre <= cfg.horizon:
            t_ev, kind = next_pre, "presyn"
        else:
            t_ev, kind = cfg.horizon, None

        while gi < len(grid) and grid[gi] < t_ev:
            record(gi, grid[gi])
            gi += 1

        tau = t_ev - t
        x = x * math.exp(-tau / eps)
        znew = _z_flow(z, tau / eps, gamma, k0, zbar, pos)
        om_p, om_d, w = adv.advance(om_p, om_d, w, z, tau)
        z = znew
        t = t_ev

        if kind is None:
            while gi < len(grid) and grid[gi] <= t:
                samples[gi] = [t, x, *z, om_p, om_d, w]
                gi += 1
            break

        if kind == "presyn":
            om_p += eps * kernel.n_p1(z)
            om_d += eps * kernel.n_d1(z)
            x += w
            z = z + np.asarray(kernel.k1(z), float)
            next_pre = t + rng_pre.exponential(eps / lam)
        else:
            om_p += eps * kernel.n_p2(z)
            om_d += eps * kernel.n_d2(z)
            x -= reset(x)
            z = z + np.asarray(kernel.k2(z), float)
        if events is not None:
            events.append((t, kind))
        n_events += 1

        while gi < len(grid) and grid[gi] == t:
            samples[gi] = [t, x, *z, om_p, om_d, w]
            gi += 1

        if not (math.isfinite(x) and math.isfinite(w)):
            raise NumericError(f"non-finite state at t={t}")
        if abs(w) >= blow:
            terminated, t_exp = "blowup", t
            break
        if n_events >= cfg.max_events:
            terminated = "budget-exhausted"
            break

    return Trajectory(columns=cols, samples=samples, terminated=terminated,
                      t_exp=t_exp, events=events)


# ---------------------------------------------------------------------------
# fixed-weight fast process


def simulate_fast_fixed_w(kernel: KernelSpec, activation: ActivationSpec,
                          reset: ResetSpec, w: float, horizon: float,
                          seed: int, sample_dt: float = 0.05,
                          init: Optional[SystemState] = None,
                          replica: int = 0,
                          max_events: int = 200_000_000) -> FastTrajectory:
    """Fast process at unit scale with the weight pinned; grid samples plus
    spike times, for ergodic time averages."""
    lam = kernel.params.get("lambda", None)
    if lam is None:
        raise SpecError("kernel.params must carry 'lambda' for the fast process")
    rng_pre = stream(seed, replica, "presyn")
    rng_thin = stream(seed, replica, "thinning")

    gamma, k0 = kernel.gamma, kernel.k0
    pos = gamma > 0
    zbar = np.where(pos, np.divide(k0, np.where(pos, gamma, 1.0)), 0.0)

    t = 0.0
    x = init.x if init is not None else 0.0
    z = init.z.copy() if init is not None else np.zeros(kernel.ell)
    grid = np.arange(0.0, horizon + 0.5 * sample_dt, sample_dt)
    xs = np.empty(len(grid))
    zs = np.empty((len(grid), kernel.ell))
    gi = 0
    pre_times, post_times = [], []
    n_events = 0

    next_pre = t + rng_pre.exponential(1.0 / lam) if lam > 0 else math.inf
    while True:
        t_stop = min(next_pre, horizon)
        tp = thinning_next_postsyn(x, 1.0, activation, rng_thin,
                                   max_elapsed=t_stop - t)
        if tp is not None:
            t_ev, kind = t + tp, "postsyn"
        elif next_pre <= horizon:
            t_ev, kind = next_pre, "presyn"
        else:
            t_ev, kind = horizon, None

        while gi < len(grid) and grid[gi] < t_ev:
            tau = grid[gi] - t
            xs[gi] = x * math.exp(-tau)
            zs[gi] = _z_flow(z, tau, gamma, k0, zbar, pos)
            gi += 1

        tau = t_ev - t
        x = x * math.exp(-tau)
        z = _z_flow(z, tau, gamma, k0, zbar, pos)
        t = t_ev

        if kind is None:
            while gi < len(grid) and grid[gi] <= t:
                xs[gi], zs[gi] = x, z
                gi += 1
            break
        if kind == "presyn":
            x += w
            z = z + np.asarray(kernel.k1(z), float)
            pre_times.append(t)
            next_pre = t + rng_pre.exponential(1.0 / lam)
        else:
            x -= reset(x)
            z = z + np.asarray(kernel.k2(z), float)
            post_times.append(t)
        n_events += 1
        while gi < len(grid) and grid[gi] == t:
            xs[gi], zs[gi] = x, z
            gi += 1
        if n_events >= max_events:
            break

    return FastTrajectory(times=grid, x=xs, z=zs,
                          presyn_times=np.asarray(pre_times),
                          postsyn_times=np.asarray(post_times),
                          horizon=horizon, w=w)


# ---------------------------------------------------------------------------
# instantaneous plasticity (no filtering stage)


def simulate_nofilter_scaled(kernel: KernelSpec, activation: ActivationSpec,
                             reset: ResetSpec, plasticity: PlasticityMapSpec,
                             init: SystemState, cfg: SimConfig,
                             lam: float) -> Trajectory:
    """Scaled system where the weight reacts directly to spikes: each event
    moves the weight by eps times the drive read off the trace, the dt-drive
    enters unfiltered, and the weight leaks at rate mu."""
    if plasticity.form != "instantaneous":
        raise SpecError("simulate_nofilter_scaled needs an instantaneous map")
    report = validate(kernel, activation, reset, plasticity)
    if not report.ok:
        raise SpecError(f"assumption failures: {report.failed()}")

    eps = cfg.epsilon
    mu = plasticity.mu
    rng_pre = stream(cfg.seed, cfg.replica, "presyn")
    rng_thin = stream(cfg.seed, cfg.replica, "thinning")

    gamma, k0 = kernel.gamma, kernel.k0
    pos = gamma > 0
    zbar = np.where(pos, np.divide(k0, np.where(pos, gamma, 1.0)), 0.0)
    has_n0 = kernel.n0_kind != "zero"

    t, x, z, w = init.t, init.x, init.z.copy(), init.w
    blow = cfg.blowup_threshold or 1e6 * max(1.0, abs(init.w))
    grid = cfg.sample_grid
    ell = kernel.ell
    cols = ["t", "x"] + [f"z_{i+1}" for i in range(ell)] + ["omega_p", "omega_d", "w"]
    samples = np.full((len(grid), len(cols)), np.nan)
    gi = 0
    events = [] if cfg.log_events else None
    n_events = 0
    terminated, t_exp = "completed", None

    def advance_w(w0, z0, tau):
        if tau <= 0:
            return w0
        if not has_n0:
            return w0 * math.exp(-mu * tau)

        def f(y):
            zs = _z_flow(z0, y[0] / eps, gamma, k0, zbar, pos)
            dr = (plasticity.Mbar_p(y[1]) * kernel.n_p0(zs)
                  - plasticity.Mbar_d(y[1]) * kernel.n_d0(zs))
            return np.array([1.0, dr - mu * y[1]])

        return _rk_refine(np.array([0.0, w0]), f, tau)[1]

    next_pre = t + rng_pre.exponential(eps / lam) if lam > 0 else math.inf
    while True:
        t_stop = min(next_pre, cfg.horizon)
        tp = thinning_next_postsyn(x, eps, activation, rng_thin,
                                   max_elapsed=t_stop - t)
        if tp is not None:
            t_ev, kind = t + tp, "postsyn"
        elif next_pre <= cfg.horizon:
            t_ev, kind = next_pre, "presyn"
        else:
            t_ev, kind = cfg.horizon, None

        while gi < len(grid) and grid[gi] < t_ev:
            tau = grid[gi] - t
            samples[gi] = [grid[gi], x * math.exp(-tau / eps),
                           *(_z_flow(z, tau / eps, gamma, k0, zbar, pos)),
                           0.0, 0.0, advance_w(w, z, tau)]
            gi += 1

        tau = t_ev - t
        x = x * math.exp(-tau / eps)
        w = advance_w(w, z, tau)
        z = _z_flow(z, tau / eps, gamma, k0, zbar, pos)
        t = t_ev

        if kind is None:
            while gi < len(grid) and grid[gi] <= t:
                samples[gi] = [t, x, *z, 0.0, 0.0, w]
                gi += 1
            break

        if kind == "presyn":
            w += eps * (plasticity.Mbar_p(w) * kernel.n_p1(z)
                        - plasticity.Mbar_d(w) * kernel.n_d1(z))
            x += w
            z = z + np.asarray(kernel.k1(z), float)
            next_pre = t + rng_pre.exponential(eps / lam)
        else:
            w += eps * (plasticity.Mbar_p(w) * kernel.n_p2(z)
                        - plasticity.Mbar_d(w) * kernel.n_d2(z))
            x -= reset(x)
            z = z + np.asarray(kernel.k2(z), float)
        if events is not None:
            events.append((t, kind))
        n_events += 1
        while gi < len(grid) and grid[gi] == t:
            samples[gi] = [t, x, *z, 0.0, 0.0, w]
            gi += 1

        if not (math.isfinite(x) and math.isfinite(w)):
            raise NumericError(f"non-finite state at t={t}")
        if abs(w) >= blow:
            terminated, t_exp = "blowup", t
            break
        if n_events >= cfg.max_events:
            terminated = "budget-exhausted"
            break

    return Trajectory(columns=cols, samples=samples, terminated=terminated,
                      t_exp=t_exp, events=events)


# ---------------------------------------------------------------------------
# discrete (integer-valued) model


@dataclass(frozen=True)
class DiscreteParams:
    lam: float
    gamma: float
    C1: int
    C2: int
    B_p: int
    B_d: int
    mu: float
    alpha: float
    activation: ActivationSpec
    calcium: CalciumDriveSpec

    def __post_init__(self):
        if self.lam < 0 or self.gamma <= 0 or self.alpha <= 0 or self.mu < 0:
            raise SpecError("rates must be nonnegative (gamma, alpha positive)")
        for name in ("C1", "C2", "B_p", "B_d"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be a nonnegative integer")


def _invert_filter_clock(om, h, alpha, target, tau_max):
    """Smallest tau with integral_0^tau omega(s) ds == target, or None if
    the integral over [0, tau_max] stays below; omega is the filter flow."""
    total = _filter_integral(om, h, alpha, tau_max)
    if total < target:
        return None
    lo, hi = 0.0, tau_max
    # bisection: the integral is increasing in tau (omega >= 0)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _filter_integral(om, h, alpha, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, tau_max):
            break
    return hi


def simulate_discrete_scaled(params: DiscreteParams, init: DiscreteState,
                             cfg: SimConfig) -> Trajectory:
    """Exact simulation of the integer-valued calcium model.

    Constant-rate clocks (presyn, token death, postsyn, calcium decay,
    weight leak) compete through one aggregated exponential; the two
    weight-jump clocks have deterministic time-varying intensities
    omega_a(t), sampled exactly by inverting their integrated intensity,
    which is closed-form because the calcium count is constant between
    events.
    """
    eps = cfg.epsilon
    lam, gam, alpha, mu = params.lam, params.gamma, params.alpha, params.mu
    C1, C2, B_p, B_d = params.C1, params.C2, params.B_p, params.B_d
    act, cal = params.activation, params.calcium
    rng = stream(cfg.seed, cfg.replica, "discrete-clocks")

    t = init.t
    x, c, w = int(init.x), int(init.c), int(init.w)
    om_p, om_d = init.omega_p, init.omega_d
    blow = cfg.blowup_threshold or 1e6 * max(1.0, init.w)

    grid = cfg.sample_grid
    cols = ["t", "x", "z_1", "omega_p", "omega_d", "w"]
    samples = np.full((len(grid), len(cols)), np.nan)
    gi = 0
    events = [] if cfg.log_events else None
    n_events = 0
    terminated, t_exp = "completed", None

    # persistent unit-exponential targets for the inhomogeneous weight clocks
    target_p = rng.exponential()
    target_d = rng.exponential()
    acc_p = acc_d = 0.0

    exponential = rng.exponential
    uniform = rng.random

    while t < cfg.horizon:
        hp, hd = cal.h_p(c), cal.h_d(c)
        r_const = (lam + x + act(x) + gam * c) / eps + mu * w
        tau_const = exponential(1.0 / r_const) if r_const > 0 else math.inf
        tau_cap = min(tau_const, cfg.horizon - t)

        tau_p = _invert_filter_clock(om_p, hp, alpha, target_p - acc_p, tau_cap)
        tau_d = None
        if w >= B_d:
            tau_d = _invert_filter_clock(om_d, hd, alpha, target_d - acc_d, tau_cap)

        tau = tau_cap
        kind = "const" if tau_const <= cfg.horizon - t else None
        if tau_p is not None and tau_p < tau:
            tau, kind = tau_p, "potentiation-jump"
        if tau_d is not None and tau_d < tau:
            tau, kind = tau_d, "depression-jump"

        # record grid samples inside (t, t + tau)
        while gi < len(grid) and grid[gi] < t + tau:
            s = grid[gi] - t
            samples[gi] = [grid[gi], x, c,
                           _advance_filter(om_p, hp, alpha, s),
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
        if kind == "const":
            u = uniform() * r_const
            if u < lam / eps:
                kind = "presyn"
                x += w
                c += C1
            elif u < (lam + x) / eps:
                kind = "decay-token"
                x -= 1
            elif u < (lam + x + act(x)) / eps:
                kind = "postsyn"
                x -= 1
                c += C2
            elif u < (lam + x + act(x) + gam * c) / eps:
                kind = "calcium-decay"
                c -= 1
            else:
                kind = "weight-leak"
                w -= 1
        elif kind == "potentiation-jump":
            w += B_p
            target_p = rng.exponential()
            acc_p = 0.0
        else:  # depression-jump, guard held during the whole interval
            w -= B_d
            target_d = rng.exponential()
            acc_d = 0.0

        if events is not None:
            events.append((t, kind))
        n_events += 1

        while gi < len(grid) and grid[gi] == t:
            samples[gi] = [t, x, c, om_p, om_d, w]
            gi += 1

        if w >= blow:
            terminated, t_exp = "blowup", t
            break
        if n_events >= cfg.max_events:
            terminated = "budget-exhausted"
            break

    if terminated == "completed":
        while gi < len(grid) and grid[gi] <= t + 1e-12:
            samples[gi] = [t, x, c, om_p, om_d, w]
            gi += 1

    return Trajectory(columns=cols, samples=samples, terminated=terminated,
                      t_exp=t_exp, events=events)


def simulate_discrete_fast(w: int, params: DiscreteParams, horizon: float,
                           seed: int, functionals: dict,
                           burn_in: float = 0.1, n_batches: int = 32,
                           replica: int = 0):
    """Ergodic time averages of calcium functionals with the weight pinned.

    ``functionals`` maps a name to a function of the integer calcium count.
    The count is piecewise constant, so occupancy averages are exact given
    the event skeleton.  Returns {name: (mean, stderr)} with batch-means
    standard errors.
    """
    lam, gam = params.lam, params.gamma
    act = params.activation
    rng = stream(seed, replica, "discrete-clocks")
    C1, C2 = params.C1, params.C2

    t0 = burn_in * horizon
    edges = np.linspace(t0, horizon, n_batches + 1)
    names = list(functionals)
    sums = np.zeros((n_batches, len(names)))

    t = 0.0
    x, c = 0, 0
    exponential = rng.exponential
    uniform = rng.random
    while t < horizon:
        r = lam + x + act(x) + gam * c
        tau = exponential(1.0 / r) if r > 0 else math.inf
        t_next = min(t + tau, horizon)
        # credit occupancy of the current c to overlapping batches
        if t_next > t0:
            a = max(t, t0)
            vals = [functionals[n](c) for n in names]
            i = int(np.searchsorted(edges, a, side="right")) - 1
            while a < t_next and i < n_batches:
                b = min(t_next, edges[i + 1])
                for j, v in enumerate(vals):
                    sums[i, j] += v * (b - a)
                a = b
                i += 1
        t = t_next
        if t >= horizon:
            break
        u = uniform() * r
        if u < lam:
            x += w
            c += C1
        elif u < lam + x:
            x -= 1
        elif u < lam + x + act(x):
            x -= 1
            c += C2
        else:
            c -= 1

    widths = np.diff(edges)
    batch_means = sums / widths[:, None]
    mean = batch_means.mean(axis=0)
    se = batch_means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return {n: (float(mean[j]), float(se[j])) for j, n in enumerate(names)}
