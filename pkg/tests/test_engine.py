import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from synscale import engine, model
from synscale.streams import stream


# ---------------------------------------------------------------------------
# deterministic flow helpers


def test_advance_filter_matches_ode():
    om, h, alpha, tau = 0.7, 1.3, 0.4, 2.5
    sol = solve_ivp(lambda t, y: [-alpha * y[0] + h], (0, tau), [om],
                    rtol=1e-12, atol=1e-14)
    assert engine._advance_filter(om, h, alpha, tau) == pytest.approx(
        sol.y[0, -1], rel=1e-9)


def test_advance_filter_zero_alpha():
    assert engine._advance_filter(1.0, 2.0, 0.0, 3.0) == pytest.approx(7.0)


def test_advance_linear_w_matches_ode():
    w, op, od, hp, hd, alpha, mu, tau = 0.5, 0.2, 0.1, 1.0, 0.3, 0.7, 1.1, 2.0

    def rhs(t, y):
        omp = engine._advance_filter(op, hp, alpha, t)
        omd = engine._advance_filter(od, hd, alpha, t)
        return [omp - omd - mu * y[0]]

    sol = solve_ivp(rhs, (0, tau), [w], rtol=1e-12, atol=1e-14)
    assert engine._advance_linear_w(w, op, od, hp, hd, alpha, mu, tau) == \
        pytest.approx(sol.y[0, -1], rel=1e-8)


def test_rk_refine_exponential():
    y = engine._rk_refine(np.array([0.0, 1.0]),
                          lambda y: np.array([1.0, -y[1]]), 3.0)
    assert y[1] == pytest.approx(math.exp(-3.0), rel=1e-8)


def test_invert_filter_clock():
    om, h, alpha = 0.3, 1.0, 0.5
    target = 1.7
    tau = engine._invert_filter_clock(om, h, alpha, target, 100.0)
    grid = np.linspace(0, tau, 20001)
    integral = np.trapezoid([engine._advance_filter(om, h, alpha, s)
                         for s in grid], grid)
    assert integral == pytest.approx(target, rel=1e-6)


# ---------------------------------------------------------------------------
# thinning


def test_thinning_survival_function():
    # P(T > t) = exp(-nu t - slope * x (1 - e^{-t})) for the decaying rate
    x, nu, slope = 2.0, 0.3, 0.8
    act = model.ActivationSpec(nu=nu, slope=slope)
    rng = stream(1, 0, "thinning")
    n = 40000
    draws = []
    for _ in range(n):
        tp = engine.thinning_next_postsyn(x, 1.0, act, rng, max_elapsed=50.0)
        draws.append(tp if tp is not None else math.inf)
    draws = np.array(draws)
    for t in (0.3, 1.0, 3.0):
        surv = math.exp(-nu * t - slope * x * (1 - math.exp(-t)))
        emp = float(np.mean(draws > t))
        se = math.sqrt(surv * (1 - surv) / n)
        assert abs(emp - surv) < 4 * se, (t, emp, surv)


def test_thinning_zero_rate():
    act = model.ActivationSpec(nu=0.0, slope=1.0)
    rng = stream(2, 0, "thinning")
    assert engine.thinning_next_postsyn(0.0, 1.0, act, rng,
                                        max_elapsed=10.0) is None


# ---------------------------------------------------------------------------
# scaled simulator


def _pa_setup():
    B = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    g = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    k = model.pa_kernel(B, g)
    act = model.ActivationSpec(nu=0.1, slope=1.0)
    plast = model.PlasticityMapSpec(form="linear", mu=1.0)
    return k, act, model.ResetSpec(), plast


def test_simulate_scaled_basic_shape():
    k, act, reset, plast = _pa_setup()
    grid = engine.uniform_grid(2.0, 21)
    cfg = engine.SimConfig(epsilon=0.1, horizon=2.0, seed=0, sample_grid=grid,
                           log_events=True)
    tr = engine.simulate_scaled(k, act, reset, plast,
                                model.zero_state(4, w=1.0), cfg, lam=1.0)
    assert tr.terminated == "completed"
    assert tr.columns == ["t", "x", "z_1", "z_2", "z_3", "z_4",
                          "omega_p", "omega_d", "w"]
    assert np.all(np.isfinite(tr.samples))
    assert np.array_equal(tr.times, grid)
    kinds = {kind for _, kind in tr.events}
    assert kinds <= {"presyn", "postsyn"} and "presyn" in kinds


def test_simulate_scaled_deterministic():
    k, act, reset, plast = _pa_setup()
    grid = engine.uniform_grid(1.0, 11)
    out = []
    for _ in range(2):
        cfg = engine.SimConfig(epsilon=0.05, horizon=1.0, seed=42,
                               sample_grid=grid)
        tr = engine.simulate_scaled(k, act, reset, plast,
                                    model.zero_state(4, w=1.0), cfg, lam=1.0)
        out.append(tr.samples.copy())
    assert np.array_equal(out[0], out[1])


def test_simulate_scaled_replicas_differ():
    k, act, reset, plast = _pa_setup()
    grid = engine.uniform_grid(1.0, 11)
    cfg0 = engine.SimConfig(epsilon=0.05, horizon=1.0, seed=42,
                            sample_grid=grid, replica=0)
    cfg1 = engine.SimConfig(epsilon=0.05, horizon=1.0, seed=42,
                            sample_grid=grid, replica=1)
    t0 = engine.simulate_scaled(k, act, reset, plast,
                                model.zero_state(4, w=1.0), cfg0, lam=1.0)
    t1 = engine.simulate_scaled(k, act, reset, plast,
                                model.zero_state(4, w=1.0), cfg1, lam=1.0)
    assert not np.array_equal(t0.samples, t1.samples)


def test_presyn_count_matches_poisson_rate():
    k, act, reset, plast = _pa_setup()
    eps, horizon, lam = 0.02, 2.0, 1.5
    cfg = engine.SimConfig(epsilon=eps, horizon=horizon, seed=5,
                           sample_grid=engine.uniform_grid(horizon, 3),
                           log_events=True)
    tr = engine.simulate_scaled(k, act, reset, plast,
                                model.zero_state(4, w=0.5), cfg, lam=lam)
    n_pre = sum(1 for _, kind in tr.events if kind == "presyn")
    mean = lam * horizon / eps
    assert abs(n_pre - mean) < 4 * math.sqrt(mean)


def test_budget_exhaustion():
    k, act, reset, plast = _pa_setup()
    cfg = engine.SimConfig(epsilon=0.01, horizon=5.0, seed=1,
                           sample_grid=engine.uniform_grid(5.0, 6),
                           max_events=20)
    tr = engine.simulate_scaled(k, act, reset, plast,
                                model.zero_state(4, w=1.0), cfg, lam=1.0)
    assert tr.terminated == "budget-exhausted"


def test_blowup_termination():
    # explosive introductory model at a permissive threshold
    k = model.simple_kernel(1.0, 1.0, 1.0)
    act = model.ActivationSpec(nu=1.0, slope=1.0)
    plast = model.PlasticityMapSpec(form="instantaneous", mu=0.0,
                                    Mbar_p=lambda w: 1.0,
                                    Mbar_d=lambda w: 0.0)
    cfg = engine.SimConfig(epsilon=0.02, horizon=20.0, seed=3,
                           sample_grid=engine.uniform_grid(20.0, 21),
                           blowup_threshold=100.0)
    tr = engine.simulate_nofilter_scaled(k, act, model.ResetSpec(), plast,
                                         model.zero_state(1, w=1.0), cfg,
                                         lam=1.0)
    assert tr.terminated == "blowup"
    assert tr.t_exp is not None and 0 < tr.t_exp < 20.0


def test_simulate_scaled_rejects_bad_model():
    k, act, reset, _ = _pa_setup()
    inst = model.PlasticityMapSpec(form="instantaneous", mu=0.0,
                                   Mbar_p=lambda w: 1.0,
                                   Mbar_d=lambda w: 0.0)
    cfg = engine.SimConfig(epsilon=0.1, horizon=1.0, seed=0,
                           sample_grid=engine.uniform_grid(1.0, 3))
    with pytest.raises(model.SpecError):
        engine.simulate_scaled(k, act, reset, inst,
                               model.zero_state(4, w=1.0), cfg, lam=1.0)


def test_sim_config_validation():
    with pytest.raises(model.SpecError):
        engine.SimConfig(epsilon=0.0, horizon=1.0, seed=0,
                         sample_grid=np.array([0.0, 1.0]))
    with pytest.raises(model.SpecError):
        engine.SimConfig(epsilon=0.1, horizon=1.0, seed=0,
                         sample_grid=np.array([0.0, 2.0]))
    with pytest.raises(model.SpecError):
        engine.SimConfig(epsilon=0.1, horizon=1.0, seed=0,
                         sample_grid=np.array([0.5, 0.2]))


# ---------------------------------------------------------------------------
# pinned-weight fast simulator


def test_fast_fixed_w_requires_rate():
    B = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    g = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    k = model.pa_kernel(B, g)
    act = model.ActivationSpec(nu=0.0, slope=1.0)
    with pytest.raises((model.SpecError, KeyError)):
        engine.simulate_fast_fixed_w(k, act, model.ResetSpec(), 1.0, 10.0, 0)


def test_fast_fixed_w_mean_potential():
    B = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    g = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    k = model.pa_kernel(B, g)
    k.params["lambda"] = 2.0
    act = model.ActivationSpec(nu=0.0, slope=1.0)
    tr = engine.simulate_fast_fixed_w(k, act, model.ResetSpec(), 0.5, 3000.0,
                                      9, sample_dt=0.1)
    xs = tr.x[1000:]
    # E[X] = lam * w = 1.0; generous band for one run
    assert abs(xs.mean() - 1.0) < 0.05


# ---------------------------------------------------------------------------
# discrete model


def _dparams(**kw):
    base = dict(lam=0.5, gamma=1.0, C1=1, C2=1, B_p=1, B_d=1, mu=0.1,
                alpha=0.5,
                activation=model.ActivationSpec(nu=0.0, slope=0.2),
                calcium=model.CalciumDriveSpec(theta_p=2.0, theta_d=1.0))
    base.update(kw)
    return engine.DiscreteParams(**base)


def test_discrete_scaled_integer_state_and_determinism():
    p = _dparams()
    grid = engine.uniform_grid(5.0, 11)
    runs = []
    for _ in range(2):
        cfg = engine.SimConfig(epsilon=0.05, horizon=5.0, seed=13,
                               sample_grid=grid)
        tr = engine.simulate_discrete_scaled(
            p, model.DiscreteState(t=0.0, x=0, c=0, w=3), cfg)
        runs.append(tr.samples.copy())
        w = tr.column("w")
        x = tr.column("x")
        assert np.all(w >= 0) and np.all(w == np.round(w))
        assert np.all(x >= 0) and np.all(x == np.round(x))
    assert np.array_equal(runs[0], runs[1])


def test_discrete_fast_poisson_at_zero_weight():
    # with w = 0 the calcium count is an M/M/inf queue: Poisson(lam/gamma)
    p = _dparams(lam=0.8, gamma=2.0)
    rho = 0.8 / 2.0
    est = engine.simulate_discrete_fast(
        0, p, 30000.0, 4,
        {"t1": lambda c: 1.0 if c >= 1 else 0.0,
         "t2": lambda c: 1.0 if c >= 2 else 0.0})
    for name, expect in (("t1", 1 - math.exp(-rho)),
                         ("t2", 1 - math.exp(-rho) * (1 + rho))):
        mean, se = est[name]
        assert abs(mean - expect) < 3.5 * se, (name, mean, expect, se)
