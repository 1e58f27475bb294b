import math
import os

import numpy as np
import pytest

from synscale import analytics, engine, harness, limits, model


def test_toy_drive_coeffs_against_mc():
    # the quadratic drive is E[beta(X) Z] under the pinned fast law
    B1, B2, gam, lam, nu, slope = 1.0, 0.5, 1.0, 1.0, 0.2, 1.0
    c0, c1, c2 = harness.toy_drive_coeffs(B1, B2, gam, lam, nu, slope)
    k = model.simple_kernel(B1, B2, gam)
    k.params["lambda"] = lam
    act = model.ActivationSpec(nu=nu, slope=slope)
    for w in (0.5, 2.0):
        est = analytics.mc_invariant(
            k, act, model.ResetSpec(), w,
            {"d": lambda x, z: (nu + slope * np.maximum(x, 0)) * z[:, 0]},
            horizon=5000.0, seed=71)
        expect = c0 + c1 * w + c2 * w * w
        m, s = est.means["d"], est.stderrs["d"]
        assert abs(m - expect) < 3.5 * s, (w, m, expect, s)


def test_toy_analytic_solution_matches_ode():
    for name, p in harness.figure1_golden_params().items():
        c0, c1, c2 = harness.toy_drive_coeffs(p["B1"], p["B2"], p["gamma"],
                                              p["lam"], p["nu"], p["slope"])
        plast = model.PlasticityMapSpec(form="instantaneous", mu=p["mu"],
                                        Mbar_p=lambda w: 1.0,
                                        Mbar_d=lambda w: 0.0)
        grid = np.linspace(0.0, 4.0, 41)
        sol = limits.solve_nofilter(lambda w: c0 + c1 * w + c2 * w * w,
                                    lambda w: 0.0, plast, 1.0, 4.0, grid)
        ana = harness.toy_analytic_solution(c0, c1, c2, p["mu"], 1.0, grid)
        mask = np.isfinite(sol.w) & np.isfinite(ana)
        assert mask.sum() >= 2, name
        assert np.max(np.abs(sol.w[mask] - ana[mask])) < 1e-6, name


def test_toy_analytic_affine_case():
    t = np.linspace(0, 3, 7)
    out = harness.toy_analytic_solution(1.0, 0.5, 0.0, 1.5, 2.0, t)
    assert np.allclose(out, limits.affine_solution(1.0, -1.0, 2.0, t))


def test_classify_golden_regimes():
    expected = {"explosive": "explosive", "divergent": "divergent",
                "bistable": "bistable", "stable": "stable"}
    for name, p in harness.figure1_golden_params().items():
        rep = harness.classify_regime(p, [1.0, 3.0])
        assert rep.regime == expected[name], (name, rep)
        if name in ("bistable", "stable"):
            assert rep.w_eq == pytest.approx(2.0, abs=1e-6)
        if name == "bistable":
            assert not rep.fates[1.0].startswith("explodes")
            assert rep.fates[3.0].startswith("explodes")
            assert 1.0 < rep.w_eq < 3.0


def test_classify_explosive_reports_blowup_times():
    p = harness.figure1_golden_params()["explosive"]
    rep = harness.classify_regime(p, [1.0, 3.0])
    assert rep.t_exp[3.0] < rep.t_exp[1.0] < math.inf


def test_eps_sweep_statistics_and_exclusions():
    grid = np.linspace(0.0, 1.0, 5)

    class Fake:
        def __init__(self, w, terminated="completed", t_exp=None):
            self.samples = np.column_stack([grid, w])
            self.columns = ["t", "w"]
            self.terminated = terminated
            self.t_exp = t_exp

        def column(self, name):
            return self.samples[:, self.columns.index(name)]

    def simulate(eps, seed, replica):
        if replica == 3:
            w = np.array([1.0, 2.0, np.nan, np.nan, np.nan])
            return Fake(w, terminated="blowup", t_exp=0.3)
        return Fake(np.full(5, float(replica)))

    limit = np.zeros(5)
    rep = harness.eps_sweep(simulate, limit, [0.1], 5, 0, grid)
    # completed replicas contribute 0,1,2,4; the blown-up one only early
    assert rep.n_replicas[0.1] == 4
    assert rep.excluded[0.1] == 1
    assert rep.blowup_frac[0.1] == pytest.approx(0.2)
    assert rep.mean_t_exp[0.1] == pytest.approx(0.3)
    assert rep.mean_w[0.1][0] == pytest.approx((0 + 1 + 2 + 4 + 1) / 5)
    assert rep.mean_w[0.1][4] == pytest.approx((0 + 1 + 2 + 4) / 4)
    assert rep.sup_err[0.1] == pytest.approx(rep.mean_w[0.1].max())


def test_eps_sweep_needs_replicas():
    with pytest.raises(model.SpecError):
        harness.eps_sweep(lambda *a: None, np.zeros(2), [0.1], 1, 0,
                          np.array([0.0, 1.0]))


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("SIM_THREADS", raising=False)
    assert harness.worker_count() == 1
    monkeypatch.setenv("SIM_THREADS", "4")
    assert harness.worker_count() == 4
    monkeypatch.setenv("SIM_THREADS", "junk")
    assert harness.worker_count() == 1


def test_eps_sweep_thread_invariance(monkeypatch):
    p = harness.figure1_golden_params()["stable"]
    grid = np.linspace(0.0, 2.0, 11)
    sim = harness.toy_bundle_simulate(p, 1.0, grid)
    limit = np.zeros(11)
    monkeypatch.setenv("SIM_THREADS", "1")
    r1 = harness.eps_sweep(sim, limit, [0.05], 6, 3, grid)
    monkeypatch.setenv("SIM_THREADS", "4")
    r4 = harness.eps_sweep(sim, limit, [0.05], 6, 3, grid)
    assert np.array_equal(r1.mean_w[0.05], r4.mean_w[0.05])
    assert np.array_equal(r1.sd_w[0.05], r4.sd_w[0.05])


def test_discrete_drive_ar_matches_tails():
    p = harness.figure2_params()
    drive = harness.discrete_drive_ar(2.0, 1.0, p)
    cq = analytics.CQParams(C1=1, C2=1, gamma=p["gamma"], lam=p["lam"],
                            beta=p["slope"])
    hp, hd = drive(5)
    assert hp == pytest.approx(analytics.cq_tail(5, 2, cq))
    assert hd == pytest.approx(analytics.cq_tail(5, 1, cq))
