import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synscale import model


def test_activation_positive_part():
    act = model.ActivationSpec(nu=0.5, slope=2.0)
    assert act(1.0) == 2.5
    assert act(-3.0) == 0.5
    assert act(0.0) == 0.5


def test_activation_rejects_negative_rates():
    with pytest.raises(model.SpecError):
        model.ActivationSpec(nu=-0.1, slope=1.0)
    with pytest.raises(model.SpecError):
        model.ActivationSpec(nu=0.0, slope=-1.0)


@given(st.floats(0, 10), st.floats(0, 5), st.floats(-5, 50))
def test_activation_monotone_nonnegative(nu, slope, x):
    act = model.ActivationSpec(nu=nu, slope=slope)
    assert act(x) >= 0.0
    assert act(x + 1.0) >= act(x)


def test_reset_none_is_zero():
    r = model.ResetSpec()
    assert r(5.0) == 0.0


def test_reset_custom_bound_checked_by_validate():
    k = model.simple_kernel(1.0, 1.0, 1.0)
    act = model.ActivationSpec(nu=0.0, slope=1.0)
    plast = model.PlasticityMapSpec(form="linear", mu=0.0)
    bad = model.ResetSpec(form="custom", fn=lambda x: 2.0 * x, c_g=1.0)
    rep = model.validate(k, act, bad, plast)
    assert rep.flags["A-b"] == "fail"


def test_exp_phi_values():
    phi = model.exp_phi(2.0, 3.0)
    assert phi.f(0.0) == 2.0
    assert phi.f(1.0) == pytest.approx(2.0 * math.exp(-3.0))
    assert phi.df(0.5) == pytest.approx(-6.0 * math.exp(-1.5))


def test_pa_kernel_structure():
    B = {("p", 1): 1.0, ("p", 2): 0.5, ("d", 1): 0.8, ("d", 2): 0.4}
    g = {k: 2.0 for k in B}
    k = model.pa_kernel(B, g)
    assert k.ell == 4
    z = np.array([1.0, 2.0, 3.0, 4.0])
    # presyn feeds the 1-traces, postsyn the 2-traces
    assert np.allclose(k.k1(z), [1.0, 0.0, 0.8, 0.0])
    assert np.allclose(k.k2(z), [0.0, 0.5, 0.0, 0.4])
    # drives read the opposite trace of the same branch
    assert k.n_p1(z) == 2.0 and k.n_p2(z) == 1.0
    assert k.n_d1(z) == 4.0 and k.n_d2(z) == 3.0
    assert k.n_p0(z) == 0.0 and k.n0_kind == "zero"


def test_pa_kernel_with_offsets():
    B = {("p", 1): 1.0, ("p", 2): 0.5, ("d", 1): 0.8, ("d", 2): 0.4}
    g = {k: 1.0 for k in B}
    D = {("p", 1): 0.2, ("d", 2): 0.1}
    k = model.pa_kernel_with_offsets(B, g, D)
    z = np.zeros(4)
    assert k.n_p1(z) == 0.2
    assert k.n_d2(z) == 0.1
    assert k.n_p2(z) == 0.0
    assert k.family == "CustomContinuous"


def test_pns_kernel_age_resets():
    phi = model.exp_phi(1.0, 1.0)
    k = model.pns_kernel(phi, phi, phi, phi)
    z = np.array([2.0, 3.0])
    assert np.allclose(z + k.k1(z), [0.0, 3.0])  # presyn resets own age
    assert np.allclose(z + k.k2(z), [2.0, 0.0])
    assert np.all(k.gamma == 0.0) and np.all(k.k0 == 1.0)
    assert k.n_p1(z) == pytest.approx(math.exp(-3.0))


def test_calcium_kernel_threshold():
    d = model.CalciumDriveSpec(theta_p=2.0, theta_d=1.0)
    k = model.calcium_kernel(1.0, 2.0, 1.5, d)
    assert k.n_p0(np.array([2.5])) == 1.0
    assert k.n_p0(np.array([1.5])) == 0.0
    assert k.n_d0(np.array([1.5])) == 1.0
    assert k.n0_kind == "calcium-threshold"


def test_calcium_lipschitz_table():
    d = model.CalciumDriveSpec(form="lipschitz-table",
                               knots=[0.0, 1.0, 2.0],
                               h_p_values=[0.0, 0.0, 1.0],
                               h_d_values=[0.0, 1.0, 1.0])
    assert d.L == 1.0
    assert d.h_p(1.5) == pytest.approx(0.5)
    assert d.h_d(0.25) == pytest.approx(0.25)
    with pytest.raises(model.SpecError):
        model.CalciumDriveSpec(form="lipschitz-table",
                               knots=[0.0, 1.0], h_p_values=[0.0, 5.0],
                               h_d_values=[0.0, 0.0], L=1.0)


def test_simple_kernel_readout():
    k = model.simple_kernel(1.0, 0.5, 1.0)
    z = np.array([1.7])
    assert k.n_p2(z) == 1.7
    assert k.n_p1(z) == 0.0 and k.n_d1(z) == 0.0 and k.n_d2(z) == 0.0


def test_plasticity_linear_rate():
    p = model.PlasticityMapSpec(form="linear", mu=2.0)
    assert p.rate(3.0, 1.0, 0.5) == pytest.approx(3.0 - 1.0 - 1.0)
    assert p.lipschitz is not None


def test_plasticity_instantaneous_requires_mbars():
    with pytest.raises(model.SpecError):
        model.PlasticityMapSpec(form="instantaneous", mu=0.0)


def test_states_validate():
    s = model.zero_state(3, w=1.0)
    assert s.z.shape == (3,) and s.w == 1.0
    with pytest.raises(model.SpecError):
        model.SystemState(t=0.0, x=-1.0, z=np.zeros(1))
    with pytest.raises(model.SpecError):
        model.DiscreteState(t=0.0, x=1, c=-1, w=0)
    with pytest.raises(model.SpecError):
        model.DiscreteState(t=0.0, x=1.5, c=0, w=0)


def test_validate_pa_passes():
    B = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    g = {(a, i): 1.0 for a in "pd" for i in (1, 2)}
    rep = model.validate(model.pa_kernel(B, g),
                         model.ActivationSpec(nu=0.1, slope=1.0),
                         model.ResetSpec(),
                         model.PlasticityMapSpec(form="linear", mu=1.0))
    assert rep.ok, rep.failed()


def test_validate_flags_unbounded_drive():
    k = model.simple_kernel(1.0, 1.0, 1.0)
    bad = model.KernelSpec(
        ell=1, gamma=k.gamma, k0=k.k0, k1=k.k1, k2=k.k2,
        n_p0=k.n_p0, n_p1=lambda z: math.inf, n_p2=k.n_p2,
        n_d0=k.n_d0, n_d1=k.n_d1, n_d2=k.n_d2)
    rep = model.validate(bad, model.ActivationSpec(nu=0.0, slope=1.0),
                         model.ResetSpec(),
                         model.PlasticityMapSpec(
                             form="instantaneous", mu=0.0,
                             Mbar_p=lambda w: 1.0, Mbar_d=lambda w: 0.0))
    assert not rep.ok
