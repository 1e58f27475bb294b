"""Domain types for plasticity kernels, activation, reset and weight maps.

All specs are immutable value objects; ``validate`` checks the structural
assumption sets (firing rate growth, decay positivity, drive growth bounds,
weight-map decomposition, linear-neuron restrictions) and reports one flag
per assumption.  Unbounded-domain inequalities are spot-checked on a sample
grid; exhaustive verification is impossible and callers may certify them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class SpecError(ValueError):
    """Malformed spec (wrong shapes, negative rates); distinct from an
    assumption failure, which is reported in a ValidationReport."""


# ---------------------------------------------------------------------------
# activation / reset


@dataclass(frozen=True)
class ActivationSpec:
    """Firing rate of the output neuron, nu + slope * max(x, 0)."""

    nu: float = 0.0
    slope: float = 1.0
    form: str = "linear-positive-part"
    # growth bound constants, used only by validate
    c_beta: float = 0.0

    def __post_init__(self):
        if self.nu < 0 or self.slope < 0:
            raise SpecError("activation rates must be nonnegative")
        if self.form != "linear-positive-part":
            raise SpecError(f"unknown activation form {self.form!r}")

    def __call__(self, x: float) -> float:
        return self.nu + self.slope * x if x > 0.0 else self.nu


@dataclass(frozen=True)
class ResetSpec:
    """Drop of potential after a postsynaptic spike.

    form "none" means no reset (linear neuron); "custom" wraps a user
    function validated against the 0 <= g(x) <= max(c_g, x) bound.
    """

    form: str = "none"
    c_g: float = 0.0
    fn: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.form not in ("none", "custom"):
            raise SpecError(f"unknown reset form {self.form!r}")
        if self.form == "custom" and self.fn is None:
            raise SpecError("custom reset needs fn")
        if self.c_g < 0:
            raise SpecError("c_g must be nonnegative")

    def __call__(self, x: float) -> float:
        if self.form == "none":
            return 0.0
        return self.fn(x)


# ---------------------------------------------------------------------------
# plasticity kernels


@dataclass(frozen=True)
class PhiCurve:
    """Nonnegative, nonincreasing, differentiable curve with integrable tail.

    Used by the nearest-neighbor pair model for the spike-age weighting.
    """

    f: Callable[[float], float]
    df: Callable[[float], float]

    def __post_init__(self):
        for u in (0.0, 0.5, 1.0, 2.0, 5.0, 10.0):
            v = self.f(u)
            if v < 0:
                raise SpecError("phi curve must be nonnegative")
            if self.df(u) > 1e-12:
                raise SpecError("phi curve must be nonincreasing")
        # crude integrability check on the tail
        if self.f(50.0) > 1e-6 * max(self.f(0.0), 1e-300):
            raise SpecError("phi curve tail does not appear integrable")


def exp_phi(amplitude: float, rate: float) -> PhiCurve:
    """amplitude * exp(-rate * u), the classical exponential pairing curve."""
    if amplitude < 0 or rate <= 0:
        raise SpecError("exp_phi needs amplitude >= 0 and rate > 0")
    return PhiCurve(
        f=lambda u: amplitude * math.exp(-rate * u),
        df=lambda u: -amplitude * rate * math.exp(-rate * u),
    )


@dataclass(frozen=True)
class KernelSpec:
    """Markovian plasticity kernel: an ell-dimensional trace vector with
    exponential decay, jump maps at pre/post spikes and drive functionals.

    Between events trace i relaxes toward k0_i / gamma_i at rate gamma_i
    (or grows linearly at rate k0_i when gamma_i == 0, as in spike-age
    traces).  ``n0_kind`` tags how the dt-drive n_{a,0} behaves so the
    simulator can pick an exact integration path.
    """

    ell: int
    gamma: np.ndarray
    k0: np.ndarray
    k1: Callable[[np.ndarray], np.ndarray]  # jump increment at presyn spike
    k2: Callable[[np.ndarray], np.ndarray]  # jump increment at postsyn spike
    n_p0: Callable[[np.ndarray], float]
    n_p1: Callable[[np.ndarray], float]
    n_p2: Callable[[np.ndarray], float]
    n_d0: Callable[[np.ndarray], float]
    n_d1: Callable[[np.ndarray], float]
    n_d2: Callable[[np.ndarray], float]
    family: str = "CustomContinuous"  # PA | PNS | Calcium | CustomContinuous
    n0_kind: str = "zero"  # zero | calcium-threshold | generic
    C_k: float = 10.0
    C_n: float = 10.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ell < 1:
            raise SpecError("kernel dimension ell must be >= 1")
        gamma = np.asarray(self.gamma, dtype=float)
        k0 = np.asarray(self.k0, dtype=float)
        if gamma.shape != (self.ell,) or k0.shape != (self.ell,):
            raise SpecError("gamma and k0 must have shape (ell,)")
        if np.any(gamma < 0) or np.any(k0 < 0):
            raise SpecError("gamma and k0 must be nonnegative")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "k0", k0)
        if self.family not in ("PA", "PNS", "Calcium", "CustomContinuous"):
            raise SpecError(f"unknown kernel family {self.family!r}")
        if self.n0_kind not in ("zero", "calcium-threshold", "generic"):
            raise SpecError(f"unknown n0_kind {self.n0_kind!r}")


def _zero(z):
    return 0.0


def pa_kernel(B, gamma, C_n: float = 50.0) -> KernelSpec:
    """All-to-all pair kernel.

    B and gamma are mappings with keys ('p',1), ('p',2), ('d',1), ('d',2);
    trace order is (z_p1, z_p2, z_d1, z_d2).  Presyn spikes feed the
    1-traces, postsyn spikes the 2-traces; the drives read the opposite
    trace of the same branch.
    """
    order = [("p", 1), ("p", 2), ("d", 1), ("d", 2)]
    gam = np.array([float(gamma[k]) for k in order])
    amp1 = np.array([float(B[("p", 1)]), 0.0, float(B[("d", 1)]), 0.0])
    amp2 = np.array([0.0, float(B[("p", 2)]), 0.0, float(B[("d", 2)])])
    if np.any(gam <= 0):
        raise SpecError("PA decay rates must be strictly positive")
    return KernelSpec(
        ell=4,
        gamma=gam,
        k0=np.zeros(4),
        k1=lambda z: amp1,
        k2=lambda z: amp2,
        n_p0=_zero,
        n_p1=lambda z: z[1],  # z_p2
        n_p2=lambda z: z[0],  # z_p1
        n_d0=_zero,
        n_d1=lambda z: z[3],  # z_d2
        n_d2=lambda z: z[2],  # z_d1
        family="PA",
        n0_kind="zero",
        C_k=float(max(amp1.max(), amp2.max())),
        C_n=C_n,
        params={"B": dict(B), "gamma_traces": dict(gamma)},
    )


def pa_kernel_with_offsets(B, gamma, D, C_n: float = 50.0) -> KernelSpec:
    """Pair kernel whose jump drives carry constant offsets.

    Same traces as pa_kernel, but the event drives are n_{a,1}(z) = z_{a,2}
    + D[(a, 1)] and n_{a,2}(z) = z_{a,1} + D[(a, 2)].  The offsets break
    the strict pair structure, so the family is CustomContinuous.
    """
    base = pa_kernel(B, gamma, C_n=C_n)
    D = {k: float(D.get(k, 0.0)) for k in
         (("p", 1), ("p", 2), ("d", 1), ("d", 2))}
    if any(v < 0 for v in D.values()):
        raise SpecError("drive offsets must be nonnegative")
    return KernelSpec(
        ell=4,
        gamma=base.gamma,
        k0=base.k0,
        k1=base.k1,
        k2=base.k2,
        n_p0=_zero,
        n_p1=lambda z: z[1] + D[("p", 1)],
        n_p2=lambda z: z[0] + D[("p", 2)],
        n_d0=_zero,
        n_d1=lambda z: z[3] + D[("d", 1)],
        n_d2=lambda z: z[2] + D[("d", 2)],
        family="CustomContinuous",
        n0_kind="zero",
        C_k=base.C_k,
        C_n=C_n,
        params={"B": dict(B), "gamma_traces": dict(gamma), "D": dict(D)},
    )


def pns_kernel(phi_p1: PhiCurve, phi_p2: PhiCurve,
               phi_d1: PhiCurve, phi_d2: PhiCurve) -> KernelSpec:
    """Nearest-neighbor symmetric pair kernel.

    Traces are spike ages: z1 since the last presyn spike, z2 since the
    last postsyn spike.  Ages grow at unit rate and reset to zero at their
    own spike; drives read the opposite neuron's age through the phi curves.
    """
    return KernelSpec(
        ell=2,
        gamma=np.zeros(2),
        k0=np.ones(2),
        k1=lambda z: np.array([-z[0], 0.0]),
        k2=lambda z: np.array([0.0, -z[1]]),
        n_p0=_zero,
        n_p1=lambda z: phi_p2.f(z[1]),
        n_p2=lambda z: phi_p1.f(z[0]),
        n_d0=_zero,
        n_d1=lambda z: phi_d2.f(z[1]),
        n_d2=lambda z: phi_d1.f(z[0]),
        family="PNS",
        n0_kind="zero",
        C_n=max(phi_p1.f(0), phi_p2.f(0), phi_d1.f(0), phi_d2.f(0)) + 1.0,
        params={"phi": (phi_p1, phi_p2, phi_d1, phi_d2)},
    )


@dataclass(frozen=True)
class CalciumDriveSpec:
    """Potentiation/depression response to the calcium trace.

    threshold form: h_a(c) = 1{c >= theta_a}.  lipschitz-table form:
    piecewise-linear interpolation through (knots, values) with recorded
    Lipschitz constant.
    """

    form: str = "threshold"
    theta_p: float = 2.0
    theta_d: float = 1.0
    knots: Optional[np.ndarray] = None
    h_p_values: Optional[np.ndarray] = None
    h_d_values: Optional[np.ndarray] = None
    L: Optional[float] = None

    def __post_init__(self):
        if self.form == "threshold":
            if self.theta_p < 0 or self.theta_d < 0:
                raise SpecError("thresholds must be nonnegative")
        elif self.form == "lipschitz-table":
            if self.knots is None or self.h_p_values is None or self.h_d_values is None:
                raise SpecError("lipschitz-table needs knots and values")
            knots = np.asarray(self.knots, float)
            hp = np.asarray(self.h_p_values, float)
            hd = np.asarray(self.h_d_values, float)
            if np.any(np.diff(knots) <= 0):
                raise SpecError("knots must be strictly increasing")
            if np.any(hp < 0) or np.any(hd < 0):
                raise SpecError("table values must be nonnegative")
            object.__setattr__(self, "knots", knots)
            object.__setattr__(self, "h_p_values", hp)
            object.__setattr__(self, "h_d_values", hd)
            slopes = np.concatenate([np.diff(hp), np.diff(hd)]) / np.concatenate(
                [np.diff(knots), np.diff(knots)])
            L = float(np.max(np.abs(slopes))) if slopes.size else 0.0
            if self.L is None:
                object.__setattr__(self, "L", L)
            elif L > self.L + 1e-12:
                raise SpecError("table slope exceeds the declared Lipschitz constant")
        else:
            raise SpecError(f"unknown calcium drive form {self.form!r}")

    def h_p(self, c: float) -> float:
        if self.form == "threshold":
            return 1.0 if c >= self.theta_p else 0.0
        return float(np.interp(c, self.knots, self.h_p_values))

    def h_d(self, c: float) -> float:
        if self.form == "threshold":
            return 1.0 if c >= self.theta_d else 0.0
        return float(np.interp(c, self.knots, self.h_d_values))


def calcium_kernel(C1: float, C2: float, gamma: float,
                   drive: CalciumDriveSpec) -> KernelSpec:
    """Continuous calcium kernel: one decaying trace fed C1 per presyn and
    C2 per postsyn spike; the dt-drives are the calcium response functions."""
    if gamma <= 0:
        raise SpecError("calcium decay rate must be positive")
    if C1 < 0 or C2 < 0:
        raise SpecError("calcium jump sizes must be nonnegative")
    jump1 = np.array([float(C1)])
    jump2 = np.array([float(C2)])
    return KernelSpec(
        ell=1,
        gamma=np.array([float(gamma)]),
        k0=np.zeros(1),
        k1=lambda z: jump1,
        k2=lambda z: jump2,
        n_p0=lambda z: drive.h_p(z[0]),
        n_p1=_zero,
        n_p2=_zero,
        n_d0=lambda z: drive.h_d(z[0]),
        n_d1=_zero,
        n_d2=_zero,
        family="Calcium",
        n0_kind="calcium-threshold" if drive.form == "threshold" else "generic",
        C_k=float(max(C1, C2)),
        C_n=2.0,
        params={"C1": float(C1), "C2": float(C2), "gamma": float(gamma),
                "drive": drive},
    )


def simple_kernel(B1: float, B2: float, gamma: float) -> KernelSpec:
    """Single-trace kernel of the introductory model: the trace is fed B1
    per presyn and B2 per postsyn spike and is read out at postsyn spikes."""
    if gamma <= 0:
        raise SpecError("decay rate must be positive")
    jump1 = np.array([float(B1)])
    jump2 = np.array([float(B2)])
    return KernelSpec(
        ell=1,
        gamma=np.array([float(gamma)]),
        k0=np.zeros(1),
        k1=lambda z: jump1,
        k2=lambda z: jump2,
        n_p0=_zero,
        n_p1=_zero,
        n_p2=lambda z: z[0],
        n_d0=_zero,
        n_d1=_zero,
        n_d2=_zero,
        family="CustomContinuous",
        n0_kind="zero",
        C_k=float(max(B1, B2)),
        C_n=10.0,
        params={"B1": float(B1), "B2": float(B2), "gamma": float(gamma)},
    )


# ---------------------------------------------------------------------------
# weight map


@dataclass(frozen=True)
class PlasticityMapSpec:
    """Update map for the synaptic weight.

    linear:        dw/dt = omega_p - omega_d - mu * w
    decomposed:    dw/dt = M_p(omega_p, w) - M_d(omega_d, w) - mu * w
    instantaneous: weight reacts directly to spikes with coefficients
                   Mbar_p(w), Mbar_d(w) and leak mu (no filtering stage).
    """

    form: str = "linear"
    mu: float = 0.0
    C_M: float = 100.0
    M_p: Optional[Callable[[float, float], float]] = None
    M_d: Optional[Callable[[float, float], float]] = None
    Mbar_p: Optional[Callable[[float], float]] = None
    Mbar_d: Optional[Callable[[float], float]] = None
    K_W: tuple = (0.0, math.inf)

    def __post_init__(self):
        if self.mu < 0:
            raise SpecError("weight leak mu must be nonnegative")
        if self.form == "linear":
            pass
        elif self.form == "decomposed":
            if self.M_p is None or self.M_d is None:
                raise SpecError("decomposed form needs M_p and M_d")
        elif self.form == "instantaneous":
            if self.Mbar_p is None or self.Mbar_d is None:
                raise SpecError("instantaneous form needs Mbar_p and Mbar_d")
        else:
            raise SpecError(f"unknown plasticity form {self.form!r}")
        if self.K_W[0] < 0:
            raise SpecError("only excitatory weights are supported (K_W in R+)")

    @property
    def lipschitz(self) -> Optional[float]:
        return max(1.0, self.mu) if self.form == "linear" else None

    def rate(self, omega_p: float, omega_d: float, w: float) -> float:
        if self.form == "linear":
            return omega_p - omega_d - self.mu * w
        if self.form == "decomposed":
            return self.M_p(omega_p, w) - self.M_d(omega_d, w) - self.mu * w
        raise SpecError("instantaneous map has no filtered rate")


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class SystemState:
    t: float
    x: float
    z: np.ndarray
    omega_p: float = 0.0
    omega_d: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if np.any(z < 0):
            raise SpecError("trace vector must be nonnegative")
        object.__setattr__(self, "z", z)
        if self.x < 0:
            raise SpecError("potential must be nonnegative under the linear model")


def zero_state(ell: int, w: float = 0.0, t: float = 0.0) -> SystemState:
    return SystemState(t=t, x=0.0, z=np.zeros(ell), w=w)


@dataclass(frozen=True)
class DiscreteState:
    t: float
    x: int
    c: int
    omega_p: float = 0.0
    omega_d: float = 0.0
    w: int = 0

    def __post_init__(self):
        for name in ("x", "c", "w"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise SpecError(f"{name} must be a nonnegative integer")
        if self.omega_p < 0 or self.omega_d < 0:
            raise SpecError("filter values must be nonnegative")


# ---------------------------------------------------------------------------
# validation

_Z_SAMPLES = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0]
_X_SAMPLES = [-5.0, -1.0, 0.0, 0.5, 1.0, 5.0, 50.0]


@dataclass(frozen=True)
class ValidationReport:
    flags: dict  # assumption id -> "pass" | "fail" | "exempt" | "n/a"

    @property
    def ok(self) -> bool:
        return all(v in ("pass", "exempt", "n/a") for v in self.flags.values())

    def failed(self) -> list:
        return sorted(k for k, v in self.flags.items() if v == "fail")


def validate(kernel: KernelSpec, activation: ActivationSpec,
             reset: ResetSpec, plasticity: PlasticityMapSpec) -> ValidationReport:
    """Check the assumption sets on a documented sample grid.

    Pure and idempotent; raises SpecError only for structurally malformed
    inputs (those are caught at construction), never mutates its arguments.
    """
    flags = {}

    # firing rate: nonnegative, continuous, vanishing left of -c_beta
    flags["A-a"] = "pass"  # linear-positive-part satisfies this by form
    # reset bound 0 <= g(x) <= max(c_g, x)
    if reset.form == "none":
        flags["A-b"] = "pass"
    else:
        ok = all(0.0 <= reset(x) <= max(reset.c_g, x) for x in _X_SAMPLES if x >= 0)
        flags["A-b"] = "pass" if ok else "fail"
    # weight ODE well-posedness; granted by the supported map forms
    flags["A-c"] = "pass"

    # linear growth of the firing rate
    c_beta = max(activation.c_beta, activation.nu, activation.slope)
    ok = all(activation(x) <= c_beta * (1 + abs(x)) + 1e-12 for x in _X_SAMPLES)
    flags["B-a"] = "pass" if ok else "fail"

    # strictly positive decay and bounded jumps
    if kernel.family == "PNS":
        # age traces have zero decay; stability rests on a family-specific
        # Lyapunov argument, so the generic positivity check does not apply
        flags["B-b"] = "exempt"
    else:
        ok = bool(np.all(kernel.gamma > 0))
        ok = ok and bool(np.all(kernel.k0 <= kernel.C_k + 1e-12))
        for zv in _Z_SAMPLES:
            z = np.full(kernel.ell, zv)
            for km in (kernel.k1, kernel.k2):
                jump = np.asarray(km(z), float)
                ok = ok and np.all(z + jump >= -1e-12)
                ok = ok and np.all(np.abs(jump) <= kernel.C_k + 1e-12)
        flags["B-b"] = "pass" if ok else "fail"

    # drive growth n_{a,j}(z) <= C_n (1 + |z|)
    ok = True
    for zv in _Z_SAMPLES:
        z = np.full(kernel.ell, zv)
        bound = kernel.C_n * (1.0 + float(np.sum(z)))
        for n in (kernel.n_p0, kernel.n_p1, kernel.n_p2,
                  kernel.n_d0, kernel.n_d1, kernel.n_d2):
            v = n(z)
            if v < -1e-12 or v > bound + 1e-9:
                ok = False
    flags["B-c"] = "pass" if ok else "fail"

    # weight map decomposition
    if plasticity.form == "linear":
        flags["B-d"] = "pass"
        flags["B*-d"] = "n/a"
    elif plasticity.form == "decomposed":
        ok = True
        for om in (0.0, 0.5, 1.0, 5.0, 20.0):
            for w in (0.0, 1.0, 10.0):
                for M in (plasticity.M_p, plasticity.M_d):
                    v = M(om, w)
                    if v < -1e-12 or v > plasticity.C_M * (1 + om) + 1e-9:
                        ok = False
        flags["B-d"] = "pass" if ok else "fail"
        flags["B*-d"] = "n/a"
    else:  # instantaneous
        flags["B-d"] = "n/a"
        ok = True
        for w in (0.0, 0.5, 1.0, 10.0, 100.0):
            for M in (plasticity.Mbar_p, plasticity.Mbar_d):
                v = M(w)
                if v < -1e-12 or v > plasticity.C_M + 1e-9:
                    ok = False
        flags["B*-d"] = "pass" if ok else "fail"

    # linear-neuron restrictions
    flags["L-1"] = "pass"  # zero initial condition is the library default
    flags["L-2"] = "pass" if reset.form == "none" else "fail"
    flags["L-3"] = "pass" if plasticity.K_W[0] >= 0 else "fail"
    flags["L-4"] = "pass" if plasticity.form in ("linear", "decomposed",
                                                 "instantaneous") else "fail"
    flags["L-5"] = "pass" if activation.form == "linear-positive-part" else "fail"

    # PA structural identities: no dt-drive, drives read the opposite trace
    if kernel.family == "PA":
        ok = True
        for zv in (0.3, 1.7, 4.2):
            z = np.array([zv, 2 * zv, 3 * zv, 0.5 * zv])
            ok = ok and kernel.n_p0(z) == 0.0 and kernel.n_d0(z) == 0.0
            ok = ok and kernel.n_p1(z) == z[1] and kernel.n_p2(z) == z[0]
            ok = ok and kernel.n_d1(z) == z[3] and kernel.n_d2(z) == z[2]
        flags["PA-structure"] = "pass" if ok else "fail"

    return ValidationReport(flags=flags)
