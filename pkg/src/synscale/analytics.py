"""Invariant-distribution functionals of the fast process at pinned weight.

Closed forms and quadratures for the families that admit them (all-to-all
pair, nearest-neighbor pair, continuous calcium, integer calcium queue),
plus a Monte Carlo time-average estimator for everything else.  Semi-infinite
integrals are truncated where the integrand's exponential envelope drops
below TRUNC_EPS and evaluated by adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import comb

from .engine import NumericError, simulate_fast_fixed_w
from .model import ActivationSpec, KernelSpec, PhiCurve, ResetSpec, SpecError

QUAD_ABS_TOL = 1e-10
TRUNC_EPS = 1e-14


def _quad(f, lo, hi):
    val, err = integrate.quad(f, lo, hi, epsabs=QUAD_ABS_TOL,
                              epsrel=1e-11, limit=400)
    if not math.isfinite(val) or err > max(1e-7, 1e-6 * abs(val)):
        raise NumericError(f"quadrature did not converge (err={err})")
    return val


def _cutoff(scale: float, rate: float) -> float:
    """Upper limit where scale * exp(-rate * s) falls below TRUNC_EPS."""
    if scale <= TRUNC_EPS or rate <= 0:
        return 0.0
    return math.log(scale / TRUNC_EPS) / rate


# ---------------------------------------------------------------------------
# all-to-all pair family


@dataclass(frozen=True)
class PACoefficients:
    """Affine drive coefficients of the pair kernel: the averaged drive of
    branch a at weight w is nu/(beta*lam) * lambda_a1 + (lambda_a1 +
    lambda_a2) * w."""

    lambda_p1: float
    lambda_p2: float
    lambda_d1: float
    lambda_d2: float
    lam: float
    nu: float
    beta: float

    def drive(self, a: str, w: float) -> float:
        l1 = self.lambda_p1 if a == "p" else self.lambda_d1
        l2 = self.lambda_p2 if a == "p" else self.lambda_d2
        return (self.nu / (self.beta * self.lam)) * l1 + (l1 + l2) * w


def pa_coeffs(kernel: KernelSpec, activation: ActivationSpec,
              lam: float) -> PACoefficients:
    if kernel.family != "PA":
        raise SpecError("pa_coeffs needs a PA kernel")
    if activation.slope <= 0:
        raise SpecError("pa_coeffs needs a positive rate slope")
    beta = activation.slope
    B = kernel.params["B"]
    gam = kernel.params["gamma_traces"]

    def lams(a):
        l1 = beta * lam ** 2 * (B[(a, 1)] / gam[(a, 1)] + B[(a, 2)] / gam[(a, 2)])
        l2 = beta * lam * B[(a, 1)] / (1.0 + gam[(a, 1)])
        return l1, l2

    lp1, lp2 = lams("p")
    ld1, ld2 = lams("d")
    return PACoefficients(lambda_p1=lp1, lambda_p2=lp2, lambda_d1=ld1,
                          lambda_d2=ld2, lam=lam, nu=activation.nu, beta=beta)


# ---------------------------------------------------------------------------
# nearest-neighbor pair family


@dataclass(frozen=True)
class PNSParams:
    lam: float
    nu: float
    beta: float  # rate slope
    w: float = 0.0


def postsyn_count_laplace(w: float, xi: float, a: float,
                          params: PNSParams) -> float:
    """E[exp(-xi * N(0, a])] for the stationary postsynaptic spike stream."""
    if w < 0 or a < 0 or xi < 0:
        raise SpecError("w, a, xi must be nonnegative")
    if a == 0 or xi == 0:
        return 1.0
    lam, nu, beta = params.lam, params.nu, params.beta
    r = -math.expm1(-xi)  # 1 - e^{-xi}
    exponent = nu * a * r

    bw = beta * w * r
    if bw > 0 and lam > 0:
        exponent += lam * _quad(
            lambda s: -math.expm1(-bw * -math.expm1(s - a)), 0.0, a)
        q = bw * -math.expm1(-a)
        cut = _cutoff(q, 1.0)
        if cut > 0:
            exponent += lam * _quad(
                lambda s: -math.expm1(-q * math.exp(-s)), 0.0, cut)
    return math.exp(-exponent)


def pns_tail(w: float, a: float, params: PNSParams) -> float:
    """P(Z2 >= a): stationary age of the last postsynaptic spike."""
    if w < 0 or a < 0:
        raise SpecError("w and a must be nonnegative")
    if a == 0:
        return 1.0
    lam, nu, beta = params.lam, params.nu, params.beta
    exponent = nu * a
    bw = beta * w
    if bw > 0 and lam > 0:
        exponent += lam * _quad(
            lambda s: -math.expm1(-bw * -math.expm1(s - a)), 0.0, a)
        q = bw * -math.expm1(-a)
        cut = _cutoff(q, 1.0)
        if cut > 0:
            exponent += lam * _quad(
                lambda s: -math.expm1(-q * math.exp(-s)), 0.0, cut)
    return math.exp(-exponent)


def pns_drive(w: float, phi1: PhiCurve, phi2: PhiCurve,
              params: PNSParams) -> float:
    """Averaged branch drive Psi(w) = E[beta(X) phi1(Z1)] + lam E[phi2(Z2)].

    Uses the stationary representation (X, Z1) = (w e^{-E}(1+S), E) with
    E ~ Exp(lam) independent of S, E[S] = lam, so the first term needs only
    one-dimensional Laplace-type integrals of phi1; the second integrates
    phi2's derivative against the Z2 distribution function.
    """
    lam, nu, beta = params.lam, params.nu, params.beta
    if lam <= 0:
        raise SpecError("presynaptic rate must be positive")

    cut = _cutoff(1.0, lam)
    e_phi1 = lam * _quad(lambda u: math.exp(-lam * u) * phi1.f(u), 0.0, cut)
    e_exp_phi1 = lam * _quad(
        lambda u: math.exp(-(lam + 1.0) * u) * phi1.f(u), 0.0, cut)
    term_x = nu * e_phi1 + beta * w * (1.0 + lam) * e_exp_phi1

    # E[phi2(Z2)] = -int phi2'(u) P(Z2 <= u) du; phi2' <= 0 and integrable
    rate = min(1.0, nu + lam) if (nu + lam) > 0 else 1.0
    cut2 = max(_cutoff(max(-phi2.df(0.0), 1.0), rate), 50.0)
    term_z2 = _quad(
        lambda u: -phi2.df(u) * (1.0 - pns_tail(w, u, params)), 0.0, cut2)
    return term_x + lam * term_z2


# ---------------------------------------------------------------------------
# continuous calcium family


@dataclass(frozen=True)
class CalciumParams:
    C1: float
    C2: float
    gamma: float
    lam: float
    nu: float
    beta: float  # rate slope


def calcium_laplace(w: float, a: float, b: float,
                    params: CalciumParams) -> float:
    """Stationary Laplace transform E[exp(-a X - b C)] of the continuous
    calcium pair (shot-noise potential, doubly driven calcium trace)."""
    if w < 0 or a < 0 or b < 0:
        raise SpecError("w, a, b must be nonnegative")
    if a == 0 and b == 0:
        return 1.0
    C1, C2, gam = params.C1, params.C2, params.gamma
    lam, nu, beta = params.lam, params.nu, params.beta

    exponent = 0.0
    if nu > 0 and b * C2 > 0:
        cut = _cutoff(b * C2, gam)
        exponent += nu * _quad(
            lambda v: -math.expm1(-b * C2 * math.exp(-gam * v)), 0.0, cut)

    if lam > 0:
        bc2 = b * C2

        def inner(v):
            # weight accumulated by one presynaptic point at time -v
            g = a * w * math.exp(-v) + b * C1 * math.exp(-gam * v)
            if beta * w > 0 and bc2 > 0:
                g += beta * w * math.exp(-v) * _quad(
                    lambda s: -math.expm1(-bc2 * math.exp(-gam * s))
                    * math.exp(s), 0.0, v)
            return g

        scale = a * w + b * C1 + (beta * w * bc2 / (gam + 1.0) if bc2 > 0 else 0.0)
        cut = max(_cutoff(scale, min(1.0, gam)), 1.0)
        exponent += lam * _quad(lambda v: -math.expm1(-inner(v)), 0.0, cut)
    return math.exp(-exponent)


# ---------------------------------------------------------------------------
# Monte Carlo fallback


@dataclass(frozen=True)
class InvariantEstimate:
    means: dict
    stderrs: dict
    ess: dict
    burn_in: float
    warnings: dict  # name -> True when batch means look non-mixing


def mc_invariant(kernel: KernelSpec, activation: ActivationSpec,
                 reset: ResetSpec, w: float, functionals: dict,
                 horizon: float = 1e4, seed: int = 0, sample_dt: float = 0.05,
                 burn_in: float = 0.1, n_batches: int = 32,
                 replica: int = 0) -> InvariantEstimate:
    """Ergodic time averages over one long pinned-weight trajectory.

    ``functionals`` maps a name to a vectorized function f(x, z) taking the
    sample arrays (x shape (n,), z shape (n, ell)).  Standard errors use 32
    batch means after discarding the burn-in fraction.
    """
    traj = simulate_fast_fixed_w(kernel, activation, reset, w, horizon,
                                 seed, sample_dt=sample_dt, replica=replica)
    n0 = int(burn_in * len(traj.times))
    x, z = traj.x[n0:], traj.z[n0:]
    n = len(x)
    if n < n_batches * 2:
        raise SpecError("horizon too short for batch-means estimation")
    means, ses, esss, warns = {}, {}, {}, {}
    usable = (n // n_batches) * n_batches
    for name, f in functionals.items():
        v = np.asarray(f(x, z), dtype=float)
        if v.shape != (n,):
            raise SpecError(f"functional {name!r} must return one value per sample")
        bm = v[:usable].reshape(n_batches, -1).mean(axis=1)
        mean = float(v.mean())
        se = float(bm.std(ddof=1) / math.sqrt(n_batches))
        se_naive = float(v.std(ddof=1) / math.sqrt(n))
        means[name] = mean
        ses[name] = se
        esss[name] = float((v.std(ddof=1) / se) ** 2) if se > 0 else float(n)
        warns[name] = bool(se_naive > 0 and se / se_naive > 20.0)
    return InvariantEstimate(means=means, stderrs=ses, ess=esss,
                             burn_in=burn_in, warnings=warns)


# ---------------------------------------------------------------------------
# integer calcium queue


@dataclass(frozen=True)
class CQParams:
    C1: int
    C2: int
    gamma: float
    lam: float
    beta: float  # postsynaptic rate slope (rate is beta * x)

    def __post_init__(self):
        if self.C1 < 0 or self.C2 < 0:
            raise SpecError("C1, C2 must be nonnegative integers")
        if self.gamma <= 0 or self.lam < 0 or self.beta < 0:
            raise SpecError("rates must be nonnegative (gamma positive)")


def _phi1m(x: float) -> float:
    # (1 - e^{-x}) / x, stable at 0
    if abs(x) < 1e-8:
        return 1.0 - 0.5 * x + x * x / 6.0
    return -math.expm1(-x) / x


def _p2(s: float, k: int, params: CQParams):
    """beta/(beta+1-gamma k) * binom(C2,k) * (e^{-gamma k s} - e^{-(beta+1)s}),
    written with the removable singularity at beta + 1 = gamma k factored
    out: beta * binom * s * e^{-gamma k s} * phi((beta+1-gamma k) s)."""
    d = params.beta + 1.0 - params.gamma * k
    return (params.beta * comb(params.C2, k, exact=True) * s
            * math.exp(-params.gamma * k * s) * _phi1m(d * s))


def cq_pgf(u: float, w: int, params: CQParams) -> float:
    """Generating function E[u^C] of the stationary calcium count."""
    if not (0.0 <= u <= 1.0):
        raise SpecError("u must lie in [0, 1]")
    if w < 0 or int(w) != w:
        raise SpecError("w must be a nonnegative integer")
    if u == 1.0:
        return 1.0
    C1, C2, gam, lam = params.C1, params.C2, params.gamma, params.lam
    du = u - 1.0

    def one_minus_delta(s):
        f1 = (1.0 + du * math.exp(-gam * s)) ** C1
        f2 = 1.0
        for k in range(1, C2 + 1):
            f2 += du ** k * _p2(s, k, params)
        return 1.0 - f1 * f2 ** w

    cut = max(_cutoff(float(C1 + w * C2 + 1), gam), 1.0)
    # the s e^{-gamma k s} factors decay slower than e^{-gamma s}; pad
    cut += 10.0 / gam
    return math.exp(-lam * _quad(one_minus_delta, 0.0, cut))


def cq_pgf_c1(u: float, w: int, params: CQParams) -> float:
    """Specialized C1 = C2 = 1 generating function (single-jump kernel)."""
    if params.C1 != 1 or params.C2 != 1:
        raise SpecError("specialized path needs C1 = C2 = 1")
    if not (0.0 <= u <= 1.0):
        raise SpecError("u must lie in [0, 1]")
    if u == 1.0:
        return 1.0
    gam, lam = params.gamma, params.lam

    def p(s):
        return _p2(s, 1, params)

    def integrand(s):
        e = math.exp(-gam * s)
        return 1.0 - (1.0 - e + u * e) * (1.0 - p(s) + u * p(s)) ** w

    cut = max(_cutoff(float(1 + w), gam), 1.0) + 10.0 / gam
    return math.exp(-lam * _quad(integrand, 0.0, cut))


def cq_tail(w: int, n: int, params: CQParams) -> float:
    """P(C >= n) for n in {0, 1, 2} of the stationary calcium count with
    unit jumps (C1 = C2 = 1)."""
    if params.C1 != 1 or params.C2 != 1:
        raise SpecError("tail formulas need C1 = C2 = 1")
    if n not in (0, 1, 2):
        raise SpecError("n must be 0, 1 or 2")
    if w < 0 or int(w) != w:
        raise SpecError("w must be a nonnegative integer")
    if n == 0:
        return 1.0
    gam, lam = params.gamma, params.lam
    w = int(w)

    def p(s):
        return _p2(s, 1, params)

    cut = max(_cutoff(float(1 + w), gam), 1.0) + 10.0 / gam
    g0 = math.exp(-lam * _quad(
        lambda s: 1.0 - (-math.expm1(-gam * s)) * (1.0 - p(s)) ** w, 0.0, cut))
    if n == 1:
        return 1.0 - g0

    def dg_integrand(s):
        ps = p(s)
        base = (1.0 - ps) ** w
        term = math.exp(-gam * s) * base
        if w > 0:
            term += w * ps * (-math.expm1(-gam * s)) * (1.0 - ps) ** (w - 1)
        return term

    dg0 = lam * _quad(dg_integrand, 0.0, cut) * g0
    return 1.0 - g0 - dg0
