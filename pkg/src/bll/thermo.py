"""Gas model: pressure/energy/entropy closure, transport laws, and the
derived Oberbeck-Boussinesq coefficients.

The closure family is

    p(rho, theta) = theta^{5/2} P(Z) + (a/3) theta^4,   Z = rho / theta^{3/2},
    P(Z) = Z + p_inf Z^{5/3},

with monoatomic internal energy e = (3/2) theta^{5/2} P(Z) / rho + a theta^4 / rho
and entropy s = S(Z) + (4a/3) theta^3 / rho, S(Z) = -log Z + s0.  For this P
the combination (5/3 P - P' Z)/Z equals 2/3 exactly, which forces S'(Z) = -1/Z.

All derivatives are analytic closed forms; finite differences appear only in
test oracles (gibbs_residual).  Every function is vectorized over rho/theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StabilityError

__all__ = [
    "EosParams",
    "ThermoPoint",
    "ObCoefficients",
    "HypothesisReport",
    "pressure",
    "internal_energy",
    "entropy",
    "rho_e",
    "pressure_derivatives",
    "entropy_derivatives",
    "energy_dtheta",
    "sound_speed_squared",
    "theta_from_rho_e",
    "transport",
    "ob_coefficients",
    "check_hypotheses",
    "check_limit_identities",
    "gibbs_residual",
]


@dataclass(frozen=True)
class EosParams:
    """Closure parameters of the gas model and its transport laws."""

    p_inf: float = 0.0
    a: float = 0.0
    mu0: float = 1e-2
    eta0: float = 0.0
    kappa0: float = 1e-2
    beta: float = 6.5
    s0: float = 0.0

    def __post_init__(self):
        if not (self.p_inf >= 0 and self.a >= 0 and self.eta0 >= 0 and self.beta >= 0):
            raise DomainError("p_inf, a, eta0, beta must be >= 0")
        if not (self.mu0 > 0 and self.kappa0 > 0):
            raise DomainError("mu0 and kappa0 must be > 0")


@dataclass(frozen=True)
class ThermoPoint:
    """A single (rho, theta) state; both strictly positive."""

    rho: float
    theta: float

    def __post_init__(self):
        if not (np.isfinite(self.rho) and np.isfinite(self.theta)):
            raise DomainError("non-finite thermodynamic state")
        if self.rho <= 0 or self.theta <= 0:
            raise DomainError("rho and theta must be > 0")


@dataclass(frozen=True)
class ObCoefficients:
    """Limit-system coefficients at a reference state (rho_bar, theta_bar).

    alpha: thermal expansion; c_p: specific heat at constant pressure;
    lam: non-local mixing weight, in (0,1); remaining fields cache the
    partial derivatives and kappa(theta_bar) used alongside them.
    """

    rho_bar: float
    theta_bar: float
    alpha: float
    c_p: float
    lam: float
    p_rho: float
    p_theta: float
    e_theta: float
    s_rho: float
    s_theta: float
    kappa_bar: float


def _check_state(rho, theta):
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(theta))):
        raise DomainError("non-finite thermodynamic state")
    if np.any(rho <= 0) or np.any(theta <= 0):
        raise DomainError("rho and theta must be > 0")
    return rho, theta


def _P(Z, eos):
    return Z + eos.p_inf * Z ** (5.0 / 3.0)


def _P_prime(Z, eos):
    return 1.0 + (5.0 / 3.0) * eos.p_inf * Z ** (2.0 / 3.0)


def pressure(rho, theta, eos):
    """p = theta^{5/2} P(Z) + (a/3) theta^4."""
    rho, theta = _check_state(rho, theta)
    Z = rho * theta ** -1.5
    return theta ** 2.5 * _P(Z, eos) + (eos.a / 3.0) * theta ** 4


def internal_energy(rho, theta, eos):
    """e = (3/2) theta^{5/2} P(Z) / rho + a theta^4 / rho, per unit mass."""
    rho, theta = _check_state(rho, theta)
    Z = rho * theta ** -1.5
    return 1.5 * theta ** 2.5 * _P(Z, eos) / rho + eos.a * theta ** 4 / rho


def entropy(rho, theta, eos):
    """s = -log Z + s0 + (4a/3) theta^3 / rho, per unit mass."""
    rho, theta = _check_state(rho, theta)
    Z = rho * theta ** -1.5
    return -np.log(Z) + eos.s0 + (4.0 * eos.a / 3.0) * theta ** 3 / rho


def rho_e(rho, theta, eos):
    """Volumetric internal energy rho*e; the conserved quantity of the heat balance."""
    rho, theta = _check_state(rho, theta)
    return 1.5 * rho * theta + 1.5 * eos.p_inf * rho ** (5.0 / 3.0) + eos.a * theta ** 4


def pressure_derivatives(rho, theta, eos):
    """(dp/drho, dp/dtheta) in closed form.

    dp/drho = theta P'(Z); dp/dtheta = (5/2) theta^{3/2} P(Z)
    - (3/2) rho P'(Z) + (4a/3) theta^3.
    """
    rho, theta = _check_state(rho, theta)
    Z = rho * theta ** -1.5
    p_rho = theta * _P_prime(Z, eos)
    p_theta = (
        2.5 * theta ** 1.5 * _P(Z, eos)
        - 1.5 * rho * _P_prime(Z, eos)
        + (4.0 * eos.a / 3.0) * theta ** 3
    )
    return p_rho, p_theta


def entropy_derivatives(rho, theta, eos):
    """(ds/drho, ds/dtheta); consistent with Gibbs and the Maxwell relation."""
    rho, theta = _check_state(rho, theta)
    s_rho = -1.0 / rho - (4.0 * eos.a / 3.0) * theta ** 3 / rho ** 2
    s_theta = 1.5 / theta + 4.0 * eos.a * theta ** 2 / rho
    return s_rho, s_theta


def energy_dtheta(rho, theta, eos):
    """de/dtheta = 3/2 + 4a theta^3 / rho."""
    rho, theta = _check_state(rho, theta)
    return 1.5 + 4.0 * eos.a * theta ** 3 / rho


def sound_speed_squared(rho, theta, eos):
    """Adiabatic sound speed squared: p_rho + theta p_theta^2 / (rho^2 e_theta)."""
    p_rho, p_theta = pressure_derivatives(rho, theta, eos)
    e_th = energy_dtheta(rho, theta, eos)
    return p_rho + theta * p_theta ** 2 / (rho ** 2 * e_th)


def theta_from_rho_e(rho, E, eos, theta_guess=None):
    """Invert rho*e = E for theta at given rho.

    Linear when a == 0; otherwise Newton on the strictly increasing map
    theta -> (3/2) rho theta + a theta^4 (monotone, so the root is unique).
    """
    rho = np.asarray(rho, dtype=float)
    E = np.asarray(E, dtype=float)
    R = E - 1.5 * eos.p_inf * rho ** (5.0 / 3.0)
    if np.any(~np.isfinite(R)) or np.any(R <= 0):
        raise DomainError("internal energy below the cold-pressure floor")
    if eos.a == 0.0:
        return R / (1.5 * rho)
    theta = np.asarray(theta_guess, dtype=float).copy() if theta_guess is not None else R / (1.5 * rho)
    theta = np.maximum(theta, 1e-30)
    for _ in range(60):
        f = 1.5 * rho * theta + eos.a * theta ** 4 - R
        df = 1.5 * rho + 4.0 * eos.a * theta ** 3
        step = f / df
        theta = np.maximum(theta - step, 0.5 * theta)
        if np.max(np.abs(step)) <= 1e-14 * np.max(theta):
            break
    return theta


def transport(theta, eos):
    """(mu, eta, kappa) = (mu0(1+theta), eta0(1+theta), kappa0(1+theta^beta))."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
        raise DomainError("theta must be finite and > 0")
    mu = eos.mu0 * (1.0 + theta)
    eta = eos.eta0 * (1.0 + theta)
    kappa = eos.kappa0 * (1.0 + theta ** eos.beta)
    return mu, eta, kappa


def ob_coefficients(rho_bar, theta_bar, eos):
    """Evaluate the limit-system coefficients at the reference state.

    alpha = (1/rho_bar) p_theta / p_rho,
    c_p   = e_theta + theta_bar alpha p_theta / rho_bar,
    lam   = theta_bar alpha p_theta / (rho_bar c_p).
    """
    pt = ThermoPoint(rho_bar, theta_bar)
    p_rho, p_theta = pressure_derivatives(pt.rho, pt.theta, eos)
    e_th = energy_dtheta(pt.rho, pt.theta, eos)
    p_rho = float(p_rho)
    p_theta = float(p_theta)
    e_th = float(e_th)
    if p_rho <= 0 or e_th <= 0:
        raise StabilityError(
            f"thermodynamic stability fails at ({rho_bar}, {theta_bar}): "
            f"p_rho={p_rho}, e_theta={e_th}"
        )
    alpha = p_theta / (rho_bar * p_rho)
    if alpha <= 0:
        raise StabilityError(f"thermal expansion alpha={alpha} not positive")
    c_p = e_th + theta_bar * alpha * p_theta / rho_bar
    lam = theta_bar * alpha * p_theta / (rho_bar * c_p)
    assert 0.0 < lam < 1.0, "lambda outside (0,1) despite HTS"
    s_rho, s_theta = entropy_derivatives(pt.rho, pt.theta, eos)
    _, _, kappa_bar = transport(theta_bar, eos)
    return ObCoefficients(
        rho_bar=float(rho_bar),
        theta_bar=float(theta_bar),
        alpha=alpha,
        c_p=c_p,
        lam=lam,
        p_rho=p_rho,
        p_theta=p_theta,
        e_theta=e_th,
        s_rho=float(s_rho),
        s_theta=float(s_theta),
        kappa_bar=float(kappa_bar),
    )


def check_limit_identities(rho_bar, theta_bar, eos):
    """Residuals (r26, r27, r29) of the three closure identities; each must be 0.

    r26: the coefficient multiplying the density mismatch in the limit
         entropy balance,
         -s_theta p_rho/p_theta - s_rho (c_p rho_bar/(theta_bar alpha p_theta) - 1);
    r27: [s_rho p_theta/p_rho - s_theta] kappa/c_p + kappa/theta_bar
         (the bracket evaluates to -kappa(theta_bar)/theta_bar);
    r29: rho_bar (s_rho - s_theta p_rho/p_theta) (theta_bar alpha / c_p) + 1.
    """
    c = ob_coefficients(rho_bar, theta_bar, eos)
    r26 = -c.s_theta * (c.p_rho / c.p_theta) - c.s_rho * (
        c.c_p * c.rho_bar / (c.theta_bar * c.alpha * c.p_theta) - 1.0
    )
    r27 = (c.s_rho * c.p_theta / c.p_rho - c.s_theta) * c.kappa_bar / c.c_p + c.kappa_bar / c.theta_bar
    r29 = c.rho_bar * (c.s_rho - c.s_theta * c.p_rho / c.p_theta) * (c.theta_bar * c.alpha / c.c_p) + 1.0
    return float(r26), float(r27), float(r29)


def gibbs_residual(rho, theta, eos, s0_gradient=0.0):
    """Max-abs relative residual of the Gibbs relation via central differences.

    Checks theta ds/dtheta = de/dtheta and theta ds/drho = de/drho - p/rho^2
    with finite-difference derivatives (step 1e-6 * scale).  s0_gradient is a
    negative-control hook: it adds a spurious rho-linear term to the entropy.
    """
    rho, theta = _check_state(rho, theta)

    def s_fn(r, t):
        return entropy(r, t, eos) + s0_gradient * r

    hr = 1e-6 * np.maximum(np.abs(rho), 1.0)
    ht = 1e-6 * np.maximum(np.abs(theta), 1.0)
    ds_dr = (s_fn(rho + hr, theta) - s_fn(rho - hr, theta)) / (2 * hr)
    ds_dt = (s_fn(rho, theta + ht) - s_fn(rho, theta - ht)) / (2 * ht)
    de_dr = (internal_energy(rho + hr, theta, eos) - internal_energy(rho - hr, theta, eos)) / (2 * hr)
    de_dt = (internal_energy(rho, theta + ht, eos) - internal_energy(rho, theta - ht, eos)) / (2 * ht)
    p = pressure(rho, theta, eos)
    r1 = theta * ds_dt - de_dt
    r2 = theta * ds_dr - (de_dr - p / rho ** 2)
    scale1 = np.maximum(np.abs(de_dt), 1.0)
    scale2 = np.maximum(np.abs(de_dr) + np.abs(p) / rho ** 2, 1.0)
    return float(np.max(np.maximum(np.abs(r1) / scale1, np.abs(r2) / scale2)))


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    detail: str
    witness: tuple | None = None


@dataclass
class HypothesisReport:
    """Per-hypothesis pass/fail results with witness points and fitted constants."""

    checks: list[HypothesisCheck] = field(default_factory=list)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks)

    def lines(self):
        out = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            out.append(f"{c.name:8s} {status}  {c.detail}")
        return out


def check_hypotheses(eos, z_range=(1e-2, 1e2), theta_range=(1e-2, 1e2), n=64):
    """Evaluate the constitutive hypotheses on a log-sampled (Z, theta) grid.

    HTS (p_rho > 0, e_theta > 0) and the w10 structure are hard requirements
    of the solvers; the asymptotic-pressure condition (w11 needs p_inf > 0),
    the third law (w14, never satisfied by S = -log Z), and beta > 6 (w16)
    are reported but not fatal.  The rho*e bounds (L5b) are reported with
    fitted constants.
    """
    if len(z_range) != 2 or len(theta_range) != 2 or z_range[0] >= z_range[1] or theta_range[0] >= theta_range[1]:
        raise DomainError("ranges must be non-empty (lo, hi) pairs")
    Z = np.geomspace(z_range[0], z_range[1], n)
    th = np.geomspace(theta_range[0], theta_range[1], n)
    ZZ, TT = np.meshgrid(Z, th, indexing="ij")
    RR = ZZ * TT ** 1.5

    report = HypothesisReport()

    p_rho, _ = pressure_derivatives(RR, TT, eos)
    e_th = energy_dtheta(RR, TT, eos)
    hts_ok = bool(np.all(p_rho > 0) and np.all(e_th > 0))
    worst = None
    if not hts_ok:
        i = np.unravel_index(np.argmin(np.minimum(p_rho, e_th)), RR.shape)
        worst = (float(RR[i]), float(TT[i]))
    report.checks.append(
        HypothesisCheck(
            "HTS",
            hts_ok,
            f"min p_rho={np.min(p_rho):.3e}, min e_theta={np.min(e_th):.3e}",
            worst,
        )
    )

    # w10: P(0)=0, P'>0, and (5/3 P - P'Z)/Z == 2/3 for this family.
    comb = (5.0 / 3.0 * _P(Z, eos) - _P_prime(Z, eos) * Z) / Z
    w10_ok = (
        _P(0.0, eos) == 0.0
        and bool(np.all(_P_prime(Z, eos) > 0))
        and bool(np.max(np.abs(comb - 2.0 / 3.0)) <= 1e-12)
    )
    report.checks.append(
        HypothesisCheck(
            "w10",
            w10_ok,
            f"max |5/3 P - P'Z)/Z - 2/3| = {np.max(np.abs(comb - 2.0 / 3.0)):.2e}",
        )
    )

    # w11: P(Z)/Z^{5/3} decreasing with a positive limit p_inf > 0.
    ratio = _P(Z, eos) / Z ** (5.0 / 3.0)
    decreasing = bool(np.all(np.diff(ratio) <= 1e-12 * np.abs(ratio[:-1])))
    w11_ok = decreasing and eos.p_inf > 0
    report.checks.append(
        HypothesisCheck(
            "w11",
            w11_ok,
            f"P/Z^(5/3) decreasing={decreasing}, limit p_inf={eos.p_inf}"
            + ("" if w11_ok else " (limit not > 0)"),
            (float(Z[-1]), float(ratio[-1])) if not w11_ok else None,
        )
    )

    # w14 third law: S(Z) -> 0 as Z -> infinity; -log Z + s0 diverges instead.
    S_tail = -np.log(Z[-1]) + eos.s0
    report.checks.append(
        HypothesisCheck(
            "w14",
            False,
            f"S(Z) = -log Z + s0 -> -inf; S({Z[-1]:.1e}) = {S_tail:.3f}",
            (float(Z[-1]), float(S_tail)),
        )
    )

    # w16 transport bounds; the linear/power forms satisfy the two-sided
    # envelopes by construction, so only beta > 6 can fail.
    w16_ok = eos.beta > 6.0
    report.checks.append(
        HypothesisCheck("w16", w16_ok, f"beta={eos.beta} (requires beta > 6)")
    )

    # L5b: fitted constants for rho^{5/3} + theta^4 <~ rho e <~ 1 + rho^{5/3} + theta^4.
    re = rho_e(RR, TT, eos)
    c_lo = float(np.min(re / (RR ** (5.0 / 3.0) + TT ** 4)))
    c_hi = float(np.max(re / (1.0 + RR ** (5.0 / 3.0) + TT ** 4)))
    report.checks.append(
        HypothesisCheck(
            "L5b",
            c_lo > 0 and np.isfinite(c_hi),
            f"fitted constants: lower {c_lo:.3e}, upper {c_hi:.3e}",
        )
    )
    return report
