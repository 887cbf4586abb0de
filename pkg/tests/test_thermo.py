from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bll.errors import DomainError
from bll.thermo import (
    EosParams,
    ThermoPoint,
    check_hypotheses,
    check_limit_identities,
    energy_dtheta,
    entropy,
    entropy_derivatives,
    gibbs_residual,
    internal_energy,
    ob_coefficients,
    pressure,
    pressure_derivatives,
    rho_e,
    sound_speed_squared,
    theta_from_rho_e,
    transport,
)

IDEAL = EosParams()
STIFF = EosParams(p_inf=1.0)
RAD = EosParams(a=1.0)
FULL = EosParams(p_inf=1.0, a=1.0)
CORNERS = [IDEAL, STIFF, RAD, FULL]


def fd_partials(f, rho, theta, h=1e-7):
    """Central-difference oracle for (df/drho, df/dtheta)."""
    hr = h * max(abs(rho), 1.0)
    ht = h * max(abs(theta), 1.0)
    d_rho = (f(rho + hr, theta) - f(rho - hr, theta)) / (2 * hr)
    d_theta = (f(rho, theta + ht) - f(rho, theta - ht)) / (2 * ht)
    return d_rho, d_theta


def log_grid():
    pts = np.geomspace(0.1, 10.0, 10)
    return np.meshgrid(pts, pts, indexing="ij")


def test_pressure_ideal_gas_reduces_to_rho_theta() -> None:
    assert pressure(2.0, 3.0, IDEAL) == pytest.approx(6.0, abs=1e-14)


def test_pressure_vanishing_density_leaves_radiation_part() -> None:
    assert pressure(1e-12, 2.0, IDEAL) == pytest.approx(0.0, abs=1e-10)
    assert pressure(1e-12, 2.0, RAD) == pytest.approx(16.0 / 3.0, rel=1e-10)


def test_pressure_stiffened_unit_point() -> None:
    assert pressure(1.0, 1.0, STIFF) == pytest.approx(2.0, abs=1e-14)


def test_internal_energy_ideal_monoatomic() -> None:
    assert internal_energy(2.0, 3.0, IDEAL) == pytest.approx(4.5, abs=1e-14)


def test_entropy_reference_values() -> None:
    assert entropy(1.0, 1.0, IDEAL) == pytest.approx(0.0, abs=1e-14)
    assert entropy(1.0, np.exp(2.0 / 3.0), IDEAL) == pytest.approx(1.0, rel=1e-14)


def test_pressure_derivatives_ideal_unit_point() -> None:
    p_r, p_t = pressure_derivatives(1.0, 1.0, IDEAL)
    assert p_r == pytest.approx(1.0, abs=1e-14)
    assert p_t == pytest.approx(1.0, abs=1e-14)


def test_pressure_derivatives_stiffened_unit_point() -> None:
    p_r, p_t = pressure_derivatives(1.0, 1.0, STIFF)
    assert p_r == pytest.approx(8.0 / 3.0, rel=1e-14)
    assert p_t == pytest.approx(1.0, abs=1e-14)


def test_entropy_drho_matches_maxwell_by_hand() -> None:
    s_r, _ = entropy_derivatives(2.0, 1.0, IDEAL)
    assert s_r == pytest.approx(-0.5, abs=1e-14)


def test_derivatives_against_finite_difference_oracle() -> None:
    RR, TT = log_grid()
    for eos in CORNERS:
        for rho, theta in zip(RR.ravel(), TT.ravel()):
            p_r, p_t = pressure_derivatives(rho, theta, eos)
            o_r, o_t = fd_partials(lambda r, t: pressure(r, t, eos), rho, theta)
            scale = max(1.0, abs(p_r), abs(p_t))
            assert p_r == pytest.approx(o_r, rel=1e-6, abs=1e-6 * scale)
            assert p_t == pytest.approx(o_t, rel=1e-6, abs=1e-6 * scale)
            s_r, s_t = entropy_derivatives(rho, theta, eos)
            o_r, o_t = fd_partials(lambda r, t: entropy(r, t, eos), rho, theta)
            scale = max(1.0, abs(s_r), abs(s_t))
            assert s_r == pytest.approx(o_r, rel=1e-6, abs=1e-6 * scale)
            assert s_t == pytest.approx(o_t, rel=1e-6, abs=1e-6 * scale)
            e_t = energy_dtheta(rho, theta, eos)
            _, o_t = fd_partials(lambda r, t: internal_energy(r, t, eos), rho, theta)
            assert e_t == pytest.approx(o_t, rel=1e-6, abs=1e-6)


def test_maxwell_relation_analytic_on_grid() -> None:
    RR, TT = log_grid()
    for eos in CORNERS:
        s_r, _ = entropy_derivatives(RR, TT, eos)
        _, p_t = pressure_derivatives(RR, TT, eos)
        resid = s_r + p_t / RR ** 2
        scale = np.maximum(np.abs(s_r), 1.0)
        assert np.max(np.abs(resid) / scale) <= 1e-10


def test_gibbs_residual_small_on_grid() -> None:
    RR, TT = log_grid()
    for eos in CORNERS:
        assert gibbs_residual(RR, TT, eos) <= 1e-6


def test_gibbs_residual_negative_control() -> None:
    assert gibbs_residual(1.0, 1.0, IDEAL, s0_gradient=1.0) > 0.1


def test_transport_values() -> None:
    mu, eta, kappa = transport(1.0, EosParams(mu0=1.0, eta0=0.5, kappa0=1.0, beta=6.5))
    assert mu == pytest.approx(2.0)
    assert eta == pytest.approx(1.0)
    assert kappa == pytest.approx(2.0)
    _, _, kappa = transport(2.0, EosParams(kappa0=1.0, beta=3.0))
    assert kappa == pytest.approx(9.0)


def test_ob_coefficients_ideal_gas_closed_form() -> None:
    c = ob_coefficients(1.0, 1.0, IDEAL)
    assert c.alpha == pytest.approx(1.0, abs=1e-14)
    assert c.c_p == pytest.approx(2.5, abs=1e-14)
    assert c.lam == pytest.approx(0.4, abs=1e-14)


def test_ob_coefficients_ideal_gas_theta_dependence() -> None:
    c = ob_coefficients(1.0, 2.0, IDEAL)
    assert c.alpha == pytest.approx(0.5, abs=1e-14)
    assert c.c_p == pytest.approx(2.5, abs=1e-14)
    assert c.lam == pytest.approx(0.4, abs=1e-14)


def test_ob_coefficients_stiffened_alpha() -> None:
    c = ob_coefficients(1.0, 1.0, STIFF)
    assert c.alpha == pytest.approx(3.0 / 8.0, rel=1e-14)


def test_ob_coefficients_partials_match_fd_oracle() -> None:
    for eos in CORNERS:
        c = ob_coefficients(1.3, 0.8, eos)
        o_r, o_t = fd_partials(lambda r, t: pressure(r, t, eos), 1.3, 0.8)
        assert c.p_rho == pytest.approx(o_r, rel=1e-6)
        assert c.p_theta == pytest.approx(o_t, rel=1e-6)


def test_limit_identities_vanish_on_grid_all_corners() -> None:
    RR, TT = log_grid()
    for eos in CORNERS:
        for rho, theta in zip(RR.ravel(), TT.ravel()):
            r26, r27, r29 = check_limit_identities(rho, theta, eos)
            assert abs(r26) <= 1e-10
            assert abs(r27) <= 1e-10
            assert abs(r29) <= 1e-10


def test_lambda_in_unit_interval_on_grid() -> None:
    RR, TT = log_grid()
    for eos in CORNERS:
        for rho, theta in zip(RR.ravel(), TT.ravel()):
            c = ob_coefficients(rho, theta, eos)
            assert 0.0 < c.lam < 1.0


def test_sound_speed_ideal_unit_point() -> None:
    assert sound_speed_squared(1.0, 1.0, IDEAL) == pytest.approx(5.0 / 3.0, rel=1e-14)


def test_theta_recovery_roundtrip() -> None:
    rng = np.random.default_rng(7)
    rho = rng.uniform(0.3, 3.0, size=50)
    theta = rng.uniform(0.3, 3.0, size=50)
    for eos in CORNERS:
        E = rho_e(rho, theta, eos)
        back = theta_from_rho_e(rho, E, eos, theta_guess=np.full_like(rho, 1.0))
        assert np.max(np.abs(back - theta)) <= 1e-12


def test_theta_recovery_rejects_energy_below_cold_floor() -> None:
    with pytest.raises(DomainError):
        theta_from_rho_e(1.0, 1.0, EosParams(p_inf=10.0))


def test_hypothesis_report_full_eos_passes_main_checks() -> None:
    rep = check_hypotheses(FULL)
    for name in ("HTS", "w10", "w11", "w16"):
        assert rep[name].passed, name


def test_hypothesis_report_w11_fails_for_ideal_gas() -> None:
    rep = check_hypotheses(IDEAL)
    assert not rep["w11"].passed
    assert rep["w11"].witness is not None


def test_hypothesis_report_third_law_always_fails() -> None:
    for eos in CORNERS:
        assert not check_hypotheses(eos)["w14"].passed


def test_hypothesis_report_beta_flag() -> None:
    rep = check_hypotheses(EosParams(beta=5.0))
    assert not rep["w16"].passed


def test_hypothesis_report_l5b_constants_fitted() -> None:
    rep = check_hypotheses(FULL)
    assert rep["L5b"].passed
    assert "lower" in rep["L5b"].detail


def test_eos_params_validation() -> None:
    with pytest.raises(DomainError):
        EosParams(p_inf=-1.0)
    with pytest.raises(DomainError):
        EosParams(mu0=0.0)


def test_thermo_point_validation() -> None:
    with pytest.raises(DomainError):
        ThermoPoint(-1.0, 1.0)
    with pytest.raises(DomainError):
        ThermoPoint(1.0, float("nan"))
    with pytest.raises(DomainError):
        pressure(1.0, -2.0, IDEAL)


@given(
    rho=st.floats(0.05, 20.0),
    theta=st.floats(0.05, 20.0),
    p_inf=st.floats(0.0, 2.0),
    a=st.floats(0.0, 2.0),
)
@settings(max_examples=200, deadline=None)
def test_property_maxwell_and_lambda(rho, theta, p_inf, a) -> None:
    eos = EosParams(p_inf=p_inf, a=a)
    s_r, _ = entropy_derivatives(rho, theta, eos)
    _, p_t = pressure_derivatives(rho, theta, eos)
    assert abs(s_r + p_t / rho ** 2) <= 1e-10 * max(1.0, abs(s_r))
    c = ob_coefficients(rho, theta, eos)
    assert 0.0 < c.lam < 1.0


@given(z=st.floats(1e-3, 1e3), p_inf=st.floats(0.0, 5.0))
@settings(max_examples=200, deadline=None)
def test_property_w10_combination_exact(z, p_inf) -> None:
    eos = EosParams(p_inf=p_inf)
    P = z + p_inf * z ** (5.0 / 3.0)
    Pp = 1.0 + (5.0 / 3.0) * p_inf * z ** (2.0 / 3.0)
    assert ((5.0 / 3.0) * P - Pp * z) / z == pytest.approx(2.0 / 3.0, rel=1e-12)
