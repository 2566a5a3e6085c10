import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RP3, exact_cone, spindle
from oracles import sphere_volume
from singular_yamabe.cone_geometry import (
    ConeSpace,
    FitError,
    InvalidSpaceError,
    LinkSpec,
    SampledWarp,
    Spindle,
    StratumData,
    YamabeConstants,
    admissibility,
    conformal_scal,
    conic_coefficients,
    cone_quotient,
    cylinder_quotient,
    cylinder_transform,
    delta_normalization,
    local_yamabe_model,
    scal_profile,
)
from singular_yamabe.link_spectrum import round_sphere_link


def test_constants():
    k = YamabeConstants(4)
    assert k.c == pytest.approx(1 / 6)
    assert k.tau == 3.0
    assert k.crit == 4.0
    assert k.sphere_yamabe() == pytest.approx((1 / 6) * 12 * sphere_volume(4) ** 0.5, rel=1e-14)


@pytest.mark.parametrize("n", [2, 3.5, 0])
def test_constants_reject_bad_dimension(n):
    with pytest.raises(InvalidSpaceError):
        YamabeConstants(n)


def test_dimension_mismatch_rejected():
    with pytest.raises(InvalidSpaceError):
        ConeSpace(YamabeConstants(5), round_sphere_link(3), Spindle(1.0))


def test_link_validation():
    with pytest.raises(InvalidSpaceError):
        LinkSpec(3, -1.0, 6.0)
    with pytest.raises(InvalidSpaceError):
        LinkSpec(3, 1.0, 6.0, ((1.0, 1),))
    with pytest.raises(InvalidSpaceError):
        LinkSpec(3, 1.0, 6.0, ((0.0, 1), (5.0, 2), (4.0, 1)))


@pytest.mark.parametrize("n", [3, 4, 5, 7])
def test_round_sphere_scal_is_constant(n):
    space = spindle(n, 1.0)
    x = np.linspace(0.01, math.pi - 0.01, 50)
    np.testing.assert_allclose(scal_profile(space, x), n * (n - 1), rtol=1e-12)


def test_exact_cone_over_einstein_link_is_flat():
    space = exact_cone(4, rho=1.0, link=RP3)
    x = np.geomspace(1e-6, 0.9, 40)
    np.testing.assert_allclose(scal_profile(space, x), 0.0, atol=1e-9)


def test_cone_scal_closed_form():
    rho, f = 0.6, 3
    space = exact_cone(4, rho=rho)
    x = np.geomspace(1e-3, 0.9, 20)
    expected = f * (f - 1) * (1 - rho**2) / (rho**2 * x**2)
    np.testing.assert_allclose(scal_profile(space, x), expected, rtol=1e-12)


def test_nonpositive_warp_rejected():
    space = spindle(4, 0.5)
    with pytest.raises(InvalidSpaceError):
        scal_profile(space, [0.0, 1.0])
    with pytest.raises(InvalidSpaceError):
        scal_profile(space, [1.0, math.pi])


def test_difference_schemes_agree_to_second_order():
    space = spindle(4, 0.7)
    x = np.linspace(0.3, 2.8, 30)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        a = scal_profile(space, x, method="centered", h=h)
        b = scal_profile(space, x, method="one_sided", h=h)
        errs.append(np.max(np.abs(a - b)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((rates > 1.7) & (rates < 2.3)), rates


def test_conformal_scal_identity():
    space = spindle(5, 0.8)
    x = np.linspace(0.1, 3.0, 200)
    base = scal_profile(space, x)
    np.testing.assert_allclose(conformal_scal(space, x, np.ones_like(x)), base, rtol=1e-14, atol=0)


def test_conformal_scal_power_factor():
    # On an exact cone, Delta x^a = a (a - 1 + f) x^(a - 2).
    n, rho, a = 4, 0.7, 0.4
    f = n - 1
    space = exact_cone(n, rho=rho)
    x = np.linspace(0.2, 0.8, 4001)
    w = x**a
    c = space.constants.c
    scal = f * (f - 1) * (1 - rho**2) / (rho**2 * x**2)
    expected = w ** (-4 / (n - 2)) * (scal - a * (a - 1 + f) * x ** (a - 2) / (c * w))
    got = conformal_scal(space, x, w)
    np.testing.assert_allclose(got[5:-5], expected[5:-5], rtol=1e-5)


def test_conic_coefficients_spindle():
    rho, f = 0.5, 3
    space = spindle(4, rho)
    exp = conic_coefficients(space, tip=0.0)
    assert exp.A0 == pytest.approx(f * (f - 1) * (1 - rho**2) / rho**2, rel=1e-6)
    # The x^4 term of x^2 scal leaks into A1 at order window^3.
    assert abs(exp.A1) < 1e-3 * exp.A0
    far = conic_coefficients(space, tip=math.pi)
    assert far.A0 == pytest.approx(exp.A0, rel=1e-9)


def test_conic_coefficients_sampled_linear_term():
    # psi = x + a x^2 over an Einstein link: A0 = 0 and A1 = -4 a f^2.
    a, f = 0.3, 3
    x = np.geomspace(1e-4, 0.5, 4000)
    space = ConeSpace(YamabeConstants(4), RP3, SampledWarp(tuple(x), tuple(x + a * x**2), 1.0))
    exp = conic_coefficients(space, 0.0, window=(1e-3, 2e-2))
    assert abs(exp.A0) < 1e-3
    assert exp.A1 == pytest.approx(-4 * a * f * f, rel=1e-3)


def test_conic_fit_window_errors():
    space = spindle(4, 0.5)
    with pytest.raises(FitError):
        conic_coefficients(space, 0.0, window=(1e-3, 1.5e-3))
    with pytest.raises(FitError):
        conic_coefficients(space, 0.0, window=(0.1, 0.05))
    with pytest.raises(InvalidSpaceError):
        conic_coefficients(space, tip=1.0)


def test_admissibility_empty_is_smooth():
    rep = admissibility([])
    assert rep.iv_a and rep.iv_b and rep.iv_c
    assert rep.alpha == 0.0


def test_admissibility_alpha():
    rep = admissibility([StratumData(6, 5, 0.0, 1.0)])
    assert rep.iv_b and rep.alpha == 1.0
    rep = admissibility([StratumData(6, 5, 0.0, 0.0)])
    assert rep.iv_a and rep.iv_b and rep.alpha == 0.0
    rep = admissibility([StratumData(6, 5, 1.0, 0.0)])
    assert not rep.iv_b and rep.alpha is None


def test_admissibility_zero_linear_term_low_stratum():
    # A1 = 0 on a low stratum is allowed by every clause.
    rep = admissibility([StratumData(6, 2, 0.0, 0.0)])
    assert rep.iv_a and rep.iv_b and rep.iv_c


def test_stratum_validation():
    with pytest.raises(InvalidSpaceError):
        StratumData(4, 4, 0.0, 0.0)
    assert StratumData(6, 2, 0.0, 0.0).ell_j == 3


def test_delta_normalization_round_link():
    consts = YamabeConstants(4)
    rho = 0.5
    link = round_sphere_link(3, rho)
    lam0 = consts.c * link.scal
    res = delta_normalization(lam0, consts, 3, link)
    assert res.delta == pytest.approx(1 / rho, rel=1e-14)
    assert res.rescaled_link.scal == pytest.approx(6.0, rel=1e-14)
    assert res.rescaled_link.volume == pytest.approx(sphere_volume(3), rel=1e-14)
    with pytest.raises(ValueError):
        delta_normalization(-1.0, consts, 3)


def test_cylinder_transform_requires_exact_cone():
    with pytest.raises(InvalidSpaceError):
        cylinder_transform(spindle(4, 1.0), np.linspace(0.1, 1.0, 10), np.ones(10))
    with pytest.raises(ValueError):
        cylinder_transform(exact_cone(4), np.linspace(0.0, 1.0, 10), np.ones(10))


def _window_probe(rng, x, lo, hi):
    s = (np.log(x) - np.log(lo)) / (np.log(hi) - np.log(lo))
    k = rng.integers(1, 4, size=3)
    amp = rng.normal(size=3)
    bump = sum(a * np.sin(np.pi * kk * s) for a, kk in zip(amp, k))
    return np.sin(np.pi * s) * (1.5 + np.tanh(bump)) * x ** rng.uniform(-1.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(rho=st.floats(0.3, 1.5), seed=st.integers(0, 2**31))
def test_cone_and_cylinder_quotients_agree(rho, seed):
    rng = np.random.default_rng(seed)
    space = exact_cone(4, rho=rho, L=1.0)
    lo, hi = 1e-3, 0.5
    x = np.geomspace(lo, hi, 4001)
    u = _window_probe(rng, x, lo, hi)
    t, v = cylinder_transform(space, x, u)
    assert cone_quotient(space, x, u) == pytest.approx(cylinder_quotient(space, t, v), rel=1e-6)


def test_cylinder_boundary_term():
    space = exact_cone(4, rho=0.8)
    x = np.geomspace(1e-2, 0.9, 4001)
    u = 1.0 + x
    t, v = cylinder_transform(space, x, u)
    q_cone = cone_quotient(space, x, u)
    assert cylinder_quotient(space, t, v) == pytest.approx(q_cone, rel=1e-6)
    assert cylinder_quotient(space, t, v, boundary_terms=False) != pytest.approx(q_cone, rel=1e-3)


def test_local_model_structure():
    models = local_yamabe_model([(StratumData(4, 3, 0.0, 0.0), RP3), (StratumData(6, 2, 0.0, 0.0), round_sphere_link(2))], n=None)
    assert models[0].kind == "smooth"
    assert models[1].kind == "conic" and models[1].cylinder_form == "R x RP3"
    assert models[2].kind == "edge" and models[2].ell == 3
    assert models[1].value is None
    only = local_yamabe_model([], n=4)
    assert len(only) == 1 and only[0].value == pytest.approx(YamabeConstants(4).sphere_yamabe())
