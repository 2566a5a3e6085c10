import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import einstein_double_cone, exact_cone, spindle
from oracles import sphere_volume
from singular_yamabe.certifier import (
    HypothesisError,
    ProbeError,
    SobolevEstimate,
    TruncationParams,
    admissible_potential,
    concentration_ladder,
    hardy_check,
    hardy_grid,
    hardy_near_optimizer,
    hardy_ratio,
    moser_supbound,
    morrey_check,
    sobolev_constants,
    truncation_eval,
    verify_truncation_inequalities,
)
from singular_yamabe.cone_geometry import YamabeConstants
from singular_yamabe.yamabe_solver import SolverConfig, assemble, make_grid, minimize_subcritical


def assembled(space, n_cells=1000):
    return assemble(space, make_grid(space, SolverConfig(n_cells=n_cells)))


# -- truncations --------------------------------------------------------------------


def test_truncation_branch_continuity():
    for a in (1.1, 1.5, 2.0, 3.0):
        p = TruncationParams(a)
        xs = p.breakpoint
        below = xs**a
        above = xs + a ** (-a / (a - 1)) - xs
        assert below == pytest.approx(a ** (-a / (a - 1)), rel=1e-14)
        assert above == pytest.approx(below, rel=1e-14)
        fa, _, _, _ = truncation_eval(p, [xs * (1 - 1e-15), xs, xs * (1 + 1e-15)])
        assert np.ptp(fa) < 1e-13


def test_truncation_examples():
    p = TruncationParams(2.0, 5.0)
    x = np.linspace(0, 5.0 * p.breakpoint, 50)
    _, phi, dphi, G = truncation_eval(p, x)
    np.testing.assert_allclose(phi, x**2, rtol=1e-13)
    np.testing.assert_allclose(x * G, 4 / 3 * phi**2, rtol=1e-13)
    fa, _, _, _ = truncation_eval(TruncationParams(2.0), [10.0, 11.0])
    assert fa[1] - fa[0] == pytest.approx(1.0, rel=1e-14)
    _, phi0, _, G0 = truncation_eval(p, [0.0])
    assert phi0[0] == 0.0 and G0[0] == 0.0
    assert verify_truncation_inequalities(p, [0.0]).ok


def test_truncation_derivative_matches_numerical():
    p = TruncationParams(1.7, 3.0)
    x = np.linspace(0.05, 20.0, 301)
    h = 1e-6
    _, phi_p, _, G_p = truncation_eval(p, x + h)
    _, phi_m, _, G_m = truncation_eval(p, x - h)
    _, _, dphi, _ = truncation_eval(p, x)
    away = np.abs(x - 3.0 * p.breakpoint) > 2 * h
    np.testing.assert_allclose(((phi_p - phi_m) / (2 * h))[away], dphi[away], rtol=1e-6)
    np.testing.assert_allclose(((G_p - G_m) / (2 * h))[away], dphi[away] ** 2, rtol=1e-6)


def test_truncation_parameter_errors():
    with pytest.raises(ValueError):
        TruncationParams(1.0)
    with pytest.raises(ValueError):
        TruncationParams(2.0, 0.5)
    with pytest.raises(ValueError):
        truncation_eval(TruncationParams(2.0), [-1.0])


def test_truncation_violation_reports_witness():
    # A negative tolerance demands strict slack, which the power branch (equality) lacks.
    check = verify_truncation_inequalities(TruncationParams(2.0), np.linspace(0.1, 10, 100), rtol=-0.5)
    assert not check.ok and check.witness == pytest.approx(0.1) and check.which == "phi <= x^alpha"


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1.0, 3.0, exclude_min=True), L=st.floats(1.0, 100.0), t=st.floats(0.0, 10.0))
def test_truncation_random_draws(a, L, t):
    assert verify_truncation_inequalities(TruncationParams(a, L), [t * L]).ok


# -- Sobolev ----------------------------------------------------------------------


def test_sobolev_sphere_constant_function_condition():
    asm = assembled(spindle(4, 1.0), 400)
    est = sobolev_constants(asm, n_probes=100, n_verify=300)
    n = 4
    vol = float(asm.w.sum())
    one = np.ones_like(asm.w)
    # Constant: ||1||^2_crit = Vol^(2/crit) <= B Vol.
    assert vol ** ((n - 2) / n) <= est.B * vol * (1 + 1e-12)
    assert asm.lp_norm(one, 4.0) ** 2 <= est.A * asm.energy(one) + est.B * asm.mass(one)
    assert est.violations == 0 and est.verified_probes == 300
    assert est.A > 0 and est.B > 0


def test_sobolev_refinement_stability():
    ests = [sobolev_constants(assembled(spindle(4, 0.7), N), n_probes=100, n_verify=200) for N in (400, 800)]
    assert ests[1].A == pytest.approx(ests[0].A, rel=0.05)
    assert ests[1].B == pytest.approx(ests[0].B, rel=0.05)


def test_sobolev_exact_cone_random_audit():
    asm = assembled(exact_cone(4, rho=0.6, L=1.0), 600)
    est = sobolev_constants(asm, n_probes=200, n_verify=1000, seed=7)
    assert est.violations == 0 and est.verified_probes == 1000
    rng = np.random.default_rng(99)
    x = asm.grid.nodes
    for _ in range(1000):
        knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 6)), [1.0]])
        u = np.interp(x, knots, rng.normal(size=knots.size))
        lhs = asm.lp_norm(u, 4.0) ** 2
        assert lhs <= (est.A * asm.energy(u) + est.B * asm.mass(u)) * (1 + 1e-12)


def test_sobolev_covers_concentration():
    asm = assembled(spindle(4, 0.5), 600)
    est = sobolev_constants(asm, n_probes=60, n_verify=100)
    for u in concentration_ladder(asm):
        assert asm.lp_norm(u, 4.0) ** 2 <= (est.A * asm.energy(u) + est.B * asm.mass(u)) * (1 + 1e-12)


def test_sobolev_degenerate_probes_refused():
    asm = assembled(spindle(4, 1.0), 100)
    with pytest.raises(ProbeError):
        sobolev_constants(asm, n_probes=1)
    with pytest.raises(ValueError):
        sobolev_constants(asm, margin=1.0)


def test_sobolev_five_dimensional_sphere_concentration():
    # Near-sharp concentration at a tip: the margin absorbs incomplete descent.
    est = sobolev_constants(assembled(spindle(5, 1.0), 1000), n_probes=100, n_verify=1000)
    assert est.violations == 0


# -- Moser ----------------------------------------------------------------------------


def test_kappa_arithmetic():
    w = np.ones(10)
    rep = moser_supbound(np.ones(10), np.zeros(10), 4.0, SobolevEstimate(1.0, 1.0, "unit"), w, YamabeConstants(4))
    assert rep.r == pytest.approx(8 / 3, rel=1e-15)
    assert rep.kappa == pytest.approx(1.5, rel=1e-15)
    assert rep.alpha * rep.r < 4.0 and rep.alpha > 1


def test_constant_function_validates():
    consts = YamabeConstants(4)
    w = np.full(50, 0.3)
    vol = float(w.sum())
    est = SobolevEstimate(0.7, 1.3, "given")
    rep = moser_supbound(np.ones(50), np.zeros(50), 4.0, est, w, consts)
    assert rep.valid and rep.ladder_ok
    assert rep.C == pytest.approx(1.3 * vol**0.25, rel=1e-14)
    assert rep.sup_bound == pytest.approx(math.exp(rep.log_product) * vol ** (1 / (rep.alpha * rep.r)), rel=1e-12)
    assert rep.sup_bound >= 1.0
    # Closed-form log product agrees with the partial sums.
    assert math.log(rep.products[-1]) == pytest.approx(rep.log_product, rel=1e-6)


def test_moser_hypothesis_errors():
    consts = YamabeConstants(4)
    est = SobolevEstimate(1.0, 1.0, "unit")
    w = np.ones(5)
    with pytest.raises(HypothesisError):
        moser_supbound(np.ones(5), np.zeros(5), 2.0, est, w, consts)
    with pytest.raises(HypothesisError):
        moser_supbound(np.ones(5), np.zeros(5), 4.0, est, w, consts, alpha=1.6)
    with pytest.raises(ValueError):
        moser_supbound(-np.ones(5), np.zeros(5), 4.0, est, w, consts)


def test_moser_divergent_norms_reported():
    u = np.array([1.0, np.inf, 1.0])
    rep = moser_supbound(u, np.zeros(3), 4.0, SobolevEstimate(1.0, 1.0, "unit"), np.ones(3), YamabeConstants(4))
    assert not rep.valid and rep.note == "ladder norm divergence"


def _certify(space, n_cells):
    asm = assembled(space, n_cells)
    sol = minimize_subcritical(asm, space.n + 1.0)
    est = sobolev_constants(asm, n_probes=100, n_verify=200)
    V = admissible_potential(sol, asm)
    assert np.all(V <= 0)
    return sol, moser_supbound(sol.u_p, V, float(space.n), est, asm.w, space.constants)


@pytest.mark.parametrize("space", [spindle(4, 0.5), spindle(4, 0.8), einstein_double_cone()], ids=["rho05", "rho08", "einstein"])
def test_moser_certifies_solutions(space):
    sol, rep = _certify(space, 1000)
    assert rep.valid and math.isfinite(rep.sup_bound)
    assert rep.sup_bound >= np.max(sol.u_p)
    for j, norm in enumerate(rep.norms):
        assert norm <= rep.products[j] * rep.norms[0] * (1 + 1e-12)


# -- Hardy -----------------------------------------------------------------------------


@pytest.mark.parametrize("f", [2, 3, 4])
def test_hardy_lower_bound_and_near_optimizer(f):
    hg = hardy_grid(f, 4000)
    rep = hardy_check(f, hg)
    assert rep.ratio >= 1 - 10 * rep.h / rep.L
    assert hardy_ratio(hg, hardy_near_optimizer(hg)) / rep.constant <= 1.10


@pytest.mark.parametrize("f", [2, 3])
def test_hardy_random_probes_never_beat_constant(f, rng):
    hg = hardy_grid(f, 2000)
    const = (f - 1) ** 2 / 4
    logx = np.log(hg.nodes)
    for _ in range(200):
        knots = np.sort(rng.uniform(logx[0], logx[-1], 6))
        vals = np.concatenate([[0.0], rng.normal(size=4), [0.0]])
        u = np.interp(logx, knots, vals) * hg.nodes ** rng.uniform(-2, 1)
        if np.any(u != 0):
            assert hardy_ratio(hg, u) / const >= 1 - 10 * hg.h / hg.L


def test_hardy_near_optimizer_improves_with_range():
    f = 3
    ratios = [hardy_ratio(hg, hardy_near_optimizer(hg)) for hg in (hardy_grid(f, 4000, x_lo=lo) for lo in (1e-4, 1e-8, 1e-12))]
    assert ratios[0] > ratios[1] > ratios[2] > 1.0


def test_hardy_constants():
    assert hardy_check(3, n_cells=500).constant == 1.0
    rep = hardy_check(1, n_cells=200)
    assert rep.degenerate and rep.constant == 0.0


# -- Morrey ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cone_grid():
    space = exact_cone(4, rho=0.5, L=1.0)
    return make_grid(space, SolverConfig(n_cells=2000))


def _radii(grid):
    return np.geomspace(10 * grid.h_min, 0.25, 25)


@pytest.mark.parametrize("s,verdict", [(0, "finite"), (1, "finite"), (2, "outside_hypothesis")])
def test_morrey_power_potentials(cone_grid, s, verdict):
    x = cone_grid.nodes
    rep = morrey_check(x ** (-float(s)), cone_grid, 4, 1.2, float(s), [0.0, 0.5], _radii(cone_grid))
    assert rep.verdict == verdict


def test_morrey_finer_alpha_fails_for_singular_potential(cone_grid):
    x = cone_grid.nodes
    assert morrey_check(x**-1.0, cone_grid, 4, 1.2, 0.0, [0.0], _radii(cone_grid)).verdict == "infinite"
    assert morrey_check(x**-2.0, cone_grid, 4, 1.2, 1.0, [0.0], _radii(cone_grid)).verdict == "infinite"


def test_morrey_bounded_potential_value(cone_grid):
    radii = _radii(cone_grid)
    rep = morrey_check(np.full_like(cone_grid.nodes, 2.0), cone_grid, 4, 1.5, 0.0, [0.0], radii)
    # Tip ball volume over r^n: Vol(link) psi^f integrated, = Vol(S^3) rho^3 / 4.
    ball_ratio = sphere_volume(3) * 0.5**3 / 4
    big = radii >= 1000 * cone_grid.h_min
    assert big.sum() >= 5
    assert rep.values[0.0][big] == pytest.approx(2.0**1.5 * ball_ratio * np.ones(big.sum()), rel=2e-3)
    assert rep.sup_constant == pytest.approx(2.0**1.5 * ball_ratio, rel=5e-2)
    assert rep.verdict == "finite"


@settings(max_examples=20, deadline=None)
@given(a1=st.floats(0.0, 2.5), da=st.floats(0.0, 1.0), s=st.floats(0.0, 2.0))
def test_morrey_monotone_in_alpha(cone_grid, a1, da, s):
    x = cone_grid.nodes
    radii = np.geomspace(10 * cone_grid.h_min, 1.0, 12)
    lo = morrey_check(x**-s, cone_grid, 4, 1.2, a1, [0.0, 0.5], radii)
    hi = morrey_check(x**-s, cone_grid, 4, 1.2, a1 + da, [0.0, 0.5], radii)
    for c in lo.values:
        assert np.all(hi.values[c] <= lo.values[c] * (1 + 1e-12))


def test_morrey_refusals(cone_grid):
    x = cone_grid.nodes
    with pytest.raises(ProbeError):
        morrey_check(x, cone_grid, 4, 1.2, 0.0, [0.0], np.geomspace(0.01, 0.1, 5))
    with pytest.raises(ValueError):
        morrey_check(x, cone_grid, 4, 1.0, 0.0, [0.0], _radii(cone_grid))
