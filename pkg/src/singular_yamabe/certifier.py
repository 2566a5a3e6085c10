"""Discrete versions of the inequality machinery: Moser truncations and
iteration ladder, Sobolev constants, the Hardy inequality on cones and
Morrey-class probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .cone_geometry import YamabeConstants
from .yamabe_solver import (
    Assembled,
    SolverConfig,
    SolverError,
    _weighted_norm,
    minimize_exponent,
)


class HypothesisError(ValueError):
    pass


class ProbeError(ValueError):
    pass


# -- truncation functions -------------------------------------------------------


@dataclass(frozen=True)
class TruncationParams:
    alpha: float
    L: float = 1.0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"truncation needs alpha > 1, got {self.alpha}")
        if not self.L >= 1:
            raise ValueError(f"truncation needs L >= 1, got {self.L}")

    @property
    def breakpoint(self) -> float:
        """x* = alpha^(-1/(alpha-1)), where f_alpha switches to its linear branch."""
        return self.alpha ** (-1.0 / (self.alpha - 1.0))


def truncation_eval(params: TruncationParams, x):
    """(f_alpha(x), phi(x), phi'(x), G(x)) with phi(x) = L^a f_a(x/L) and
    G(x) = int_0^x phi'(t)^2 dt, all in closed form."""
    a, L = params.alpha, params.L
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("truncation functions are defined for x >= 0")
    xs = params.breakpoint
    shift = a ** (-a / (a - 1.0)) - xs
    fa = np.where(x <= xs, x**a, x + shift)
    X = L * xs
    y = x / L
    phi = L**a * np.where(y <= xs, y**a, y + shift)
    dphi = np.where(x <= X, a * x ** (a - 1.0), L ** (a - 1.0))
    G_X = a * a * X ** (2 * a - 1) / (2 * a - 1)
    G = np.where(x <= X, a * a * x ** (2 * a - 1) / (2 * a - 1), G_X + L ** (2 * a - 2) * (x - X))
    return fa, phi, dphi, G


@dataclass(frozen=True)
class TruncationCheck:
    ok: bool
    witness: float | None = None
    which: str = ""


def verify_truncation_inequalities(params: TruncationParams, samples, rtol: float = 1e-12) -> TruncationCheck:
    """phi(x) <= x^a and x G(x) <= a^2/(2a-1) phi(x)^2 at every sample."""
    x = np.asarray(samples, float)
    a = params.alpha
    _, phi, _, G = truncation_eval(params, x)
    power = x**a
    bad = phi > power * (1 + rtol)
    if np.any(bad):
        return TruncationCheck(False, float(x[bad][0]), "phi <= x^alpha")
    rhs = a * a / (2 * a - 1) * phi**2
    bad = x * G > rhs * (1 + rtol)
    if np.any(bad):
        return TruncationCheck(False, float(x[bad][0]), "x G <= alpha^2/(2 alpha - 1) phi^2")
    return TruncationCheck(True)


# -- Sobolev constants ------------------------------------------------------------


@dataclass
class SobolevEstimate:
    A: float
    B: float
    method: str
    B_candidate: float = 0.0
    candidates: list = field(default_factory=list)
    verified_probes: int = 0
    violations: int = 0


def _bubble(d, eps, n):
    return (1.0 + (d / eps) ** 2) ** (-(n - 2) / 2.0)


def probe_family(asm: Assembled, count: int, rng: np.random.Generator):
    """Random piecewise-linear functions plus power-law bumps at the tips."""
    x = asm.grid.nodes
    a, b = asm.grid.faces[0], asm.grid.faces[-1]
    n = asm.space.n
    tips = [t for t in asm.space.warp.tips if a <= t <= b]
    probes = []
    for k in range(count):
        if k % 2 == 0 or not tips:
            knots = np.sort(rng.uniform(a, b, size=rng.integers(3, 12)))
            knots = np.concatenate([[a], knots, [b]])
            vals = rng.normal(size=knots.size)
            u = np.interp(x, knots, vals)
        else:
            tip = tips[rng.integers(len(tips))]
            d = np.abs(x - tip)
            width = (b - a) * 10 ** rng.uniform(-3, -0.3)
            if rng.random() < 0.5:
                u = _bubble(d, width, n)
            else:
                gamma = rng.uniform(-(n - 2) / 2.0 + 0.05, 2.0)
                u = d**gamma * np.clip(1 - d / (4 * width), 0, None) ** 2
        if asm.grid.dirichlet[0]:
            u = u * np.clip((x - a) / (x[0] - a) / 2, 0, 1)
        if asm.grid.dirichlet[1]:
            u = u * np.clip((b - x) / (b - x[-1]) / 2, 0, 1)
        if np.any(u != 0):
            probes.append(u)
    return probes


def concentration_ladder(asm: Assembled, widths: int = 24):
    """Bubbles at every tip with widths from below the tip cell up to the
    domain size, plus unit spikes on the first nodes next to each tip."""
    x = asm.grid.nodes
    n = asm.space.n
    a, b = asm.grid.faces[0], asm.grid.faces[-1]
    out = []
    for tip in asm.space.warp.tips:
        if not a <= tip <= b:
            continue
        d = np.abs(x - tip)
        for eps in np.geomspace(0.1 * asm.grid.h_min, b - a, widths):
            out.append(_bubble(d, eps, n))
        order = np.argsort(d)
        for k in range(4):
            spike = np.zeros_like(x)
            spike[order[: k + 1]] = 1.0
            out.append(spike)
    return out


def _sobolev_quotient(asm, u, B, crit):
    return (asm.energy(u) + B * asm.mass(u)) / _weighted_norm(asm.w, u, crit) ** 2


def sobolev_constants(
    asm: Assembled,
    B_values=None,
    n_probes: int = 200,
    n_verify: int = 1000,
    seed: int = 0,
    config: SolverConfig = SolverConfig(max_iter=400, residual_tol=1e-8),
    margin: float = 1e-3,
) -> SobolevEstimate:
    """Estimate (A, B) in ||f||^2_{2n/(n-2)} <= A energy(f) + B mass(f).

    For each candidate B, S(B) is the smallest quotient (energy + B mass) /
    ||f||^2 found over a random probe family, a ladder of concentrating
    bubbles, and discrete descent started from the constant and from the best
    ladder element.  The largest S(B), lowered by the relative ``margin`` to
    absorb incomplete descent near concentration, gives A = 1/S(B) and the
    certified mass constant B/S(B).  The pair is then re-checked on an
    independent probe set.
    """
    if not 0 <= margin < 1:
        raise ValueError("margin must lie in [0, 1)")
    n = asm.space.n
    crit = asm.space.constants.crit
    vol = float(asm.w.sum())
    if B_values is None:
        B_values = vol ** (-2.0 / n) * 2.0 ** np.arange(0, 5)
    rng = np.random.default_rng(seed)
    probes = probe_family(asm, n_probes, rng)
    if len(probes) < max(4, n_probes // 2):
        raise ProbeError("probe family is degenerate")
    probes += concentration_ladder(asm)
    x = asm.grid.nodes
    candidates = []
    for B in B_values:
        shifted = asm.with_potential(np.full_like(x, B / asm.space.constants.c))
        values = [_sobolev_quotient(asm, u, B, crit) for u in probes]
        best = min(values)
        for u0 in (np.ones_like(x), probes[int(np.argmin(values))]):
            try:
                sol = minimize_exponent(shifted, crit, config, u0=u0)
                best = min(best, _sobolev_quotient(asm, sol.u_p, B, crit))
            except SolverError as exc:
                if exc.iterate is not None:
                    best = min(best, _sobolev_quotient(asm, exc.iterate, B, crit))
        candidates.append((float(B), float(best)))
    B_star, S_star = max(candidates, key=lambda c: c[1])
    S_cert = S_star * (1.0 - margin)
    A = 1.0 / S_cert
    B_cert = B_star / S_cert
    verify = probe_family(asm, n_verify, np.random.default_rng(seed + 1))
    violations = 0
    for u in verify:
        lhs = _weighted_norm(asm.w, u, crit) ** 2
        if lhs > (A * asm.energy(u) + B_cert * asm.mass(u)) * (1 + 1e-12):
            violations += 1
    return SobolevEstimate(
        A=A,
        B=B_cert,
        method="probes + concentration ladder + discrete descent",
        B_candidate=B_star,
        candidates=candidates,
        verified_probes=len(verify),
        violations=violations,
    )


# -- Moser iteration -------------------------------------------------------------


@dataclass
class MoserLadder:
    q: float
    r: float
    kappa: float
    alpha: float
    C: float
    C1: float
    exponents: list
    norms: list
    products: list
    log_product: float
    log_product_literal: float
    sup_bound: float
    max_u: float
    ladder_ok: bool
    valid: bool
    note: str = ""


def moser_supbound(u, V, q: float, estimate: SobolevEstimate, weights, consts: YamabeConstants, alpha: float | None = None, levels: int = 40):
    """Sup bound for u >= 0 with Delta u >= V u from the Moser ladder.

    C = A ||V||_q + B Vol^(1/q), C1 = C alpha/(2 alpha - 1); the ladder
    ||u||_{kappa^(j+1) alpha r} <= (C1 kappa^j alpha)^(1/(2 kappa^j alpha)) ||u||_{kappa^j alpha r}
    is chained to infinity in closed form.
    """
    n = consts.n
    if not q > n / 2.0:
        raise HypothesisError(f"Moser iteration needs q > n/2 = {n / 2}, got q = {q}")
    u = np.asarray(u, float)
    w = np.asarray(weights, float)
    if np.any(u < 0):
        raise ValueError("Moser iteration needs u >= 0")
    V = np.asarray(V, float)
    r = 2.0 * q / (q - 1.0)
    kappa = n / (n - 2.0) * (q - 1.0) / q
    crit = consts.crit
    if alpha is None:
        alpha = 0.5 * (1.0 + crit / r)
    if not (alpha > 1 and alpha * r < crit):
        raise HypothesisError(f"alpha = {alpha} must satisfy 1 < alpha < {crit / r}")
    vol = float(w.sum())
    C = estimate.A * _weighted_norm(w, V, q) + estimate.B * vol ** (1.0 / q)
    C1 = C * alpha / (2 * alpha - 1)
    base = C1 * alpha
    exponents, norms, products = [], [], []
    log_running = 0.0
    ladder_ok = True
    for j in range(levels + 1):
        s = kappa**j * alpha * r
        exponents.append(s)
        norms.append(_weighted_norm(w, u, s))
        products.append(math.exp(log_running))
        if j > 0 and norms[j] > products[j] * norms[0] * (1 + 1e-12):
            ladder_ok = False
        log_running += math.log(base * kappa**j) / (2 * kappa**j * alpha)
    geo = kappa / (kappa - 1.0)
    log_product = (math.log(base) * geo + math.log(kappa) * kappa / (kappa - 1.0) ** 2) / (2 * alpha)
    log_literal = (math.log(base) * geo + math.log(kappa) * kappa / (kappa - 1.0) ** 2) / 2
    sup_bound = math.exp(log_product) * norms[0]
    max_u = float(u.max())
    finite = all(math.isfinite(v) for v in norms) and math.isfinite(sup_bound)
    valid = finite and ladder_ok and sup_bound >= max_u
    note = "certified" if valid else ("ladder norm divergence" if not finite else "certificate failed")
    return MoserLadder(q, r, kappa, alpha, C, C1, exponents, norms, products, log_product, log_literal, sup_bound, max_u, ladder_ok, valid, note)


def admissible_potential(sol, asm: Assembled):
    """Negative part of V = c scal - Y u^(4/(p-2)), so that Delta u >= V_- u."""
    s = 2.0 * sol.p / (sol.p - 2.0)
    V = asm.space.constants.c * asm.scal - sol.Y_p * np.abs(sol.u_p) ** (s - 2)
    return np.minimum(V, 0.0)


# -- Hardy inequality ----------------------------------------------------------------


@dataclass(frozen=True)
class HardyGrid:
    f: int
    nodes: np.ndarray
    faces: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    mass: np.ndarray

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.faces)))

    @property
    def L(self) -> float:
        return float(self.faces[-1])


@dataclass(frozen=True)
class HardyReport:
    f: int
    rayleigh_min: float
    constant: float
    ratio: float
    h: float
    L: float
    degenerate: bool = False


def hardy_grid(f: int, n_cells: int = 4000, L: float = 1.0, x_lo: float | None = None) -> HardyGrid:
    """Log-spaced cell grid on the exact cone window (x_lo, L), Dirichlet at both ends."""
    if x_lo is None:
        x_lo = 1e-10 * L
    faces = np.geomspace(x_lo, L, n_cells + 1)
    nodes = 0.5 * (faces[:-1] + faces[1:])
    k = faces[1:-1] ** f / np.diff(nodes)
    diag = np.zeros(n_cells)
    diag[:-1] += k
    diag[1:] += k
    diag[0] += faces[0] ** f / (nodes[0] - faces[0])
    diag[-1] += faces[-1] ** f / (faces[-1] - nodes[-1])
    mass = nodes ** (f - 2) * np.diff(faces)
    return HardyGrid(f, nodes, faces, diag, -k, mass)


def hardy_ratio(hg: HardyGrid, u) -> float:
    """int u'^2 x^f / int x^-2 u^2 x^f for a probe on the Hardy grid."""
    u = np.asarray(u, float)
    num = hg.diag @ (u * u) + 2.0 * np.sum(hg.off * u[:-1] * u[1:])
    return float(num / np.sum(hg.mass * u * u))


def hardy_near_optimizer(hg: HardyGrid):
    """x^((1-f)/2) with a logarithmic cutoff vanishing at both window ends."""
    x = hg.nodes
    a, b = hg.faces[0], hg.faces[-1]
    return x ** ((1 - hg.f) / 2.0) * np.sin(np.pi * np.log(x / a) / np.log(b / a))


def hardy_check(f: int, hg: HardyGrid | None = None, **grid_kw) -> HardyReport:
    """Smallest discrete Rayleigh quotient against the constant (f-1)^2/4."""
    if hg is None:
        hg = hardy_grid(f, **grid_kw)
    s = 1.0 / np.sqrt(hg.mass)
    d = hg.diag * s * s
    e = hg.off * s[:-1] * s[1:]
    lam = float(eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0])
    const = (f - 1) ** 2 / 4.0
    if const == 0:
        return HardyReport(f, lam, 0.0, math.inf, hg.h, hg.L, degenerate=True)
    return HardyReport(f, lam, const, lam / const, hg.h, hg.L)


# -- Morrey classes ----------------------------------------------------------------


@dataclass
class MorreyReport:
    q: float
    alpha: float
    sup_constant: float
    verdict: str
    slopes: dict
    values: dict
    radii: np.ndarray


def _interval_integral(grid, integrand, lo, hi):
    a, b = grid.faces[:-1], grid.faces[1:]
    overlap = np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None) / (b - a)
    return float(np.sum(grid.weights * integrand * overlap)), float(np.sum(grid.weights * overlap))


def morrey_check(V, grid, n: int, q: float, alpha: float, centers, radii, slope_tol: float = 0.05) -> MorreyReport:
    """Probe sup_r r^(alpha q - n) int_{B(p, r)} |V|^q over tips and interior points.

    At a tip the ball B(tip, r) is the radial interval of length r times the
    link, which is exact.  Around an interior point the mean of |V|^q over the
    geodesic interval (p - r, p + r) stands in for the mean over the metric
    ball, whose volume is taken Euclidean (omega_n r^n).  The verdict is
    ``finite`` when the probed values do not grow as r shrinks over the
    smallest decade of radii; ``outside_hypothesis`` when that happens only
    with alpha >= 2.
    """
    if not q > 1:
        raise ValueError("Morrey probes need q > 1")
    radii = np.sort(np.asarray(radii, float))
    if radii[0] <= 0 or radii[-1] / radii[0] < 100.0:
        raise ProbeError("radii must be positive and span at least two decades")
    Vq = np.abs(np.asarray(V, float)) ** q
    a, b = grid.faces[0], grid.faces[-1]
    omega = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
    values, slopes = {}, {}
    small = radii <= radii[0] * 10.0 * (1 + 1e-12)
    for p in centers:
        vals = []
        for r in radii:
            if p == a:
                integral, _ = _interval_integral(grid, Vq, a, a + r)
            elif p == b:
                integral, _ = _interval_integral(grid, Vq, b - r, b)
            else:
                integral, measure = _interval_integral(grid, Vq, p - r, p + r)
                integral = integral / measure * omega * r**n
            vals.append(r ** (alpha * q - n) * integral)
        vals = np.asarray(vals)
        values[float(p)] = vals
        pos = small & (vals > 0)
        if pos.sum() >= 2:
            slopes[float(p)] = float(np.polyfit(np.log(radii[pos]), np.log(vals[pos]), 1)[0])
        else:
            slopes[float(p)] = 0.0
    finite = all(sl >= -slope_tol for sl in slopes.values())
    sup_c = max(float(v.max()) for v in values.values()) if finite else math.inf
    if finite and alpha >= 2:
        verdict = "outside_hypothesis"
    else:
        verdict = "finite" if finite else "infinite"
    return MorreyReport(q, alpha, sup_c, verdict, slopes, values, radii)
