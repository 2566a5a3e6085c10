"""Radial discretization of the Yamabe functional and subcritical minimization.

Cell-centred finite volumes on a grid graded geometrically toward the conic
tips.  Nodes sit at cell midpoints, so the first node is at h/2 and no
boundary condition is imposed at a tip: the face weight psi(0)^f = 0 takes
care of it.  For radial u the quadratic forms are

    energy(u)    = Vol(Z) sum_faces psi(b)^f (u_{i+1} - u_i)^2 / (x_{i+1} - x_i)
    potential(u) = c(n) sum_i w_i scal(x_i) u_i^2,   w_i = Vol(Z) psi(x_i)^f |cell_i|
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .cone_geometry import ConeSpace, InvalidSpaceError, scal_profile

log = logging.getLogger(__name__)

MAX_GRADING = 1.2


class SolverError(RuntimeError):
    """Minimization did not reach the residual tolerance."""

    def __init__(self, message, last_residual=None, partial=None, iterate=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.partial = partial or []
        self.iterate = iterate


class BallTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    n_cells: int = 1000
    grading_ratio: float = 1.05
    tip_refinement: float = 16.0
    step_rule: str = "armijo"
    armijo_sigma: float = 1e-4
    residual_tol: float = 1e-9
    newton_start: float = 1e-2
    max_iter: int = 4000
    schedule: tuple | None = None
    extrapolation_order: int = 1
    ball_cells: int = 400

    def __post_init__(self):
        if self.n_cells < 8:
            raise ValueError("need at least 8 cells")
        if not 1.0 <= self.grading_ratio <= MAX_GRADING:
            raise ValueError(f"grading ratio must lie in [1, {MAX_GRADING}]")
        if self.tip_refinement < 1.0:
            raise ValueError("tip_refinement must be >= 1")
        if self.step_rule != "armijo":
            raise ValueError("only the armijo step rule is implemented")
        if self.schedule is not None:
            sched = tuple(float(p) for p in self.schedule)
            if any(b >= a for a, b in zip(sched, sched[1:])):
                raise ValueError("continuation schedule must be strictly decreasing")
            object.__setattr__(self, "schedule", sched)

    def schedule_for(self, n: int) -> tuple:
        sched = self.schedule or tuple(n + 2.0**-k for k in range(7))
        if any(p <= n for p in sched):
            raise ValueError(f"every continuation exponent must exceed n = {n}")
        return sched


def subcritical_exponent(p: float) -> float:
    """Normalization exponent 2p/(p-2)."""
    return 2.0 * p / (p - 2.0)


# -- grid ---------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    nodes: np.ndarray
    faces: np.ndarray
    weights: np.ndarray
    face_weights: np.ndarray
    ratio: float
    dirichlet: tuple = (False, False)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.faces)

    @property
    def h_min(self) -> float:
        return float(self.steps.min())

    @property
    def h_max(self) -> float:
        return float(self.steps.max())

    def __len__(self):
        return self.nodes.size


def _cell_sizes(length, n_cells, ratio, refinement, graded):
    """Cell widths: geometric ramps (ratio) at the graded ends, uniform bulk."""
    ends = int(graded[0]) + int(graded[1])
    m = 0
    if ratio > 1.0 and ends:
        m = int(round(math.log(refinement) / math.log(ratio)))
        m = min(m, (n_cells - 2) // (2 * ends))
    ramp = ratio ** -np.arange(m, 0, -1.0)  # smallest first
    bulk_cells = n_cells - ends * m
    H = length / (ends * ramp.sum() + bulk_cells)
    parts = []
    if graded[0]:
        parts.append(H * ramp)
    parts.append(np.full(bulk_cells, H))
    if graded[1]:
        parts.append(H * ramp[::-1])
    return np.concatenate(parts)


def make_grid(space: ConeSpace, config: SolverConfig = SolverConfig(), interval=None, dirichlet=(False, False), n_cells=None):
    """Graded cell-centred grid on ``interval`` (default (0, L))."""
    a, b = interval if interval is not None else (0.0, space.L)
    tips = space.warp.tips
    graded = (a in tips and not dirichlet[0], b in tips and not dirichlet[1])
    n_cells = n_cells or config.n_cells
    sizes = _cell_sizes(b - a, n_cells, config.grading_ratio, config.tip_refinement, graded)
    faces = a + np.concatenate([[0.0], np.cumsum(sizes)])
    faces[-1] = b
    return grid_from_faces(space, faces, config.grading_ratio, dirichlet)


def grid_from_faces(space: ConeSpace, faces, ratio: float = 1.0, dirichlet=(False, False)) -> RadialGrid:
    """Cell-centred grid with the given cell faces."""
    faces = np.asarray(faces, float)
    if faces.ndim != 1 or faces.size < 3 or np.any(np.diff(faces) <= 0):
        raise InvalidSpaceError("cell faces must be strictly increasing")
    a, b = faces[0], faces[-1]
    tips = space.warp.tips
    nodes = 0.5 * (faces[:-1] + faces[1:])
    psi_nodes = space.warp.psi(nodes)
    if np.any(psi_nodes <= 0):
        raise InvalidSpaceError("warp is not positive at a grid node")
    vol = space.link.volume
    f = space.f
    weights = vol * psi_nodes**f * np.diff(faces)
    psi_faces = np.clip(space.warp.psi(faces), 0.0, None)
    for end, at in ((0, a), (-1, b)):
        if at in tips:
            psi_faces[end] = 0.0
    face_weights = vol * psi_faces**f
    return RadialGrid(nodes, faces, weights, face_weights, ratio, tuple(dirichlet))


def grid_from_nodes(space: ConeSpace, nodes, rtol: float = 1e-9) -> RadialGrid:
    """Recover the full-domain cell-centred grid (faces 0 and L) from its nodes."""
    x = np.asarray(nodes, float)
    faces = np.empty(x.size + 1)
    faces[0] = 0.0
    for i, xi in enumerate(x):
        faces[i + 1] = 2.0 * xi - faces[i]
    L = space.L
    if abs(faces[-1] - L) > rtol * L * x.size:
        raise InvalidSpaceError(f"nodes are not cell midpoints of a grid on [0, {L}]")
    faces[-1] = L
    steps = np.diff(faces)
    ratio = float(np.max(np.maximum(steps[1:] / steps[:-1], steps[:-1] / steps[1:])))
    return grid_from_faces(space, faces, ratio)


# -- assembly ------------------------------------------------------------------


@dataclass
class Assembled:
    space: ConeSpace
    grid: RadialGrid
    diag: np.ndarray
    off: np.ndarray
    scal: np.ndarray
    potential_diag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.potential_diag = self.space.constants.c * self.scal * self.grid.weights

    @property
    def w(self) -> np.ndarray:
        return self.grid.weights

    def stiffness_matvec(self, u):
        out = self.diag * u
        out[:-1] += self.off * u[1:]
        out[1:] += self.off * u[:-1]
        return out

    def operator_matvec(self, u):
        return self.stiffness_matvec(u) + self.potential_diag * u

    def energy(self, u) -> float:
        # Difference form: exactly zero on constants and never negative.
        u = np.asarray(u, float)
        e = float(np.sum(-self.off * np.diff(u) ** 2))
        g = self.grid
        if g.dirichlet[0]:
            e += g.face_weights[0] / (g.nodes[0] - g.faces[0]) * u[0] ** 2
        if g.dirichlet[1]:
            e += g.face_weights[-1] / (g.faces[-1] - g.nodes[-1]) * u[-1] ** 2
        return e

    def potential(self, u) -> float:
        return float(np.sum(self.potential_diag * u * u))

    def mass(self, u) -> float:
        return float(np.sum(self.w * u * u))

    def lp_norm(self, u, s: float) -> float:
        return _weighted_norm(self.w, u, s)

    def quotient(self, u, p: float) -> float:
        return self.quotient_s(u, subcritical_exponent(p))

    def quotient_s(self, u, s: float) -> float:
        """Quotient with the normalization exponent s given directly."""
        return (self.energy(u) + self.potential(u)) / self.lp_norm(u, s) ** 2

    def critical_quotient(self, u) -> float:
        s = self.space.constants.crit
        return (self.energy(u) + self.potential(u)) / self.lp_norm(u, s) ** 2

    def sparse_operator(self, extra_diag=None):
        d = self.diag + self.potential_diag
        if extra_diag is not None:
            d = d + extra_diag
        return sp.diags([self.off, d, self.off], [-1, 0, 1], format="csc")

    def with_potential(self, scal) -> "Assembled":
        return Assembled(self.space, self.grid, self.diag, self.off, np.asarray(scal, float))


def _weighted_norm(w, u, s):
    a = np.abs(u)
    m = a.max()
    if m == 0:
        return 0.0
    if not np.isfinite(m):
        return float(m)
    return float(m * np.sum(w * (a / m) ** s) ** (1.0 / s))


def assemble(space: ConeSpace, grid: RadialGrid) -> Assembled:
    """Stiffness, mass and potential forms for radial functions on ``grid``."""
    if np.any(space.warp.psi(grid.nodes) <= 0):
        raise InvalidSpaceError("warp is not positive at a grid node")
    x, b, fw = grid.nodes, grid.faces, grid.face_weights
    k = fw[1:-1] / np.diff(x)
    diag = np.zeros_like(x)
    diag[:-1] += k
    diag[1:] += k
    if grid.dirichlet[0]:
        diag[0] += fw[0] / (x[0] - b[0])
    if grid.dirichlet[1]:
        diag[-1] += fw[-1] / (b[-1] - x[-1])
    scal = scal_profile(space, x)
    return Assembled(space, grid, diag, -k, scal)


# -- minimization ----------------------------------------------------------------


@dataclass
class SubcriticalSolution:
    p: float
    Y_p: float
    u_p: np.ndarray
    residual: float
    iterations: int
    grid: RadialGrid
    c: float
    tolerance: float = 0.0

    @property
    def Lambda(self) -> float:
        """Multiplier in Delta u - c scal u + Lambda u^((p+2)/(p-2)) = 0."""
        return self.Y_p

    @property
    def Lambda_alt(self) -> float:
        """Multiplier for the form Delta u - scal u + Lambda u^((p+2)/(p-2)) = 0, i.e. Y_p / c(n)."""
        return self.Y_p / self.c

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes


def residual(u, p: float, Y_p: float, asm: Assembled) -> float:
    """Weighted L2 norm of Delta u - c scal u + Y_p u^((p+2)/(p-2)) on the grid."""
    s = subcritical_exponent(p)
    u = np.asarray(u, float)
    r = asm.operator_matvec(u) - Y_p * asm.w * np.abs(u) ** (s - 2) * u
    return float(math.sqrt(np.sum(r * r / asm.w)))


def _normalize(asm, u, s):
    return u / asm.lp_norm(u, s)


class _Preconditioner:
    def __init__(self, asm: Assembled):
        L = asm.grid.faces[-1] - asm.grid.faces[0]
        ab = np.zeros((3, asm.diag.size))
        ab[0, 1:] = asm.off
        ab[1] = asm.diag + asm.w / L**2
        ab[2, :-1] = asm.off
        self.ab = ab

    def __call__(self, g):
        return solve_banded((1, 1), self.ab, g)


def _newton(asm: Assembled, u, Y, s, steps=8):
    """Newton on (A u - Y W u^(s-1), sum w u^s - 1) from a nearby iterate."""
    w = asm.w
    n = u.size
    A = asm.sparse_operator()
    best = (u, Y, _res(asm, u, Y, s))
    for _ in range(steps):
        au = np.abs(u)
        F1 = A @ u - Y * w * au ** (s - 2) * u
        F2 = np.sum(w * au**s) - 1.0
        J11 = A - sp.diags((s - 1) * Y * w * au ** (s - 2))
        col = sp.csc_matrix((-w * au ** (s - 2) * u).reshape(-1, 1))
        row = sp.csc_matrix((s * w * au ** (s - 2) * u).reshape(1, -1))
        J = sp.bmat([[J11, col], [row, None]], format="csc")
        try:
            delta = spsolve(J, -np.concatenate([F1, [F2]]))
        except Exception:  # singular Jacobian
            break
        if not np.all(np.isfinite(delta)):
            break
        u = u + delta[:n]
        Y = Y + delta[n]
        r = _res(asm, u, Y, s)
        if r < best[2]:
            best = (u, Y, r)
        else:
            break
    return best


def _res(asm, u, Y, s):
    r = asm.operator_matvec(u) - Y * asm.w * np.abs(u) ** (s - 2) * u
    return float(math.sqrt(np.sum(r * r / asm.w)))


def rounding_floor(asm: Assembled, u, Y: float, s: float) -> float:
    """Machine epsilon times the residual norm of the term magnitudes: the
    level below which the discrete residual cannot be pushed in floating point."""
    au = np.abs(u)
    mag = np.abs(asm.diag) * au + np.abs(asm.potential_diag) * au + abs(Y) * asm.w * au ** (s - 1)
    mag[:-1] += np.abs(asm.off) * au[1:]
    mag[1:] += np.abs(asm.off) * au[:-1]
    return float(np.finfo(float).eps * math.sqrt(np.sum(mag * mag / asm.w)))


def minimize_subcritical(asm: Assembled, p: float, config: SolverConfig = SolverConfig(), u0=None) -> SubcriticalSolution:
    """Minimize Q_p(u) = (energy + potential) / ||u||_{2p/(p-2)}^2 over u >= 0.

    Projected gradient in the H^1 metric with Armijo backtracking; the
    projection is u -> |u| followed by renormalization.  Once the residual is
    small, Newton steps on the Euler-Lagrange system finish the job; a Newton
    result is accepted only if it lowers the residual and stays nonnegative
    up to rounding.
    """
    n = asm.space.n
    if not (n < p <= 2 * n):
        raise ValueError(f"exponent p = {p} must lie in (n, 2n] = ({n}, {2 * n}]")
    return minimize_exponent(asm, subcritical_exponent(p), config, u0)


def minimize_exponent(asm: Assembled, s: float, config: SolverConfig = SolverConfig(), u0=None) -> SubcriticalSolution:
    """Same minimization with the normalization exponent s > 2 given directly
    (s = 2n/(n-2) is the critical case, allowed on a fixed grid)."""
    if not s > 2:
        raise ValueError(f"normalization exponent must exceed 2, got {s}")
    p = 2.0 * s / (s - 2.0)
    w = asm.w
    u = np.ones_like(w) if u0 is None else np.abs(np.asarray(u0, float))
    if u.shape != w.shape or not np.any(u > 0):
        raise ValueError("initial guess must match the grid and not vanish identically")
    u = _normalize(asm, u, s)
    precond = _Preconditioner(asm)
    tol = config.residual_tol
    t = 1.0
    res = math.inf
    Q = asm.quotient_s(u, s)
    Q_prev = math.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        Au = asm.operator_matvec(u)
        Q = float(u @ Au)
        r = Au - Q * w * u ** (s - 1)
        res = float(math.sqrt(np.sum(r * r / w)))
        if not math.isfinite(Q) or Q < -1e12:
            raise SolverError(f"quotient unbounded below (Q = {Q!r}); Y > -infinity regime fails", res)
        tol = max(config.residual_tol, rounding_floor(asm, u, Q, s))
        if res <= tol:
            break
        stalled = t < 1e-10 or abs(Q - Q_prev) <= 1e-14 * abs(Q)
        Q_prev = Q
        if res <= config.newton_start or stalled:
            un, Yn, rn = _newton(asm, u.copy(), Q, s)
            if rn < res and np.min(un) >= -1e-12 * np.max(np.abs(un)):
                un = _normalize(asm, np.abs(un), s)
                rn = _res(asm, un, asm.quotient_s(un, s), s)
                if rn < res:
                    u, res = un, rn
                    if res <= tol:
                        break
                    continue
        g = 2.0 * r
        d = -precond(g)
        slope = float(g @ d)
        t = min(1.0, 4.0 * t)
        while True:
            trial = _normalize(asm, np.abs(u + t * d), s)
            Qt = asm.quotient_s(trial, s)
            if Qt <= Q + config.armijo_sigma * t * slope or t < 1e-14:
                break
            t *= 0.5
        u = trial
    else:
        Q = asm.quotient_s(u, s)
        res = _res(asm, u, Q, s)
        tol = max(config.residual_tol, rounding_floor(asm, u, Q, s))
        if res > tol:
            raise SolverError(
                f"no convergence after {config.max_iter} iterations (p = {p:.6g}, residual = {res:.3e})",
                res,
                iterate=u,
            )
    Q = asm.quotient_s(u, s)
    res = _res(asm, u, Q, s)
    tol = max(config.residual_tol, rounding_floor(asm, u, Q, s))
    sol = SubcriticalSolution(p, Q, u, res, it, asm.grid, asm.space.constants.c, tol)
    log.debug("p=%.6g Y_p=%.12g residual=%.3e iterations=%d", p, Q, res, it)
    return sol


@dataclass
class ContinuationResult:
    stages: list
    Y_extrapolated: float
    order: int
    label: str = "radial upper bound"


def extrapolate(ps, Ys, n: float, order: int = 1) -> float:
    """Polynomial extrapolation in (p - n) to p = n through the last order+1 stages."""
    if len(ps) < order + 1:
        raise ValueError(f"need at least {order + 1} stages for order-{order} extrapolation")
    h = np.asarray(ps[-(order + 1) :], float) - n
    y = np.asarray(Ys[-(order + 1) :], float)
    coef = np.polyfit(h, y, order)
    return float(np.polyval(coef, 0.0))


def continuation(asm: Assembled, config: SolverConfig = SolverConfig(), on_stage=None) -> ContinuationResult:
    """Solve along the decreasing schedule, warm-starting each stage."""
    n = asm.space.n
    sched = config.schedule_for(n)
    stages = []
    u = None
    for p in sched:
        try:
            sol = minimize_subcritical(asm, p, config, u0=u)
        except SolverError as exc:
            exc.partial = stages
            raise
        stages.append(sol)
        if on_stage is not None:
            on_stage(sol)
        u = sol.u_p
    order = min(config.extrapolation_order, len(stages) - 1)
    Y = extrapolate([s.p for s in stages], [s.Y_p for s in stages], n, order) if order >= 1 else stages[-1].Y_p
    return ContinuationResult(stages, Y, order)


# -- local estimates ----------------------------------------------------------------


@dataclass(frozen=True)
class BallEstimate:
    tip: float
    radius: float
    p: float
    value: float
    n: int
    residual: float
    label: str = "upper bound (radial ansatz)"

    @property
    def unit_scale_value(self) -> float:
        """Y_p of the ball blown up to unit radius: r^(2 - 2n/p) Y_p(B_r).
        Subcritical quotients are not scale invariant; on a model cone this
        rescaled value is independent of r."""
        return self.value * self.radius ** (2.0 - 2.0 * self.n / self.p)


def local_yamabe_ball(space: ConeSpace, tip: float, r: float, p: float, config: SolverConfig = SolverConfig()):
    """Radial estimate of Y(B(tip, r)) with functions vanishing at distance r."""
    L = space.L
    if tip not in space.warp.tips and tip not in (0.0, L):
        raise ValueError(f"x = {tip} is not an end of the space")
    if not (0 < r < L / 2):
        raise ValueError(f"radius {r} must lie in (0, L/2)")
    if r < 4.0 * L / config.n_cells:
        raise BallTooSmallError(f"radius {r} is smaller than 4 grid cells ({4 * L / config.n_cells:.3g})")
    if tip == 0.0:
        grid = make_grid(space, config, interval=(0.0, r), dirichlet=(False, True), n_cells=config.ball_cells)
    else:
        grid = make_grid(space, config, interval=(L - r, L), dirichlet=(True, False), n_cells=config.ball_cells)
    asm = assemble(space, grid)
    dist = grid.nodes if tip == 0.0 else L - grid.nodes
    u0 = np.cos(0.5 * np.pi * dist / r)
    sol = minimize_subcritical(asm, p, config, u0=u0)
    return BallEstimate(tip, r, p, sol.Y_p, space.n, sol.residual)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    Y_est: float
    Y_local_est: float
    margin: float
    note: str = "heuristic: both sides are numerical estimates"

    def __bool__(self):
        return self.passed


def hypothesis_gate(Y_est: float, Y_local_est: float, margin: float = 0.0) -> GateResult:
    """Strict test Y < Y_local - margin."""
    if not (math.isfinite(Y_est) and math.isfinite(Y_local_est)):
        raise ValueError("gate inputs must be finite")
    return GateResult(bool(Y_est < Y_local_est - margin), Y_est, Y_local_est, margin)


def solve_space(space: ConeSpace, config: SolverConfig = SolverConfig(), on_stage=None):
    """Grid, assemble and run the continuation in one call."""
    grid = make_grid(space, config)
    asm = assemble(space, grid)
    return asm, continuation(asm, config, on_stage=on_stage)


def refine(config: SolverConfig, factor: int = 2) -> SolverConfig:
    return replace(config, n_cells=config.n_cells * factor)
