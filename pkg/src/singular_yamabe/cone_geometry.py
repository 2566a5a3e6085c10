"""Warped-product cone spaces, curvature profiles and conformal changes.

A space here is ``[0, L] x Z`` with metric ``g = dx^2 + psi(x)^2 k`` where
``(Z, k)`` is a homogeneous link (constant scalar curvature, known Laplace
spectrum).  Everything reduces to radial computations in ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.integrate import simpson


class InvalidSpaceError(ValueError):
    """The space description is inconsistent or the warp is not positive."""


class FitError(ValueError):
    """A least-squares fit is ill-posed on the requested window."""


def conformal_coefficient(m: float) -> float:
    """c(m) = (m - 2) / (4 (m - 1))."""
    return (m - 2.0) / (4.0 * (m - 1.0))


def sphere_volume(dim: int, radius: float = 1.0) -> float:
    """Riemannian volume of the round sphere S^dim of the given radius."""
    return 2.0 * math.pi ** ((dim + 1) / 2.0) / math.gamma((dim + 1) / 2.0) * radius**dim


@dataclass(frozen=True)
class YamabeConstants:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise InvalidSpaceError(f"dimension must be an integer >= 3, got {self.n}")

    @property
    def c(self) -> float:
        return conformal_coefficient(self.n)

    @property
    def tau(self) -> float:
        return (self.n + 2.0) / (self.n - 2.0)

    @property
    def crit(self) -> float:
        return 2.0 * self.n / (self.n - 2.0)

    def sphere_yamabe(self) -> float:
        """Y(S^n) = c(n) n (n-1) Vol(S^n)^(2/n)."""
        return self.c * self.n * (self.n - 1) * sphere_volume(self.n) ** (2.0 / self.n)


@dataclass(frozen=True)
class LinkSpec:
    """Homogeneous link: dimension, volume, constant scalar curvature and the
    low part of the spectrum of -Delta_k as (eigenvalue, multiplicity) pairs."""

    f: int
    volume: float
    scal: float
    laplace_spectrum: tuple = ((0.0, 1),)
    homogeneous: bool = True
    name: str = ""

    def __post_init__(self):
        if int(self.f) != self.f or self.f < 1:
            raise InvalidSpaceError(f"link dimension must be an integer >= 1, got {self.f}")
        if not self.volume > 0:
            raise InvalidSpaceError(f"link volume must be positive, got {self.volume}")
        spec = tuple((float(lam), int(mult)) for lam, mult in self.laplace_spectrum)
        if not spec:
            raise InvalidSpaceError("link spectrum must contain at least the zero mode")
        if spec[0] != (0.0, 1):
            raise InvalidSpaceError("lowest Laplace eigenvalue must be 0 with multiplicity 1")
        lams = [lam for lam, _ in spec]
        if any(b < a for a, b in zip(lams, lams[1:])):
            raise InvalidSpaceError("link spectrum must be nondecreasing")
        if any(m < 1 for _, m in spec):
            raise InvalidSpaceError("multiplicities must be positive")
        object.__setattr__(self, "laplace_spectrum", spec)

    def scaled(self, factor: float) -> "LinkSpec":
        """Link with metric multiplied by ``factor`` (a squared length scale)."""
        if not factor > 0:
            raise InvalidSpaceError("metric scale factor must be positive")
        return LinkSpec(
            f=self.f,
            volume=self.volume * factor ** (self.f / 2.0),
            scal=self.scal / factor,
            laplace_spectrum=tuple((lam / factor, m) for lam, m in self.laplace_spectrum),
            homogeneous=self.homogeneous,
            name=self.name,
        )


# -- warp profiles ----------------------------------------------------------


@dataclass(frozen=True)
class Spindle:
    """psi(x) = rho (L/pi) sin(pi x / L): two conic tips of slope rho."""

    rho: float
    L: float = math.pi
    kind = "analytic_spindle"

    def __post_init__(self):
        if not (self.rho > 0 and self.L > 0):
            raise InvalidSpaceError("spindle needs rho > 0 and L > 0")

    @property
    def tips(self):
        return (0.0, self.L)

    def psi(self, x):
        return self.rho * (self.L / math.pi) * np.sin(math.pi * np.asarray(x, float) / self.L)

    def dpsi(self, x):
        return self.rho * np.cos(math.pi * np.asarray(x, float) / self.L)

    def d2psi(self, x):
        k = math.pi / self.L
        return -self.rho * k * np.sin(k * np.asarray(x, float))

    def tip_slope(self, tip):
        return self.rho


@dataclass(frozen=True)
class Cone:
    """Exact cone psi(x) = rho x on (0, L]; only x = 0 is a tip."""

    rho: float
    L: float = 1.0
    kind = "cone"

    def __post_init__(self):
        if not (self.rho > 0 and self.L > 0):
            raise InvalidSpaceError("cone needs rho > 0 and L > 0")

    @property
    def tips(self):
        return (0.0,)

    def psi(self, x):
        return self.rho * np.asarray(x, float)

    def dpsi(self, x):
        return np.full_like(np.asarray(x, float), self.rho)

    def d2psi(self, x):
        return np.zeros_like(np.asarray(x, float))

    def tip_slope(self, tip):
        if tip != 0.0:
            raise InvalidSpaceError("an exact cone has its only tip at x = 0")
        return self.rho


@dataclass(frozen=True)
class SampledWarp:
    """User-sampled warp.  Derivatives come from finite differences on the
    samples (centered inside, one-sided second order at the ends) and are
    interpolated to other points."""

    x: tuple
    values: tuple
    L: float
    kind = "sampled"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, float)
        v = np.asarray(self.values, float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 8:
            raise InvalidSpaceError("sampled warp needs matching x/psi arrays of length >= 8")
        if np.any(np.diff(x) <= 0):
            raise InvalidSpaceError("sampled warp x must be strictly increasing")
        if x[0] <= 0 or x[-1] >= self.L:
            raise InvalidSpaceError("sampled warp x must lie in the open interval (0, L)")
        if np.any(v <= 0):
            raise InvalidSpaceError("sampled warp psi must be positive")
        object.__setattr__(self, "x", tuple(x))
        object.__setattr__(self, "values", tuple(v))

    @property
    def tips(self):
        return (0.0, self.L)

    def _derivs(self, method="centered"):
        if method not in self._cache:
            x = np.asarray(self.x)
            v = np.asarray(self.values)
            self._cache[method] = finite_derivatives(x, v, method=method)
        return self._cache[method]

    def psi(self, x):
        return CubicSpline(self.x, self.values)(np.asarray(x, float))

    def dpsi(self, x, method="centered"):
        d1, _ = self._derivs(method)
        return np.interp(np.asarray(x, float), self.x, d1)

    def d2psi(self, x, method="centered"):
        _, d2 = self._derivs(method)
        return np.interp(np.asarray(x, float), self.x, d2)

    def tip_slope(self, tip):
        x = np.asarray(self.x)
        v = np.asarray(self.values)
        if tip == 0.0:
            return float(v[0] / x[0])
        return float(v[-1] / (self.L - x[-1]))


WarpProfile = Spindle | Cone | SampledWarp


@dataclass(frozen=True)
class ConeSpace:
    constants: YamabeConstants
    link: LinkSpec
    warp: Spindle | Cone | SampledWarp

    def __post_init__(self):
        if self.constants.n != self.link.f + 1:
            raise InvalidSpaceError(
                f"dimension n={self.constants.n} must equal link dimension + 1 = {self.link.f + 1}"
            )

    @property
    def n(self) -> int:
        return self.constants.n

    @property
    def f(self) -> int:
        return self.link.f

    @property
    def L(self) -> float:
        return self.warp.L


@dataclass(frozen=True)
class StratumData:
    n: int
    f_j: int
    A0: float
    A1: float

    def __post_init__(self):
        if self.f_j < 1 or self.ell_j < 0:
            raise InvalidSpaceError(
                f"stratum needs f_j >= 1 and n - f_j - 1 >= 0 (n={self.n}, f_j={self.f_j})"
            )

    @property
    def ell_j(self) -> int:
        return self.n - self.f_j - 1


@dataclass(frozen=True)
class CurvatureExpansion:
    A0: float
    A1: float
    remainder_bound: float
    window: tuple = (0.0, 0.0)
    tip: float = 0.0


@dataclass(frozen=True)
class NormalizationResult:
    delta: float
    xi_map: str
    rescaled_link: LinkSpec | None = None


@dataclass(frozen=True)
class AdmissibilityReport:
    iv_a: bool
    iv_b: bool
    alpha: float | None
    iv_c: bool


@dataclass(frozen=True)
class ModelProblem:
    kind: str
    ell: int
    link: str
    model: str
    cylinder_form: str
    value: float | None = None


# -- finite differences -------------------------------------------------------


def finite_derivatives(x, y, method="centered"):
    """First and second derivatives of samples on a nonuniform grid.

    ``centered`` uses three-point centered stencils in the interior and
    second-order one-sided stencils at the two ends; ``one_sided`` uses
    forward stencils everywhere except the last points (backward).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 4:
        raise ValueError("need at least 4 samples to differentiate")
    d1 = np.empty_like(y)
    d2 = np.empty_like(y)
    if method == "centered":
        d1[:] = np.gradient(y, x, edge_order=2)
        h0 = x[1:-1] - x[:-2]
        h1 = x[2:] - x[1:-1]
        # difference form: exactly zero on constants
        d2[1:-1] = 2.0 * (h0 * (y[2:] - y[1:-1]) - h1 * (y[1:-1] - y[:-2])) / (h0 * h1 * (h0 + h1))
        d2[0] = _second_onesided(x[:4], y[:4])
        d2[-1] = _second_onesided(x[-4:][::-1], y[-4:][::-1])
    elif method == "one_sided":
        m = x.size
        for i in range(m):
            if i <= m - 4:
                idx = slice(i, i + 4)
                xs, ys = x[idx], y[idx]
            else:
                xs, ys = x[i - 3 : i + 1][::-1], y[i - 3 : i + 1][::-1]
            d1[i], d2[i] = _onesided_pair(xs, ys)
    else:
        raise ValueError(f"unknown differencing method {method!r}")
    return d1, d2


def _stencil_weights(xs, x0, order):
    # Fornberg-free small solve: exact polynomial reproduction on the stencil.
    k = len(xs)
    V = np.vander(np.asarray(xs) - x0, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _onesided_pair(xs, ys):
    # weights sum to zero, so apply them to differences from ys[0]
    d1 = _stencil_weights(xs[:3], xs[0], 1)[1:] @ (ys[1:3] - ys[0])
    d2 = _stencil_weights(xs, xs[0], 2)[1:] @ (ys[1:] - ys[0])
    return d1, d2


def _second_onesided(xs, ys):
    return _stencil_weights(xs, xs[0], 2)[1:] @ (ys[1:] - ys[0])


# -- curvature ---------------------------------------------------------------


def _warp_values(space: ConeSpace, x, method: str, h: float | None):
    warp = space.warp
    x = np.asarray(x, float)
    psi = warp.psi(x)
    if method == "exact":
        if isinstance(warp, SampledWarp):
            return psi, warp.dpsi(x), warp.d2psi(x)
        return psi, warp.dpsi(x), warp.d2psi(x)
    if isinstance(warp, SampledWarp):
        return psi, warp.dpsi(x, method), warp.d2psi(x, method)
    if h is None:
        h = 1e-3 * warp.L
    if method == "centered":
        pm, pp = warp.psi(x - h), warp.psi(x + h)
        return psi, (pp - pm) / (2 * h), (pp - 2 * psi + pm) / h**2
    if method == "one_sided":
        p1, p2, p3 = warp.psi(x + h), warp.psi(x + 2 * h), warp.psi(x + 3 * h)
        d1 = (-3 * psi + 4 * p1 - p2) / (2 * h)
        d2 = (2 * psi - 5 * p1 + 4 * p2 - p3) / h**2
        return psi, d1, d2
    raise ValueError(f"unknown differencing method {method!r}")


def scal_profile(space: ConeSpace, grid: Sequence[float], method: str = "exact", h: float | None = None):
    """Scalar curvature of ``dx^2 + psi^2 k`` at the points ``grid``.

    scal = -2 f psi''/psi + (scal_k - f (f-1) psi'^2) / psi^2.
    ``method`` selects analytic derivatives (``exact``) or finite differences
    (``centered`` / ``one_sided``, step ``h``) for analytic warps.
    """
    x = np.asarray(grid, float)
    if np.any(x <= 0) or np.any(x >= space.L):
        raise InvalidSpaceError("grid points must lie in the open interval (0, L)")
    psi, d1, d2 = _warp_values(space, x, method, h)
    if np.any(psi <= 0):
        bad = x[np.argmin(psi)]
        raise InvalidSpaceError(f"warp is not positive at x = {bad!r}")
    f = space.f
    return -2.0 * f * d2 / psi + (space.link.scal - f * (f - 1) * d1**2) / psi**2


def conic_coefficients(space: ConeSpace, tip: float = 0.0, window=None, h: float | None = None, samples: int = 32):
    """Fit scal ~ A0/x^2 + A1/x + O(1) near a tip (x is distance to the tip).

    The fit is least squares of x^2 scal on {1, x, x^2} over ``window``
    (distances from the tip).  ``remainder_bound`` is the sup over the window
    of |scal - A0/x^2 - A1/x|, i.e. the size of the bounded part.
    """
    L = space.L
    if tip not in (0.0, L) or tip not in space.warp.tips:
        raise InvalidSpaceError(f"x = {tip} is not a tip of this space")
    if window is None:
        if h is None:
            h = float(np.min(np.diff(space.warp.x))) if isinstance(space.warp, SampledWarp) else L / 1000.0
        window = (2.0 * h, 20.0 * h)
    lo, hi = map(float, window)
    if not (0 < lo < hi < L):
        raise FitError(f"window {window} must satisfy 0 < lo < hi < L")
    if isinstance(space.warp, SampledWarp):
        xs = np.asarray(space.warp.x)
        dist = xs if tip == 0.0 else L - xs
        pts = np.sort(dist[(dist >= lo) & (dist <= hi)])
    else:
        pts = np.geomspace(lo, hi, samples)
    if pts.size < 8:
        raise FitError(f"need at least 8 samples in the window, got {pts.size}")
    where = pts if tip == 0.0 else L - pts
    scal = scal_profile(space, where)
    target = pts**2 * scal
    xi = pts / hi
    basis = np.column_stack([np.ones_like(xi), xi, xi**2])
    cond = np.linalg.cond(basis)
    if hi / lo < 2.0 or cond > 1e6:
        raise FitError(f"window {window} too narrow for a stable fit (cond = {cond:.3g})")
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    A0 = float(coef[0])
    A1 = float(coef[1] / hi)
    remainder = float(np.max(np.abs(scal - A0 / pts**2 - A1 / pts)))
    return CurvatureExpansion(A0=A0, A1=A1, remainder_bound=remainder, window=(lo, hi), tip=tip)


def admissibility(strata: Sequence[StratumData], atol: float = 1e-9) -> AdmissibilityReport:
    """Classify scal against integrability hypotheses iv a)-c) stratum by stratum."""
    iv_a = iv_b = iv_c = True
    any_a1 = False
    for s in strata:
        low = s.f_j <= (s.n - 2) / 2.0
        a0_zero = abs(s.A0) <= atol
        a1_zero = abs(s.A1) <= atol
        any_a1 |= not a1_zero
        iv_a &= a0_zero and (a1_zero or not low)
        iv_b &= a0_zero
        iv_c &= (s.A0 >= -atol) and (s.A1 >= -atol or not low)
    alpha = (1.0 if any_a1 else 0.0) if iv_b else None
    return AdmissibilityReport(iv_a=bool(iv_a), iv_b=bool(iv_b), alpha=alpha, iv_c=bool(iv_c))


def stratum_from_expansion(space: ConeSpace, expansion: CurvatureExpansion) -> StratumData:
    """An isolated conic tip as a stratum record (ell = 0)."""
    return StratumData(n=space.n, f_j=space.f, A0=expansion.A0, A1=expansion.A1)


# -- conformal changes ---------------------------------------------------------


def radial_laplacian(space: ConeSpace, x, w):
    """Delta_g w = w'' + f (psi'/psi) w' for radial samples, by differences."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    d1, d2 = finite_derivatives(x, w)
    psi = space.warp.psi(x)
    return d2 + space.f * space.warp.dpsi(x) / psi * d1


def conformal_scal(space: ConeSpace, x, w):
    """Scalar curvature of w^(4/(n-2)) g for a positive radial factor w."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    if np.any(w <= 0):
        raise ValueError("conformal factor must be positive")
    c = space.constants.c
    scal = scal_profile(space, x)
    lap = radial_laplacian(space, x, w)
    return w ** (-4.0 / (space.n - 2)) * (scal - lap / (c * w))


def delta_normalization(lambda0: float, consts: YamabeConstants, f: int, link: LinkSpec | None = None):
    """Solve delta^-2 lambda0 = c(n) f (f-1) for the rescaling g -> x^(2 delta - 2) g."""
    if not lambda0 > 0:
        raise ValueError(f"lowest eigenvalue {lambda0} is not positive; normalization impossible")
    if f < 2:
        raise ValueError("normalization needs link dimension f >= 2")
    delta = math.sqrt(lambda0 / (consts.c * f * (f - 1)))
    rescaled = link.scaled(delta**2) if link is not None else None
    return NormalizationResult(delta=delta, xi_map=f"xi = x**{delta!r} / {delta!r}", rescaled_link=rescaled)


# -- the cylinder picture --------------------------------------------------------


def _exact_cone_slope(space: ConeSpace, x, rtol=1e-9):
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("cylinder transform needs x > 0 (the tip is at t = +infinity)")
    rho = space.warp.tip_slope(0.0)
    psi = space.warp.psi(x)
    if np.max(np.abs(psi - rho * x) / (rho * x)) > rtol:
        raise InvalidSpaceError("window is not an exact cone region")
    return rho


def cylinder_transform(space: ConeSpace, x, u):
    """(t, v) with t = -log x and v = x^((n-2)/2) u."""
    _exact_cone_slope(space, x)
    x = np.asarray(x, float)
    return -np.log(x), x ** ((space.n - 2) / 2.0) * np.asarray(u, float)


def _spline_integrals(s, y, weight):
    spl = CubicSpline(s, y)
    dy = spl(s, 1)
    return dy, simpson(weight, x=s)


def cone_quotient(space: ConeSpace, x, u):
    """Yamabe quotient of radial samples in the cone picture (spline
    derivatives, Simpson quadrature)."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    rho = _exact_cone_slope(space, x)
    f, c, crit = space.f, space.constants.c, space.constants.crit
    vol = space.link.volume * rho**f
    du = CubicSpline(x, u)(x, 1)
    scal = scal_profile(space, x)
    num = vol * simpson((du**2 + c * scal * u**2) * x**f, x=x)
    den = vol * simpson(np.abs(u) ** crit * x**f, x=x)
    return num / den ** (2.0 / crit)


def cylinder_quotient(space: ConeSpace, t, v, boundary_terms: bool = True):
    """Yamabe quotient on the cylinder R x (Z, rho^2 k).

    When the samples do not vanish at the window ends, the cone and cylinder
    energies differ by the flux (n-2)/2 [v^2]; ``boundary_terms`` adds it so
    that the two pictures agree for arbitrary radial data.
    """
    t = np.asarray(t, float)
    v = np.asarray(v, float)
    order = np.argsort(t)
    t, v = t[order], v[order]
    rho = space.warp.tip_slope(0.0)
    f, c, crit = space.f, space.constants.c, space.constants.crit
    vol = space.link.volume * rho**f
    scal_cyl = space.link.scal / rho**2
    dv = CubicSpline(t, v)(t, 1)
    num = simpson(dv**2 + c * scal_cyl * v**2, x=t)
    if boundary_terms:
        num += (space.n - 2) / 2.0 * (v[-1] ** 2 - v[0] ** 2)
    den = simpson(np.abs(v) ** crit, x=t)
    return vol * num / (vol * den) ** (2.0 / crit)


# -- local models -------------------------------------------------------------


def local_yamabe_model(strata, n: int | None = None):
    """Model problems whose Yamabe invariants make up the local invariant.

    ``strata`` is a list of (StratumData, LinkSpec) pairs.  The smooth
    stratum always contributes the round sphere.  Values are only reported for
    the sphere model.
    """
    strata = list(strata)
    if n is None:
        if not strata:
            raise ValueError("dimension needed when there are no singular strata")
        n = strata[0][0].n
    consts = YamabeConstants(n)
    models = [
        ModelProblem(
            kind="smooth",
            ell=n,
            link="-",
            model=f"S^{n}",
            cylinder_form=f"S^{n}",
            value=consts.sphere_yamabe(),
        )
    ]
    for data, link in strata:
        name = link.name or f"Z^{link.f}"
        ell = data.ell_j
        if ell == 0:
            models.append(ModelProblem("conic", 0, name, f"C({name})", f"R x {name}"))
        else:
            models.append(ModelProblem("edge", ell, name, f"R^{ell} x C({name})", f"H^{ell + 1} x {name}"))
    return models
