"""Spectra of -L^m_k = -Delta_k + c(m) scal_k on homogeneous links and the
indicial roots they produce at conic points and edges."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cone_geometry import LinkSpec, YamabeConstants, conformal_coefficient, sphere_volume

DEFAULT_JMAX = 32
THRESHOLD_RTOL = 1e-9


class SpectrumError(ValueError):
    pass


class ComplexRootError(SpectrumError):
    """Indicial roots would be complex: the positivity hypothesis fails."""


@dataclass(frozen=True)
class SpectrumTable:
    entries: tuple
    operator_tag: str = "-Delta"

    def __post_init__(self):
        entries = tuple((float(lam), int(m)) for lam, m in self.entries)
        if not entries:
            raise SpectrumError("empty spectrum table")
        lams = [lam for lam, _ in entries]
        if any(b < a for a, b in zip(lams, lams[1:])):
            raise SpectrumError("spectrum table must be ascending")
        if any(m < 1 for _, m in entries):
            raise SpectrumError("multiplicities must be >= 1")
        object.__setattr__(self, "entries", entries)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.entries])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([m for _, m in self.entries], dtype=int)

    @property
    def truncation(self) -> int:
        return len(self.entries)

    def scaled(self, factor: float) -> "SpectrumTable":
        return SpectrumTable(tuple((lam * factor, m) for lam, m in self.entries), self.operator_tag)


@dataclass(frozen=True)
class IndicialRoots:
    roots: tuple  # (nu_minus, nu_plus, j)
    kind: str = "conic"
    degenerate: bool = False

    @property
    def nu_plus(self) -> np.ndarray:
        return np.array([r[1] for r in self.roots])

    @property
    def nu_minus(self) -> np.ndarray:
        return np.array([r[0] for r in self.roots])


@dataclass(frozen=True)
class PositivityReport:
    classification: str
    lambda0: float
    threshold: float
    tolerance: float
    positive: bool


def _binom(a: int, b: int) -> int:
    return math.comb(a, b) if 0 <= b <= a else 0


def sphere_spectrum(f: int, rho: float = 1.0, j_max: int = DEFAULT_JMAX) -> SpectrumTable:
    """-Delta on S^f(rho): j (j + f - 1) / rho^2 with harmonic-polynomial multiplicities."""
    if j_max < 0:
        raise SpectrumError("j_max must be >= 0")
    entries = []
    for j in range(j_max + 1):
        mult = _binom(f + j, j) - _binom(f + j - 2, j - 2)
        entries.append((j * (j + f - 1) / rho**2, mult))
    return SpectrumTable(tuple(entries), "-Delta")


def round_sphere_link(f: int, rho: float = 1.0, j_max: int = DEFAULT_JMAX) -> LinkSpec:
    return LinkSpec(
        f=f,
        volume=sphere_volume(f, rho),
        scal=f * (f - 1) / rho**2,
        laplace_spectrum=sphere_spectrum(f, rho, j_max).entries,
        name=f"S^{f}({rho:g})",
    )


def family_spectrum(link: LinkSpec, m: int) -> SpectrumTable:
    """Eigenvalues mu_j = lambda_j + c(m) scal_k of -L^m_k."""
    if m < 3:
        raise SpectrumError(f"operator family index must be >= 3, got {m}")
    if not link.homogeneous:
        raise SpectrumError("family spectrum needs a link of constant scalar curvature")
    shift = conformal_coefficient(m) * link.scal
    return SpectrumTable(tuple((lam + shift, mult) for lam, mult in link.laplace_spectrum), f"-L^{m}")


def family_compare(link: LinkSpec, p: int, q: int, atol: float = 1e-12):
    """Constants (A, B) with -L^p = A (-L^q) + B (-Delta), checked on the table."""
    if not p < q:
        raise SpectrumError(f"need p < q for positive comparison constants, got p={p}, q={q}")
    A = conformal_coefficient(p) / conformal_coefficient(q)
    B = 1.0 - A
    mu_p = family_spectrum(link, p).eigenvalues
    mu_q = family_spectrum(link, q).eigenvalues
    lam = np.array([lam for lam, _ in link.laplace_spectrum])
    scale = max(1.0, float(np.max(np.abs(mu_p))))
    if np.max(np.abs(mu_p - (A * mu_q + B * lam))) > atol * scale:
        raise SpectrumError("spectral comparison identity failed")
    return A, B


def conic_indicial_roots(spec: SpectrumTable) -> IndicialRoots:
    """nu_j^+- = +- sqrt(lambda_j) for the spectrum of -L^n on the link."""
    lams = spec.eigenvalues
    if np.any(lams < 0):
        raise ComplexRootError(f"negative eigenvalue {lams.min()!r}: indicial roots are complex")
    roots = tuple((-math.sqrt(lam), math.sqrt(lam), j) for j, lam in enumerate(lams))
    return IndicialRoots(roots, "conic", degenerate=bool(lams[0] == 0.0))


def edge_indicial_roots(f_prime: int, shifted_spec: SpectrumTable) -> IndicialRoots:
    """nu_j^+- = -(f'-1)/2 +- sqrt((f'-1)^2/4 + mu_j) for -L^n_{k'} - c(n) f'(f'-1)."""
    a = (f_prime - 1) / 2.0
    roots = []
    for j, mu in enumerate(shifted_spec.eigenvalues):
        disc = a * a + mu
        if disc < 0:
            raise ComplexRootError(f"mode {j}: discriminant {disc!r} < 0")
        s = math.sqrt(disc)
        roots.append((-a - s, -a + s, j))
    return IndicialRoots(tuple(roots), f"edge({f_prime})")


def positivity_check(spec: SpectrumTable, consts: YamabeConstants, f: int, rtol: float = THRESHOLD_RTOL):
    """Place lambda_0(-L^n) relative to the normalization threshold c(n) f (f-1)."""
    lam0 = float(spec.eigenvalues[0])
    threshold = consts.c * f * (f - 1)
    scale = max(abs(threshold), abs(lam0), np.finfo(float).tiny)
    if abs(lam0 - threshold) <= rtol * scale:
        cls = "equals_threshold"
    elif lam0 > threshold:
        cls = "strictly_above"
    else:
        cls = "below"
    return PositivityReport(cls, lam0, threshold, rtol, positive=lam0 > 0)


def predicted_tip_exponent(delta: float, consts: YamabeConstants) -> float:
    """Leading exponent (delta - 1)(n - 2)/2 of a solution at a conic tip."""
    return (delta - 1.0) * (consts.n - 2) / 2.0


# -- CSV interchange ----------------------------------------------------------


def write_spectrum_csv(spec: SpectrumTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode_index", "eigenvalue", "multiplicity"])
        for j, (lam, m) in enumerate(spec.entries):
            w.writerow([j, f"{lam:.17g}", m])


def read_spectrum_csv(path, operator_tag: str = "-Delta") -> SpectrumTable:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"mode_index", "eigenvalue", "multiplicity"}:
        raise SpectrumError(f"{path}: expected columns mode_index, eigenvalue, multiplicity")
    rows.sort(key=lambda r: int(r["mode_index"]))
    return SpectrumTable(tuple((float(r["eigenvalue"]), int(r["multiplicity"])) for r in rows), operator_tag)
