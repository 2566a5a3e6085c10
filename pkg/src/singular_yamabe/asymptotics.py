"""Tip behaviour of computed solutions: power-law fits near conic tips,
comparison with the predicted exponent and a positivity audit."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .cone_geometry import AdmissibilityReport

CONSTANT_THRESHOLD = 0.05
RESAMPLE_POINTS = 33


class FitRefusedError(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionFit:
    gamma_hat: float
    c0_hat: float
    window: tuple
    fit_error: float
    secondary_exponent: float | None = None
    tip: float = 0.0


def _distances(grid, tip, L):
    if hasattr(grid, "nodes"):
        x = np.asarray(grid.nodes, float)
        if L is None:
            L = float(grid.faces[-1])
        h = float(np.diff(grid.faces)[0] if tip == 0.0 else np.diff(grid.faces)[-1])
    else:
        x = np.asarray(grid, float)
        h = float(x[0] if tip == 0.0 else np.diff(x)[-1])
    if tip == 0.0:
        d = x
    else:
        if L is None:
            raise ValueError("tip at the far end needs the interval length L")
        d = L - x
    return d, h, L


def fit_exponent(u, grid, tip: float = 0.0, window=None, L: float | None = None) -> ExpansionFit:
    """Fit u ~ c0 d^gamma in the distance d to ``tip``.

    ``grid`` is a RadialGrid or an array of nodes.  The default window is
    [4h, min(0.1 L, 64 h)] with h the tip cell size.  The data are resampled
    at log-spaced points and fitted by log-log least squares.  When the
    leading exponent is essentially zero, u ~ c0 + c1 d^s is fitted as well
    and s is reported as the secondary exponent.
    """
    u = np.asarray(u, float)
    d, h, L = _distances(grid, tip, L)
    if window is None:
        hi = 64.0 * h if L is None else min(0.1 * L, 64.0 * h)
        window = (4.0 * h, hi)
    lo, hi = map(float, window)
    if not (lo > 0 and hi / lo >= 4.0):
        raise FitRefusedError(f"window {window} must be positive and span a factor of at least 4")
    order = np.argsort(d)
    d, u = d[order], u[order]
    inside = (d >= lo) & (d <= hi)
    cover = np.flatnonzero(inside)
    if cover.size < 4:
        raise FitRefusedError(f"fewer than 4 grid nodes in the window {window}")
    i0, i1 = max(cover[0] - 1, 0), min(cover[-1] + 1, d.size - 1)
    seg = u[i0 : i1 + 1]
    if np.any(seg <= 0):
        if np.any(seg > 0) and np.any(seg < 0):
            raise FitRefusedError("u changes sign in the fit window")
        if np.all(seg < 0):
            seg = -seg
        else:
            raise FitRefusedError("u vanishes in the fit window")
    ds = d[i0 : i1 + 1]
    s = np.geomspace(lo, hi, RESAMPLE_POINTS)
    logu = np.interp(np.log(s), np.log(ds), np.log(seg))
    slope, intercept = np.polyfit(np.log(s), logu, 1)
    gamma, c0 = float(slope), float(math.exp(intercept))
    model = c0 * s**gamma
    vals = np.exp(logu)
    err = float(np.max(np.abs(vals / model - 1.0)))
    secondary = None
    if abs(gamma) < CONSTANT_THRESHOLD:
        secondary, c0, err = _secondary(s, vals, c0, err)
    return ExpansionFit(gamma, c0, (lo, hi), err, secondary, tip)


def _secondary(s, vals, c0, err):
    spread = (vals.max() - vals.min()) / abs(np.median(vals))
    if spread < 1e-9:
        return None, float(np.median(vals)), err
    base = float(np.median(vals[: len(vals) // 4 + 1]))
    tail = vals - base
    guess_s = 1.0
    if np.all(tail[-len(tail) // 2 :] != 0):
        k = len(tail) // 2
        guess_s = float(np.clip(np.polyfit(np.log(s[k:]), np.log(np.abs(tail[k:])), 1)[0], 0.05, 10))
    scale = s[-1]

    def model(x, a, b, e):
        return a + b * (x / scale) ** e

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(model, s, vals, p0=(base, tail[-1] or 1e-3, guess_s), maxfev=20000)
    except RuntimeError:
        return None, base, err
    a, b, e = map(float, popt)
    if not (math.isfinite(e) and e > 0):
        return None, base, err
    fit_err = float(np.max(np.abs(model(s, a, b, e) / vals - 1.0)))
    return e, a, fit_err


def compare_prediction(fit: ExpansionFit, predicted: float, threshold: float = 0.05):
    """Symmetric relative deviation |a - b| / max(|a|, |b|, floor).

    The floor (the constant-term threshold) keeps the comparison meaningful
    when both exponents are near zero.
    """
    a, b = float(fit.gamma_hat), float(predicted)
    dev = abs(a - b) / max(abs(a), abs(b), CONSTANT_THRESHOLD)
    return {"gamma_hat": a, "predicted": b, "rel_dev": dev, "match": bool(dev <= threshold)}


@dataclass(frozen=True)
class PositivityAudit:
    min_u: float
    max_u: float
    argmin: float
    lower_bound_asserted: bool
    lower_bound_ok: bool | None
    growth_ok: bool | None
    note: str


def positivity_audit(u, admissibility: AdmissibilityReport, x=None, fits=(), n: int | None = None) -> PositivityAudit:
    """Report min/max of u.  A positive lower bound is asserted only under
    hypothesis iv a) or iv b); otherwise only upper bounds are checked.

    ``fits`` (tip fits) and ``n`` enable the growth check u = O(d^(-(n-2)/2 + eps)),
    i.e. every fitted exponent exceeds -(n-2)/2.
    """
    u = np.asarray(u, float)
    i = int(np.argmin(u))
    where = float(np.asarray(x)[i]) if x is not None else float(i)
    asserted = bool(admissibility.iv_a or admissibility.iv_b)
    ok = bool(u.min() > 0) if asserted else None
    growth = None
    if fits and n is not None:
        growth = all(fit.gamma_hat > -(n - 2) / 2.0 for fit in fits)
    if asserted:
        note = "lower bound asserted" + ("" if ok else ": violated")
    else:
        note = "hypothesis iv c) only: no positive lower bound asserted"
    return PositivityAudit(float(u.min()), float(u.max()), where, asserted, ok, growth, note)
