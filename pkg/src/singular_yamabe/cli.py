"""Command-line entry point: ``singular-yamabe <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (partial results
already written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import compare_prediction, fit_exponent, positivity_audit
from .certifier import (
    TruncationParams,
    admissible_potential,
    hardy_check,
    hardy_grid,
    hardy_near_optimizer,
    hardy_ratio,
    moser_supbound,
    morrey_check,
    sobolev_constants,
    verify_truncation_inequalities,
)
from .cone_geometry import admissibility, conic_coefficients, delta_normalization, scal_profile, stratum_from_expansion
from .link_spectrum import (
    conic_indicial_roots,
    family_spectrum,
    positivity_check,
    predicted_tip_exponent,
)
from .spacefile import load_config, load_space, load_strata
from .yamabe_solver import (
    SolverError,
    SubcriticalSolution,
    assemble,
    continuation,
    grid_from_nodes,
    make_grid,
    residual,
    subcritical_exponent,
)

log = logging.getLogger("singular_yamabe")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
NORMALIZATION_TOL = 1e-6


class InvalidInput(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    write_atomic(path, buf.getvalue())


def write_report(path: Path, title: str, items) -> None:
    lines = [f"# {title}"]
    for key, value in items:
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(fmt(v) for v in value)
        lines.append(f"{key} = {fmt(value)}")
    write_atomic(path, "\n".join(lines) + "\n")


def write_manifest(out: Path, args, cfg) -> None:
    manifest = {
        "command": args.command,
        "input": [str(p) for p in _inputs(args)],
        "config": cfg.as_dict(),
        "flags": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "out", "config", "seed", "func")},
        "out": str(out),
        "seed": args.seed,
        "version": __version__,
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _inputs(args):
    for key in ("space", "strata", "solution"):
        if getattr(args, key, None) is not None:
            yield getattr(args, key)


# -- commands ----------------------------------------------------------------------


def cmd_spectrum(args, cfg, out: Path) -> int:
    space = load_space(args.space)
    m = args.m if args.m is not None else space.n
    if m < 3:
        raise InvalidInput(f"--m must be >= 3, got {m}")
    link = space.link
    if args.jmax is not None:
        if args.jmax < 0:
            raise InvalidInput("--jmax must be >= 0")
        link = replace(link, laplace_spectrum=link.laplace_spectrum[: args.jmax + 1])
    spec = family_spectrum(link, m)
    roots = conic_indicial_roots(spec)
    rows = [(j, lam, mult, r[0], r[1]) for j, ((lam, mult), r) in enumerate(zip(spec.entries, roots.roots))]
    write_csv(out / "spectrum.csv", ["mode_index", "eigenvalue", "multiplicity", "nu_minus", "nu_plus"], rows)
    if m == space.n:
        rep = positivity_check(spec, space.constants, space.f)
        items = [
            ("classification", rep.classification),
            ("lambda0", rep.lambda0),
            ("threshold", rep.threshold),
            ("tolerance", rep.tolerance),
            ("positive", rep.positive),
        ]
        write_report(out / "positivity.txt", "lowest eigenvalue of -L^n against c(n) f (f-1)", items)
    return EXIT_OK


def _parse_schedule(text):
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise InvalidInput(f"--schedule must be comma-separated numbers, got {text!r}") from None


def _profile_rows(sol: SubcriticalSolution):
    return [(x, u, sol.p, sol.Y_p) for x, u in zip(sol.x, sol.u_p)]


def cmd_solve(args, cfg, out: Path) -> int:
    space = load_space(args.space)
    config = cfg.solver
    if args.grid is not None:
        config = replace(config, n_cells=args.grid)
    if args.schedule is not None:
        config = replace(config, schedule=_parse_schedule(args.schedule))
    config.schedule_for(space.n)
    grid = make_grid(space, config)
    asm = assemble(space, grid)
    stages = []
    header = ["p", "Y_p", "residual", "min_u", "max_u"]

    def flush():
        rows = [(s.p, s.Y_p, s.residual, s.u_p.min(), s.u_p.max()) for s in stages]
        write_csv(out / "continuation.csv", header, rows)

    def on_stage(sol):
        stages.append(sol)
        write_csv(out / f"profile_{len(stages) - 1:02d}.csv", ["x", "u", "p", "Y_p"], _profile_rows(sol))
        flush()
        log.info("p = %.6g  Y_p = %.12g  residual = %.3e", sol.p, sol.Y_p, sol.residual)

    try:
        result = continuation(asm, config, on_stage=on_stage)
    except (SolverError, KeyboardInterrupt) as exc:
        flush()
        write_report(
            out / "summary.txt",
            "continuation interrupted",
            [("status", "failed"), ("completed_stages", len(stages)), ("reason", str(exc) or type(exc).__name__)],
        )
        log.error("continuation failed after %d stages: %s", len(stages), exc)
        return EXIT_NUMERICAL
    last = result.stages[-1]
    write_csv(out / "solution.csv", ["x", "u", "p", "Y_p"], _profile_rows(last))
    items = [
        ("status", "ok"),
        ("label", result.label),
        ("Y_extrapolated", result.Y_extrapolated),
        ("extrapolation_order", result.order),
        ("stages", len(result.stages)),
        ("last_p", last.p),
        ("last_Y_p", last.Y_p),
        ("Lambda", last.Lambda),
        ("Lambda_over_c", last.Lambda_alt),
        ("n_cells", len(grid)),
        ("h_min", grid.h_min),
        ("h_max", grid.h_max),
    ]
    write_report(out / "summary.txt", "radial Yamabe estimate", items)
    return EXIT_OK


def _read_solution(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot read: {exc.strerror}") from None
    if not rows or not {"x", "u", "p", "Y_p"} <= set(rows[0]):
        raise InvalidInput(f"{path}: expected columns x, u, p, Y_p")
    try:
        x = np.array([float(r["x"]) for r in rows])
        u = np.array([float(r["u"]) for r in rows])
        p = float(rows[0]["p"])
        Y = float(rows[0]["Y_p"])
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from None
    return x, u, p, Y


def tip_prediction(space, tip):
    """Predicted leading exponent at a tip from the tangent-cone link (Z, rho^2 k)."""
    rho = space.warp.tip_slope(tip)
    lam0 = space.constants.c * space.link.scal / rho**2
    try:
        delta = delta_normalization(lam0, space.constants, space.f).delta
    except ValueError:
        return math.nan
    return predicted_tip_exponent(delta, space.constants)


def cmd_analyze(args, cfg, out: Path) -> int:
    space = load_space(args.space)
    x, u, p, Y = _read_solution(args.solution)
    grid = grid_from_nodes(space, x)
    asm = assemble(space, grid)
    s = subcritical_exponent(p)
    norm = asm.lp_norm(u, s)
    if abs(norm - 1.0) > NORMALIZATION_TOL:
        raise InvalidInput(f"solution is not normalized: ||u||_{s:.6g} = {norm:.12g}")
    if np.any(u < 0):
        raise InvalidInput("solution has negative values")
    sol = SubcriticalSolution(p, Y, u, residual(u, p, Y, asm), 0, grid, space.constants.c)

    fits, rows = [], []
    for tip in space.warp.tips:
        fit = fit_exponent(u, grid, tip)
        pred = tip_prediction(space, tip)
        cmp = compare_prediction(fit, pred, cfg.analysis.threshold)
        fits.append(fit)
        rows.append((tip, fit.gamma_hat, pred, cmp["rel_dev"], f"{fit.window[0]:.17g} {fit.window[1]:.17g}", fit.fit_error, fit.secondary_exponent, cmp["match"]))
    write_csv(
        out / "fits.csv",
        ["tip", "gamma_hat", "predicted", "rel_dev", "window", "fit_error", "secondary_exponent", "match"],
        rows,
    )

    strata = [stratum_from_expansion(space, conic_coefficients(space, tip, h=grid.h_min)) for tip in space.warp.tips]
    adm = admissibility(strata)
    audit = positivity_audit(u, adm, x=x, fits=fits, n=space.n)
    write_report(
        out / "positivity.txt",
        "positivity audit",
        [
            ("iv_a", adm.iv_a),
            ("iv_b", adm.iv_b),
            ("iv_c", adm.iv_c),
            ("min_u", audit.min_u),
            ("max_u", audit.max_u),
            ("argmin_x", audit.argmin),
            ("lower_bound_asserted", audit.lower_bound_asserted),
            ("lower_bound_ok", audit.lower_bound_ok),
            ("growth_bound_ok", audit.growth_ok),
            ("note", audit.note),
        ],
    )

    est = sobolev_constants(asm, n_probes=cfg.analysis.n_probes, n_verify=cfg.analysis.n_verify, seed=args.seed)
    q = cfg.analysis.q if cfg.analysis.q is not None else float(space.n)
    V = admissible_potential(sol, asm)
    ladder = moser_supbound(u, V, q, est, asm.w, space.constants, levels=cfg.analysis.moser_levels)
    write_report(
        out / "moser_certificate.txt",
        "Moser sup-bound certificate",
        [
            ("status", ladder.note),
            ("valid", ladder.valid),
            ("A", est.A),
            ("B", est.B),
            ("sobolev_method", est.method),
            ("sobolev_violations", est.violations),
            ("q", ladder.q),
            ("r", ladder.r),
            ("kappa", ladder.kappa),
            ("alpha", ladder.alpha),
            ("C", ladder.C),
            ("C1", ladder.C1),
            ("log_product", ladder.log_product),
            ("log_product_literal", ladder.log_product_literal),
            ("sup_bound", ladder.sup_bound),
            ("max_u", ladder.max_u),
            ("ladder_exponents", ladder.exponents),
            ("ladder_norms", ladder.norms),
            ("ladder_products", ladder.products),
        ],
    )
    return EXIT_OK


def cmd_admissibility(args, cfg, out: Path) -> int:
    n, strata = load_strata(args.strata)
    rows = []
    for i, s in enumerate(strata):
        one = admissibility([s])
        rows.append((i, s.f_j, s.ell_j, s.A0, s.A1, one.iv_a, one.iv_b, one.iv_c))
    write_csv(out / "strata.csv", ["index", "f", "ell", "A0", "A1", "iv_a", "iv_b", "iv_c"], rows)
    rep = admissibility(strata)
    write_report(
        out / "admissibility.txt",
        "curvature admissibility",
        [
            ("dimension", n),
            ("strata", len(strata)),
            ("iv_a", rep.iv_a),
            ("iv_b", rep.iv_b),
            ("alpha", rep.alpha),
            ("iv_c", rep.iv_c),
            ("verdict", "smooth" if not strata else ("admissible" if rep.iv_a or rep.iv_b or rep.iv_c else "not admissible")),
        ],
    )
    return EXIT_OK


def cmd_inequalities(args, cfg, out: Path) -> int:
    space = load_space(args.space)
    rng = np.random.default_rng(args.seed)
    alphas = rng.uniform(1.0, 3.0, 100)
    alphas[alphas == 1.0] = 2.0
    Ls = rng.uniform(1.0, 100.0, 100)
    witnesses = []
    for a, L in zip(alphas, Ls):
        chk = verify_truncation_inequalities(TruncationParams(a, L), rng.uniform(0, 10 * L, 100))
        if not chk.ok:
            witnesses.append((a, L, chk.witness, chk.which))
    write_report(
        out / "truncation.txt",
        "truncation inequalities",
        [("draws", 10000), ("violations", len(witnesses))] + [("witness", w) for w in witnesses[:5]],
    )

    hg = hardy_grid(space.f, n_cells=cfg.analysis.hardy_cells)
    hr = hardy_check(space.f, hg)
    near = hardy_ratio(hg, hardy_near_optimizer(hg))
    write_report(
        out / "hardy.txt",
        "Hardy inequality on the exact cone",
        [
            ("f", hr.f),
            ("constant", hr.constant),
            ("rayleigh_min", hr.rayleigh_min),
            ("ratio", hr.ratio),
            ("near_optimizer_ratio", near / hr.constant if hr.constant else math.inf),
            ("slack_budget", 1 - 10 * hr.h / hr.L),
            ("degenerate", hr.degenerate),
        ],
    )

    grid = make_grid(space, cfg.solver)
    asm = assemble(space, grid)
    V = scal_profile(space, grid.nodes)
    L = space.L
    radii = np.geomspace(10 * grid.h_min, 0.25 * L, 25)
    centers = list(space.warp.tips) + [0.5 * L]
    rows = []
    for alpha in (0.0, 1.0, 2.0):
        rep = morrey_check(V, grid, space.n, cfg.analysis.morrey_q, alpha, centers, radii)
        rows.append((alpha, rep.q, rep.verdict, rep.sup_constant, min(rep.slopes.values())))
    write_csv(out / "morrey.csv", ["alpha", "q", "verdict", "sup_constant", "min_slope"], rows)

    est = sobolev_constants(asm, n_probes=cfg.analysis.n_probes, n_verify=cfg.analysis.n_verify, seed=args.seed)
    write_report(
        out / "sobolev.txt",
        "Sobolev constants",
        [
            ("A", est.A),
            ("B", est.B),
            ("B_candidate", est.B_candidate),
            ("method", est.method),
            ("candidates_B", [c[0] for c in est.candidates]),
            ("candidates_S", [c[1] for c in est.candidates]),
            ("verified_probes", est.verified_probes),
            ("violations", est.violations),
        ],
    )
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="./out", help="output directory (default ./out)")
    common.add_argument("--seed", type=int, default=0, help="seed for probe generation")
    common.add_argument("--config", default=None, help="YAML run configuration")

    parser = argparse.ArgumentParser(prog="singular-yamabe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", parents=[common], help="spectrum of -L^m on the link and indicial roots")
    p.add_argument("space")
    p.add_argument("--m", type=int, default=None, help="operator index (default: dimension)")
    p.add_argument("--jmax", type=int, default=None, help="highest mode to report")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("solve", parents=[common], help="subcritical continuation toward the critical exponent")
    p.add_argument("space")
    p.add_argument("--grid", type=int, default=None, help="number of cells")
    p.add_argument("--schedule", default=None, help="comma-separated decreasing exponents p > n")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("analyze", parents=[common], help="tip fits, positivity audit and Moser certificate")
    p.add_argument("solution", help="profile CSV written by solve")
    p.add_argument("space")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("admissibility", parents=[common], help="truth table of the curvature hypotheses")
    p.add_argument("strata")
    p.set_defaults(func=cmd_admissibility)

    p = sub.add_parser("inequalities", parents=[common], help="truncation, Hardy, Morrey and Sobolev reports")
    p.add_argument("space")
    p.set_defaults(func=cmd_inequalities)
    return parser


def _setup_logging():
    level = os.environ.get("SINGULAR_YAMABE_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise InvalidInput(f"SINGULAR_YAMABE_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args, cfg)
        return args.func(args, cfg, out)
    except SolverError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
