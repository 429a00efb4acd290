import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

import reports
from pipeline import (
    DomainSolution,
    certify,
    scan,
    solve_variant,
    sweep,
    variant_lambda,
)
from runconfig import MODES, RunConfig, load_config
from solvers import (
    ConfigError,
    ExpressionDomainError,
    SolverError,
    ValidationError,
    affine_reduce,
    build_hp,
    check_admissible,
    dtn_operator,
    leading_bracket,
    rescale,
    solve_corrector,
    solve_phi,
)
from solvers.radial import ode_residual

logger = logging.getLogger("overdet")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _centre(config: RunConfig):
    """Reduced spec, rescaled problem at p0 (eps = 1) and its profile."""
    spec = config.spec()
    lam = variant_lambda(spec, config.variant, config.lambda_bar, config.kappa)
    work = spec if spec.is_identity else affine_reduce(spec)
    p = np.asarray(config.p0, dtype=float)
    if work.chart is not None:
        p = work.chart.to_reduced(p)
    check_admissible(work, p)
    rp = rescale(work, p, 1.0, lam)
    return rp, solve_phi(rp)


# -------------------------------------------------
# MODES
# -------------------------------------------------
def run_profile(config: RunConfig) -> int:
    rp, prof = _centre(config)
    corr = solve_corrector(rp, prof)
    table = {"r": prof.grid, "phi": prof.phi, "dphi": prof.dphi, "ddphi": prof.ddphi}
    for j, Wj in enumerate(corr.W, start=1):
        table[f"W{j}"] = Wj
    reports.write_csv(config.out_dir, "profile.csv", table)
    result = {
        "phi0": prof.phi0,
        "dphi1": prof.dphi1,
        "ddphi1": prof.ddphi1,
        "c_bar": -prof.dphi1 / rp.f1_center,
        "delta": prof.delta,
        "degree_one_ratio": prof.degree_one_ratio,
        "shooting_iterations": prof.shooting_iterations,
        "ode_residual": ode_residual(prof),
        "V": corr.V.tolist(),
        "leading_bracket": leading_bracket(rp, prof, corr).tolist(),
    }
    reports.write_json(config.out_dir, "profile.json", reports.envelope(config, result))
    print(f"✅ profile: phi(0) = {prof.phi0:.12g}, phi'(1) = {prof.dphi1:.12g}, c_bar = {result['c_bar']:.12g}")
    return 0


def run_hp_spectrum(config: RunConfig) -> int:
    rp, prof = _centre(config)
    L = config.resolved_resolution().degree
    hp = build_hp(rp, prof, L)
    dtn = dtn_operator(rp.n, L)
    degrees = np.arange(L + 1)
    reports.write_csv(
        config.out_dir,
        "hp_spectrum.csv",
        {"l": degrees, "multiplier": hp.multipliers, "dtn": dtn.multipliers, "mode_ratio": hp.modes.ratio()},
    )
    scale = float(np.abs(hp.multipliers).max())
    kernel = abs(hp.multiplier(1)) / scale if L >= 1 and scale > 0 else 0.0
    result = {"multipliers": hp.multipliers.tolist(), "kernel_relative": kernel, "dphi1": prof.dphi1}
    reports.write_json(config.out_dir, "hp_spectrum.json", reports.envelope(config, result))
    print(f"✅ H_p spectrum to degree {L}: degree-1 multiplier {kernel:.2e} relative")
    return 0


def _solve(config: RunConfig, p0) -> DomainSolution:
    return solve_variant(
        config.spec(),
        config.eps,
        p0,
        variant=config.variant,
        lam_bar=config.lambda_bar,
        kappa=config.kappa,
        resolution=config.resolution,
        tol=config.tolerances,
    )


def run_find_point(config: RunConfig) -> int:
    sol = _solve(config, config.p0)
    reports.write_json(config.out_dir, "find_point.json", reports.envelope(config, sol.to_dict()))
    print(f"✅ centre p = {sol.p_original.tolist()}, c_bar = {sol.c_bar:.12g}")
    return 0


def _certified(config: RunConfig, sol: DomainSolution) -> int:
    report = certify(sol, config.spec(), resolution=config.resolution, tol=config.tolerances)
    reports.write_json(config.out_dir, "solution.json", sol.to_dict())
    reports.write_json(config.out_dir, "report.json", reports.envelope(config, {"solution": sol.to_dict(), "certificate": report}))
    if report["certified"]:
        print(f"✅ domain certified: p = {sol.p_original.tolist()}, relative defect {report['relative_defect']:.2e}")
        return 0
    print(f"❌ certification failed: relative defect {report['relative_defect']:.2e} >= {report['tolerance']:.0e}")
    return 3


def run_solve(config: RunConfig) -> int:
    return _certified(config, _solve(config, config.p0))


def run_verify(config: RunConfig) -> int:
    path = Path(config.solution)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read solution {path}: {exc}", stage="main.run_verify") from exc
    sol = DomainSolution.from_dict(data)
    spec = config.spec() if config.problem else None
    report = certify(sol, spec, resolution=config.resolution, tol=config.tolerances)
    reports.write_json(config.out_dir, "verify.json", reports.envelope(config, report))
    mark = "✅" if report["certified"] and report["provenance_match"] else "❌"
    print(f"{mark} verify: relative defect {report['relative_defect']:.2e}, provenance match {report['provenance_match']}")
    return 0 if report["certified"] else 3


def run_sweep(config: RunConfig) -> int:
    result = sweep(
        config.spec(),
        config.eps_list,
        config.lambda_bar,
        config.p0,
        variant=config.variant,
        kappa=config.kappa,
        resolution=config.resolution,
        tol=config.tolerances,
        workers=config.workers,
    )
    payload = {
        "rows": result.rows,
        "orders": result.orders,
        "solutions": [s.to_dict() if s else None for s in result.solutions],
    }
    reports.write_json(config.out_dir, "sweep.json", reports.envelope(config, payload))
    table = [{k: (json.dumps(v) if isinstance(v, list) else v) for k, v in row.items()} for row in result.rows]
    reports.write_csv(config.out_dir, "sweep.csv", table)
    failed = [r["eps"] for r in result.rows if r.get("error")]
    for eps in failed:
        print(f"❌ eps = {eps:g} failed")
    print(f"✅ sweep over {len(result.rows) - len(failed)} of {len(result.rows)} eps values; orders {result.orders}")
    return 0


def run_scan(config: RunConfig) -> int:
    spec = config.spec()
    lam = variant_lambda(spec, config.variant, config.lambda_bar, config.kappa)
    result = scan(spec, lam, config.scan_lower, config.scan_upper, config.scan_points, workers=config.workers)
    n = spec.n
    table = {f"x{i + 1}": result.points[:, i] for i in range(n)}
    table.update({f"Y{i + 1}": result.field[:, i] for i in range(n)})
    reports.write_csv(config.out_dir, "scan.csv", table)
    payload = {"axes": [a.tolist() for a in result.axes], "cells": result.cells, "lambda_bar": lam}
    status = 0
    if config.select is not None:
        if not 0 <= config.select < len(result.cells):
            raise ConfigError(f"select={config.select} but the scan found {len(result.cells)} cells", stage="main.run_scan")
        seed = result.cells[config.select]["seed"]
        payload["selected"] = config.select
        sol = _solve(config, seed)
        payload["solution"] = sol.to_dict()
        status = _certified(config, sol)
    reports.write_json(config.out_dir, "scan.json", reports.envelope(config, payload))
    print(f"✅ scan: {len(result.cells)} sign-change cells")
    return status


HANDLERS = {
    "profile": run_profile,
    "hp-spectrum": run_hp_spectrum,
    "find-point": run_find_point,
    "solve": run_solve,
    "verify": run_verify,
    "sweep": run_sweep,
    "scan": run_scan,
}


def run(config: RunConfig) -> int:
    """Dispatch one run; 0 success, 2 validation error, 3 solver failure."""
    try:
        return HANDLERS[config.mode](config)
    except ValidationError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code
    except (SolverError, ExpressionDomainError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code


def main(argv=None) -> int:
    load_dotenv()
    parser = argparse.ArgumentParser(
        prog="overdet", description="Construct and certify perturbed-ball overdetermined domains."
    )
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="INI run configuration")
    parser.add_argument("--out", default=None, help="output directory (default: config [output] dir, $OVERDET_OUT_DIR, out)")
    parser.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    args = parser.parse_args(argv)

    level = "WARNING" if args.quiet else os.getenv("OVERDET_LOG_LEVEL", "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "INFO"
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        config = load_config(args.config, mode=args.mode, out_dir=args.out)
    except ValidationError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code
    logger.info("run %s (config %s)", config.mode, config.content_hash()[:12])
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
