"""Command-line entry point.

Subcommands:
    solve    continuation sweep + bisection + upper-bound certificate;
             writes bounds.json, path.csv and path.dat
    sweep    continuation sweep only; writes the path files
    oracle   brute-force duality checks on tiny instances

Exit codes: 0 ok, 2 input error, 3 oracle/assertion failure,
4 solver non-convergence.  Numbers are printed with 12 significant digits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys

import numpy as np

from . import certificates, dual, fem, oracle, problem as problem_mod, regularize
from .errors import ConvergenceError, InfSupDegenerateError, ProblemFormatError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ORACLE = 3
EXIT_SOLVER = 4


def _fmt(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.12g}"


def _load_input(path):
    """Problem file (has 'blocks') or model file (has 'kind')."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"cannot parse {path}: {exc}") from exc
    if "blocks" in d:
        return problem_mod.problem_from_dict(d)
    if "kind" in d:
        import os
        model = fem.model_from_dict(d, base_dir=os.path.dirname(path) or ".")
        return fem.assemble_model(model)
    raise ProblemFormatError(
        f"{path}: neither a problem file (blocks) nor a model file (kind)")


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _schedule_from_args(prob, args):
    if args.steps is not None and args.steps < 1:
        raise ProblemFormatError("empty schedule: --steps must be at least 1")
    base = regularize.default_schedule(prob)
    return regularize.AlphaSchedule(
        alpha0=args.alpha0 if args.alpha0 is not None else base.alpha0,
        growth=args.growth if args.growth is not None else base.growth,
        count=args.steps if args.steps is not None else base.count)


def _write_path_files(records, out_dir):
    import os
    rows = regularize.records_to_rows(records)
    csv_path = os.path.join(out_dir, "path.csv")
    dat_path = os.path.join(out_dir, "path.dat")
    header = "alpha,psi,lambda_alpha,kkt_residual,iterations"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for a, p, l, k, it in rows:
            fh.write(f"{_fmt(a)},{_fmt(p)},{_fmt(l)},{_fmt(k)},{it}\n")
    with open(dat_path, "w", encoding="utf-8") as fh:
        fh.write("# " + header.replace(",", " ") + "\n")
        for a, p, l, k, it in rows:
            fh.write(f"{_fmt(a)} {_fmt(p)} {_fmt(l)} {_fmt(k)} {it}\n")
    return csv_path, dat_path


def _sweep_monotonicity(records, tol=1e-8):
    psis = [r.psi for r in records if r.converged]
    worst = 0.0
    for a, b in zip(psis, psis[1:]):
        worst = max(worst, a - b)
    return worst <= tol, worst


def cmd_solve(args):
    prob = _load_input(args.input)
    schedule = _schedule_from_args(prob, args)
    records = regularize.run_alpha_continuation(prob, schedule,
                                                parallel=args.parallel_sweep)
    if not any(r.converged for r in records):
        raise ConvergenceError("no continuation step converged")
    lower = regularize.best_lower_bound(records)

    bis = dual.bisect_zeta(prob, tol_lambda=args.tol_lambda,
                           tol_phi=args.tol_phi, full_output=True)

    null_info = dual.detect_null_blocks(prob)
    cert = None
    if args.continuum_cstar is not None:
        c_star, provenance = args.continuum_cstar, "user-supplied continuum"
    else:
        try:
            c_star, provenance = certificates.estimate_C_star_discrete(prob), "discrete"
            print("warning: using a discrete stability-constant estimate; "
                  "it does not bound the continuum constant "
                  "(pass --continuum-Cstar to override)", file=sys.stderr)
        except InfSupDegenerateError:
            c_star, provenance = 0.0, "none (no usable cone directions)"
    converged = [r for r in records if r.converged]
    y_cert = converged[-1].y_alpha
    cert = certificates.compute_majorant(prob, y_cert, c_star,
                                         provenance=provenance)
    upper = cert.bound if cert.admissible else math.inf

    report = dual.BoundsReport(lower=lower, upper=upper,
                               zeta_bisect=bis.zeta,
                               tol_lambda=args.tol_lambda,
                               tol_phi=args.tol_phi if args.tol_phi is not None
                               else 1e-8 * certificates.estimate_norm_L_dual(prob),
                               capped=bis.capped)

    mono_ok, mono_worst = _sweep_monotonicity(records)
    import os
    os.makedirs(args.out_dir, exist_ok=True)
    _write_path_files(records, args.out_dir)
    payload = {
        "input": {"path": args.input, "sha256": _file_sha256(args.input)},
        "report": report.to_dict(),
        "certificate": cert.to_dict(),
        "null_space": {"dead_blocks": null_info.dead_blocks,
                       "null_dim": null_info.null_dim},
        "sweep": {
            "alpha": [r.alpha for r in records],
            "psi": [r.psi for r in records],
            "lambda_alpha": [r.lambda_alpha for r in records],
            "kkt_residual": [r.kkt_residual for r in records],
            "iterations": [r.iterations for r in records],
            "converged": [r.converged for r in records],
            "psi_monotone": mono_ok,
            "worst_psi_decrease": mono_worst,
        },
    }
    bounds_path = os.path.join(args.out_dir, "bounds.json")
    with open(bounds_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"lower bound (best psi):    {_fmt(lower)}")
    print(f"bisection estimate:        {_fmt(bis.zeta)}"
          + ("  [" + bis.message + "]" if bis.capped else ""))
    print(f"upper bound (certificate): {_fmt(upper)}"
          + ("" if cert.admissible else "  [inadmissible]"))
    if null_info.null_dim:
        print(f"unreachable cone directions: {null_info.null_dim} "
              f"(dead blocks: {null_info.dead_blocks})")
    print(f"wrote {bounds_path}, path.csv, path.dat")
    return EXIT_OK


def cmd_sweep(args):
    prob = _load_input(args.input)
    schedule = _schedule_from_args(prob, args)
    records = regularize.run_alpha_continuation(prob, schedule,
                                                parallel=args.parallel_sweep)
    import os
    os.makedirs(args.out_dir, exist_ok=True)
    _write_path_files(records, args.out_dir)
    mono_ok, worst = _sweep_monotonicity(records)
    lam_mono = all(a.lambda_alpha <= b.lambda_alpha + 1e-8
                   for a, b in zip(records, records[1:]))
    for r in records:
        print(f"alpha={_fmt(r.alpha)} psi={_fmt(r.psi)} "
              f"lambda_alpha={_fmt(r.lambda_alpha)} "
              f"kkt={_fmt(r.kkt_residual)} iters={r.iterations}"
              + ("" if r.converged else " [not converged]"))
    print(f"best lower bound: {_fmt(regularize.best_lower_bound(records))}")
    if not mono_ok:
        print(f"warning: psi decreased by {_fmt(worst)} along the sweep",
              file=sys.stderr)
    if not lam_mono:
        print("note: multiplier diagnostic is not monotone", file=sys.stderr)
    if not all(r.converged for r in records):
        raise ConvergenceError("continuation steps failed to converge")
    return EXIT_OK


def cmd_oracle(args):
    prob = _load_input(args.input)
    if prob.n_y > oracle.DIM_Y_CAP or prob.n_x > oracle.DIM_X_CAP:
        print(f"oracle dimension cap: n_y <= {oracle.DIM_Y_CAP} and "
              f"n_x <= {oracle.DIM_X_CAP} required "
              f"(got n_y={prob.n_y}, n_x={prob.n_x})", file=sys.stderr)
        return EXIT_INPUT
    rep = oracle.verify_no_gap(prob)
    print(f"dual value (feasibility sweep): {_fmt(rep.lambda_star)}")
    print(f"primal value (grid search):     {_fmt(rep.zeta_star)}")
    print(f"gap: {_fmt(rep.gap)}  tolerance: {_fmt(rep.tolerance)}")
    print(f"hypothesis: {rep.hypothesis}")
    if not rep.ok:
        print("ORACLE DISAGREEMENT", file=sys.stderr)
        print(json.dumps({"lambda_star": rep.lambda_star,
                          "zeta_star": rep.zeta_star,
                          "gap": rep.gap, "detail": rep.detail},
                         indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_ORACLE

    # identity check: phi from constrained minimization vs the primal oracle
    zeta = rep.zeta_star
    top = 1.5 * zeta if math.isfinite(zeta) else 2.0
    ok = True
    for lam in np.linspace(0.0, top, 7):
        phi_o = oracle.brute_phi_primal(prob, float(lam))
        phi_s, _ = dual.minimize_Phi(prob, float(lam), tol=1e-11)
        if abs(phi_o - phi_s) > 1e-3 * max(1.0, phi_o):
            ok = False
            print(f"phi mismatch at lam={_fmt(lam)}: oracle {_fmt(phi_o)} "
                  f"vs solver {_fmt(phi_s)}", file=sys.stderr)
    if not ok:
        return EXIT_ORACLE
    print("oracle checks passed")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="limitload",
        description="Certified lower/upper bounds for critical load multipliers")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("input", help="problem file or model file (JSON)")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--alpha0", type=float, default=None)
        p.add_argument("--growth", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--parallel-sweep", action="store_true",
                       help="run schedule steps independently, no warm starts")

    ps = sub.add_parser("solve", help="bounds + certificate")
    common(ps)
    ps.add_argument("--tol-phi", type=float, default=None,
                    help="threshold on the residual value function")
    ps.add_argument("--tol-lambda", type=float, default=1e-6,
                    help="bisection bracket width")
    ps.add_argument("--continuum-Cstar", dest="continuum_cstar", type=float,
                    default=None,
                    help="continuum stability constant overriding the discrete estimate")
    ps.set_defaults(func=cmd_solve)

    pw = sub.add_parser("sweep", help="continuation sweep only")
    common(pw)
    pw.set_defaults(func=cmd_sweep)

    po = sub.add_parser("oracle", help="brute-force duality checks (tiny instances)")
    po.add_argument("input")
    po.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ProblemFormatError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
