"""Command line entry point: `renorm-lab <subcommand> ...`.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings

import numpy as np

from . import acceptance, finitevol, graphcalc, kernels, opalgebra, probtools
from .errors import CheckFailure, ConfigError, NumericalFailure, TruncationWarning
from .reports import RunConfig, dumps, kernel_csv, write_atomic, write_report

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def thread_count() -> int:
    """Worker cap from RENORM_LAB_THREADS (default 1)."""
    raw = os.environ.get("RENORM_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"RENORM_LAB_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("RENORM_LAB_THREADS must be >= 1")
    return n


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="renorm-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("constants", help="sigma, rho, eta of a lattice kernel")
    c.add_argument("--d", type=int, default=5)
    c.add_argument("--geometry", choices=("free", "torus"), default="free")
    c.add_argument("--L", type=int, default=32)
    c.add_argument("--mass", type=float, default=None,
                   help="torus mass (default 1e-3); the free kernel is massless unless given")
    c.add_argument("--R", type=int, default=12, help="box radius of the free kernel")
    c.add_argument("--project-zero-mode", action="store_true")
    c.add_argument("--out")

    k = sub.add_parser("kernel", help="kernel values on canonical offsets")
    k.add_argument("--d", type=int, default=5)
    k.add_argument("--geometry", choices=("free", "torus"), default="free")
    k.add_argument("--R", type=int, default=8)
    k.add_argument("--L", type=int, default=16)
    k.add_argument("--mass", type=float, default=0.0)
    k.add_argument("--format", choices=("csv", "json"), default="csv")
    k.add_argument("--out")

    g = sub.add_parser("graphs", help="coefficient tables of characteristic graphs")
    g.add_argument("--order", type=int, choices=(6, 7), required=True)
    g.add_argument("--emit")

    o = sub.add_parser("verify-offsets", help="exact offset bookkeeping")
    o.add_argument("--eta-shift", type=int, default=0)
    o.add_argument("--no-control", action="store_true")
    o.add_argument("--report")

    v = sub.add_parser("verify", help="identity suites on small tori")
    v.add_argument("--suite", choices=("identities", "lemmas"), default="identities")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--sites", type=int, default=8)
    v.add_argument("--mass", type=float, default=1.0)
    v.add_argument("--kappa", type=float, default=0.5)
    v.add_argument("--alpha", type=float, default=0.3)
    v.add_argument("--constants", choices=("canonical", "perturbed"), default="canonical")
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--report")

    pr = sub.add_parser("probability", help="Bonami and Khintchine checks")
    pr.add_argument("--suite", choices=("bonami", "khintchine", "witness"), default="bonami")
    pr.add_argument("--trials", type=int, default=200)
    pr.add_argument("--m", type=int, default=12)
    pr.add_argument("--smax", type=int, default=3)
    pr.add_argument("--s", type=int, default=2)
    pr.add_argument("--p", type=float, default=2.0)
    pr.add_argument("--sites", type=int, default=10)
    pr.add_argument("--seed", type=int, required=True)
    pr.add_argument("--report")

    s = sub.add_parser("simulate", help="Green's function decay survey")
    s.add_argument("--d", type=int, default=5)
    s.add_argument("--L", type=int, default=11)
    s.add_argument("--kappa", type=float, default=0.05)
    s.add_argument("--alpha", type=float, default=0.3)
    s.add_argument("--seed", type=_int_list, required=True, help="one seed or a comma list")
    s.add_argument("--stage", choices=finitevol.STAGES, default="v6")
    s.add_argument("--boundary", choices=finitevol.BOUNDARIES, default="dirichlet")
    s.add_argument("--mass", type=float, default=0.0)
    s.add_argument("--window", type=_int_list, default=[1, 4])
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out")

    e = sub.add_parser("extstate", help="extended-state kappa sweep")
    e.add_argument("--d", type=int, default=5)
    e.add_argument("--L", type=int, default=9)
    e.add_argument("--kappa-sweep", type=_float_list, default=[0.01, 0.04, 0.16])
    e.add_argument("--alpha", type=float, default=0.3)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--limit", type=float, default=4.0)
    e.add_argument("--out")

    a = sub.add_parser("verify-all", help="the full acceptance battery")
    a.add_argument("--quick", action="store_true")
    a.add_argument("--only", type=_int_list)
    a.add_argument("--report")
    return p


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(path, config, result, passed):
    if path:
        config.outputs["report"] = path
        write_report(path, config, result, passed)
    else:
        sys.stdout.write(dumps({"config": config.to_dict(), "pass": passed, "result": result}))


# ---------------------------------------------------------------------------
# subcommands


def cmd_constants(args, cfg):
    if args.geometry == "free" and not args.mass:
        c = finitevol.lattice_constants(args.d, args.R)
    elif args.geometry == "free":
        c = kernels.renorm_constants(kernels.free_green(args.d, args.mass, args.R))
    else:
        mass = 1e-3 if args.mass is None else args.mass
        c = kernels.renorm_constants(
            kernels.torus_green(args.d, args.L, mass, args.project_zero_mode))
    out = {"d": args.d, "sigma": c.sigma, "rho": c.rho, "eta": c.eta,
           "residual_M0": c.residual_M0, "residual_N0": c.residual_N0,
           "eta_error": c.eta_error, "rho_tail": c.rho_tail, "source": c.source}
    _emit(args.out, cfg, out, True)
    _say(f"sigma={c.sigma:.12g} rho={c.rho:.12g} eta={c.eta:.12g}")
    return EXIT_OK


def cmd_kernel(args, cfg):
    if args.geometry == "free":
        ker = kernels.free_green(args.d, args.mass, args.R)
        offs, vals = ker.offsets, ker.table
    else:
        if args.mass <= 0:
            raise ConfigError("the torus kernel needs --mass > 0")
        ker = kernels.torus_green(args.d, args.L, args.mass)
        offs = kernels.canonical_offsets(args.d, args.L // 2)
        vals = np.asarray(ker(offs))
    if args.format == "csv":
        text = kernel_csv(offs, vals)
        if args.out:
            write_atomic(args.out, text)
        else:
            sys.stdout.write(text)
    else:
        _emit(args.out, cfg, {"offsets": offs, "values": vals}, True)
    _say(f"{len(vals)} canonical offsets written")
    return EXIT_OK


def cmd_graphs(args, cfg):
    rep = graphcalc.coefficient_tables(args.order)
    rows = [{"class": r.cls, "coefficient": str(r.coefficient),
             "paper": None if r.reference is None else str(r.reference), "match": r.match}
            for r in rep.rows]
    _emit(args.emit, cfg, {"order": args.order, "rows": rows,
                           "factorization_ok": rep.factorization_ok}, rep.ok)
    _say(f"order {args.order}: {len(rows)} rows, {len(rep.mismatches)} mismatches")
    return EXIT_OK if rep.ok else EXIT_CHECK


def cmd_verify_offsets(args, cfg):
    rep = graphcalc.verify_offsets(eta_shift=args.eta_shift, strict=False,
                                   control=not args.no_control)
    passed = rep.ok and (args.no_control or rep.negative_control_failed is True)
    _emit(args.report, cfg, rep.to_dict(), passed)
    _say(f"offsets: {'zero residual' if rep.ok else 'NONZERO residual'}; "
         f"negative control failed as expected: {rep.negative_control_failed}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_verify(args, cfg):
    if args.suite == "lemmas":
        reps = {"pair": kernels.summation_lemma_check("pair", a=3.0, b=4.0),
                "chain": kernels.summation_lemma_check("chain", a=3.0, b=3.0, eps=2.5),
                "difference": kernels.summation_lemma_check("difference")}
        passed = all(r.passed for r in reps.values())
        _emit(args.report, cfg, {k: r.to_dict() for k, r in reps.items()}, passed)
        _say(f"summation lemmas: {'pass' if passed else 'FAIL'}")
        return EXIT_OK if passed else EXIT_CHECK
    inst = opalgebra.make_instance(args.sites, 1, args.mass, args.kappa, args.alpha, args.seed)
    if args.constants == "perturbed":
        inst = opalgebra.perturbed_instance(inst)
    rows = opalgebra.identity_suite(inst, args.tol)
    passed = all(r["pass"] is not False for r in rows)
    _emit(args.report, cfg, {"instance": inst.config(), "rows": rows}, passed)
    bad = [r["check"] for r in rows if r["pass"] is False]
    _say(f"identities: {len(rows)} rows, {len(bad)} failing {bad[:5]}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_probability(args, cfg):
    if args.suite == "bonami":
        res = probtools.bonami_survey(args.trials, args.m, args.smax, args.seed)
        passed = res["max_ratio"] <= 1.0 + 1e-12
        _say(f"bonami: max ratio {res['max_ratio']:.6f} over {args.trials} polynomials")
    elif args.suite == "khintchine":
        res = probtools.khintchine_survey(args.trials, args.sites, args.s, args.p, args.seed)
        res["bound"] = probtools.moment_bound_constant(args.p, args.s)
        passed = True  # the constant is recorded, not asserted
        _say(f"khintchine s={args.s}: recorded constant {res['max_ratio']:.6f}")
    else:
        wit = probtools.cancelled_witness(args.sites)
        un = probtools.khintchine_check(wit, args.p, admissible_only=False)
        ad = probtools.khintchine_check(wit, args.p, admissible_only=True)
        res = {"unrestricted": un.to_dict(), "admissible": ad.to_dict()}
        passed = un.lhs > un.rhs
        _say(f"witness: unrestricted ratio {un.ratio:.6f}, admissible {ad.ratio:.6f}")
    _emit(args.report, cfg, res, passed)
    return EXIT_OK if passed else EXIT_CHECK


def cmd_simulate(args, cfg):
    if len(args.window) != 2:
        raise ConfigError("--window takes two radii")
    survey = finitevol.decay_survey(args.d, args.L, args.kappa, args.alpha, seeds=args.seed,
                                    window=tuple(args.window), stage=args.stage,
                                    boundary=args.boundary, mass=args.mass, tol=args.tol)
    geometry = {"d": args.d, "L": args.L, "boundary": args.boundary, "mass": args.mass}
    _emit(args.out, cfg, {"geometry": geometry, **survey.to_dict()}, survey.passed)
    _say(f"decay: {survey.fraction:.0%} of {len(survey.fits)} fits <= {survey.threshold}")
    return EXIT_OK if survey.passed else EXIT_CHECK


def cmd_extstate(args, cfg):
    sweep = finitevol.extstate_sweep(tuple(args.kappa_sweep), args.d, args.L, args.alpha,
                                     args.seed, args.limit)
    _emit(args.out, cfg, sweep.to_dict(), sweep.passed)
    _say(f"extended state: deviation/sqrt(kappa) spread {sweep.spread:.4f} "
         f"(limit {sweep.limit})")
    return EXIT_OK if sweep.passed else EXIT_CHECK


def cmd_verify_all(args, cfg):
    results = acceptance.run_all(quick=args.quick, only=set(args.only or []) or None, echo=_say)
    summ = acceptance.summary(results)
    _emit(args.report, cfg, summ, summ["all_passed"])
    _say(f"{summ['passed']}/{summ['total']} criteria passed")
    return EXIT_OK if summ["all_passed"] else EXIT_CHECK


COMMANDS = {
    "constants": cmd_constants, "kernel": cmd_kernel, "graphs": cmd_graphs,
    "verify-offsets": cmd_verify_offsets, "verify": cmd_verify,
    "probability": cmd_probability, "simulate": cmd_simulate,
    "extstate": cmd_extstate, "verify-all": cmd_verify_all,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = thread_count()
    except ConfigError as exc:
        _say(f"configuration error: {exc}")
        return EXIT_CONFIG
    params = {k: v for k, v in vars(args).items() if k != "command"}
    params["threads"] = threads
    cfg = RunConfig(args.command, params)
    t0 = time.perf_counter()
    try:
        import scipy.fft

        with scipy.fft.set_workers(threads), warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            code = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _say(f"configuration error: {exc}")
        return EXIT_CONFIG
    except CheckFailure as exc:
        _say(f"check failed: {exc}")
        return EXIT_CHECK
    except NumericalFailure as exc:
        _say(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    _say(f"{args.command} finished in {time.perf_counter() - t0:.1f}s (exit {code})")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
