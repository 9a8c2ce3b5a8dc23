"""Batch command line: certify, calibrate, verify, inspect.

Exit codes: 0 ok, 1 error, 2 infeasible configuration, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .bounds import calibrate_loss_cst
from .certificate import CERT_FORMAT_VERSION, Certificate, dumps
from .errors import ConfigError, KinboundError
from .geometry import calibrate_spreading_cst, default_sample_plan
from .grid import GridDistribution, load_grid
from .upheaval import calibrate_upheaval_cst

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
CALIB_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _out_path(args, cfg, key):
    name = cfg.outputs[key]
    if os.path.isabs(name):
        return name
    return os.path.join(args.out or cfg.base_dir, name)


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _regime(cfg, kernel):
    regime = cfg.regime or ("cutoff" if kernel.cutoff else "noncutoff")
    if regime == "cutoff" and not kernel.cutoff:
        raise ConfigError(f"config.regime: 'cutoff' needs nu < 0, kernel has nu = {kernel.nu}")
    if regime == "noncutoff" and kernel.cutoff:
        raise ConfigError(f"config.regime: 'noncutoff' needs nu >= 0, kernel has nu = {kernel.nu}")
    return regime


def build_certificate(cfg):
    """(certificate, trace csv text) for a parsed configuration."""
    from .cutoff import certify_cutoff
    from .noncutoff import certify_noncutoff
    kernel = cfgmod.build_kernel(cfg)
    bounds = cfgmod.build_bounds(cfg)
    csts = cfgmod.build_constants(cfg)
    if cfg.tau is None:
        raise ConfigError("config.tau: required field missing")
    if _regime(cfg, kernel) == "cutoff":
        cert, trace, _ = certify_cutoff(kernel, bounds, cfg.tau, cfgmod.build_cascade(cfg), csts,
                                        cfgmod.build_delta_rule(cfg))
    else:
        cert, trace, _ = certify_noncutoff(kernel, bounds, cfg.tau, cfgmod.build_schedule(cfg), csts)
    cert.provenance["config_seed"] = cfg.seed
    return cert, trace.to_csv()


def cmd_certify(args, cfg):
    cert, csv = build_certificate(cfg)
    cpath, tpath = _out_path(args, cfg, "certificate"), _out_path(args, cfg, "trace")
    _write(cpath, cert.to_json())
    _write(tpath, csv)
    if cert.kind == "maxwellian":
        _say(args, f"maxwellian certificate: log rho' = {cert.log_rho_prime:.6g}, theta' = {cert.theta_prime:.6g}")
    else:
        _say(args, f"stretched-exponential certificate: log C1 = {cert.log_C1:.6g}, C2 = {cert.C2:.6g}, "
                   f"K = {cert.K:.6g}")
    _say(args, f"wrote {cpath} and {tpath}")
    return EXIT_OK


def _plan(block, N, seed):
    plan = block.get("plan", "default")
    if plan == "default" or plan is None:
        d = block.get("plan_options") or {}
        return default_sample_plan(N, int(d.get("n_v", 4)), tuple(d.get("xis", (0.1, 0.25, 0.5, 0.75))),
                                   tuple(d.get("ratios", (1.0, 0.5))), seed)
    if not isinstance(plan, list):
        raise ConfigError("calibrate.plan: expected 'default' or a list of {r, R, xi, v}")
    out = []
    for i, p in enumerate(plan):
        try:
            v = tuple(float(x) for x in p["v"])
            if len(v) != N:
                raise ValueError
            out.append((float(p["r"]), float(p["R"]), float(p["xi"]), v))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"calibrate.plan[{i}]: expected r, R, xi and a {N}-vector v") from None
    return out


def cmd_calibrate(args, cfg):
    from .bounds import analytic_cst_s
    kernel = cfgmod.build_kernel(cfg)
    block = cfg.section("calibrate")
    which = block.get("constants", ["loss", "spreading", "upheaval"])
    unknown = set(which) - {"loss", "spreading", "upheaval"}
    if unknown:
        raise ConfigError(f"calibrate.constants: unknown entries {sorted(unknown)}")
    safety = float(block.get("safety", 1.5))
    base = cfgmod.build_constants(cfg)
    csts = base.to_dict()
    records = {}
    if "spreading" in which:
        plan = _plan(block, kernel.dimension, cfg.seed)
        c, rec = calibrate_spreading_cst(kernel, plan, int(block.get("samples", 20_000)), cfg.seed,
                                         block.get("exponent_mode", "sharp"), safety)
        csts["cst_spread"], records["spreading"] = c, rec
    if "loss" in which:
        c, rec = calibrate_loss_cst(kernel, int(block.get("loss_grid", 24)), float(block.get("loss_V_max", 6.0)),
                                    safety=safety)
        csts["cst_CL"], records["loss"] = c, rec
        csts["cst_S"] = c * analytic_cst_s(kernel)
    if "upheaval" in which:
        c, rec = calibrate_upheaval_cst(kernel, delta_rule=cfgmod.build_delta_rule(cfg),
                                        samples=int(block.get("upheaval_samples", 4000)),
                                        outer_samples=int(block.get("upheaval_outer_samples", 20_000)),
                                        seed=cfg.seed, safety=safety)
        if not c > 0:
            from .errors import DegenerateSample
            raise DegenerateSample("upheaval calibration found no positive ratio")
        csts["cst_up"], records["upheaval"] = c, rec
    csts["source"] = f"calibrate(seed={cfg.seed})"
    path = _out_path(args, cfg, "calibration")
    _write(path, dumps({"format_version": CALIB_FORMAT_VERSION, "seed": cfg.seed, "safety": safety,
                        "kernel": kernel.profile_name, "constants": csts, "records": records}))
    for k in ("cst_CL", "cst_spread", "cst_up", "cst_S"):
        _say(args, f"{k} = {csts[k]:.6g}")
    _say(args, f"wrote {path}")
    return EXIT_OK


def _vgrid(block, N):
    g = block.get("grid") or {}
    M, V = int(g.get("M", 64)), float(g.get("V_max", 8.0))
    ax = -V + (np.arange(M) + 0.5) * (2 * V / M)
    return np.stack(np.meshgrid(*([ax] * N), indexing="ij"), axis=-1)


def cmd_verify(args, cfg):
    from .verifier import (BKWState, bkw_evaluate, bkw_solution, check_domination, grid_solution,
                           normalized_maxwell_kernel, relative_sup_error, solve_homogeneous)
    block = cfg.section("verify")
    cpath = block.get("certificate")
    if cpath:
        cert = Certificate.load(cfg.path(cpath))
    else:
        cert, _ = build_certificate(cfg)
    factor = float(block.get("inflate", 1.0))
    if factor != 1.0:
        cert = cert.inflated(factor)
    times = [float(t) for t in block.get("times", [cert.tau])]
    tol = float(block.get("tolerance", 0.0))
    source = block.get("source", "bkw")
    bk = block.get("bkw") or {}
    state = BKWState(int(bk.get("dimension", cert.dimension)), float(bk.get("S0", 0.72)),
                     float(bk.get("rate", 1.0)))
    extra = {}
    if source == "bkw":
        vgrid = _vgrid(block, cert.dimension)
        report = check_domination(cert, bkw_solution(state), times, vgrid, tol)
    elif source == "solver":
        s = block.get("solver") or {}
        init = s.get("initial")
        if init:
            f0 = load_grid(cfg.path(init))
            kernel = cfgmod.build_kernel(cfg)
        else:
            M, V = int(s.get("M", 32)), float(s.get("V_max", 8.0))
            f0 = GridDistribution.from_function(lambda v: bkw_evaluate(state, 0.0, v), state.dimension, M, V)
            kernel = normalized_maxwell_kernel(state.dimension)
        dt = float(s.get("dt", 0.05))
        t_end = max(times)
        res = solve_homogeneous(kernel, f0, t_end, dt, int(s.get("samples", 20_000)), cfg.seed)
        snap_t = [min(res.times, key=lambda x: abs(x - t)) for t in times]
        report = check_domination(cert, grid_solution(res), snap_t, f0.velocities(), tol)
        extra["solver"] = res.report()
        if not init:
            extra["solver"]["relative_sup_error_vs_exact"] = relative_sup_error(
                res.snapshots[-1], lambda v: bkw_evaluate(state, res.times[-1], v))
    else:
        raise ConfigError(f"verify.source: expected 'bkw' or 'solver', got {source!r}")
    out = {"format_version": REPORT_FORMAT_VERSION, "seed": cfg.seed, "source": source,
           "certificate_kind": cert.kind, "inflate": factor, "times": times, **report, **extra}
    path = _out_path(args, cfg, "report")
    _write(path, dumps(out))
    verdict = "PASS" if report["pass"] else "FAIL"
    _say(args, f"domination {verdict}: min margin {report['min_margin']:.6g} at t = {report['argmin_t']}, "
               f"min log ratio {report['min_log_ratio']:.6g}")
    _say(args, f"wrote {path}")
    return EXIT_OK if report["pass"] else EXIT_VERIFY


def describe(cert: Certificate):
    lines = [f"kind        {cert.kind}", f"dimension   {cert.dimension}", f"tau         {cert.tau:.6g}",
             f"R0          {cert.R0:.6g}"]
    if cert.kind == "maxwellian":
        lines += [f"log rho'    {cert.log_rho_prime:.10g}", f"theta'      {cert.theta_prime:.10g}",
                  "bound       f(t, x, v) >= rho' (2 pi theta')^(-N/2) exp(-|v|^2 / (2 theta'))"]
    else:
        lines += [f"log C1      {cert.log_C1:.10g}", f"C2          {cert.C2:.10g}", f"K           {cert.K:.10g}",
                  "bound       f(t, x, v) >= C1 exp(-C2 |v|^K)"]
    lines.append(f"log f_cert(0) = {cert.log_height():.10g}")
    prov = cert.provenance
    for key in ("constants", "bounds", "xi", "n_max", "valid_for"):
        if key in prov:
            lines.append(f"{key:<11} {json.dumps(prov[key], sort_keys=True)}")
    return "\n".join(lines)


def cmd_inspect(args, cfg):
    path = args.certificate
    if path is None:
        if cfg is None:
            raise ConfigError("inspect needs a certificate path or --config")
        path = _out_path(args, cfg, "certificate")
    cert = Certificate.load(path)
    print(describe(cert))
    if not args.quiet:
        print(f"format_version {CERT_FORMAT_VERSION}, provenance keys: {', '.join(sorted(cert.provenance))}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (default: the config's directory)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    p = argparse.ArgumentParser(prog="kinbound", description="Certified lower bounds for Boltzmann solutions.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", parents=[common], help="build a lower-bound certificate")
    sub.add_parser("calibrate", parents=[common], help="calibrate numeric constants")
    sub.add_parser("verify", parents=[common], help="check a certificate against a solution")
    ins = sub.add_parser("inspect", parents=[common], help="pretty-print a certificate")
    ins.add_argument("certificate", nargs="?", help="certificate JSON")
    return p


COMMANDS = {"certify": cmd_certify, "calibrate": cmd_calibrate, "verify": cmd_verify, "inspect": cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = None
        if args.config:
            cfg = cfgmod.load_config(args.config, args.seed)
        elif args.command != "inspect":
            raise ConfigError(f"{args.command} needs --config")
        return COMMANDS[args.command](args, cfg)
    except KinboundError as exc:
        print(f"kinbound: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"kinbound: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
