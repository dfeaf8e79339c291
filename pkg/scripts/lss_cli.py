"""
Command-line front end for the LSS CLT library.

Subcommands:
    solve     fixed-point solutions at a list of z
    density   deterministic-equivalent density and CDF on a grid
    clt       centering, Gamma and Lambda for the configured functions
    simulate  Monte Carlo calibration of the CLT
    table1    full-sib method-of-moments bias / 2SD report

Usage:
    python scripts/lss_cli.py clt --preset mp-small
    python scripts/lss_cli.py table1 --preset table1-desk --clt-summary outputs/clt_summary.json

Exit codes: 0 success, 1 config or I/O, 2 non-convergence, 3 numerical quality.
Worker threads: --threads, else $LSSCLT_NUM_THREADS, else all logical cores.
"""
import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd

# Add config to path (use absolute path based on script location)
script_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(script_dir)
config_path = os.path.join(project_root, 'config')
sys.path.insert(0, config_path)

from experiments import DEFAULTS, EXPERIMENTS
from lss_clt import (
    ConfigError,
    ConvergenceError,
    CltSummary,
    LssCltError,
    clt_summary,
    esd_cdf,
    esd_density,
    kernel_diagnostics,
    mc_experiment,
    moment_summary,
    solve_system,
    support_bound,
    table1_experiment
)
from lss_clt.contour import Contour
from lss_clt.fixed_point import solve_along_contour
from lss_clt.mom import MomentMap, TauParams
from lss_clt.model import random_full_sib_design
from lss_clt import reporting
from lss_clt.run_config import (
    build_model_from_config,
    clt_options_from_config,
    config_hash,
    functions_from_config,
    load_config_file,
    resolve_config,
    solver_options_from_config,
    write_resolved_config,
    z_points_from_config
)

def print_header(text):
    """Print a formatted header"""
    print("\n" + "=" * 70)
    print(f"  {text}")
    print("=" * 70)


def parse_z(text):
    try:
        re_part, im_part = text.split(",")
        return [float(re_part), float(im_part)]
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"expected RE,IM but got '{text}'") from error


def build_parser():
    parser = argparse.ArgumentParser(
        description='Linear spectral statistics of multi-level variance-component matrices.\n'
                    'Settings resolve as flag > --config file > --preset > defaults.',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(EXPERIMENTS), help="named experiment preset")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--output-dir", help="directory for all outputs")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--nodes", type=int, help="trapezoid nodes per contour")
    common.add_argument("--margin", type=float, help="absolute contour clearance")
    common.add_argument("--radius-ratio", type=float, help="paired contour radius ratio")
    common.add_argument("--mode", choices=["exact-leave-one-out", "shared-R"], help="covariance kernel mode")
    common.add_argument("--threads", type=int, help="worker threads (default $LSSCLT_NUM_THREADS)")
    common.add_argument("--verbose", action="store_true", help="debug logging from the library")

    solve = subparsers.add_parser("solve", parents=[common], help="fixed point at given z")
    solve.add_argument("--z", type=parse_z, action="append", help="evaluation point RE,IM (repeatable)")

    density = subparsers.add_parser("density", parents=[common], help="deterministic-equivalent density")
    density.add_argument("--points", type=int, help="grid size")
    density.add_argument("--eta", type=float, help="imaginary offset of the inversion")
    density.add_argument("--x-max", type=float, help="right end of the grid")

    clt = subparsers.add_parser("clt", parents=[common], help="centering, Gamma, Lambda")
    clt.add_argument("--dump-kernels", action="store_true", help="write per-node kernel diagnostics")

    for name, text in (("simulate", "Monte Carlo calibration"), ("table1", "method-of-moments report")):
        sub = subparsers.add_parser(name, parents=[common], help=text)
        sub.add_argument("--replicates", type=int, help="Monte Carlo replicates")
        sub.add_argument("--clt-summary", help="reuse a CLT summary JSON written by 'clt'")
        sub.add_argument("--histograms", action="store_true", help="write SVG histograms")
    return parser


def overrides_from_args(args):
    """Config fragment holding only the flags that were given."""
    overrides = {}
    contour = {key: value for key, value in (("nodes", args.nodes), ("margin", args.margin),
                                              ("radius_ratio", args.radius_ratio), ("mode", args.mode))
               if value is not None}
    if contour:
        overrides["contour"] = contour
    mc = {}
    if args.seed is not None:
        mc["master_seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        mc["replicates"] = args.replicates
    if getattr(args, "histograms", False):
        mc["histograms"] = True
    if mc:
        overrides["mc"] = mc
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if getattr(args, "z", None):
        overrides["solve"] = {"z": args.z}
    density = {key: value for key, value in (("points", getattr(args, "points", None)),
                                              ("eta", getattr(args, "eta", None)),
                                              ("x_max", getattr(args, "x_max", None)))
               if value is not None}
    if density:
        overrides["density"] = density
    return overrides


def resolve(args):
    preset = EXPERIMENTS[args.preset] if args.preset else None
    file_config = load_config_file(args.config) if args.config else None
    config = resolve_config(DEFAULTS, preset, file_config, overrides_from_args(args))
    if args.command == "table1" and getattr(args, "replicates", None) is not None and config.get("table1"):
        config["table1"]["replicates"] = args.replicates
    return config


def cmd_solve(config, args):
    model = build_model_from_config(config)
    opts = solver_options_from_config(config)
    rows = []
    previous = None
    for z in z_points_from_config(config):
        try:
            sol = solve_system(model, z, opts, initial=previous)
            previous = sol.g1
            rows.append((z, sol, None))
        except ConvergenceError as error:
            print(f"WARNING: no convergence at z={z}: {error}")
            rows.append((z, error.solution, str(error)))
        except ValueError as error:
            print(f"WARNING: {error}")
            rows.append((z, None, str(error)))
    frame = reporting.solutions_frame(model, rows)
    path = reporting.write_csv(frame, os.path.join(config["output_dir"], "solutions.csv"),
                               args.hash, config["mc"]["master_seed"])
    print(f"Saved: {path}")
    converged = int(frame["converged"].sum()) if len(frame) else 0
    print(f"{converged}/{len(frame)} points converged")
    return 0 if converged == len(frame) else 2


def cmd_density(config, args):
    model = build_model_from_config(config)
    section = config["density"]
    x_max = section.get("x_max") or support_bound(model)[1]
    x_grid = np.linspace(section.get("x_min", 0.0), x_max, int(section["points"]))
    opts = solver_options_from_config(config)
    density = esd_density(model, x_grid, section["eta"], opts)
    cdf = esd_cdf(model, x_grid, section["eta"], opts, density=density)
    frame = pd.DataFrame({"x": x_grid, "density": density, "cdf": cdf})
    seed = config["mc"]["master_seed"]
    print(f"Saved: {reporting.write_csv(frame, os.path.join(config['output_dir'], 'density.csv'), args.hash, seed)}")
    svg = reporting.plot_density(x_grid, density, os.path.join(config["output_dir"], "density.svg"),
                                 f"Deterministic-equivalent density (n={model.n}, N={model.N}, k={model.k})")
    print(f"Saved: {svg}")
    return 0


def _table1_parts(config):
    section = config["table1"]
    design = random_full_sib_design(section["F"], section["sibling_probs"], section["design_seed"])
    moment_map = MomentMap(design, int(section["p"]), float(section.get("index_scale", 1.0)),
                           section.get("moment_map", "exact"))
    return design, TauParams.from_array(section["tau"]), moment_map


def _compute_summary(config, args):
    opts = clt_options_from_config(config, args.threads)
    if config.get("model"):
        model = build_model_from_config(config)
        return model, clt_summary(model, functions_from_config(config), opts)
    if config.get("table1"):
        design, tau, moment_map = _table1_parts(config)
        return None, moment_summary(design, tau, moment_map, opts)
    raise ConfigError("missing field 'model' (or 'table1')")


def cmd_clt(config, args):
    model, summary = _compute_summary(config, args)
    seed = config["mc"]["master_seed"]
    path = reporting.write_json({"clt_summary": summary.to_dict()},
                                os.path.join(config["output_dir"], "clt_summary.json"), args.hash, seed)
    print(f"Saved: {path}")
    for label, centre, gamma, variance in zip(summary.labels, summary.centering, summary.gamma,
                                              np.diag(summary.lambda_)):
        print(f"  {label:<12} centering={centre:.6g}  Gamma={gamma:.6g}  Lambda_ii={variance:.6g}")

    if args.dump_kernels:
        if model is None:
            print("WARNING: --dump-kernels needs a 'model' section; skipped")
        else:
            opts = clt_options_from_config(config)
            contour = Contour.for_model(model, opts.margin, opts.relative_margin, opts.nodes)
            solutions = solve_along_contour(model, contour.nodes[contour.upper], opts.solver)
            frame = pd.DataFrame(kernel_diagnostics(model, solutions))
            print(f"Saved: {reporting.write_csv(frame, os.path.join(config['output_dir'], 'kernels.csv'), args.hash, seed)}")
    return 0


def _load_summary(path):
    data = reporting.read_json(path)
    if "clt_summary" not in data:
        raise ConfigError(f"{path}: no 'clt_summary' entry")
    print(f"Using CLT summary {path} (config hash {data.get('meta', {}).get('config_hash')})")
    return CltSummary.from_dict(data["clt_summary"])


def cmd_simulate(config, args):
    model = build_model_from_config(config)
    functions = functions_from_config(config)
    if args.clt_summary:
        summary = _load_summary(args.clt_summary)
    else:
        summary = clt_summary(model, functions, clt_options_from_config(config, args.threads))
    seed = config["mc"]["master_seed"]
    result = mc_experiment(model, functions, int(config["mc"]["replicates"]), seed, summary,
                           workers=args.threads, config_hash=args.hash)
    output_dir = config["output_dir"]
    print(f"Saved: {reporting.write_csv(reporting.replicate_frame(result), os.path.join(output_dir, 'replicates.csv'), args.hash, seed)}")
    print(f"Saved: {reporting.write_json({'mc_summary': result.summary, 'labels': list(result.labels)}, os.path.join(output_dir, 'mc_summary.json'), args.hash, seed)}")
    print(f"Saved: {reporting.write_replicate_cube(result.lss, result.labels, result.seeds, os.path.join(output_dir, 'replicates.nc'), args.hash, seed)}")
    if config["mc"].get("histograms") and result.replicates > 1:
        for path in reporting.plot_histograms(result.standardized, result.labels, output_dir, "standardized",
                                              reference=np.zeros(len(result.labels)), reference_label="0"):
            print(f"Saved: {path}")
    if result.replicates:
        print(f"Standardized mean: {np.round(result.summary['mean'], 4).tolist()}")
    return 0


def cmd_table1(config, args):
    if not config.get("table1"):
        raise ConfigError("missing field 'table1'")
    section = dict(config["table1"])
    section["clt_options"] = clt_options_from_config(config, args.threads)
    clt = _load_summary(args.clt_summary) if args.clt_summary else None
    seed = config["mc"]["master_seed"]
    report = table1_experiment(section, seed, workers=args.threads, clt=clt)
    print()
    print(reporting.format_table1(report))
    for path in reporting.write_table1(report, config["output_dir"], args.hash, seed,
                                       histograms=config["mc"].get("histograms", False)):
        print(f"Saved: {path}")
    return 0


HANDLERS = {
    "solve": cmd_solve,
    "density": cmd_density,
    "clt": cmd_clt,
    "simulate": cmd_simulate,
    "table1": cmd_table1,
}


def main(argv=None):
    """Parse arguments, run one subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(name)s: %(message)s")
    try:
        config = resolve(args)
        args.hash = config_hash(config)
        print_header(f"LSS CLT: {args.command.upper()} (config {args.hash})")
        write_resolved_config(config, config["output_dir"])
        code = HANDLERS[args.command](config, args)
    except LssCltError as error:
        print(f"ERROR: {type(error).__name__}: {error}")
        return error.exit_code
    except OSError as error:
        print(f"ERROR: {error}")
        return 1
    except (KeyError, TypeError, ValueError) as error:
        print(f"ERROR: invalid configuration: {type(error).__name__}: {error}")
        return 1
    if code == 0:
        print_header(f"{args.command.upper()} COMPLETED SUCCESSFULLY")
    return code


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted")
        sys.exit(1)
