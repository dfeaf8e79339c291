"""
Method-of-moments study runner.

Runs lss_cli.py twice for one preset: the clt stage writes the joint summary of
(Tr B_p, Tr B_p^2, Tr D_p), and the table1 stage simulates replicates and
builds the bias / 2SD report on top of that summary.

Usage:
    python scripts/run_pipeline.py [preset] [--output-dir DIR] [--threads N] [--resume] [--dry-run]

Defaults: preset table1-desk, output directory outputs/<preset>.
--resume skips the clt stage when its summary is already on disk.
"""

import argparse
import os
import subprocess
import sys
import time
from dataclasses import dataclass

script_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(script_dir)
CLI_PATH = os.path.join(script_dir, "lss_cli.py")
SUMMARY_FILE = "clt_summary.json"


@dataclass(frozen=True)
class Stage:
    name: str
    args: tuple
    produces: str = None

    def command(self):
        return [sys.executable, CLI_PATH, *self.args]


def study_stages(preset, output_dir, threads=None):
    """clt then table1; table1 reads the summary the clt stage produced."""
    summary_path = os.path.join(output_dir, SUMMARY_FILE)
    shared = ["--preset", preset, "--output-dir", output_dir]
    if threads:
        shared += ["--threads", str(threads)]
    return [
        Stage("clt", ("clt", *shared), produces=summary_path),
        Stage("table1", ("table1", *shared, "--clt-summary", summary_path)),
    ]


def pending_stages(stages, resume):
    if not resume:
        return list(stages)
    return [stage for stage in stages if not (stage.produces and os.path.isfile(stage.produces))]


def parse_args(argv):
    parser = argparse.ArgumentParser(description="Run the clt and table1 stages for one preset.")
    parser.add_argument("preset", nargs="?", default="table1-desk")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--resume", action="store_true", help="skip stages whose output already exists")
    parser.add_argument("--dry-run", action="store_true", help="print the commands without running them")
    args = parser.parse_args(argv)
    if args.output_dir is None:
        args.output_dir = os.path.join("outputs", args.preset)
    return args


def main(argv=None):
    """Returns 0, or the exit code of the first failing stage."""
    args = parse_args(sys.argv[1:] if argv is None else argv)
    stages = study_stages(args.preset, args.output_dir, args.threads)
    todo = pending_stages(stages, args.resume)

    print(f"preset {args.preset} -> {args.output_dir}")
    for stage in stages:
        state = "run" if stage in todo else "skip (output present)"
        print(f"  {stage.name:<8} {state}")
    if args.dry_run:
        for stage in todo:
            print(" ".join(stage.command()))
        return 0

    timings = []
    for stage in todo:
        print("-" * 70)
        print(f"[{stage.name}] {' '.join(stage.args)}")
        start = time.perf_counter()
        code = subprocess.run(stage.command(), cwd=project_root).returncode
        elapsed = time.perf_counter() - start
        timings.append((stage.name, elapsed, code))
        if code != 0:
            print(f"ERROR: stage {stage.name} exited with code {code} after {elapsed:.1f} s")
            return code

    print("-" * 70)
    for name, elapsed, _ in timings:
        print(f"  {name:<8} {elapsed:8.1f} s")
    print(f"report: {os.path.join(args.output_dir, 'table1.csv')}")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\ninterrupted")
        sys.exit(1)
