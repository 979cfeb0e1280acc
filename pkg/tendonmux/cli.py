"""
Command-line interface for the hand simulator.
Handles argument parsing, logging setup and the four subcommands.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .codec import (
    CodecError,
    load_config,
    parse_demand,
    schedule_to_json,
    write_curves,
    write_events,
    write_telemetry_csv,
)
from .hand_model import ConfigError, HandConfig, default_config, validate_config
from .kinematics import KinematicRangeError, fit_joint_curves
from .scheduler import PlanningError, plan_interleaved, plan_sequential
from .script import ScriptError
from .sim_runtime import DEFAULT_SEED, MODES, DisturbanceError, run_script
from .tdmm import TdmmFault

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SIMULATION = 2


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        help="Hand configuration JSON (default: built-in configuration)"
    )
    common.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Log every state transition to stderr"
    )
    return common


def _planning_options() -> argparse.ArgumentParser:
    planning = argparse.ArgumentParser(add_help=False)
    planning.add_argument(
        "--mode",
        choices=MODES,
        default="sequential",
        help="Planner to use (default: sequential)"
    )
    planning.add_argument(
        "--chunk",
        type=float,
        help="Wheel degrees per interleaved piece (required with --mode interleaved)"
    )
    return planning


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with its subcommands."""
    parser = argparse.ArgumentParser(
        prog="tendonmux",
        description=(
            "Simulate a tendon-driven hand actuated through a multiplexed motor group"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Check a configuration file
  tendonmux validate --config data/default_config.json

  # Joint-vs-wheel curves and their linear fits
  tendonmux curves --out curves/

  # Plan a demand of nine wheel rotations
  tendonmux plan data/full_hand.demand
  tendonmux plan data/full_hand.demand --mode interleaved --chunk 5

  # Run a motion script, writing telemetry.csv and events.jsonl
  tendonmux run data/demo_grasp.script --out results/ --seed 7
        """
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"tendon-mux {__version__}"
    )
    common = _common_options()
    planning = _planning_options()
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser(
        "validate", parents=[common], help="Check a configuration and report violations"
    )

    curves = commands.add_parser(
        "curves", parents=[common], help="Write joint curves and print linear fits"
    )
    curves.add_argument("--out", type=Path, default=Path("."),
                        help="Output directory (default: current directory)")
    curves.add_argument("--samples", type=int, default=101,
                        help="Samples per curve (default: 101)")

    plan = commands.add_parser(
        "plan", parents=[common, planning], help="Plan a demand file into a schedule"
    )
    plan.add_argument("demand", type=Path, help="Demand file: nine wheel degrees")
    plan.add_argument("--out", type=Path, help="Schedule JSON file (default: stdout)")

    run = commands.add_parser(
        "run", parents=[common, planning], help="Execute a motion script"
    )
    run.add_argument("script", type=Path, help="Motion script")
    run.add_argument("--out", type=Path, default=Path("."),
                     help="Output directory (default: current directory)")
    run.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help="Seed of the alignment-error generator "
                          f"(default: {DEFAULT_SEED})")
    run.add_argument("--open-loop", action="store_true",
                     help="Skip the encoder-based correction after each phase")
    return parser


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse and cross-check command-line arguments."""
    parser = build_parser()
    args = parser.parse_args(argv)

    mode = getattr(args, "mode", None)
    if mode == "interleaved" and args.chunk is None:
        parser.error("--chunk is required with --mode interleaved")
    if mode == "sequential" and args.chunk is not None:
        parser.error("--chunk only applies to --mode interleaved")
    if args.command == "curves" and args.samples < 2:
        parser.error(f"--samples must be at least 2, got {args.samples}")

    for name in ("demand", "script"):
        path = getattr(args, name, None)
        if path is not None and not path.is_file():
            parser.error(f"{name} file not found: {path}")
    if args.config is not None and not args.config.is_file():
        parser.error(f"config file not found: {args.config}")
    return args


def setup_logging(verbose: bool) -> None:
    """Send log records to stderr; DEBUG with --verbose, WARNING otherwise."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


class SimulatorRunner:
    """Runs one subcommand and turns its outcome into an exit status."""

    def __init__(self, args: argparse.Namespace):
        self.args = args

    def load_config(self) -> HandConfig:
        if self.args.config is None:
            return validate_config(default_config())
        return load_config(self.args.config)

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        try:
            return handler()
        except ConfigError as e:
            for violation in e.violations:
                print(f"error: {violation}", file=sys.stderr)
            return EXIT_INPUT
        except (ScriptError, CodecError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_INPUT
        except (KinematicRangeError, TdmmFault, PlanningError, DisturbanceError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_SIMULATION

    def cmd_validate(self) -> int:
        config = self.load_config()
        print(f"configuration OK (k = {config.k:.4f}, "
              f"wheel alignment bound {config.wheel_alignment_bound:.4f} deg)")
        return EXIT_OK

    def cmd_curves(self) -> int:
        config = self.load_config()
        joints, roll = write_curves(self.args.out, config.geometry, self.args.samples)
        for name, fit in fit_joint_curves(config.geometry, self.args.samples).items():
            print(f"{name}: slope={fit.slope:.6f} intercept={fit.intercept:.6f} "
                  f"r2={fit.r_squared:.6f}")
        logger.info("wrote %s and %s", joints, roll)
        return EXIT_OK

    def cmd_plan(self) -> int:
        """Plan a demand file and print or write the schedule JSON."""
        config = self.load_config()
        demand = parse_demand(self.args.demand.read_text(encoding="utf-8"),
                              config.shaft_map.num_shafts)
        if self.args.mode == "interleaved":
            schedule = plan_interleaved(demand, config, self.args.chunk)
        else:
            schedule = plan_sequential(demand, config)
        text = schedule_to_json(schedule)
        if self.args.out is None:
            sys.stdout.write(text)
        else:
            self.args.out.write_text(text, encoding="utf-8")
            phases = len(schedule.phases)
            print(f"makespan: {schedule.makespan:.6f} s ({phases} phases)")
        return EXIT_OK

    def cmd_run(self) -> int:
        """Execute a motion script and write telemetry.csv and events.jsonl."""
        config = self.load_config()
        result = run_script(
            self.args.script.read_text(encoding="utf-8"),
            config,
            mode=self.args.mode,
            chunk=self.args.chunk,
            seed=self.args.seed,
            closed_loop=not self.args.open_loop,
        )
        out = self.args.out
        out.mkdir(parents=True, exist_ok=True)
        write_telemetry_csv(out / "telemetry.csv", result.telemetry,
                            config.shaft_map.num_shafts)
        write_events(out / "events.jsonl", result.events)

        state = result.final_state
        print(f"t = {state.clock:.6f} s, {len(result.events)} events, "
              f"{len(result.telemetry)} samples")
        for finger, angles in enumerate(state.joint_angles):
            th1, th2, th3, phi3 = angles
            print(f"f{finger}: th1={th1:.3f} th2={th2:.3f} th3={th3:.3f} "
                  f"phi3={phi3:.3f}")
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the exit status."""
    args = parse_arguments(argv)
    setup_logging(args.verbose)
    return SimulatorRunner(args).run()


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
