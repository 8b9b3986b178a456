"""
Command-line entry point for the travel demand pipeline.

    python app.py pipeline --config config/pipeline_config.yaml --out artifacts
    python app.py simulate --iters 5 --set simulation.reroute_fraction=0.2
"""

import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from agents.master_agent import STAGES, MasterAgent, collect_artifacts, get_master_agent
from utils.config import DEFAULT_CONFIG_PATH, PipelineConfig, SeedsConfig, load_config, parse_override
from utils.errors import TravelDemandError
from utils.logging_setup import setup_logging

logger = logging.getLogger("travelgen")

# =========================
# SUBCOMMANDS
# =========================
COMMAND_STAGES = {
    "gen-corpus": ["corpus"],
    "synth-pop": ["population"],
    "train": ["seed_chain", "train"],
    "generate": ["generate"],
    "events": ["events"],
    "assign": ["assign"],
    "simulate": ["simulate"],
    "validate": ["validate"],
    "pipeline": STAGES,
}

COMMAND_HELP = {
    "gen-corpus": "Generate (or import) the training corpus",
    "synth-pop": "Synthesize the population from marginals and a seed sample",
    "train": "Fit the seed chain model and train DeepCAM",
    "generate": "Generate household schedules",
    "events": "Build the coordination event table",
    "assign": "Assign locations to every activity",
    "simulate": "Route and simulate the day on the road network",
    "validate": "Compare generated artifacts against a reference",
    "pipeline": "Run every stage in order, resuming completed ones",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="travelgen", description="Generative activity-based travel demand pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Pipeline YAML (default: $TRAVELGEN_CONFIG or config/pipeline_config.yaml)")
    common.add_argument("--out", default=None, help="Artifact directory (overrides paths.output_dir)")
    common.add_argument("--rng-seed", type=int, default=None, help="Derive every stage seed from one base seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key, e.g. --set training.epochs=5")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    for command, help_text in COMMAND_HELP.items():
        cmd = sub.add_parser(command, parents=[common], help=help_text)
        if command == "simulate":
            cmd.add_argument("--iters", type=int, default=None, help="Assignment iterations")
        if command == "validate":
            cmd.add_argument("--generated", default=None, help="Directory with generated artifacts")
            cmd.add_argument("--reference", default=None, help="Directory with reference artifacts")
        if command == "pipeline":
            cmd.add_argument("--no-resume", action="store_true", help="Rerun stages that are already complete")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config overrides from the CLI flags"""
    overrides: Dict[str, Any] = {}
    if args.rng_seed is not None:
        for name, value in SeedsConfig.from_base(args.rng_seed).model_dump().items():
            overrides[f"seeds.{name}"] = value
    if args.out:
        overrides["paths.output_dir"] = args.out
    if getattr(args, "iters", None) is not None:
        overrides["simulation.iterations"] = args.iters
    if getattr(args, "reference", None):
        overrides["paths.reference_dir"] = args.reference
    for item in args.overrides:
        key, value = parse_override(item)
        overrides[key] = value
    return overrides


def configure(args: argparse.Namespace) -> PipelineConfig:
    config_path = args.config or os.getenv("TRAVELGEN_CONFIG", DEFAULT_CONFIG_PATH)
    config = load_config(config_path, collect_overrides(args))
    logging_config = config.logging
    env_level = os.getenv("TRAVELGEN_LOG_LEVEL")
    if env_level:
        logging_config = logging_config.model_copy(update={"level": env_level})
    setup_logging(logging_config, args.verbose)
    logger.info(f"📄 Config loaded from {config_path} (hash {config.config_hash()[:12]})")
    return config


def run_validate(master: MasterAgent, generated_dir: str) -> None:
    """Validate an arbitrary generated directory instead of the run's own stages"""
    master.config.check_inputs_exist()
    generated = collect_artifacts(generated_dir, master.catalog)
    reference_dir = master.config.paths.reference_dir or master.workflow.stage_dir("corpus")
    reference = collect_artifacts(reference_dir, master.catalog)
    report = master.validation_agent.validate(generated, reference)
    directory = master.workflow.stage_dir("validate")
    os.makedirs(directory, exist_ok=True)
    master.validation_agent.write_report(report, directory)
    logger.info(f"✅ Validation report written to {directory}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        config = configure(args)
        master = get_master_agent(config, config.paths.output_dir)
        if args.command == "validate" and args.generated:
            run_validate(master, args.generated)
        else:
            resume = args.command == "pipeline" and not args.no_resume
            asyncio.run(master.run_pipeline(COMMAND_STAGES[args.command], resume=resume))
    except TravelDemandError as exc:
        logging.getLogger("travelgen").error(f"❌ {exc.message}")
        return exc.exit_code
    except KeyboardInterrupt:
        print("\n\nRun stopped by user.")
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
