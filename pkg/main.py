import argparse
import logging
import sys
from typing import List, Optional

from batch_processor import EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, run_experiment, validate
from config_manager import PRESETS, ConfigError, ConfigManager, ExperimentConfig, apply_environment, check_config
from network import GRAPH_KINDS
from problem import SET_KINDS
from quantizer import QUANTIZER_KINDS


def parse_seeds(value: str) -> List[int]:
    """'5' means seeds 0..4; '1,4,9' is an explicit list."""
    try:
        if ',' in value:
            return [int(part) for part in value.split(',') if part.strip()]
        count = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be a count or a comma-separated list, got {value!r}")
    if count < 1:
        raise argparse.ArgumentTypeError(f"seed count must be at least 1, got {count}")
    return list(range(count))


def parse_cap(value: str) -> Optional[int]:
    if value.lower() == 'none':
        return None
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Quantized distributed online projection-free optimization experiments.")
    parser.add_argument("--config", type=str, help="JSON configuration file (flags override it).")
    parser.add_argument("--preset", choices=PRESETS, help="Experiment preset.")
    parser.add_argument("--n", type=int, help="Number of agents.")
    parser.add_argument("--d", type=int, help="Decision dimension.")
    parser.add_argument("--T", type=int, help="Horizon.")
    parser.add_argument("--rho", type=float, help="Regularization weight.")
    parser.add_argument("--radius", type=float, help="Radius of the constraint set.")
    parser.add_argument("--set-kind", choices=sorted(SET_KINDS), help="Constraint set.")
    parser.add_argument("--static", action="store_true", default=None, help="Use a time-invariant stream.")
    parser.add_argument("--alpha", type=float, help="Fixed step size.")
    parser.add_argument("--gamma", type=float, help="Step-size exponent: alpha = kappa2 / T^gamma.")
    parser.add_argument("--kappa2", type=float, help="Step-size scale: alpha = kappa2 / T^gamma.")
    parser.add_argument("--quantizer", choices=QUANTIZER_KINDS, help="Quantizer for states and gradients.")
    parser.add_argument("--level-exp", type=float, help="Level schedule k_t = ceil(t^p).")
    parser.add_argument("--level-cap", type=parse_cap, default=argparse.SUPPRESS,
                        help="Cap B on k_t ('none' for no cap).")
    parser.add_argument("--resolution-kappa1", type=float, help="Resolution schedule eps_t = kappa1 / t^xi.")
    parser.add_argument("--resolution-xi", type=float, help="Resolution schedule eps_t = kappa1 / t^xi.")
    parser.add_argument("--graph", choices=GRAPH_KINDS, help="Graph sequence kind.")
    parser.add_argument("--window-Q", type=int, help="Joint connectivity window Q.")
    parser.add_argument("--seeds", type=parse_seeds, help="Seed count or comma-separated seed list.")
    parser.add_argument("--out", type=str, help="Output directory.")
    parser.add_argument("--workers", type=int, help="Worker processes for the job pool.")
    parser.add_argument("--validate-only", action="store_true", help="Check assumptions and exit.")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging.")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults < config file < environment < command-line flags."""
    config = ConfigManager(args.config).get_config() if args.config else ExperimentConfig()
    config = apply_environment(config)

    if args.preset is not None:
        config.preset = args.preset
    for flag, section, key in (("n", "problem", "n"), ("d", "problem", "d"), ("T", "problem", "T"),
                               ("rho", "problem", "rho"), ("radius", "problem", "radius"),
                               ("set_kind", "problem", "set_kind"), ("static", "problem", "static"),
                               ("quantizer", "quantizer", "kind"), ("level_exp", "quantizer", "level_exp"),
                               ("resolution_kappa1", "quantizer", "resolution_kappa1"),
                               ("resolution_xi", "quantizer", "resolution_xi"),
                               ("graph", "network", "graph"), ("window_Q", "network", "window_Q"),
                               ("seeds", "runner", "seeds"), ("out", "runner", "output_dir"),
                               ("workers", "runner", "workers")):
        value = getattr(args, flag)
        if value is not None:
            setattr(getattr(config, section), key, value)

    if hasattr(args, 'level_cap'):
        config.quantizer.level_cap = args.level_cap
    if args.level_exp is not None:
        config.quantizer.schedule = "power"
    if args.resolution_kappa1 is not None or args.resolution_xi is not None:
        config.quantizer.schedule = "resolution"
    if args.alpha is not None:
        config.step.alpha = args.alpha
    elif args.kappa2 is not None or args.gamma is not None:
        config.step.alpha = None
        if args.kappa2 is not None:
            config.step.kappa2 = args.kappa2
        if args.gamma is not None:
            config.step.gamma = args.gamma
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=log_level, format='%(asctime)s - %(levelname)s - %(message)s')
    logger = logging.getLogger(__name__)

    try:
        config = config_from_args(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.validate_only:
        findings = validate(config)
        print(f"\n=== ASSUMPTION CHECKS ===")
        for finding in findings:
            status = "ok" if finding.ok else "VIOLATION"
            detail = f" ({finding.message})" if finding.message else ""
            print(f"  {finding.name}: {status}{detail}")
        if all(f.ok for f in findings):
            return EXIT_OK
        if any(not f.ok and f.name == "problem validity" for f in findings):
            return EXIT_CONFIG
        return EXIT_ASSUMPTION

    try:
        check_config(config)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    logger.info(f"Running preset {config.preset} into {config.runner.output_dir}")
    try:
        result = run_experiment(config)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Experiment failed: {e}")
        return EXIT_RUNTIME

    if result.exit_code != EXIT_OK:
        print(f"Experiment finished with failures (exit status {result.exit_code})", file=sys.stderr)
    else:
        print(f"\n=== PROCESSING COMPLETE ===")
        print(f"Results saved to {result.output_dir}/")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
