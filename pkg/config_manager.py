"""
Configuration management for quantized distributed online Frank-Wolfe experiments.
"""
import copy
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from engine import ALPHA_RULE, ConfigurationError
from network import GRAPH_KINDS
from problem import SET_KINDS
from quantizer import QUANTIZER_KINDS, SCHEDULES, QuantizerSpec

PRESETS = ("custom", "fig1_levels", "fig2_cap", "fig3_stepsizes", "fig4_agents")

ENV_OUTPUT_DIR = "QDOPFO_OUTPUT_DIR"
ENV_WORKERS = "QDOPFO_WORKERS"


class ConfigError(ConfigurationError):
    """A configuration key holds an invalid value."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass
class ProblemConfig:
    """The loss stream and constraint set."""
    n: int = 10
    d: int = 30
    T: int = 2000
    rho: float = 5e-6
    radius: float = 2.0
    set_kind: str = "l1_ball"
    static: bool = False


@dataclass
class QuantizerConfig:
    """Quantizer applied to both state and gradient messages."""
    kind: str = "probabilistic"  # identity, probabilistic, k_level
    schedule: str = "power"  # power, resolution
    level_exp: float = 1.5
    level_cap: Optional[int] = None
    resolution_kappa1: float = 1.0
    resolution_xi: float = 1.0

    def to_spec(self) -> QuantizerSpec:
        return QuantizerSpec(kind=self.kind, schedule=self.schedule, exponent=self.level_exp,
                             kappa1=self.resolution_kappa1, xi=self.resolution_xi, cap=self.level_cap)


@dataclass
class StepConfig:
    """A fixed alpha, or alpha = kappa2 / T^gamma when alpha is None."""
    alpha: Optional[float] = None
    kappa2: float = 0.5
    gamma: float = 0.3

    def step_size(self, T: int) -> float:
        return self.alpha if self.alpha is not None else self.kappa2 / T ** self.gamma


@dataclass
class NetworkConfig:
    graph: str = "random_window"
    window_Q: int = 5
    extra_edge_prob: float = 0.05


@dataclass
class RunnerConfig:
    """Seeds, output location and solver settings."""
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "results"
    workers: int = 1
    comparator_tol: float = 1e-8
    variation_samples: int = 4096


SECTIONS = ("problem", "quantizer", "step", "network", "runner")


@dataclass
class ExperimentConfig:
    """Main experiment configuration."""
    preset: str = "custom"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    step: StepConfig = field(default_factory=StepConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    runner: RunnerConfig = field(default_factory=RunnerConfig)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        """Build a config from a (possibly partial) dictionary; unknown keys are errors."""
        unknown = set(data) - set(SECTIONS) - {"preset"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration section")
        sections = {}
        for name, section_cls in (("problem", ProblemConfig), ("quantizer", QuantizerConfig),
                                  ("step", StepConfig), ("network", NetworkConfig),
                                  ("runner", RunnerConfig)):
            values = data.get(name, {}) or {}
            try:
                sections[name] = section_cls(**values)
            except TypeError as e:
                raise ConfigError(name, str(e)) from e
        return cls(preset=data.get("preset", "custom"), **sections)

    @classmethod
    def load_from_file(cls, config_file: str = "config.json") -> "ExperimentConfig":
        """Load configuration from a JSON file; defaults when the file does not exist."""
        if os.path.exists(config_file):
            with open(config_file, 'r', encoding='utf-8') as f:
                try:
                    config_data = json.load(f)
                except json.JSONDecodeError as e:
                    raise ConfigError(config_file, f"not valid JSON ({e})") from e
            return cls.from_dict(config_data)
        return cls()

    def save_to_file(self, config_file: str = "config.json"):
        with open(config_file, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write('\n')

    def create_directories(self):
        Path(self.runner.output_dir).mkdir(parents=True, exist_ok=True)


def validate_config(config: ExperimentConfig) -> List[str]:
    """Validate field values and return the issues, each prefixed by its key."""
    issues = []
    p, q, s, g, r = config.problem, config.quantizer, config.step, config.network, config.runner

    if config.preset not in PRESETS:
        issues.append(f"preset: unknown preset {config.preset!r}, expected one of {PRESETS}")

    if p.n < 1:
        issues.append("problem.n: must be at least 1")
    if p.d < 1:
        issues.append("problem.d: must be at least 1")
    if p.T < 2:
        issues.append("problem.T: must be at least 2")
    if p.rho < 0:
        issues.append("problem.rho: must be nonnegative")
    if p.radius <= 0:
        issues.append("problem.radius: must be positive")
    if p.set_kind not in SET_KINDS:
        issues.append(f"problem.set_kind: unknown set {p.set_kind!r}")

    if q.kind not in QUANTIZER_KINDS:
        issues.append(f"quantizer.kind: unknown quantizer {q.kind!r}")
    if q.schedule not in SCHEDULES:
        issues.append(f"quantizer.schedule: unknown schedule {q.schedule!r}")
    if q.level_cap is not None and q.level_cap < 1:
        issues.append("quantizer.level_cap: must be a positive integer")
    if q.schedule == "resolution" and (q.resolution_kappa1 <= 0 or q.resolution_xi <= 0):
        issues.append("quantizer.resolution_kappa1: resolution schedule needs kappa1 > 0 and xi > 0")

    if s.alpha is not None and not 0 < s.alpha <= 1:
        issues.append(f"step.alpha: {s.alpha!r} violates {ALPHA_RULE}")
    if s.alpha is None:
        if s.gamma <= 0 or s.gamma >= 1:
            issues.append("step.gamma: must lie in (0, 1)")
        elif s.kappa2 <= 0:
            issues.append(f"step.kappa2: {s.kappa2!r} violates {ALPHA_RULE}")
        elif p.T >= 1 and s.kappa2 > p.T ** s.gamma:
            issues.append("step.kappa2: must not exceed T^gamma")

    if g.graph not in GRAPH_KINDS:
        issues.append(f"network.graph: unknown graph {g.graph!r}")
    if g.window_Q < 1:
        issues.append("network.window_Q: must be at least 1")
    if not 0 <= g.extra_edge_prob <= 1:
        issues.append("network.extra_edge_prob: must lie in [0, 1]")

    if not r.seeds:
        issues.append("runner.seeds: at least one seed is required")
    elif any(seed < 0 for seed in r.seeds):
        issues.append("runner.seeds: seeds must be nonnegative")
    elif len(set(r.seeds)) != len(r.seeds):
        issues.append("runner.seeds: seeds must be distinct")
    if r.workers < 1:
        issues.append("runner.workers: must be at least 1")
    if r.comparator_tol <= 0:
        issues.append("runner.comparator_tol: must be positive")
    if r.variation_samples < 1:
        issues.append("runner.variation_samples: must be at least 1")
    return issues


def check_config(config: ExperimentConfig):
    """Raise ConfigError naming the first offending key."""
    issues = validate_config(config)
    if issues:
        key, _, message = issues[0].partition(": ")
        raise ConfigError(key, message)


@dataclass
class Variant:
    """One named point of a sweep; `config` is fully resolved."""
    name: str
    config: ExperimentConfig


def _variant(config: ExperimentConfig, name: str, **sections) -> Variant:
    resolved = copy.deepcopy(config)
    for section, changes in sections.items():
        setattr(resolved, section, replace(getattr(resolved, section), **changes))
    return Variant(name=name, config=resolved)


def _label(value: float) -> str:
    return f"{value:g}"


def expand_variants(config: ExperimentConfig) -> List[Variant]:
    """Expand a preset into its named variants; 'custom' is a single variant."""
    preset = config.preset
    if preset == "custom":
        return [_variant(config, "custom")]
    if preset == "fig1_levels":
        variants = [_variant(config, "identity", quantizer={"kind": "identity"})]
        for exponent in (0.8, 1.0, 1.3, 1.5):
            variants.append(_variant(config, f"level_exp_{_label(exponent)}",
                                     quantizer={"kind": "probabilistic", "schedule": "power",
                                                "level_exp": exponent, "level_cap": None}))
        return variants
    if preset == "fig2_cap":
        return [_variant(config, f"cap_{cap if cap is not None else 'none'}",
                         quantizer={"kind": "probabilistic", "schedule": "power",
                                    "level_exp": 1.5, "level_cap": cap})
                for cap in (50, 80, 100, None)]
    if preset == "fig3_stepsizes":
        variants = [_variant(config, "alpha_schedule", step={"alpha": None, "kappa2": 0.5, "gamma": 0.3})]
        for alpha in (0.2, 0.1, 0.05, 0.02):
            variants.append(_variant(config, f"alpha_{_label(alpha)}", step={"alpha": alpha}))
        return variants
    if preset == "fig4_agents":
        return [_variant(config, f"agents_{n}", problem={"n": n}) for n in (10, 30, 50)]
    raise ConfigError("preset", f"unknown preset {preset!r}")


def apply_environment(config: ExperimentConfig, dotenv_path: Optional[str] = None) -> ExperimentConfig:
    """Apply QDOPFO_OUTPUT_DIR and QDOPFO_WORKERS from the environment or a .env file."""
    load_dotenv(dotenv_path)
    output_dir = os.getenv(ENV_OUTPUT_DIR)
    if output_dir:
        config.runner.output_dir = output_dir
    workers = os.getenv(ENV_WORKERS)
    if workers:
        try:
            config.runner.workers = int(workers)
        except ValueError as e:
            raise ConfigError("runner.workers", f"{ENV_WORKERS}={workers!r} is not an integer") from e
    return config


class ConfigManager:
    """Manager for handling experiment configuration."""

    def __init__(self, config_file: str = "config.json"):
        self.config_file = config_file
        self.config = ExperimentConfig.load_from_file(config_file)

    def get_config(self) -> ExperimentConfig:
        return self.config

    def update_config(self, **kwargs):
        """
        Update configuration values section by section, e.g.
        update_config(problem={"T": 500}, preset="fig1_levels").
        """
        for section, params in kwargs.items():
            if section == "preset":
                self.config.preset = params
                continue
            if section not in SECTIONS:
                raise ConfigError(section, "unknown configuration section")
            section_obj = getattr(self.config, section)
            for key, value in params.items():
                if not hasattr(section_obj, key):
                    raise ConfigError(f"{section}.{key}", "unknown configuration key")
                setattr(section_obj, key, value)

    def save_config(self):
        self.config.save_to_file(self.config_file)

    def reset_to_defaults(self):
        self.config = ExperimentConfig()

    def validate_config(self) -> List[str]:
        return validate_config(self.config)


def create_default_config(config_file: str = "config.json"):
    """Create a default configuration file."""
    config = ExperimentConfig()
    config.save_to_file(config_file)
    config.create_directories()
    print(f"Default configuration created: {config_file}")


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Configuration management for Q-DOPFO experiments")
    parser.add_argument("--config", default="config.json", help="Configuration file")
    parser.add_argument("--create-default", action="store_true", help="Create default configuration file")
    parser.add_argument("--validate", action="store_true", help="Validate current configuration")
    parser.add_argument("--show", action="store_true", help="Show current configuration")

    args = parser.parse_args()

    if args.create_default:
        create_default_config(args.config)

    if args.validate:
        manager = ConfigManager(args.config)
        issues = manager.validate_config()
        if issues:
            print("Configuration issues found:")
            for issue in issues:
                print(f"  - {issue}")
        else:
            print("Configuration is valid.")

    if args.show:
        manager = ConfigManager(args.config)
        print(json.dumps(manager.config.to_dict(), indent=2))
