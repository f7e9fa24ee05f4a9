"""
Experiment configuration: dataclasses, JSON loading and validation.

Every section of an experiment document maps onto one dataclass. Keys that are
not fields of the dataclass are rejected, absent keys take the defaults below.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, List, Mapping, Optional, Sequence

from .core import (Problem, RewardScheme, TabularSoftmaxPolicy, Vocab,
                   GRPO_BINARY, PPO_TERNARY, derive_seed, format_policy)
from .errors import ConfigError
from .gae_ppo import GaeConfig
from .grpo import GrpoConfig

PPO = "PPO"
GRPO = "GRPO"
COMMANDS = ("verify", "table", "train", "two-phase", "sweep")


@dataclass(frozen=True)
class PolicyConfig:
    """
    Starting policy built by ``format_policy`` (one-token context horizon).

    Attributes:
        condition_on_problem (bool): Key the logit table by problem id.
        answer_logit (float): Logit of the answer tokens while thinking.
        favored_answer (int): Answer token the policy prefers.
        favored_bias (float): Extra logit of the favored answer.
        terminal_gap (float): Magnitude of the terminal token logits.
    """
    condition_on_problem: bool = False
    answer_logit: float = -1.5
    favored_answer: Optional[int] = 5
    favored_bias: float = 1.5
    terminal_gap: float = 8.0

    def __post_init__(self):
        if not self.terminal_gap > 0:
            raise ValueError("terminal_gap must be positive")

    def build(self, vocab: Vocab, temperature: float,
              problems: Sequence[Problem] = ()) -> TabularSoftmaxPolicy:
        return format_policy(vocab, temperature, self.answer_logit,
                             self.favored_answer, self.favored_bias,
                             self.terminal_gap, self.condition_on_problem,
                             problems)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProblemSetConfig:
    """
    Problem counts per difficulty class and the validation budget.

    Attributes:
        n_unsolvable, n_occasional, n_full (int): Problems per class.
        max_len (int): Starting length limit of every problem.
        validation_samples (int): Samples per problem for ``estimate_pa``.
        retries (int): Attempts, each doubling ``max_len``, before giving up.
        seed (int): Seed of the validation sampling.
    """
    n_unsolvable: int = 0
    n_occasional: int = 0
    n_full: int = 0
    max_len: int = 32
    validation_samples: int = 2000
    retries: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("n_unsolvable", "n_occasional", "n_full"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.validation_samples < 1:
            raise ValueError("validation_samples must be >= 1")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")

    @property
    def counts(self) -> dict:
        return {"n_unsolvable": self.n_unsolvable,
                "n_occasional": self.n_occasional, "n_full": self.n_full}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """
    Settings of one PPO or GRPO run.

    Attributes:
        algorithm (str): "PPO" or "GRPO".
        gae (GaeConfig): gamma, lambda and clip of PPO.
        grpo (GrpoConfig): Clip, KL weight and normalisation of GRPO.
        samples_per_problem (int): Responses per problem and step (group size).
        actor_lr (float): Step size on the policy logits.
        critic_lr (float): Step size of the tabular critic (PPO).
        value_kl_weight (float): Pull of the critic towards its initial table.
        kl_coef (float): Per-token KL-to-reference reward coefficient (PPO).
        step_penalty (float): Reward per generated token, <= 0.
        penalty_mode (str): "terminal" or "per_token".
        temperature (float): Policy temperature.
        steps (int): Training steps.
        seed (int): Seed of the sampling.
        log_every (int): Steps between progress log lines.
        eval_every (int): Steps between greedy evaluations, 0 for none.
        divergence_limit (float): Largest admissible absolute logit.
    """
    algorithm: str = PPO
    gae: GaeConfig = field(default_factory=GaeConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    samples_per_problem: int = 8
    actor_lr: float = 1.0
    critic_lr: float = 0.5
    value_kl_weight: float = 0.1
    kl_coef: float = 0.0
    step_penalty: float = 0.0
    penalty_mode: str = "terminal"
    temperature: float = 0.6
    steps: int = 200
    seed: int = 0
    log_every: int = 50
    eval_every: int = 0
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.algorithm not in (PPO, GRPO):
            raise ValueError(f"algorithm must be PPO or GRPO, got {self.algorithm}")
        if self.samples_per_problem < 1 or \
                (self.algorithm == GRPO and self.samples_per_problem < 2):
            raise ValueError("samples_per_problem must be >= 1 (>= 2 for GRPO)")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.value_kl_weight < 0 or self.kl_coef < 0:
            raise ValueError("value_kl_weight and kl_coef must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.log_every < 1 or self.eval_every < 0:
            raise ValueError("log_every must be >= 1 and eval_every >= 0")
        if self.step_penalty > 0:
            raise ValueError("step_penalty must be <= 0")
        if self.penalty_mode not in ("terminal", "per_token"):
            raise ValueError(f"Unknown penalty_mode: {self.penalty_mode}")

    @property
    def reward_scheme(self) -> RewardScheme:
        variant = PPO_TERNARY if self.algorithm == PPO else GRPO_BINARY
        return RewardScheme(variant, self.step_penalty,
                            penalty_mode=self.penalty_mode)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhaseConfig:
    """Problems and training settings of one phase."""
    problems: ProblemSetConfig = field(default_factory=ProblemSetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentSpec:
    """
    A complete experiment document.

    Attributes:
        command (str): One of verify, table, train, two-phase, sweep.
        seed (int): When set, replaces every nested seed by a seed derived
                    from it.
        vocab (dict): Vocabulary layout, the default K = 8 layout if empty.
        policy (PolicyConfig): Starting policy.
        reference (PolicyConfig): KL reference of the training runs, the
                                  starting policy when null.
        problems (ProblemSetConfig): Problems of ``train`` and ``sweep``.
        train (TrainConfig): Settings of ``train`` and ``sweep``.
        phase1, phase2 (PhaseConfig): Settings of ``two-phase``.
        lambdas (list): GAE lambdas of ``sweep``.
        suites (list): Suites of ``verify``.
        instances (int): Instances per verification property.
        group_sizes (list): N values of ``table``.
        accuracy_tolerance (float): Accuracy tolerance of the two-phase summary.
        config_path (str): Path the document was read from.
        output_dir (str): Directory receiving every artifact.
    """
    command: str = "two-phase"
    seed: Optional[int] = None
    vocab: dict = field(default_factory=dict)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reference: Optional[PolicyConfig] = None
    problems: ProblemSetConfig = field(default_factory=ProblemSetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phase1: PhaseConfig = field(default_factory=PhaseConfig)
    phase2: PhaseConfig = field(default_factory=PhaseConfig)
    lambdas: List[float] = field(default_factory=lambda: [0.95, 1.0])
    suites: List[str] = field(default_factory=lambda: ["all"])
    instances: int = 1000
    group_sizes: List[int] = field(default_factory=lambda: [8, 16, 64, 256])
    accuracy_tolerance: float = 0.05
    config_path: Optional[str] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"command must be one of {COMMANDS}")
        if any(not 0 < lam <= 1 for lam in self.lambdas):
            raise ValueError("lambdas must lie in (0, 1]")
        if any(n < 2 for n in self.group_sizes):
            raise ValueError("group_sizes must be >= 2")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if not 0 <= self.accuracy_tolerance <= 1:
            raise ValueError("accuracy_tolerance must lie in [0, 1]")

    def vocabulary(self) -> Vocab:
        return Vocab.from_dict(self.vocab) if self.vocab else Vocab.default()

    def seeded(self) -> "ExperimentSpec":
        """Copy with every nested seed derived from ``seed`` (if set)."""
        if self.seed is None:
            return self

        def phase(cfg: PhaseConfig, slot: int) -> PhaseConfig:
            return PhaseConfig(
                replace(cfg.problems, seed=derive_seed(self.seed, slot, 0)),
                replace(cfg.train, seed=derive_seed(self.seed, slot, 1)))

        return replace(
            self,
            problems=replace(self.problems, seed=derive_seed(self.seed, 0, 0)),
            train=replace(self.train, seed=derive_seed(self.seed, 0, 1)),
            phase1=phase(self.phase1, 1),
            phase2=phase(self.phase2, 2))

    def to_dict(self) -> dict:
        return asdict(self)


# nested sections: dataclass -> {field name: dataclass of that field}
_NESTED = {
    ExperimentSpec: {"policy": PolicyConfig, "reference": PolicyConfig,
                     "problems": ProblemSetConfig,
                     "train": TrainConfig, "phase1": PhaseConfig,
                     "phase2": PhaseConfig},
    PhaseConfig: {"problems": ProblemSetConfig, "train": TrainConfig},
    TrainConfig: {"gae": GaeConfig, "grpo": GrpoConfig},
}


def from_dict(cls: type, data: Any, path: str = "",
              logger_name: str = "lengthlab_logger") -> Any:
    """
    Build a config dataclass from a JSON object.

    Args:
        cls (type): Dataclass to build.
        data (Mapping): JSON object.
        path (str): Dotted path of the object, used in error messages.

    Returns:
        The dataclass instance.

    Raises:
        ConfigError: On a non-object section, an unknown key or a value the
                     dataclass rejects; the message names the field path.
    """
    logger = logging.getLogger(logger_name)
    where = path or "<root>"
    if not isinstance(data, Mapping):
        logger.warning(f"Config section {where} is not an object")
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        keys = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        logger.warning(f"Unknown config keys: {keys}")
        raise ConfigError(f"Unknown key(s): {keys}")

    kwargs = {}
    for key, value in data.items():
        sub_path = f"{path}.{key}" if path else key
        nested = _NESTED.get(cls, {}).get(key)
        if nested is not None and value is not None:
            kwargs[key] = from_dict(nested, value, sub_path, logger_name)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        logger.warning(f"Invalid config section {where}: {err}")
        raise ConfigError(f"{where}: {err}") from err


def load_experiment(path: str, output_dir: Optional[str] = None,
                    seed: Optional[int] = None,
                    logger_name: str = "lengthlab_logger") -> ExperimentSpec:
    """
    Read and validate an experiment document.

    Args:
        path (str): JSON file.
        output_dir (str): Output directory recorded on the experiment.
        seed (int): Overrides the document's top-level seed.

    Returns:
        ExperimentSpec: The validated spec with nested seeds resolved.

    Raises:
        ConfigError: If the file is missing, is not valid JSON or does not
                     validate.
    """
    logger = logging.getLogger(logger_name)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as err:
        logger.warning(f"Config file not found: {path}")
        raise ConfigError(f"Config file not found: {path}") from err
    except json.JSONDecodeError as err:
        logger.warning(f"Config file {path} is not valid JSON: {err}")
        raise ConfigError(f"{path}: invalid JSON ({err})") from err

    if isinstance(document, Mapping):
        document = dict(document)
        document["config_path"] = str(path)
        if output_dir is not None:
            document["output_dir"] = str(output_dir)
        if seed is not None:
            document["seed"] = int(seed)
    spec = from_dict(ExperimentSpec, document, logger_name=logger_name)
    if spec.vocab:
        try:
            spec.vocabulary()
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"vocab: {err}") from err
    logger.info(f"Loaded experiment '{spec.command}' from {path}")
    return spec.seeded()


def default_experiment_path(name: str = "default_experiment") -> str:
    """Path of a shipped experiment, the two-phase one by default."""
    return os.path.join(os.path.dirname(__file__), "input", f"{name}.json")
