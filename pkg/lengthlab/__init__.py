#
# Version info
#
from .version import __version__

#
# Exceptions
#
from .errors import ConfigError, DivergenceError, LabError, ProblemSetError

#
# Problem MDP and tabular policy
#
from .core import (Problem, RewardScheme, TabularSoftmaxPolicy, Trajectory,
                   Vocab, estimate_pa, format_policy, sample_trajectory,
                   score_response, token_rewards)

#
# Advantage estimators and losses
#
from .gae_ppo import GaeConfig, gae_advantages, ppo_loss, td_errors
from .grpo import GrpoConfig, GroupSample, group_advantage, grpo_loss

#
# Gradient analysis and verification suites
#
from .analysis import ConcisenessInstance, conciseness_compare, gradient_check
from .verify import SUITES, run_suites

#
# Configuration, training and outputs
#
from .config import ExperimentSpec, TrainConfig, load_experiment
from .env_train import (ProblemSet, TrainLog, lambda_sweep, make_problem_set,
                        train, train_grpo, train_ppo, two_phase)
from .lab_logger import close_logger, create_logger
