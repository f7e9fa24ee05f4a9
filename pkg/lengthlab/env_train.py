"""
Training loops on the synthetic problem MDP.

PPO with a tabular critic and GRPO with a frozen reference snapshot, both
updating the tabular softmax logits by one gradient step per batch. Also
builds problem sets by difficulty class and runs the two-phase procedure and
the GAE lambda sweep.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .config import GRPO, PPO, PolicyConfig, ProblemSetConfig, TrainConfig
from .core import (CORRECT, Problem, TabularSoftmaxPolicy, Vocab,
                   derive_seed, estimate_pa, response_outcome,
                   sample_trajectory, score_response, token_rewards)
from .errors import DivergenceError, ProblemSetError
from .gae_ppo import (gae_advantages, mean_advantage_S, ppo_loss, td_errors,
                      value_targets, value_update)
from .grpo import (CollapseReport, GroupSample, GroupStats, collapse_monitor,
                   group_stats, grpo_loss, kl_estimate)

UNSOLVABLE = "unsolvable"
OCCASIONAL = "occasionally"
FULL = "fully"

FULL_THRESHOLD = 0.9
OCCASIONAL_CEILING = 0.5
DYNAMICS_WINDOW = 20
REDUCTION = 0.25
OVERFLOW_FACTOR = 10.0

RECORD_COLUMNS = [
    "step", "mean_reward", "accuracy", "mean_len", "min_len", "max_len",
    "policy_loss", "value_loss", "kl", "S", "advantage_mean",
    "advantage_min", "advantage_max", "value_target_abs_max",
    "reward_abs_max", "zero_advantage_rate", "greedy_accuracy",
]


@dataclass
class ProblemSet:
    """
    Problems with their measured difficulty class.

    Attributes:
        vocab (Vocab): Token layout the problems refer to.
        problems (list): The problems.
        difficulty (dict): Problem id -> unsolvable, occasionally or fully.
        solve_rates (dict): Problem id -> measured per-sample solve rate.
    """
    vocab: Vocab
    problems: List[Problem]
    difficulty: Dict[str, str] = field(default_factory=dict)
    solve_rates: Dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.problems)

    def by_class(self, difficulty: str) -> List[Problem]:
        return [p for p in self.problems if self.difficulty.get(p.id) == difficulty]

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab.to_dict(),
            "problems": [dict(p.to_dict(), difficulty=self.difficulty.get(p.id),
                              solve_rate=self.solve_rates.get(p.id))
                         for p in self.problems],
        }


class ValueTable:
    """
    Tabular critic: one value per (problem, position), ``V(s_T) = 0``.

    The table it starts from is kept as the anchor of the critic's KL term.
    """

    def __init__(self, sizes: Mapping[str, int]):
        self.values = {pid: np.zeros(int(n)) for pid, n in sizes.items()}
        self.anchor = {pid: v.copy() for pid, v in self.values.items()}

    @classmethod
    def zeros(cls, problem_set: ProblemSet) -> "ValueTable":
        return cls({p.id: p.max_len for p in problem_set.problems})

    def get(self, problem_id: str, T: int) -> np.ndarray:
        return self.values[problem_id][:T].copy()

    def update(self, problem_id: str, target_sum: np.ndarray,
               counts: np.ndarray, lr: float, kl_weight: float) -> None:
        """Regress every visited position towards its mean target."""
        seen = counts > 0
        if lr == 0 or not np.any(seen):
            return
        v = self.values[problem_id]
        v[seen] = value_update(v[seen], target_sum[seen] / counts[seen], lr,
                               kl_weight, self.anchor[problem_id][seen])

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.values.values()
                    if v.size), default=0.0)

    def copy(self) -> "ValueTable":
        table = ValueTable({})
        table.values = {k: v.copy() for k, v in self.values.items()}
        table.anchor = {k: v.copy() for k, v in self.anchor.items()}
        return table

    def to_dict(self) -> dict:
        return {pid: [float(x) for x in v] for pid, v in sorted(self.values.items())}


@dataclass
class TrainLog:
    """
    One record per training step plus the final policy.

    Attributes:
        algorithm (str): PPO or GRPO.
        records (list): Step records, see ``RECORD_COLUMNS``.
        policy (TabularSoftmaxPolicy): Policy after the last step.
        values (ValueTable): Critic after the last step (PPO).
        group_stats (list): Per-step group statistics (GRPO).
        collapse (CollapseReport): Degenerate-group monitor (GRPO).
    """
    algorithm: str
    records: List[dict] = field(default_factory=list)
    policy: Optional[TabularSoftmaxPolicy] = None
    values: Optional[ValueTable] = None
    group_stats: List[List[GroupStats]] = field(default_factory=list)
    collapse: Optional[CollapseReport] = None

    def __len__(self) -> int:
        return len(self.records)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=RECORD_COLUMNS)

    def group_frame(self) -> pd.DataFrame:
        rows = [s.to_dict() for step in self.group_stats for s in step]
        return pd.DataFrame(rows, columns=["step", "group_id", "k", "N",
                                           "advantage_correct",
                                           "advantage_wrong", "policy_loss",
                                           "kl", "total", "zero_advantage"])

    def window_median(self, column: str,
                      window: int = DYNAMICS_WINDOW) -> pd.Series:
        """Rolling median over ``window`` steps, shorter at the start."""
        return self.frame()[column].astype(float).rolling(
            window, min_periods=1).median()


def _surrogate_coeffs(rho: np.ndarray, advantages: np.ndarray,
                      clip: float) -> np.ndarray:
    """
    Coefficient of ``log pi(a_t)`` in the gradient of ``-sum alpha_t A_t``.

    Tokens whose clipped branch is active contribute nothing.
    """
    clipped = np.where(advantages > 0, rho >= 1 + clip,
                       np.where(advantages < 0, rho <= 1 - clip, True))
    return np.where(clipped, 0.0, -rho * advantages)


def _accumulate(grads: Dict, policy: TabularSoftmaxPolicy, problem_id: str,
                tokens: Sequence[int], coeffs: Sequence[float]) -> None:
    """Add ``sum_t c_t * d log pi(a_t) / dz`` to the per-context gradients."""
    for t, (a, c) in enumerate(zip(tokens, coeffs)):
        if c == 0.0:
            continue
        key = policy.key(problem_id, tokens[:t])
        g = -c * policy.probs_at(key)
        g[a] += c
        g /= policy.temperature
        if key in grads:
            grads[key] += g
        else:
            grads[key] = g


def _guard(step: int, algorithm: str, loss: float,
           policy: TabularSoftmaxPolicy, limit: float,
           values: Optional[ValueTable], logger: logging.Logger) -> None:
    problem = None
    if not np.isfinite(loss):
        problem = f"non-finite loss {loss}"
    else:
        for key, z in policy.logits.items():
            if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > limit:
                problem = f"logits {z} at context {key} beyond {limit}"
                break
    if problem is None and values is not None:
        if not np.isfinite(values.max_abs()):
            problem = "non-finite critic values"
    if problem is not None:
        logger.error(f"{algorithm} diverged at step {step}: {problem}")
        raise DivergenceError(f"{algorithm} step {step}: {problem}")


def _length_stats(lengths: Sequence[int]) -> dict:
    lengths = np.asarray(lengths, dtype=float)
    return {"mean_len": float(lengths.mean()), "min_len": float(lengths.min()),
            "max_len": float(lengths.max())}


def _greedy_accuracy(step: int, config: TrainConfig,
                     policy: TabularSoftmaxPolicy,
                     problem_set: ProblemSet) -> float:
    if config.eval_every and step % config.eval_every == 0:
        return evaluate_policy(policy, problem_set, greedy=True)["accuracy"]
    return float("nan")


def evaluate_policy(policy: TabularSoftmaxPolicy, problem_set: ProblemSet,
                    n_samples: int = 8, seed: int = 0, greedy: bool = False,
                    logger_name: str = "lengthlab_logger") -> dict:
    """
    Accuracy and length statistics of a policy, without training.

    Args:
        policy (TabularSoftmaxPolicy): Policy to evaluate.
        problem_set (ProblemSet): Problems to answer.
        n_samples (int): Responses per problem; greedy decoding uses one.
        seed (int): Sampling seed.
        greedy (bool): Decode greedily.

    Returns:
        dict: ``accuracy``, ``mean_len``, ``min_len``, ``max_len`` and
              ``n_responses``.
    """
    logger = logging.getLogger(logger_name)
    if len(problem_set) == 0:
        logger.warning("evaluate_policy called with an empty problem set")
        raise ValueError("The problem set is empty")
    n = 1 if greedy else n_samples
    lengths, correct = [], 0
    for i, problem in enumerate(problem_set.problems):
        for j in range(n):
            traj = sample_trajectory(policy, problem, derive_seed(seed, i, j),
                                     greedy=greedy)
            lengths.append(traj.T)
            correct += response_outcome(traj, problem, policy.vocab) == CORRECT
    result = {"accuracy": correct / len(lengths), "n_responses": len(lengths)}
    result.update(_length_stats(lengths))
    return result


def make_problem_set(spec: Union[ProblemSetConfig, Mapping],
                     seed: Optional[int] = None,
                     policy: Optional[TabularSoftmaxPolicy] = None,
                     vocab: Optional[Vocab] = None,
                     logger_name: str = "lengthlab_logger") -> ProblemSet:
    """
    Build problems of the three difficulty classes and validate them.

    Unsolvable problems have no correct answer. Occasionally and fully
    solvable problems place the correct answer on an answer token the
    validation policy rarely or mostly picks, and the class is then measured
    with ``estimate_pa``: a rate in (0, 0.5) for occasionally, at least 0.9
    for fully. A failed measurement is retried with ``max_len`` doubled.

    Args:
        spec (ProblemSetConfig | dict): Class counts and validation budget.
        seed (int): Validation seed, overrides the one of ``spec``.
        policy (TabularSoftmaxPolicy): Validation policy, the default
                                       starting policy when omitted.
        vocab (Vocab): Token layout, the default vocabulary when omitted.

    Returns:
        ProblemSet: Problems ordered unsolvable, occasionally, fully.

    Raises:
        ProblemSetError: If a class is not achieved within the retries.
    """
    logger = logging.getLogger(logger_name)
    if not isinstance(spec, ProblemSetConfig):
        spec = ProblemSetConfig(**dict(spec))
    if seed is not None:
        spec = replace(spec, seed=seed)
    if policy is None:
        vocab = Vocab.default() if vocab is None else vocab
        policy = PolicyConfig().build(vocab, TrainConfig().temperature)
    vocab = policy.vocab

    # answer tokens ordered by how likely the policy picks them first
    start = policy.probs("", [])
    answers = sorted(vocab.answer_tokens, key=lambda a: start[a])

    problems = [Problem(f"unsolvable-{i}", None, spec.max_len)
                for i in range(spec.n_unsolvable)]
    difficulty = {p.id: UNSOLVABLE for p in problems}
    rates = {p.id: 0.0 for p in problems}

    for cls_index, (name, count, candidates) in enumerate(
            [(OCCASIONAL, spec.n_occasional, answers),
             (FULL, spec.n_full, answers[::-1])], start=1):
        for i in range(count):
            problem, rate = _validated_problem(
                f"{name}-{i}", name, candidates, spec, policy,
                derive_seed(spec.seed, cls_index, i), logger)
            problems.append(problem)
            difficulty[problem.id] = name
            rates[problem.id] = rate
    logger.info(f"Problem set: {spec.n_unsolvable} unsolvable, "
                f"{spec.n_occasional} occasionally, {spec.n_full} fully solvable")
    return ProblemSet(vocab, problems, difficulty, rates)


def _in_class(name: str, rate: float) -> bool:
    if name == OCCASIONAL:
        return 0.0 < rate < OCCASIONAL_CEILING
    return rate >= FULL_THRESHOLD


def _validated_problem(pid: str, name: str, candidates: Sequence[int],
                       spec: ProblemSetConfig, policy: TabularSoftmaxPolicy,
                       seed: int, logger: logging.Logger):
    max_len = spec.max_len
    measured = []
    for attempt in range(spec.retries):
        for answer in candidates:
            problem = Problem(pid, answer, max_len)
            rate = estimate_pa(policy, problem, spec.validation_samples,
                               derive_seed(seed, attempt, answer)).rate
            measured.append((answer, max_len, rate))
            if _in_class(name, rate):
                return problem, rate
        max_len *= 2
        logger.debug(f"Problem {pid}: retrying with max_len {max_len}")
    logger.error(f"Problem {pid}: class '{name}' not achieved, measured {measured}")
    raise ProblemSetError(f"Could not build a '{name}' solvable problem {pid}; "
                          f"(answer, max_len, rate) measured: {measured}")


def train_ppo(policy: TabularSoftmaxPolicy, values: Optional[ValueTable],
              problem_set: ProblemSet, config: TrainConfig,
              reference: Optional[TabularSoftmaxPolicy] = None,
              logger_name: str = "lengthlab_logger") -> TrainLog:
    """
    PPO on the problem set with a tabular critic.

    Every step samples ``samples_per_problem`` responses per problem, scores
    them with the ternary reward, computes GAE advantages from the current
    critic, takes one gradient step on the clipped surrogate (averaged over
    responses, tokens averaged within a response) and regresses the critic
    towards ``A_t + V_old(s_t)``. Responses are sampled from the current
    policy, so the logged loss is evaluated at ratio one and equals the mean
    of S.

    Args:
        policy (TabularSoftmaxPolicy): Starting policy, left unchanged.
        values (ValueTable): Starting critic, zeros when omitted.
        problem_set (ProblemSet): Training problems.
        config (TrainConfig): Run settings.
        reference (TabularSoftmaxPolicy): Reference of the per-token KL
                                          reward, the starting policy when
                                          omitted.

    Returns:
        TrainLog: One record per step, the final policy and critic.

    Raises:
        DivergenceError: On a non-finite loss or logits beyond the limit.
    """
    logger = logging.getLogger(logger_name)
    policy = policy.copy()
    values = ValueTable.zeros(problem_set) if values is None else values.copy()
    reference = policy.copy() if reference is None else reference
    scheme = replace(config, algorithm=PPO).reward_scheme
    gae = config.gae
    log = TrainLog(PPO)

    for step in range(config.steps):
        greedy = _greedy_accuracy(step, config, policy, problem_set)
        grads: Dict = {}
        rewards, lengths, losses, S_values, kls = [], [], [], [], []
        advantages_all, value_losses, target_max, reward_max = [], [], 0.0, 0.0
        correct = 0
        n_batch = len(problem_set) * config.samples_per_problem

        for i, problem in enumerate(problem_set.problems):
            target_sum = np.zeros(problem.max_len)
            counts = np.zeros(problem.max_len)
            for j in range(config.samples_per_problem):
                traj = sample_trajectory(policy, problem,
                                         derive_seed(config.seed, step, i, j))
                traj.reward = score_response(traj, problem, scheme, policy.vocab)
                correct += response_outcome(traj, problem, policy.vocab) == CORRECT
                r = token_rewards(traj, problem, scheme, policy.vocab)
                ref_probs = reference.token_probs(problem.id, traj.tokens)
                kls.append(kl_estimate([traj.old_probs], [ref_probs]))
                if config.kl_coef > 0:
                    r = r - config.kl_coef * np.log(traj.old_probs / ref_probs)

                v = values.get(problem.id, traj.T)
                adv = gae_advantages(td_errors(r, v, gae.gamma), gae.lam, gae.gamma)
                targets = value_targets(traj, v, adv)
                # single epoch: the current policy is the sampling policy
                L, _ = ppo_loss(traj, traj.old_probs, adv, gae.clip)

                rho = np.ones(traj.T)
                coeffs = _surrogate_coeffs(rho, adv, gae.clip) / (traj.T * n_batch)
                _accumulate(grads, policy, problem.id, traj.tokens, coeffs)

                target_sum[:traj.T] += targets
                counts[:traj.T] += 1
                rewards.append(traj.reward)
                lengths.append(traj.T)
                losses.append(L)
                S_values.append(mean_advantage_S(adv))
                advantages_all.append(adv)
                value_losses.append(float(np.mean(0.5 * (v - targets) ** 2)))
                target_max = max(target_max, float(np.max(np.abs(targets))))
                reward_max = max(reward_max, float(np.max(np.abs(r))))
            values.update(problem.id, target_sum, counts, config.critic_lr,
                          config.value_kl_weight)

        if config.actor_lr > 0:
            policy.apply_update(grads, config.actor_lr)
        loss = float(np.mean(losses))
        _guard(step, PPO, loss, policy, config.divergence_limit, values, logger)

        adv_flat = np.concatenate(advantages_all)
        record = {
            "step": step,
            "mean_reward": float(np.mean(rewards)),
            "accuracy": correct / n_batch,
            "policy_loss": loss,
            "value_loss": float(np.mean(value_losses)),
            "kl": float(np.mean(kls)),
            "S": float(np.mean(S_values)),
            "advantage_mean": float(adv_flat.mean()),
            "advantage_min": float(adv_flat.min()),
            "advantage_max": float(adv_flat.max()),
            "value_target_abs_max": target_max,
            "reward_abs_max": reward_max,
            "zero_advantage_rate": float("nan"),
            "greedy_accuracy": greedy,
        }
        record.update(_length_stats(lengths))
        log.records.append(record)
        if step % config.log_every == 0:
            logger.info(f"PPO step {step}: reward {record['mean_reward']:.3f}, "
                        f"accuracy {record['accuracy']:.3f}, "
                        f"length {record['mean_len']:.2f}, loss {loss:.4f}")

    log.policy = policy
    log.values = values
    return log


def train_grpo(policy: TabularSoftmaxPolicy, problem_set: ProblemSet,
               config: TrainConfig,
               reference: Optional[TabularSoftmaxPolicy] = None,
               logger_name: str = "lengthlab_logger") -> TrainLog:
    """
    GRPO on the problem set.

    Every step samples one group of ``samples_per_problem`` responses per
    problem, scores them with the binary reward, normalises the rewards
    within the group and takes one gradient step on the clipped loss plus
    ``kl_weight`` times the k3 KL estimate against the reference. Groups
    where every response earns the same reward only move the policy through
    the KL term.

    Args:
        policy (TabularSoftmaxPolicy): Starting policy, left unchanged.
        problem_set (ProblemSet): Training problems.
        config (TrainConfig): Run settings, GRPO loss settings in ``grpo``.
        reference (TabularSoftmaxPolicy): Frozen KL reference, the starting
                                          policy when omitted.

    Returns:
        TrainLog: Records, group statistics, the collapse report and the
                  final policy.

    Raises:
        DivergenceError: On a non-finite loss or logits beyond the limit.
    """
    logger = logging.getLogger(logger_name)
    policy = policy.copy()
    reference = policy.copy() if reference is None else reference
    scheme = replace(config, algorithm=GRPO).reward_scheme
    gcfg = config.grpo
    G = config.samples_per_problem
    n_groups = len(problem_set)
    log = TrainLog(GRPO)

    for step in range(config.steps):
        greedy = _greedy_accuracy(step, config, policy, problem_set)
        grads: Dict = {}
        step_stats, rewards_all, lengths, advantages_all = [], [], [], []
        losses, kls, totals = [], [], []
        correct = 0

        for i, problem in enumerate(problem_set.problems):
            trajectories, solved = [], []
            for j in range(G):
                traj = sample_trajectory(policy, problem,
                                         derive_seed(config.seed, step, i, j))
                traj.reward = score_response(traj, problem, scheme, policy.vocab)
                trajectories.append(traj)
                solved.append(response_outcome(traj, problem, policy.vocab) == CORRECT)
            group = GroupSample(problem.id, trajectories,
                                [t.reward for t in trajectories], solved)
            new_probs = [t.old_probs for t in trajectories]
            ref_probs = [reference.token_probs(problem.id, t.tokens)
                         for t in trajectories]
            loss = grpo_loss(group, new_probs, gcfg, ref_probs)
            step_stats.append(group_stats(step, group, loss))

            for traj, adv, ref in zip(trajectories, loss["advantages"], ref_probs):
                rho = np.ones(traj.T)
                adv_t = np.full(traj.T, adv)
                weight = 1.0 / traj.T if gcfg.normalize_by_length else 1.0
                coeffs = _surrogate_coeffs(rho, adv_t, gcfg.clip) * weight
                if gcfg.kl_weight > 0:
                    kl_weight = 1.0 / traj.T if gcfg.kl_average_tokens else 1.0
                    coeffs = coeffs + gcfg.kl_weight * kl_weight * \
                        (1.0 - ref / traj.old_probs)
                _accumulate(grads, policy, problem.id, traj.tokens,
                            coeffs / (G * n_groups))
                lengths.append(traj.T)
            rewards_all.extend(group.rewards)
            advantages_all.append(loss["advantages"])
            correct += group.k
            losses.append(loss["policy_loss"])
            kls.append(loss["kl"])
            totals.append(loss["total"])

        if config.actor_lr > 0:
            policy.apply_update(grads, config.actor_lr)
        total = float(np.mean(totals))
        _guard(step, GRPO, total, policy, config.divergence_limit, None, logger)

        adv_flat = np.concatenate(advantages_all)
        record = {
            "step": step,
            "mean_reward": float(np.mean(rewards_all)),
            "accuracy": correct / (G * n_groups),
            "policy_loss": float(np.mean(losses)),
            "value_loss": float("nan"),
            "kl": float(np.mean(kls)),
            "S": float("nan"),
            "advantage_mean": float(adv_flat.mean()),
            "advantage_min": float(adv_flat.min()),
            "advantage_max": float(adv_flat.max()),
            "value_target_abs_max": float("nan"),
            "reward_abs_max": float(np.max(np.abs(rewards_all))),
            "zero_advantage_rate": float(np.mean([s.zero_advantage
                                                  for s in step_stats])),
            "greedy_accuracy": greedy,
        }
        record.update(_length_stats(lengths))
        log.records.append(record)
        log.group_stats.append(step_stats)
        if step % config.log_every == 0:
            logger.info(f"GRPO step {step}: reward {record['mean_reward']:.3f}, "
                        f"length {record['mean_len']:.2f} "
                        f"(min {record['min_len']:.0f}), "
                        f"zero-advantage groups {record['zero_advantage_rate']:.2f}")

    if log.group_stats:
        log.collapse = collapse_monitor(log.group_stats, gcfg.kl_weight,
                                        gcfg.collapse_window)
    log.policy = policy
    return log


def train(policy: TabularSoftmaxPolicy, problem_set: ProblemSet,
          config: TrainConfig, values: Optional[ValueTable] = None,
          reference: Optional[TabularSoftmaxPolicy] = None,
          logger_name: str = "lengthlab_logger") -> TrainLog:
    """Dispatch on ``config.algorithm``."""
    if config.algorithm == PPO:
        return train_ppo(policy, values, problem_set, config, reference, logger_name)
    return train_grpo(policy, problem_set, config, reference, logger_name)


def _edge_medians(log: TrainLog, column: str = "mean_len",
                  window: int = DYNAMICS_WINDOW):
    """Median of the first and of the last window of a column."""
    series = log.frame()[column].astype(float)
    if series.empty:
        return float("nan"), float("nan")
    return float(series.iloc[:window].median()), float(series.iloc[-window:].median())


@dataclass
class TwoPhaseResult:
    log1: TrainLog
    log2: TrainLog
    summary: dict


def two_phase(problem_sets: Mapping[str, ProblemSet],
              configs: Mapping[str, TrainConfig],
              policy: TabularSoftmaxPolicy, eval_samples: int = 200,
              seed: int = 0, accuracy_tolerance: float = 0.05,
              reference: Optional[TabularSoftmaxPolicy] = None,
              logger_name: str = "lengthlab_logger") -> TwoPhaseResult:
    """
    Phase 1 on the hard set, then phase 2 from the phase-1 policy.

    Args:
        problem_sets (dict): ``phase1`` and ``phase2`` problem sets.
        configs (dict): ``phase1`` and ``phase2`` train configs.
        policy (TabularSoftmaxPolicy): Starting policy.
        eval_samples (int): Responses per problem when measuring phase-2
                            accuracy before and after phase 2.
        seed (int): Seed of those measurements.
        accuracy_tolerance (float): Allowed accuracy drop on phase-2 problems.
        reference (TabularSoftmaxPolicy): KL reference of both phases, the
                                          starting policy of each phase when
                                          omitted.

    Returns:
        TwoPhaseResult: Both logs and a summary with the length and
                        accuracy comparisons.
    """
    logger = logging.getLogger(logger_name)
    logger.info("Two-phase training: phase 1")
    log1 = train(policy, problem_sets["phase1"], configs["phase1"],
                 reference=reference, logger_name=logger_name)
    before = evaluate_policy(log1.policy, problem_sets["phase2"], eval_samples, seed)
    logger.info("Two-phase training: phase 2")
    log2 = train(log1.policy, problem_sets["phase2"], configs["phase2"],
                 reference=reference, logger_name=logger_name)
    after = evaluate_policy(log2.policy, problem_sets["phase2"], eval_samples, seed)

    p1_start, p1_end = _edge_medians(log1)
    p2_start, p2_end = _edge_medians(log2)
    if np.isnan(p2_end):
        p2_end = after["mean_len"]
    summary = {
        "phase1_steps": len(log1),
        "phase2_steps": len(log2),
        "phase1_initial_len": p1_start,
        "phase1_final_len": p1_end,
        "phase1_length_growth": bool(p1_end > p1_start),
        "phase1_final_accuracy": float(log1.records[-1]["accuracy"])
        if log1.records else float("nan"),
        "phase2_initial_len": p2_start,
        "phase2_final_len": p2_end,
        "phase2_length_reduced": bool(p2_end < p1_end),
        "phase2_accuracy_start": before["accuracy"],
        "phase2_accuracy_end": after["accuracy"],
        "phase2_mean_len_start": before["mean_len"],
        "phase2_mean_len_end": after["mean_len"],
        "accuracy_tolerance": accuracy_tolerance,
        "accuracy_preserved": bool(after["accuracy"]
                                   >= before["accuracy"] - accuracy_tolerance),
    }
    logger.info(f"Two-phase summary: {summary}")
    return TwoPhaseResult(log1, log2, summary)


def steps_to_reduction(log: TrainLog, fraction: float = REDUCTION,
                       window: int = DYNAMICS_WINDOW) -> Optional[int]:
    """
    First step where the windowed-median length sits ``fraction`` below its
    running peak, None if it never does.
    """
    if not log.records:
        return None
    median = log.window_median("mean_len", window)
    peak = median.cummax()
    hit = median <= (1.0 - fraction) * peak
    if not hit.any():
        return None
    return int(log.frame()["step"][hit.to_numpy()].iloc[0])


@dataclass
class SweepResult:
    logs: Dict[float, TrainLog]
    report: pd.DataFrame


def lambda_sweep(problem_set: ProblemSet, lambdas: Sequence[float],
                 config: TrainConfig, policy: TabularSoftmaxPolicy,
                 reference: Optional[TabularSoftmaxPolicy] = None,
                 logger_name: str = "lengthlab_logger") -> SweepResult:
    """
    Run PPO once per GAE lambda and compare the runs.

    Overflow is flagged when the largest absolute value target exceeds ten
    times the largest absolute per-token reward of the run. At lambda one the
    target is the undiscounted sum of every remaining reward, so per-token
    rewards (a per-token step penalty or the KL reward) over long responses
    push it far past any single reward; below one the sum is discounted.

    Args:
        problem_set (ProblemSet): Training problems.
        lambdas (list): GAE lambdas, each in (0, 1].
        config (TrainConfig): Run settings, ``gae.lam`` is replaced per run.
        policy (TabularSoftmaxPolicy): Starting policy of every run.
        reference (TabularSoftmaxPolicy): Reference of the per-token KL
                                          reward, the starting policy when
                                          omitted.

    Returns:
        SweepResult: Logs per lambda and a frame with columns lam, overflow,
                     max_abs_target, max_abs_reward, steps_to_reduction,
                     initial_len and final_len.
    """
    logger = logging.getLogger(logger_name)
    for lam in lambdas:
        if not 0 < lam <= 1:
            logger.warning(f"lambda_sweep received lambda {lam}")
            raise ValueError(f"lambda must be in (0, 1], got {lam}")
    logs, rows = {}, []
    for lam in lambdas:
        cfg = replace(config, algorithm=PPO, gae=replace(config.gae, lam=lam))
        log = train_ppo(policy, None, problem_set, cfg, reference, logger_name)
        frame = log.frame()
        max_target = float(frame["value_target_abs_max"].max()) if len(frame) else 0.0
        max_reward = float(frame["reward_abs_max"].max()) if len(frame) else 0.0
        initial, final = _edge_medians(log)
        rows.append({
            "lam": lam,
            "overflow": bool(max_target > OVERFLOW_FACTOR * max_reward),
            "max_abs_target": max_target,
            "max_abs_reward": max_reward,
            "steps_to_reduction": steps_to_reduction(log),
            "initial_len": initial,
            "final_len": final,
        })
        logs[lam] = log
        logger.info(f"lambda {lam}: {rows[-1]}")
    report = pd.DataFrame(rows, columns=["lam", "overflow", "max_abs_target",
                                         "max_abs_reward", "steps_to_reduction",
                                         "initial_len", "final_len"])
    return SweepResult(logs, report)


def dynamics_checks(log: TrainLog, problem_set: ProblemSet,
                    window: int = DYNAMICS_WINDOW,
                    accuracy_tolerance: float = 0.05) -> Dict[str, bool]:
    """
    Pass/fail of the expected length dynamics for single-class problem sets.

    Unsolvable problems: accuracy stays zero; under PPO the windowed-median
    length grows by at least 25 % and the loss is positive on at least 95 %
    of the steps, under GRPO the policy loss is zero and the minimum length
    falls. Occasionally solvable problems under PPO: the windowed-median
    length falls 25 % below its peak while accuracy stays within the
    tolerance. Fully solvable problems under GRPO: at least 90 % of the groups
    of the last 50 steps have zero advantage.

    Returns:
        dict: Check name -> passed; empty when the run is shorter than two
              windows or mixes classes.
    """
    if len(log) < 2 * window:
        return {}
    classes = set(problem_set.difficulty.values())
    frame = log.frame()
    length = log.window_median("mean_len", window)
    checks: Dict[str, bool] = {}
    if classes == {UNSOLVABLE}:
        checks["accuracy_zero"] = bool(frame["accuracy"].max() == 0)
        if log.algorithm == PPO:
            checks["length_growth"] = bool(
                length.iloc[-1] >= (1.0 + REDUCTION) * length.iloc[window - 1])
            checks["loss_positive"] = bool((frame["policy_loss"] > 0).mean() >= 0.95)
        else:
            first, last = _edge_medians(log, "min_len", window)
            checks["policy_loss_zero"] = bool(
                (frame["policy_loss"].abs() < 1e-12).all())
            checks["min_len_collapsed"] = bool(last < first)
    elif classes == {OCCASIONAL} and log.algorithm == PPO:
        accuracy = frame["accuracy"]
        checks["length_reduced"] = bool(
            length.iloc[-1] <= (1.0 - REDUCTION) * length.max())
        checks["accuracy_preserved"] = bool(
            accuracy.iloc[-window:].mean()
            >= accuracy.iloc[:window].mean() - accuracy_tolerance)
    elif classes == {FULL} and log.algorithm == GRPO:
        checks["zero_advantage"] = bool(
            frame["zero_advantage_rate"].iloc[-50:].mean() >= 0.9)
    return checks
