"""
Group-relative advantages, the clipped GRPO loss with a KL term, and the
statistics used to detect the collapse modes where every response in a group
earns the same reward.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .core import Trajectory
from .gae_ppo import clip_factors

# population std below this counts as a degenerate group
SIGMA_TOL = 1e-12


@dataclass(frozen=True)
class GrpoConfig:
    """
    GRPO loss settings.

    Attributes:
        clip (float): Clip range epsilon.
        kl_weight (float): Weight beta of the KL term.
        normalize_by_std (bool): Divide centred rewards by the group std.
        normalize_by_length (bool): Average each response's tokens.
        kl_average_tokens (bool): Average the KL estimate over tokens instead
                                  of summing it.
        collapse_window (int): Consecutive KL-dominated steps that raise the
                               collapse monitor's dominance flag.
    """
    clip: float = 0.2
    kl_weight: float = 0.001
    normalize_by_std: bool = True
    normalize_by_length: bool = True
    kl_average_tokens: bool = True
    collapse_window: int = 5

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError(f"clip must be positive, got {self.clip}")
        if self.kl_weight < 0:
            raise ValueError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if self.collapse_window < 1:
            raise ValueError(f"collapse_window must be >= 1, got {self.collapse_window}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroupSample:
    """G responses to one problem and their rewards."""
    problem_id: str
    trajectories: List[Trajectory]
    rewards: np.ndarray
    solved: Optional[Sequence[bool]] = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if len(self.trajectories) < 2:
            raise ValueError("A group needs at least two responses")
        if self.rewards.shape != (len(self.trajectories),):
            raise ValueError("One reward per trajectory is required")
        if self.solved is None:
            self.solved = tuple(bool(r == 1.0) for r in self.rewards)
        else:
            self.solved = tuple(bool(s) for s in self.solved)
            if len(self.solved) != len(self.trajectories):
                raise ValueError("One solved flag per trajectory is required")

    @property
    def G(self) -> int:
        return len(self.trajectories)

    @property
    def k(self) -> int:
        return int(sum(self.solved))


def population_std(rewards: Sequence[float]) -> float:
    """Standard deviation with the 1/N normalisation."""
    return float(np.std(np.asarray(rewards, dtype=float)))


def group_advantage(rewards: Sequence[float],
                    normalize_by_std: bool = True,
                    logger_name: str = "lengthlab_logger") -> np.ndarray:
    """
    Group-normalised advantages ``(r - mean) / std``.

    A group with zero spread gets zero advantages.

    Args:
        rewards (array-like): Rewards of the G responses, G >= 2.
        normalize_by_std (bool): Divide by the population std.

    Returns:
        np.ndarray: One advantage per response.

    Raises:
        ValueError: If fewer than two rewards are given.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        logger = logging.getLogger(logger_name)
        logger.warning(f"group_advantage needs G >= 2, got {r.size}")
        raise ValueError("A group needs at least two rewards")
    mu = r.mean()
    sigma = population_std(r)
    if sigma <= SIGMA_TOL * max(1.0, abs(mu)):
        return np.zeros_like(r)
    centred = r - mu
    return centred / sigma if normalize_by_std else centred


def closed_form_advantage(N: int, k: int, r: int) -> float:
    """
    Advantage of a binary reward in a group with k correct out of N.

    ``sqrt((N - k) / k)`` for r = 1, ``-sqrt(k / (N - k))`` for r = 0, and 0
    for the degenerate groups k = 0 and k = N.
    """
    if N < 1 or not 0 <= k <= N:
        raise ValueError(f"Need N >= 1 and 0 <= k <= N, got N={N}, k={k}")
    if r not in (0, 1):
        raise ValueError(f"Binary reward expected, got {r}")
    if k == 0 or k == N:
        return 0.0
    if r == 1:
        return float(np.sqrt((N - k) / k))
    return float(-np.sqrt(k / (N - k)))


def binary_std(N: int, k: int) -> float:
    """Population std of k ones and N - k zeros, ``sqrt(k/N (1 - k/N))``."""
    p = k / N
    return float(np.sqrt(p * (1 - p)))


def kl_estimate(new_probs: Sequence[Sequence[float]],
                ref_probs: Sequence[Sequence[float]],
                average: bool = True,
                logger_name: str = "lengthlab_logger") -> float:
    """
    Per-token k3 estimate ``ref/new - log(ref/new) - 1`` of the KL term.

    Args:
        new_probs: Token probabilities of each response under the policy.
        ref_probs: Token probabilities under the reference snapshot.
        average (bool): Average tokens within a response (True) or sum them.

    Returns:
        float: Mean over responses, never negative.

    Raises:
        ValueError: If the two sides hold a different number of responses or
                    a response differs in length between them.
    """
    if len(new_probs) != len(ref_probs):
        logger = logging.getLogger(logger_name)
        logger.warning(f"kl_estimate received {len(new_probs)} policy and "
                       f"{len(ref_probs)} reference responses")
        raise ValueError("Policy and reference cover a different number of responses")
    per_response = []
    for new, ref in zip(new_probs, ref_probs):
        new = np.asarray(new, dtype=float)
        ref = np.asarray(ref, dtype=float)
        if new.shape != ref.shape:
            raise ValueError("Policy and reference probabilities differ in length")
        if np.any(new <= 0) or np.any(ref <= 0):
            raise ValueError("KL estimate needs positive probabilities")
        ratio = ref / new
        k3 = ratio - np.log(ratio) - 1.0
        per_response.append(k3.mean() if average else k3.sum())
    if not per_response:
        return 0.0
    # k3 is non-negative; clamp round-off
    return float(max(np.mean(per_response), 0.0))


def grpo_loss(group: GroupSample, new_probs: Sequence[Sequence[float]],
              config: GrpoConfig = GrpoConfig(),
              ref_probs: Optional[Sequence[Sequence[float]]] = None,
              logger_name: str = "lengthlab_logger") -> dict:
    """
    Clipped GRPO loss of one group plus its KL term.

    Args:
        group (GroupSample): Responses and rewards.
        new_probs: Token probabilities of each response under the policy.
        config (GrpoConfig): Clip, KL weight and normalisation flags.
        ref_probs: Token probabilities under the reference, no KL when omitted.

    Returns:
        dict: ``policy_loss``, ``kl``, ``total`` and the ``advantages``.

    Raises:
        ValueError: On zero old probabilities or mismatched shapes.
    """
    logger = logging.getLogger(logger_name)
    if len(new_probs) != group.G:
        logger.warning("grpo_loss received probabilities for a different group size")
        raise ValueError("One probability vector per response is required")
    advantages = group_advantage(group.rewards, config.normalize_by_std)
    terms = []
    for traj, new, adv in zip(group.trajectories, new_probs, advantages):
        old = np.asarray(traj.old_probs, dtype=float)
        new = np.asarray(new, dtype=float)
        if new.shape != old.shape:
            raise ValueError("new_probs must match the response length")
        if np.any(old <= 0):
            logger.warning(f"Zero old probability in group {group.problem_id}")
            raise ValueError("old probabilities must be positive")
        rho = new / old
        adv_t = np.full(rho.shape, adv)
        surrogate = float(np.sum(clip_factors(rho, adv_t, config.clip) * adv_t))
        weight = 1.0 / traj.T if config.normalize_by_length else 1.0
        terms.append(weight * surrogate)
    policy_loss = -float(np.mean(terms))
    kl = 0.0 if ref_probs is None else \
        kl_estimate(new_probs, ref_probs, config.kl_average_tokens, logger_name)
    return {
        "policy_loss": policy_loss,
        "kl": kl,
        "total": policy_loss + config.kl_weight * kl,
        "advantages": advantages,
    }


@dataclass
class GroupStats:
    """One row of the group statistics stream."""
    step: int
    group_id: str
    k: int
    N: int
    advantage_correct: float
    advantage_wrong: float
    policy_loss: float
    kl: float
    total: float
    zero_advantage: bool

    def to_dict(self) -> dict:
        return asdict(self)


def group_stats(step: int, group: GroupSample, loss: dict) -> GroupStats:
    """
    Summarise a group and its loss terms.

    A group counts as zero-advantage when every advantage is zero, which is
    when its rewards have no spread. With a step penalty an all-correct group
    can still carry advantages.
    """
    advantages = np.asarray(loss["advantages"])
    solved = np.array(group.solved)
    correct = advantages[solved]
    wrong = advantages[~solved]
    return GroupStats(
        step=step,
        group_id=group.problem_id,
        k=group.k,
        N=group.G,
        advantage_correct=float(correct.mean()) if correct.size else 0.0,
        advantage_wrong=float(wrong.mean()) if wrong.size else 0.0,
        policy_loss=float(loss["policy_loss"]),
        kl=float(loss["kl"]),
        total=float(loss["total"]),
        zero_advantage=bool(np.all(advantages == 0.0)),
    )


@dataclass
class CollapseReport:
    """Per-step degenerate-group rates and the KL dominance flag."""
    all_correct_rate: List[float] = field(default_factory=list)
    all_wrong_rate: List[float] = field(default_factory=list)
    zero_advantage_rate: List[float] = field(default_factory=list)
    kl_dominated: List[bool] = field(default_factory=list)
    kl_dominance: bool = False
    first_dominance_step: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def collapse_monitor(history: Sequence[Sequence[GroupStats]],
                     kl_weight: float, window: int = 5) -> CollapseReport:
    """
    Track degenerate groups and whether the KL term dominates the loss.

    Args:
        history: Group statistics of every step, oldest first.
        kl_weight (float): The KL weight beta.
        window (int): Consecutive steps with ``|policy_loss| < beta * kl``
                      needed to raise ``kl_dominance``.

    Returns:
        CollapseReport: Rates per step and the dominance flag.
    """
    if len(history) == 0:
        raise ValueError("collapse_monitor needs a non-empty history")
    report = CollapseReport()
    run = 0
    for i, step_stats in enumerate(history):
        n = len(step_stats)
        if n == 0:
            raise ValueError(f"Step {i} has no group statistics")
        report.all_correct_rate.append(
            sum(s.k == s.N for s in step_stats) / n)
        report.all_wrong_rate.append(sum(s.k == 0 for s in step_stats) / n)
        report.zero_advantage_rate.append(
            sum(s.zero_advantage for s in step_stats) / n)
        policy_loss = float(np.mean([s.policy_loss for s in step_stats]))
        kl = float(np.mean([s.kl for s in step_stats]))
        dominated = abs(policy_loss) < kl_weight * kl
        report.kl_dominated.append(bool(dominated))
        run = run + 1 if dominated else 0
        if run >= window and not report.kl_dominance:
            report.kl_dominance = True
            report.first_dominance_step = step_stats[0].step
    return report


def advantage_table(N_list: Sequence[int]) -> pd.DataFrame:
    """
    Closed-form advantages and std for k in {1, 2, 3, N-3, N-2, N-1}.

    Returns:
        pd.DataFrame: Columns N, k, sigma, advantage_correct, advantage_wrong.
    """
    rows = []
    for N in N_list:
        if N < 2:
            raise ValueError(f"Group size must be >= 2, got {N}")
        ks = sorted({k for k in (1, 2, 3, N - 3, N - 2, N - 1) if 0 < k < N})
        for k in ks:
            rows.append({
                "N": N,
                "k": k,
                "sigma": binary_std(N, k),
                "advantage_correct": closed_form_advantage(N, k, 1),
                "advantage_wrong": closed_form_advantage(N, k, 0),
            })
    return pd.DataFrame(rows, columns=["N", "k", "sigma", "advantage_correct",
                                       "advantage_wrong"])


def drgrpo_magnitudes(N_list: Sequence[int],
                      lengths: Sequence[int] = (1000, 30000)) -> dict:
    """
    Effect of the two normalisations dropped by Dr.GRPO.

    Without the std division the advantage of a response shrinks by ``1/sigma``;
    without the length average a response's loss grows by its length.

    Returns:
        dict: ``advantage`` frame (N, k, sigma, shrink_factor for k = 1 and
              k = N/2) and ``length`` frame (length, loss_growth).
    """
    rows = []
    for N in N_list:
        for k in sorted({1, N // 2}):
            if 0 < k < N:
                sigma = binary_std(N, k)
                rows.append({"N": N, "k": k, "sigma": sigma,
                             "shrink_factor": 1.0 / sigma})
    length_rows = [{"length": int(n), "loss_growth": float(n)} for n in lengths]
    return {
        "advantage": pd.DataFrame(rows, columns=["N", "k", "sigma",
                                                 "shrink_factor"]),
        "length": pd.DataFrame(length_rows, columns=["length", "loss_growth"]),
    }
