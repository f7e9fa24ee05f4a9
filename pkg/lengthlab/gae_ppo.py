"""
TD errors, generalized advantage estimation and the clipped PPO loss.

Also holds the closed-form predictions for the unweighted mean advantage
``S = -(1/T) sum_t A_t`` that the per-token PPO loss follows, the per-token
fixed-sign threshold and the critic target/update used to study value
over- and underestimation.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import Trajectory

# numerical slack for the bound checks
CHECK_TOL = 1e-12


@dataclass(frozen=True)
class GaeConfig:
    """Discount ``gamma``, GAE ``lam`` and PPO ``clip``."""
    gamma: float = 1.0
    lam: float = 0.95
    clip: float = 0.2

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.lam <= 1:
            raise ValueError(f"lam must be in (0, 1], got {self.lam}")
        if not self.clip > 0:
            raise ValueError(f"clip must be positive, got {self.clip}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdvantageReport:
    """Per-trajectory advantage diagnostics."""
    deltas: np.ndarray
    advantages: np.ndarray
    S: float
    L: float
    alpha: np.ndarray
    R: float
    epsilon_bound: float

    def to_dict(self) -> dict:
        return {
            "deltas": [float(d) for d in self.deltas],
            "advantages": [float(a) for a in self.advantages],
            "S": float(self.S),
            "L": float(self.L),
            "alpha": [float(a) for a in self.alpha],
            "R": float(self.R),
            "epsilon_bound": float(self.epsilon_bound),
        }


def td_errors(rewards: Sequence[float], values: Sequence[float],
              gamma: float = 1.0,
              logger_name: str = "lengthlab_logger") -> np.ndarray:
    """
    One-step TD errors with ``V(s_T) = 0``.

    Args:
        rewards (array-like): Per-token rewards r_0..r_{T-1}.
        values (array-like): Values V(s_0)..V(s_{T-1}).
        gamma (float): Discount factor.

    Returns:
        np.ndarray: ``delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)``.

    Raises:
        ValueError: If the two vectors differ in length.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.shape != v.shape:
        logger = logging.getLogger(logger_name)
        logger.warning(f"td_errors length mismatch: {r.shape} vs {v.shape}")
        raise ValueError(f"rewards and values differ in length: "
                         f"{r.size} vs {v.size}")
    next_values = np.append(v[1:], 0.0)
    return r + gamma * next_values - v


def gae_advantages(deltas: Sequence[float], lam: float = 0.95,
                   gamma: float = 1.0,
                   logger_name: str = "lengthlab_logger") -> np.ndarray:
    """
    GAE by the backward recursion ``A_t = delta_t + gamma * lam * A_{t+1}``.

    Args:
        deltas (array-like): TD errors.
        lam (float): GAE lambda in (0, 1].
        gamma (float): Discount in (0, 1].

    Returns:
        np.ndarray: Advantages, one per token.

    Raises:
        ValueError: On empty input or parameters outside (0, 1].
    """
    logger = logging.getLogger(logger_name)
    d = np.asarray(deltas, dtype=float)
    if d.size == 0:
        logger.warning("gae_advantages called with no TD errors")
        raise ValueError("deltas must not be empty")
    if not 0 < lam <= 1 or not 0 < gamma <= 1:
        logger.warning(f"Invalid GAE parameters lam={lam}, gamma={gamma}")
        raise ValueError("lam and gamma must be in (0, 1]")
    advantages = np.empty_like(d)
    last = 0.0
    for t in range(d.size - 1, -1, -1):
        last = d[t] + gamma * lam * last
        advantages[t] = last
    return advantages


def gae_forward(deltas: Sequence[float], lam: float = 0.95,
                gamma: float = 1.0) -> np.ndarray:
    """Forward double sum ``A_t = sum_l (gamma lam)^l delta_{t+l}``."""
    d = np.asarray(deltas, dtype=float)
    T = d.size
    return np.array([sum((gamma * lam) ** j * d[t + j] for j in range(T - t))
                     for t in range(T)])


def reindexed_advantage_sum(deltas: Sequence[float], lam: float) -> float:
    """``sum_t A_t`` as ``sum_k delta_k * sum_{j<=k} lam^j`` (gamma = 1)."""
    d = np.asarray(deltas, dtype=float)
    weights = np.cumsum(lam ** np.arange(d.size))
    return float(np.dot(d, weights))


def mean_advantage_S(advantages: Sequence[float]) -> float:
    """Unweighted mean advantage ``S = -(1/T) sum_t A_t``."""
    a = np.asarray(advantages, dtype=float)
    if a.size == 0:
        raise ValueError("advantages must not be empty")
    return float(-a.mean())


def clip_factors(rho: Sequence[float], advantages: Sequence[float],
                 clip: float) -> np.ndarray:
    """
    Effective ratio alpha_t of the clipped objective.

    ``min(rho, clip(rho))`` where the advantage is positive, ``max`` where it
    is negative and 1 where it is zero.
    """
    rho = np.asarray(rho, dtype=float)
    a = np.asarray(advantages, dtype=float)
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip)
    return np.where(a > 0, np.minimum(rho, clipped),
                    np.where(a < 0, np.maximum(rho, clipped), 1.0))


def ppo_loss(traj: Trajectory, new_probs: Sequence[float],
             advantages: Sequence[float], clip: float = 0.2,
             logger_name: str = "lengthlab_logger"
             ) -> Tuple[float, np.ndarray]:
    """
    Per-token clipped PPO loss averaged over the response.

    Args:
        traj (Trajectory): Sampled response with its old probabilities.
        new_probs (array-like): Probabilities of the same tokens under the
                                current policy.
        advantages (array-like): Advantage per token.
        clip (float): Clip range epsilon.

    Returns:
        tuple: ``L = -(1/T) sum_t alpha_t A_t`` and the alpha_t vector.

    Raises:
        ValueError: On zero old probabilities, non-positive new probabilities
                    or mismatched lengths.
    """
    logger = logging.getLogger(logger_name)
    old = np.asarray(traj.old_probs, dtype=float)
    new = np.asarray(new_probs, dtype=float)
    a = np.asarray(advantages, dtype=float)
    if not (old.shape == new.shape == a.shape):
        logger.warning("ppo_loss received vectors of different lengths")
        raise ValueError("old_probs, new_probs and advantages differ in length")
    if np.any(old <= 0):
        logger.warning("ppo_loss received a zero old probability")
        raise ValueError("old probabilities must be positive")
    rho = new / old
    if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
        logger.warning(f"ppo_loss received invalid ratios: {rho}")
        raise ValueError("importance ratios must be finite and positive")
    alpha = clip_factors(rho, a, clip)
    return float(-np.mean(alpha * a)), alpha


def mean_advantage_prediction(R: float, T: int, lam: float,
                              epsilon: float = 0.0) -> dict:
    """
    Leading term of S and the finite-T error bound.

    With terminal TD error R and pre-terminal TD errors bounded by epsilon:
    ``S_leading = -R (1 - lam^T) / (T (1 - lam))`` with bound
    ``epsilon (T - 1) / (T (1 - lam))``; for lam = 1, ``-R`` and
    ``epsilon (T - 1) / 2``.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < lam <= 1:
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    if lam == 1.0:
        return {"S_leading": -float(R), "error_bound": epsilon * (T - 1) / 2}
    return {
        "S_leading": -R * (1 - lam ** T) / (T * (1 - lam)),
        "error_bound": epsilon * (T - 1) / (T * (1 - lam)),
    }


def loss_follows_S_check(L: float, S: float, advantages: Sequence[float],
                         rho_min: float, rho_max: float,
                         clip: float) -> dict:
    """
    Check that the PPO loss stays within the ratio-deviation band around S.

    ``|L - S| <= alpha_dev * mean|A|`` with
    ``alpha_dev = max(1 - rho_min, rho_max - 1, clip)``. When every advantage
    has the same sign the two-sided bracket on |L| and the sign of L are
    checked as well.

    Returns:
        dict: ``bound``, ``holds`` and ``same_sign`` (None when the
              advantages mix signs), plus the bracket used.
    """
    a = np.asarray(advantages, dtype=float)
    alpha_dev = max(1.0 - rho_min, rho_max - 1.0, clip)
    bound = alpha_dev * float(np.mean(np.abs(a)))
    holds = abs(L - S) <= bound + CHECK_TOL
    result = {"bound": bound, "holds": bool(holds), "same_sign": None,
              "bracket": None}

    if np.all(a > 0):
        lower, upper = min(rho_min, 1 + clip), min(rho_max, 1 + clip)
    elif np.all(a < 0):
        lower, upper = 1 - clip, max(rho_max, 1 - clip)
    else:
        return result
    tol = CHECK_TOL * max(1.0, abs(S))
    in_bracket = lower * abs(S) - tol <= abs(L) <= upper * abs(S) + tol
    same_sign = bool(np.sign(L) == np.sign(S) and in_bracket)
    result["same_sign"] = same_sign
    result["bracket"] = (lower * abs(S), upper * abs(S))
    result["holds"] = bool(holds and same_sign)
    return result


def fixed_sign_threshold(lam: float, T: int) -> float:
    """
    Threshold Phi with ``|R| > epsilon * Phi`` fixing every advantage's sign.

    ``(1 - lam^(T-1)) / ((1 - lam) lam^(T-1))`` for lam < 1 and ``T - 1`` for
    lam = 1.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if lam == 1.0:
        return float(T - 1)
    return (1 - lam ** (T - 1)) / ((1 - lam) * lam ** (T - 1))


def value_targets(traj: Trajectory, values_old: Sequence[float],
                  advantages: Sequence[float]) -> np.ndarray:
    """Critic regression targets ``A_t + V_old(s_t)``."""
    v = np.asarray(values_old, dtype=float)
    a = np.asarray(advantages, dtype=float)
    if not (v.size == a.size == traj.T):
        raise ValueError("values, advantages and trajectory differ in length")
    return a + v


def value_update(values_old: Sequence[float], targets: Sequence[float],
                 lr: float, kl_weight: float = 0.0,
                 anchor: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    One gradient step on ``1/2 (V - target)^2 + kl_weight/2 (V - anchor)^2``.

    The anchor is the initial value table (zeros by default), so iterating the
    step settles at ``(target + kl_weight * anchor) / (1 + kl_weight)``.

    Args:
        values_old (array-like): Current values.
        targets (array-like): Regression targets.
        lr (float): Step size, positive.
        kl_weight (float): Weight of the penalty towards the anchor.
        anchor (array-like): Anchor values, zeros when omitted.

    Returns:
        np.ndarray: Updated values.
    """
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if kl_weight < 0:
        raise ValueError(f"kl_weight must be >= 0, got {kl_weight}")
    v = np.asarray(values_old, dtype=float)
    target = np.asarray(targets, dtype=float)
    ref = np.zeros_like(v) if anchor is None else np.asarray(anchor, dtype=float)
    grad = (v - target) + kl_weight * (v - ref)
    return v - lr * grad


def advantage_report(traj: Trajectory, values: Sequence[float],
                     config: GaeConfig = GaeConfig(),
                     rewards: Optional[Sequence[float]] = None
                     ) -> AdvantageReport:
    """
    Advantages and loss diagnostics for one trajectory.

    ``rewards`` defaults to the terminal reward of the trajectory. L is
    evaluated at identity ratio, so it equals S.
    """
    if rewards is None:
        rewards = np.zeros(traj.T)
        rewards[-1] = traj.reward
    deltas = td_errors(rewards, values, config.gamma)
    advantages = gae_advantages(deltas, config.lam, config.gamma)
    L, alpha = ppo_loss(traj, traj.old_probs, advantages, config.clip)
    pre_terminal = np.abs(deltas[:-1])
    return AdvantageReport(
        deltas=deltas,
        advantages=advantages,
        S=mean_advantage_S(advantages),
        L=L,
        alpha=alpha,
        R=float(np.asarray(rewards)[-1] - np.asarray(values, dtype=float)[-1]),
        epsilon_bound=float(pre_terminal.max()) if pre_terminal.size else 0.0,
    )
