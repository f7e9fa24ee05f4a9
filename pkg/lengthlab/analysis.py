"""
Gradient oracles for the softmax layer.

Checks, by analytic formulas and by central finite differences, in which
direction the clipped loss moves the terminal token's logit and when a short
response receives a larger gradient than a long one.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .core import TabularSoftmaxPolicy, Trajectory, softmax

DEFAULT_STEP = 1e-5
MIN_STEP, MAX_STEP = 1e-8, 1e-3


@dataclass
class GradReport:
    """Analytic and finite-difference gradients side by side."""
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_diff: float
    h: float

    def __post_init__(self):
        if np.shape(self.analytic) != np.shape(self.numeric):
            raise ValueError("Analytic and numeric gradients differ in shape")
        if not self.h > 0:
            raise ValueError("Finite-difference step must be positive")


@dataclass(frozen=True)
class ConcisenessInstance:
    """
    Two responses sharing their first-token context.

    Attributes:
        T_S, T_L (int): Lengths of the short and the long response.
        rho_S, rho_L (float): Importance ratios of their first tokens.
        pi (tuple): Policy distribution at the shared context.
        k_S, k_L (int): First tokens of the two responses.
        kappa_tilde (float): Jacobian distortion factor, 1 for identity.
        clip (float): Clip range; both ratios stay below ``1 + clip``.
    """
    T_S: int
    T_L: int
    rho_S: float
    rho_L: float
    pi: Tuple[float, ...]
    k_S: int
    k_L: int
    kappa_tilde: float = 1.0
    clip: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "pi", tuple(float(p) for p in self.pi))
        if not self.T_L > self.T_S >= 1:
            raise ValueError(f"Need T_L > T_S >= 1, got {self.T_S}, {self.T_L}")
        if not (self.rho_S < 1 + self.clip and self.rho_L < 1 + self.clip):
            raise ValueError("Ratios must stay below 1 + clip")
        if not (0 <= self.k_S < len(self.pi) and 0 <= self.k_L < len(self.pi)):
            raise ValueError("First tokens out of range")


def softmax_grad_norm(pi: Sequence[float], k: int,
                      logger_name: str = "lengthlab_logger") -> float:
    """
    Norm of the softmax-layer gradient of ``log pi(k)``.

    ``f(k) = [(1 - pi(k))^2 + sum_{j != k} pi(j)^2]^(1/2)``, i.e.
    ``||e_k - pi||``.

    Raises:
        ValueError: If k is not a token of the distribution.
    """
    p = np.asarray(pi, dtype=float)
    if not 0 <= k < p.size:
        logger = logging.getLogger(logger_name)
        logger.warning(f"Token {k} outside a distribution of size {p.size}")
        raise ValueError(f"Token {k} out of range for K={p.size}")
    others = np.delete(p, k)
    return float(np.sqrt((1.0 - p[k]) ** 2 + np.sum(others ** 2)))


def log_softmax_grad(logits: Sequence[float], k: int,
                     temperature: float = 1.0) -> np.ndarray:
    """Analytic gradient of ``log softmax(z / temperature)[k]``."""
    pi = softmax(logits, temperature)
    e_k = np.zeros_like(pi)
    e_k[k] = 1.0
    return (e_k - pi) / temperature


def finite_diff_gradient(fn: Callable[[np.ndarray], float],
                         logits: Sequence[float], h: float = DEFAULT_STEP,
                         logger_name: str = "lengthlab_logger") -> np.ndarray:
    """
    Central-difference gradient of a scalar function of the logits.

    Args:
        fn (callable): Scalar function of a logit vector.
        logits (array-like): Point of evaluation.
        h (float): Step in [1e-8, 1e-3].

    Returns:
        np.ndarray: ``(f(z + h e_j) - f(z - h e_j)) / (2h)`` per coordinate.

    Raises:
        ValueError: On a step outside the range or a non-finite function value.
    """
    logger = logging.getLogger(logger_name)
    if not MIN_STEP <= h <= MAX_STEP:
        logger.warning(f"Finite-difference step {h} outside [{MIN_STEP}, {MAX_STEP}]")
        raise ValueError(f"h must be in [{MIN_STEP}, {MAX_STEP}], got {h}")
    z0 = np.asarray(logits, dtype=float)
    grad = np.zeros(z0.size)
    for j in range(z0.size):
        z = z0.copy()
        z[j] = z0[j] + h
        f_plus = fn(z)
        z[j] = z0[j] - h
        f_minus = fn(z)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            logger.warning(f"Non-finite function value at coordinate {j}")
            raise ValueError(f"Function is not finite around coordinate {j}")
        # Centered differences:
        grad[j] = (f_plus - f_minus) / (2 * h)
    return grad


def gradient_check(fn: Callable[[np.ndarray], float],
                   grad_fn: Callable[[np.ndarray], np.ndarray],
                   logits: Sequence[float],
                   h: float = DEFAULT_STEP) -> GradReport:
    """Compare an analytic gradient with central differences."""
    analytic = np.asarray(grad_fn(np.asarray(logits, dtype=float)), dtype=float)
    numeric = finite_diff_gradient(fn, logits, h)
    return GradReport(analytic, numeric,
                      float(np.max(np.abs(analytic - numeric))), h)


def prolixity_direction(policy: TabularSoftmaxPolicy, traj: Trajectory,
                        advantage: float, clip: float = 0.2,
                        h: float = DEFAULT_STEP,
                        logger_name: str = "lengthlab_logger") -> dict:
    """
    Derivative of a single-response GRPO loss w.r.t. the terminal logit.

    The group, and therefore the advantage, is fixed, and only the terminal
    position's logits move; every other ratio stays at one. Evaluated at
    theta = theta_old, where clipping is inactive.

    Args:
        policy (TabularSoftmaxPolicy): Policy at theta_old.
        traj (Trajectory): Response ending with the terminal token.
        advantage (float): Group advantage of the response.
        clip (float): Clip range.
        h (float): Finite-difference step.

    Returns:
        dict: ``dL_dlogit_tau`` (analytic), ``numeric``, ``relative_error``
              and ``direction_ok``: a negative advantage must give a
              positive derivative (lowering the terminal logit lowers the
              loss) and a positive advantage a negative one.

    Raises:
        ValueError: If the response does not end with the terminal token or
                    the terminal probability is 0 or 1.
    """
    logger = logging.getLogger(logger_name)
    tau = policy.vocab.terminal_token
    if traj.tokens[-1] != tau:
        logger.warning("prolixity_direction needs a response ending in the terminal token")
        raise ValueError("The trajectory must end with the terminal token")
    z_old = policy.logits_for(traj.problem_id, traj.tokens[:-1]).copy()
    temperature = policy.temperature
    pi_old = softmax(z_old, temperature)[tau]
    if not 0 < pi_old < 1:
        logger.warning(f"Degenerate terminal probability {pi_old}")
        raise ValueError("The terminal probability must lie strictly in (0, 1)")
    T = traj.T

    def loss(z: np.ndarray) -> float:
        rho = np.ones(T)
        rho[-1] = softmax(z, temperature)[tau] / pi_old
        clipped = np.clip(rho, 1 - clip, 1 + clip)
        if advantage >= 0:
            alpha = np.minimum(rho, clipped)
        else:
            alpha = np.maximum(rho, clipped)
        return float(-np.mean(alpha * advantage))

    analytic = -advantage * (1.0 - pi_old) / (T * temperature)
    numeric = float(finite_diff_gradient(loss, z_old, h)[tau])
    scale = max(abs(analytic), 1e-300)
    if advantage < 0:
        sign_ok = analytic > 0 and numeric > 0
    elif advantage > 0:
        sign_ok = analytic < 0 and numeric < 0
    else:
        sign_ok = analytic == 0 and abs(numeric) < 1e-9
    return {
        "dL_dlogit_tau": float(analytic),
        "numeric": numeric,
        "relative_error": abs(analytic - numeric) / scale if analytic else abs(numeric),
        "direction_ok": bool(sign_ok),
    }


def gradient_norms(inst: ConcisenessInstance,
                   temperature: float = 1.0) -> Tuple[float, float]:
    """
    Softmax-layer gradient norms of the short and the long response.

    ``rho f(k) / (T * temperature)`` for each; a shared advantage factor is
    left out since it cancels in the comparison.
    """
    norm_S = inst.rho_S * softmax_grad_norm(inst.pi, inst.k_S) / (inst.T_S * temperature)
    norm_L = inst.rho_L * softmax_grad_norm(inst.pi, inst.k_L) / (inst.T_L * temperature)
    return norm_S, norm_L


def condition_number(jacobian: np.ndarray) -> float:
    """Ratio of extreme singular values; inf when J^T has a null space."""
    J = np.asarray(jacobian, dtype=float)
    if J.shape[0] > J.shape[1]:
        return float("inf")
    s = np.linalg.svd(J, compute_uv=False)
    if s.min() <= s.max() * 1e-14:
        return float("inf")
    return float(s.max() / s.min())


def implied_kappa(jacobian: np.ndarray, u_short: np.ndarray,
                  u_long: np.ndarray) -> float:
    """Distortion ``(||J^T u_L|| / ||u_L||) / (||J^T u_S|| / ||u_S||)``."""
    J = np.asarray(jacobian, dtype=float)
    gain_S = np.linalg.norm(J.T @ u_short) / np.linalg.norm(u_short)
    gain_L = np.linalg.norm(J.T @ u_long) / np.linalg.norm(u_long)
    if gain_S == 0:
        return float("inf")
    return float(gain_L / gain_S)


def conciseness_compare(inst: ConcisenessInstance,
                        jacobian: Optional[np.ndarray] = None) -> dict:
    """
    Whether the shorter response receives the stronger gradient.

    Evaluates ``lhs = rho_S f(k_S)`` against
    ``rhs = (T_S / T_L) kappa_tilde rho_L f(k_L)``; the short response wins on
    strict inequality. With a Jacobian (K x N, logits to parameters) the
    distortion is computed from it, the true parameter-gradient norms
    ``rho ||J^T (e_k - pi)|| / T`` are reported and kappa_tilde is checked
    against ``[1/kappa(J), kappa(J)]``.

    Returns:
        dict: ``lhs``, ``rhs``, ``shorter_wins`` and, with a Jacobian,
              ``grad_norm_short``, ``grad_norm_long``, ``kappa_tilde``,
              ``kappa``, ``bracket_holds``, ``bracket_unbounded``.
    """
    pi = np.asarray(inst.pi)
    f_S = softmax_grad_norm(pi, inst.k_S)
    f_L = softmax_grad_norm(pi, inst.k_L)
    kappa_tilde = inst.kappa_tilde
    result = {}

    if jacobian is not None:
        J = np.asarray(jacobian, dtype=float)
        if J.shape[0] != pi.size:
            raise ValueError(f"Jacobian must have {pi.size} rows, got {J.shape[0]}")
        u_S = np.eye(pi.size)[inst.k_S] - pi
        u_L = np.eye(pi.size)[inst.k_L] - pi
        kappa_tilde = implied_kappa(J, u_S, u_L)
        kappa = condition_number(J)
        unbounded = not np.isfinite(kappa)
        holds = unbounded or \
            (1.0 / kappa) * (1 - 1e-12) <= kappa_tilde <= kappa * (1 + 1e-12)
        result.update({
            "grad_norm_short": float(inst.rho_S * np.linalg.norm(J.T @ u_S) / inst.T_S),
            "grad_norm_long": float(inst.rho_L * np.linalg.norm(J.T @ u_L) / inst.T_L),
            "kappa_tilde": kappa_tilde,
            "kappa": kappa,
            "bracket_holds": bool(holds),
            "bracket_unbounded": bool(unbounded),
        })

    lhs = inst.rho_S * f_S
    rhs = (inst.T_S / inst.T_L) * kappa_tilde * inst.rho_L * f_L
    result.update({"lhs": float(lhs), "rhs": float(rhs),
                   "shorter_wins": bool(lhs > rhs)})
    return result


def clip_gate_check(rho: float, clip: float = 0.2) -> bool:
    """True when a positive-advantage token is clipped, i.e. its gradient is zero."""
    return bool(rho >= 1.0 + clip - 1e-12)
