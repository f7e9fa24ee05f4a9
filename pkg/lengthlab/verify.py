"""
Randomised verification suites for the advantage, loss and gradient algebra.

Every suite draws its instances from ``derive_seed(seed, suite, i)`` so a
report is reproducible, and returns a ``SuiteReport``. The suite names are
the ones accepted by ``lengthlab verify --suite``.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from .analysis import (ConcisenessInstance, conciseness_compare,
                       gradient_norms, prolixity_direction,
                       softmax_grad_norm)
from .core import TabularSoftmaxPolicy, Trajectory, Vocab, derive_seed, softmax
from .gae_ppo import (GaeConfig, advantage_report, fixed_sign_threshold,
                      gae_advantages, gae_forward, loss_follows_S_check,
                      mean_advantage_S, mean_advantage_prediction, ppo_loss,
                      reindexed_advantage_sum, td_errors, value_update)
from .grpo import binary_std, closed_form_advantage, group_advantage

EXACT_TOL = 1e-10
FD_REL_TOL = 1e-5

# Group advantages as published for binary rewards, (N, k) -> (r = 1, r = 0).
PUBLISHED_ADVANTAGES = {
    (8, 1): (2.6458, -0.3780), (8, 2): (1.7321, -0.5774),
    (8, 3): (1.2910, -0.7746), (8, 5): (0.7746, -1.2910),
    (8, 6): (0.5774, -1.7321), (8, 7): (0.3780, -2.6458),
    (16, 1): (3.8730, -0.2582), (16, 2): (2.6458, -0.3780),
    (16, 3): (2.0801, -0.4961), (16, 13): (0.4961, -2.0801),
    (16, 14): (0.3780, -2.6458), (16, 15): (0.2582, -3.8730),
    (64, 1): (7.9373, -0.1260), (64, 2): (5.5902, -0.1796),
    (64, 3): (4.5255, -0.2182), (64, 61): (0.2182, -4.5255),
    (64, 62): (0.1796, -5.5902), (64, 63): (0.1260, -7.9373),
    (256, 1): (15.9687, -0.0626), (256, 2): (11.2900, -0.0886),
    (256, 3): (9.2085, -0.1086), (256, 253): (0.1086, -9.2085),
    (256, 254): (0.0886, -11.2900), (256, 255): (0.0626, -15.9687),
}

# sqrt(N - 1) / N rounded to four places
SIGMA_K1 = {8: 0.3307, 16: 0.2421, 64: 0.1240, 256: 0.0624}


@dataclass
class SuiteReport:
    """
    Outcome of one verification suite.

    Attributes:
        suite (str): Suite name.
        instances (int): Instances drawn per property.
        failures (int): Failed checks over all properties.
        max_violation (float): Largest deviation over all properties.
        properties (dict): Property name -> largest deviation measured.
        details (dict): Informational values that do not count as failures.
    """
    suite: str
    instances: int
    failures: int = 0
    max_violation: float = 0.0
    properties: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def check(self, prop: str, deviation: float, ok: bool) -> None:
        """Record one check of a property."""
        deviation = float(deviation)
        self.properties[prop] = max(self.properties.get(prop, 0.0), deviation)
        self.max_violation = max(self.max_violation, deviation)
        if not ok:
            self.failures += 1

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, suite_index: int, i: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, suite_index, i))


def _draw_lam(rng: np.random.Generator, low: float = 0.05) -> float:
    return 1.0 if rng.random() < 0.2 else float(rng.uniform(low, 0.99))


def _dummy_trajectory(T: int, old_probs=None) -> Trajectory:
    return Trajectory(tuple([0] * T), np.ones(T) if old_probs is None else old_probs)


def mean_advantage_suite(n_instances: int = 1000, seed: int = 0,
                         clip: float = 0.2) -> SuiteReport:
    """
    Mean advantage S against its closed-form prediction and the loss bracket.

    Properties: ``exact`` (constant critic, S equals the prediction),
    ``epsilon_bound`` (random-walk critic with steps bounded by epsilon),
    ``sign_law`` (negative R gives a positive loss at identity ratio) and
    ``bracket_mixed`` / ``bracket_positive`` / ``bracket_negative`` (ratios
    drawn from [0.5, 2]).
    """
    report = SuiteReport("mean-advantage", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 0, i)
        T = int(rng.integers(1, 65))
        lam = _draw_lam(rng)
        config = GaeConfig(lam=lam, clip=clip)

        # constant critic: every pre-terminal TD error is zero
        R = float(rng.uniform(-2.0, 2.0))
        c = float(rng.uniform(-1.0, 1.0))
        rewards = np.zeros(T)
        rewards[-1] = R + c
        exact = advantage_report(_dummy_trajectory(T), np.full(T, c), config, rewards)
        predicted = mean_advantage_prediction(R, T, lam)["S_leading"]
        err = abs(exact.S - predicted)
        report.check("exact", err, err <= EXACT_TOL * max(1.0, abs(R)))
        if abs(R) > 1e-9:
            report.check("sign_law", 0.0, np.sign(exact.L) == -np.sign(R))

        eps = float(rng.uniform(0.0, 0.2))
        walk = np.concatenate([[0.0], np.cumsum(rng.uniform(-eps, eps, T - 1))])
        values = walk + rng.uniform(-1.0, 1.0)
        rewards = np.zeros(T)
        rewards[-1] = rng.uniform(-1.0, 1.0)
        noisy = advantage_report(_dummy_trajectory(T), values, config, rewards)
        prediction = mean_advantage_prediction(noisy.R, T, lam, noisy.epsilon_bound)
        excess = abs(noisy.S - prediction["S_leading"]) - prediction["error_bound"]
        report.check("epsilon_bound", max(excess, 0.0), excess <= EXACT_TOL)

        rho = rng.uniform(0.5, 2.0, T)
        old = rng.uniform(0.2, 0.45, T)
        traj = _dummy_trajectory(T, old)
        for mode in ("mixed", "positive", "negative"):
            a = rng.normal(0.0, 1.0, T)
            if mode == "positive":
                a = np.abs(a) + 1e-3
            elif mode == "negative":
                a = -(np.abs(a) + 1e-3)
            L, _ = ppo_loss(traj, rho * old, a, clip)
            S = mean_advantage_S(a)
            check = loss_follows_S_check(L, S, a, rho.min(), rho.max(), clip)
            excess = abs(L - S) - check["bound"]
            report.check(f"bracket_{mode}", max(excess, 0.0), check["holds"])
    return report


def _terminal_instance(rng: np.random.Generator):
    K = int(rng.integers(3, 9))
    vocab = Vocab(size=K, answer_tokens=(K - 2,), terminal_token=K - 1)
    temperature = float(rng.uniform(0.5, 2.0))
    z = rng.normal(0.0, 1.0, K)
    p_tau = rng.uniform(0.05, 0.95)
    rest = np.logaddexp.reduce(z[:-1] / temperature)
    z[-1] = temperature * (np.log(p_tau / (1.0 - p_tau)) + rest)
    policy = TabularSoftmaxPolicy(vocab, temperature, context_horizon=0,
                                  condition_on_problem=False,
                                  logits={("", ()): z})
    T = int(rng.integers(1, 33))
    tokens = [int(t) for t in rng.integers(0, K - 1, T - 1)] + [K - 1]
    traj = Trajectory(tuple(tokens), policy.token_probs("", tokens))
    advantage = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 3.0))
    return policy, traj, advantage


def terminal_direction_suite(n_instances: int = 1000, seed: int = 0,
                             clip: float = 0.2) -> SuiteReport:
    """Sign of the terminal-logit derivative and its finite-difference check."""
    report = SuiteReport("terminal-direction", n_instances)
    for i in range(n_instances):
        policy, traj, advantage = _terminal_instance(_rng(seed, 1, i))
        result = prolixity_direction(policy, traj, advantage, clip)
        report.check("sign", 0.0 if result["direction_ok"] else 1.0,
                     result["direction_ok"])
        report.check("finite_difference", result["relative_error"],
                     result["relative_error"] <= FD_REL_TOL)
    return report


def _conciseness_instance(rng: np.random.Generator) -> ConcisenessInstance:
    K = int(rng.integers(2, 17))
    T_S = int(rng.integers(1, 51))
    rho_S, rho_L = rng.uniform(0.5, 1.19, 2)
    k_S, k_L = rng.integers(0, K, 2)
    return ConcisenessInstance(
        T_S=T_S, T_L=int(rng.integers(T_S + 1, T_S + 201)),
        rho_S=float(rho_S), rho_L=float(rho_L),
        pi=tuple(softmax(rng.normal(0.0, 1.0, K))),
        k_S=int(k_S), k_L=int(k_L))


def _well_conditioned_jacobian(rng: np.random.Generator, K: int) -> np.ndarray:
    N = int(rng.integers(K, 33))
    q1, _ = np.linalg.qr(rng.normal(size=(K, K)))
    q2, _ = np.linalg.qr(rng.normal(size=(N, N)))
    return q1 @ np.diag(rng.uniform(1.0, 4.0, K)) @ q2[:K]


def conciseness_suite(n_instances: int = 1000, seed: int = 0,
                      n_jacobians: int = 100) -> SuiteReport:
    """
    Short-versus-long gradient comparison.

    Properties: ``identity`` (inequality against direct norms with J = I),
    ``temperature`` (decision unchanged for temperatures 0.1 and 10),
    ``jacobian_bracket`` and ``jacobian_decision`` (random well-conditioned
    Jacobians).
    """
    report = SuiteReport("conciseness", n_instances)
    ties = 0
    for i in range(n_instances):
        rng = _rng(seed, 2, i)
        inst = _conciseness_instance(rng)
        result = conciseness_compare(inst)
        norm_S, norm_L = gradient_norms(inst)
        scale = max(norm_S, norm_L, 1e-300)
        err = abs((norm_S - norm_L) - (result["lhs"] - result["rhs"]) / inst.T_S) / scale
        if abs(norm_S - norm_L) <= 1e-12 * scale:
            ties += 1
            report.check("identity", err, err <= EXACT_TOL)
            continue
        report.check("identity", err, err <= EXACT_TOL
                     and result["shorter_wins"] == (norm_S > norm_L))
        for c in (0.1, 10.0):
            scaled_S, scaled_L = gradient_norms(inst, temperature=c)
            flipped = (scaled_S > scaled_L) != result["shorter_wins"]
            report.check("temperature", float(flipped), not flipped)

    for i in range(min(n_jacobians, n_instances)):
        rng = _rng(seed, 3, i)
        inst = _conciseness_instance(rng)
        J = _well_conditioned_jacobian(rng, len(inst.pi))
        result = conciseness_compare(inst, J)
        kappa_tilde, kappa = result["kappa_tilde"], result["kappa"]
        excess = max(1.0 / kappa - kappa_tilde, kappa_tilde - kappa, 0.0)
        report.check("jacobian_bracket", excess, result["bracket_holds"])
        direct = result["grad_norm_short"] > result["grad_norm_long"]
        report.check("jacobian_decision", float(direct != result["shorter_wins"]),
                     direct == result["shorter_wins"])
    report.details["ties_skipped"] = ties
    return report


def fixed_sign_suite(n_instances: int = 1000, seed: int = 0) -> SuiteReport:
    """Every advantage takes the sign of R once ``|R| > epsilon * Phi``."""
    report = SuiteReport("fixed-sign", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 4, i)
        T = int(rng.integers(1, 65))
        lam = _draw_lam(rng, low=0.5)
        eps = float(rng.uniform(0.01, 0.5))
        phi = fixed_sign_threshold(lam, T)
        sign = float(rng.choice([-1.0, 1.0]))
        magnitude = eps * phi * rng.uniform(1.01, 3.0) if phi > 0 \
            else rng.uniform(0.1, 1.0)
        deltas = rng.uniform(-eps, eps, T)
        deltas[-1] = sign * magnitude
        advantages = gae_advantages(deltas, lam)
        worst = float(np.max(np.maximum(-sign * advantages, 0.0)))
        report.check("fixed_sign", worst, bool(np.all(sign * advantages > 0)))

        phis = [fixed_sign_threshold(lam, t) for t in range(1, T + 1)]
        drop = max([0.0] + [a - b for a, b in zip(phis, phis[1:])])
        report.check("monotone_in_T", drop, drop <= 0.0)
    return report


def grpo_algebra_suite(n_instances: int = 1000, seed: int = 0) -> SuiteReport:
    """
    Group advantage algebra for binary rewards.

    Properties: ``table`` (group advantages of the tabulated groups equal the
    closed form), ``sigma`` (k = 1 standard deviations), ``closed_form`` (every
    group with N <= 256), ``scale_invariance``, ``mean_zero`` and
    ``sigma_bounds``. Published cells that disagree with the closed form by
    more than 1e-4 are listed in ``details``.
    """
    report = SuiteReport("grpo-algebra", n_instances)
    mismatched = []
    for (N, k), published in sorted(PUBLISHED_ADVANTAGES.items()):
        adv = group_advantage([1.0] * k + [0.0] * (N - k))
        expected = (closed_form_advantage(N, k, 1), closed_form_advantage(N, k, 0))
        err = max(abs(adv[0] - expected[0]), abs(adv[-1] - expected[1]))
        report.check("table", err, err <= 1e-4)
        if max(abs(e - p) for e, p in zip(expected, published)) > 1e-4:
            mismatched.append([N, k])
    report.details["published_cells"] = len(PUBLISHED_ADVANTAGES)
    report.details["published_mismatches"] = mismatched

    for N, sigma in SIGMA_K1.items():
        err = abs(binary_std(N, 1) - sigma)
        report.check("sigma", err, err <= 1e-4)

    for N in range(2, 257):
        for k in range(1, N):
            adv = group_advantage([1.0] * k + [0.0] * (N - k))
            err = max(abs(adv[0] - closed_form_advantage(N, k, 1)),
                      abs(adv[-1] - closed_form_advantage(N, k, 0)))
            report.check("closed_form", err, err <= EXACT_TOL)
            sigma = binary_std(N, k)
            report.check("sigma_bounds", max(sigma - 0.5, 0.0), 0.0 <= sigma <= 0.5)

    for i in range(n_instances):
        rng = _rng(seed, 5, i)
        G = int(rng.integers(2, 65))
        rewards = rng.normal(0.0, 1.0, G)
        adv = group_advantage(rewards)
        shifted = group_advantage(rng.uniform(0.1, 10.0) * rewards + rng.normal())
        err = float(np.max(np.abs(shifted - adv)))
        report.check("scale_invariance", err, err <= 1e-9)
        total = abs(float(adv.sum()))
        report.check("mean_zero", total, total <= EXACT_TOL * G)
    return report


def gae_oracle_suite(n_instances: int = 1000, seed: int = 0) -> SuiteReport:
    """Backward recursion, forward double sum and re-indexed sum agree."""
    report = SuiteReport("gae-oracle", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 6, i)
        T = int(rng.integers(1, 65))
        lam = _draw_lam(rng, low=0.01)
        deltas = rng.normal(0.0, 1.0, T)
        scale = max(1.0, float(np.abs(deltas).sum()))
        backward = gae_advantages(deltas, lam)
        err = float(np.max(np.abs(backward - gae_forward(deltas, lam)))) / scale
        report.check("forward_sum", err, err <= EXACT_TOL)
        err = abs(backward.sum() - reindexed_advantage_sum(deltas, lam)) / scale
        report.check("reindexed_sum", err, err <= EXACT_TOL)
        if lam == 1.0:
            suffix = np.cumsum(deltas[::-1])[::-1]
            err = float(np.max(np.abs(backward - suffix))) / scale
            report.check("suffix_sum", err, err <= EXACT_TOL)
    return report


def value_equilibrium_suite(n_instances: int = 100, seed: int = 0,
                            max_iter: int = 10000) -> SuiteReport:
    """
    Anchored critic regression settles between zero and the target.

    Positive targets are under-estimated and negative targets
    over-estimated; the limit is ``target / (1 + kl_weight)``.
    """
    report = SuiteReport("value-equilibrium", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 7, i)
        target = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 3.0))
        kl_weight = float(rng.uniform(0.05, 2.0))
        lr = float(rng.uniform(0.1, 0.5))
        v = np.zeros(1)
        for _ in range(max_iter):
            new = value_update(v, [target], lr, kl_weight)
            done = abs(new[0] - v[0]) < 1e-14
            v = new
            if done:
                break
        limit = float(v[0])
        between = 0.0 < limit / target < 1.0
        err = abs(limit - target / (1.0 + kl_weight))
        report.check("between_zero_and_target", 0.0 if between else abs(limit),
                     between)
        report.check("limit", err, err <= 1e-8)
    return report


def td_errors_suite(n_instances: int = 1000, seed: int = 0) -> SuiteReport:
    """Terminal TD error equals the reward minus the last value."""
    report = SuiteReport("td-errors", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 8, i)
        T = int(rng.integers(1, 65))
        rewards, values = rng.normal(size=T), rng.normal(size=T)
        deltas = td_errors(rewards, values)
        err = abs(deltas[-1] - (rewards[-1] - values[-1]))
        report.check("terminal_delta", err, err <= EXACT_TOL)
    return report


def f_identity_suite(n_instances: int = 1000, seed: int = 0) -> SuiteReport:
    """Softmax gradient norm equals ``||e_k - pi||``."""
    report = SuiteReport("f-identity", n_instances)
    for i in range(n_instances):
        rng = _rng(seed, 9, i)
        K = int(rng.integers(2, 33))
        pi = softmax(rng.normal(0.0, 2.0, K))
        k = int(rng.integers(0, K))
        err = abs(softmax_grad_norm(pi, k) - np.linalg.norm(np.eye(K)[k] - pi))
        report.check("f_identity", err, err <= 1e-12)
    return report


SUITES: Dict[str, Callable[..., SuiteReport]] = {
    "mean-advantage": mean_advantage_suite,
    "terminal-direction": terminal_direction_suite,
    "conciseness": conciseness_suite,
    "fixed-sign": fixed_sign_suite,
    "grpo-algebra": grpo_algebra_suite,
    "gae-oracle": gae_oracle_suite,
    "value-equilibrium": value_equilibrium_suite,
    "f-identity": f_identity_suite,
    "td-errors": td_errors_suite,
}

# command-line names of the first four suites
SUITE_ALIASES: Dict[str, str] = {
    "theorem1": "mean-advantage",
    "theorem2": "terminal-direction",
    "theorem3": "conciseness",
    "lemma": "fixed-sign",
}


def run_suites(names: Sequence[str], n_instances: int = 1000, seed: int = 0,
               logger_name: str = "lengthlab_logger") -> List[SuiteReport]:
    """
    Run the named suites in order; ``"all"`` expands to every suite and the
    names of ``SUITE_ALIASES`` resolve to the suite they stand for.

    Raises:
        ValueError: On an unknown suite name.
    """
    logger = logging.getLogger(logger_name)
    if "all" in names:
        names = list(SUITES)
    names = [SUITE_ALIASES.get(n, n) for n in names]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        logger.warning(f"Unknown verification suites: {unknown}")
        raise ValueError(f"Unknown suite(s) {unknown}, choose from "
                         f"{sorted(SUITES) + sorted(SUITE_ALIASES) + ['all']}")
    reports = []
    for name in names:
        if name == "value-equilibrium":
            report = SUITES[name](min(n_instances, 100), seed)
        else:
            report = SUITES[name](n_instances, seed)
        if report.passed:
            logger.info(f"Suite {name}: {report.instances} instances, "
                        f"max deviation {report.max_violation:.3e}")
        else:
            logger.error(f"Suite {name}: {report.failures} failed checks, "
                         f"properties {report.properties}")
        reports.append(report)
    return reports
