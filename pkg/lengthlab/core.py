"""
Domain types and the tabular softmax policy of the synthetic problem MDP.

A response is a token sequence over a tiny vocabulary made of filler
("reasoning") tokens, answer tokens and one terminal token. A response is
answered in the boxed format when an answer token is immediately followed by
the terminal token.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

PPO_TERNARY = "PPO_TERNARY"
GRPO_BINARY = "GRPO_BINARY"

CORRECT = "correct"
WRONG = "answered_wrong"
NO_ANSWER = "no_answer"

# variant -> (correct, answered_wrong, no_answer)
DEFAULT_REWARDS = {
    PPO_TERNARY: (1.0, -0.5, -1.0),
    GRPO_BINARY: (1.0, 0.0, 0.0),
}

ContextKey = Tuple[str, Tuple[int, ...]]


def softmax(logits: Sequence[float], temperature: float = 1.0) -> np.ndarray:
    """
    Temperature-scaled softmax, stable under logit shifts.

    Args:
        logits (array-like): Finite logits.
        temperature (float): Positive temperature.

    Returns:
        np.ndarray: Probabilities that sum to one.

    Raises:
        ValueError: If the logits are not finite or the temperature is not
                    positive.
    """
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1 or z.size == 0 or not np.all(np.isfinite(z)):
        logging.getLogger("lengthlab_logger").warning(
            f"Invalid logits for softmax: {z}")
        raise ValueError("Logits must be a non-empty finite vector")
    if not temperature > 0 or not np.isfinite(temperature):
        logging.getLogger("lengthlab_logger").warning(
            f"Invalid temperature for softmax: {temperature}")
        raise ValueError(f"Temperature must be positive, got {temperature}")
    y = z / temperature
    y = y - y.max()
    e = np.exp(y)
    return e / e.sum()


def derive_seed(seed: int, *indices: int) -> int:
    """Independent integer seed for (seed, step, problem, index, ...)."""
    state = np.random.SeedSequence([int(seed), *[int(i) for i in indices]])
    return int(state.generate_state(1)[0])


@dataclass(frozen=True)
class Vocab:
    """
    Token layout of the MDP: fillers, answers and the terminal token.

    Attributes:
        size (int): Number of tokens K.
        answer_tokens (tuple): Token ids that count as answers.
        terminal_token (int): Token id that ends a response.
        filler_tokens (tuple): The remaining ids, derived when omitted.
    """
    size: int
    answer_tokens: Tuple[int, ...]
    terminal_token: int
    filler_tokens: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "answer_tokens",
                           tuple(int(a) for a in self.answer_tokens))
        if self.filler_tokens is None:
            fillers = tuple(i for i in range(self.size)
                            if i not in self.answer_tokens
                            and i != self.terminal_token)
            object.__setattr__(self, "filler_tokens", fillers)
        else:
            object.__setattr__(self, "filler_tokens",
                               tuple(int(f) for f in self.filler_tokens))

        if self.size < 3:
            raise ValueError(f"Vocabulary needs at least 3 tokens, got {self.size}")
        if not 0 <= self.terminal_token < self.size:
            raise ValueError(f"Terminal token {self.terminal_token} out of range")
        if self.terminal_token in self.answer_tokens:
            raise ValueError("The terminal token cannot be an answer token")
        parts = list(self.answer_tokens) + list(self.filler_tokens) \
            + [self.terminal_token]
        if sorted(parts) != list(range(self.size)):
            raise ValueError("Answer, filler and terminal tokens must "
                             f"partition [0, {self.size})")

    @classmethod
    def default(cls) -> "Vocab":
        """K = 8: fillers 0..4, answers 5 and 6, terminal 7."""
        return cls(size=8, answer_tokens=(5, 6), terminal_token=7)

    def is_answer(self, token: int) -> bool:
        return token in self.answer_tokens

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "answer_tokens": list(self.answer_tokens),
            "terminal_token": self.terminal_token,
            "filler_tokens": list(self.filler_tokens),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocab":
        fillers = data.get("filler_tokens")
        return cls(size=int(data["size"]),
                   answer_tokens=tuple(data["answer_tokens"]),
                   terminal_token=int(data["terminal_token"]),
                   filler_tokens=None if fillers is None else tuple(fillers))


@dataclass(frozen=True)
class Problem:
    """A problem: an optional correct answer token and a length limit."""
    id: str
    correct_answer: Optional[int] = None
    max_len: int = 32

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError(f"Problem {self.id}: max_len must be >= 2, "
                             f"got {self.max_len}")

    @property
    def solvable(self) -> bool:
        return self.correct_answer is not None

    def validate(self, vocab: Vocab) -> None:
        """Check the correct answer against the vocabulary."""
        if self.correct_answer is not None and \
                not vocab.is_answer(self.correct_answer):
            raise ValueError(f"Problem {self.id}: correct answer "
                             f"{self.correct_answer} is not an answer token")

    def to_dict(self) -> dict:
        return {"id": self.id, "correct_answer": self.correct_answer,
                "max_len": self.max_len}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Problem":
        answer = data.get("correct_answer")
        return cls(id=str(data["id"]),
                   correct_answer=None if answer is None else int(answer),
                   max_len=int(data.get("max_len", 32)))


@dataclass
class Trajectory:
    """
    One sampled response.

    Attributes:
        tokens (tuple): Sampled token ids, length T.
        old_probs (np.ndarray): Probability of each token under the sampling
                                policy.
        reward (float): Terminal reward, zero until scored.
        terminated (bool): True when the terminal token was emitted.
        problem_id (str): Problem the response answers.
        vocab (Vocab): Token layout the response was sampled under, used
                       when scoring it.
    """
    tokens: Tuple[int, ...]
    old_probs: np.ndarray
    reward: float = 0.0
    terminated: bool = False
    problem_id: str = ""
    vocab: Optional[Vocab] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.tokens = tuple(int(t) for t in self.tokens)
        self.old_probs = np.asarray(self.old_probs, dtype=float)
        if len(self.tokens) < 1:
            raise ValueError("A trajectory has at least one token")
        if self.old_probs.shape != (len(self.tokens),):
            raise ValueError("old_probs must have one entry per token")
        if np.any(self.old_probs <= 0) or np.any(self.old_probs > 1):
            raise ValueError("old_probs must lie in (0, 1]")

    @property
    def T(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "tokens": list(self.tokens),
            "old_probs": [float(p) for p in self.old_probs],
            "reward": float(self.reward),
            "terminated": bool(self.terminated),
        }


@dataclass(frozen=True)
class RewardScheme:
    """
    Terminal reward scheme with an optional per-step penalty.

    ``penalty_mode`` decides whether ``step_penalty * T`` is folded into the
    terminal reward ("terminal") or paid on every token ("per_token").
    """
    variant: str = PPO_TERNARY
    step_penalty: float = 0.0
    correct: Optional[float] = None
    answered_wrong: Optional[float] = None
    no_answer: Optional[float] = None
    penalty_mode: str = "terminal"

    def __post_init__(self):
        if self.variant not in DEFAULT_REWARDS:
            raise ValueError(f"Unknown reward variant: {self.variant}")
        if self.step_penalty > 0:
            raise ValueError("step_penalty must be <= 0")
        if self.penalty_mode not in ("terminal", "per_token"):
            raise ValueError(f"Unknown penalty mode: {self.penalty_mode}")
        defaults = DEFAULT_REWARDS[self.variant]
        for name, value in zip((CORRECT, WRONG, NO_ANSWER), defaults):
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)

    def value(self, outcome: str) -> float:
        return float(getattr(self, outcome))

    @property
    def max_abs_reward(self) -> float:
        return max(abs(self.correct), abs(self.answered_wrong),
                   abs(self.no_answer))


class TabularSoftmaxPolicy:
    """
    Softmax policy over a logit table keyed by (problem, last h tokens).

    Contexts without an entry use zero logits, i.e. the uniform policy.

    Attributes:
        vocab (Vocab): Token layout.
        temperature (float): Softmax temperature.
        context_horizon (int | None): Tokens of history in the key, None for
                                      the full history.
        condition_on_problem (bool): Whether the problem id is part of the key.
        logits (dict): Context key -> length-K logit vector.
    """

    def __init__(self, vocab: Vocab, temperature: float = 1.0,
                 context_horizon: Optional[int] = None,
                 condition_on_problem: bool = True,
                 logits: Optional[Mapping[ContextKey, Sequence[float]]] = None):
        if not temperature > 0:
            raise ValueError(f"Temperature must be positive, got {temperature}")
        if context_horizon is not None and context_horizon < 0:
            raise ValueError("context_horizon must be >= 0 or None")
        self.vocab = vocab
        self.temperature = float(temperature)
        self.context_horizon = context_horizon
        self.condition_on_problem = condition_on_problem
        self.logits: Dict[ContextKey, np.ndarray] = {}
        for key, vector in (logits or {}).items():
            self.set_logits(key, vector)

    def key(self, problem_id: str, history: Sequence[int]) -> ContextKey:
        pid = problem_id if self.condition_on_problem else ""
        if self.context_horizon is None:
            ctx = tuple(history)
        elif self.context_horizon == 0:
            ctx = ()
        else:
            ctx = tuple(history[-self.context_horizon:])
        return (pid, ctx)

    def set_logits(self, key: ContextKey, vector: Sequence[float]) -> None:
        z = np.array(vector, dtype=float)
        if z.shape != (self.vocab.size,):
            raise ValueError(f"Logits for {key} must have length {self.vocab.size}")
        self.logits[(str(key[0]), tuple(int(t) for t in key[1]))] = z

    def logits_at(self, key: ContextKey) -> np.ndarray:
        z = self.logits.get(key)
        return np.zeros(self.vocab.size) if z is None else z

    def logits_for(self, problem_id: str, history: Sequence[int]) -> np.ndarray:
        return self.logits_at(self.key(problem_id, history))

    def probs_at(self, key: ContextKey) -> np.ndarray:
        return softmax(self.logits_at(key), self.temperature)

    def probs(self, problem_id: str, history: Sequence[int]) -> np.ndarray:
        return self.probs_at(self.key(problem_id, history))

    def token_probs(self, problem_id: str, tokens: Sequence[int]) -> np.ndarray:
        """Probability of every token of a response under this policy."""
        return np.array([self.probs(problem_id, tokens[:t])[a]
                         for t, a in enumerate(tokens)])

    def apply_update(self, grads: Mapping[ContextKey, np.ndarray],
                     lr: float) -> None:
        """Gradient descent step ``z -= lr * g`` on every keyed context."""
        for key, g in grads.items():
            self.logits[key] = self.logits_at(key) - lr * np.asarray(g)

    def copy(self) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(self.vocab, self.temperature,
                                    self.context_horizon,
                                    self.condition_on_problem,
                                    {k: v.copy() for k, v in self.logits.items()})

    def max_abs_diff(self, other: "TabularSoftmaxPolicy") -> float:
        """Largest logit difference over the contexts of both tables."""
        keys = set(self.logits) | set(other.logits)
        if not keys:
            return 0.0
        return float(max(np.max(np.abs(self.logits_at(k) - other.logits_at(k)))
                         for k in keys))

    def to_dict(self) -> dict:
        entries = [
            {"problem": pid, "context": list(ctx),
             "logits": [float(x) for x in z]}
            for (pid, ctx), z in sorted(self.logits.items())
        ]
        return {
            "vocab": self.vocab.to_dict(),
            "temperature": self.temperature,
            "context_horizon": self.context_horizon,
            "condition_on_problem": self.condition_on_problem,
            "logits": entries,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TabularSoftmaxPolicy":
        logits = {(e["problem"], tuple(e["context"])): e["logits"]
                  for e in data.get("logits", [])}
        return cls(Vocab.from_dict(data["vocab"]),
                   temperature=float(data.get("temperature", 1.0)),
                   context_horizon=data.get("context_horizon"),
                   condition_on_problem=bool(
                       data.get("condition_on_problem", True)),
                   logits=logits)


def format_policy(vocab: Vocab, temperature: float = 1.0,
                  answer_logit: float = 0.0,
                  favored_answer: Optional[int] = None,
                  favored_bias: float = 0.0,
                  terminal_gap: float = 8.0,
                  condition_on_problem: bool = False,
                  problems: Optional[Iterable[Problem]] = None
                  ) -> TabularSoftmaxPolicy:
    """
    Starting policy that reasons with fillers, then answers and stops.

    In thinking contexts (the start and after any filler) fillers have logit
    0, answer tokens ``answer_logit`` (plus ``favored_bias`` on
    ``favored_answer``) and the terminal token ``-terminal_gap``. After an
    answer token the terminal token has logit ``+terminal_gap``.

    Args:
        vocab (Vocab): Token layout.
        temperature (float): Policy temperature.
        answer_logit (float): Logit of the answer tokens while thinking.
        favored_answer (int): Answer token the policy prefers, if any.
        favored_bias (float): Extra logit of the favored answer.
        terminal_gap (float): Magnitude of the terminal token logits.
        condition_on_problem (bool): Key contexts by problem id.
        problems (iterable): Problems to key by, required when
                             ``condition_on_problem`` is set.

    Returns:
        TabularSoftmaxPolicy: Policy with a one-token context horizon.
    """
    if favored_answer is not None and not vocab.is_answer(favored_answer):
        raise ValueError(f"Favored answer {favored_answer} is not an answer token")
    if condition_on_problem:
        if problems is None:
            raise ValueError("Problems are needed for a problem-conditioned policy")
        pids = [p.id for p in problems]
    else:
        pids = [""]

    thinking = np.zeros(vocab.size)
    thinking[list(vocab.answer_tokens)] = answer_logit
    if favored_answer is not None:
        thinking[favored_answer] += favored_bias
    thinking[vocab.terminal_token] = -terminal_gap
    answered = np.zeros(vocab.size)
    answered[vocab.terminal_token] = terminal_gap

    policy = TabularSoftmaxPolicy(vocab, temperature, context_horizon=1,
                                  condition_on_problem=condition_on_problem)
    for pid in pids:
        policy.set_logits((pid, ()), thinking)
        for f in vocab.filler_tokens:
            policy.set_logits((pid, (f,)), thinking)
        for a in vocab.answer_tokens:
            policy.set_logits((pid, (a,)), answered)
    return policy


def _draw(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if idx >= probs.size:
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx


def sample_trajectory(policy: TabularSoftmaxPolicy, problem: Problem,
                      rng_seed: int, greedy: bool = False) -> Trajectory:
    """
    Sample one response until the terminal token or ``problem.max_len``.

    Args:
        policy (TabularSoftmaxPolicy): Sampling policy.
        problem (Problem): Problem being answered.
        rng_seed (int): Seed; identical seeds give identical trajectories.
        greedy (bool): Take the most likely token instead of sampling.

    Returns:
        Trajectory: Unscored trajectory with the sampling probabilities.
    """
    rng = np.random.default_rng(rng_seed)
    tau = policy.vocab.terminal_token
    tokens: List[int] = []
    probs_taken: List[float] = []
    terminated = False
    while len(tokens) < problem.max_len:
        p = policy.probs(problem.id, tokens)
        a = int(np.argmax(p)) if greedy else _draw(p, rng.random())
        tokens.append(a)
        probs_taken.append(float(p[a]))
        if a == tau:
            terminated = True
            break
    return Trajectory(tuple(tokens), np.array(probs_taken),
                      terminated=terminated, problem_id=problem.id,
                      vocab=policy.vocab)


def _scoring_vocab(traj: Trajectory, vocab: Optional[Vocab],
                   logger_name: str = "lengthlab_logger") -> Vocab:
    """
    Vocabulary a response is scored under: the one passed, else the one it
    was sampled under, else the default layout.

    Raises:
        ValueError: If the passed vocabulary differs from the sampling one or
                    the tokens do not fit the vocabulary.
    """
    logger = logging.getLogger(logger_name)
    if vocab is None:
        vocab = traj.vocab
    elif traj.vocab is not None and traj.vocab != vocab:
        logger.warning(f"Response to {traj.problem_id} scored under another vocabulary")
        raise ValueError("The response was sampled under a different vocabulary")
    if vocab is None:
        vocab = Vocab.default()
    if max(traj.tokens) >= vocab.size or \
            (traj.terminated and traj.tokens[-1] != vocab.terminal_token):
        logger.warning(f"Tokens {traj.tokens} do not fit vocabulary {vocab.to_dict()}")
        raise ValueError("The response does not fit the vocabulary; pass the "
                         "vocabulary it was sampled under")
    return vocab


def response_outcome(traj: Trajectory, problem: Problem,
                     vocab: Optional[Vocab] = None) -> str:
    """
    Classify a response as correct, answered wrong or unanswered.

    Raises:
        ValueError: If the response does not fit the vocabulary.
    """
    vocab = _scoring_vocab(traj, vocab)
    if not traj.terminated or traj.T < 2:
        return NO_ANSWER
    answer = traj.tokens[-2]
    if not vocab.is_answer(answer):
        return NO_ANSWER
    if problem.correct_answer is not None and answer == problem.correct_answer:
        return CORRECT
    return WRONG


def score_response(traj: Trajectory, problem: Problem, scheme: RewardScheme,
                   vocab: Optional[Vocab] = None) -> float:
    """
    Terminal reward of a response.

    Args:
        traj (Trajectory): Response to score.
        problem (Problem): Problem it answers.
        scheme (RewardScheme): Reward values and step penalty.
        vocab (Vocab): Token layout, the one the response was sampled under
                       when omitted.

    Returns:
        float: The reward; ``step_penalty * T`` is included unless the
               scheme pays the penalty per token.
    """
    reward = scheme.value(response_outcome(traj, problem, vocab))
    if scheme.penalty_mode == "terminal":
        reward += scheme.step_penalty * traj.T
    return reward


def token_rewards(traj: Trajectory, problem: Problem, scheme: RewardScheme,
                  vocab: Optional[Vocab] = None) -> np.ndarray:
    """Per-token reward vector; the score sits on the last token."""
    rewards = np.zeros(traj.T)
    if scheme.penalty_mode == "per_token":
        rewards += scheme.step_penalty
    rewards[-1] += score_response(traj, problem, scheme, vocab)
    return rewards


@dataclass(frozen=True)
class SolveRate:
    """Per-sample solve rate and the at-least-once statistic."""
    rate: float
    at_least_once: float
    n_samples: int

    def __float__(self) -> float:
        return self.rate


def estimate_pa(policy: TabularSoftmaxPolicy, problem: Problem,
                n_samples: int, rng_seed: int,
                logger_name: str = "lengthlab_logger") -> SolveRate:
    """
    Monte-Carlo estimate of how often the policy solves the problem.

    Args:
        policy (TabularSoftmaxPolicy): Policy to evaluate.
        problem (Problem): Problem to solve.
        n_samples (int): Number of sampled responses, at least one.
        rng_seed (int): Base seed, sample i uses ``derive_seed(rng_seed, i)``.

    Returns:
        SolveRate: Fraction of correct responses and ``1 - (1 - rate)**n``.

    Raises:
        ValueError: If ``n_samples`` is smaller than one.
    """
    logger = logging.getLogger(logger_name)
    if n_samples < 1:
        logger.warning(f"estimate_pa needs n_samples >= 1, got {n_samples}")
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not problem.solvable:
        return SolveRate(0.0, 0.0, n_samples)
    solved = 0
    for i in range(n_samples):
        traj = sample_trajectory(policy, problem, derive_seed(rng_seed, i))
        solved += response_outcome(traj, problem, policy.vocab) == CORRECT
    rate = solved / n_samples
    logger.debug(f"Problem {problem.id}: solve rate {rate:.4f} "
                 f"over {n_samples} samples")
    return SolveRate(rate, 1.0 - (1.0 - rate) ** n_samples, n_samples)


def dump_problems(vocab: Vocab, problems: Sequence[Problem]) -> dict:
    """JSON document with the vocabulary and the problems."""
    return {"vocab": vocab.to_dict(),
            "problems": [p.to_dict() for p in problems]}


def load_problems(document: Mapping) -> Tuple[Vocab, List[Problem]]:
    """Inverse of ``dump_problems``; answers are checked against the vocab."""
    vocab = Vocab.from_dict(document["vocab"])
    problems = [Problem.from_dict(p) for p in document["problems"]]
    for problem in problems:
        problem.validate(vocab)
    return vocab, problems
