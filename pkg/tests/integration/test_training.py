#
# Tests for the length dynamics of PPO and GRPO training runs
#
from dataclasses import replace

import numpy as np
import pytest

from lengthlab import config as lab_config
from lengthlab import core, env_train
from lengthlab.config import PolicyConfig, TrainConfig
from lengthlab.core import Problem, TabularSoftmaxPolicy, Vocab
from lengthlab.env_train import ProblemSet
from lengthlab.grpo import GrpoConfig


def class_set(difficulty, answer=None, n=2, max_len=32):
    problems = [Problem(f"{difficulty}-{i}", answer, max_len) for i in range(n)]
    return ProblemSet(Vocab.default(), problems,
                      {p.id: difficulty for p in problems})


@pytest.mark.slow
class TestUnsolvable():
    def test_ppo_lengthens(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        # without a critic every advantage stays negative
        config = TrainConfig(steps=100, actor_lr=2.0, critic_lr=0.0, seed=11)
        log = env_train.train(policy, problem_set, config)

        checks = env_train.dynamics_checks(log, problem_set)
        assert checks == {"accuracy_zero": True, "length_growth": True,
                          "loss_positive": True}, f'Checks failed: {checks}'
        assert (log.frame()["S"] > 0).all(), \
            'Negative advantages everywhere give a positive S'
        assert log.policy.max_abs_diff(policy) > 0

    def test_grpo_min_length_collapses(self):
        vocab = Vocab.default()
        reference = PolicyConfig().build(vocab, 0.6)
        # an actor that almost never answers, pulled back by the KL term only
        actor = PolicyConfig(answer_logit=-5.0).build(vocab, 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        config = TrainConfig(algorithm="GRPO", steps=100, seed=5,
                             grpo=GrpoConfig(kl_weight=1.0))
        log = env_train.train(actor, problem_set, config, reference=reference)

        checks = env_train.dynamics_checks(log, problem_set)
        assert checks == {"accuracy_zero": True, "policy_loss_zero": True,
                          "min_len_collapsed": True}, f'Checks failed: {checks}'
        assert log.collapse.all_wrong_rate == [1.0] * 100
        assert log.collapse.zero_advantage_rate == [1.0] * 100
        assert log.collapse.kl_dominance
        assert log.collapse.first_dominance_step is not None


@pytest.mark.slow
class TestFullySolvable():
    def test_grpo_zero_advantage(self):
        policy = PolicyConfig(favored_bias=4.0).build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.FULL, answer=5)
        config = TrainConfig(algorithm="GRPO", steps=60, seed=2)
        log = env_train.train(policy, problem_set, config)

        checks = env_train.dynamics_checks(log, problem_set)
        assert checks == {"zero_advantage": True}
        frame = log.group_frame()
        degenerate = frame[frame["k"] == frame["N"]]
        assert not degenerate.empty
        assert (degenerate["advantage_correct"] == 0).all()
        assert np.allclose(degenerate["policy_loss"], 0.0)


@pytest.mark.slow
class TestOccasionallySolvable():
    def test_ppo_shortens_and_keeps_accuracy(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = env_train.make_problem_set({"n_occasional": 4}, seed=2024,
                                                 policy=policy)
        log = env_train.train(policy, problem_set,
                              TrainConfig(steps=300, seed=2024))

        checks = env_train.dynamics_checks(log, problem_set)
        assert checks == {"length_reduced": True, "accuracy_preserved": True}, \
            f'Checks failed: {checks}'
        assert env_train.steps_to_reduction(log) is not None


class TestRecords():
    def test_ppo_records(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        log = env_train.train(policy, problem_set,
                              TrainConfig(steps=5, eval_every=2))
        frame = log.frame()
        assert frame["step"].tolist() == [0, 1, 2, 3, 4]
        assert np.allclose(frame["policy_loss"], frame["S"]), \
            'At ratio one the loss equals S'
        assert frame["greedy_accuracy"].notna().tolist() == \
            [True, False, True, False, True]
        assert frame["zero_advantage_rate"].isna().all()
        assert (frame["min_len"] <= frame["mean_len"]).all()
        assert (frame["max_len"] <= 32).all()
        assert log.values.max_abs() > 0, 'The critic should have moved'

    def test_grpo_records(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.OCCASIONAL, answer=6)
        log = env_train.train(policy, problem_set,
                              TrainConfig(algorithm="GRPO", steps=4))
        frame = log.frame()
        assert frame["value_loss"].isna().all()
        assert frame["S"].isna().all()
        assert ((frame["zero_advantage_rate"] >= 0)
                & (frame["zero_advantage_rate"] <= 1)).all()
        groups = log.group_frame()
        assert len(groups) == 4 * len(problem_set)
        assert (groups["N"] == 8).all()

    def test_per_token_kl_reward(self):
        vocab = Vocab.default()
        policy = PolicyConfig().build(vocab, 0.6)
        reference = PolicyConfig(favored_bias=0.0).build(vocab, 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        log = env_train.train(policy, problem_set,
                              TrainConfig(steps=2, kl_coef=0.1),
                              reference=reference)
        assert (log.frame()["kl"] > 0).all()

    def test_continue_from_critic(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        first = env_train.train(policy, problem_set, TrainConfig(steps=3))
        second = env_train.train(first.policy, problem_set, TrainConfig(steps=1),
                                 values=first.values)
        assert second.values is not first.values
        assert first.values.max_abs() > 0


class TestLambdaSweep():
    def test_report(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.UNSOLVABLE, n=1)
        result = env_train.lambda_sweep(problem_set, [0.9, 1.0],
                                        TrainConfig(steps=3), policy)
        report = result.report
        assert report["lam"].tolist() == [0.9, 1.0]
        assert list(result.logs) == [0.9, 1.0]
        assert list(report.columns) == ["lam", "overflow", "max_abs_target",
                                        "max_abs_reward", "steps_to_reduction",
                                        "initial_len", "final_len"]
        assert (report["max_abs_reward"] > 0).all()
        assert all(len(log) == 3 for log in result.logs.values())

    def test_shipped_sweep_overflows_at_one(self):
        spec = lab_config.load_experiment(
            lab_config.default_experiment_path("lambda_sweep"))
        problem_set = env_train.make_problem_set(spec.problems)
        policy = spec.policy.build(spec.vocabulary(), spec.train.temperature)
        # the first steps already sample near full-length responses
        config = replace(spec.train, steps=3)
        result = env_train.lambda_sweep(problem_set, spec.lambdas, config, policy)

        report = result.report.set_index("lam")
        assert report["overflow"].to_dict() == {0.95: False, 1.0: True}
        assert report.loc[1.0, "max_abs_target"] > \
            env_train.OVERFLOW_FACTOR * report.loc[1.0, "max_abs_reward"]
        assert report.loc[0.95, "max_abs_target"] < 4.0


class TestTwoPhase():
    def test_phase_two_starts_from_phase_one(self):
        vocab = Vocab.default()
        policy = PolicyConfig().build(vocab, 0.6)
        sets = {"phase1": class_set(env_train.UNSOLVABLE, n=1),
                "phase2": class_set(env_train.OCCASIONAL, answer=6, n=1)}
        configs = {"phase1": TrainConfig(steps=3, samples_per_problem=4),
                   "phase2": TrainConfig(steps=2, samples_per_problem=4,
                                         actor_lr=0.0)}
        result = env_train.two_phase(sets, configs, policy, eval_samples=20)
        assert result.log1.policy.max_abs_diff(policy) > 0
        assert result.log2.policy.max_abs_diff(result.log1.policy) == 0.0, \
            'A frozen phase 2 should keep the phase-1 policy'
        summary = result.summary
        assert summary["phase1_steps"] == 3 and summary["phase2_steps"] == 2
        assert summary["phase1_final_accuracy"] == 0.0
        assert summary["phase2_accuracy_start"] == summary["phase2_accuracy_end"]
        assert summary["accuracy_preserved"]


class TestZeroAdvantageGroups():
    def test_no_kl_leaves_policy(self):
        policy = PolicyConfig().build(Vocab.default(), 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        config = TrainConfig(algorithm="GRPO", steps=5,
                             grpo=GrpoConfig(kl_weight=0.0))
        log = env_train.train(policy, problem_set, config)
        assert log.collapse.zero_advantage_rate == [1.0] * 5
        assert (log.frame()["policy_loss"] == 0.0).all()
        assert log.policy.max_abs_diff(policy) == 0.0

    def test_kl_is_the_only_update(self):
        vocab = Vocab.default()
        reference = PolicyConfig().build(vocab, 0.6)
        actor = PolicyConfig(answer_logit=-5.0).build(vocab, 0.6)
        problem_set = class_set(env_train.UNSOLVABLE)
        finals = []
        for grpo in (GrpoConfig(kl_weight=0.5, clip=0.1),
                     GrpoConfig(kl_weight=0.5, clip=0.3, normalize_by_std=False,
                                normalize_by_length=False)):
            config = TrainConfig(algorithm="GRPO", steps=5, seed=3, grpo=grpo)
            finals.append(env_train.train(actor, problem_set, config,
                                          reference=reference).policy)
        assert finals[0].max_abs_diff(actor) > 0
        assert finals[0].max_abs_diff(finals[1]) == 0.0, \
            'Clip and normalisation act on advantages only'

    @pytest.mark.parametrize("window, first", [(2, 1), (5, None)])
    def test_collapse_window(self, window, first):
        vocab = Vocab.default()
        reference = PolicyConfig().build(vocab, 0.6)
        actor = PolicyConfig(answer_logit=-5.0).build(vocab, 0.6)
        config = TrainConfig(algorithm="GRPO", steps=3,
                             grpo=GrpoConfig(kl_weight=0.5, collapse_window=window))
        log = env_train.train(actor, class_set(env_train.UNSOLVABLE), config,
                              reference=reference)
        assert log.collapse.first_dominance_step == first
        assert log.collapse.kl_dominance == (first is not None)


class TestSolveRateEstimate():
    def test_bernoulli_quarter(self):
        vocab = Vocab.default()
        policy = TabularSoftmaxPolicy(vocab, 1.0, context_horizon=1,
                                      condition_on_problem=False)
        start = np.full(vocab.size, -50.0)
        start[5], start[6] = np.log(0.25), np.log(0.75)
        policy.set_logits(("", ()), start)
        stop = np.full(vocab.size, -50.0)
        stop[vocab.terminal_token] = 50.0
        for a in vocab.answer_tokens:
            policy.set_logits(("", (a,)), stop)

        rate = core.estimate_pa(policy, Problem("b", 5, 32), 10000, 2024)
        assert rate.n_samples == 10000
        assert abs(rate.rate - 0.25) < 0.02


class TestReference():
    @staticmethod
    def policies():
        vocab = Vocab.default()
        return (PolicyConfig().build(vocab, 0.6),
                PolicyConfig(favored_bias=0.0).build(vocab, 0.6))

    def test_two_phase(self):
        policy, reference = self.policies()
        sets = {"phase1": class_set(env_train.UNSOLVABLE, n=1),
                "phase2": class_set(env_train.OCCASIONAL, answer=6, n=1)}
        configs = {"phase1": TrainConfig(steps=2, samples_per_problem=4),
                   "phase2": TrainConfig(steps=2, samples_per_problem=4)}
        own = env_train.two_phase(sets, configs, policy, eval_samples=10)
        other = env_train.two_phase(sets, configs, policy, eval_samples=10,
                                    reference=reference)
        assert own.log1.frame()["kl"].iloc[0] == 0.0
        assert own.log2.frame()["kl"].iloc[0] == 0.0
        assert (other.log1.frame()["kl"] > 0).all()
        assert (other.log2.frame()["kl"] > 0).all()

    def test_lambda_sweep(self):
        policy, reference = self.policies()
        problem_set = class_set(env_train.UNSOLVABLE, n=1)
        config = TrainConfig(steps=2, samples_per_problem=4)
        own = env_train.lambda_sweep(problem_set, [0.9], config, policy)
        other = env_train.lambda_sweep(problem_set, [0.9], config, policy,
                                       reference=reference)
        assert own.logs[0.9].frame()["kl"].iloc[0] == 0.0
        assert (other.logs[0.9].frame()["kl"] > 0).all()
