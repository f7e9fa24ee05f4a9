#
# Tests for the verification suites
#
import pytest

from lengthlab import verify
from lengthlab.verify import SuiteReport


class TestSuiteReport():
    def test_check(self):
        report = SuiteReport("demo", 3)
        report.check("a", 0.5, True)
        report.check("a", 0.1, True)
        report.check("b", 2.0, False)
        assert report.properties == {"a": 0.5, "b": 2.0}
        assert report.max_violation == 2.0
        assert report.failures == 1
        assert not report.passed

    def test_to_dict(self):
        report = SuiteReport("demo", 1)
        report.details["note"] = 1
        assert report.to_dict() == {"suite": "demo", "instances": 1,
                                    "failures": 0, "max_violation": 0.0,
                                    "properties": {}, "details": {"note": 1}}


class TestSuites():
    @pytest.mark.parametrize("name", sorted(verify.SUITES))
    def test_suite_passes(self, name):
        report = verify.SUITES[name](40, 7)
        assert report.suite == name
        assert report.passed, f'{name} failed: {report.properties}'
        assert report.properties, 'Every suite should record a property'

    def test_reproducible(self):
        a = verify.mean_advantage_suite(20, 3)
        b = verify.mean_advantage_suite(20, 3)
        assert a.to_dict() == b.to_dict()

    def test_mean_advantage_properties(self):
        report = verify.mean_advantage_suite(30, 0)
        assert {"exact", "epsilon_bound", "sign_law", "bracket_mixed",
                "bracket_positive", "bracket_negative"} <= set(report.properties)

    def test_conciseness_jacobians(self):
        report = verify.conciseness_suite(30, 0, n_jacobians=10)
        assert {"identity", "jacobian_bracket",
                "jacobian_decision"} <= set(report.properties)
        assert report.details["ties_skipped"] >= 0

    def test_published_table(self):
        report = verify.grpo_algebra_suite(10, 0)
        assert report.passed
        assert report.details["published_cells"] == 24
        mismatches = report.details["published_mismatches"]
        assert [16, 3] in mismatches, \
            'The published N=16, k=3 cell differs from the closed form'
        assert [8, 1] not in mismatches

    def test_sigma_constants(self):
        assert verify.SIGMA_K1 == {8: 0.3307, 16: 0.2421, 64: 0.1240,
                                   256: 0.0624}


class TestRunSuites():
    def test_all(self):
        reports = verify.run_suites(["all"], n_instances=10, seed=1)
        assert [r.suite for r in reports] == list(verify.SUITES)
        assert all(r.passed for r in reports)

    def test_selection(self):
        reports = verify.run_suites(["td-errors", "f-identity"], 5)
        assert [r.suite for r in reports] == ["td-errors", "f-identity"]

    def test_aliases(self):
        reports = verify.run_suites(["theorem1", "theorem2", "theorem3", "lemma"],
                                    5, seed=2)
        assert [r.suite for r in reports] == ["mean-advantage",
                                              "terminal-direction",
                                              "conciseness", "fixed-sign"]
        assert all(r.passed for r in reports)
        assert set(verify.SUITE_ALIASES.values()) <= set(verify.SUITES)

    def test_value_equilibrium_capped(self):
        report = verify.run_suites(["value-equilibrium"], 500)[0]
        assert report.instances == 100

    def test_unknown(self):
        with pytest.raises(ValueError):
            verify.run_suites(["no-such-suite"])
