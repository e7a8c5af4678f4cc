"""Connective semantics, rule truths, and the constraint loss."""

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dsiforge import autodiff as ad
from dsiforge.corpus import Dialog, DialogCorpus, Turn
from dsiforge.errors import ConfigError, NumericError
from dsiforge.rules import build_observations, ground, parse_ruleset
from dsiforge.rng import stream
from dsiforge.softlogic import (LogicConfig, batch_rule_truths, connective,
                                constraint_loss, constraint_loss_vec,
                                normalized_negation, rule_truth)


def c(x):
    return ad.const(x)


class TestConnectives:
    def test_lukasiewicz_values(self):
        assert connective("and", [c(0.7), c(0.5)]).value == pytest.approx(0.2)
        assert connective("or", [c(0.7), c(0.5)]).value == pytest.approx(1.0)
        assert connective("not", [c(0.3)]).value == pytest.approx(0.7)

    def test_product_real_values(self):
        assert connective("and", [c(0.5), c(0.4)],
                          "product-real").value == pytest.approx(0.2)
        assert connective("or", [c(0.5), c(0.4)],
                          "product-real").value == pytest.approx(0.7)

    @pytest.mark.parametrize("logic", ["lukasiewicz", "product-real"])
    def test_boolean_corners_match_truth_tables(self, logic):
        for a in (0.0, 1.0):
            for b in (0.0, 1.0):
                assert connective("and", [c(a), c(b)], logic).value == float(
                    bool(a) and bool(b))
                assert connective("or", [c(a), c(b)], logic).value == float(
                    bool(a) or bool(b))
            assert connective("not", [c(a)], logic).value == float(not bool(a))

    def test_nary_left_fold(self):
        assert connective("and", [c(0.9), c(0.8), c(0.7)]).value == pytest.approx(0.4)
        assert connective("or", [c(0.2), c(0.3), c(0.1)],
                          "product-real").value == pytest.approx(
            0.2 + 0.3 - 0.06 + 0.1 - 0.44 * 0.1)

    def test_operand_outside_unit_interval_rejected(self):
        with pytest.raises(NumericError, match=r"\[0,1\]"):
            connective("and", [c(1.2), c(0.5)])

    @given(a=st.floats(0, 1), b=st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_outputs_stay_in_unit_interval(self, a, b):
        for logic in ("lukasiewicz", "product-real"):
            for kind in ("and", "or"):
                v = float(connective(kind, [c(a), c(b)], logic).value)
                assert -1e-12 <= v <= 1.0 + 1e-12


@pytest.fixture
def grounded():
    corpus = DialogCorpus([
        Dialog("d0", "x", "train", [Turn(0, ["hello"]), Turn(1, ["need"]),
                                    Turn(0, ["thanks"])]),
        Dialog("d1", "x", "train", [Turn(0, ["need"]), Turn(1, ["thanks"])]),
    ])
    obs = build_observations(corpus, lexicons={"greet": ["hello"]},
                             class_map={"greet": 0, "request": 1, "end": 2})
    rs = parse_ruleset(
        "1.0: FirstUtt(U) -> State(U, greet) .\n"
        "2.0: PrevUtt(U1, U2) & State(U2, greet) -> State(U1, request) .\n"
        "1.0: !FirstUtt(U) -> !State(U, greet) .\n")
    return rs, obs, ground(rs, obs)


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class TestRuleTruth:
    def test_satisfied_antecedent_reads_head_probability(self, grounded):
        _, _, gs = grounded
        decisions = np.full((5, 3), 1.0 / 3)
        decisions[0] = [0.3, 0.5, 0.2]
        node = ad.const(decisions)
        g0 = [g for g in gs if g.template_index == 0][0]
        rt = rule_truth(g0, node, LogicConfig())
        assert float(rt.node.value) == pytest.approx(0.3)

    def test_false_antecedent_gives_truth_one(self):
        corpus = DialogCorpus([
            Dialog("d0", "x", "train", [Turn(0, ["a"]), Turn(1, ["b"])])])
        obs = build_observations(corpus, lexicons={"greet": ["hello"]},
                                 class_map={"greet": 0})
        rs = parse_ruleset(
            "1.0: FirstUtt(U) & State(U, greet) -> State(U, greet) .")
        # force an observed-false body literal by hand: use LastUtt of turn 0
        rs2 = parse_ruleset(
            "1.0: LastUtt(U) & State(U, greet) -> State(U, greet) .")
        gs = ground(rs2, obs)
        # grounding over u0 is pruned away entirely (LastUtt false)
        assert all(g.substitution["U"] != 0 for g in gs)

    def test_product_real_matches_lukasiewicz_on_single_open_atom(self, grounded):
        _, _, gs = grounded
        decisions = np.full((5, 3), 1.0 / 3)
        decisions[0] = [0.3, 0.4, 0.3]
        g0 = [g for g in gs if g.template_index == 0][0]
        t_luk = rule_truth(g0, ad.const(decisions), LogicConfig())
        t_pr = rule_truth(g0, ad.const(decisions),
                          LogicConfig(logic="product-real"))
        assert float(t_luk.node.value) == pytest.approx(0.3)
        assert float(t_pr.node.value) == pytest.approx(0.3)

    def test_batch_rule_truths_match_scalar_path(self, grounded):
        _, _, gs = grounded
        rng = stream(21, "truths")
        decisions = softmax_rows(rng.normal(size=(5, 3)))
        node = ad.const(decisions)
        cfg = LogicConfig()
        groups = batch_rule_truths(gs, node, cfg)
        flat = {}
        for (vec, weights), ti in zip(groups, sorted({g.template_index for g in gs})):
            members = [g for g in gs if g.template_index == ti]
            for g, v, w in zip(members, vec.value, weights):
                flat[id(g)] = (v, w)
        for g in gs:
            rt = rule_truth(g, node, cfg)
            v, w = flat[id(g)]
            assert float(rt.node.value) == pytest.approx(v, abs=1e-12)
            assert rt.weight == w

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_truth_bounds_over_random_decisions(self, seed, grounded):
        _, _, gs = grounded
        rng = stream(seed, "bounds")
        decisions = softmax_rows(rng.normal(size=(5, 3)) * 3)
        node = ad.const(decisions)
        for logic in ("lukasiewicz", "product-real"):
            for norm in ("standard", "normalized"):
                cfg = LogicConfig(logic=logic, normalization=norm)
                for vec, _ in batch_rule_truths(gs, node, cfg):
                    assert np.all(vec.value >= -1e-9)
                    assert np.all(vec.value <= 1.0 + 1e-9)

    @pytest.mark.parametrize("logic", ["lukasiewicz", "product-real"])
    def test_monotonicity(self, logic, grounded):
        """Raising the head atom never lowers truth; raising a positive body
        atom never raises it."""
        _, _, gs = grounded
        g = [x for x in gs if x.template_index == 1][0]  # PrevUtt & State -> State
        (u_body, c_body), (u_head, c_head) = g.open_refs()
        cfg = LogicConfig(logic=logic)

        def truth(p_body, p_head):
            decisions = np.full((5, 3), 1.0 / 3)
            decisions[u_body, c_body] = p_body
            decisions[u_head, c_head] = p_head
            return float(rule_truth(g, ad.const(decisions), cfg).node.value)

        grid = np.linspace(0.05, 0.95, 7)
        for p_body in (0.2, 0.8):
            vals = [truth(p_body, h) for h in grid]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        for p_head in (0.2, 0.8):
            vals = [truth(b, p_head) for b in grid]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestNormalizedNegation:
    def test_uniform_row_is_fixed_point(self):
        row = ad.const(np.full(4, 0.25))
        assert float(normalized_negation(row, 2).value) == pytest.approx(0.25)

    def test_one_hot_row_gives_zero(self):
        row = ad.const(np.array([0.0, 1.0, 0.0]))
        assert float(normalized_negation(row, 1).value) == pytest.approx(0.0)

    def test_two_classes_reduce_to_complement(self):
        row = ad.const(np.array([0.3, 0.7]))
        assert float(normalized_negation(row, 0).value) == pytest.approx(0.7)
        assert float(normalized_negation(row, 1).value) == pytest.approx(0.3)

    def test_renormalized_complement_sums_to_one(self):
        rng = stream(31, "norm")
        row_vals = softmax_rows(rng.normal(size=(1, 6)))[0]
        row = ad.const(row_vals)
        total = sum(float(normalized_negation(row, k).value) for k in range(6))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError, match="2 classes"):
            normalized_negation(ad.const(np.array([1.0])), 0)


class TestConstraintLoss:
    def _single_truth(self, t, weight=1.0):
        from dsiforge.rules import GroundLiteral, GroundRule
        g = GroundRule(template_index=0, weight=weight, substitution={},
                       body=[GroundLiteral(False, observed_value=1.0)],
                       head=[GroundLiteral(False, ref=(0, 0))], dialog=0)
        decisions = np.zeros((1, 2))
        decisions[0, 0] = t
        decisions[0, 1] = 1.0 - t
        return rule_truth(g, ad.const(decisions), LogicConfig())

    def test_log_relaxation_value(self):
        rt = self._single_truth(0.5)
        loss = constraint_loss([rt], LogicConfig(relaxation="log"))
        assert float(loss.value) == pytest.approx(0.6931, abs=1e-4)

    def test_linear_relaxation_value(self):
        rt = self._single_truth(0.5)
        loss = constraint_loss([rt], LogicConfig(relaxation="linear"))
        assert float(loss.value) == pytest.approx(0.5)

    def test_gradient_ratio_log_vs_linear(self):
        """The log relaxation's gradient scales as 1/t; linear is constant."""
        def grad_at(t, relaxation):
            p = ad.param("t", t)
            cfg = LogicConfig(relaxation=relaxation)
            if relaxation == "log":
                penalty = -ad.log(ad.maxs(p, cfg.epsilon_clamp))
            else:
                penalty = ad.const(1.0) - p
            return abs(ad.backward(penalty)["t"])

        assert grad_at(0.1, "log") / grad_at(0.9, "log") == pytest.approx(9.0)
        assert grad_at(0.1, "linear") / grad_at(0.9, "linear") == pytest.approx(1.0)

    def test_gradient_shaping_identity(self):
        """|d penalty / d t| * t == lambda for the log relaxation."""
        lam = 1.7
        for t in np.linspace(0.01, 1.0, 25):
            p = ad.param("t", float(t))
            penalty = ad.mul(ad.const(lam), -ad.log(ad.maxs(p, 1e-6)))
            g = abs(ad.backward(penalty)["t"])
            assert g * t == pytest.approx(lam, abs=1e-6)
        for t in (0.05, 0.5, 0.95):
            p = ad.param("t", float(t))
            penalty = ad.mul(ad.const(lam), ad.const(1.0) - p)
            assert abs(ad.backward(penalty)["t"]) == pytest.approx(lam, abs=1e-12)

    def test_mean_vs_sum_aggregation(self):
        rts = [self._single_truth(0.5), self._single_truth(0.25)]
        mean_loss = constraint_loss(rts, LogicConfig(relaxation="linear"))
        sum_loss = constraint_loss(
            rts, LogicConfig(relaxation="linear", aggregation="sum"))
        assert float(mean_loss.value) == pytest.approx((0.5 + 0.75) / 2)
        assert float(sum_loss.value) == pytest.approx(0.5 + 0.75)

    def test_weights_scale_penalties(self):
        rt = self._single_truth(0.5, weight=3.0)
        loss = constraint_loss([rt], LogicConfig(relaxation="linear"))
        assert float(loss.value) == pytest.approx(1.5)

    def test_empty_list_warns_and_returns_zero(self):
        with pytest.warns(UserWarning, match="no ground rules"):
            loss = constraint_loss([], LogicConfig())
        assert float(loss.value) == 0.0
        with pytest.warns(UserWarning):
            loss = constraint_loss_vec([], LogicConfig())
        assert float(loss.value) == 0.0

    @pytest.mark.parametrize("logic", ["lukasiewicz", "product-real"])
    def test_classical_limit(self, logic, grounded):
        """With hard decisions, log loss is 0 iff every rule is satisfied."""
        _, _, gs = grounded
        cfg = LogicConfig(logic=logic, relaxation="log", aggregation="sum")

        # satisfy everything: first utterances greet, the rest request
        good = np.zeros((5, 3))
        good[0, 0] = good[3, 0] = 1.0
        good[1, 1] = good[2, 1] = good[4, 1] = 1.0
        groups = batch_rule_truths(gs, ad.const(good), cfg)
        loss = constraint_loss_vec(groups, cfg)
        assert float(loss.value) == pytest.approx(0.0, abs=1e-12)

        # violate the first-utterance rule: nothing is greet; the clamp caps
        # each violated rule's penalty at lambda * (-log eps)
        bad = np.zeros((5, 3))
        bad[:, 2] = 1.0
        groups = batch_rule_truths(gs, ad.const(bad), cfg)
        loss = constraint_loss_vec(groups, cfg)
        lam_eps = -np.log(cfg.epsilon_clamp)
        assert float(loss.value) > lam_eps / 2

    def test_epsilon_clamp_validation(self):
        with pytest.raises(ConfigError):
            LogicConfig(epsilon_clamp=0.0)
        with pytest.raises(ConfigError):
            LogicConfig(epsilon_clamp=0.5)
