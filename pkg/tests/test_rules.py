"""Rule parsing, observation tables, and grounding."""

import itertools

import numpy as np
import pytest

from dsiforge.corpus import Dialog, DialogCorpus, Turn
from dsiforge.errors import ConfigError, GroundingCapError, RuleSyntaxError
from dsiforge.rules import (PREDICATE_SORTS, TokenClassTable,
                            build_observations, format_ruleset, ground,
                            load_token_table, parse_ruleset, save_token_table)


class TestParsing:
    def test_single_rule(self):
        rs = parse_ruleset("1.0: FirstUtt(U) -> State(U, greet) .")
        assert len(rs) == 1
        tpl = rs.templates[0]
        assert tpl.weight == 1.0
        assert [str(l) for l in tpl.body] == ["FirstUtt(U)"]
        assert [str(l) for l in tpl.head] == ["State(U, greet)"]

    def test_negated_body_literal(self):
        rs = parse_ruleset(
            "2.0: FirstUtt(U) & !HasGreetWord(U) -> State(U, init_request) .")
        tpl = rs.templates[0]
        assert tpl.weight == 2.0
        assert not tpl.body[0].negated
        assert tpl.body[1].negated
        assert tpl.body[1].predicate == "HasGreetWord"

    def test_missing_arrow_reports_position(self):
        with pytest.raises(RuleSyntaxError, match="expected '->'") as exc:
            parse_ruleset("1.0: FirstUtt(U) State(U, greet) .")
        assert exc.value.line == 1
        assert exc.value.column > 1

    def test_comments_and_blank_lines_ignored(self):
        rs = parse_ruleset(
            "# leading comment\n\n"
            "1.0: FirstUtt(U) -> State(U, greet) .  # trailing\n")
        assert len(rs) == 1

    def test_unknown_predicate(self):
        with pytest.raises(RuleSyntaxError, match="unknown predicate"):
            parse_ruleset("1.0: Bogus(U) -> State(U, greet) .")

    def test_arity_mismatch(self):
        with pytest.raises(RuleSyntaxError, match="takes 1 argument"):
            parse_ruleset("1.0: FirstUtt(U, V) -> State(U, greet) .")

    def test_negative_weight_unparseable(self):
        # the grammar has no signed numbers, so this is a syntax error
        with pytest.raises(RuleSyntaxError):
            parse_ruleset("-1.0: FirstUtt(U) -> State(U, greet) .")

    def test_head_variable_must_occur_in_body(self):
        with pytest.raises(RuleSyntaxError, match="head variable"):
            parse_ruleset("1.0: FirstUtt(U) -> State(V, greet) .")

    def test_disjunctive_head(self):
        rs = parse_ruleset(
            "0.5: LastUtt(U) -> State(U, end) | State(U, accept) .")
        assert len(rs.templates[0].head) == 2

    def test_round_trip(self):
        text = (
            "1.0: FirstUtt(U) -> State(U, greet) .\n"
            "2.0: PrevUtt(U1, U2) & !State(U2, greet) -> !State(U1, end) .\n"
            "0.25: LastUtt(U) -> State(U, end) | State(U, accept) .\n")
        rs1 = parse_ruleset(text)
        rs2 = parse_ruleset(format_ruleset(rs1))
        assert format_ruleset(rs1) == format_ruleset(rs2)
        assert [t.weight for t in rs1.templates] == [t.weight for t in rs2.templates]
        for t1, t2 in zip(rs1.templates, rs2.templates):
            assert [str(l) for l in t1.body] == [str(l) for l in t2.body]
            assert [str(l) for l in t1.head] == [str(l) for l in t2.head]


@pytest.fixture
def obs_corpus():
    return DialogCorpus([
        Dialog("d0", "hotel", "train", [
            Turn(0, ["hello", "world", "!"]),
            Turn(1, ["i", "need", "a", "room"]),
            Turn(0, ["thanks", "bye"]),
        ]),
        Dialog("d1", "taxi", "train", [
            Turn(0, ["i", "need", "a", "cab"]),
            Turn(1, ["what", "time", "?"]),
            Turn(0, ["great", "thanks"]),
        ]),
    ])


class TestObservations:
    def test_greet_lexicon_hit(self, obs_corpus):
        obs = build_observations(obs_corpus, lexicons={"greet": ["hello", "hi"]})
        assert obs.unary["HasGreetWord"][0] == 1
        assert obs.unary["HasGreetWord"][1:].sum() == 0

    def test_prev_pairs_are_consecutive(self, obs_corpus):
        obs = build_observations(obs_corpus)
        assert obs.prev_pairs == [(1, 0), (2, 1), (4, 3), (5, 4)]

    def test_first_and_last_counts(self, obs_corpus):
        obs = build_observations(obs_corpus)
        assert obs.unary["FirstUtt"].sum() == 2
        assert obs.unary["LastUtt"].sum() == 2
        assert obs.unary["FirstUtt"][0] == obs.unary["FirstUtt"][3] == 1
        assert obs.unary["LastUtt"][2] == obs.unary["LastUtt"][5] == 1

    def test_has_word_from_token_table(self, obs_corpus):
        table = TokenClassTable({"room": ("request", 1.0),
                                 "cab": ("request", 2.0)})
        obs = build_observations(obs_corpus, token_table=table,
                                 class_map={"request": 0})
        np.testing.assert_array_equal(obs.has_word["request"],
                                      [0, 1, 0, 1, 0, 0])

    def test_empty_dialog_rejected(self):
        corpus = DialogCorpus([Dialog("d0", "hotel", "train", [])])
        with pytest.raises(ConfigError, match="empty"):
            build_observations(corpus)

    def test_token_table_unknown_class_rejected(self, obs_corpus):
        table = TokenClassTable({"room": ("mystery", 1.0)})
        with pytest.raises(ConfigError, match="unknown class"):
            build_observations(obs_corpus, token_table=table,
                               class_map={"greet": 0})

    def test_truth_values_are_binary(self, obs_corpus):
        obs = build_observations(obs_corpus, lexicons={"greet": ["hello"]})
        for col in obs.unary.values():
            assert set(np.unique(col)) <= {0, 1}


class TestTokenTableIO:
    def test_round_trip(self, tmp_path):
        table = TokenClassTable({"hello": ("greet", 1.0), "bye": ("end", 0.5)})
        path = tmp_path / "table.tsv"
        save_token_table(table, path)
        loaded = load_token_table(path)
        assert loaded.entries == table.entries

    def test_bad_weight_rejected(self, tmp_path):
        path = tmp_path / "table.tsv"
        path.write_text("hello\tgreet\t-1\n")
        with pytest.raises(ConfigError, match="positive"):
            load_token_table(path)

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "table.tsv"
        path.write_text("hello greet 1\n")
        with pytest.raises(ConfigError, match=":1:"):
            load_token_table(path)


class TestGrounding:
    def test_first_utt_rule_grounds_once_per_dialog(self, obs_corpus):
        rs = parse_ruleset("1.0: FirstUtt(U) -> State(U, greet) .")
        obs = build_observations(obs_corpus, class_map={"greet": 0})
        gs = ground(rs, obs)
        assert len(gs) == len(obs_corpus.dialogs)
        assert [g.substitution["U"] for g in gs] == [0, 3]

    def test_token_rule_grounds_per_matching_utterance(self):
        corpus = DialogCorpus([
            Dialog("d0", "x", "train", [Turn(0, ["alpha"]), Turn(1, ["beta"]),
                                        Turn(0, ["alpha", "beta"])]),
            Dialog("d1", "x", "train", [Turn(0, ["alpha"]), Turn(1, ["gamma"]),
                                        Turn(0, ["beta"])]),
        ])
        table = TokenClassTable({"alpha": ("a", 1.0), "beta": ("b", 1.0)})
        rs = parse_ruleset("1.0: HasWord(Utt, Class) -> State(Utt, Class) .")
        obs = build_observations(corpus, token_table=table,
                                 class_map={"a": 0, "b": 1})
        gs = ground(rs, obs)
        # utterances matching a class: u0:a u1:b u2:a,b u3:a u5:b
        assert len(gs) == 6

    def test_pruning_matches_exhaustive_enumeration(self):
        """Grounding equals filter(all substitutions, body observably true)."""
        rng = np.random.default_rng(0)
        words = ["hello", "need", "what", "thanks", "pad"]
        dialogs = []
        for d in range(3):
            turns = [Turn(t % 2, [words[rng.integers(len(words))],
                                  words[rng.integers(len(words))]])
                     for t in range(3 + (d == 0))]
            dialogs.append(Dialog(f"d{d}", "x", "train", turns))
        corpus = DialogCorpus(dialogs)
        assert corpus.n_utterances() == 10
        obs = build_observations(corpus, lexicons={"greet": ["hello"]},
                                 class_map={"greet": 0, "request": 1})
        rs = parse_ruleset(
            "1.0: FirstUtt(U) & HasGreetWord(U) -> State(U, greet) .\n"
            "1.0: PrevUtt(U1, U2) & !HasGreetWord(U1) -> State(U1, request) .\n"
            "1.0: !FirstUtt(U) -> !State(U, greet) .\n")
        got = {(g.template_index, tuple(sorted(g.substitution.items())))
               for g in ground(rs, obs)}

        expected = set()
        n = obs.n_utterances
        for ti, tpl in enumerate(rs.templates):
            names = tpl.variables()
            for values in itertools.product(range(n), repeat=len(names)):
                sub = dict(zip(names, values))
                ok = True
                for lit in tpl.body:
                    if lit.predicate == "State":
                        continue
                    args = tuple(sub[t.name] for t in lit.args)
                    truth = obs.truth(lit.predicate, args)
                    if lit.negated == bool(truth):
                        ok = False
                        break
                if ok:
                    expected.add((ti, tuple(sorted(sub.items()))))
        assert got == expected

    def test_grounding_order_deterministic(self, obs_corpus):
        rs = parse_ruleset(
            "1.0: PrevUtt(U1, U2) & State(U2, greet) -> State(U1, request) .")
        obs = build_observations(obs_corpus, class_map={"greet": 0, "request": 1})
        subs1 = [g.substitution for g in ground(rs, obs)]
        subs2 = [g.substitution for g in ground(rs, obs)]
        assert subs1 == subs2
        assert subs1 == sorted(subs1, key=lambda s: (s["U1"], s["U2"]))

    def test_cap_exceeded_reports_template(self, obs_corpus):
        rs = parse_ruleset(
            "1.0: PrevUtt(U1, U2) -> State(U1, greet) .\n"
            "1.0: !FirstUtt(U) -> !State(U, greet) .\n")
        obs = build_observations(obs_corpus, class_map={"greet": 0})
        with pytest.raises(GroundingCapError, match="template 0"):
            ground(rs, obs, cap=2)

    def test_observed_literals_consistent_with_pruning(self, obs_corpus):
        rs = parse_ruleset(
            "1.0: FirstUtt(U) & !HasGreetWord(U) -> State(U, request) .")
        obs = build_observations(obs_corpus, lexicons={"greet": ["hello"]},
                                 class_map={"request": 0})
        for g in ground(rs, obs):
            for lit in g.body:
                if lit.observed_value is not None:
                    # positive literals observed true, negated observed false
                    assert lit.observed_value == (0.0 if lit.negated else 1.0)

    def test_constant_groundings_dropped(self, obs_corpus):
        # head is observed, body observed: nothing differentiable remains
        rs = parse_ruleset("1.0: FirstUtt(U) -> LastUtt(U) .")
        obs = build_observations(obs_corpus)
        assert ground(rs, obs) == []

    def test_open_body_literal_kept_as_reference(self, obs_corpus):
        rs = parse_ruleset(
            "1.0: PrevUtt(U1, U2) & State(U2, greet) -> State(U1, request) .")
        obs = build_observations(obs_corpus, class_map={"greet": 0, "request": 1})
        gs = ground(rs, obs)
        assert len(gs) == 4  # one per PrevUtt pair
        for g in gs:
            refs = g.open_refs()
            assert len(refs) == 2
            assert refs[0][1] == 0 and refs[1][1] == 1

    def test_every_predicate_has_sorts(self):
        for pred, sorts in PREDICATE_SORTS.items():
            assert all(s in ("utt", "class") for s in sorts)
