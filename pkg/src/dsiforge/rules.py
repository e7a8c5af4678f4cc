"""Weighted first-order soft rules: parsing, observations, and grounding.

Rule grammar (comments start with ``#``)::

    ruleset := {rule}
    rule    := WEIGHT ":" body "->" head "."
    body    := literal {"&" literal}
    head    := literal {"|" literal}
    literal := ["!"] IDENT "(" arg {"," arg} ")"
    arg     := VARIABLE (uppercase-initial) | CONSTANT (lowercase-initial)

Observed predicates are fixed {0,1} tables built from a corpus; the single
open predicate ``State(Utt, Class)`` resolves to the neural model's decision
matrix at evaluation time. Grounding substitutes in-corpus constants for
variables and prunes instances whose observed body is false (those are
trivially satisfied and contribute zero gradient).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .corpus import DialogCorpus
from .errors import ConfigError, GroundingCapError, RuleSyntaxError

OPEN_PREDICATE = "State"

# predicate -> argument sorts
PREDICATE_SORTS = {
    "State": ("utt", "class"),
    "FirstUtt": ("utt",),
    "LastUtt": ("utt",),
    "PrevUtt": ("utt", "utt"),
    "HasWord": ("utt", "class"),
    "HasGreetWord": ("utt",),
    "HasInfoQuestionWord": ("utt",),
    "HasSlotQuestionWord": ("utt",),
    "HasInsistWord": ("utt",),
    "HasCancelWord": ("utt",),
    "HasAcceptWord": ("utt",),
    "HasEndWord": ("utt",),
}

# lexicon class name -> unary predicate fed by that lexicon
LEXICON_PREDICATES = {
    "greet": "HasGreetWord",
    "info_question": "HasInfoQuestionWord",
    "slot_question": "HasSlotQuestionWord",
    "insist": "HasInsistWord",
    "cancel": "HasCancelWord",
    "accept": "HasAcceptWord",
    "end": "HasEndWord",
}

DEFAULT_GROUNDING_CAP = 1_000_000


@dataclass(frozen=True)
class Term:
    name: str

    @property
    def is_variable(self) -> bool:
        return self.name[0].isupper()


@dataclass(frozen=True)
class Literal:
    negated: bool
    predicate: str
    args: tuple[Term, ...]

    def __str__(self):
        bang = "!" if self.negated else ""
        return f"{bang}{self.predicate}({', '.join(t.name for t in self.args)})"


@dataclass
class RuleTemplate:
    weight: float
    body: list[Literal]
    head: list[Literal]
    line: int = 0

    def variables(self) -> list[str]:
        """Variable names in order of first appearance (body before head)."""
        seen: list[str] = []
        for lit in list(self.body) + list(self.head):
            for term in lit.args:
                if term.is_variable and term.name not in seen:
                    seen.append(term.name)
        return seen

    def __str__(self):
        body = " & ".join(str(l) for l in self.body)
        head = " | ".join(str(l) for l in self.head)
        return f"{self.weight:g}: {body} -> {head} ."


@dataclass
class RuleSet:
    templates: list[RuleTemplate] = field(default_factory=list)

    def __len__(self):
        return len(self.templates)


def format_ruleset(ruleset: RuleSet) -> str:
    return "\n".join(str(t) for t in ruleset.templates) + "\n"


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"(?P<number>\d+(?:\.\d+)?|\.\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<arrow>->)"
    r"|(?P<punct>[():,.&|!])"
    r"|(?P<ws>[ \t]+)"
    r"|(?P<comment>#[^\n]*)"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        pos = 0
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            if m is None:
                raise RuleSyntaxError(
                    f"unexpected character {line[pos]!r}", lineno, pos + 1)
            kind = m.lastgroup
            if kind not in ("ws", "comment"):
                toks.append(_Tok(kind, m.group(), lineno, m.start() + 1))
            pos = m.end()
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.pos = 0

    def _peek(self) -> _Tok | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def _fail(self, message: str):
        tok = self._peek()
        if tok is None:
            last = self.toks[-1] if self.toks else _Tok("", "", 1, 1)
            raise RuleSyntaxError(f"{message}, found end of input",
                                  last.line, last.col + len(last.text))
        raise RuleSyntaxError(f"{message}, found {tok.text!r}", tok.line, tok.col)

    def _expect(self, kind: str, text: str | None = None, what: str = "") -> _Tok:
        tok = self._peek()
        if tok is None or tok.kind != kind or (text is not None and tok.text != text):
            self._fail(f"expected {what or text or kind}")
        self.pos += 1
        return tok

    def ruleset(self) -> RuleSet:
        templates = []
        while self._peek() is not None:
            templates.append(self.rule())
        return RuleSet(templates)

    def rule(self) -> RuleTemplate:
        wtok = self._peek()
        if wtok is None or wtok.kind != "number":
            self._fail("expected rule weight")
        self.pos += 1
        weight = float(wtok.text)
        self._expect("punct", ":", "':' after weight")
        body = [self.literal()]
        while self._peek() is not None and self._peek().text == "&":
            self.pos += 1
            body.append(self.literal())
        tok = self._peek()
        if tok is None or tok.kind != "arrow":
            self._fail("expected '->'")
        self.pos += 1
        head = [self.literal()]
        while self._peek() is not None and self._peek().text == "|":
            self.pos += 1
            head.append(self.literal())
        self._expect("punct", ".", "'.' terminating the rule")
        tpl = RuleTemplate(weight=weight, body=body, head=head, line=wtok.line)
        _validate_template(tpl)
        return tpl

    def literal(self) -> Literal:
        negated = False
        tok = self._peek()
        if tok is not None and tok.text == "!":
            negated = True
            self.pos += 1
        name_tok = self._expect("ident", what="predicate name")
        if name_tok.text not in PREDICATE_SORTS:
            raise RuleSyntaxError(f"unknown predicate '{name_tok.text}'",
                                  name_tok.line, name_tok.col)
        self._expect("punct", "(", "'('")
        args = [self.arg()]
        while self._peek() is not None and self._peek().text == ",":
            self.pos += 1
            args.append(self.arg())
        self._expect("punct", ")", "')'")
        arity = len(PREDICATE_SORTS[name_tok.text])
        if len(args) != arity:
            raise RuleSyntaxError(
                f"predicate '{name_tok.text}' takes {arity} argument(s), got "
                f"{len(args)}", name_tok.line, name_tok.col)
        return Literal(negated=negated, predicate=name_tok.text, args=tuple(args))

    def arg(self) -> Term:
        tok = self._expect("ident", what="argument")
        return Term(tok.text)


def _validate_template(tpl: RuleTemplate) -> None:
    if tpl.weight < 0:
        raise RuleSyntaxError("rule weight must be non-negative", tpl.line, 1)
    body_vars = {t.name for lit in tpl.body for t in lit.args if t.is_variable}
    for lit in tpl.head:
        for term in lit.args:
            if term.is_variable and term.name not in body_vars:
                raise RuleSyntaxError(
                    f"head variable '{term.name}' does not appear in the body",
                    tpl.line, 1)


def parse_ruleset(text: str) -> RuleSet:
    """Parse rule-file contents into templates; raises RuleSyntaxError."""
    return _Parser(_tokenize(text)).ruleset()


def load_ruleset(path) -> RuleSet:
    with open(path, "r", encoding="utf-8") as f:
        return parse_ruleset(f.read())


# ---------------------------------------------------------------------------
# Token table

@dataclass
class TokenClassTable:
    """Sparse token -> (class, weight) map; weights must be positive."""

    entries: dict[str, tuple[str, float]] = field(default_factory=dict)
    provenance: str = ""

    def classes(self) -> list[str]:
        return sorted({cls for cls, _ in self.entries.values()})


def load_token_table(path) -> TokenClassTable:
    entries: dict[str, tuple[str, float]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'token<TAB>class<TAB>weight'")
            token, cls, weight_text = parts
            try:
                weight = float(weight_text)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad weight {weight_text!r}")
            if weight <= 0:
                raise ConfigError(f"{path}:{lineno}: weight must be positive")
            if token in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate token {token!r}")
            entries[token] = (cls, weight)
    return TokenClassTable(entries=entries, provenance=str(path))


def save_token_table(table: TokenClassTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for token in sorted(table.entries):
            cls, weight = table.entries[token]
            f.write(f"{token}\t{cls}\t{weight:g}\n")


# ---------------------------------------------------------------------------
# Observations

@dataclass
class ObservationStore:
    """Ground observed atoms over a corpus, as {0,1} tables."""

    n_utterances: int
    class_names: list[str]                  # class constants in latent-index order
    class_index: dict[str, int]
    unary: dict[str, np.ndarray]            # predicate -> uint8 [N]
    prev_pairs: list[tuple[int, int]]       # (u_t, u_{t-1}), dialog-local
    has_word: dict[str, np.ndarray]         # class name -> uint8 [N]
    utterance_dialog: np.ndarray            # dialog index per utterance

    def truth(self, predicate: str, args: tuple) -> int:
        if predicate in self.unary:
            return int(self.unary[predicate][args[0]])
        if predicate == "PrevUtt":
            return int(args in self._prev_lookup)
        if predicate == "HasWord":
            u, cls = args
            col = self.has_word.get(cls)
            return 0 if col is None else int(col[u])
        raise ConfigError(f"'{predicate}' is not an observed predicate")

    def __post_init__(self):
        self._prev_lookup = set(self.prev_pairs)


def build_observations(corpus: DialogCorpus,
                       lexicons: dict[str, list[str]] | None = None,
                       token_table: TokenClassTable | None = None,
                       class_map: dict[str, int] | None = None) -> ObservationStore:
    """Evaluate every observed predicate over the corpus.

    ``lexicons`` maps a class name (greet, end, ...) to its trigger tokens;
    ``class_map`` fixes which latent index each class constant denotes. When
    omitted, classes mentioned by lexicons/table are indexed in sorted order.
    """
    lexicons = lexicons or {}
    n = corpus.n_utterances()
    for di, dialog in enumerate(corpus.dialogs):
        if not dialog.turns:
            raise ConfigError(f"dialog {dialog.dialog_id!r} is empty")

    if class_map is None:
        mentioned = set(lexicons)
        if token_table is not None:
            mentioned.update(cls for cls, _ in token_table.entries.values())
        class_names = sorted(mentioned)
        class_map = {c: i for i, c in enumerate(class_names)}
    else:
        class_names = [c for c, _ in sorted(class_map.items(), key=lambda kv: kv[1])]
    if token_table is not None:
        for cls in token_table.classes():
            if cls not in class_map:
                raise ConfigError(
                    f"token table references unknown class '{cls}'")

    first = np.zeros(n, dtype=np.uint8)
    last = np.zeros(n, dtype=np.uint8)
    utt_dialog = np.zeros(n, dtype=np.int64)
    prev_pairs: list[tuple[int, int]] = []
    lex_cols = {}
    for cls, tokens in lexicons.items():
        pred = LEXICON_PREDICATES.get(cls)
        if pred is None:
            raise ConfigError(f"no lexicon predicate exists for class '{cls}'")
        lex_cols[pred] = (np.zeros(n, dtype=np.uint8), frozenset(tokens))
    word_cols = {cls: np.zeros(n, dtype=np.uint8)
                 for cls in (token_table.classes() if token_table else [])}

    for u, di, ti, turn in corpus.iter_utterances():
        utt_dialog[u] = di
        if ti == 0:
            first[u] = 1
        if ti == len(corpus.dialogs[di].turns) - 1:
            last[u] = 1
        if ti > 0:
            prev_pairs.append((u, u - 1))
        toks = turn.tokens
        for pred, (col, trigger) in lex_cols.items():
            if any(t in trigger for t in toks):
                col[u] = 1
        if token_table is not None:
            for t in toks:
                hit = token_table.entries.get(t)
                if hit is not None:
                    word_cols[hit[0]][u] = 1

    unary = {"FirstUtt": first, "LastUtt": last}
    unary.update({pred: col for pred, (col, _) in lex_cols.items()})
    return ObservationStore(
        n_utterances=n,
        class_names=class_names,
        class_index=dict(class_map),
        unary=unary,
        prev_pairs=prev_pairs,
        has_word=word_cols,
        utterance_dialog=utt_dialog,
    )


# ---------------------------------------------------------------------------
# Grounding

@dataclass
class GroundLiteral:
    negated: bool
    observed_value: float | None = None   # set for observed predicates
    ref: tuple[int, int] | None = None    # (utterance, class index) for State


@dataclass
class GroundRule:
    template_index: int
    weight: float
    substitution: dict[str, object]
    body: list[GroundLiteral]
    head: list[GroundLiteral]
    dialog: int

    def open_refs(self) -> list[tuple[int, int]]:
        return [l.ref for l in self.body + self.head if l.ref is not None]


def _infer_sorts(tpl: RuleTemplate) -> dict[str, str]:
    sorts: dict[str, str] = {}
    for lit in list(tpl.body) + list(tpl.head):
        for term, sort in zip(lit.args, PREDICATE_SORTS[lit.predicate]):
            if not term.is_variable:
                continue
            if sorts.setdefault(term.name, sort) != sort:
                raise ConfigError(
                    f"variable '{term.name}' used both as an utterance and a "
                    f"class (rule at line {tpl.line})")
    return sorts


def _true_tuples(lit: Literal, obs: ObservationStore):
    """Deterministically ordered tuples where the observed literal holds."""
    pred = lit.predicate
    if pred in obs.unary:
        return [(int(u),) for u in np.nonzero(obs.unary[pred])[0]]
    if pred == "PrevUtt":
        return list(obs.prev_pairs)
    if pred == "HasWord":
        out = []
        for cls in obs.class_names:
            col = obs.has_word.get(cls)
            if col is None:
                continue
            out.extend((int(u), cls) for u in np.nonzero(col)[0])
        out.sort(key=lambda t: (t[0], obs.class_index[t[1]]))
        return out
    raise ConfigError(f"'{pred}' has no observation table")


def _resolve_term(term: Term, binding: dict, obs: ObservationStore, sort: str):
    if term.is_variable:
        return binding[term.name]
    if sort == "class":
        if term.name not in obs.class_index:
            raise ConfigError(f"unresolved class name '{term.name}'")
        return term.name
    raise ConfigError(
        f"constant '{term.name}' in an utterance position is not supported")


def ground(ruleset: RuleSet, obs: ObservationStore,
           cap: int = DEFAULT_GROUNDING_CAP) -> list[GroundRule]:
    """Instantiate every template over the corpus constants.

    A grounding is kept only if every positive observed body literal is true
    and every negated observed body literal is false; instances failing this
    are classically satisfied and pruned. Output order is deterministic:
    template order, then substitution order (dialog order, then turn order).
    """
    out: list[GroundRule] = []
    for ti, tpl in enumerate(ruleset.templates):
        sorts = _infer_sorts(tpl)
        pos_obs = [l for l in tpl.body
                   if not l.negated and l.predicate != OPEN_PREDICATE]
        neg_obs = [l for l in tpl.body
                   if l.negated and l.predicate != OPEN_PREDICATE]

        bindings: list[dict] = [{}]
        # Seed bindings from positive observed literals (most selective first).
        for lit in sorted(pos_obs, key=lambda l: -len(l.args)):
            tuples = _true_tuples(lit, obs)
            extended: list[dict] = []
            for binding in bindings:
                for values in tuples:
                    new = dict(binding)
                    ok = True
                    for term, value in zip(lit.args, values):
                        if term.is_variable:
                            if new.setdefault(term.name, value) != value:
                                ok = False
                                break
                        elif term.name != value:
                            ok = False
                            break
                    if ok:
                        extended.append(new)
                if len(extended) > cap:
                    raise GroundingCapError(
                        f"template {ti} (line {tpl.line}) exceeded the "
                        f"grounding cap of {cap}")
            bindings = extended

        # Remaining variables range over their full domains.
        for var in tpl.variables():
            if bindings and var in bindings[0]:
                continue
            domain = (range(obs.n_utterances) if sorts[var] == "utt"
                      else obs.class_names)
            bindings = [dict(b, **{var: v}) for b in bindings for v in domain]
            if len(bindings) > cap:
                raise GroundingCapError(
                    f"template {ti} (line {tpl.line}) exceeded the "
                    f"grounding cap of {cap}")

        # Prune: negated observed body literals must be false.
        kept = []
        for binding in bindings:
            ok = True
            for lit in neg_obs:
                args = tuple(_resolve_term(t, binding, obs, s)
                             for t, s in zip(lit.args, PREDICATE_SORTS[lit.predicate]))
                if obs.truth(lit.predicate, args):
                    ok = False
                    break
            if ok:
                kept.append(binding)

        kept.sort(key=lambda b: tuple(
            b[v] if sorts[v] == "utt" else obs.class_index[b[v]]
            for v in tpl.variables()))

        for binding in kept:
            gr = _make_ground_rule(ti, tpl, binding, obs, sorts)
            if gr is not None:
                out.append(gr)
    return out


def _make_ground_rule(ti: int, tpl: RuleTemplate, binding: dict,
                      obs: ObservationStore, sorts: dict) -> GroundRule | None:
    utts = []

    def resolve(lit: Literal) -> GroundLiteral:
        args = tuple(_resolve_term(t, binding, obs, s)
                     for t, s in zip(lit.args, PREDICATE_SORTS[lit.predicate]))
        if lit.predicate == OPEN_PREDICATE:
            u, cls = args
            if cls not in obs.class_index:
                raise ConfigError(f"unresolved class name '{cls}'")
            utts.append(u)
            return GroundLiteral(negated=lit.negated,
                                 ref=(int(u), obs.class_index[cls]))
        value = float(obs.truth(lit.predicate, args))
        for a, s in zip(args, PREDICATE_SORTS[lit.predicate]):
            if s == "utt":
                utts.append(a)
        return GroundLiteral(negated=lit.negated, observed_value=value)

    body = [resolve(l) for l in tpl.body]
    head = [resolve(l) for l in tpl.head]
    if not any(l.ref is not None for l in body + head):
        return None  # constant grounding, nothing to optimize
    dialog = int(obs.utterance_dialog[utts[0]]) if utts else -1
    return GroundRule(template_index=ti, weight=tpl.weight,
                      substitution=dict(binding), body=body, head=head,
                      dialog=dialog)
