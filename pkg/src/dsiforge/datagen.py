"""Synthetic goal-oriented dialog corpora from a known structure graph.

A corpus is produced by walking the graph from a sampled start state until a
terminal state (or the length cap) and emitting one templated utterance per
visited state, with slot placeholders filled from the dialog's domain
lexicon. The graph used for generation is the ground truth the induced
structure is later scored against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .corpus import Dialog, DialogCorpus, Turn
from .errors import ConfigError
from .rng import stream


@dataclass
class StructureGraph:
    state_names: list[str]
    start: np.ndarray            # [K]
    transitions: np.ndarray      # [K, K], row-stochastic
    terminal_states: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def state_index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown state '{name}'")

    def validate(self) -> None:
        k = self.n_states
        if self.start.shape != (k,) or self.transitions.shape != (k, k):
            raise ConfigError("start/transition shapes do not match the state list")
        if abs(self.start.sum() - 1.0) > 1e-9 or np.any(self.start < 0):
            raise ConfigError("start distribution must sum to 1")
        rows = self.transitions.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(self.transitions < 0):
            raise ConfigError("transition rows must sum to 1")
        if not self.terminal_states:
            raise ConfigError("at least one terminal state is required")
        terminals = {self.state_index(s) for s in self.terminal_states}
        # every state must reach a terminal through positive-probability edges
        reach = set(terminals)
        changed = True
        while changed:
            changed = False
            for s in range(k):
                if s in reach:
                    continue
                if any(self.transitions[s, t] > 0 for t in reach):
                    reach.add(s)
                    changed = True
        missing = [self.state_names[s] for s in range(k) if s not in reach]
        if missing:
            raise ConfigError(f"no terminal state reachable from: {missing}")


@dataclass
class GeneratorConfig:
    graph: StructureGraph
    templates: dict[str, list[list[str]]]
    domains: list[str]
    slots: dict[str, dict[str, list[str]]]   # domain -> slot name -> fillers
    max_len: int = 10
    seed: int = 0

    def validate(self) -> None:
        self.graph.validate()
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2")
        for state in self.graph.state_names:
            if not self.templates.get(state):
                raise ConfigError(f"state '{state}' has no utterance templates")
        if not self.domains:
            raise ConfigError("at least one domain is required")


def load_generator_config(path) -> GeneratorConfig:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return _config_from_obj(obj)


def _config_from_obj(obj: dict) -> GeneratorConfig:
    try:
        states = list(obj["states"])
        graph = StructureGraph(
            state_names=states,
            start=np.asarray(obj["start"], dtype=np.float64),
            transitions=np.asarray(obj["transitions"], dtype=np.float64),
            terminal_states=list(obj.get("terminals", [])),
        )
        cfg = GeneratorConfig(
            graph=graph,
            templates={s: [list(t) for t in rows]
                       for s, rows in obj["templates"].items()},
            domains=list(obj["domains"]),
            slots={d: {k: list(v) for k, v in slots.items()}
                   for d, slots in obj.get("slots", {}).items()},
            max_len=int(obj.get("max_len", 10)),
            seed=int(obj.get("seed", 0)),
        )
    except KeyError as e:
        raise ConfigError(f"generator config missing key {e}")
    cfg.validate()
    return cfg


def builtin_multiwoz_like_config() -> GeneratorConfig:
    """The shipped 9-state, 5-domain generator model."""
    text = resources.files("dsiforge.data").joinpath(
        "multiwoz_generator.json").read_text(encoding="utf-8")
    return _config_from_obj(json.loads(text))


def _fill_template(template: list[str], domain_slots: dict[str, list[str]],
                   rng: np.random.Generator) -> list[str]:
    out = []
    for tok in template:
        if tok.startswith("{") and tok.endswith("}"):
            fillers = domain_slots.get(tok[1:-1])
            if not fillers:
                raise ConfigError(f"no slot fillers for placeholder {tok}")
            out.append(fillers[rng.integers(len(fillers))])
        else:
            out.append(tok)
    return out


def generate_corpus(cfg: GeneratorConfig, n: int) -> DialogCorpus:
    """Sample ``n`` dialogs; deterministic for a fixed config seed.

    Dialogs receive train/test/validation tags in 80/10/10 proportion
    (within one dialog), assigned by a seeded permutation.
    """
    if n < 1:
        raise ConfigError("dialog count must be at least 1")
    cfg.validate()
    graph = cfg.graph
    terminals = {graph.state_index(s) for s in graph.terminal_states}

    n_train = int(round(0.8 * n))
    n_test = int(round(0.1 * n))
    order = stream(cfg.seed, "splits").permutation(n)
    split_of = np.empty(n, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:n_train + n_test]] = "test"
    split_of[order[n_train + n_test:]] = "validation"

    dialogs = []
    for i in range(n):
        rng = stream(cfg.seed, "dialog", i)
        domain = cfg.domains[rng.integers(len(cfg.domains))]
        domain_slots = cfg.slots.get(domain, {})
        state = int(rng.choice(graph.n_states, p=graph.start))
        turns = []
        for t in range(cfg.max_len):
            name = graph.state_names[state]
            templates = cfg.templates[name]
            template = templates[rng.integers(len(templates))]
            turns.append(Turn(
                speaker=t % 2,
                tokens=_fill_template(template, domain_slots, rng),
                state=name,
            ))
            if state in terminals:
                break
            state = int(rng.choice(graph.n_states, p=graph.transitions[state]))
        dialogs.append(Dialog(
            dialog_id=f"syn-{i:05d}", domain=domain,
            split=str(split_of[i]), turns=turns))
    return DialogCorpus(dialogs)
