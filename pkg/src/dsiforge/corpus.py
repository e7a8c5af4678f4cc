"""Dialog corpus containers, JSONL persistence, and the vocabulary.

A corpus is an ordered list of dialogs; each dialog is an ordered list of
turns carrying a speaker flag, a token list, and an optional gold state
label. Utterances are addressed by a global index that enumerates dialogs
in order and turns within each dialog.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError

PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

SPLITS = ("train", "test", "validation")


@dataclass
class Turn:
    speaker: int
    tokens: list[str]
    state: str | None = None


@dataclass
class Dialog:
    dialog_id: str
    domain: str
    split: str
    turns: list[Turn]

    def __len__(self):
        return len(self.turns)


@dataclass
class DialogCorpus:
    dialogs: list[Dialog] = field(default_factory=list)

    def __len__(self):
        return len(self.dialogs)

    def n_utterances(self) -> int:
        return sum(len(d) for d in self.dialogs)

    def iter_utterances(self):
        """Yield (global_index, dialog_index, turn_index, turn)."""
        u = 0
        for di, dialog in enumerate(self.dialogs):
            for ti, turn in enumerate(dialog.turns):
                yield u, di, ti, turn
                u += 1

    def subset(self, split: str) -> "DialogCorpus":
        if split not in SPLITS:
            raise ConfigError(f"unknown split '{split}'")
        return DialogCorpus([d for d in self.dialogs if d.split == split])

    def has_labels(self) -> bool:
        return all(t.state is not None for d in self.dialogs for t in d.turns)

    def gold_labels(self) -> list[str]:
        """Gold state per utterance, in global order; errors if any missing."""
        labels = []
        for _, _, _, turn in self.iter_utterances():
            if turn.state is None:
                raise ConfigError(
                    "operation requires gold labels but the corpus has "
                    "unlabeled utterances")
            labels.append(turn.state)
        return labels

    def domains(self) -> list[str]:
        return [d.domain for d in self.dialogs]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for dialog in self.dialogs:
            h.update(json.dumps(_dialog_to_obj(dialog), sort_keys=True).encode())
            h.update(b"\n")
        return h.hexdigest()


def _dialog_to_obj(dialog: Dialog) -> dict:
    obj = {
        "id": dialog.dialog_id,
        "domain": dialog.domain,
        "split": dialog.split,
        "turns": [],
    }
    for t in dialog.turns:
        turn_obj = {"speaker": t.speaker, "tokens": t.tokens}
        if t.state is not None:
            turn_obj["state"] = t.state
        obj["turns"].append(turn_obj)
    return obj


def export_corpus(corpus: DialogCorpus, path) -> None:
    """Write one dialog per line as JSON."""
    with open(path, "w", encoding="utf-8") as f:
        for dialog in corpus.dialogs:
            f.write(json.dumps(_dialog_to_obj(dialog), sort_keys=True))
            f.write("\n")


def import_corpus(path) -> DialogCorpus:
    dialogs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{lineno}: invalid JSON ({e.msg})")
            try:
                turns = [
                    Turn(speaker=int(t["speaker"]),
                         tokens=[str(tok) for tok in t["tokens"]],
                         state=t.get("state"))
                    for t in obj["turns"]
                ]
                dialogs.append(Dialog(
                    dialog_id=str(obj["id"]),
                    domain=str(obj["domain"]),
                    split=str(obj["split"]),
                    turns=turns,
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"{path}:{lineno}: malformed dialog record ({e})")
            if not dialogs[-1].turns:
                raise ConfigError(f"{path}:{lineno}: dialog has no turns")
            if dialogs[-1].split not in SPLITS:
                raise ConfigError(
                    f"{path}:{lineno}: split must be one of {SPLITS}")
    return DialogCorpus(dialogs)


class Vocabulary:
    """Token table with reserved ids 0=PAD, 1=UNK, 2=BOS, 3=EOS."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ConfigError("vocabulary must start with the reserved tokens")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, corpus: DialogCorpus, max_size: int | None = None) -> "Vocabulary":
        """Vocabulary from corpus tokens, most frequent first (ties by token)."""
        counts: dict[str, int] = {}
        for _, _, _, turn in corpus.iter_utterances():
            for tok in turn.tokens:
                counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - len(RESERVED_TOKENS))]
        return cls(list(RESERVED_TOKENS) + ordered)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(tok, UNK_ID) for tok in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)
