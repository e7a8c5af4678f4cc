import numpy as np
import pytest

from dsiforge.corpus import Dialog, DialogCorpus, Turn, Vocabulary
from dsiforge.datagen import GeneratorConfig, StructureGraph
from dsiforge.model import DDVRNN, ModelConfig, encode_dialogs, make_batch


@pytest.fixture
def tiny_corpus() -> DialogCorpus:
    return DialogCorpus([
        Dialog("d0", "hotel", "train", [
            Turn(0, ["hello", "there"]),
            Turn(1, ["i", "need", "a", "room"]),
            Turn(0, ["thanks", "a", "lot"]),
        ]),
        Dialog("d1", "taxi", "train", [
            Turn(0, ["i", "need", "a", "taxi"]),
            Turn(1, ["what", "time", "?"]),
        ]),
    ])


@pytest.fixture
def tiny_model(tiny_corpus):
    vocab = Vocabulary.build(tiny_corpus)
    cfg = ModelConfig(k_states=3, vocab_size=len(vocab), embed_dim=4,
                      encoder_dim=6, dialog_dim=5, decoder_dim=6,
                      bow_hidden_dim=6)
    model = DDVRNN(cfg, seed=7)
    return model, vocab, tiny_corpus


@pytest.fixture
def tiny_batch(tiny_model):
    model, vocab, corpus = tiny_model
    encoded = encode_dialogs(corpus, vocab, model.cfg)
    return model, make_batch(encoded), encoded


def chain_generator_config(seed: int = 0) -> GeneratorConfig:
    """Deterministic 3-state chain: greet -> initial_request -> end."""
    graph = StructureGraph(
        state_names=["greet", "initial_request", "end"],
        start=np.array([1.0, 0.0, 0.0]),
        transitions=np.array([
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
        ]),
        terminal_states=["end"],
    )
    return GeneratorConfig(
        graph=graph,
        templates={
            "greet": [["hello", "there"], ["hi", "friend"]],
            "initial_request": [["i", "need", "a", "room"],
                                ["i", "want", "a", "table"]],
            "end": [["thanks", "goodbye"], ["thank", "you", "bye"]],
        },
        domains=["hotel"],
        slots={},
        max_len=6,
        seed=seed,
    )
