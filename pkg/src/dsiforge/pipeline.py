"""Experiment orchestration: run configs, training, evaluation, suites.

A run reads one JSON config with sections {data, model, logic, training,
supervision, evaluation}, trains the model with the joint neural plus
constraint objective, and writes its artifacts atomically into the output
directory: config.json (resolved snapshot), vocab.txt, checkpoint.dsf,
losses.jsonl (one LossBreakdown per epoch), report.json, structure.dot.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import DialogCorpus, Vocabulary, import_corpus
from .datagen import StructureGraph
from .errors import ConfigError
from .metrics import (MetricsReport, ami, induce_structure, linear_probe,
                      purity, structure_to_dot)
from .model import (DDVRNN, DialogBatch, LossBreakdown, ModelConfig,
                    encode_dialogs, make_batch, tfidf_weights)
from .params import adam_step, load_checkpoint, save_checkpoint
from .rng import stream
from .rules import (DEFAULT_GROUNDING_CAP, build_observations, ground,
                    load_ruleset, load_token_table)
from .softlogic import LogicConfig, batch_rule_truths

BUILTIN_LEXICONS = {
    "greet": ["hello", "hi"],
    "info_question": ["address", "phone"],
    "slot_question": ["what", "?"],
    "insist": ["sure", "no"],
    "cancel": ["no"],
    "accept": ["yes", "great"],
    "end": ["thank", "thanks"],
}

CANONICAL_STATES = ["greet", "initial_request", "second_request", "insist",
                    "info_question", "slot_question", "accept", "cancel", "end"]

DEFAULT_CLASS_MAP = {name: i for i, name in enumerate(CANONICAL_STATES)}

SUPERVISION_SCHEMES = ("none", "one_shot", "three_shot",
                       "proportional_one_shot", "n_shot")


@dataclass
class RunConfig:
    corpus_path: str
    output_dir: str
    rules_path: str | None = None
    token_table_path: str | None = None
    lexicons: dict = field(default_factory=lambda: dict(BUILTIN_LEXICONS))
    class_map: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MAP))
    max_vocab: int | None = None
    model: dict = field(default_factory=dict)
    logic: dict = field(default_factory=dict)
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    constraint: bool = True
    grounding_cap: int = DEFAULT_GROUNDING_CAP
    supervision_scheme: str = "none"
    supervision_k: int | None = None
    eval_shots: list = field(default_factory=lambda: [1, 5, 10])
    min_prob: float = 0.0005

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("training.epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be at least 1")
        if self.supervision_scheme not in SUPERVISION_SCHEMES:
            raise ConfigError(
                f"supervision.scheme must be one of {SUPERVISION_SCHEMES}")
        if self.supervision_scheme == "n_shot" and not self.supervision_k:
            raise ConfigError("supervision.k is required for the n_shot scheme")

    def to_dict(self) -> dict:
        return {
            "data": {
                "corpus": self.corpus_path,
                "rules": self.rules_path,
                "token_table": self.token_table_path,
                "output_dir": self.output_dir,
                "lexicons": self.lexicons,
                "class_map": self.class_map,
                "max_vocab": self.max_vocab,
            },
            "model": self.model,
            "logic": self.logic,
            "training": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "lr": self.lr,
                "seed": self.seed,
                "constraint": self.constraint,
                "grounding_cap": self.grounding_cap,
            },
            "supervision": {
                "scheme": self.supervision_scheme,
                "k": self.supervision_k,
            },
            "evaluation": {
                "shots": self.eval_shots,
                "min_prob": self.min_prob,
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        data = obj.get("data", {})
        training = obj.get("training", {})
        supervision = obj.get("supervision", {})
        evaluation = obj.get("evaluation", {})
        if "corpus" not in data:
            raise ConfigError("config is missing data.corpus")
        if "output_dir" not in data:
            raise ConfigError("config is missing data.output_dir")
        return cls(
            corpus_path=data["corpus"],
            output_dir=data["output_dir"],
            rules_path=data.get("rules"),
            token_table_path=data.get("token_table"),
            lexicons=data.get("lexicons", dict(BUILTIN_LEXICONS)),
            class_map=data.get("class_map", dict(DEFAULT_CLASS_MAP)),
            max_vocab=data.get("max_vocab"),
            model=dict(obj.get("model", {})),
            logic=dict(obj.get("logic", {})),
            epochs=training.get("epochs", 10),
            batch_size=training.get("batch_size", 32),
            lr=training.get("lr", 1e-3),
            seed=training.get("seed", 0),
            constraint=training.get("constraint", True),
            grounding_cap=training.get("grounding_cap", DEFAULT_GROUNDING_CAP),
            supervision_scheme=supervision.get("scheme", "none"),
            supervision_k=supervision.get("k"),
            eval_shots=list(evaluation.get("shots", [1, 5, 10])),
            min_prob=evaluation.get("min_prob", 0.0005),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg})")
        cfg = cls.from_dict(obj)
        for p, what in ((cfg.corpus_path, "corpus"), (cfg.rules_path, "rules"),
                        (cfg.token_table_path, "token table")):
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{what} file does not exist: {p}")
        return cfg

    def config_hash(self) -> str:
        obj = self.to_dict()
        obj["data"] = {k: v for k, v in obj["data"].items() if k != "output_dir"}
        blob = json.dumps(obj, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def logic_config(self) -> LogicConfig:
        return LogicConfig(**self.logic)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size,
                           **{"k_states": 10, **self.model})


@dataclass
class RunArtifacts:
    output_dir: str
    checkpoint_path: str
    loss_curves: list[dict]
    report: MetricsReport
    structure: StructureGraph
    config_hash: str


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Few-shot label selection

def select_fewshot_labels(corpus: DialogCorpus, scheme: str, seed: int,
                          k: int | None = None) -> set[int]:
    """Global utterance ids that keep their gold labels under a scheme.

    one_shot/three_shot/n_shot draw k per gold class (all of a class if it
    has fewer). proportional_one_shot spends the same budget as one_shot,
    allocated proportionally to class frequency by largest remainder, with
    classes under 1% frequency excluded.
    """
    if scheme == "none":
        return set()
    if scheme not in SUPERVISION_SCHEMES:
        raise ConfigError(f"unknown supervision scheme '{scheme}'")
    try:
        labels = corpus.gold_labels()
    except ConfigError:
        raise ConfigError(
            f"supervision scheme '{scheme}' requires gold labels but the "
            f"corpus has none")
    by_class: dict[str, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(idx)
    classes = sorted(by_class)
    rng = stream(seed, "fewshot", scheme)

    if scheme in ("one_shot", "three_shot", "n_shot"):
        per_class = {"one_shot": 1, "three_shot": 3}.get(scheme, k)
        chosen: set[int] = set()
        for cls in classes:
            idx = by_class[cls]
            take = min(per_class, len(idx))
            chosen.update(int(i) for i in rng.choice(idx, take, replace=False))
        return chosen

    # proportional_one_shot
    budget = len(classes)
    n = len(labels)
    eligible = [c for c in classes if len(by_class[c]) / n >= 0.01]
    if not eligible:
        raise ConfigError("no class reaches the 1% frequency floor")
    freqs = np.array([len(by_class[c]) for c in eligible], dtype=np.float64)
    quotas = budget * freqs / freqs.sum()
    alloc = np.floor(quotas).astype(int)
    remainder = budget - alloc.sum()
    frac_order = sorted(range(len(eligible)),
                        key=lambda i: (-(quotas[i] - alloc[i]), -freqs[i], eligible[i]))
    for i in frac_order[:remainder]:
        alloc[i] += 1
    chosen = set()
    for cls, take in zip(eligible, alloc):
        idx = by_class[cls]
        take = min(int(take), len(idx))
        chosen.update(int(i) for i in rng.choice(idx, take, replace=False))
    return chosen


# ---------------------------------------------------------------------------
# Training

def _prepare_rules(cfg: RunConfig, corpus: DialogCorpus):
    """Parse rules, build observations, and bucket groundings by dialog."""
    ruleset = load_ruleset(cfg.rules_path)
    table = (load_token_table(cfg.token_table_path)
             if cfg.token_table_path else None)
    obs = build_observations(corpus, lexicons=cfg.lexicons, token_table=table,
                             class_map=cfg.class_map)
    groundings = ground(ruleset, obs, cap=cfg.grounding_cap)
    by_dialog: dict[int, list] = {}
    for g in groundings:
        by_dialog.setdefault(g.dialog, []).append(g)
    return ruleset, groundings, by_dialog


def _batch_row_map(batch: DialogBatch) -> dict[int, int]:
    b, t_max = batch.utt_ids.shape
    out = {}
    for i in range(b):
        for t in range(t_max):
            uid = batch.utt_ids[i, t]
            if uid >= 0:
                out[int(uid)] = t * b + i
    return out


def _mean_breakdown(parts: list[LossBreakdown]) -> dict:
    keys = ("reconstruction", "kl", "bow", "supervised", "constraint", "total")
    return {k: float(np.mean([getattr(p, k) for p in parts])) for k in keys}


def _posterior_entropy(decision_rows: np.ndarray) -> float:
    mean = decision_rows.mean(axis=0)
    p = mean[mean > 1e-12]
    return float(-(p * np.log(p)).sum())


def _predict_corpus(model: DDVRNN, encoded: list[dict], n_total: int,
                    batch_size: int = 64):
    """Posterior rows and probe features indexed by global utterance id.

    Utterances beyond the dialog-length cap are never seen by the model;
    their rows stay uniform (decisions) and zero (features).
    """
    k = model.cfg.k_states
    decisions = np.full((n_total, k), 1.0 / k)
    features = np.zeros((n_total, k + model.cfg.dialog_dim))
    for lo in range(0, len(encoded), batch_size):
        chunk = encoded[lo: lo + batch_size]
        batch = make_batch(chunk)
        graph = model.build_batch_graph(batch, want_reconstruction=False)
        row_map = _batch_row_map(batch)
        for uid, row in row_map.items():
            decisions[uid] = graph.decisions[row]
            features[uid] = graph.features[row]
    return decisions, features


def train(cfg: RunConfig) -> RunArtifacts:
    """Train per the config and evaluate the best checkpoint on the test split."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    full_corpus = import_corpus(cfg.corpus_path)
    train_corpus = full_corpus.subset("train")
    val_corpus = full_corpus.subset("validation")
    test_corpus = full_corpus.subset("test")
    if not train_corpus.dialogs:
        raise ConfigError("corpus has no train-split dialogs")

    vocab = Vocabulary.build(train_corpus, max_size=cfg.max_vocab)
    model_cfg = cfg.model_config(len(vocab))
    logic_cfg = cfg.logic_config()
    model = DDVRNN(model_cfg, seed=cfg.seed)

    bow_w = None
    if model_cfg.bow_weighting == "tfidf":
        bow_w = tfidf_weights(train_corpus, model_cfg.alpha, vocab)

    groundings_by_dialog: dict[int, list] = {}
    if cfg.constraint and cfg.rules_path:
        _, _, groundings_by_dialog = _prepare_rules(cfg, train_corpus)

    label_mask = None
    if cfg.supervision_scheme != "none":
        label_mask = select_fewshot_labels(
            train_corpus, cfg.supervision_scheme, cfg.seed, cfg.supervision_k)

    encoded_train = encode_dialogs(train_corpus, vocab, model_cfg, cfg.class_map)
    encoded_val = encode_dialogs(val_corpus, vocab, model_cfg, cfg.class_map)
    _check_class_indices(cfg, model_cfg, encoded_train, label_mask,
                         groundings_by_dialog)

    snapshot = json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
    _atomic_write(os.path.join(cfg.output_dir, "config.json"), snapshot)
    vocab.save(os.path.join(cfg.output_dir, "vocab.txt"))

    n_dialogs = len(encoded_train)
    curves: list[dict] = []
    best_val = np.inf
    best_params: dict[str, np.ndarray] = {}
    gumbel_rng = stream(cfg.seed, "gumbel") if model_cfg.tau > 0 else None

    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(n_dialogs)
        parts: list[LossBreakdown] = []
        truth_sum, truth_count = 0.0, 0
        for lo in range(0, n_dialogs, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            chunk = [encoded_train[i] for i in idx]
            batch = make_batch(chunk, labeled_ids=label_mask)
            batch_groundings = []
            for i in idx:
                batch_groundings.extend(groundings_by_dialog.get(int(i), []))
            graph = model.build_batch_graph(
                batch,
                groundings=batch_groundings or None,
                logic_cfg=logic_cfg,
                bow_weights=bow_w,
                utt_row_map=_batch_row_map(batch),
                gumbel_rng=gumbel_rng,
            )
            grads = ad.backward(graph.total)
            adam_step(model.store, grads, lr=cfg.lr)
            parts.append(graph.breakdown)
            truth_sum += float(graph.constraint_truths.sum())
            truth_count += graph.constraint_truths.size

        val_loss, val_entropy = _validation_stats(model, encoded_val)
        row = _mean_breakdown(parts)
        row["epoch"] = epoch
        row["val_loss"] = val_loss
        row["state_usage_entropy"] = val_entropy
        row["constraint_mean_truth"] = (truth_sum / truth_count
                                        if truth_count else 1.0)
        curves.append(row)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in model.store.values.items()}

    model.store.load_values(best_params)
    ckpt_path = os.path.join(cfg.output_dir, "checkpoint.dsf")
    rng_state = {"seed": cfg.seed, "adam_steps": model.store.step_count}
    save_checkpoint(ckpt_path, model.store, rng_state)
    _atomic_write(os.path.join(cfg.output_dir, "losses.jsonl"),
                  "".join(json.dumps(r, sort_keys=True) + "\n" for r in curves))

    report, structure = _evaluate_model(model, cfg, test_corpus, vocab)
    _atomic_write(os.path.join(cfg.output_dir, "report.json"), report.to_json())
    _atomic_write(os.path.join(cfg.output_dir, "structure.dot"),
                  structure_to_dot(structure, cfg.min_prob))
    return RunArtifacts(
        output_dir=cfg.output_dir, checkpoint_path=ckpt_path,
        loss_curves=curves, report=report, structure=structure,
        config_hash=cfg.config_hash())


def _check_class_indices(cfg: RunConfig, model_cfg: ModelConfig,
                         encoded_train: list[dict], label_mask: set[int] | None,
                         groundings_by_dialog: dict[int, list]) -> None:
    """Every class index the run touches must fit in the latent dimension."""
    k = model_cfg.k_states
    if label_mask:
        for d in encoded_train:
            for uid, lab in zip(d["utt_ids"], d["labels"]):
                if uid in label_mask and lab >= k:
                    raise ConfigError(
                        f"class_map index {lab} does not fit k_states={k}")
    for groundings in groundings_by_dialog.values():
        for g in groundings:
            for _, cls_idx in g.open_refs():
                if cls_idx >= k:
                    raise ConfigError(
                        f"rule class index {cls_idx} does not fit k_states={k}")


def _validation_stats(model: DDVRNN, encoded_val: list[dict]) -> tuple[float, float]:
    """Mean per-dialog (reconstruction + KL) and posterior entropy on validation."""
    if not encoded_val:
        return 0.0, 0.0
    totals, weights = [], []
    rows = []
    for lo in range(0, len(encoded_val), 64):
        chunk = encoded_val[lo: lo + 64]
        batch = make_batch(chunk)
        graph = model.build_batch_graph(batch)
        totals.append(graph.breakdown.reconstruction + graph.breakdown.kl)
        weights.append(len(chunk))
        row_map = _batch_row_map(batch)
        rows.append(graph.decisions[sorted(row_map.values())])
    val_loss = float(np.average(totals, weights=weights))
    entropy = _posterior_entropy(np.concatenate(rows, axis=0))
    return val_loss, entropy


# ---------------------------------------------------------------------------
# Evaluation

def _evaluate_model(model: DDVRNN, cfg: RunConfig, corpus: DialogCorpus,
                    vocab: Vocabulary) -> tuple[MetricsReport, StructureGraph]:
    if not corpus.dialogs:
        raise ConfigError("evaluation corpus is empty")
    encoded = encode_dialogs(corpus, vocab, model.cfg, cfg.class_map)
    decisions, features = _predict_corpus(model, encoded, corpus.n_utterances())
    pred = decisions.argmax(axis=1)  # ties resolve to the lowest index

    # Score over the utterances the model actually sees (dialog-length cap).
    seen = [uid for d in encoded for uid in d["utt_ids"]]
    gold_all = corpus.gold_labels()
    gold = [gold_all[u] for u in seen]
    pred_labels = pred[seen].tolist()
    ami_value = ami(pred_labels, gold)
    purity_value = purity(pred_labels, gold)

    feats_seen = features[seen]
    act_probe = linear_probe(feats_seen, gold, "full", cfg.seed)
    domains_all = [corpus.dialogs[di].domain
                   for _, di, _, _ in corpus.iter_utterances()]
    domains = [domains_all[u] for u in seen]
    if len(set(domains)) > 1:
        domain_probe = linear_probe(feats_seen, domains, "full", cfg.seed)
        full_acc = 0.5 * (act_probe + domain_probe)
    else:
        full_acc = act_probe
    few_shot = {}
    for shots in cfg.eval_shots:
        few_shot[str(shots)] = linear_probe(feats_seen, gold, int(shots), cfg.seed)
    few_mean = float(np.mean(list(few_shot.values()))) if few_shot else 0.0

    mean_truth = 1.0
    if cfg.constraint and cfg.rules_path:
        ruleset = load_ruleset(cfg.rules_path)
        table = (load_token_table(cfg.token_table_path)
                 if cfg.token_table_path else None)
        obs = build_observations(corpus, lexicons=cfg.lexicons,
                                 token_table=table, class_map=cfg.class_map)
        groundings = ground(ruleset, obs, cap=cfg.grounding_cap)
        if groundings:
            dec_node = ad.const(decisions)
            groups = batch_rule_truths(groundings, dec_node, cfg.logic_config())
            truths = np.concatenate([t.value for t, _ in groups])
            mean_truth = float(truths.mean())

    sequences = [pred[d["utt_ids"]].tolist() for d in encoded]
    structure = induce_structure(sequences, min_prob=cfg.min_prob,
                                 n_states=model.cfg.k_states)

    report = MetricsReport(
        ami=float(ami_value),
        purity=float(purity_value),
        class_balanced_accuracy=float(full_acc),
        few_shot_accuracies=few_shot,
        few_shot_mean=few_mean,
        constraint_mean_truth=float(mean_truth),
        state_usage_entropy=_posterior_entropy(decisions[seen]),
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
    )
    return report, structure


def load_run(checkpoint_path: str) -> tuple[DDVRNN, RunConfig, Vocabulary]:
    """Rebuild a trained model from a run directory's artifacts."""
    run_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    config_path = os.path.join(run_dir, "config.json")
    vocab_path = os.path.join(run_dir, "vocab.txt")
    for p in (checkpoint_path, config_path, vocab_path):
        if not os.path.exists(p):
            raise ConfigError(f"missing run artifact: {p}")
    with open(config_path, "r", encoding="utf-8") as f:
        cfg = RunConfig.from_dict(json.load(f))
    vocab = Vocabulary.load(vocab_path)
    model = DDVRNN(cfg.model_config(len(vocab)), seed=cfg.seed)
    values, _ = load_checkpoint(checkpoint_path)
    emb = values.get("emb")
    if emb is not None and emb.shape[0] != len(vocab):
        raise ConfigError(
            f"vocabulary mismatch: checkpoint embeds {emb.shape[0]} tokens, "
            f"vocabulary file has {len(vocab)}")
    model.store.load_values(values)
    return model, cfg, vocab


def evaluate(checkpoint_path: str, corpus: DialogCorpus,
             cfg: RunConfig | None = None) -> tuple[MetricsReport, StructureGraph]:
    """Score a saved checkpoint against a labeled corpus."""
    model, run_cfg, vocab = load_run(checkpoint_path)
    if cfg is None:
        cfg = run_cfg
    return _evaluate_model(model, cfg, corpus, vocab)


def probe_features(checkpoint_path: str, corpus: DialogCorpus) -> tuple[np.ndarray, list[str]]:
    """Frozen per-utterance probe features and gold labels for a corpus."""
    model, cfg, vocab = load_run(checkpoint_path)
    encoded = encode_dialogs(corpus, vocab, model.cfg, cfg.class_map)
    _, features = _predict_corpus(model, encoded, corpus.n_utterances())
    seen = [uid for d in encoded for uid in d["utt_ids"]]
    gold_all = corpus.gold_labels()
    return features[seen], [gold_all[u] for u in seen]


def predict_states(checkpoint_path: str, corpus: DialogCorpus) -> list[list[int]]:
    """Argmax posterior state sequence per dialog."""
    model, cfg, vocab = load_run(checkpoint_path)
    encoded = encode_dialogs(corpus, vocab, model.cfg, cfg.class_map)
    decisions, _ = _predict_corpus(model, encoded, corpus.n_utterances())
    pred = decisions.argmax(axis=1)
    return [pred[d["utt_ids"]].tolist() for d in encoded]


# ---------------------------------------------------------------------------
# Suites

def _suite_child(args: tuple) -> tuple[str, int, dict | None, str | None]:
    cell_name, seed, cfg_dict = args
    try:
        cfg = RunConfig.from_dict(cfg_dict)
        artifacts = train(cfg)
        return cell_name, seed, artifacts.report.to_dict(), None
    except Exception:
        return cell_name, seed, None, traceback.format_exc()


def run_suite(base_cfg: RunConfig, axes: dict[str, list[dict]],
              seeds: list[int], suite_dir: str | None = None,
              workers: int = 1) -> dict:
    """Cartesian product of axis overrides x seeds, aggregated per cell.

    Overrides use dotted config paths ("logic.relaxation"). Completed runs
    (matching config hash in their report) are skipped, so an interrupted
    suite resumes where it stopped. Child failures are recorded per cell
    without aborting the suite.
    """
    suite_dir = suite_dir or base_cfg.output_dir
    os.makedirs(suite_dir, exist_ok=True)
    axis_names = sorted(axes)
    cells: list[tuple[str, dict]] = [("base", {})]
    for name in axis_names:
        new_cells = []
        for cell_name, overrides in cells:
            for choice in axes[name]:
                label = "-".join(str(v) for v in choice.values()) or name
                merged = dict(overrides)
                merged.update(choice)
                prefix = "" if cell_name == "base" else cell_name + "_"
                new_cells.append((f"{prefix}{label}", merged))
        cells = new_cells

    jobs = []
    results: dict[str, dict[int, dict]] = {}
    errors: dict[str, dict[int, str]] = {}
    for cell_name, overrides in cells:
        results[cell_name] = {}
        errors[cell_name] = {}
        for seed in seeds:
            cfg_dict = copy.deepcopy(base_cfg.to_dict())
            for dotted, value in overrides.items():
                _apply_override(cfg_dict, dotted, value)
            cfg_dict["training"]["seed"] = int(seed)
            run_dir = os.path.join(suite_dir, cell_name, f"seed{seed}")
            cfg_dict["data"]["output_dir"] = run_dir
            expected_hash = RunConfig.from_dict(cfg_dict).config_hash()
            report_path = os.path.join(run_dir, "report.json")
            if os.path.exists(report_path):
                with open(report_path, "r", encoding="utf-8") as f:
                    report = json.load(f)
                if report.get("config_hash") == expected_hash:
                    results[cell_name][seed] = report
                    continue
            jobs.append((cell_name, seed, cfg_dict))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_suite_child, jobs))
    else:
        outcomes = [_suite_child(j) for j in jobs]
    for cell_name, seed, report, err in outcomes:
        if err is None:
            results[cell_name][seed] = report
        else:
            errors[cell_name][seed] = err

    table = {"cells": {}, "seeds": list(seeds)}
    for cell_name, _ in cells:
        reports = results[cell_name]
        cell = {"runs": len(reports), "errors": errors[cell_name]}
        if reports:
            for metric in ("ami", "purity", "class_balanced_accuracy",
                           "few_shot_mean"):
                vals = [r[metric] for r in reports.values()]
                cell[metric] = {"mean": float(np.mean(vals)),
                                "std": float(np.std(vals))}
        table["cells"][cell_name] = cell
    _atomic_write(os.path.join(suite_dir, "suite_results.json"),
                  json.dumps(table, indent=2, sort_keys=True))
    return table


def _apply_override(cfg_dict: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg_dict
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
