"""Clustering agreement metrics, linear probes, and structure extraction.

AMI follows the permutation-model definition

    AMI(U, V) = (MI - E[MI]) / (avg(H(U), H(V)) - E[MI])

with the expected mutual information computed by the exact hypergeometric
sum over cell counts (no sampling), and the arithmetic mean for the entropy
average. Purity assigns each predicted cluster its majority gold class and
divides the total matched count by the number of points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .datagen import StructureGraph
from .errors import ConfigError
from .rng import stream


@dataclass
class ContingencyTable:
    counts: np.ndarray   # [n_pred_clusters, n_gold_classes]
    a: np.ndarray        # predicted marginals
    b: np.ndarray        # gold marginals
    n: int
    pred_values: list = field(default_factory=list)
    gold_values: list = field(default_factory=list)


def contingency(pred, gold) -> ContingencyTable:
    pred = list(pred)
    gold = list(gold)
    if len(pred) != len(gold):
        raise ConfigError(
            f"label sequences differ in length: {len(pred)} vs {len(gold)}")
    if not pred:
        raise ConfigError("label sequences are empty")
    pred_values = sorted(set(pred), key=str)
    gold_values = sorted(set(gold), key=str)
    pi = {v: i for i, v in enumerate(pred_values)}
    gi = {v: i for i, v in enumerate(gold_values)}
    counts = np.zeros((len(pred_values), len(gold_values)), dtype=np.int64)
    for p, g in zip(pred, gold):
        counts[pi[p], gi[g]] += 1
    return ContingencyTable(counts=counts, a=counts.sum(axis=1),
                            b=counts.sum(axis=0), n=len(pred),
                            pred_values=pred_values, gold_values=gold_values)


def _entropy(marginal: np.ndarray, n: int) -> float:
    p = marginal[marginal > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_information(table: ContingencyTable) -> float:
    n = table.n
    mi = 0.0
    for i in range(table.counts.shape[0]):
        for j in range(table.counts.shape[1]):
            nij = table.counts[i, j]
            if nij > 0:
                mi += (nij / n) * np.log(n * nij / (table.a[i] * table.b[j]))
    return float(mi)


def expected_mutual_information(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """E[MI] under the permutation model, via the exact hypergeometric sum."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    emi = 0.0
    log_n = np.log(n)
    for ai in a:
        if ai == 0:
            continue
        for bj in b:
            if bj == 0:
                continue
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            log_pmf = (gammaln(ai + 1) + gammaln(bj + 1)
                       + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                       - gammaln(n + 1) - gammaln(nij + 1)
                       - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                       - gammaln(n - ai - bj + nij + 1))
            terms = (nij / n) * (log_n + np.log(nij) - np.log(ai * bj))
            emi += float((terms * np.exp(log_pmf)).sum())
    return emi


def ami(pred, gold) -> float:
    """Adjusted mutual information; 1 for identical labelings, ~0 at chance."""
    table = contingency(pred, gold)
    mi = mutual_information(table)
    emi = expected_mutual_information(table.a, table.b, table.n)
    h_avg = 0.5 * (_entropy(table.a, table.n) + _entropy(table.b, table.n))
    denom = h_avg - emi
    if abs(denom) < 1e-15:
        return 0.0
    return float((mi - emi) / denom)


def purity(pred, gold) -> float:
    table = contingency(pred, gold)
    return float(table.counts.max(axis=1).sum() / table.n)


def class_balanced_accuracy(pred, gold) -> float:
    """Unweighted mean of per-class recall over classes present in gold."""
    pred = list(pred)
    gold = list(gold)
    if not gold:
        raise ConfigError("empty label sequences")
    recalls = []
    for cls in sorted(set(gold), key=str):
        idx = [i for i, g in enumerate(gold) if g == cls]
        hit = sum(1 for i in idx if pred[i] == cls)
        recalls.append(hit / len(idx))
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# Linear probing

def _train_softmax_regression(x: np.ndarray, y: np.ndarray, n_classes: int,
                              iters: int = 500, lr: float = 0.1,
                              l2: float = 1e-4) -> np.ndarray:
    xb = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    w = np.zeros((xb.shape[1], n_classes))
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), y] = 1.0
    for _ in range(iters):
        logits = xb @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = xb.T @ (p - onehot) / x.shape[0]
        grad[:-1] += l2 * w[:-1]
        w -= lr * grad
    return w


def linear_probe(features: np.ndarray, gold, shots, seed: int) -> float:
    """Class-balanced accuracy of a softmax-regression probe on held-out data.

    ``shots`` is "full" (seeded 70/30 train/eval split) or an integer k
    (k examples per class train, remainder eval). Features are standardized
    with statistics of the training portion.
    """
    features = np.asarray(features, dtype=np.float64)
    gold = list(gold)
    if features.shape[0] != len(gold):
        raise ConfigError("features and labels differ in length")
    classes = sorted(set(gold), key=str)
    cls_index = {c: i for i, c in enumerate(classes)}
    y = np.array([cls_index[g] for g in gold])
    rng = stream(seed, "probe", str(shots))

    if shots == "full":
        order = rng.permutation(len(y))
        cut = max(1, int(round(0.7 * len(y))))
        train_idx, eval_idx = order[:cut], order[cut:]
        present = set(y[train_idx].tolist())
        missing = [c for c in classes if cls_index[c] not in present]
        if missing:
            raise ConfigError(
                f"classes with zero training examples under full supervision: "
                f"{missing}")
    else:
        k = int(shots)
        train_parts = []
        for c in classes:
            idx = np.nonzero(y == cls_index[c])[0]
            take = min(k, len(idx))
            train_parts.append(rng.choice(idx, size=take, replace=False))
        train_idx = np.sort(np.concatenate(train_parts))
        eval_idx = np.setdiff1d(np.arange(len(y)), train_idx)
    if len(eval_idx) == 0:
        raise ConfigError("no held-out examples left for probe evaluation")

    mu = features[train_idx].mean(axis=0)
    sd = features[train_idx].std(axis=0)
    sd[sd < 1e-8] = 1.0
    xt = (features[train_idx] - mu) / sd
    xe = (features[eval_idx] - mu) / sd
    w = _train_softmax_regression(xt, y[train_idx], len(classes))
    xeb = np.concatenate([xe, np.ones((xe.shape[0], 1))], axis=1)
    pred = (xeb @ w).argmax(axis=1)
    return class_balanced_accuracy(pred.tolist(), y[eval_idx].tolist())


# ---------------------------------------------------------------------------
# Structure extraction

def induce_structure(sequences: list[list[int]], min_prob: float = 0.0005,
                     n_states: int | None = None,
                     state_names: list[str] | None = None) -> StructureGraph:
    """Empirical start/transition statistics of predicted state sequences.

    The returned matrix keeps full empirical mass; ``min_prob`` only governs
    which edges the DOT export shows. Rows for states never seen as a source
    fall back to uniform so the graph stays row-stochastic.
    """
    if not sequences or not any(sequences):
        raise ConfigError("no state sequences to induce a structure from")
    if n_states is None:
        n_states = max(max(s) for s in sequences if s) + 1
    if state_names is None:
        state_names = [f"state_{i}" for i in range(n_states)]
    start = np.zeros(n_states)
    counts = np.zeros((n_states, n_states))
    last_states = set()
    for seq in sequences:
        if not seq:
            continue
        start[seq[0]] += 1
        for s, t in zip(seq[:-1], seq[1:]):
            counts[s, t] += 1
        last_states.add(seq[-1])
    start /= start.sum()
    rows = counts.sum(axis=1, keepdims=True)
    trans = np.where(rows > 0, counts / np.maximum(rows, 1.0),
                     1.0 / n_states)
    return StructureGraph(
        state_names=list(state_names), start=start, transitions=trans,
        terminal_states=[state_names[s] for s in sorted(last_states)])


def structure_to_dot(graph: StructureGraph, min_prob: float = 0.0005) -> str:
    """DOT rendering; edges under ``min_prob`` are omitted."""
    lines = ["digraph structure {"]
    for i, name in enumerate(graph.state_names):
        extra = ""
        if graph.start[i] >= min_prob:
            extra = f' [label="{name}\\nstart={graph.start[i]:.3f}"]'
        lines.append(f'  "{name}"{extra};')
    for i, src in enumerate(graph.state_names):
        for j, dst in enumerate(graph.state_names):
            p = graph.transitions[i, j]
            if p >= min_prob:
                lines.append(f'  "{src}" -> "{dst}" [label="{p:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Report container

@dataclass
class MetricsReport:
    ami: float
    purity: float
    class_balanced_accuracy: float
    few_shot_accuracies: dict[str, float]
    few_shot_mean: float
    constraint_mean_truth: float
    state_usage_entropy: float
    seed: int
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "ami": self.ami,
            "purity": self.purity,
            "class_balanced_accuracy": self.class_balanced_accuracy,
            "few_shot_accuracies": self.few_shot_accuracies,
            "few_shot_mean": self.few_shot_mean,
            "constraint_mean_truth": self.constraint_mean_truth,
            "state_usage_entropy": self.state_usage_entropy,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls(**{k: obj[k] for k in (
            "ami", "purity", "class_balanced_accuracy", "few_shot_accuracies",
            "few_shot_mean", "constraint_mean_truth", "state_usage_entropy",
            "seed", "config_hash")})
