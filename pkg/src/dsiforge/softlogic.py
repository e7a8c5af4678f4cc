"""Differentiable truth values for ground rules and the constraint loss.

Two connective semantics over [0,1]:

    Lukasiewicz:  A & B = max(0, A + B - 1)   A | B = min(1, A + B)   !A = 1 - A
    Product-Real: A & B = A * B               A | B = A + B - A * B   !A = 1 - A

An implication body -> head is evaluated as !(body conjunction) | (head
disjunction). The constraint penalty per ground rule is lambda * (1 - t)
under the linear relaxation and lambda * (-log max(eps, t)) under the log
relaxation; the latter carries a 1/t factor in its gradient, so barely
satisfied rules push back much harder than safely satisfied ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .rules import GroundRule

LOGICS = ("lukasiewicz", "product-real")
RELAXATIONS = ("linear", "log")
NORMALIZATIONS = ("standard", "normalized")
AGGREGATIONS = ("mean", "sum")


@dataclass
class LogicConfig:
    logic: str = "lukasiewicz"
    relaxation: str = "linear"
    normalization: str = "standard"
    epsilon_clamp: float = 1e-6
    aggregation: str = "mean"

    def __post_init__(self):
        if self.logic not in LOGICS:
            raise ConfigError(f"logic must be one of {LOGICS}")
        if self.relaxation not in RELAXATIONS:
            raise ConfigError(f"relaxation must be one of {RELAXATIONS}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if not (0.0 < self.epsilon_clamp < 0.1):
            raise ConfigError("epsilon_clamp must lie in (0, 0.1)")


@dataclass
class RuleTruth:
    rule: GroundRule
    node: ad.Node      # truth value(s) in [0,1]
    weight: float


def _check_unit_range(x: ad.Node) -> None:
    v = x.value
    if np.any(v < -1e-9) or np.any(v > 1.0 + 1e-9):
        raise NumericError(
            f"soft-logic operand outside [0,1]: range [{v.min()}, {v.max()}]")


def connective(kind: str, operands: list, logic: str = "lukasiewicz") -> ad.Node:
    """Fold a soft connective over operands (nodes or floats), left to right."""
    if logic not in LOGICS:
        raise ConfigError(f"logic must be one of {LOGICS}")
    ops = [ad.lift(o) for o in operands]
    for o in ops:
        _check_unit_range(o)
    if kind == "not":
        if len(ops) != 1:
            raise ConfigError("'not' takes exactly one operand")
        return ad.const(1.0) - ops[0]
    if kind not in ("and", "or"):
        raise ConfigError(f"unknown connective '{kind}'")
    if not ops:
        raise ConfigError(f"'{kind}' needs at least one operand")
    acc = ops[0]
    for rhs in ops[1:]:
        if logic == "lukasiewicz":
            if kind == "and":
                acc = ad.maxs(acc + rhs - 1.0, 0.0)
            else:
                acc = ad.mins(acc + rhs, 1.0)
        else:
            if kind == "and":
                acc = ad.mul(acc, rhs)
            else:
                acc = acc + rhs - ad.mul(acc, rhs)
    return acc


def normalized_negation(row: ad.Node, class_index: int) -> ad.Node:
    """Negation of one class of a probability row, renormalized to a distribution.

    The complement vector 1 - p has L1 norm K - 1, so its c-th component after
    renormalization is (1 - p_c) / (K - 1). For K = 2 this is the standard
    complement.
    """
    k = row.value.shape[-1]
    if k < 2:
        raise ConfigError("normalized negation needs at least 2 classes")
    onehot = np.zeros(row.value.shape)
    onehot[..., class_index] = 1.0
    p = ad.rsum(ad.mul(row, ad.const(onehot)))
    return (ad.const(1.0) - p) / float(k - 1)


def _literal_values(literals, decisions: ad.Node, cfg: LogicConfig,
                    n_ground: int) -> list[ad.Node]:
    """Value vector [n_ground] per literal position, observed ones as constants."""
    k = decisions.value.shape[1]
    out = []
    for pos, column in enumerate(literals):
        refs = [lit.ref for lit in column]
        if refs[0] is None:
            vals = np.array([lit.observed_value for lit in column], dtype=np.float64)
            negs = np.array([lit.negated for lit in column])
            vals[negs] = 1.0 - vals[negs]
            out.append(ad.const(vals))
            continue
        utts = np.array([r[0] for r in refs], dtype=np.int64)
        mask = np.zeros((n_ground, k))
        mask[np.arange(n_ground), [r[1] for r in refs]] = 1.0
        rows = ad.lookup(decisions, utts)
        p = ad.rsum(ad.mul(rows, ad.const(mask)), axis=1)
        negated = column[0].negated
        if not negated:
            out.append(p)
        elif cfg.normalization == "normalized" and k >= 2:
            out.append((ad.const(1.0) - p) / float(k - 1))
        else:
            out.append(ad.const(1.0) - p)
    return out


def _truth_vector(rules: list[GroundRule], decisions: ad.Node,
                  cfg: LogicConfig) -> ad.Node:
    """Truth values [len(rules)] for groundings sharing one template."""
    n = len(rules)
    body_cols = list(zip(*[r.body for r in rules]))
    head_cols = list(zip(*[r.head for r in rules]))
    body_vals = _literal_values(body_cols, decisions, cfg, n)
    head_vals = _literal_values(head_cols, decisions, cfg, n)
    body = connective("and", body_vals, cfg.logic) if len(body_vals) > 1 else body_vals[0]
    head = connective("or", head_vals, cfg.logic) if len(head_vals) > 1 else head_vals[0]
    return connective("or", [connective("not", [body], cfg.logic), head], cfg.logic)


def rule_truth(rule: GroundRule, decisions: ad.Node, cfg: LogicConfig) -> RuleTruth:
    """Scalar truth of one ground rule against the decision matrix."""
    vec = _truth_vector([rule], decisions, cfg)
    return RuleTruth(rule=rule, node=ad.rsum(vec), weight=rule.weight)


def batch_rule_truths(rules: list[GroundRule], decisions: ad.Node,
                      cfg: LogicConfig) -> list[tuple[ad.Node, np.ndarray]]:
    """Vectorized truths, one (values, weights) pair per template.

    Groundings are grouped by template so each group shares a literal layout
    and evaluates as a handful of tensor ops instead of per-instance scalars.
    """
    groups: dict[int, list[GroundRule]] = {}
    for r in rules:
        groups.setdefault(r.template_index, []).append(r)
    out = []
    for ti in sorted(groups):
        group = groups[ti]
        weights = np.array([r.weight for r in group], dtype=np.float64)
        out.append((_truth_vector(group, decisions, cfg), weights))
    return out


def _penalty(truth: ad.Node, weights, cfg: LogicConfig) -> ad.Node:
    w = ad.const(weights)
    if cfg.relaxation == "linear":
        return ad.mul(w, ad.const(1.0) - truth)
    return ad.mul(w, -ad.log(ad.maxs(truth, cfg.epsilon_clamp)))


def constraint_loss(rule_truths: list[RuleTruth], cfg: LogicConfig) -> ad.Node:
    """Aggregate penalty over scalar rule truths (mean by default)."""
    if not rule_truths:
        warnings.warn("constraint_loss called with no ground rules; loss is 0")
        return ad.const(0.0)
    total = None
    for rt in rule_truths:
        p = _penalty(rt.node, rt.weight, cfg)
        total = p if total is None else total + p
    if cfg.aggregation == "mean":
        total = total / float(len(rule_truths))
    _check_finite(total)
    return total


def constraint_loss_vec(truth_groups: list[tuple[ad.Node, np.ndarray]],
                        cfg: LogicConfig) -> ad.Node:
    """Aggregate penalty over vectorized per-template truths."""
    if not truth_groups:
        warnings.warn("constraint_loss called with no ground rules; loss is 0")
        return ad.const(0.0)
    penalties = [_penalty(t, w, cfg) for t, w in truth_groups]
    flat = ad.concat(penalties, axis=0) if len(penalties) > 1 else penalties[0]
    loss = ad.rmean(flat) if cfg.aggregation == "mean" else ad.rsum(flat)
    _check_finite(loss)
    return loss


def _check_finite(node: ad.Node) -> None:
    if not np.all(np.isfinite(node.value)):
        raise NumericError("constraint loss is non-finite")
