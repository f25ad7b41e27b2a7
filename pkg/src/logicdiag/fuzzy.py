"""Fuzzy-logic scoring of rule satisfaction over probabilistic predictions.

Connectives follow the product/max/complement operators; quantifiers use
the generalized-mean form with exponent ``q``:

    exists_q(phi) = (mean(phi^q))^(1/q)
    forall_q(phi) = 1 - (mean((1 - phi)^q))^(1/q)

Each rule family has a closed-form truth degree over a batch of
per-concept probabilities (implication ``a -> b`` rewritten as
``1 - a + a*b``); a concept's conflict degree is the complement of the
mean truth degree of its applicable rules. Families with no instance at a
concept (no parent at the root, no children at leaves, no siblings) are
vacuously true and contribute 1 under the per-family grouping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .diagnosis import Diagnosis
from .errors import ValidationError
from .hierarchy import LabelHierarchy
from .rules import GroundRuleSet, RuleKind

DEFAULT_CLAMP_EPSILON = 1e-7
DEFAULT_Q = 5

_FAMILY_ROW = {
    RuleKind.COMPOSITION: 0,
    RuleKind.DECOMPOSITION: 1,
    RuleKind.EXCLUSION: 2,
}


class ConflictGrouping(enum.Enum):
    # Average over the three rule families (vacuous ones counting as 1),
    # or only over the ground rules actually anchored at the concept.
    PER_FAMILY = "per-family"
    PER_GROUND_RULE = "per-ground-rule"


@dataclass(frozen=True)
class FuzzyConfig:
    q: int = DEFAULT_Q
    conflict_grouping: ConflictGrouping = ConflictGrouping.PER_FAMILY

    def __post_init__(self):
        if not isinstance(self.q, int) or self.q < 1:
            raise ValidationError("q must be >= 1")


@dataclass(frozen=True)
class ProbBatch:
    """Per-datapoint per-concept probabilities, clamped away from 0 and 1."""

    values: np.ndarray
    clamp_epsilon: float = DEFAULT_CLAMP_EPSILON

    @classmethod
    def from_array(
        cls, arr: np.ndarray, clamp_epsilon: float = DEFAULT_CLAMP_EPSILON
    ) -> "ProbBatch":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValidationError(
                f"probability batch must be 2-D with at least one row, "
                f"got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValidationError("probability batch contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("probabilities must lie in [0, 1]")
        if not 0.0 < clamp_epsilon < 0.5:
            raise ValidationError("clamp_epsilon must lie in (0, 0.5)")
        return cls(np.clip(arr, clamp_epsilon, 1.0 - clamp_epsilon), clamp_epsilon)

    @property
    def num_datapoints(self) -> int:
        return self.values.shape[0]

    @property
    def num_concepts(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ConflictProfile:
    """Per-concept conflict degrees plus the truth degrees behind them.

    ``g_values`` has one row per rule family; entries are NaN where the
    family has no instance at that concept.
    """

    c: np.ndarray
    g_values: np.ndarray
    grouping: ConflictGrouping

    def family_truth(self, kind: RuleKind) -> np.ndarray:
        return self.g_values[_FAMILY_ROW[kind]]


def _check_unit(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all() or (x < 0.0).any() or (x > 1.0).any():
        raise ValidationError(f"{name} must lie in [0, 1]")
    return x


def t_norm(a, b):
    """Product conjunction."""
    return _check_unit(a, "t_norm input") * _check_unit(b, "t_norm input")


def t_conorm(a, b):
    """Max disjunction."""
    return np.maximum(_check_unit(a, "t_conorm input"), _check_unit(b, "t_conorm input"))


def f_neg(a):
    """Complement negation."""
    return 1.0 - _check_unit(a, "f_neg input")


def _check_q(q: int) -> int:
    if not isinstance(q, (int, np.integer)) or q < 1:
        raise ValidationError("q must be >= 1")
    return int(q)


def exists_q(phi, q: int) -> float:
    phi = _check_unit(phi, "quantifier input")
    q = _check_q(q)
    if phi.size == 0:
        raise ValidationError("quantifier over an empty vector is undefined")
    return float(np.mean(phi**q) ** (1.0 / q))


def forall_q(phi, q: int) -> float:
    phi = _check_unit(phi, "quantifier input")
    q = _check_q(q)
    if phi.size == 0:
        raise ValidationError("quantifier over an empty vector is undefined")
    return float(1.0 - np.mean((1.0 - phi) ** q) ** (1.0 / q))


def truth_composition(p: ProbBatch, o: int, h: LabelHierarchy, q: int) -> float:
    """Batch truth degree of "o implies its parent"; vacuously 1 at the root."""
    q = _check_q(q)
    if h.is_root(o):
        return 1.0
    P = p.values
    base = P[:, o] * (1.0 - P[:, h.parent(o)])
    return float(1.0 - np.mean(base**q) ** (1.0 / q))


def truth_decomposition(p: ProbBatch, o: int, h: LabelHierarchy, q: int) -> float:
    """Batch truth degree of "o implies some child"; vacuously 1 at leaves."""
    q = _check_q(q)
    if h.is_leaf(o):
        return 1.0
    P = p.values
    kid_max = P[:, list(h.children_of(o))].max(axis=1)
    base = P[:, o] * (1.0 - kid_max)
    return float(1.0 - np.mean(base**q) ** (1.0 / q))


def truth_exclusion(p: ProbBatch, o: int, h: LabelHierarchy, q: int) -> float:
    """Batch truth degree of "o forbids its siblings", averaged one-vs-one.

    Vacuously 1 when ``o`` has no siblings.
    """
    q = _check_q(q)
    sibs = h.siblings(o)
    if not sibs:
        return 1.0
    P = p.values
    co_fire = P[:, [o]] * P[:, list(sibs)]
    inner = np.mean(co_fire**q, axis=0) ** (1.0 / q)
    return float(1.0 - inner.mean())


def conflict_profile(
    p: ProbBatch, h: LabelHierarchy, k: GroundRuleSet, cfg: FuzzyConfig
) -> ConflictProfile:
    """Per-concept conflict degrees for one batch.

    Computed once per batch (the batch is the sample approximating the
    universal quantifier) and broadcast to all of its datapoints.
    """
    if p.num_concepts != len(h):
        raise ValidationError(
            f"batch has {p.num_concepts} concepts, hierarchy has {len(h)}"
        )
    n = len(h)
    q = cfg.q
    P = p.values
    g = np.full((3, n), np.nan)

    non_root = np.array([o for o in range(n) if not h.is_root(o)])
    parents = np.array([h.parent(o) for o in non_root])
    base = P[:, non_root] * (1.0 - P[:, parents])
    g[0, non_root] = 1.0 - np.mean(base**q, axis=0) ** (1.0 / q)

    for o in range(n):
        if not h.is_leaf(o):
            g[1, o] = truth_decomposition(p, o, h, q)
        if h.siblings(o):
            g[2, o] = truth_exclusion(p, o, h, q)

    if cfg.conflict_grouping is ConflictGrouping.PER_FAMILY:
        filled = np.where(np.isnan(g), 1.0, g)
        c = 1.0 - filled.mean(axis=0)
    else:
        c = 1.0 - np.nanmean(g, axis=0)
    return ConflictProfile(c=np.clip(c, 0.0, 1.0), g_values=g, grouping=cfg.conflict_grouping)


def normality(p_ox: float, c_o: float, predicted_true: bool) -> float:
    """Probability that one output is non-faulty (confidence x calm)."""
    p_ox = float(_check_unit(p_ox, "predictive probability"))
    c_o = float(_check_unit(c_o, "conflict degree"))
    confidence = p_ox if predicted_true else 1.0 - p_ox
    return confidence * (1.0 - c_o)


def normality_matrix(
    probs: np.ndarray, c: np.ndarray, assignments: np.ndarray
) -> np.ndarray:
    """Vectorized normality for every (datapoint, concept) pair."""
    confidence = np.where(assignments, probs, 1.0 - probs)
    return confidence * (1.0 - c)[None, :]


def diagnosis_likelihood(d: Diagnosis, normality_vector: np.ndarray) -> float:
    """Independent-failure likelihood of a diagnosis.

    Product of normality over outputs kept normal and of (1 - normality)
    over the flipped ones.
    """
    n = _check_unit(normality_vector, "normality vector")
    factors = n.copy()
    for o in d.flips:
        factors[o] = 1.0 - n[o]
    return float(np.prod(factors))
