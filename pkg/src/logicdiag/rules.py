"""Ground propositional rules compiled from a label hierarchy.

Three rule families cover the tree structure: a true concept implies its
parent (Composition), a true concept implies at least one child
(Decomposition), and a true concept forbids its siblings (Exclusion).
Rules are grounded once per hierarchy and evaluated against per-datapoint
boolean assignments; the same rule set serves every datapoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .hierarchy import LabelHierarchy


class RuleKind(enum.Enum):
    COMPOSITION = "Composition"
    DECOMPOSITION = "Decomposition"
    EXCLUSION = "Exclusion"


@dataclass(frozen=True)
class GroundRule:
    kind: RuleKind
    anchor: int
    consequents: tuple[int, ...]

    @property
    def support(self) -> frozenset[int]:
        """Every concept id the rule mentions."""
        return frozenset((self.anchor, *self.consequents))


class GroundRuleSet:
    """Immutable, deterministic list of ground rules over one hierarchy.

    Rules are ordered by family (Composition, Decomposition, Exclusion)
    and ascending anchor id. Evaluation is pure and thread-safe.
    """

    def __init__(self, hierarchy: LabelHierarchy, rules: list[GroundRule]):
        self.hierarchy = hierarchy
        self.rules = tuple(rules)
        self._by_kind: dict[RuleKind, tuple[GroundRule, ...]] = {
            kind: tuple(r for r in rules if r.kind is kind) for kind in RuleKind
        }
        self._by_anchor: dict[int, tuple[GroundRule, ...]] = {}
        for r in rules:
            self._by_anchor.setdefault(r.anchor, ())
            self._by_anchor[r.anchor] += (r,)
        # Bitmask mirrors of each rule for fast repeated evaluation.
        self._anchor_bits = tuple(1 << r.anchor for r in rules)
        self._consequent_masks = tuple(
            sum(1 << c for c in r.consequents) for r in rules
        )
        self._exclusion_flags = tuple(r.kind is RuleKind.EXCLUSION for r in rules)

    @property
    def num_concepts(self) -> int:
        return len(self.hierarchy)

    def __len__(self) -> int:
        return len(self.rules)

    def by_kind(self, kind: RuleKind) -> tuple[GroundRule, ...]:
        return self._by_kind[kind]

    def anchored_at(self, o: int) -> tuple[GroundRule, ...]:
        """Ground rules whose antecedent concept is ``o``."""
        return self._by_anchor.get(o, ())

    # -- bitmask fast path -------------------------------------------------

    def violated_indices_mask(self, mask: int) -> list[int]:
        """Indices of rules violated by an assignment given as a bitmask."""
        out = []
        for i, (abit, cmask, excl) in enumerate(
            zip(self._anchor_bits, self._consequent_masks, self._exclusion_flags)
        ):
            if mask & abit and bool(mask & cmask) == excl:
                out.append(i)
        return out

    def is_consistent_mask(self, mask: int) -> bool:
        for abit, cmask, excl in zip(
            self._anchor_bits, self._consequent_masks, self._exclusion_flags
        ):
            if mask & abit and bool(mask & cmask) == excl:
                return False
        return True

    def support_mask(self, rule_index: int) -> int:
        return self._anchor_bits[rule_index] | self._consequent_masks[rule_index]


def compile_rules(h: LabelHierarchy) -> GroundRuleSet:
    """Ground the three rule families over ``h`` in deterministic order."""
    rules: list[GroundRule] = []
    for o in range(len(h)):
        if not h.is_root(o):
            rules.append(GroundRule(RuleKind.COMPOSITION, o, (h.parent(o),)))
    for o in range(len(h)):
        if not h.is_leaf(o):
            rules.append(GroundRule(RuleKind.DECOMPOSITION, o, h.children_of(o)))
    for o in range(len(h)):
        sibs = h.siblings(o)
        if sibs:
            rules.append(GroundRule(RuleKind.EXCLUSION, o, sibs))
    return GroundRuleSet(h, rules)


def check_assignment(a: np.ndarray, num_concepts: int) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1 or a.shape[0] != num_concepts:
        raise ValidationError(
            f"assignment must be a length-{num_concepts} boolean vector, "
            f"got shape {a.shape}"
        )
    return a.astype(bool)


def assignment_mask(a: np.ndarray) -> int:
    """Pack a boolean assignment into an integer bitmask (bit i = concept i)."""
    mask = 0
    for i in np.flatnonzero(a):
        mask |= 1 << int(i)
    return mask


def mask_to_assignment(mask: int, num_concepts: int) -> np.ndarray:
    a = np.zeros(num_concepts, dtype=bool)
    for i in range(num_concepts):
        if mask >> i & 1:
            a[i] = True
    return a


def assignment_from_names(h: LabelHierarchy, names: list[str]) -> np.ndarray:
    a = np.zeros(len(h), dtype=bool)
    for n in names:
        a[h.id_of(n)] = True
    return a


def eval_rule(rule: GroundRule, a: np.ndarray) -> bool:
    """Crisp truth of one ground rule under an assignment."""
    if not a[rule.anchor]:
        return True
    hit = any(bool(a[c]) for c in rule.consequents)
    return not hit if rule.kind is RuleKind.EXCLUSION else hit


def violated_rules(k: GroundRuleSet, a: np.ndarray) -> list[GroundRule]:
    a = check_assignment(a, k.num_concepts)
    mask = assignment_mask(a)
    return [k.rules[i] for i in k.violated_indices_mask(mask)]


def is_consistent(k: GroundRuleSet, a: np.ndarray) -> bool:
    """True iff the assignment violates no ground rule (no conflict)."""
    a = check_assignment(a, k.num_concepts)
    return k.is_consistent_mask(assignment_mask(a))
