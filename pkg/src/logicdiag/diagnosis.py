"""Minimal-diagnosis enumeration and conflict resolution.

A diagnosis is a set of concept outputs assumed faulty; flipping exactly
those outputs must yield an assignment that satisfies every ground rule.
Enumeration explores a hitting-set tree over the support sets of violated
rules, with subset-minimality pruning and mandatory re-verification of
every candidate (flipping can introduce new violations). A guarded
exhaustive search over all flip subsets acts as the reference oracle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DiagnosisBoundExceeded, ValidationError
from .rules import GroundRuleSet, RuleKind, assignment_mask, check_assignment

_UNSCORED = -1.0

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SPLITMIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SPLITMIX_M2 = np.uint64(0x94D049BB133111EB)


class Strategy(enum.Enum):
    UNIFORM = "uniform"
    PREDICTIVE = "predictive"
    GREEDY = "greedy"
    SAMPLING = "sampling"


@dataclass
class Diagnosis:
    """A subset-minimal flip set, optionally scored with a likelihood.

    ``likelihood`` stays at the -1 sentinel until the fuzzy scoring step
    fills it in.
    """

    flips: tuple[int, ...]
    likelihood: float = field(default=_UNSCORED)

    @property
    def cardinality(self) -> int:
        return len(self.flips)

    def normal_ids(self, num_concepts: int) -> tuple[int, ...]:
        flipped = set(self.flips)
        return tuple(o for o in range(num_concepts) if o not in flipped)

    def flip_mask(self) -> int:
        return sum(1 << o for o in self.flips)


def _mask_to_flips(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _sorted_diagnoses(found: list[int]) -> list[Diagnosis]:
    flip_tuples = sorted((_mask_to_flips(m) for m in found), key=lambda f: (len(f), f))
    return [Diagnosis(f) for f in flip_tuples]


def enumerate_minimal_diagnoses(
    k: GroundRuleSet, a: np.ndarray, max_cardinality: int
) -> list[Diagnosis]:
    """All subset-minimal flip sets of size <= ``max_cardinality``.

    Returns the empty list when ``a`` is already consistent; raises
    :class:`DiagnosisBoundExceeded` when a conflict exists but no
    diagnosis fits within the bound. Output order is deterministic:
    ascending cardinality, then lexicographic by concept ids.
    """
    if max_cardinality < 1:
        raise ValidationError("max_cardinality must be a positive integer")
    a = check_assignment(a, k.num_concepts)
    base = assignment_mask(a)
    if k.is_consistent_mask(base):
        return []

    found: list[int] = []
    visited = {0}
    frontier = [0]
    for _depth in range(max_cardinality):
        next_frontier: list[int] = []
        for flips in frontier:
            # flips is inconsistent; branch on one violated rule's support.
            rule_idx = k.violated_indices_mask(base ^ flips)[0]
            support = k.support_mask(rule_idx) & ~flips
            while support:
                bit = support & -support
                support ^= bit
                child = flips | bit
                if child in visited:
                    continue
                visited.add(child)
                if any(d & child == d for d in found):
                    continue  # a subset already diagnosed; child is non-minimal
                if k.is_consistent_mask(base ^ child):
                    found.append(child)
                else:
                    next_frontier.append(child)
        frontier = next_frontier
        if not frontier:
            break

    if not found:
        raise DiagnosisBoundExceeded(max_cardinality)
    return _sorted_diagnoses(found)


def consistency_table(k: GroundRuleSet) -> np.ndarray:
    """Boolean consistency of every assignment bitmask, lazily cached.

    Guarded to hierarchies with at most 20 concepts (2^|O| rows).
    """
    cached = getattr(k, "_consistency_table", None)
    if cached is not None:
        return cached
    n = k.num_concepts
    if n > 20:
        raise ValidationError(
            f"hierarchy with {n} concepts is too large for exhaustive search"
        )
    masks = np.arange(1 << n, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(bool)
    ok = np.ones(1 << n, dtype=bool)
    for rule in k.rules:
        anchor = bits[:, rule.anchor]
        hit = bits[:, list(rule.consequents)].any(axis=1)
        if rule.kind is RuleKind.EXCLUSION:
            ok &= ~(anchor & hit)
        else:
            ok &= ~anchor | hit
    k._consistency_table = ok
    return ok


def brute_force_diagnoses(k: GroundRuleSet, a: np.ndarray) -> list[Diagnosis]:
    """Reference oracle: exhaustive subset-minimal diagnoses via 2^|O| scan."""
    a = check_assignment(a, k.num_concepts)
    table = consistency_table(k)
    base = assignment_mask(a)
    if table[base]:
        return []
    candidates = np.flatnonzero(table[np.arange(table.shape[0]) ^ base])
    popcounts = np.array([int(c).bit_count() for c in candidates])
    minimal: list[int] = []
    for c in candidates[np.argsort(popcounts, kind="stable")]:
        c = int(c)
        if not any(d & c == d for d in minimal):
            minimal.append(c)
    return _sorted_diagnoses(minimal)


def resolve(k: GroundRuleSet, a: np.ndarray, d: Diagnosis) -> np.ndarray:
    """Flip the diagnosed outputs; the result must be consistent."""
    a = check_assignment(a, k.num_concepts)
    out = a.copy()
    for o in d.flips:
        if not 0 <= o < k.num_concepts:
            raise ValidationError(f"flip id {o} outside concept range")
        out[o] = not out[o]
    if not k.is_consistent_mask(assignment_mask(out)):
        raise ContractViolation(
            f"flip set {d.flips} does not resolve the assignment"
        )
    return out


def select_diagnosis(
    ds: list[Diagnosis], strategy: Strategy, rng: np.random.Generator
) -> Diagnosis:
    """Pick one diagnosis according to the resolution strategy.

    Greedy takes the likelihood argmax (lowest ids break ties); Sampling
    and Predictive draw proportionally to the populated likelihoods,
    falling back to a uniform draw when all weights are zero; Uniform
    ignores likelihoods entirely.
    """
    if not ds:
        raise ValidationError("cannot select from an empty diagnosis list")
    if len(ds) == 1:
        return ds[0]
    if strategy is Strategy.UNIFORM:
        return ds[int(rng.integers(len(ds)))]

    lik = np.array([d.likelihood for d in ds], dtype=float)
    if np.any(lik < 0):
        raise ValidationError(f"{strategy.value} strategy requires scored diagnoses")
    if strategy is Strategy.GREEDY:
        best = np.flatnonzero(lik == lik.max())
        idx = min(best, key=lambda i: (len(ds[i].flips), ds[i].flips))
        return ds[int(idx)]
    total = lik.sum()
    if total <= 0.0:
        return ds[int(rng.integers(len(ds)))]
    cum = np.cumsum(lik / total)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return ds[min(idx, len(ds) - 1)]


def datapoint_uniforms(seed: int, indices: np.ndarray) -> np.ndarray:
    """Deterministic uniform in [0, 1) per (seed, datapoint index) pair.

    SplitMix64 applied to a per-index stream position, so the value for a
    given datapoint never depends on batch partitioning or thread count.
    """
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (idx + np.uint64(1)) * _SPLITMIX_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SPLITMIX_M1
        z = (z ^ (z >> np.uint64(27))) * _SPLITMIX_M2
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
