"""End-to-end batch revision of probabilistic multi-concept predictions.

Each row of a probability batch is binarized into a concept assignment;
inconsistent rows are repaired by picking one minimal diagnosis (scored
from predictive confidence and batch-level conflict degrees) and flipping
its outputs. Rows sharing a binarized pattern share their diagnosis list,
so enumeration runs once per distinct pattern, while scoring and
selection stay per-row. Selection randomness comes from per-datapoint
streams keyed on (seed, row index), making results independent of batch
partitioning and thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnosis import (
    Strategy,
    datapoint_uniforms,
    enumerate_minimal_diagnoses,
)
from .errors import ContractViolation, DiagnosisBoundExceeded, ValidationError
from .fuzzy import ConflictProfile, FuzzyConfig, ProbBatch, conflict_profile
from .hierarchy import LabelHierarchy
from .rules import GroundRuleSet, compile_rules
from .tensorio import read_tensor, write_labels, write_stats  # noqa: F401  (re-export)

IGNORE_LABEL = -1


@dataclass(frozen=True)
class RevisionConfig:
    binarize_threshold: float = 0.5
    strategy: Strategy = Strategy.SAMPLING
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)
    max_cardinality: int | None = None  # None: hierarchy depth + 2
    seed: int = 0
    tau: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValidationError("binarize_threshold must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValidationError("tau must lie in (0, 1)")
        if self.max_cardinality is not None and self.max_cardinality < 1:
            raise ValidationError("max_cardinality must be a positive integer")


@dataclass
class RevisionStats:
    num_rows: int
    consistent: int
    revised: int
    bound_exceeded: int
    ignored: int
    uniform_fallbacks: int
    diagnosis_cardinality_histogram: dict[int, int]
    conflict_degrees: list[float]

    def to_dict(self) -> dict:
        return {
            "num_rows": self.num_rows,
            "consistent": self.consistent,
            "revised": self.revised,
            "bound_exceeded": self.bound_exceeded,
            "ignored": self.ignored,
            "uniform_fallbacks": self.uniform_fallbacks,
            "diagnosis_cardinality_histogram": {
                str(c): n for c, n in sorted(self.diagnosis_cardinality_histogram.items())
            },
            "conflict_degrees": [float(v) for v in self.conflict_degrees],
        }


@dataclass
class RevisionResult:
    revised_assignments: np.ndarray
    leaf_labels: np.ndarray
    stats: RevisionStats
    conflict_profile: ConflictProfile


class _PatternOutcome:
    __slots__ = ("consistent", "bound_exceeded", "flip_matrix", "cardinalities")

    def __init__(self, consistent=False, bound_exceeded=False, flip_matrix=None,
                 cardinalities=None):
        self.consistent = consistent
        self.bound_exceeded = bound_exceeded
        self.flip_matrix = flip_matrix
        self.cardinalities = cardinalities


def _diagnose_pattern(
    rules: GroundRuleSet, pattern: np.ndarray, max_cardinality: int
) -> _PatternOutcome:
    try:
        ds = enumerate_minimal_diagnoses(rules, pattern, max_cardinality)
    except DiagnosisBoundExceeded:
        return _PatternOutcome(bound_exceeded=True)
    if not ds:
        return _PatternOutcome(consistent=True)
    n = rules.num_concepts
    flips = np.zeros((len(ds), n), dtype=bool)
    for j, d in enumerate(ds):
        flips[j, list(d.flips)] = True
        # Inline soundness check: the repaired pattern must be rule-clean.
        if not rules.is_consistent_mask(
            sum(1 << i for i in np.flatnonzero(pattern ^ flips[j]))
        ):
            raise ContractViolation("enumerated diagnosis fails verification")
    cards = np.array([d.cardinality for d in ds])
    return _PatternOutcome(flip_matrix=flips, cardinalities=cards)


def revise_batch(
    p: ProbBatch,
    h: LabelHierarchy,
    cfg: RevisionConfig,
    rules: GroundRuleSet | None = None,
    threads: int = 1,
) -> RevisionResult:
    """Binarize, diagnose, and repair every row of a probability batch.

    Rows whose assignment is already consistent pass through unchanged;
    rows that cannot be repaired within the cardinality bound keep their
    binarization but are marked ignored (label -1). Every non-ignored
    output row is consistent.
    """
    if p.num_concepts != len(h):
        raise ValidationError(
            f"batch width {p.num_concepts} does not match hierarchy size {len(h)}"
        )
    if rules is None:
        rules = compile_rules(h)
    max_card = cfg.max_cardinality or h.num_levels + 2

    assignments = p.values >= cfg.binarize_threshold
    profile = conflict_profile(p, h, rules, cfg.fuzzy)
    # Predictive selection scores by confidence alone.
    c_eff = np.zeros_like(profile.c) if cfg.strategy is Strategy.PREDICTIVE else profile.c

    packed = np.packbits(assignments, axis=1)
    patterns, inverse = np.unique(packed, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)  # numpy 2.0/2.1 return it as (N, 1)
    outcomes = []
    for row in patterns:
        pattern = np.unpackbits(row, count=p.num_concepts).astype(bool)
        outcomes.append(_diagnose_pattern(rules, pattern, max_card))

    revised = assignments.copy()
    bound_rows = np.zeros(p.num_datapoints, dtype=bool)
    counts = {"consistent": 0, "revised": 0, "bound_exceeded": 0, "fallbacks": 0}
    histogram: dict[int, int] = {}

    def process_group(gi: int) -> tuple[int, int, int, int, dict[int, int]]:
        rows = np.flatnonzero(inverse == gi)
        out = outcomes[gi]
        if out.consistent:
            return len(rows), 0, 0, 0, {}
        if out.bound_exceeded:
            bound_rows[rows] = True
            return 0, 0, len(rows), 0, {}
        flips = out.flip_matrix
        m = flips.shape[0]
        fallbacks = 0
        if m == 1:
            chosen = np.zeros(len(rows), dtype=np.intp)
        elif cfg.strategy is Strategy.UNIFORM:
            u = datapoint_uniforms(cfg.seed, rows)
            chosen = np.minimum((u * m).astype(np.intp), m - 1)
        else:
            pattern = assignments[rows[0]]
            probs = p.values[rows]
            confidence = np.where(pattern[None, :], probs, 1.0 - probs)
            norm = confidence * (1.0 - c_eff)[None, :]
            lik = np.empty((len(rows), m))
            for j in range(m):
                lik[:, j] = np.prod(np.where(flips[j], 1.0 - norm, norm), axis=1)
            if cfg.strategy is Strategy.GREEDY:
                chosen = np.argmax(lik, axis=1)
            else:
                totals = lik.sum(axis=1)
                u = datapoint_uniforms(cfg.seed, rows)
                dead = totals <= 0.0
                fallbacks = int(dead.sum())
                safe_totals = np.where(dead, 1.0, totals)
                cum = np.cumsum(lik, axis=1) / safe_totals[:, None]
                chosen = np.minimum((cum < u[:, None]).sum(axis=1), m - 1)
                if fallbacks:
                    chosen[dead] = np.minimum(
                        (u[dead] * m).astype(np.intp), m - 1
                    )
        revised[rows] = assignments[rows[0]][None, :] ^ flips[chosen]
        hist: dict[int, int] = {}
        for card, n in zip(*np.unique(out.cardinalities[chosen], return_counts=True)):
            hist[int(card)] = int(n)
        return 0, len(rows), 0, fallbacks, hist

    group_ids = range(len(patterns))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(process_group, group_ids))
    else:
        results = [process_group(gi) for gi in group_ids]

    for n_cons, n_rev, n_bound, n_fall, hist in results:
        counts["consistent"] += n_cons
        counts["revised"] += n_rev
        counts["bound_exceeded"] += n_bound
        counts["fallbacks"] += n_fall
        for card, n in hist.items():
            histogram[card] = histogram.get(card, 0) + n

    leaf_ids = np.array(h.leaf_ids)
    leaf_bits = revised[:, leaf_ids]
    n_true = leaf_bits.sum(axis=1)
    labels = np.where(
        n_true == 1, leaf_ids[np.argmax(leaf_bits, axis=1)], IGNORE_LABEL
    ).astype(np.int32)
    labels[bound_rows] = IGNORE_LABEL

    stats = RevisionStats(
        num_rows=p.num_datapoints,
        consistent=counts["consistent"],
        revised=counts["revised"],
        bound_exceeded=counts["bound_exceeded"],
        ignored=int((labels == IGNORE_LABEL).sum()),
        uniform_fallbacks=counts["fallbacks"],
        diagnosis_cardinality_histogram=histogram,
        conflict_degrees=[float(v) for v in profile.c],
    )
    return RevisionResult(revised, labels, stats, profile)


def confidence_threshold_baseline(p_leaves: np.ndarray, tau: float) -> np.ndarray:
    """Classic pseudo-label filter: argmax when confident enough, else -1.

    Rows must live on the probability simplex (sum to 1 within 1e-6).
    Returned ids are column indices into the leaf probability matrix.
    """
    p = np.asarray(p_leaves, dtype=np.float64)
    if p.ndim != 2:
        raise ValidationError("leaf probabilities must be a 2-D matrix")
    if not 0.0 < tau <= 1.0:
        raise ValidationError("tau must lie in (0, 1]")
    if (p < 0.0).any() or (p > 1.0).any():
        raise ValidationError("leaf probabilities must lie in [0, 1]")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValidationError(
            f"row {bad} sums to {sums[bad]:.8f}; rows must sum to 1 within 1e-6"
        )
    best = p.max(axis=1)
    labels = p.argmax(axis=1).astype(np.int32)
    labels[best < tau] = IGNORE_LABEL
    return labels
