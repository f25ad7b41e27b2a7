"""In-process batch-revision binding for host training pipelines.

A session wraps one parsed hierarchy plus a revision configuration and
caches the compiled rules, so per-batch calls pay no setup cost. Batches
cross the boundary as contiguous float32 arrays of shape (N, num_concepts);
the only copy made is the engine's single validation/ingestion pass that
widens the buffer to float64. Results are identical to the command-line
``revise`` on the same bytes.

Sessions are immutable after creation and safe for concurrent ``revise``
calls; determinism comes from the engine's per-datapoint random streams.
"""

from __future__ import annotations

import threading

import numpy as np

from logicdiag import __version__ as _engine_version
from logicdiag.diagnosis import Strategy
from logicdiag.errors import ValidationError
from logicdiag.fuzzy import ConflictGrouping, FuzzyConfig, ProbBatch
from logicdiag.hierarchy import parse_hierarchy
from logicdiag.pipeline import RevisionConfig, revise_batch
from logicdiag.rules import compile_rules

__version__ = _engine_version

_CONFIG_KEYS = {
    "binarize_threshold", "strategy", "q", "conflict_grouping",
    "max_cardinality", "seed", "tau", "threads",
}


class BoundSession:
    """Reusable handle over one hierarchy and one revision configuration."""

    def __init__(self, hierarchy, rules, config: RevisionConfig, threads: int):
        self._hierarchy = hierarchy
        self._rules = rules
        self._config = config
        self._threads = threads
        self._closed = False
        self._lock = threading.Lock()

    @property
    def num_concepts(self) -> int:
        return len(self._hierarchy)

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def __enter__(self) -> "BoundSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def revise(self, probs: np.ndarray):
        return revise(self, probs)


def create_session(hierarchy_text: str, config_map: dict | None = None) -> BoundSession:
    """Parse a hierarchy, compile its rules, and fix a revision config.

    ``config_map`` accepts: binarize_threshold, strategy, q,
    conflict_grouping, max_cardinality, seed, tau, threads. Validation
    failures raise the engine's exceptions with their original messages.
    """
    config_map = dict(config_map or {})
    unknown = set(config_map) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    hierarchy = parse_hierarchy(hierarchy_text)
    rules = compile_rules(hierarchy)
    threads = int(config_map.pop("threads", 1))
    kwargs = {}
    if "strategy" in config_map:
        kwargs["strategy"] = Strategy(config_map.pop("strategy"))
    fuzzy_kwargs = {}
    if "q" in config_map:
        fuzzy_kwargs["q"] = config_map.pop("q")
    if "conflict_grouping" in config_map:
        fuzzy_kwargs["conflict_grouping"] = ConflictGrouping(
            config_map.pop("conflict_grouping")
        )
    if fuzzy_kwargs:
        kwargs["fuzzy"] = FuzzyConfig(**fuzzy_kwargs)
    kwargs.update(config_map)  # threshold/bound/seed/tau pass straight through
    config = RevisionConfig(**kwargs)
    return BoundSession(hierarchy, rules, config, threads)


def _zeroed_stats(session: BoundSession) -> dict:
    return {
        "num_rows": 0,
        "consistent": 0,
        "revised": 0,
        "bound_exceeded": 0,
        "ignored": 0,
        "uniform_fallbacks": 0,
        "diagnosis_cardinality_histogram": {},
        "conflict_degrees": [0.0] * session.num_concepts,
        "strategy": session._config.strategy.value,
        "seed": session._config.seed,
    }


def revise(session: BoundSession, probs: np.ndarray):
    """Repair one batch; returns (int32 labels of length N, stats dict).

    The buffer must be 2-D, C-contiguous float32 with one column per
    concept; labels are leaf concept ids with -1 for ignored rows.
    """
    if session.closed:
        raise ValidationError("session is closed")
    if not isinstance(probs, np.ndarray):
        raise ValidationError("probs must be a numpy array")
    if probs.dtype != np.float32:
        raise ValidationError(f"probs must be float32, got {probs.dtype}")
    if probs.ndim != 2:
        raise ValidationError(f"probs must be 2-D, got {probs.ndim}-D")
    if not probs.flags.c_contiguous:
        raise ValidationError("probs must be C-contiguous (row-major)")
    if probs.shape[1] != session.num_concepts:
        raise ValidationError(
            f"batch width {probs.shape[1]} does not match hierarchy size "
            f"{session.num_concepts}"
        )
    if probs.shape[0] == 0:
        return np.empty(0, dtype=np.int32), _zeroed_stats(session)

    batch = ProbBatch.from_array(probs)  # the single ingestion copy
    result = revise_batch(
        batch, session._hierarchy, session._config,
        rules=session._rules, threads=session._threads,
    )
    stats = result.stats.to_dict()
    stats["strategy"] = session._config.strategy.value
    stats["seed"] = session._config.seed
    return result.leaf_labels, stats
