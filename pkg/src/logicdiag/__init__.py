"""Diagnosis engine for logically inconsistent hierarchical pseudo labels."""

from .diagnosis import (
    Diagnosis,
    Strategy,
    brute_force_diagnoses,
    datapoint_uniforms,
    enumerate_minimal_diagnoses,
    resolve,
    select_diagnosis,
)
from .errors import (
    BadMagicError,
    ContractViolation,
    DiagnosisBoundExceeded,
    DimensionError,
    HierarchyFormatError,
    LogicDiagError,
    TensorFormatError,
    TruncatedPayloadError,
    ValidationError,
)
from .fuzzy import (
    ConflictGrouping,
    ConflictProfile,
    FuzzyConfig,
    ProbBatch,
    conflict_profile,
    diagnosis_likelihood,
    exists_q,
    f_neg,
    forall_q,
    normality,
    t_conorm,
    t_norm,
    truth_composition,
    truth_decomposition,
    truth_exclusion,
)
from .hierarchy import (
    ConceptNode,
    LabelHierarchy,
    parse_hierarchy,
    serialize_hierarchy,
)
from .pipeline import (
    IGNORE_LABEL,
    RevisionConfig,
    RevisionResult,
    RevisionStats,
    confidence_threshold_baseline,
    revise_batch,
)
from .rules import (
    GroundRule,
    GroundRuleSet,
    RuleKind,
    assignment_from_names,
    compile_rules,
    eval_rule,
    is_consistent,
    violated_rules,
)
from .tensorio import read_array, read_tensor, write_array, write_labels, write_stats

__version__ = "0.1.0"
