"""Desk-scale semi-supervised training loop over synthetic hierarchical data.

A tiny bias-augmented linear model with one sigmoid output per concept is
trained with hand-written gradients and plain SGD. Each iteration builds
pseudo labels from weakly perturbed unlabeled points, optionally repairs
them through the diagnosis pipeline, and applies a consistency loss on
strongly perturbed views; labeled points contribute a supervised loss and
the two terms combine as ``L = L_sup + lambda * L_unsup``.

The synthetic task places one Gaussian cluster per leaf class, with leaf
clusters of the same superclass sharing a well-separated group center, so
group membership is easier to predict than the exact leaf. That is the
structure the repair step can exploit; training against a shuffled
hierarchy removes it and serves as the mismatch control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .diagnosis import Strategy
from .errors import LogicDiagError, ValidationError
from .fuzzy import FuzzyConfig, ProbBatch
from .hierarchy import LabelHierarchy, parse_hierarchy
from .pipeline import IGNORE_LABEL, RevisionConfig, confidence_threshold_baseline, revise_batch
from .rules import GroundRuleSet, compile_rules


class TrainingDiverged(LogicDiagError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class SimConfig:
    # synthetic task
    num_superclasses: int = 2
    leaves_per_superclass: int = 3
    feature_dim: int = 8
    num_points: int = 20000
    labeled_fraction: float = 0.01
    eval_points: int = 4000
    superclass_spread: float = 2.5
    leaf_spread: float = 3.5
    feature_noise: float = 1.0
    # training loop
    lambda_: float = 5.0
    tau: float = 0.95
    q: int = 5
    strategy: Strategy = Strategy.SAMPLING
    hierarchical_head: bool = True
    diagnosis: bool = True
    fuzzy_likelihood: bool = True
    weak_noise: float = 0.1
    strong_noise: float = 0.5
    learning_rate: float = 3.0
    iterations: int = 350
    warmup_iterations: int = 200  # supervised-only burn-in before L_unsup
    batch_size: int = 256
    seed: int = 0
    hierarchy_source: str = "official"

    def __post_init__(self):
        if self.num_superclasses < 2 or self.leaves_per_superclass < 2:
            raise ValidationError(
                "need at least 2 superclasses and 2 leaves per superclass"
            )
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValidationError("labeled_fraction must lie in (0, 1]")
        if self.strong_noise <= self.weak_noise or self.weak_noise < 0.0:
            raise ValidationError("need strong_noise > weak_noise >= 0")
        if self.lambda_ < 0.0:
            raise ValidationError("lambda must be non-negative")
        if self.hierarchy_source not in ("official", "random"):
            raise ValidationError("hierarchy_source must be 'official' or 'random'")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValidationError("iterations must be >= 0 and batch_size >= 1")

    @property
    def num_leaves(self) -> int:
        return self.num_superclasses * self.leaves_per_superclass

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Strategy) else v
        return out


@dataclass
class SynthDataset:
    features: np.ndarray          # (N, d)
    leaf_labels: np.ndarray       # (N,) canonical leaf indices 0..C-1
    labeled_mask: np.ndarray      # (N,) bool
    eval_features: np.ndarray     # held-out points for metric computation
    eval_leaf_labels: np.ndarray
    hierarchy: LabelHierarchy     # the grouping the generator actually used
    cluster_means: np.ndarray     # (C, d)
    feature_noise: float
    seed: int

    @property
    def num_leaves(self) -> int:
        return self.cluster_means.shape[0]


def leaf_name(c: int) -> str:
    return f"leaf{c}"


def build_hierarchy(
    num_superclasses: int, leaves_per_superclass: int, grouping: list[list[int]]
) -> LabelHierarchy:
    """Hierarchy over canonical leaf names with the given leaf grouping."""
    children = [
        {"name": f"group{g}", "children": [{"name": leaf_name(c)} for c in members]}
        for g, members in enumerate(grouping)
    ]
    return parse_hierarchy(json.dumps({"name": "Root", "children": children}))


def official_grouping(cfg: SimConfig) -> list[list[int]]:
    lps = cfg.leaves_per_superclass
    return [list(range(g * lps, (g + 1) * lps)) for g in range(cfg.num_superclasses)]


def shuffled_grouping(cfg: SimConfig, rng: np.random.Generator) -> list[list[int]]:
    """Leaf grouping with the official shape but permuted membership.

    Re-draws until the partition differs from the official one, so the
    mismatch control is guaranteed to be mismatched.
    """
    official = {frozenset(m) for m in official_grouping(cfg)}
    lps = cfg.leaves_per_superclass
    while True:
        perm = rng.permutation(cfg.num_leaves)
        groups = [sorted(int(c) for c in perm[g * lps:(g + 1) * lps])
                  for g in range(cfg.num_superclasses)]
        if {frozenset(m) for m in groups} != official:
            return groups


def gen_synthetic(cfg: SimConfig, seed: int) -> SynthDataset:
    """Gaussian cluster per leaf; superclass clusters are unions of leaves.

    Group identity and within-group leaf identity occupy orthogonal
    feature subspaces: the group component carries a moderate margin
    while the leaf component is cleanly separated and shared across
    groups. Leaf mistakes therefore tend to land in the wrong group with
    the right within-group shape, which is the error mode hierarchy
    knowledge can repair.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    d, C = cfg.feature_dim, cfg.num_leaves
    G, lps = cfg.num_superclasses, cfg.leaves_per_superclass
    if d < G + lps:
        raise ValidationError(
            f"feature_dim must be at least num_superclasses + "
            f"leaves_per_superclass ({G + lps}), got {d}"
        )
    basis, _ = np.linalg.qr(rng.normal(size=(d, G + lps)))
    group_dirs = basis[:, :G].T * cfg.superclass_spread
    leaf_codes = basis[:, G:].T * cfg.leaf_spread
    means = np.zeros((C, d))
    for g, members in enumerate(official_grouping(cfg)):
        for j, c in enumerate(members):
            means[c] = group_dirs[g] + leaf_codes[j]

    def draw(n):
        labels = rng.integers(C, size=n)
        feats = means[labels] + rng.normal(scale=cfg.feature_noise, size=(n, d))
        return feats, labels

    features, labels = draw(cfg.num_points)
    eval_features, eval_labels = draw(cfg.eval_points)

    n_labeled = int(round(cfg.num_points * cfg.labeled_fraction))
    if n_labeled < C:
        raise ValidationError(
            f"labeled fraction {cfg.labeled_fraction} gives {n_labeled} points, "
            f"fewer than the {C} leaf classes"
        )
    labeled_mask = np.zeros(cfg.num_points, dtype=bool)
    chosen: list[int] = []
    for c in range(C):  # guarantee coverage of every leaf class
        chosen.append(int(rng.choice(np.flatnonzero(labels == c))))
    remaining = np.setdiff1d(np.arange(cfg.num_points), np.array(chosen))
    extra = rng.choice(remaining, size=n_labeled - C, replace=False)
    labeled_mask[np.array(chosen)] = True
    labeled_mask[extra] = True

    hierarchy = build_hierarchy(
        cfg.num_superclasses, cfg.leaves_per_superclass, official_grouping(cfg)
    )
    return SynthDataset(
        features=features,
        leaf_labels=labels,
        labeled_mask=labeled_mask,
        eval_features=eval_features,
        eval_leaf_labels=eval_labels,
        hierarchy=hierarchy,
        cluster_means=means,
        feature_noise=cfg.feature_noise,
        seed=seed,
    )


# -- model --------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


@dataclass
class ToyModel:
    """Bias-augmented linear map with one sigmoid output per concept."""

    weights: np.ndarray  # (d + 1, num_concepts)

    @classmethod
    def zeros(cls, feature_dim: int, num_concepts: int) -> "ToyModel":
        return cls(np.zeros((feature_dim + 1, num_concepts)))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _augment(x) @ self.weights

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(x))


@dataclass
class TrainBatch:
    labeled_features: np.ndarray     # weak view
    labeled_paths: np.ndarray        # (B_l, num_concepts) multi-hot targets
    unlabeled_features: np.ndarray   # strong view
    unlabeled_targets: np.ndarray    # (B_u, num_concepts) multi-hot targets
    unlabeled_mask: np.ndarray       # rows that carry a usable pseudo label
    leaf_ids: np.ndarray             # concept ids of the leaf columns


@dataclass
class LossValues:
    supervised: float
    unsupervised: float
    total: float


def _bce_terms(logits, targets):
    return np.logaddexp(0.0, logits) - targets * logits


def _softmax(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(z):
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def losses(model: ToyModel, batch: TrainBatch, cfg: SimConfig) -> LossValues:
    """Supervised and consistency losses for one batch.

    Hierarchical head: per-concept binary cross entropy averaged over
    datapoints and concepts. Flat head: categorical cross entropy over the
    leaf columns. Ignored pseudo-label rows contribute zero; an
    all-ignored unlabeled batch gives a zero consistency loss.
    """
    values, _ = _losses_impl(model, batch, cfg, want_grad=False)
    return values


def loss_and_grad(model: ToyModel, batch: TrainBatch, cfg: SimConfig):
    return _losses_impl(model, batch, cfg, want_grad=True)


def _losses_impl(model, batch, cfg, want_grad):
    n_concepts = model.weights.shape[1]
    leaf = batch.leaf_ids
    xl = _augment(batch.labeled_features)
    xu = _augment(batch.unlabeled_features)
    zl = xl @ model.weights
    zu = xu @ model.weights
    bl = max(zl.shape[0], 1)
    bu = max(zu.shape[0], 1)
    mask = batch.unlabeled_mask.astype(float)

    if cfg.hierarchical_head:
        l_sup = float(_bce_terms(zl, batch.labeled_paths).sum() / (bl * n_concepts))
        unsup_terms = _bce_terms(zu[:, :], batch.unlabeled_targets) * mask[:, None]
        l_unsup = float(unsup_terms.sum() / (bu * n_concepts))
        if want_grad:
            dzl = (_sigmoid(zl) - batch.labeled_paths) / (bl * n_concepts)
            dzu = (_sigmoid(zu) - batch.unlabeled_targets) * mask[:, None]
            dzu /= bu * n_concepts
    else:
        tl = np.argmax(batch.labeled_paths[:, leaf], axis=1)
        zl_leaf = zl[:, leaf]
        l_sup = float((_logsumexp(zl_leaf) - zl_leaf[np.arange(len(tl)), tl]).sum() / bl)
        zu_leaf = zu[:, leaf]
        tu = np.argmax(batch.unlabeled_targets[:, leaf], axis=1)
        ce_u = (_logsumexp(zu_leaf) - zu_leaf[np.arange(len(tu)), tu]) * mask
        l_unsup = float(ce_u.sum() / bu)
        if want_grad:
            sl = _softmax(zl_leaf)
            sl[np.arange(len(tl)), tl] -= 1.0
            dzl = np.zeros_like(zl)
            dzl[:, leaf] = sl / bl
            su = _softmax(zu_leaf)
            su[np.arange(len(tu)), tu] -= 1.0
            dzu = np.zeros_like(zu)
            dzu[:, leaf] = su * mask[:, None] / bu

    total = l_sup + cfg.lambda_ * l_unsup
    values = LossValues(l_sup, l_unsup, total)
    if not want_grad:
        return values, None
    grad = xl.T @ dzl + cfg.lambda_ * (xu.T @ dzu)
    return values, grad


# -- pseudo-label construction --------------------------------------------------

def _path_targets(h: LabelHierarchy, leaf_concepts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(leaf_concepts), len(h)))
    for i, leaf in enumerate(leaf_concepts):
        if leaf >= 0:
            out[i, list(h.leaf_path(int(leaf)))] = 1.0
    return out


def _threshold_pseudo_labels(logits: np.ndarray, leaf_ids: np.ndarray, tau: float):
    """Confidence-filtered leaf pseudo labels from a softmax over leaf logits."""
    simplex = _softmax(logits[:, leaf_ids])
    cols = confidence_threshold_baseline(simplex, tau)
    labels = np.where(cols >= 0, leaf_ids[np.clip(cols, 0, None)], IGNORE_LABEL)
    return labels.astype(np.int64)


def _revision_pseudo_labels(
    probs: np.ndarray,
    h: LabelHierarchy,
    rules: GroundRuleSet,
    cfg: SimConfig,
    seed: int,
):
    strategy = cfg.strategy if cfg.fuzzy_likelihood else Strategy.UNIFORM
    rev_cfg = RevisionConfig(
        strategy=strategy, fuzzy=FuzzyConfig(q=cfg.q), seed=seed, tau=cfg.tau
    )
    res = revise_batch(ProbBatch.from_array(probs), h, rev_cfg, rules=rules)
    return res


# -- training -------------------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    hierarchy_text: str
    loss_supervised: list[float]
    loss_unsupervised: list[float]
    loss_total: list[float]
    initial_metrics: dict
    final_metrics: dict
    # pseudo-label quality snapshot taken where pseudo-labeling starts
    revision_quality: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "hierarchy": self.hierarchy_text,
            "loss_supervised": self.loss_supervised,
            "loss_unsupervised": self.loss_unsupervised,
            "loss_total": self.loss_total,
            "initial_metrics": self.initial_metrics,
            "final_metrics": self.final_metrics,
            "revision_quality": self.revision_quality,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def training_hierarchy(cfg: SimConfig) -> LabelHierarchy:
    if cfg.hierarchy_source == "official":
        grouping = official_grouping(cfg)
    else:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5AFE)))
        grouping = shuffled_grouping(cfg, rng)
    return build_hierarchy(cfg.num_superclasses, cfg.leaves_per_superclass, grouping)


def train(cfg: SimConfig) -> TrainReport:
    """Run the full loop and report losses plus start/end metrics."""
    dataset = gen_synthetic(cfg, cfg.seed)
    h = training_hierarchy(cfg)
    rules = compile_rules(h)
    leaf_ids = np.array(h.leaf_ids)
    # canonical leaf index -> concept id in the training hierarchy
    leaf_concept = np.array([h.id_of(leaf_name(c)) for c in range(cfg.num_leaves)])

    model = ToyModel.zeros(cfg.feature_dim, len(h))
    labeled_idx = np.flatnonzero(dataset.labeled_mask)
    unlabeled_idx = np.flatnonzero(~dataset.labeled_mask)
    if unlabeled_idx.size == 0:
        unlabeled_idx = labeled_idx  # fully supervised degenerate case

    initial_metrics = evaluate(model, dataset, cfg, train_hierarchy=h)
    sup_hist: list[float] = []
    unsup_hist: list[float] = []
    total_hist: list[float] = []
    revision_quality: dict = {}

    root_seq = np.random.SeedSequence(cfg.seed)
    iter_seeds = root_seq.spawn(max(cfg.iterations, 1))

    def snapshot_revision_quality(at_iteration: int) -> dict:
        m = evaluate(model, dataset, cfg, train_hierarchy=h)
        keys = (
            "pseudo_precision_pre", "pseudo_precision_post",
            "pseudo_recall_pre", "pseudo_recall_post",
            "pseudo_coverage_post", "pseudo_leaf_accuracy_post",
        )
        out = {k: m[k] for k in keys if k in m}
        out["measured_at_iteration"] = at_iteration
        return out

    for it in range(cfg.iterations):
        if not np.isfinite(model.weights).all():
            raise TrainingDiverged(f"non-finite weights entering iteration {it}")
        if it == cfg.warmup_iterations:
            revision_quality = snapshot_revision_quality(it)
        rng = np.random.default_rng(iter_seeds[it])
        li = rng.choice(labeled_idx, size=min(cfg.batch_size, labeled_idx.size), replace=True)
        ui = rng.choice(unlabeled_idx, size=cfg.batch_size, replace=True)
        # fixed draw order keeps lambda=0 runs identical across ablations
        ci = np.concatenate([li, ui])  # consistency term spans both pools
        weak_l = dataset.features[li] + cfg.weak_noise * rng.normal(size=(li.size, cfg.feature_dim))
        weak_c = dataset.features[ci] + cfg.weak_noise * rng.normal(size=(ci.size, cfg.feature_dim))
        strong_c = dataset.features[ci] + cfg.strong_noise * rng.normal(size=(ci.size, cfg.feature_dim))

        labeled_paths = _path_targets(h, leaf_concept[dataset.leaf_labels[li]])

        if it < cfg.warmup_iterations:
            targets = np.zeros((ci.size, len(h)))
            mask = np.zeros(ci.size, dtype=bool)
        elif cfg.diagnosis:
            probs = model.predict_proba(weak_c)
            res = _revision_pseudo_labels(probs, h, rules, cfg, seed=cfg.seed + it)
            targets = res.revised_assignments.astype(float)
            mask = res.leaf_labels != IGNORE_LABEL
        else:
            pseudo = _threshold_pseudo_labels(model.logits(weak_c), leaf_ids, cfg.tau)
            targets = _path_targets(h, pseudo)
            mask = pseudo != IGNORE_LABEL

        batch = TrainBatch(
            labeled_features=weak_l,
            labeled_paths=labeled_paths,
            unlabeled_features=strong_c,
            unlabeled_targets=targets,
            unlabeled_mask=mask,
            leaf_ids=leaf_ids,
        )
        values, grad = loss_and_grad(model, batch, cfg)
        if not np.isfinite(values.total) or not np.isfinite(grad).all():
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: "
                f"sup={values.supervised} unsup={values.unsupervised}"
            )
        model.weights -= cfg.learning_rate * grad
        sup_hist.append(values.supervised)
        unsup_hist.append(values.unsupervised)
        total_hist.append(values.total)

    final_metrics = evaluate(model, dataset, cfg, train_hierarchy=h)
    if not revision_quality:  # run ended before pseudo-labeling started
        revision_quality = snapshot_revision_quality(cfg.iterations)
    return TrainReport(
        config=cfg.to_dict(),
        hierarchy_text=json.dumps(json.loads(_hier_json(h)), sort_keys=True),
        loss_supervised=sup_hist,
        loss_unsupervised=unsup_hist,
        loss_total=total_hist,
        initial_metrics=initial_metrics,
        final_metrics=final_metrics,
        revision_quality=revision_quality,
    )


def _hier_json(h: LabelHierarchy) -> str:
    from .hierarchy import serialize_hierarchy

    return serialize_hierarchy(h)


# -- evaluation -------------------------------------------------------------------

def _iou_from_confusion(conf: np.ndarray):
    """Per-class IoU in percent; classes absent from truth and prediction
    are undefined and reported separately."""
    tp = np.diag(conf).astype(float)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    defined = denom > 0
    iou = np.zeros(conf.shape[0])
    iou[defined] = 100.0 * tp[defined] / denom[defined]
    return iou, defined


def _confusion(truth: np.ndarray, pred: np.ndarray, num_classes: int) -> np.ndarray:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    return conf


def evaluate(
    model: ToyModel,
    dataset: SynthDataset,
    cfg: SimConfig | None = None,
    train_hierarchy: LabelHierarchy | None = None,
) -> dict:
    """IoU metrics on held-out data plus pseudo-label quality on train data.

    Leaf predictions come from the argmax over leaf outputs (ancestral
    outputs are ignored at inference). Level-l metrics project both truth
    and prediction onto the generator's hierarchy at that level.
    Pseudo-label precision is measured against ground truth on the
    unlabeled points: "pre" labels are the raw per-row leaf argmax, "post"
    labels are the repaired ones (ignored rows excluded from precision's
    denominator, counted in recall's).
    """
    cfg = cfg or SimConfig()
    h_train = train_hierarchy or dataset.hierarchy
    h_eval = dataset.hierarchy
    C = dataset.num_leaves
    leaf_concept = np.array([h_train.id_of(leaf_name(c)) for c in range(C)])

    probs_eval = model.predict_proba(dataset.eval_features)
    pred = np.argmax(probs_eval[:, leaf_concept], axis=1)
    truth = dataset.eval_leaf_labels

    conf = _confusion(truth, pred, C)
    per_leaf_iou, defined = _iou_from_confusion(conf)
    metrics: dict = {
        "per_leaf_iou": {leaf_name(c): float(per_leaf_iou[c]) for c in range(C)},
        "undefined_leaves": [leaf_name(c) for c in range(C) if not defined[c]],
        "miou_per_level": {},
    }
    for level in range(1, h_eval.num_levels + 1):
        ancestor = {}
        for c in range(C):
            path = h_eval.leaf_path(h_eval.id_of(leaf_name(c)))
            ancestor[c] = [o for o in path if h_eval.level_of(o) == level][0]
        codes = sorted(set(ancestor.values()))
        remap = {o: i for i, o in enumerate(codes)}
        proj = np.array([remap[ancestor[c]] for c in range(C)])
        conf_l = _confusion(proj[truth], proj[pred], len(codes))
        iou_l, defined_l = _iou_from_confusion(conf_l)
        metrics["miou_per_level"][str(level)] = float(iou_l[defined_l].mean())

    # pseudo-label quality before vs after repair, on the unlabeled pool.
    # The pseudo label here is the binary per-concept assignment the loop
    # actually trains on; precision/recall are element-wise over the
    # predicted-true concept bits against the ground-truth path bits.
    unlabeled = ~dataset.labeled_mask
    if unlabeled.any():
        feats = dataset.features[unlabeled]
        truth_u = dataset.leaf_labels[unlabeled]
        probs_u = model.predict_proba(feats)
        res = _revision_pseudo_labels(
            probs_u, h_train, compile_rules(h_train), cfg, seed=cfg.seed
        )
        pre_bits = probs_u >= 0.5
        post_bits = res.revised_assignments
        truth_bits = _path_targets(h_train, leaf_concept[truth_u]).astype(bool)

        def prec_recall(bits):
            tp = float((bits & truth_bits).sum())
            positives = float(bits.sum())
            actual = float(truth_bits.sum())
            return (tp / positives if positives else 0.0,
                    tp / actual if actual else 0.0)

        p_pre, r_pre = prec_recall(pre_bits)
        p_post, r_post = prec_recall(post_bits)
        kept = res.leaf_labels != IGNORE_LABEL
        concept_to_leaf = {int(leaf_concept[c]): c for c in range(C)}
        post_leaf = np.array([
            concept_to_leaf.get(int(label), IGNORE_LABEL) for label in res.leaf_labels
        ])
        metrics["pseudo_precision_pre"] = p_pre
        metrics["pseudo_recall_pre"] = r_pre
        metrics["pseudo_precision_post"] = p_post
        metrics["pseudo_recall_post"] = r_post
        metrics["pseudo_coverage_post"] = float(kept.mean())
        metrics["pseudo_leaf_accuracy_post"] = (
            float((post_leaf[kept] == truth_u[kept]).mean()) if kept.any() else 0.0
        )
    return metrics
