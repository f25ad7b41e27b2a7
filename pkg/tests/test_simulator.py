import numpy as np
import pytest

import logicdiag as ld
from logicdiag.diagnosis import Strategy
from logicdiag.simulator import (
    SimConfig,
    SynthDataset,
    ToyModel,
    TrainBatch,
    TrainingDiverged,
    build_hierarchy,
    evaluate,
    gen_synthetic,
    leaf_name,
    loss_and_grad,
    losses,
    official_grouping,
    shuffled_grouping,
    train,
    training_hierarchy,
)

SMALL = dict(
    num_points=2000, eval_points=400, iterations=12, warmup_iterations=4,
    batch_size=64,
)


def test_default_dataset_shape_and_coverage():
    cfg = SimConfig()
    ds = gen_synthetic(cfg, 0)
    assert ds.features.shape == (20000, 8)
    assert int(ds.labeled_mask.sum()) == 200
    counts = np.bincount(ds.leaf_labels[ds.labeled_mask], minlength=6)
    assert (counts >= 1).all()
    assert ds.hierarchy.num_leaves == 6
    assert ds.hierarchy.num_levels == 3


def test_dataset_deterministic_given_seed():
    cfg = SimConfig()
    a = gen_synthetic(cfg, 3)
    b = gen_synthetic(cfg, 3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labeled_mask, b.labeled_mask)
    c = gen_synthetic(cfg, 4)
    assert not np.array_equal(a.features, c.features)
    assert a.features.shape == c.features.shape


def test_fully_labeled_degenerate_case():
    cfg = SimConfig(labeled_fraction=1.0, **SMALL)
    ds = gen_synthetic(cfg, 0)
    assert ds.labeled_mask.all()
    report = train(cfg)
    assert len(report.loss_total) == cfg.iterations


def test_infeasible_labeled_fraction_rejected():
    with pytest.raises(ld.ValidationError, match="fewer than"):
        gen_synthetic(SimConfig(labeled_fraction=0.0002), 0)


def test_feature_dim_must_fit_subspaces():
    with pytest.raises(ld.ValidationError, match="feature_dim"):
        gen_synthetic(SimConfig(feature_dim=4), 0)


def test_config_validation():
    with pytest.raises(ld.ValidationError):
        SimConfig(num_superclasses=1)
    with pytest.raises(ld.ValidationError):
        SimConfig(weak_noise=0.5, strong_noise=0.5)
    with pytest.raises(ld.ValidationError):
        SimConfig(lambda_=-1.0)
    with pytest.raises(ld.ValidationError):
        SimConfig(hierarchy_source="other")


def test_shuffled_grouping_differs_but_keeps_shape():
    cfg = SimConfig()
    rng = np.random.default_rng(0)
    official = official_grouping(cfg)
    for _ in range(10):
        groups = shuffled_grouping(cfg, rng)
        assert sorted(len(g) for g in groups) == sorted(len(g) for g in official)
        assert sorted(c for g in groups for c in g) == list(range(6))
        assert {frozenset(g) for g in groups} != {frozenset(g) for g in official}


def test_training_hierarchy_sources():
    cfg = SimConfig()
    h_off = training_hierarchy(cfg)
    assert h_off == gen_synthetic(cfg, cfg.seed).hierarchy
    h_rand = training_hierarchy(SimConfig(hierarchy_source="random"))
    assert len(h_rand) == len(h_off)
    assert h_rand != h_off


def _tiny_batch(h, rng, crisp=False):
    n = len(h)
    leaf_ids = np.array(h.leaf_ids)
    bl, bu = 5, 4
    xl = rng.normal(size=(bl, 3))
    xu = rng.normal(size=(bu, 3))
    paths = np.zeros((bl, n))
    for i in range(bl):
        leaf = leaf_ids[rng.integers(len(leaf_ids))]
        paths[i, list(h.leaf_path(int(leaf)))] = 1.0
    targets = np.zeros((bu, n))
    for i in range(bu):
        leaf = leaf_ids[rng.integers(len(leaf_ids))]
        targets[i, list(h.leaf_path(int(leaf)))] = 1.0
    mask = rng.random(bu) < 0.8
    return TrainBatch(xl, paths, xu, targets, mask, leaf_ids)


def test_lambda_zero_total_equals_supervised():
    h = build_hierarchy(2, 2, [[0, 1], [2, 3]])
    rng = np.random.default_rng(0)
    batch = _tiny_batch(h, rng)
    model = ToyModel(rng.normal(size=(4, len(h))))
    cfg = SimConfig(lambda_=0.0)
    vals = losses(model, batch, cfg)
    assert vals.total == vals.supervised


def test_perfect_crisp_predictions_give_zero_supervised_loss():
    h = build_hierarchy(2, 2, [[0, 1], [2, 3]])
    leaf_ids = np.array(h.leaf_ids)
    # one labeled point per leaf; weights chosen to give +/-40 logits
    xl = np.eye(4)
    paths = np.zeros((4, len(h)))
    for i, leaf in enumerate(leaf_ids):
        paths[i, list(h.leaf_path(int(leaf)))] = 1.0
    W = np.zeros((5, len(h)))
    for i in range(4):
        W[i] = np.where(paths[i] > 0, 80.0, -80.0)
    W[4] = np.where(paths.max(axis=0) > 0, -40.0, -40.0) * 0  # zero bias
    model = ToyModel(W)
    batch = TrainBatch(
        xl, paths, np.zeros((1, 4)), np.zeros((1, len(h))),
        np.zeros(1, dtype=bool), leaf_ids,
    )
    vals = losses(model, batch, SimConfig())
    assert vals.supervised < 1e-6
    assert vals.unsupervised == 0.0


@pytest.mark.parametrize("hierarchical", [True, False])
def test_analytic_gradient_matches_finite_differences(hierarchical):
    h = build_hierarchy(2, 2, [[0, 1], [2, 3]])
    rng = np.random.default_rng(42)
    rel_errors = []
    for _ in range(6):
        batch = _tiny_batch(h, rng)
        model = ToyModel(0.5 * rng.normal(size=(4, len(h))))
        cfg = SimConfig(lambda_=float(rng.uniform(0, 5)),
                        hierarchical_head=hierarchical)
        _, grad = loss_and_grad(model, batch, cfg)
        num = np.zeros_like(grad)
        eps = 1e-6
        for i in range(grad.shape[0]):
            for j in range(grad.shape[1]):
                wp = model.weights.copy(); wp[i, j] += eps
                wm = model.weights.copy(); wm[i, j] -= eps
                lp = losses(ToyModel(wp), batch, cfg).total
                lm = losses(ToyModel(wm), batch, cfg).total
                num[i, j] = (lp - lm) / (2 * eps)
        denom = max(np.linalg.norm(num), np.linalg.norm(grad), 1e-12)
        rel_errors.append(np.linalg.norm(num - grad) / denom)
    assert max(rel_errors) < 1e-5


def test_all_ignored_unlabeled_batch_gives_zero_unsup_loss():
    h = build_hierarchy(2, 2, [[0, 1], [2, 3]])
    rng = np.random.default_rng(1)
    batch = _tiny_batch(h, rng)
    batch.unlabeled_mask[:] = False
    model = ToyModel(rng.normal(size=(4, len(h))))
    vals = losses(model, batch, SimConfig())
    assert vals.unsupervised == 0.0


def test_zero_iterations_report_contains_initial_metrics_only():
    cfg = SimConfig(iterations=0, warmup_iterations=0, num_points=2000,
                    eval_points=300)
    report = train(cfg)
    assert report.loss_total == []
    assert report.initial_metrics == report.final_metrics
    assert "pseudo_precision_post" in report.revision_quality


def test_train_is_bit_deterministic():
    cfg = SimConfig(**SMALL)
    a = train(cfg).to_json()
    b = train(cfg).to_json()
    assert a == b


def test_lambda_zero_matches_supervised_only_trajectory():
    a = train(SimConfig(lambda_=0.0, **SMALL))
    b = train(SimConfig(lambda_=0.0, diagnosis=False, **SMALL))
    assert a.loss_supervised == b.loss_supervised
    assert a.final_metrics["miou_per_level"] == b.final_metrics["miou_per_level"]


def test_divergence_aborts_with_diagnostics():
    cfg = SimConfig(learning_rate=float("inf"), warmup_iterations=0, **{
        k: v for k, v in SMALL.items() if k != "warmup_iterations"
    })
    with pytest.raises(TrainingDiverged, match="iteration"):
        train(cfg)


def test_flat_head_and_random_hierarchy_smoke():
    report = train(SimConfig(hierarchical_head=False, diagnosis=False, **SMALL))
    assert len(report.loss_total) == 12
    report = train(SimConfig(hierarchy_source="random", **SMALL))
    assert len(report.loss_total) == 12


def _manual_dataset():
    cfg = SimConfig(feature_dim=6, num_points=600, eval_points=600,
                    labeled_fraction=0.05)
    h = build_hierarchy(2, 3, official_grouping(cfg))
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(6), 100)
    features = 5.0 * np.eye(6)[labels]
    mask = np.zeros(600, dtype=bool)
    mask[::20] = True
    return cfg, SynthDataset(
        features=features, leaf_labels=labels, labeled_mask=mask,
        eval_features=features.copy(), eval_leaf_labels=labels.copy(),
        hierarchy=h, cluster_means=5.0 * np.eye(6), feature_noise=0.0, seed=0,
    )


def test_perfect_predictor_scores_100_at_every_level():
    cfg, ds = _manual_dataset()
    h = ds.hierarchy
    W = np.zeros((7, len(h)))
    for c in range(6):
        col = h.id_of(leaf_name(c))
        W[c, col] = 4.0
        W[6, col] = -10.0
    model = ToyModel(W)
    metrics = evaluate(model, ds, cfg)
    assert all(
        v == pytest.approx(100.0) for v in metrics["miou_per_level"].values()
    )
    assert all(
        v == pytest.approx(100.0) for v in metrics["per_leaf_iou"].values()
    )


def test_constant_predictor_iou():
    cfg, ds = _manual_dataset()
    h = ds.hierarchy
    W = np.zeros((7, len(h)))
    W[6, h.id_of(leaf_name(0))] = 5.0  # bias: always predict leaf0
    metrics = evaluate(ToyModel(W), ds, cfg)
    assert metrics["per_leaf_iou"][leaf_name(0)] == pytest.approx(100.0 / 6.0)
    for c in range(1, 6):
        assert metrics["per_leaf_iou"][leaf_name(c)] == 0.0


def test_level_projection_never_decreases_accuracy():
    rng = np.random.default_rng(9)
    for _ in range(50):
        C = int(rng.integers(4, 10))
        conf = rng.integers(0, 30, size=(C, C))
        groups = rng.integers(0, 3, size=C)
        total = conf.sum()
        if total == 0:
            continue
        acc1 = np.trace(conf) / total
        acc2 = sum(
            conf[i, j] for i in range(C) for j in range(C)
            if groups[i] == groups[j]
        ) / total
        assert acc2 >= acc1 - 1e-12


def test_evaluate_reports_revision_quality_fields():
    cfg = SimConfig(**SMALL)
    ds = gen_synthetic(cfg, 0)
    model = ToyModel.zeros(cfg.feature_dim, len(ds.hierarchy))
    metrics = evaluate(model, ds, cfg)
    for key in ("pseudo_precision_pre", "pseudo_precision_post",
                "pseudo_recall_pre", "pseudo_recall_post"):
        assert 0.0 <= metrics[key] <= 1.0
