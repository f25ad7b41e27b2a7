"""Acceptance suite: one test per release criterion, at fixed tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line
per criterion (failures surface as ordinary pytest failures).
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats as scipy_stats

import logicdiag as ld
from logicdiag.diagnosis import (
    Diagnosis,
    Strategy,
    brute_force_diagnoses,
    enumerate_minimal_diagnoses,
)
from logicdiag.fuzzy import (
    ConflictGrouping,
    FuzzyConfig,
    ProbBatch,
    conflict_profile,
    diagnosis_likelihood,
    normality,
    truth_composition,
    truth_decomposition,
    truth_exclusion,
)
from logicdiag.pipeline import IGNORE_LABEL, RevisionConfig, revise_batch
from logicdiag.rules import RuleKind, mask_to_assignment
from logicdiag.simulator import SimConfig, ToyModel, build_hierarchy, loss_and_grad, losses, train
from logicdiag.tensorio import read_array, write_array
from test_simulator import _tiny_batch

from conftest import load_fixture, random_assignment, random_tree_text


@contextmanager
def criterion(name):
    try:
        yield
    except Exception:
        print(f"[acceptance] {name}: FAIL")
        raise
    print(f"[acceptance] {name}: PASS")


def test_consistency_characterization(h3, h3_rules):
    with criterion("consistency characterization (2^7 exhaustive)"):
        t0 = time.perf_counter()
        consistent = [
            mask_to_assignment(m, 7)
            for m in range(1 << 7)
            if ld.is_consistent(h3_rules, mask_to_assignment(m, 7))
        ]
        elapsed = time.perf_counter() - t0
        assert len(consistent) == 5
        expected = {(): None}
        paths = {tuple(sorted(h3.leaf_path(leaf))) for leaf in h3.leaf_ids}
        got = {tuple(np.flatnonzero(a).tolist()) for a in consistent}
        assert got == {()} | paths
        assert elapsed < 1.0


def test_diagnosis_oracle_equivalence():
    with criterion("diagnosis oracle equivalence (100 trees x 50 assignments)"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        for _ in range(100):
            h = ld.parse_hierarchy(random_tree_text(rng, max_nodes=12))
            k = ld.compile_rules(h)
            for _ in range(50):
                a = random_assignment(rng, len(h))
                expected = [d.flips for d in brute_force_diagnoses(k, a)]
                got = [d.flips for d in enumerate_minimal_diagnoses(k, a, len(h))]
                assert got == expected
        assert time.perf_counter() - t0 < 60.0


def test_resolution_soundness_and_idempotence(h3):
    with criterion("resolution soundness + idempotence (10^4 runs)"):
        rng = np.random.default_rng(7)
        pool = [(h3, ld.compile_rules(h3))]
        for _ in range(3):
            h = ld.parse_hierarchy(random_tree_text(rng))
            pool.append((h, ld.compile_rules(h)))
        strategies = list(Strategy)
        for i in range(10_000):
            h, rules = pool[i % len(pool)]
            probs = ProbBatch.from_array(rng.random((3, len(h))))
            cfg = RevisionConfig(seed=i, strategy=strategies[i % 4])
            res = revise_batch(probs, h, cfg, rules=rules)
            kept = res.leaf_labels != IGNORE_LABEL
            for row in res.revised_assignments[kept]:
                assert ld.is_consistent(rules, row)
            again = revise_batch(
                ProbBatch.from_array(res.revised_assignments.astype(float)),
                h, cfg, rules=rules,
            )
            assert np.array_equal(again.revised_assignments, res.revised_assignments)
            assert again.stats.revised == 0


def test_fuzzy_numeric_fixtures(h3, h3_rules):
    with criterion("fuzzy numeric fixtures (1e-9) + identities"):
        def batch(**by_name):
            row = np.full(7, 0.5)
            for name, v in by_name.items():
                row[h3.id_of(name)] = v
            return ProbBatch.from_array(row[None, :])

        assert truth_composition(
            batch(Cat=0.8, Animal=0.5), h3.id_of("Cat"), h3, 1
        ) == pytest.approx(0.6, abs=1e-9)
        assert truth_decomposition(
            batch(Animal=0.8, Cat=0.3, Bird=0.7), h3.id_of("Animal"), h3, 1
        ) == pytest.approx(0.76, abs=1e-9)
        assert truth_exclusion(
            batch(Animal=0.8, Vehicle=0.6), h3.id_of("Animal"), h3, 1
        ) == pytest.approx(0.52, abs=1e-9)

        profile = conflict_profile(
            batch(Cat=0.8, Animal=0.5, Bird=0.125), h3, h3_rules,
            FuzzyConfig(q=1, conflict_grouping=ConflictGrouping.PER_FAMILY),
        )
        assert profile.c[h3.id_of("Cat")] == pytest.approx(
            1.0 - (0.6 + 1.0 + 0.9) / 3.0, abs=1e-9
        )

        assert normality(0.9, 0.2, True) == pytest.approx(0.72, abs=1e-9)
        assert normality(0.9, 0.2, False) == pytest.approx(0.08, abs=1e-9)
        assert diagnosis_likelihood(
            Diagnosis((1,)), np.array([0.9, 0.2, 0.8])
        ) == pytest.approx(0.576, abs=1e-9)

        # q=1 reduction to arithmetic means of implication truths
        rng = np.random.default_rng(0)
        for _ in range(25):
            P = rng.random((rng.integers(1, 30), 7))
            p = ProbBatch.from_array(P)
            V = p.values
            cat, animal, vehicle = (h3.id_of(n) for n in ("Cat", "Animal", "Vehicle"))
            assert truth_composition(p, cat, h3, 1) == pytest.approx(
                np.mean(1 - V[:, cat] * (1 - V[:, animal])), abs=1e-12
            )
            kid_max = V[:, [h3.id_of("Cat"), h3.id_of("Bird")]].max(axis=1)
            assert truth_decomposition(p, animal, h3, 1) == pytest.approx(
                np.mean(1 - V[:, animal] * (1 - kid_max)), abs=1e-12
            )
            assert truth_exclusion(p, animal, h3, 1) == pytest.approx(
                np.mean(1 - V[:, animal] * V[:, vehicle]), abs=1e-12
            )

        # likelihood partition over every flip set sums to one
        rng = np.random.default_rng(5)
        for n_concepts in range(1, 11):
            n = rng.random(n_concepts)
            total = sum(
                diagnosis_likelihood(
                    Diagnosis(tuple(i for i in range(n_concepts) if m >> i & 1)), n
                )
                for m in range(1 << n_concepts)
            )
            assert total == pytest.approx(1.0, abs=1e-9)


def test_sampling_strategy_distribution(h3):
    with criterion("sampling distribution (chi-square p > 0.01, 10^5 draws)"):
        # the worked single-row case has exactly three minimal diagnoses;
        # replicate it 10^5 times so each row draws from its own stream
        row = np.zeros(7)
        for name, v in [("Root", .9), ("Animal", .8), ("Cat", .9), ("Bird", .1),
                        ("Vehicle", .7), ("Car", .1), ("Boat", .1)]:
            row[h3.id_of(name)] = v
        n_rows = 100_000
        probs = ProbBatch.from_array(np.tile(row, (n_rows, 1)))
        cfg = RevisionConfig(strategy=Strategy.SAMPLING, seed=123)
        res = revise_batch(probs, h3, cfg)

        rules = ld.compile_rules(h3)
        base = probs.values[0] >= 0.5
        diagnoses = enumerate_minimal_diagnoses(rules, base, 5)
        assert len(diagnoses) == 3
        profile = conflict_profile(probs, h3, rules, cfg.fuzzy)
        conf = np.where(base, probs.values[0], 1 - probs.values[0])
        norm = conf * (1 - profile.c)
        weights = np.array([diagnosis_likelihood(d, norm) for d in diagnoses])
        weights /= weights.sum()

        outcomes = []
        for d in diagnoses:
            revised = base.copy()
            revised[list(d.flips)] ^= True
            outcomes.append(revised)
        counts = np.array([
            (res.revised_assignments == out[None, :]).all(axis=1).sum()
            for out in outcomes
        ])
        assert counts.sum() == n_rows
        result = scipy_stats.chisquare(counts, f_exp=weights * n_rows)
        assert result.pvalue > 0.01


def test_gradient_check():
    with criterion("gradient check (20 instances, rel < 1e-5)"):
        h = build_hierarchy(2, 2, [[0, 1], [2, 3]])
        rng = np.random.default_rng(99)
        for case in range(20):
            batch = _tiny_batch(h, rng)
            model = ToyModel(0.5 * rng.normal(size=(4, len(h))))
            cfg = SimConfig(
                lambda_=float(rng.uniform(0, 5)),
                hierarchical_head=bool(case % 2),
            )
            _, grad = loss_and_grad(model, batch, cfg)
            num = np.zeros_like(grad)
            eps = 1e-6
            for i in range(grad.shape[0]):
                for j in range(grad.shape[1]):
                    wp = model.weights.copy(); wp[i, j] += eps
                    wm = model.weights.copy(); wm[i, j] -= eps
                    num[i, j] = (
                        losses(ToyModel(wp), batch, cfg).total
                        - losses(ToyModel(wm), batch, cfg).total
                    ) / (2 * eps)
            denom = max(np.linalg.norm(num), np.linalg.norm(grad), 1e-12)
            assert np.linalg.norm(num - grad) / denom < 1e-5


def test_ablation_structure_reproduction():
    with criterion("ablation structure (5-seed means + revision precision)"):
        t0 = time.perf_counter()
        batteries = {
            "full": {},
            "no_diagnosis": {"diagnosis": False},
            "uniform": {"fuzzy_likelihood": False},
            "random_hierarchy": {"hierarchy_source": "random"},
        }
        miou = {}
        precision_wins = 0
        for label, overrides in batteries.items():
            scores = []
            for seed in range(5):
                report = train(SimConfig(seed=seed, **overrides))
                scores.append(report.final_metrics["miou_per_level"]["1"])
                if label == "full":
                    rq = report.revision_quality
                    precision_wins += (
                        rq["pseudo_precision_post"] >= rq["pseudo_precision_pre"]
                    )
            miou[label] = float(np.mean(scores))
        elapsed = time.perf_counter() - t0
        print(f"  mean mIoU^1: {miou}  precision wins: {precision_wins}/5 "
              f"({elapsed:.0f}s)")
        assert miou["full"] >= miou["no_diagnosis"]          # (i)
        assert miou["full"] >= miou["uniform"]               # (ii)
        assert miou["full"] >= miou["random_hierarchy"]      # (iii)
        assert precision_wins >= 4                           # (iv)
        assert elapsed < 600.0


def test_revision_throughput_and_thread_invariance(h3):
    with criterion("throughput (512x512x7 < 2 s) + thread invariance"):
        rng = np.random.default_rng(0)
        probs = ProbBatch.from_array(rng.random((512 * 512, 7), dtype=np.float32))
        cfg = RevisionConfig(seed=11)
        rules = ld.compile_rules(h3)
        t0 = time.perf_counter()
        single = revise_batch(probs, h3, cfg, rules=rules, threads=1)
        elapsed = time.perf_counter() - t0
        assert elapsed < 2.0
        threaded = revise_batch(probs, h3, cfg, rules=rules, threads=8)
        assert np.array_equal(single.leaf_labels, threaded.leaf_labels)
        assert np.array_equal(
            single.revised_assignments, threaded.revised_assignments
        )
        assert single.stats.to_dict() == threaded.stats.to_dict()


def test_tensor_format_round_trip_and_errors(tmp_path):
    with criterion("tensor format round trip + three distinct errors"):
        rng = np.random.default_rng(1)
        arr = rng.random((100, 7), dtype=np.float32)
        path = tmp_path / "batch.ldt"
        write_array(path, arr)
        back = read_array(path)
        assert np.array_equal(back.view(np.uint32), arr.view(np.uint32))

        bad_magic = tmp_path / "magic.ldt"
        bad_magic.write_bytes(b"NOPE" + bytes(30))
        with pytest.raises(ld.BadMagicError):
            read_array(bad_magic)

        bad_code = tmp_path / "code.ldt"
        bad_code.write_bytes(b"LDT1" + bytes([9, 1]) + (8).to_bytes(8, "little"))
        with pytest.raises(ld.DimensionError):
            read_array(bad_code)

        truncated = tmp_path / "trunc.ldt"
        truncated.write_bytes(
            b"LDT1" + bytes([1, 2]) + (10).to_bytes(8, "little") * 2 + bytes(16)
        )
        with pytest.raises(ld.TruncatedPayloadError):
            read_array(truncated)
