import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptsearch.autodiff import Tape
from ptsearch.graph import FeatureBundle
from ptsearch.metrics import (
    ConfusionMatrix,
    MetricsReport,
    aggregate,
    compute_metrics,
    confusion_matrix,
    format_table,
)
from ptsearch.pipeline import ArchConfig, compile_model, forward, predict_logits
from ptsearch.train import (
    AblationSpec,
    DivergedError,
    TrainConfig,
    ablation_grid,
    run_ablation,
    run_final,
    train_model,
)

FAST = TrainConfig(epochs=30, lr=0.04, seed=0)


def _poisoned(block):
    out = block.copy()
    out[0, 0] = np.inf
    return out


class TestConfusionMatrix:
    def test_perfect(self):
        labels = np.array([1] * 6 + [0] * 4)
        logits = np.column_stack([1 - labels, labels]).astype(float)
        assert confusion_matrix(logits, labels, np.ones(10, bool)) == ConfusionMatrix(tp=6, fp=0, tn=4, fn=0)

    def test_all_bot_balanced(self):
        labels = np.array([0, 1] * 5)
        logits = np.tile([0.0, 1.0], (10, 1))
        assert confusion_matrix(logits, labels, np.ones(10, bool)) == ConfusionMatrix(tp=5, fp=5, tn=0, fn=0)

    def test_tie_goes_to_human(self):
        cm = confusion_matrix(np.array([[0.3, 0.3]]), np.array([1]), np.array([True]))
        assert cm == ConfusionMatrix(tp=0, fp=0, tn=0, fn=1)

    def test_empty_mask(self):
        with pytest.raises(ValueError, match="empty mask"):
            confusion_matrix(np.zeros((2, 2)), np.array([0, 1]), np.zeros(2, bool))

    def test_mask_respected(self):
        cm = confusion_matrix(np.tile([0.0, 1.0], (4, 1)), np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0], bool))
        assert cm.total == 2


class TestMetrics:
    def test_perfect(self):
        r = compute_metrics(ConfusionMatrix(tp=6, fp=0, tn=4, fn=0))
        assert (r.accuracy, r.f1, r.mcc, r.precision, r.recall, r.specificity) == (1, 1, 1, 1, 1, 1)

    def test_all_positive_balanced(self):
        r = compute_metrics(ConfusionMatrix(tp=5, fp=5, tn=0, fn=0))
        assert (r.accuracy, r.recall, r.specificity, r.precision) == (0.5, 1.0, 0.0, 0.5)
        assert "mcc" in r.degenerate and r.mcc == 0

    def test_reference_matrix(self):
        r = compute_metrics(ConfusionMatrix(tp=40, fp=10, tn=35, fn=15))
        # direct arithmetic
        assert r.accuracy == 75 / 100
        assert r.precision == 40 / 50
        assert r.recall == 40 / 55
        assert r.specificity == 35 / 45
        assert math.isclose(r.f1, 2 * 40 / (2 * 40 + 10 + 15), rel_tol=1e-12)
        assert math.isclose(r.mcc, (40 * 35 - 10 * 15) / math.sqrt(50 * 55 * 45 * 50), rel_tol=1e-12)
        want = dict(accuracy=0.75, precision=0.8, recall=0.727273, specificity=0.777778, f1=0.761905, mcc=0.502519)
        for k, v in want.items():
            assert abs(getattr(r, k) - v) < 1e-6

    def test_inverted_predictions(self):
        assert compute_metrics(ConfusionMatrix(tp=0, fp=4, tn=0, fn=6)).mcc == -1.0

    def test_sklearn_agrees(self):
        from sklearn import metrics as skm

        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 300)
        logits = rng.normal(size=(300, 2))
        pred = (logits[:, 1] > logits[:, 0]).astype(int)
        r = compute_metrics(confusion_matrix(logits, y, np.ones(300, bool)))
        assert math.isclose(r.mcc, skm.matthews_corrcoef(y, pred), rel_tol=1e-12)
        assert math.isclose(r.f1, skm.f1_score(y, pred), rel_tol=1e-12)

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_ranges_and_identities(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        r = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
        for k in ("accuracy", "f1", "precision", "recall", "specificity"):
            assert 0 <= getattr(r, k) <= 1
        assert -1 <= r.mcc <= 1 + 1e-12
        assert r.accuracy == (tp + tn) / (tp + fp + tn + fn)
        if r.precision + r.recall > 0:
            assert math.isclose(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall), rel_tol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics(ConfusionMatrix(0, 0, 0, 0))


class TestAggregate:
    def test_mean_is_arithmetic_mean(self):
        rng = np.random.default_rng(0)
        reports = [MetricsReport(*rng.uniform(size=6), seed=i) for i in range(5)]
        s = aggregate(reports)
        for k in s.mean:
            assert abs(s.mean[k] - sum(getattr(r, k) for r in reports) / 5) < 1e-12

    def test_single_run_zero_std(self):
        s = aggregate([MetricsReport(0.9, 0.8, 0.7, 0.6, 0.5, 0.4)])
        assert all(v == 0 for v in s.std.values())

    def test_table_layout(self):
        s = aggregate([MetricsReport(0.857, 0.871, 0.849, 0.895, 0.812, 0.712)])
        text = format_table([("With Gate", s), ("Without Gate", s)], "Gate")
        lines = text.splitlines()
        assert lines[0] == "Gate"
        assert lines[1].split(" | ")[0].strip() == "Model"
        assert "0.857 ± 0.000" in lines[3]
        assert len(lines) == 5


class TestTrainModel:
    def test_separable_reaches_90(self, desk_1000):
        res = train_model("PT", desk_1000, TrainConfig(epochs=50, lr=0.04, seed=0))
        assert res.val_accuracy >= 0.90

    def test_zero_lr_is_untrained(self, desk_small):
        res = train_model("PTT", desk_small, replace(FAST, lr=0.0, weight_decay=0.0))
        fresh = compile_model("PTT", desk_small.meta, seed=FAST.seed)
        for k, v in fresh.params.params.items():
            assert np.array_equal(res.model.params[k], v)
        logits = predict_logits(fresh, desk_small.graph, desk_small.features)
        pred = (logits[:, 1] > logits[:, 0]).astype(int)
        val = desk_small.split.val
        assert res.val_accuracy == np.mean(pred[val] == desk_small.features.labels[val])

    def test_deterministic(self, desk_small):
        a = train_model("PPTPT", desk_small, FAST)
        b = train_model("PPTPT", desk_small, FAST)
        for k in a.model.params.params:
            assert np.array_equal(a.model.params[k], b.model.params[k])
        assert (a.val_accuracy, a.test_accuracy) == (b.val_accuracy, b.test_accuracy)

    def test_float32_mode(self, desk_small):
        res = train_model("PT", desk_small, replace(FAST, precision="float32"))
        assert res.model.params["head.1.W"].dtype == np.float32
        assert res.val_accuracy > 0.8

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported_with_epoch(self, desk_small):
        f = desk_small.features
        bad = FeatureBundle(_poisoned(f.desc), f.tweet, f.numerical, f.categorical, f.labels)
        with pytest.raises(DivergedError) as info:
            train_model("T", desk_small._replace(features=bad), FAST)
        assert info.value.epoch == 0

    def test_test_labels_never_touch_gradients(self, desk_small):
        f, split = desk_small.features, desk_small.split
        scrambled = f.labels.copy()
        test = split.test
        scrambled[test] = 1 - scrambled[test]
        grads = []
        for labels in (f.labels, scrambled):
            feats = FeatureBundle(f.desc, f.tweet, f.numerical, f.categorical, labels)
            model = compile_model("PTPT", desk_small.meta, seed=1)
            tape = Tape()
            logits = forward(model, desk_small.graph, feats, training=True, rng=np.random.default_rng(0), tape=tape)
            tape.backward(tape.cross_entropy(logits, labels, split.train))
            grads.append(model.params.grads)
        for k in grads[0]:
            assert np.array_equal(grads[0][k], grads[1][k])

    def test_unlabeled_nodes_pass_messages(self):
        from ptsearch.synthetic import make_synthetic

        ds = make_synthetic(150, 0.5, 2, 3.0, seed=5, unlabeled_fraction=0.2).normalized()
        res = train_model("PT", ds, FAST)
        assert 0 <= res.val_accuracy <= 1


class TestFinalAndAblation:
    def test_run_final_single_run_zero_std(self, desk_small):
        [(g, s)] = run_final(["PT"], desk_small, runs=1, cfg=FAST)
        assert g == "PT" and len(s.runs) == 1
        assert all(v == 0 for v in s.std.values())

    def test_run_final_needs_genotypes(self, desk_small):
        with pytest.raises(ValueError):
            run_final([], desk_small)

    def test_full_mask_equals_plain_run(self, desk_small):
        plain = run_final(["PTP"], desk_small, runs=2, cfg=FAST)[0][1]
        full = run_ablation(AblationSpec(runs=2), "PTP", desk_small, FAST)
        assert plain.mean == full.mean and plain.std == full.std

    def test_skip_off_single_t_identical(self, desk_small):
        on = run_ablation(AblationSpec(runs=2), "PTP", desk_small, FAST)
        off = run_ablation(AblationSpec(skip_enabled=False, runs=2), "PTP", desk_small, FAST)
        assert on.mean == off.mean

    def test_grids(self):
        assert len(ablation_grid("features")) == 11
        assert [n for n, _ in ablation_grid("gate")] == ["With Gate", "Without Gate"]
        assert [n for n, _ in ablation_grid("skip")] == ["With skip", "Without skip"]
        with pytest.raises(ValueError, match="unknown ablation mode"):
            ablation_grid("depth")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_runs_counted(self, desk_small):
        f = desk_small.features
        bad = desk_small._replace(features=FeatureBundle(_poisoned(f.desc), f.tweet, f.numerical, f.categorical, f.labels))
        [(_, s)] = run_final(["T"], bad, runs=2, cfg=FAST)
        assert s.failed == 2 and not s.runs

    def test_feature_arm_changes_model(self, desk_small):
        spec = AblationSpec(feature_mask=("categorical",), runs=1)
        assert spec.arch(ArchConfig()).feature_mask == ("categorical",)
        with pytest.raises(ValueError):
            AblationSpec(feature_mask=())
