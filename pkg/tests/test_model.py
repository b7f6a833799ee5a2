import numpy as np
import pytest

from a2gnn import dataio as dio
from a2gnn import diffcore as dc
from a2gnn import graphcore as gc
from a2gnn.config import TrainConfig
from a2gnn.model import A2GNN

from .helpers import permute_edges, random_tree_edges

SMALL = TrainConfig(K=3, channels=(4, 5), d_h=8, seed=3)


def _model(cfg=SMALL, n=6, seed=0, classes=3):
    edges = random_tree_edges(np.random.default_rng(seed), n)
    return A2GNN(cfg, n, edges, classes), edges


class TestConstruction:
    def test_default_shapes(self):
        m = A2GNN(TrainConfig(), 15, [(i, i + 1) for i in range(14)], 4)
        assert m.store["spectral1.theta"].shape == (30, 32)
        assert m.store["spectral2.theta"].shape == (320, 64)
        assert m.lstm_input_width == 15 * 64
        assert m.store["head.FC2"].shape == (4, 256)

    def test_disconnected_template(self):
        with pytest.raises(gc.GraphError):
            A2GNN(SMALL, 4, [(0, 1), (2, 3)], 2)

    def test_ablation_has_no_attend_params(self):
        m, _ = _model(SMALL.replace(use_attend=False))
        assert not any(name.startswith("attend") for name in m.store)

    def test_seeded_init(self):
        a, _ = _model()
        b, _ = _model()
        for name in a.store:
            assert np.array_equal(a.store[name].value, b.store[name].value)


class TestForward:
    def test_probabilities(self):
        m, _ = _model()
        x = np.random.default_rng(1).normal(size=(5, 6, 3))
        probs, w = m.forward_sequence(x)
        assert probs.shape == (3,) and abs(probs.sum() - 1) < 1e-12
        assert w.shape == (5, 6, 6)

    def test_bad_frames_shape(self):
        m, _ = _model()
        with pytest.raises(ValueError):
            m.forward(np.zeros((5, 7, 3)))

    def test_deterministic(self):
        m, _ = _model()
        x = np.random.default_rng(2).normal(size=(4, 6, 3))
        assert np.array_equal(m.forward(x).logits.value, m.forward(x).logits.value)

    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        m, edges = _model(seed=seed)
        x = rng.normal(size=(4, 6, 3))
        perm = rng.permutation(6)
        moved = m.with_template(6, permute_edges(edges, perm))
        # new node i is old node perm[i]
        p_base, _ = m.forward_sequence(x)
        p_moved, _ = moved.forward_sequence(x[:, perm])
        np.testing.assert_allclose(p_moved, p_base, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("agg,response", [("mean", "o"), ("last", "o"), ("mean", "h"), ("last", "h")])
    def test_aggregation_modes(self, agg, response):
        m, _ = _model(SMALL.replace(temporal_agg=agg, response=response))
        probs, _ = m.forward_sequence(np.random.default_rng(0).normal(size=(3, 6, 3)))
        assert abs(probs.sum() - 1) < 1e-12

    def test_last_step_sees_early_frames(self):
        m, _ = _model(SMALL.replace(temporal_agg="last"))
        x = np.random.default_rng(4).normal(size=(3, 6, 3))
        y = x.copy()
        y[0] += 1.0
        assert not np.allclose(m.forward(x).logits.value, m.forward(y).logits.value)

    def test_translation_invariance_after_centering(self):
        m, edges = _model()
        rng = np.random.default_rng(8)
        seq = dio.SkeletonSequence(rng.normal(size=(5, 6, 3)), edges, 0)
        moved = seq.with_frames(seq.frames + rng.normal(size=3) * 5)
        p0, _ = m.forward_sequence(dio.center_frames(seq).frames)
        p1, _ = m.forward_sequence(dio.center_frames(moved).frames)
        np.testing.assert_allclose(p1, p0, atol=1e-9, rtol=0)

    def test_au_weights_rows(self):
        m, _ = _model()
        au = m.extract_au_weights(np.random.default_rng(0).normal(size=(4, 6, 3)))
        assert au.shape == (4, 6)
        np.testing.assert_allclose(au.sum(axis=1), 1, atol=1e-12)

    def test_au_weights_need_attend(self):
        m, _ = _model(SMALL.replace(use_attend=False))
        with pytest.raises(ValueError):
            m.extract_au_weights(np.zeros((2, 6, 3)))

    def test_estimate_policy_runs(self):
        m, _ = _model(SMALL.replace(lambda_policy="estimate"))
        probs, _ = m.forward_sequence(np.random.default_rng(0).normal(size=(3, 6, 3)))
        assert np.all(np.isfinite(probs))


class TestLoss:
    def test_loss_is_negative_log_prob(self):
        m, _ = _model()
        x = np.random.default_rng(0).normal(size=(3, 6, 3))
        probs, _ = m.forward_sequence(x)
        assert abs(m.loss(x, 2) + np.log(probs[2])) < 1e-12

    def test_uniform_nine_classes(self):
        m, _ = _model(classes=9)
        for p in m.store.params.values():
            p.value[:] = 0
        assert m.loss(np.ones((2, 6, 3)), 4) == pytest.approx(np.log(9), abs=1e-12)

    def test_certain_prediction_zero_loss(self):
        m, _ = _model(classes=2)
        m.store["head.b2"].value[:] = [[800.0, -800.0]]
        assert m.loss(np.zeros((2, 6, 3)), 0) == 0.0

    def test_label_range(self):
        m, _ = _model()
        with pytest.raises(ValueError):
            m.loss(np.zeros((2, 6, 3)), 3)

    def test_full_model_gradcheck(self):
        cfg = TrainConfig(K=3, channels=(3, 4), d_h=5, seed=1)
        m, _ = _model(cfg, n=5, classes=3)
        x = np.random.default_rng(7).normal(size=(3, 5, 3))
        report = dc.gradcheck(lambda s: m.loss_node(x, 1), m.store, tol=1e-4, step=1e-5)
        assert report.passed, report.lines()
        assert sorted(e.name for e in report.entries) == sorted(m.store)


class TestPersistence:
    def test_save_load_bit_identical(self, tmp_path):
        m, _ = _model()
        x = np.random.default_rng(0).normal(size=(4, 6, 3))
        m.save(tmp_path / "m.npz", {"epoch": 7})
        back, meta, _ = A2GNN.load(tmp_path / "m.npz")
        assert meta["epoch"] == 7
        assert back.config == m.config and back.edges == m.edges
        assert np.array_equal(back.forward(x).logits.value, m.forward(x).logits.value)

    def test_float32_round_trip(self, tmp_path):
        m, _ = _model(SMALL.replace(precision="float32"))
        assert m.store["head.FC1"].value.dtype == np.float32
        m.save(tmp_path / "m.npz")
        back, _, _ = A2GNN.load(tmp_path / "m.npz")
        assert back.store["head.FC1"].value.dtype == np.float32
