import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from a2gnn import dataio as dio


def _rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _seq(frames, label=0, seq_id="a"):
    return dio.SkeletonSequence(frames, [], label, seq_id)


class TestSequenceValidation:
    def test_bad_shape(self):
        with pytest.raises(dio.DatasetError):
            _seq(np.zeros((4, 3)))

    def test_empty_sequence(self):
        with pytest.raises(dio.DatasetError):
            _seq(np.zeros((0, 3, 3)))

    def test_nonfinite(self):
        f = np.zeros((2, 3, 3))
        f[1, 1, 1] = np.nan
        with pytest.raises(dio.DatasetError):
            _seq(f)

    def test_edge_out_of_range(self):
        with pytest.raises(dio.DatasetError):
            dio.SkeletonSequence(np.zeros((1, 3, 3)), [(0, 3)], 0)

    def test_duplicate_edge_in_manifest(self):
        with pytest.raises(dio.DatasetError, match="duplicate"):
            dio.DatasetManifest(["a", "b"], ["j0", "j1", "j2"], [(0, 1), (1, 0)])

    def test_align_unknown_joint(self):
        with pytest.raises(dio.DatasetError):
            dio.DatasetManifest(["a"], ["j0"], [], align={k: "nope" for k in dio.ALIGN_KEYS})


class TestPersistence:
    def test_round_trip_synthetic(self, tmp_path):
        ds = dio.synth_generate(dio.SYNTH_CLASSES, 3, rng=1)
        path = tmp_path / "d.jsonl"
        dio.save_jsonl(path, ds)
        back = dio.load_jsonl(path)
        assert back.manifest == ds.manifest
        assert len(back) == len(ds)
        for a, b in zip(ds.sequences, back.sequences):
            assert np.array_equal(a.frames, b.frames)
            assert (a.id, a.label, a.subject, a.metadata) == (b.id, b.label, b.subject, b.metadata)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.jsonl"
        path.write_text("")
        ds = dio.load_jsonl(path)
        assert len(ds) == 0 and ds.manifest.classes == []

    def test_malformed_line_reports_number(self, tmp_path):
        ds = dio.synth_generate(["still"], 2, rng=0)
        path = tmp_path / "d.jsonl"
        dio.save_jsonl(path, ds)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][:20]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(dio.DatasetError, match=r"d\.jsonl:3:"):
            dio.load_jsonl(path)

    def test_joint_count_mismatch(self, tmp_path):
        ds = dio.synth_generate(["still"], 1, rng=0)
        manifest = ds.manifest.to_json()
        manifest["joints"] = manifest["joints"][:-1]
        manifest["edges"] = [e for e in manifest["edges"] if max(e) < 14]
        path = tmp_path / "d.jsonl"
        dio.save_jsonl(path, ds)
        lines = path.read_text().splitlines()
        lines[0] = json.dumps(manifest)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(dio.DatasetError, match=":2:"):
            dio.load_jsonl(path)

    def test_unknown_split(self):
        ds = dio.synth_generate(["still"], 1, rng=0)
        with pytest.raises(dio.DatasetError, match="available"):
            ds.split("validation")

    def test_row_table_adapter(self, tmp_path):
        path = tmp_path / "t.txt"
        rows = ["# seq subject label coords",
                "1 s1 2 " + " ".join(["0.5"] * 6),
                "1 s1 2 " + " ".join(["1.5"] * 6),
                "2 s2 0 " + " ".join(["2.0"] * 6)]
        path.write_text("\n".join(rows) + "\n")
        seqs = dio.read_row_table(path, coord_start=3, num_joints=2, group_col=0, label_col=2,
                                  subject_col=1, edges=[(0, 1)])
        assert [s.id for s in seqs] == ["1", "2"]
        assert seqs[0].frames.shape == (2, 2, 3) and seqs[0].label == 2
        assert seqs[1].subject == "s2"

    def test_row_table_short_row(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("1 s1 0 1 2\n")
        with pytest.raises(dio.DatasetError, match=":1:"):
            dio.read_row_table(path, 3, 2, 0, 2)


class TestNormalization:
    def test_center_zero_mean(self):
        f = np.random.default_rng(0).normal(size=(5, 4, 3)) + 7
        out = dio.center_frames(_seq(f)).frames
        np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_center_idempotent(self, seed):
        f = np.random.default_rng(seed).normal(size=(3, 5, 3)) * 10
        once = dio.center_frames(_seq(f))
        twice = dio.center_frames(once)
        np.testing.assert_allclose(twice.frames, once.frames, atol=1e-12)

    def test_align_axes(self):
        pose = dio.synth_sequence("still", np.random.default_rng(0), noise=0.0)[:1]
        idx = {"right_shoulder": 6, "left_shoulder": 3, "spine_base": 9, "spine": 1}
        out = dio.rotate_align(_seq(pose), **idx).frames[0]
        shoulder = out[3] - out[6]
        assert shoulder[0] > 0 and abs(shoulder[1]) < 1e-12 and abs(shoulder[2]) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_align_commutes_with_rotation(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(4, 6, 3))
        rot = _rotation(rng)
        idx = dict(right_shoulder=0, left_shoulder=1, spine_base=2, spine=3)
        a = dio.rotate_align(_seq(f), **idx).frames
        b = dio.rotate_align(_seq(f @ rot.T), **idx).frames
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_degenerate_pose(self):
        with pytest.raises(dio.DatasetError, match="degenerate"):
            dio.rotate_align(_seq(np.zeros((1, 4, 3))), 0, 1, 2, 3)

    def test_prepare_uses_manifest_align(self):
        rng = np.random.default_rng(1)
        joints = ["rs", "ls", "sb", "sp"]
        align = dict(zip(dio.ALIGN_KEYS, joints))
        manifest = dio.DatasetManifest(["a"], joints, [(0, 1), (1, 2), (2, 3)], align=align)
        seq = dio.SkeletonSequence(rng.normal(size=(2, 4, 3)), manifest.edges, 0)
        out = dio.prepare(seq, manifest).frames
        expected = dio.rotate_align(dio.center_frames(seq), 0, 1, 2, 3).frames
        np.testing.assert_allclose(out, expected)


class TestAugment:
    def test_equal_length_is_identity_without_rng(self):
        f = np.random.default_rng(0).normal(size=(12, 3, 3))
        np.testing.assert_array_equal(dio.augment(_seq(f), 12).frames, f)

    def test_forced_unit_scale(self):
        f = np.random.default_rng(0).normal(size=(12, 3, 3))
        out = dio.augment(_seq(f), 12, 1.0, 1.0, np.random.default_rng(3)).frames
        np.testing.assert_array_equal(out, f)

    def test_segment_ranges_24(self):
        f = np.arange(24.0)[:, None, None] * np.ones((24, 2, 3))
        out = dio.augment(_seq(f), 12, 1.0, 1.0, np.random.default_rng(5)).frames
        for k in range(12):
            assert out[k, 0, 0] in (2 * k, 2 * k + 1)

    def test_single_scale_factor(self):
        f = np.random.default_rng(2).uniform(1, 2, size=(30, 4, 3))
        out = dio.augment(_seq(f), 12, 0.98, 1.02, np.random.default_rng(7))
        factors = []
        for k, (lo, hi) in enumerate(dio.segment_bounds(30, 12)):
            cands = f[lo:hi]
            r = out.frames[k][None] / cands
            good = [row for row in r if np.ptp(row) < 1e-12]
            assert good, "frame not taken from its own segment"
            factors.append(good[0].flat[0])
        assert np.ptp(factors) < 1e-12
        assert 0.98 <= factors[0] <= 1.02

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**31 - 1))
    def test_length_always_segments(self, t, seed):
        f = np.random.default_rng(seed).normal(size=(t, 2, 3))
        out = dio.augment(_seq(f), 12, rng=np.random.default_rng(seed)).frames
        assert out.shape == (12, 2, 3)

    def test_short_sequence_keeps_order(self):
        f = np.arange(5.0)[:, None, None] * np.ones((5, 1, 3))
        out = dio.augment(_seq(f), 12).frames[:, 0, 0]
        assert np.all(np.diff(out) >= 0)
        assert set(out) == set(range(5))

    def test_bad_segments(self):
        with pytest.raises(ValueError):
            dio.augment(_seq(np.zeros((3, 2, 3))), 0)


class TestSynthetic:
    def test_shape_and_split_sizes(self):
        ds = dio.synth_generate(dio.SYNTH_CLASSES, 15, rng=0)
        assert len(ds.split("train")) == 40 and len(ds.split("test")) == 20
        assert ds.sequences[0].num_joints == 15 and len(ds.manifest.edges) == 14

    def test_still_bounded_by_noise(self):
        f = dio.synth_sequence("still", np.random.default_rng(0), noise=0.01)
        assert np.max(np.abs(np.diff(f, axis=0))) <= 0.02 + 1e-12

    def test_wave_right_moves_right_wrist(self):
        f = dio.synth_sequence("wave_right", np.random.default_rng(1))
        right, left = dio.RIGHT_ARM[-1], dio.LEFT_ARM[-1]
        assert f[:, right].var(axis=0).sum() > f[:, left].var(axis=0).sum()

    def test_deterministic_files(self, tmp_path):
        for name in ("a", "b"):
            dio.save_jsonl(tmp_path / name, dio.synth_generate(dio.SYNTH_CLASSES, 2, rng=42))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_unknown_class(self):
        with pytest.raises(ValueError, match="valid classes"):
            dio.synth_generate(["jump"], 1)

    def test_zero_per_class(self):
        ds = dio.synth_generate(dio.SYNTH_CLASSES, 0)
        assert len(ds) == 0 and ds.manifest.classes == list(dio.SYNTH_CLASSES)
