"""Skeleton sequences: persistence, normalization, augmentation and synthesis.

Dataset file (JSON lines, UTF-8)
--------------------------------
Line 1 is the manifest::

    {"classes": [...], "joints": [...], "edges": [[i, j], ...],
     "splits": {"train": [ids], "test": [ids]}, "align": {...} | null}

``align``, when present, names the four joints used by :func:`rotate_align`
under the keys ``right_shoulder``, ``left_shoulder``, ``spine_base`` and
``spine``. Every further line is one sequence::

    {"id": str, "label": int, "subject": str | null, "frames": [[[x, y, z] x N] x T]}
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ALIGN_KEYS = ("right_shoulder", "left_shoulder", "spine_base", "spine")


class DatasetError(ValueError):
    pass


def _check_edges(edges, num_joints: int | None) -> list[tuple[int, int]]:
    out, seen = [], set()
    for e in edges:
        if len(e) != 2:
            raise DatasetError(f"edge {e!r} is not a pair")
        i, j = int(e[0]), int(e[1])
        if num_joints is not None and not (0 <= i < num_joints and 0 <= j < num_joints):
            raise DatasetError(f"edge ({i}, {j}) out of range for {num_joints} joints")
        if i == j:
            raise DatasetError(f"edge ({i}, {j}) is a self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DatasetError(f"duplicate edge {key}")
        seen.add(key)
        out.append((i, j))
    return out


@dataclass
class SkeletonSequence:
    frames: np.ndarray                       # T x N x 3
    edges: list[tuple[int, int]]
    label: int
    id: str = ""
    subject: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or self.frames.shape[0] < 1:
            raise DatasetError(f"sequence {self.id!r}: frames must be T x N x 3 with T >= 1, "
                               f"got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DatasetError(f"sequence {self.id!r}: non-finite coordinates")
        self.edges = _check_edges(self.edges, self.frames.shape[1])

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames) -> "SkeletonSequence":
        return SkeletonSequence(frames, self.edges, self.label, self.id, self.subject, dict(self.metadata))


@dataclass
class DatasetManifest:
    classes: list[str] = field(default_factory=list)
    joints: list[str] = field(default_factory=list)
    edges: list[tuple[int, int]] = field(default_factory=list)
    splits: dict[str, list[str]] = field(default_factory=dict)
    align: dict[str, str] | None = None

    def __post_init__(self):
        self.edges = _check_edges(self.edges, len(self.joints) if self.joints else None)
        if self.align is not None:
            missing = [k for k in ALIGN_KEYS if k not in self.align]
            if missing:
                raise DatasetError(f"align map lacks {missing}")
            unknown = [v for v in self.align.values() if v not in self.joints]
            if unknown:
                raise DatasetError(f"align map names unknown joints {unknown}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def align_indices(self) -> dict[str, int] | None:
        if self.align is None:
            return None
        return {k: self.joints.index(self.align[k]) for k in ALIGN_KEYS}

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "joints": list(self.joints),
                "edges": [list(e) for e in self.edges],
                "splits": {k: list(v) for k, v in self.splits.items()},
                "align": self.align}


@dataclass
class Dataset:
    manifest: DatasetManifest
    sequences: list[SkeletonSequence]

    def __len__(self):
        return len(self.sequences)

    def by_id(self, seq_id: str) -> SkeletonSequence:
        for s in self.sequences:
            if s.id == seq_id:
                return s
        raise KeyError(f"no sequence with id {seq_id!r}")

    def split(self, name: str) -> list[SkeletonSequence]:
        if name not in self.manifest.splits:
            raise DatasetError(f"dataset has no split {name!r}; available: {sorted(self.manifest.splits)}")
        wanted = set(self.manifest.splits[name])
        return [s for s in self.sequences if s.id in wanted]


# -------------------------------------------------------------- persistence

def _sequence_json(seq: SkeletonSequence) -> dict:
    out = {"id": seq.id, "label": int(seq.label), "subject": seq.subject,
           "frames": seq.frames.tolist()}
    if seq.metadata:
        out["meta"] = seq.metadata
    return out


def save_jsonl(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(dataset.manifest.to_json(), separators=(",", ":")) + "\n")
        for seq in dataset.sequences:
            fh.write(json.dumps(_sequence_json(seq), separators=(",", ":")) + "\n")


def load_jsonl(path) -> Dataset:
    path = Path(path)
    manifest = DatasetManifest()
    sequences: list[SkeletonSequence] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                if lineno == 1:
                    manifest = DatasetManifest(
                        classes=list(obj["classes"]), joints=list(obj["joints"]),
                        edges=[tuple(e) for e in obj["edges"]],
                        splits={k: list(v) for k, v in obj.get("splits", {}).items()},
                        align=obj.get("align"))
                    continue
                seq = SkeletonSequence(np.array(obj["frames"], dtype=float), manifest.edges,
                                       int(obj["label"]), str(obj["id"]), obj.get("subject"),
                                       obj.get("meta", {}))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if manifest.joints and seq.num_joints != len(manifest.joints):
                raise DatasetError(f"{path}:{lineno}: sequence has {seq.num_joints} joints, "
                                   f"manifest lists {len(manifest.joints)}")
            if manifest.classes and not 0 <= seq.label < manifest.num_classes:
                raise DatasetError(f"{path}:{lineno}: label {seq.label} outside "
                                   f"[0, {manifest.num_classes})")
            sequences.append(seq)
    return Dataset(manifest, sequences)


def read_row_table(path, coord_start: int, num_joints: int, group_col: int, label_col: int,
                   subject_col: int | None = None, delimiter: str | None = None,
                   label_map: dict[str, int] | None = None, edges: Sequence = ()) -> list[SkeletonSequence]:
    """Generic adapter for per-frame text tables (one frame per row).

    Rows sharing ``group_col`` form one sequence in file order; columns
    ``coord_start .. coord_start + 3*num_joints`` hold x, y, z per joint.
    The Florence 3D release, for example, maps to ``group_col=0, subject_col=1,
    label_col=2, coord_start=3, num_joints=15``.
    """
    groups: dict[str, list] = {}
    meta: dict[str, tuple] = {}
    with open(path, encoding="utf-8") as fh:
        rows = csv.reader(fh, delimiter=delimiter) if delimiter else (ln.split() for ln in fh)
        for lineno, row in enumerate(rows, 1):
            if not row or row[0].startswith("#"):
                continue
            try:
                coords = [float(v) for v in row[coord_start:coord_start + 3 * num_joints]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if len(coords) != 3 * num_joints:
                raise DatasetError(f"{path}:{lineno}: expected {3 * num_joints} coordinates, got {len(coords)}")
            key = row[group_col]
            raw_label = row[label_col]
            label = label_map[raw_label] if label_map else int(raw_label)
            subject = row[subject_col] if subject_col is not None else None
            if key in meta and meta[key] != (label, subject):
                raise DatasetError(f"{path}:{lineno}: sequence {key!r} changes label or subject")
            meta[key] = (label, subject)
            groups.setdefault(key, []).append(np.reshape(coords, (num_joints, 3)))
    return [SkeletonSequence(np.stack(frames), list(edges), meta[k][0], k, meta[k][1])
            for k, frames in groups.items()]


# ----------------------------------------------------------- normalization

def center_frames(seq: SkeletonSequence) -> SkeletonSequence:
    """Translate every frame so that its joint mean sits at the origin."""
    f = seq.frames
    return seq.with_frames(f - f.mean(axis=1, keepdims=True))


def alignment_rotation(frame, right_shoulder: int, left_shoulder: int, spine_base: int, spine: int) -> np.ndarray:
    """Rows are the new x, y, z axes expressed in the old frame."""
    x = frame[left_shoulder] - frame[right_shoulder]
    up = frame[spine] - frame[spine_base]
    nx, nu = np.linalg.norm(x), np.linalg.norm(up)
    if nx < 1e-12 or nu < 1e-12:
        raise DatasetError("degenerate pose: zero-length reference vector")
    x = x / nx
    y = up / nu - np.dot(up / nu, x) * x
    ny = np.linalg.norm(y)
    if ny < 1e-6:
        raise DatasetError("degenerate pose: shoulder and spine vectors are parallel")
    y = y / ny
    z = np.cross(x, y)
    return np.stack([x, y, z])


def rotate_align(seq: SkeletonSequence, right_shoulder: int, left_shoulder: int,
                 spine_base: int, spine: int) -> SkeletonSequence:
    """Rotate each frame so x runs right->left shoulder and y runs up the spine."""
    n = seq.num_joints
    for idx in (right_shoulder, left_shoulder, spine_base, spine):
        if not 0 <= idx < n:
            raise DatasetError(f"joint index {idx} out of range for {n} joints")
    out = np.empty_like(seq.frames)
    for t, frame in enumerate(seq.frames):
        rot = alignment_rotation(frame, right_shoulder, left_shoulder, spine_base, spine)
        out[t] = frame @ rot.T
    return seq.with_frames(out)


def prepare(seq: SkeletonSequence, manifest: DatasetManifest | None = None) -> SkeletonSequence:
    """Centering, then view alignment when the manifest names the reference joints."""
    seq = center_frames(seq)
    idx = manifest.align_indices() if manifest is not None else None
    if idx is not None:
        seq = rotate_align(seq, **idx)
    return seq


# ------------------------------------------------------------- augmentation

def segment_bounds(num_frames: int, segments: int) -> list[tuple[int, int]]:
    """Half-open frame ranges of ``segments`` near-equal consecutive segments."""
    return [(k * num_frames // segments, (k + 1) * num_frames // segments) for k in range(segments)]


def resample_nearest(frames: np.ndarray, length: int) -> np.ndarray:
    t = frames.shape[0]
    idx = np.minimum(((np.arange(length) + 0.5) * t / length).astype(int), t - 1)
    return frames[idx]


def augment(seq: SkeletonSequence, segments: int = 12, scale_lo: float = 0.98, scale_hi: float = 1.02,
            rng: np.random.Generator | None = None) -> SkeletonSequence:
    """Pick one frame per temporal segment and apply one global scale factor.

    With ``rng=None`` the middle frame of each segment is taken and no scaling
    is applied (the deterministic evaluation view).
    """
    if segments < 1:
        raise ValueError(f"segments must be >= 1, got {segments}")
    frames = seq.frames
    if frames.shape[0] < segments:
        frames = resample_nearest(frames, segments)
    picks = []
    for lo, hi in segment_bounds(frames.shape[0], segments):
        picks.append(lo + (hi - lo) // 2 if rng is None else int(rng.integers(lo, hi)))
    out = frames[picks]
    if rng is not None:
        out = out * rng.uniform(scale_lo, scale_hi)
    return seq.with_frames(out)


# ---------------------------------------------------------------- synthesis

STICK_JOINTS = [
    "head", "neck", "spine_base",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_hip", "left_knee", "left_ankle",
    "right_hip", "right_knee", "right_ankle",
]
STICK_EDGES = [(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8),
               (2, 9), (9, 10), (10, 11), (2, 12), (12, 13), (13, 14)]
RIGHT_ARM = (6, 7, 8)
LEFT_ARM = (3, 4, 5)
LEGS = (10, 11, 13, 14)
SYNTH_CLASSES = ("wave_left", "wave_right", "squat", "still")
STICK_ALIGN = {"right_shoulder": "right_shoulder", "left_shoulder": "left_shoulder",
               "spine_base": "spine_base", "spine": "neck"}

_UPPER_ARM, _FOREARM, _THIGH, _SHIN = 0.28, 0.26, 0.45, 0.45
_REST = np.array([
    [0.0, 1.70, 0.0], [0.0, 1.50, 0.0], [0.0, 1.00, 0.0],
    [0.20, 1.45, 0.0], [0.22, 1.17, 0.0], [0.24, 0.91, 0.0],
    [-0.20, 1.45, 0.0], [-0.22, 1.17, 0.0], [-0.24, 0.91, 0.0],
    [0.10, 0.95, 0.0], [0.10, 0.50, 0.0], [0.10, 0.05, 0.0],
    [-0.10, 0.95, 0.0], [-0.10, 0.50, 0.0], [-0.10, 0.05, 0.0],
])


def _arm(shoulder, side, upper_angle, fore_angle):
    """Elbow and wrist for angles measured from straight down, outward positive."""
    d1 = np.array([side * math.sin(upper_angle), -math.cos(upper_angle), 0.0])
    d2 = np.array([side * math.sin(fore_angle), -math.cos(fore_angle), 0.0])
    elbow = shoulder + _UPPER_ARM * d1
    return elbow, elbow + _FOREARM * d2


def _wave(pose, t, side, joints, amp, omega, phase):
    upper = math.radians(100.0) + 0.15 * amp * math.sin(omega * t + phase)
    fore = upper + math.radians(40.0) + amp * math.sin(omega * t + phase)
    elbow, wrist = _arm(pose[joints[0]], side, upper, fore)
    pose[joints[1]], pose[joints[2]] = elbow, wrist


def _squat(pose, t, depth, omega, phase):
    drop = depth * 0.5 * (1.0 - math.cos(omega * t + phase))
    pose[:9] += np.array([0.0, -drop, 0.0])
    for hip, knee, ankle in ((9, 10, 11), (12, 13, 14)):
        pose[hip] += np.array([0.0, -drop, 0.0])
        span = pose[hip][1] - pose[ankle][1]
        forward = math.sqrt(max(_THIGH ** 2 - (span / 2.0) ** 2, 0.0))
        pose[knee] = np.array([pose[hip][0], pose[ankle][1] + span / 2.0, forward])


def synth_sequence(kind: str, rng: np.random.Generator, noise: float = 0.01,
                   length: tuple[int, int] = (30, 60)) -> np.ndarray:
    """Frames (T x 15 x 3) of one jittered stick-figure motion of type ``kind``."""
    if kind not in SYNTH_CLASSES:
        raise ValueError(f"unknown class {kind!r}; valid classes: {', '.join(SYNTH_CLASSES)}")
    num_frames = int(rng.integers(length[0], length[1] + 1))
    body = rng.uniform(0.9, 1.1)
    yaw = math.radians(rng.uniform(-10.0, 10.0))
    offset = rng.uniform(-0.5, 0.5, size=3)
    cycles = rng.uniform(1.5, 3.0)
    omega = 2.0 * math.pi * cycles / num_frames
    phase = rng.uniform(0.0, 2.0 * math.pi)
    amp = math.radians(35.0) * rng.uniform(0.8, 1.2)
    depth = 0.25 * rng.uniform(0.8, 1.2)
    rot = np.array([[math.cos(yaw), 0.0, math.sin(yaw)],
                    [0.0, 1.0, 0.0],
                    [-math.sin(yaw), 0.0, math.cos(yaw)]])
    frames = np.empty((num_frames, len(STICK_JOINTS), 3))
    for t in range(num_frames):
        pose = _REST.copy()
        if kind == "wave_left":
            _wave(pose, t, 1.0, LEFT_ARM, amp, omega, phase)
        elif kind == "wave_right":
            _wave(pose, t, -1.0, RIGHT_ARM, amp, omega, phase)
        elif kind == "squat":
            _squat(pose, t, depth, omega, phase)
        frames[t] = (body * pose) @ rot.T + offset
    return frames + rng.uniform(-noise, noise, size=frames.shape)


def synth_generate(classes: Iterable[str], per_class: int, rng: np.random.Generator | int = 0,
                   test_fraction: float = 1.0 / 3.0, noise: float = 0.01) -> Dataset:
    """Seeded synthetic dataset with a per-class train/test split.

    The last ``round(per_class * test_fraction)`` sequences of every class go
    to the test split.
    """
    classes = list(classes)
    bad = [c for c in classes if c not in SYNTH_CLASSES]
    if bad:
        raise ValueError(f"unknown class {bad[0]!r}; valid classes: {', '.join(SYNTH_CLASSES)}")
    if len(set(classes)) != len(classes):
        raise ValueError("duplicate class names")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n_test = int(round(per_class * test_fraction))
    splits: dict[str, list[str]] = {"train": [], "test": []}
    sequences = []
    for label, kind in enumerate(classes):
        for k in range(per_class):
            seq_id = f"{kind}-{k:04d}"
            frames = synth_sequence(kind, rng, noise=noise)
            sequences.append(SkeletonSequence(frames, STICK_EDGES, label, seq_id, f"s{k % 5}",
                                              {"class": kind}))
            splits["test" if k >= per_class - n_test else "train"].append(seq_id)
    manifest = DatasetManifest(classes, list(STICK_JOINTS), list(STICK_EDGES), splits)
    return Dataset(manifest, sequences)
