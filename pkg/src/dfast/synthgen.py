"""Synthetic F.A.S.T. trials: healthy vs stroke-simulated face, voice and pose.

Every symptom scales with a per-side severity ``delta``; at ``delta = 0`` the
stroke generators reduce exactly to the healthy ones. A subject carries a
fixed affected side, a jittered severity and small body/face idiosyncrasies.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform, write_wav
from .errors import ContractError
from .landmarks import (
    FACE_POINTS, LEFT_MOUTH, LEFT_WRIST, NOSE, RIGHT_MOUTH, RIGHT_WRIST,
    FaceSequence, PoseSequence, write_lmk1,
)
from .rng import make_rng

FACE_FRAMES = 90
POSE_FRAMES = 150
FPS = 30.0
SMILE_AMPLITUDE = 0.1
CHEEK_NEIGHBOURS = 8
CHEEK_RING = 0.02
FACE_SCALE = 0.3  # face size in the frame relative to a frame-filling face
FACE_JITTER = 0.003 * FACE_SCALE
HEALTHY_DURATION = 1.2
FUNDAMENTAL_HZ = 120.0
FORMANTS = ((730.0, 1090.0), (270.0, 2290.0), (660.0, 1720.0), (530.0, 1840.0), (300.0, 870.0))
ONSET_TAU = 0.04  # seconds of onset smoothing at delta = 1
SHOULDER_HEIGHT = 0.5
TREMOR_HZ = 5.0
TRIALS_PER_CLASS = 3
SIDES = ("left", "right")


@dataclass(frozen=True)
class GenParams:
    delta: float = 0.6
    sigma: float = 1.0
    seed: int = 0
    n_subjects: int = 8
    trials_per_class: int = TRIALS_PER_CLASS

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ContractError(f"delta must lie in [0, 1], got {self.delta}")
        if self.sigma < 0:
            raise ContractError(f"sigma must be non-negative, got {self.sigma}")
        if self.n_subjects < 3:
            raise ContractError(f"need at least 3 subjects, got {self.n_subjects}")


@dataclass
class SyntheticSample:
    subject_id: str
    trial_id: int
    label: int
    delta: float
    affected_side: str
    face: FaceSequence
    voice: Waveform
    pose: PoseSequence

    @property
    def sample_id(self):
        return f"{self.subject_id}_t{self.trial_id}"


def _side_deltas(label, delta, affected_side):
    if affected_side not in SIDES:
        raise ContractError(f"affected side must be 'left' or 'right', got {affected_side!r}")
    if not label:
        return 0.0, 0.0
    return (delta, 0.0) if affected_side == "left" else (0.0, delta)


# -- face --------------------------------------------------------------


def _corner_patch(corner):
    """Indices and offsets of the cheek points around a mouth corner.

    They carry the indices adjacent to the corner and sit on concentric rings
    of 8 points each.
    """
    half = CHEEK_NEIGHBOURS // 2
    idx = [i for i in range(corner - half, corner + half + 1) if i != corner]
    k = np.arange(len(idx))
    radius = CHEEK_RING * (1 + k // 8)
    angle = 2.0 * np.pi * (k % 8) / 8 + 0.3 * (k // 8)
    return idx, np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def _build_face_template():
    """Neutral face: an oval outline plus interior points, centred in the frame.

    Points are spatially local in index around each mouth corner, so the
    corner's neighbours occupy adjacent columns of the face grid. The layout
    is drawn for a frame-filling face and shrunk by ``FACE_SCALE``.
    """
    rng = make_rng(478, 0)
    n = FACE_POINTS
    pts = np.empty((n, 2))
    n_oval = 36
    theta = np.linspace(0.0, 2.0 * np.pi, n_oval, endpoint=False)
    pts[:n_oval, 0] = 0.5 + 0.25 * np.cos(theta)
    pts[:n_oval, 1] = 0.5 + 0.32 * np.sin(theta)
    corners = {LEFT_MOUTH: (0.42, 0.68), RIGHT_MOUTH: (0.58, 0.68)}
    for i in range(n_oval, n):
        while True:
            r, phi = np.sqrt(rng.random()) * 0.95, rng.random() * 2.0 * np.pi
            p = (0.5 + 0.25 * r * np.cos(phi), 0.5 + 0.32 * r * np.sin(phi))
            if all(np.hypot(p[0] - c[0], p[1] - c[1]) > CHEEK_RING * (1 + CHEEK_NEIGHBOURS // 8) for c in corners.values()):
                break
        pts[i] = p
    for corner, (cx, cy) in corners.items():
        pts[corner] = (cx, cy)
        idx, offsets = _corner_patch(corner)
        pts[idx] = (cx, cy) + offsets
    return 0.5 + (pts - 0.5) * FACE_SCALE


FACE_TEMPLATE = _build_face_template()


def _cheek_points(corner, left):
    d = np.linalg.norm(FACE_TEMPLATE - FACE_TEMPLATE[corner], axis=1)
    same_side = FACE_TEMPLATE[:, 0] < 0.5 if left else FACE_TEMPLATE[:, 0] > 0.5
    d[~same_side] = np.inf
    d[[LEFT_MOUTH, RIGHT_MOUTH]] = np.inf
    return np.argsort(d, kind="stable")[:CHEEK_NEIGHBOURS]


LEFT_CHEEK = _cheek_points(LEFT_MOUTH, True)
RIGHT_CHEEK = _cheek_points(RIGHT_MOUTH, False)


def smile_profile(frames=FACE_FRAMES):
    """sin²(πt/T) for t = 0..T with T = frames - 1."""
    t = np.arange(frames)
    return np.sin(np.pi * t / (frames - 1)) ** 2


def corner_amplitudes(label, delta, affected_side):
    """Peak upward displacement of the (left, right) mouth corners."""
    dl, dr = _side_deltas(label, delta, affected_side)
    return SMILE_AMPLITUDE * (1.0 - dl), SMILE_AMPLITUDE * (1.0 - dr)


def asymmetry_index(a_left, a_right):
    top = max(a_left, a_right)
    return 0.0 if top == 0 else abs(a_left - a_right) / top


def gen_face(rng, label, delta, sigma, affected_side="left", template=None):
    """90-frame smile; the affected mouth corner lifts less.

    Image coordinates (y grows downward), so lifting subtracts from y.
    """
    base = FACE_TEMPLATE if template is None else template
    a_left, a_right = corner_amplitudes(label, delta, affected_side)
    prof = smile_profile()
    frames = np.repeat(base[None], FACE_FRAMES, axis=0).copy()
    for corner, cheek, amp in ((LEFT_MOUTH, LEFT_CHEEK, a_left), (RIGHT_MOUTH, RIGHT_CHEEK, a_right)):
        frames[:, corner, 1] -= amp * prof
        frames[:, cheek, 1] -= 0.5 * amp * prof[:, None]
    noise = rng.standard_normal(frames.shape) * (sigma * 0.005)
    return FaceSequence(frames + noise, FPS)


# -- voice -------------------------------------------------------------


def voice_duration(label, delta):
    return HEALTHY_DURATION * (1.0 + (delta if label else 0.0))


def gen_voice(rng, label, delta, sigma):
    """Five syllables (one per word of the test sentence) at 16 kHz.

    Each syllable is a 120 Hz fundamental plus two formant tones occupying the
    first 70 % of its slot. Stroke trials are slower by ``1 + delta`` and have
    onsets smoothed by a first-order rise with time constant ``0.04 s · delta``.
    """
    d = delta if label else 0.0
    duration = voice_duration(label, delta)
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    phases = rng.random((len(FORMANTS), 3)) * 2.0 * np.pi
    slot = duration / len(FORMANTS)
    tau = ONSET_TAU * d
    release = 0.005
    out = np.zeros(n)
    for k, (f1, f2) in enumerate(FORMANTS):
        start, stop = k * slot, k * slot + 0.7 * slot
        mask = (t >= start) & (t < stop)
        local = t[mask] - start
        env = np.ones_like(local)
        if tau > 0:
            env = 1.0 - np.exp(-local / tau)
        env *= np.clip((stop - t[mask]) / release, 0.0, 1.0)
        tone = (
            0.3 * np.sin(2 * np.pi * FUNDAMENTAL_HZ * t[mask] + phases[k, 0])
            + 0.2 * np.sin(2 * np.pi * f1 * t[mask] + phases[k, 1])
            + 0.1 * np.sin(2 * np.pi * f2 * t[mask] + phases[k, 2])
        )
        out[mask] = env * tone
    out += rng.standard_normal(n) * (sigma * 0.01)
    return Waveform(np.clip(out, -1.0, 1.0), SAMPLE_RATE)


# -- pose --------------------------------------------------------------

# Canonical skeleton (x right, y up, z toward the camera negative); wrists rest at y = 0.
POSE_TEMPLATE = np.array(
    [
        [0.00, 0.85, -0.05],  # 0 nose
        [-0.03, 0.89, -0.03], [-0.04, 0.89, -0.03], [-0.05, 0.89, -0.03],
        [0.03, 0.89, -0.03], [0.04, 0.89, -0.03], [0.05, 0.89, -0.03],
        [-0.08, 0.87, 0.02], [0.08, 0.87, 0.02],
        [-0.02, 0.80, -0.04], [0.02, 0.80, -0.04],
        [-0.20, 0.50, 0.00], [0.20, 0.50, 0.00],  # 11, 12 shoulders
        [-0.24, 0.25, 0.00], [0.24, 0.25, 0.00],  # 13, 14 elbows
        [-0.27, 0.00, 0.00], [0.27, 0.00, 0.00],  # 15, 16 wrists
        [-0.29, -0.04, 0.00], [0.29, -0.04, 0.00],
        [-0.28, -0.05, -0.01], [0.28, -0.05, -0.01],
        [-0.25, -0.03, -0.02], [0.25, -0.03, -0.02],
        [-0.14, -0.30, 0.00], [0.14, -0.30, 0.00],  # 23, 24 hips
        [-0.15, -0.75, 0.00], [0.15, -0.75, 0.00],
        [-0.15, -1.20, 0.00], [0.15, -1.20, 0.00],
        [-0.16, -1.25, 0.03], [0.16, -1.25, 0.03],
        [-0.15, -1.27, -0.06], [0.15, -1.27, -0.06],
    ]
)
_SHOULDER = {LEFT_WRIST: 11, RIGHT_WRIST: 12}
_ELBOW = {LEFT_WRIST: 13, RIGHT_WRIST: 14}
_HAND = {LEFT_WRIST: (17, 19, 21), RIGHT_WRIST: (18, 20, 22)}


def _smooth(u):
    u = np.clip(u, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


def wrist_peak(side_delta):
    return SHOULDER_HEIGHT * (1.0 - side_delta)


def tremor_amplitude(side_delta):
    return 0.02 + 0.05 * side_delta


def wrist_trajectory(side_delta, lateral_sign, frames=POSE_FRAMES):
    """Tremor-free wrist path (frames, 3) in canonical coordinates.

    Rise from rest to the peak over 60·(1 + 0.3·delta) frames, hold until frame
    90, then travel to the nose, missing it laterally by 0.05·delta.
    """
    f = np.arange(frames, dtype=np.float64)
    rest = np.array([0.27 * lateral_sign, 0.0, 0.0])
    peak = wrist_peak(side_delta)
    raised = np.array([0.20 * lateral_sign, peak, -0.45 * peak / SHOULDER_HEIGHT])
    rise = 60.0 * (1.0 + 0.3 * side_delta)
    target = POSE_TEMPLATE[NOSE] + np.array([0.05 * side_delta * lateral_sign, 0.0, 0.0])
    up = _smooth(f / rise)[:, None]
    path = rest + up * (raised - rest)
    reach = _smooth((f - 90.0) / (frames - 1 - 90.0))[:, None]
    return path + reach * (target - path)


def gen_pose(rng, label, delta, sigma, affected_side="left"):
    """150-frame arm raise and nose touch; the affected arm is weaker and shakier."""
    dl, dr = _side_deltas(label, delta, affected_side)
    frames = np.repeat(POSE_TEMPLATE[None], POSE_FRAMES, axis=0).copy()
    t = np.arange(POSE_FRAMES) / FPS
    for wrist, side_delta, sign in ((LEFT_WRIST, dl, -1.0), (RIGHT_WRIST, dr, 1.0)):
        path = wrist_trajectory(side_delta, sign)
        path[:, 1] += tremor_amplitude(side_delta) * np.sin(2.0 * np.pi * TREMOR_HZ * t)
        offset = path - POSE_TEMPLATE[wrist]
        frames[:, wrist] = path
        for hand in _HAND[wrist]:
            frames[:, hand] = POSE_TEMPLATE[hand] + offset
        shoulder = frames[:, _SHOULDER[wrist]]
        frames[:, _ELBOW[wrist]] = 0.5 * (shoulder + path) + np.array([0.03 * sign, 0.0, 0.0])
    noise = rng.standard_normal(frames.shape) * (sigma * 0.01)
    return PoseSequence(frames + noise, FPS)


# -- subjects and datasets ---------------------------------------------


@dataclass
class Subject:
    subject_id: str
    delta: float
    affected_side: str
    face_template: np.ndarray
    body_scale: float
    body_offset: np.ndarray


def make_subject(seed, index, base_delta):
    rng = make_rng(seed, index, 0)
    delta = float(np.clip(base_delta * rng.uniform(0.8, 1.2), 0.0, 1.0))
    side = SIDES[int(rng.integers(2))]
    scale = rng.uniform(0.92, 1.08)
    shift = rng.uniform(-0.03, 0.03, size=2)
    jitter = rng.standard_normal(FACE_TEMPLATE.shape) * FACE_JITTER
    jitter[[LEFT_MOUTH, RIGHT_MOUTH]] = 0.0
    face = 0.5 + (FACE_TEMPLATE - 0.5) * scale + shift + jitter
    body_scale = float(rng.uniform(0.9, 1.1))
    body_offset = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0])
    return Subject(f"s{index:03d}", delta, side, face, body_scale, body_offset)


def subject_samples(p: GenParams, index, base_delta=None):
    """The 2 × trials_per_class trials of one subject; healthy trials first."""
    subject = make_subject(p.seed, index, p.delta if base_delta is None else base_delta)
    rng = make_rng(p.seed, index, 1)
    samples = []
    for trial in range(2 * p.trials_per_class):
        label = int(trial >= p.trials_per_class)
        delta = subject.delta if label else 0.0
        face = gen_face(rng, label, subject.delta, p.sigma, subject.affected_side, subject.face_template)
        voice = gen_voice(rng, label, subject.delta, p.sigma)
        pose = gen_pose(rng, label, subject.delta, p.sigma, subject.affected_side)
        pose = PoseSequence(pose.frames * subject.body_scale + subject.body_offset, pose.fps)
        samples.append(
            SyntheticSample(subject.subject_id, trial, label, delta, subject.affected_side, face, voice, pose)
        )
    return samples


def generate_samples(p: GenParams, base_deltas=None):
    """All samples in memory, subject by subject."""
    out = []
    for i in range(p.n_subjects):
        out.extend(subject_samples(p, i, None if base_deltas is None else base_deltas[i]))
    return out


def gen_dataset(p: GenParams, out_dir, force=False):
    """Write WAV + LMK1 files and ``manifest.jsonl`` under ``out_dir``.

    Refuses to touch a non-empty directory unless ``force`` is set.
    Returns the manifest path.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; refusing to overwrite")
    for sub in ("face", "pose", "audio"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(p.n_subjects):
        for s in subject_samples(p, i):
            face_path = f"face/{s.sample_id}.lmk"
            pose_path = f"pose/{s.sample_id}.lmk"
            audio_path = f"audio/{s.sample_id}.wav"
            write_lmk1(out / face_path, s.face.frames)
            write_lmk1(out / pose_path, s.pose.frames)
            write_wav(out / audio_path, s.voice)
            record = {
                "subject_id": s.subject_id,
                "trial_id": s.trial_id,
                "label": s.label,
                "face_path": face_path,
                "pose_path": pose_path,
                "audio_path": audio_path,
                "delta": round(s.delta, 6),
                "affected_side": s.affected_side,
            }
            lines.append(json.dumps(record, sort_keys=True))
    manifest = out / "manifest.jsonl"
    tmp = out / "manifest.jsonl.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, manifest)
    return manifest


def face_asymmetry_from_sequence(face: FaceSequence):
    """Closed-form oracle: asymmetry index of the observed corner lifts."""
    frames = np.asarray(face.frames)
    lift_l = frames[0, LEFT_MOUTH, 1] - frames[:, LEFT_MOUTH, 1]
    lift_r = frames[0, RIGHT_MOUTH, 1] - frames[:, RIGHT_MOUTH, 1]
    return asymmetry_index(float(lift_l.max()), float(lift_r.max()))


def expected_counts(n_subjects, trials_per_class=TRIALS_PER_CLASS):
    samples = n_subjects * 2 * trials_per_class
    return samples, 3 * samples


__all__ = [
    "GenParams", "SyntheticSample", "gen_face", "gen_voice", "gen_pose", "gen_dataset",
    "generate_samples", "subject_samples", "make_subject", "smile_profile", "corner_amplitudes",
    "asymmetry_index", "wrist_trajectory", "wrist_peak", "tremor_amplitude", "voice_duration",
    "face_asymmetry_from_sequence", "expected_counts",
]
