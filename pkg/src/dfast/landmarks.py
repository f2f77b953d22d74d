"""Facial and pose landmark sequences: validation, normalization, resampling."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError, SchemaError

FACE_POINTS, FACE_COORDS = 478, 2
POSE_POINTS, POSE_COORDS = 33, 3
FACE_FRAMES = 256
POSE_FRAMES = 64

# Semantic indices shared with the synthetic generator.
LEFT_MOUTH, RIGHT_MOUTH = 61, 291
NOSE, LEFT_WRIST, RIGHT_WRIST = 0, 15, 16


@dataclass
class FaceSequence:
    frames: np.ndarray  # (F, 478, 2)
    fps: float = 30.0

    POINTS = FACE_POINTS
    COORDS = FACE_COORDS


@dataclass
class PoseSequence:
    frames: np.ndarray  # (F, 33, 3)
    fps: float = 30.0

    POINTS = POSE_POINTS
    COORDS = POSE_COORDS


def validate(seq):
    """Check the (F, points, coords) contract of a face or pose sequence."""
    frames = np.asarray(seq.frames)
    kind = type(seq).__name__
    if frames.ndim != 3:
        raise SchemaError(f"{kind}: expected a (frames, points, coords) array, found shape {frames.shape}")
    f, p, c = frames.shape
    if p != seq.POINTS:
        raise SchemaError(f"{kind}: expected {seq.POINTS} points, found {p}")
    if c != seq.COORDS:
        raise SchemaError(f"{kind}: expected {seq.COORDS} coordinates per point, found {c}")
    if f < 2:
        raise SchemaError(f"{kind}: expected at least 2 frames, found {f}")
    if not np.isfinite(frames).all():
        raise SchemaError(f"{kind}: non-finite coordinates")
    return seq


def _normalize_frames(frames):
    frames = np.asarray(frames, dtype=np.float64)
    centered = frames - frames.mean(axis=1, keepdims=True)
    rms = np.sqrt(np.mean(np.sum(centered**2, axis=2), axis=1))
    if np.any(rms < 1e-12):
        bad = int(np.argmax(rms < 1e-12))
        raise NumericError(f"frame {bad} is degenerate: all landmarks coincide")
    return centered / rms[:, None, None]


def normalize_face(s: FaceSequence) -> FaceSequence:
    """Per frame: centroid to origin, RMS landmark distance to 1."""
    validate(s)
    return FaceSequence(_normalize_frames(s.frames), s.fps)


def normalize_pose(s: PoseSequence) -> PoseSequence:
    """Same as :func:`normalize_face`, in 3-D."""
    validate(s)
    return PoseSequence(_normalize_frames(s.frames), s.fps)


def _interp_axis0(x, target):
    """Linear interpolation along axis 0 onto ``target`` uniform samples of [0, F-1]."""
    f = x.shape[0]
    if f == target:
        return x.copy()
    pos = np.linspace(0.0, f - 1, target)
    lo = np.minimum(np.floor(pos).astype(int), f - 2)
    frac = (pos - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    out = x[lo] * (1.0 - frac) + x[lo + 1] * frac
    out[0] = x[0]
    out[-1] = x[-1]
    return out


def resample_time(seq, target_frames):
    """Resample to ``target_frames`` frames; first and last frames kept exactly."""
    if target_frames < 2:
        raise SchemaError(f"target frame count must be at least 2, got {target_frames}")
    frames = np.asarray(seq.frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise SchemaError("need at least 2 frames to resample")
    fps = seq.fps * (target_frames - 1) / (frames.shape[0] - 1)
    return type(seq)(_interp_axis0(frames, target_frames), fps)


def _resize_weights(n_in, n_out):
    """Row-stochastic (n_out, n_in) bilinear weights with half-pixel centers.

    When shrinking, the triangle kernel is widened by the scale factor so every
    input sample contributes (antialiased bilinear).
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    j = np.arange(n_in)
    w = np.maximum(0.0, 1.0 - np.abs(j[None, :] - centers[:, None]) / support)
    return w / w.sum(axis=1, keepdims=True)


def bilinear_resize(m, h, w):
    """Resize a 2-D array to (h, w); identity when the size already matches."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (h, w):
        return m.copy()
    rows = _resize_weights(m.shape[0], h)
    cols = _resize_weights(m.shape[1], w)
    return rows @ m @ cols.T


def face_to_grid(s: FaceSequence, h=128, w=128):
    """(256, 478, 2) face frames → standardized (h, w) grid.

    Frames become rows of interleaved x, y coordinates (956 columns), then the
    stack is bilinearly resized and standardized.
    """
    frames = np.asarray(s.frames, dtype=np.float64)
    stack = frames.reshape(frames.shape[0], -1)
    grid = bilinear_resize(stack, h, w)
    grid = grid - grid.mean()
    var = grid.var()
    if var >= 1e-12:
        grid = grid / np.sqrt(var)
    return grid


def face_grid(s: FaceSequence, h=128, w=128):
    """Full face pipeline: validate, normalize, resample to 256 frames, grid."""
    return face_to_grid(resample_time(normalize_face(s), FACE_FRAMES), h, w)


def pose_frames(s: PoseSequence):
    """Full pose pipeline: validate, normalize, resample to 64 frames."""
    return resample_time(normalize_pose(s), POSE_FRAMES).frames


# -- LMK1 container ----------------------------------------------------

_MAGIC = b"LMK1"
_VERSION = 1


def write_lmk1(path, array):
    """Write an array as little-endian float32 in the LMK1 container."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = _MAGIC + struct.pack("<IB", _VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes())


def read_lmk1(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 9 or blob[:4] != _MAGIC:
        raise FormatError(f"{path}: missing LMK1 magic")
    version, rank = struct.unpack_from("<IB", blob, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported LMK1 version {version}")
    offset = 9
    if len(blob) < offset + 4 * rank:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(blob) != offset + 4 * count:
        raise FormatError(f"{path}: payload holds {len(blob) - offset} bytes, expected {4 * count}")
    return np.frombuffer(blob, dtype="<f4", offset=offset, count=count).reshape(dims).astype(np.float32)


def read_landmark_csv(path, coords):
    """One row per frame, header ``p0_x,p0_y[,p0_z],p1_x,...``."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(f"{path}: line {lineno} holds a non-numeric value") from None
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} values, header has {len(header)}")
    axes = "xyz"[:coords]
    n_points = len(header) // coords
    expected = [f"p{i}_{a}" for i in range(n_points) for a in axes]
    if header != expected:
        raise SchemaError(f"{path}: header does not follow p<i>_<{'|'.join(axes)}> ordering")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), n_points, coords)


def load_face(path, fps=30.0):
    arr = read_landmark_csv(path, 2) if str(path).endswith(".csv") else read_lmk1(path)
    return validate(FaceSequence(arr, fps))


def load_pose(path, fps=30.0):
    arr = read_landmark_csv(path, 3) if str(path).endswith(".csv") else read_lmk1(path)
    return validate(PoseSequence(arr, fps))
