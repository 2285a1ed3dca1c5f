"""Procedural clip datasets, pair samplers, and the binary clip container."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, SamplingError
from .glyphs import GLYPH_SIZE, builtin_digit_glyphs

CANVAS_SIZE = 64

DEFAULT_PALETTE = (
    (255, 64, 64),
    (64, 255, 64),
    (96, 96, 255),
    (255, 255, 64),
    (255, 64, 255),
    (64, 255, 255),
)

MOTION_REGIMES = ("bounce", "orbit", "static")

_MAGIC = b"DRCS"
_CONTAINER_VERSION = 1
_DTYPE_CODES = {"uint8": 0, "float32": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class VideoClip:
    """A fixed-length frame sequence with a content-identity label.

    ``frames`` is (T, C, H, W) float32 with every pixel in [0,1].
    """

    frames: np.ndarray
    content_label: int
    clip_id: int

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ConfigurationError(f"clip frames must be (T,C,H,W), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ConfigurationError("a clip needs at least 2 frames for pair sampling")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ConfigurationError("clip pixel values must lie in [0,1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class ClipDataset:
    """A list of clips sharing one (T, C, H, W) shape, plus generator metadata."""

    clips: list[VideoClip]
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.clips:
            raise ConfigurationError("dataset must contain at least one clip")
        shape = self.clips[0].frames.shape
        for clip in self.clips:
            if clip.frames.shape != shape:
                raise ConfigurationError(
                    f"all clips must share shape {shape}, got {clip.frames.shape}"
                )
            if not 0 <= clip.content_label < self.num_classes:
                raise ConfigurationError(
                    f"content_label {clip.content_label} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def frames_per_clip(self) -> int:
        return self.clips[0].frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.clips[0].frames.shape[1:])

    def labels(self) -> np.ndarray:
        return np.array([c.content_label for c in self.clips], dtype=np.int64)


@dataclass
class FramePairSample:
    """Two frames from one clip, ``offset_k`` frames apart."""

    x_t: np.ndarray
    x_tk: np.ndarray
    offset_k: int
    clip_id: int
    t: int


@dataclass
class PosePairFrames:
    """Raw frames behind one same-clip pair and one different-clip pair.

    The same-clip pair is (pair.x_t, pair.x_tk); the different-clip pair
    is (pair.x_t, cross_frame) with cross_frame taken from clip
    ``cross_clip_id`` at the same time index t+k.
    """

    pair: FramePairSample
    cross_frame: np.ndarray
    cross_clip_id: int
    same_clip_labels: tuple[bool, bool] = (True, False)


@dataclass
class PosePairSample:
    """A pose-vector pair plus the same-clip/different-clip flag."""

    pose_a: np.ndarray
    pose_b: np.ndarray
    same_clip: bool

    def __post_init__(self):
        if np.shape(self.pose_a) != np.shape(self.pose_b):
            raise ConfigurationError(
                f"pose pair dims differ: {np.shape(self.pose_a)} vs {np.shape(self.pose_b)}"
            )


def _bounce_step(pos: float, vel: float, limit: float) -> tuple[float, float]:
    """Advance one coordinate by one frame, reflecting off [0, limit]."""
    pos = pos + vel
    if pos < 0.0:
        return -pos, -vel
    if pos > limit:
        return 2.0 * limit - pos, -vel
    return pos, vel


def _paste_glyph(canvas: np.ndarray, glyph: np.ndarray, color: np.ndarray, top: int, left: int):
    h, w = glyph.shape
    region = canvas[:, top:top + h, left:left + w]
    alpha = glyph[None, :, :]
    region[...] = region * (1.0 - alpha) + alpha * color[:, None, None]


def _quantize_frames(frames: np.ndarray) -> np.ndarray:
    """Snap float frames onto the uint8 grid so container round-trips are exact."""
    return (np.round(frames * 255.0).astype(np.uint8).astype(np.float32)) / 255.0


def gen_moving_digits(
    num_clips: int,
    frames_per_clip: int,
    seed: int,
    palette=DEFAULT_PALETTE,
    digits=tuple(range(10)),
    glyphs: np.ndarray | None = None,
) -> ClipDataset:
    """Generate clips of two colored digits bouncing inside a 64x64 canvas.

    Each clip picks two glyphs (possibly the same digit) and two distinct
    palette colors, then moves them on independent linear trajectories that
    reflect off the canvas borders. The content label encodes the
    (digit, color) combination, canonicalized so that visually identical
    clips share a label. Generation is a pure function of ``seed``.
    """
    if num_clips < 1:
        raise ConfigurationError("num_clips must be >= 1")
    if frames_per_clip < 2:
        raise ConfigurationError("frames_per_clip must be >= 2")
    palette = [tuple(int(v) for v in color) for color in palette]
    if len(set(palette)) < 2:
        raise ConfigurationError("palette needs at least 2 distinct colors")
    digits = tuple(int(d) for d in digits)
    if any(d < 0 or d > 9 for d in digits) or not digits:
        raise ConfigurationError("digits must be a non-empty subset of 0..9")
    if glyphs is None:
        glyphs = builtin_digit_glyphs()

    limit = float(CANVAS_SIZE - GLYPH_SIZE)
    num_colors = len(palette)
    colors = np.array(palette, dtype=np.float32)
    seeds = np.random.SeedSequence(seed).spawn(num_clips)

    clips = []
    clip_params = []
    for clip_id in range(num_clips):
        rng = np.random.default_rng(seeds[clip_id])
        pair = []
        for _ in range(2):
            pair.append({
                "digit": int(digits[rng.integers(len(digits))]),
                "pos": rng.uniform(0.0, limit, size=2),
                "vel": rng.uniform(1.0, 3.0, size=2) * rng.choice([-1.0, 1.0], size=2),
            })
        color_idx = rng.choice(num_colors, size=2, replace=False)
        for entry, ci in zip(pair, color_idx):
            entry["color"] = int(ci)
        # Canonical order makes the label a pure function of appearance:
        # (da, db, ca, cb) and (db, da, cb, ca) describe the same clip.
        pair.sort(key=lambda e: (e["digit"], e["color"]))
        label = ((pair[0]["digit"] * 10 + pair[1]["digit"]) * num_colors
                 + pair[0]["color"]) * num_colors + pair[1]["color"]

        frames = np.zeros((frames_per_clip, 3, CANVAS_SIZE, CANVAS_SIZE), dtype=np.float32)
        state = [(e["pos"].copy(), e["vel"].copy()) for e in pair]
        for t in range(frames_per_clip):
            for (pos, _), entry in zip(state, pair):
                top = int(round(pos[0]))
                left = int(round(pos[1]))
                _paste_glyph(frames[t], glyphs[entry["digit"]],
                             colors[entry["color"]] / 255.0, top, left)
            for i, (pos, vel) in enumerate(state):
                for axis in range(2):
                    pos[axis], vel[axis] = _bounce_step(pos[axis], vel[axis], limit)
                state[i] = (pos, vel)
        frames = _quantize_frames(frames)
        clips.append(VideoClip(frames=frames, content_label=label, clip_id=clip_id))
        clip_params.append({
            "digits": [pair[0]["digit"], pair[1]["digit"]],
            "colors": [pair[0]["color"], pair[1]["color"]],
            "start_pos": [[float(v) for v in e["pos"]] for e in pair],
            "start_vel": [[float(v) for v in e["vel"]] for e in pair],
        })

    metadata = {
        "generator": "moving_digits",
        "seed": int(seed),
        "params": {
            "num_clips": int(num_clips),
            "frames_per_clip": int(frames_per_clip),
            "palette": [list(c) for c in palette],
            "digits": list(digits),
        },
        "clip_params": clip_params,
    }
    return ClipDataset(clips=clips, num_classes=100 * num_colors * num_colors,
                       metadata=metadata)


def _shape_family(num_shape_classes: int):
    """Membership tests for the shape family, indexed by class id.

    The first four shapes are square, triangle, ellipse, cross; classes
    beyond that are regular polygons with an increasing vertex count.
    """
    def polygon(n_vertices, radius=0.62):
        angles = 2.0 * math.pi * np.arange(n_vertices) / n_vertices - math.pi / 2.0
        verts = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)

        def inside(x, y):
            ok = np.ones_like(x, dtype=bool)
            for i in range(n_vertices):
                ax, ay = verts[i]
                bx, by = verts[(i + 1) % n_vertices]
                ok &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) <= 0.0
            return ok
        return inside

    base = [
        lambda x, y: np.maximum(np.abs(x), np.abs(y)) <= 0.5,
        polygon(3, radius=0.68),
        lambda x, y: (x / 0.64) ** 2 + (y / 0.36) ** 2 <= 1.0,
        lambda x, y: ((np.abs(x) <= 0.2) & (np.abs(y) <= 0.62))
        | ((np.abs(y) <= 0.2) & (np.abs(x) <= 0.62)),
    ]
    names = ["square", "triangle", "ellipse", "cross"]
    for n in range(num_shape_classes - len(base)):
        base.append(polygon(5 + n))
        names.append(f"polygon{5 + n}")
    return base[:num_shape_classes], names[:num_shape_classes]


def _quantize_angle(angle_deg: float) -> float:
    """Quantize to microdegrees mod 360 so full revolutions map onto themselves."""
    return (round(angle_deg * 1e6) % 360_000_000) / 1e6


def shape_frame(shape_index: int, angle_deg: float, image_size: int = CANVAS_SIZE,
                channels: int = 3, num_shape_classes: int = 4) -> np.ndarray:
    """Render one filled shape rotated by ``angle_deg``, as (C, H, W) in [0,1]."""
    shapes, _ = _shape_family(num_shape_classes)
    if not 0 <= shape_index < len(shapes):
        raise ConfigurationError(f"shape_index {shape_index} outside family of {len(shapes)}")
    theta = math.radians(_quantize_angle(angle_deg))
    coords = (np.arange(image_size, dtype=np.float64) + 0.5) / image_size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    # Rotate sample points backwards so the shape itself turns forward.
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xr = cos_t * xx + sin_t * yy
    yr = -sin_t * xx + cos_t * yy
    mask = shapes[shape_index](xr, yr).astype(np.float32)
    return np.repeat(mask[None, :, :], channels, axis=0)


def gen_rotating_shapes(
    num_clips: int,
    frames_per_clip: int,
    num_shape_classes: int,
    seed: int,
    image_size: int = CANVAS_SIZE,
    channels: int = 3,
    increment_range: tuple[float, float] = (8.0, 40.0),
) -> ClipDataset:
    """Generate clips of one filled shape rotating at a constant azimuth step.

    Shape identity is constant within a clip and is the content label; the
    start angle and per-frame increment vary across clips.
    """
    if num_clips < 1:
        raise ConfigurationError("num_clips must be >= 1")
    if frames_per_clip < 2:
        raise ConfigurationError("frames_per_clip must be >= 2")
    if num_shape_classes < 2:
        raise ConfigurationError("num_shape_classes must be >= 2")

    _, class_names = _shape_family(num_shape_classes)
    seeds = np.random.SeedSequence(seed).spawn(num_clips)
    clips = []
    clip_params = []
    for clip_id in range(num_clips):
        rng = np.random.default_rng(seeds[clip_id])
        shape_id = clip_id % num_shape_classes
        start = float(rng.uniform(0.0, 360.0))
        increment = float(rng.uniform(*increment_range) * rng.choice([-1.0, 1.0]))
        frames = np.stack([
            shape_frame(shape_id, start + t * increment, image_size, channels,
                        num_shape_classes)
            for t in range(frames_per_clip)
        ])
        clips.append(VideoClip(frames=_quantize_frames(frames),
                               content_label=shape_id, clip_id=clip_id))
        clip_params.append({"shape": class_names[shape_id], "start_deg": start,
                            "increment_deg": increment})

    metadata = {
        "generator": "rotating_shapes",
        "seed": int(seed),
        "params": {
            "num_clips": int(num_clips),
            "frames_per_clip": int(frames_per_clip),
            "num_shape_classes": int(num_shape_classes),
            "image_size": int(image_size),
            "channels": int(channels),
            "increment_range": [float(v) for v in increment_range],
        },
        "class_names": class_names,
        "clip_params": clip_params,
    }
    return ClipDataset(clips=clips, num_classes=num_shape_classes, metadata=metadata)


def gen_motion_regimes(
    num_clips: int,
    frames_per_clip: int,
    seed: int,
    regimes=MOTION_REGIMES,
    palette=DEFAULT_PALETTE,
) -> ClipDataset:
    """Generate single-digit clips whose label is the motion regime, not the digit.

    Regimes: ``bounce`` (linear trajectory with border reflection), ``orbit``
    (circular path around the canvas center), ``static`` (no motion). Used to
    train and score the action classifier.
    """
    if num_clips < 1:
        raise ConfigurationError("num_clips must be >= 1")
    if frames_per_clip < 2:
        raise ConfigurationError("frames_per_clip must be >= 2")
    regimes = tuple(regimes)
    unknown = set(regimes) - set(MOTION_REGIMES)
    if unknown:
        raise ConfigurationError(f"unknown motion regimes: {sorted(unknown)}")
    if len(regimes) < 2:
        raise ConfigurationError("need at least 2 motion regimes")

    glyphs = builtin_digit_glyphs()
    colors = np.array([tuple(int(v) for v in c) for c in palette], dtype=np.float32)
    limit = float(CANVAS_SIZE - GLYPH_SIZE)
    center = limit / 2.0
    seeds = np.random.SeedSequence(seed).spawn(num_clips)

    clips = []
    for clip_id in range(num_clips):
        rng = np.random.default_rng(seeds[clip_id])
        regime_id = clip_id % len(regimes)
        regime = regimes[regime_id]
        digit = int(rng.integers(10))
        color = colors[rng.integers(len(colors))] / 255.0
        frames = np.zeros((frames_per_clip, 3, CANVAS_SIZE, CANVAS_SIZE), dtype=np.float32)

        if regime == "bounce":
            pos = rng.uniform(0.0, limit, size=2)
            vel = rng.uniform(1.5, 3.0, size=2) * rng.choice([-1.0, 1.0], size=2)
            for t in range(frames_per_clip):
                _paste_glyph(frames[t], glyphs[digit], color,
                             int(round(pos[0])), int(round(pos[1])))
                for axis in range(2):
                    pos[axis], vel[axis] = _bounce_step(pos[axis], vel[axis], limit)
        elif regime == "orbit":
            radius = float(rng.uniform(0.55, 0.95) * center)
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            omega = float(rng.uniform(0.25, 0.5) * rng.choice([-1.0, 1.0]))
            for t in range(frames_per_clip):
                angle = phase + omega * t
                top = center + radius * math.sin(angle)
                left = center + radius * math.cos(angle)
                _paste_glyph(frames[t], glyphs[digit], color,
                             int(round(top)), int(round(left)))
        else:
            pos = rng.uniform(0.0, limit, size=2)
            top, left = int(round(pos[0])), int(round(pos[1]))
            for t in range(frames_per_clip):
                _paste_glyph(frames[t], glyphs[digit], color, top, left)

        clips.append(VideoClip(frames=_quantize_frames(frames),
                               content_label=regime_id, clip_id=clip_id))

    metadata = {
        "generator": "motion_regimes",
        "seed": int(seed),
        "params": {
            "num_clips": int(num_clips),
            "frames_per_clip": int(frames_per_clip),
            "regimes": list(regimes),
        },
        "class_names": list(regimes),
    }
    return ClipDataset(clips=clips, num_classes=len(regimes), metadata=metadata)


def sample_frame_pair(dataset: ClipDataset, max_offset_K: int,
                      rng: np.random.Generator) -> FramePairSample:
    """Draw (x^t, x^{t+k}) from one uniformly chosen clip.

    The offset k is uniform over [0, max_offset_K] and t is uniform over the
    starts that keep t+k inside the clip.
    """
    T = dataset.frames_per_clip
    if max_offset_K >= T:
        raise ConfigurationError(f"max_offset_K={max_offset_K} must be <= T-1={T - 1}")
    if max_offset_K < 0:
        raise ConfigurationError("max_offset_K must be >= 0")
    clip = dataset.clips[int(rng.integers(len(dataset.clips)))]
    k = int(rng.integers(max_offset_K + 1))
    t = int(rng.integers(T - k))
    return FramePairSample(x_t=clip.frames[t], x_tk=clip.frames[t + k],
                           offset_k=k, clip_id=clip.clip_id, t=t)


def sample_pose_pair_frames(dataset: ClipDataset, max_offset_K: int,
                            rng: np.random.Generator) -> PosePairFrames:
    """Draw the frames behind one same-clip and one different-clip pose pair.

    The cross frame comes from a uniformly chosen other clip, at the same
    time index t+k as the same-clip partner.
    """
    if len(dataset.clips) < 2:
        raise SamplingError("different-clip pairs need a dataset with >= 2 clips")
    pair = sample_frame_pair(dataset, max_offset_K, rng)
    other = int(rng.integers(len(dataset.clips) - 1))
    if other >= pair.clip_id:
        other += 1
    cross_clip = dataset.clips[other]
    cross_frame = cross_clip.frames[pair.t + pair.offset_k]
    return PosePairFrames(pair=pair, cross_frame=cross_frame,
                          cross_clip_id=cross_clip.clip_id)


def write_clipset(dataset: ClipDataset, path, dtype: str = "uint8") -> None:
    """Write a dataset to the binary clip container plus a JSON manifest sidecar.

    With ``dtype='uint8'`` pixels are stored as round(v*255); this is exact
    for generator output, which is quantized onto the uint8 grid.
    """
    if dtype not in _DTYPE_CODES:
        raise ConfigurationError(f"dtype must be one of {sorted(_DTYPE_CODES)}")
    path = Path(path)
    T = dataset.frames_per_clip
    C, H, W = dataset.frame_shape
    header = _MAGIC + struct.pack(
        "<IIIIIIB3x", _CONTAINER_VERSION, len(dataset.clips), T, C, H, W,
        _DTYPE_CODES[dtype],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for clip in dataset.clips:
            fh.write(struct.pack("<I", clip.content_label))
            if dtype == "uint8":
                payload = np.round(clip.frames * 255.0).astype(np.uint8)
            else:
                payload = clip.frames.astype("<f4")
            fh.write(payload.tobytes())
    manifest = {
        "generator": dataset.metadata.get("generator", "unknown"),
        "seed": dataset.metadata.get("seed"),
        "params": dataset.metadata.get("params", {}),
        "class_names": dataset.metadata.get("class_names"),
        "num_classes": dataset.num_classes,
        "metadata": dataset.metadata,
    }
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def read_clipset(path) -> ClipDataset:
    """Read a dataset written by ``write_clipset``; the inverse, bitwise."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 32:
        raise FormatError("truncated header")
    if raw[:4] != _MAGIC:
        raise FormatError("bad magic")
    version, num_clips, T, C, H, W, dtype_code = struct.unpack("<IIIIIIB", raw[4:29])
    if version != _CONTAINER_VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype_code not in _DTYPE_NAMES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    dtype = _DTYPE_NAMES[dtype_code]
    frame_bytes = T * C * H * W * (1 if dtype == "uint8" else 4)
    expected = 32 + num_clips * (4 + frame_bytes)
    if len(raw) < expected:
        raise FormatError("truncated payload")
    if len(raw) > expected:
        raise FormatError("trailing bytes after payload")

    manifest_path = path.with_name(path.name + ".json")
    metadata = {}
    num_classes = None
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        metadata = manifest.get("metadata", {})
        num_classes = manifest.get("num_classes")

    clips = []
    offset = 32
    labels = []
    for clip_id in range(num_clips):
        (label,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if dtype == "uint8":
            pixels = np.frombuffer(raw, dtype=np.uint8, count=T * C * H * W, offset=offset)
            frames = pixels.astype(np.float32).reshape(T, C, H, W) / 255.0
        else:
            pixels = np.frombuffer(raw, dtype="<f4", count=T * C * H * W, offset=offset)
            frames = pixels.reshape(T, C, H, W).copy()
        offset += frame_bytes
        labels.append(label)
        clips.append(VideoClip(frames=frames, content_label=int(label), clip_id=clip_id))
    if num_classes is None:
        num_classes = max(labels) + 1 if labels else 1
    return ClipDataset(clips=clips, num_classes=int(num_classes), metadata=metadata)
