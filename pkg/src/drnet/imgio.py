"""PNG/GIF writing helpers shared by prediction, evaluation, and the CLI."""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(C,H,W) float in [0,1] -> (H,W,C) uint8 (or (H,W) for C=1)."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ConfigurationError(f"expected (C,H,W) frame, got {frame.shape}")
    data = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    data = np.transpose(data, (1, 2, 0))
    return data[:, :, 0] if data.shape[2] == 1 else data


def save_png(frame: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(frame)).save(path)


def load_png(path) -> np.ndarray:
    """PNG -> (C,H,W) float32 in [0,1]."""
    with Image.open(path) as img:
        data = np.asarray(img)
    if data.ndim == 2:
        data = data[:, :, None]
    return np.transpose(data, (2, 0, 1)).astype(np.float32) / 255.0


def save_gif(frames, path, duration_ms: int = 80) -> None:
    """Write a sequence of (C,H,W) frames as an animated GIF."""
    frames = list(frames)
    if not frames:
        raise ConfigurationError("cannot write an empty GIF")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    images = [Image.fromarray(to_uint8(f)) for f in frames]
    images[0].save(path, save_all=True, append_images=images[1:],
                   duration=duration_ms, loop=0)
