"""Built-in digit glyphs used by the moving-digits generator.

The default glyphs are a 7x5 bitmap font upscaled to 28x28, so the repo
needs no external image files. ``load_digit_glyphs`` swaps in real
handwritten glyphs from an .npz archive when one is available.
"""

from pathlib import Path

import numpy as np

from .errors import FormatError

GLYPH_SIZE = 28

_BITMAPS = {
    0: ("01110",
        "10001",
        "10011",
        "10101",
        "11001",
        "10001",
        "01110"),
    1: ("00100",
        "01100",
        "00100",
        "00100",
        "00100",
        "00100",
        "01110"),
    2: ("01110",
        "10001",
        "00001",
        "00010",
        "00100",
        "01000",
        "11111"),
    3: ("11111",
        "00010",
        "00100",
        "00010",
        "00001",
        "10001",
        "01110"),
    4: ("00010",
        "00110",
        "01010",
        "10010",
        "11111",
        "00010",
        "00010"),
    5: ("11111",
        "10000",
        "11110",
        "00001",
        "00001",
        "10001",
        "01110"),
    6: ("00110",
        "01000",
        "10000",
        "11110",
        "10001",
        "10001",
        "01110"),
    7: ("11111",
        "00001",
        "00010",
        "00100",
        "01000",
        "01000",
        "01000"),
    8: ("01110",
        "10001",
        "10001",
        "01110",
        "10001",
        "10001",
        "01110"),
    9: ("01110",
        "10001",
        "10001",
        "01111",
        "00001",
        "00010",
        "01100"),
}


def _rasterize(rows):
    bitmap = np.array([[c == "1" for c in row] for row in rows], dtype=np.float32)
    # 7x5 -> 28x20 via 4x nearest-neighbor upscale, then pad to 28x28
    glyph = np.kron(bitmap, np.ones((4, 4), dtype=np.float32))
    return np.pad(glyph, ((0, 0), (4, 4)))


def builtin_digit_glyphs() -> np.ndarray:
    """Return the ten default glyphs as a (10, 28, 28) float array in [0,1]."""
    return np.stack([_rasterize(_BITMAPS[d]) for d in range(10)])


def load_digit_glyphs(path) -> np.ndarray:
    """Load one 28x28 glyph per digit class from an .npz archive.

    The archive must hold ``images`` (N, 28, 28) and ``labels`` (N,); the
    first image of each digit 0-9 is used. Pixel values are rescaled to
    [0,1] if stored as uint8.
    """
    path = Path(path)
    try:
        with np.load(path) as archive:
            images = np.asarray(archive["images"])
            labels = np.asarray(archive["labels"])
    except KeyError as exc:
        raise FormatError(f"glyph archive {path} is missing array {exc}") from exc
    except Exception as exc:
        raise FormatError(f"could not read glyph archive {path}: {exc}") from exc
    if images.ndim != 3 or images.shape[1:] != (GLYPH_SIZE, GLYPH_SIZE):
        raise FormatError(
            f"glyph archive images must be (N, {GLYPH_SIZE}, {GLYPH_SIZE}), got {images.shape}"
        )
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    images = images.astype(np.float32)
    glyphs = []
    for digit in range(10):
        idx = np.nonzero(labels == digit)[0]
        if idx.size == 0:
            raise FormatError(f"glyph archive has no example of digit {digit}")
        glyphs.append(np.clip(images[idx[0]], 0.0, 1.0))
    return np.stack(glyphs)
