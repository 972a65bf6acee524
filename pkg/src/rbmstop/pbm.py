"""Plain (P1) portable bitmap output for state grids; bit 1 is black."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import as_state_array


def state_image(state, rows: int, cols: int) -> np.ndarray:
    bits = as_state_array(state)[0]
    if rows * cols != bits.size:
        raise ValueError(f"{rows}x{cols} image cannot hold {bits.size} bits")
    return bits.reshape(rows, cols)


def montage(states, rows: int, cols: int, per_row: int | None = None, gap: int = 1) -> np.ndarray:
    """Tile states left to right, ``per_row`` per line, separated by white gaps."""
    arr = as_state_array(states)
    if rows * cols != arr.shape[1]:
        raise ValueError(f"{rows}x{cols} image cannot hold {arr.shape[1]} bits")
    n = arr.shape[0]
    per_row = per_row or n
    lines = -(-n // per_row)
    height = lines * rows + (lines - 1) * gap
    width = per_row * cols + (per_row - 1) * gap
    canvas = np.zeros((height, width), dtype=np.uint8)
    for k, bits in enumerate(arr):
        r, c = divmod(k, per_row)
        y, x = r * (rows + gap), c * (cols + gap)
        canvas[y:y + rows, x:x + cols] = bits.reshape(rows, cols)
    return canvas


def write_pbm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.uint8)
    body = "\n".join(" ".join(str(v) for v in row) for row in image)
    Path(path).write_text(f"P1\n{image.shape[1]} {image.shape[0]}\n{body}\n")


def read_pbm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError(f"{path}: not a plain PBM file")
    width, height = int(tokens[1]), int(tokens[2])
    # P1 pixels may be written without separators
    pixels = [int(ch) for tok in tokens[3:] for ch in tok]
    if len(pixels) != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, found {len(pixels)}")
    return np.array(pixels, dtype=np.uint8).reshape(height, width)


def render_pbm(states, rows: int, cols: int, path, per_row: int | None = None,
               separate: bool = False) -> list[Path]:
    """Write a montage to ``path``, or one file per state when ``separate``.

    With ``separate`` the path may contain ``{i}``; otherwise an index suffix
    is added before the extension.
    """
    arr = as_state_array(states)
    path = Path(path)
    if not separate:
        write_pbm(montage(arr, rows, cols, per_row), path)
        return [path]
    written = []
    for i, bits in enumerate(arr):
        target = Path(str(path).format(i=i)) if "{i}" in str(path) else path.with_name(
            f"{path.stem}_{i:03d}{path.suffix or '.pbm'}")
        write_pbm(state_image(bits, rows, cols), target)
        written.append(target)
    return written
