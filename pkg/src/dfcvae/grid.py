from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from PIL import Image

SEPARATOR = 2


def grid_image(rows: Sequence[Sequence[torch.Tensor]], sep: int = SEPARATOR, fill: int = 255) -> Image.Image:
    """Assemble (3, H, W) tensors in [0, 1] row-major into one sheet with
    ``sep``-pixel separators. Rows may be ragged; missing cells stay blank."""
    rows = [list(r) for r in rows if len(r)]
    if not rows:
        raise ValueError("grid needs at least one image")
    _, h, w = rows[0][0].shape
    n_cols = max(len(r) for r in rows)
    sheet = np.full(
        (len(rows) * h + (len(rows) - 1) * sep, n_cols * w + (n_cols - 1) * sep, 3), fill, dtype=np.uint8
    )
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            arr = (img.detach().double().clamp(0, 1).cpu().numpy().transpose(1, 2, 0) * 255.0).round()
            y, x = i * (h + sep), j * (w + sep)
            sheet[y:y + h, x:x + w] = arr.astype(np.uint8)
    return Image.fromarray(sheet)


def square_rows(images: torch.Tensor) -> list:
    """Split a batch into rows of ceil(sqrt(n)) images (64 -> 8x8)."""
    n = len(images)
    cols = math.ceil(math.sqrt(n))
    return [list(images[i:i + cols]) for i in range(0, n, cols)]


def save_grid(rows, path: str) -> Image.Image:
    img = grid_image(rows)
    img.save(path, format="PNG")
    return img
