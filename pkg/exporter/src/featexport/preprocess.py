"""Image and mask loading for export.

Images resize to the model input square (bicubic) and normalize with the
standard contrastive-pretraining channel statistics. Masks resample to the
same fixed resolution (nearest neighbor) and binarize; pooling down to
grid resolution is the consumer's job, keeping one source of truth for
the grid-mask convention.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

CHANNEL_MEAN = (0.48145466, 0.4578275, 0.40821073)
CHANNEL_STD = (0.26862954, 0.26130258, 0.27577711)


def load_image(path, input_size: int) -> torch.Tensor:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        img = img.convert("RGB").resize((input_size, input_size), Image.BICUBIC)
        pixels = np.asarray(img, dtype=np.float32) / 255.0
    pixels = (pixels - np.array(CHANNEL_MEAN, dtype=np.float32)) / np.array(
        CHANNEL_STD, dtype=np.float32
    )
    return torch.from_numpy(pixels.transpose(2, 0, 1))


def load_mask(path, input_size: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask not found: {path}")
    with Image.open(path) as img:
        img = img.convert("L").resize((input_size, input_size), Image.NEAREST)
        values = np.asarray(img)
    return (values > 0).astype(np.uint8)
