"""Deterministic demo assets: models and synthetic test images.

The experiment's original trained weights are not available, so the repo
ships generators instead: a full-architecture model with random but
well-scaled weights (useful for verifying that the fixed-point path
tracks the float reference, which is weight-agnostic), a tiny model small
enough to run fully encrypted on the toy preset, and a micro model for
fast CLI round trips.  Any externally trained model in the text format
drops in the same way.

``python -m gatecnn.demo OUTDIR`` writes the models plus 20 PGM images.
"""

from __future__ import annotations

import os
import sys

import numpy as np

from .cnn import CONVOLUTION, FULLY_CONNECTED, LINEAR, RELU, LayerSpec, NetworkSpec
from .fixedpoint import FixedPointFormat
from .model_io import save_model, save_pgm

__all__ = ["preset_model", "tiny_model", "micro_model",
           "synthetic_images", "write_demo_assets"]


def preset_model(seed: int = 2024) -> NetworkSpec:
    """The full 28x28 architecture (4 and 15 feature maps, 240 -> 10) with
    the experiment's 32/16 format; weights drawn small enough that values
    stay far from the integer-range ceiling."""
    rng = np.random.default_rng(seed)
    return NetworkSpec(
        layers=[
            LayerSpec(CONVOLUTION, 1, 4,
                      rng.normal(0.0, 0.15, (4, 1, 5, 5)),
                      rng.normal(0.0, 0.05, 4), RELU, kernel_size=5, pool_size=2),
            LayerSpec(CONVOLUTION, 4, 15,
                      rng.normal(0.0, 0.15, (15, 4, 5, 5)),
                      rng.normal(0.0, 0.05, 15), RELU, kernel_size=5, pool_size=2),
            LayerSpec(FULLY_CONNECTED, 240, 10,
                      rng.normal(0.0, 0.1, (10, 240)),
                      rng.normal(0.0, 0.05, 10), LINEAR),
        ],
        input_height=28, input_width=28,
        fmt=FixedPointFormat(32, 16))


def tiny_model(seed: int = 7, total_bits: int = 12, frac_bits: int = 6) -> NetworkSpec:
    """6x6 input, one 3x3 convolution channel with 2x2 pooling, two output
    classes: small enough for a fully encrypted run on the toy preset."""
    rng = np.random.default_rng(seed)
    return NetworkSpec(
        layers=[
            LayerSpec(CONVOLUTION, 1, 1,
                      rng.normal(0.0, 0.25, (1, 1, 3, 3)),
                      rng.normal(0.0, 0.1, 1), RELU, kernel_size=3, pool_size=2),
            LayerSpec(FULLY_CONNECTED, 4, 2,
                      rng.normal(0.0, 0.3, (2, 4)),
                      rng.normal(0.0, 0.1, 2), LINEAR),
        ],
        input_height=6, input_width=6,
        fmt=FixedPointFormat(total_bits, frac_bits))


def micro_model(seed: int = 13) -> NetworkSpec:
    """2x2 input straight into a 4 -> 2 fully connected head; seconds even
    under encryption, used for CLI determinism checks."""
    rng = np.random.default_rng(seed)
    return NetworkSpec(
        layers=[LayerSpec(FULLY_CONNECTED, 4, 2,
                          rng.normal(0.0, 0.3, (2, 4)),
                          rng.normal(0.0, 0.1, 2), LINEAR)],
        input_height=2, input_width=2,
        fmt=FixedPointFormat(10, 5))


def synthetic_images(count: int, height: int, width: int, seed: int = 99):
    """Structured pseudo-digits: a couple of Gaussian strokes on a dark
    background, values in [-1, 1] on the 8-bit PGM grid."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    images = []
    for _ in range(count):
        canvas = np.full((height, width), -1.0)
        for _ in range(rng.integers(2, 5)):
            cy, cx = rng.uniform(0.2, 0.8) * height, rng.uniform(0.2, 0.8) * width
            sy, sx = rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)
            blob = np.exp(-(((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))
            canvas = np.maximum(canvas, 2.0 * blob - 1.0)
        # snap to the 8-bit grid so PGM round trips are exact
        canvas = np.round((canvas + 1.0) * 127.5) / 127.5 - 1.0
        images.append(canvas[None, :, :])
    return images


def write_demo_assets(outdir, image_count: int = 20) -> dict:
    """Write models and PGM images; returns the path map."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "preset_model": os.path.join(outdir, "preset_model.txt"),
        "tiny_model": os.path.join(outdir, "tiny_model.txt"),
        "micro_model": os.path.join(outdir, "micro_model.txt"),
        "images": [],
    }
    save_model(preset_model(), paths["preset_model"])
    save_model(tiny_model(), paths["tiny_model"])
    save_model(micro_model(), paths["micro_model"])
    for i, img in enumerate(synthetic_images(image_count, 28, 28)):
        path = os.path.join(outdir, f"digit_{i:02d}.pgm")
        save_pgm(img, path)
        paths["images"].append(path)
    return paths


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "demo_assets"
    written = write_demo_assets(target)
    print(f"wrote {written['preset_model']}, {written['tiny_model']}, "
          f"{written['micro_model']} and {len(written['images'])} images to {target}")
