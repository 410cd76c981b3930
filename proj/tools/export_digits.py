#!/usr/bin/env python3
"""Export the UCI handwritten-digits images bundled with scikit-learn to IDX files.

Produces data/digits-8x8-images-idx3-ubyte and data/digits-8x8-labels-idx1-ubyte.
Pixel values (0..16) are rescaled to 0..255 bytes. This is the source material for
`gmwae synth-data --mode digits`, which upscales and jitters them to 28x28.
"""
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main(out_dir: Path) -> None:
    d = load_digits()
    images = np.round(d.images * (255.0 / 16.0)).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    n, h, w = images.shape

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "digits-8x8-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())
    with open(out_dir / "digits-8x8-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} images ({h}x{w}) to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "data"))
