#!/usr/bin/env python3
"""Convert the digits shipped in the npm `mnist` package to IDX files.

The package (https://github.com/cazala/mnist) stores 10,000 MNIST digits as
`src/digits/<class>.json`, each holding a flat `data` array of 28x28 grey
levels in [0, 1]. This writes

    <out>/mnist10k-images-idx3-ubyte
    <out>/mnist10k-labels-idx1-ubyte

with pixels rounded to bytes and the samples shuffled with a fixed seed so
that any prefix mixes all classes.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist
"""

import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def main(src: Path, out: Path) -> None:
    samples = []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        if len(data) % (SIDE * SIDE):
            sys.exit(f"{label}.json: {len(data)} values is not a multiple of {SIDE * SIDE}")
        for i in range(0, len(data), SIDE * SIDE):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[i : i + SIDE * SIDE])
            samples.append((pixels, label))
    random.Random(0).shuffle(samples)

    out.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with open(out / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, SIDE, SIDE))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit("usage: mnist_npm_to_idx.py <digits-dir> <out-dir>")
    main(Path(sys.argv[1]), Path(sys.argv[2]))
