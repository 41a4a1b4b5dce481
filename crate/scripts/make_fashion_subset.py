"""Builds the Fashion-MNIST test fixture (2000 train / 1000 test, IDX format).

Source: the `fashion-mnist` npm package, whose src/clothes/<class>.json files
hold the raw 28x28 byte images per class. Takes rows 0..200 of every class for
training and rows 6000..6100 for testing, shuffled with a fixed seed.

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 scripts/make_fashion_subset.py package crates/core/tests/data/fashion-mnist-subset
"""

import json
import random
import struct
import sys
from pathlib import Path

PER_TRAIN, PER_TEST, TEST_OFFSET, SEED = 200, 100, 6000, 20240611


def write(out, name, rows):
    with open(out / f"{name}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(out / f"{name}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main(package, out):
    train, test = [], []
    for c in range(10):
        data = json.loads((package / "src" / "clothes" / f"{c}.json").read_text())["data"]
        train += [(r, c) for r in data[:PER_TRAIN]]
        test += [(r, c) for r in data[TEST_OFFSET : TEST_OFFSET + PER_TEST]]
    rng = random.Random(SEED)
    rng.shuffle(train)
    rng.shuffle(test)
    out.mkdir(parents=True, exist_ok=True)
    write(out, "train", train)
    write(out, "t10k", test)


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
