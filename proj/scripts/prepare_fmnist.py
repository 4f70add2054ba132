#!/usr/bin/env python3
"""Build Fashion-MNIST IDX files from the per-class JSON dumps shipped in the
`fashion-mnist` npm package (package/src/clothes/<class>.json).

Per class, the first 6000 images go to the train split and the remainder to the
test split; each split is then shuffled with a fixed seed so the class order is
interleaved.  Output uses the standard file names:

    <out>/train-images-idx3-ubyte  <out>/train-labels-idx1-ubyte
    <out>/t10k-images-idx3-ubyte   <out>/t10k-labels-idx1-ubyte

Usage:
    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 scripts/prepare_fmnist.py package/src/clothes $DCL_DATA_ROOT/fmnist
"""
import argparse
import json
import pathlib
import random
import struct

TRAIN_PER_CLASS = 6000
SIDE = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, 0x03]))
        f.write(struct.pack(">III", len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, 0x01]))
        f.write(struct.pack(">I", len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("clothes_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=20200101)
    args = ap.parse_args()

    train, test = [], []
    for cls in range(10):
        rows = json.loads((args.clothes_dir / f"{cls}.json").read_text())["data"]
        # The package carries a couple of empty placeholder rows; drop them.
        rows = [r for r in rows if len(r) == SIDE * SIDE]
        for i, row in enumerate(rows):
            (train if i < TRAIN_PER_CLASS else test).append((row, cls))

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("t10k", test)):
        write_images(args.out_dir / f"{name}-images-idx3-ubyte", [r for r, _ in split])
        write_labels(args.out_dir / f"{name}-labels-idx1-ubyte", [c for _, c in split])
        print(f"{name}: {len(split)} images")


if __name__ == "__main__":
    main()
