#!/usr/bin/env python3
"""Build gzipped IDX files from the 5000-image MNIST subset bundled in mlxtend.

The subset holds 500 images per digit. The first 400 of each digit (file
order) become the train split and the remaining 100 the test split.

    pip download --no-deps mlxtend -d /tmp/wheels
    python3 tools/make_mnist5k.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

TRAIN_PER_CLASS = 400
MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def load_rows(source: Path):
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode()
    rows = []
    for line in text.strip().splitlines():
        values = [int(float(v)) for v in line.split(",")]
        rows.append((values[:-1], values[-1]))
    return rows


def write_idx(path: Path, images, labels):
    # mtime=0 keeps the gzip output byte-stable across runs.
    header = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    payload = header + b"".join(bytes(img) for img in images)
    with open(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb") as f:
        f.write(gzip.compress(payload, mtime=0))
    header = struct.pack(">II", 0x00000801, len(labels))
    with open(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb") as f:
        f.write(gzip.compress(header + bytes(labels), mtime=0))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    rows = load_rows(Path(sys.argv[1]))
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    seen = [0] * 10
    train, test = ([], []), ([], [])
    for pixels, label in rows:
        split = train if seen[label] < TRAIN_PER_CLASS else test
        seen[label] += 1
        split[0].append(pixels)
        split[1].append(label)
    write_idx(out / "train", *train)
    write_idx(out / "t10k", *test)
    print(f"train={len(train[1])} test={len(test[1])}")


if __name__ == "__main__":
    main()
