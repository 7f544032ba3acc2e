#!/usr/bin/env python3
"""Build the bundled datasets under data/.

UCI copies are taken from the KEEL / imbalanced-databases redistributions
and a 5000-image MNIST subset from mlxtend, all fetched as wheels from the
package index. Output:

  data/wine.csv data/sonar.csv data/glass.csv data/wdbc.csv data/segment.csv
      numeric features, class label in the last column, no header
  data/mnist5k/images-idx3-ubyte.gz data/mnist5k/labels-idx1-ubyte.gz
      IDX files (gzip-compressed)
"""
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "data"

WHEELS = {
    "keel-ds": "keel_ds",
    "imbalanced-databases": "imbalanced_databases",
    "mlxtend": "mlxtend",
}


def fetch(tmp):
    paths = {}
    for pkg, prefix in WHEELS.items():
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, pkg],
            check=True,
        )
        (wheel,) = pathlib.Path(tmp).glob(prefix + "-*.whl")
        paths[pkg] = zipfile.ZipFile(wheel)
    return paths


def keel_to_rows(text):
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([c.strip() for c in line.split(",")])
    return rows


def write_csv(name, rows):
    with open(OUT / name, "w") as f:
        for r in rows:
            f.write(",".join(r) + "\n")
    print(f"{name}: {len(rows)} rows x {len(rows[0]) - 1} features")


def main():
    OUT.mkdir(exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheels = fetch(tmp)
        keel = wheels["keel-ds"]
        for name in ["wine", "sonar", "wdbc", "segment"]:
            text = keel.read(f"keel_ds/data/balanced/raw/{name}.dat").decode()
            rows = keel_to_rows(text)
            if name == "wine":
                # KEEL puts the class first for wine
                if not _is_last_label(rows):
                    rows = [r[1:] + r[:1] for r in rows]
            write_csv(f"{name}.csv", rows)

        glass = wheels["imbalanced-databases"].read(
            "imbalanced_databases/data/glass/glass.data.txt"
        ).decode()
        rows = [l.split(",")[1:] for l in glass.split() if l.strip()]
        write_csv("glass.csv", rows)

        raw = wheels["mlxtend"].read("mlxtend/data/data/mnist_5k.csv.gz")
        lines = gzip.decompress(raw).decode().split()
        images, labels = [], []
        for l in lines:
            v = [int(float(t)) for t in l.split(",")]
            images.append(bytes(v[:-1]))
            labels.append(v[-1])
        mdir = OUT / "mnist5k"
        mdir.mkdir(exist_ok=True)
        n = len(images)
        with gzip.GzipFile(mdir / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
            for img in images:
                f.write(img)
        with gzip.GzipFile(mdir / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x00000801, n))
            f.write(bytes(labels))
        print(f"mnist5k: {n} images")


def _is_last_label(rows):
    # wine classes are the integers 1..3
    return all(r[-1] in ("1", "2", "3") for r in rows)


if __name__ == "__main__":
    main()
