#!/usr/bin/env python3
"""Materialize the datasets used by the test and acceptance suites.

* MNIST: the 10,000 digits bundled with the `mnist` npm package are written
  as standard IDX files (8,000 train / 2,000 validation, stratified by digit).
* Natural images: the grayscale-convertible photographs that ship with
  scikit-image and scikit-learn are written as binary PGM (P5) files for the
  16x16 patch pipeline.

Usage: prepare_data.py [--out DATA_DIR] [--npm-package DIR]
"""
import argparse
import json
import os
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def fetch_npm_mnist(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = [f for f in os.listdir(workdir) if f.endswith(".tgz")][0]
    with tarfile.open(os.path.join(workdir, tgz)) as tar:
        tar.extractall(workdir)
    return os.path.join(workdir, "package")


def build_mnist(pkg_dir, out_dir, train_fraction=0.8):
    train_x, train_y, val_x, val_y = [], [], [], []
    for digit in range(10):
        with open(os.path.join(pkg_dir, "src", "digits", f"{digit}.json")) as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        imgs = np.rint(flat.reshape(-1, 784) * 255.0).clip(0, 255)
        n_train = int(round(train_fraction * len(imgs)))
        train_x.append(imgs[:n_train])
        train_y.append(np.full(n_train, digit))
        val_x.append(imgs[n_train:])
        val_y.append(np.full(len(imgs) - n_train, digit))

    rng = np.random.default_rng(20240601)
    for name, xs, ys in (("train", train_x, train_y), ("t10k", val_x, val_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(len(x))
        os.makedirs(out_dir, exist_ok=True)
        write_idx_images(os.path.join(out_dir, f"{name}-images-idx3-ubyte"), x[perm])
        write_idx_labels(os.path.join(out_dir, f"{name}-labels-idx1-ubyte"), y[perm])
        print(f"mnist {name}: {len(x)} samples")


def build_images(out_dir):
    import skimage.data
    import skimage.color
    from sklearn.datasets import load_sample_images

    os.makedirs(out_dir, exist_ok=True)
    names = ["camera", "astronaut", "coffee", "chelsea", "grass", "gravel",
             "brick", "moon", "rocket", "hubble_deep_field", "coins"]
    images = {}
    for name in names:
        try:
            img = getattr(skimage.data, name)()
        except Exception as exc:  # pragma: no cover - depends on the install
            print(f"skip {name}: {exc}", file=sys.stderr)
            continue
        images[name] = img
    for i, img in enumerate(load_sample_images().images):
        images[f"sklearn_{i}"] = img

    for name, img in images.items():
        if img.ndim == 3:
            img = skimage.color.rgb2gray(img[..., :3]) * 255.0
        elif img.dtype == bool:
            img = img.astype(np.float64) * 255.0
        g = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        with open(os.path.join(out_dir, f"{name}.pgm"), "wb") as f:
            f.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
            f.write(g.tobytes())
        print(f"image {name}: {g.shape[1]}x{g.shape[0]}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=os.environ.get(
        "PVAE_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "data")))
    parser.add_argument("--npm-package", help="already-extracted mnist npm package")
    args = parser.parse_args()

    out = os.path.abspath(args.out)
    if args.npm_package:
        build_mnist(args.npm_package, os.path.join(out, "mnist"))
    else:
        tmp = tempfile.mkdtemp()
        try:
            build_mnist(fetch_npm_mnist(tmp), os.path.join(out, "mnist"))
        finally:
            shutil.rmtree(tmp)
    build_images(os.path.join(out, "images"))


if __name__ == "__main__":
    main()
