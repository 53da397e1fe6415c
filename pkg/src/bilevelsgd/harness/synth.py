"""Deterministic synthetic datasets for desk-scale experiments.

Image task: each class is a smooth random prototype pattern; an example is
prototype plus per-example pixel noise, quantized to uint8 and written as
an IDX pair. The per-example noise is what makes label memorization
possible, so plain SGD can overfit corrupted labels while the signal stays
easy to learn.

Tabular task: the classic interleaved half-moons, quantized to the CSV
pixel schema (two columns in 0..255).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

IMAGE_SIDE = 16
IMAGE_CLASSES = 10


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    header = (0x00000803).to_bytes(4, "big") + b"".join(
        int(v).to_bytes(4, "big") for v in (n, h, w)
    )
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    header = (0x00000801).to_bytes(4, "big") + int(labels.size).to_bytes(4, "big")
    Path(path).write_bytes(header + labels.tobytes())


def _smooth_field(rng: np.random.Generator, side: int, passes: int = 2,
                  width: int = 5) -> np.ndarray:
    pad = passes * (width // 2)
    f = rng.standard_normal((side + 2 * pad, side + 2 * pad))
    kernel = np.ones(width) / width
    for _ in range(passes):
        f = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 0, f)
        f = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, f)
    f = f[pad : pad + side, pad : pad + side]
    return (f - f.mean()) / (f.std() + 1e-12)


def _render_split(rng, prototypes, count, class_count, signal, noise):
    per_class = count // class_count
    if per_class * class_count != count:
        raise ValueError(f"example count {count} must divide evenly into {class_count} classes")
    labels = np.repeat(np.arange(class_count), per_class)
    values = 0.5 + signal * prototypes[labels] + noise * rng.standard_normal(
        (count,) + prototypes.shape[1:]
    )
    images = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    order = rng.permutation(count)
    return images[order], labels[order].astype(np.uint8)


def generate_image_dataset(
    out_dir,
    train_count: int = 10000,
    test_count: int = 2000,
    class_count: int = IMAGE_CLASSES,
    side: int = IMAGE_SIDE,
    seed: int = 0,
    signal: float = 0.10,
    noise: float = 0.40,
) -> tuple[str, str]:
    """Write train/test IDX pairs under out_dir; returns the two path prefixes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 100])
    prototypes = np.stack([_smooth_field(rng, side) for _ in range(class_count)])
    train_images, train_labels = _render_split(
        rng, prototypes, train_count, class_count, signal, noise
    )
    test_images, test_labels = _render_split(
        rng, prototypes, test_count, class_count, signal, noise
    )
    train_prefix = out_dir / "train"
    test_prefix = out_dir / "test"
    write_idx_images(f"{train_prefix}-images-idx3-ubyte", train_images)
    write_idx_labels(f"{train_prefix}-labels-idx1-ubyte", train_labels)
    write_idx_images(f"{test_prefix}-images-idx3-ubyte", test_images)
    write_idx_labels(f"{test_prefix}-labels-idx1-ubyte", test_labels)
    return str(train_prefix), str(test_prefix)


def _moons(rng: np.random.Generator, count: int, noise: float):
    half = count // 2
    t = rng.uniform(0.0, np.pi, size=half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    t2 = rng.uniform(0.0, np.pi, size=count - half)
    lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
    xy = np.concatenate([upper, lower]) + noise * rng.standard_normal((count, 2))
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(count - half, dtype=int)])
    order = rng.permutation(count)
    return xy[order], labels[order]


def generate_moons_csv(
    out_dir, train_count: int = 800, test_count: int = 200,
    noise: float = 0.1, seed: int = 0,
) -> tuple[str, str]:
    """Write two-moons train/test CSVs (label,p0,p1 with values 0..255)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 200])
    paths = []
    for name, count in (("moons-train.csv", train_count), ("moons-test.csv", test_count)):
        xy, labels = _moons(rng, count, noise)
        # fixed bounds so train and test share the same quantization
        scaled = np.clip((xy - (-1.5)) / 4.0 * 255.0, 0, 255).round().astype(int)
        path = out_dir / name
        with path.open("w") as fh:
            fh.write("label,p0,p1\n")
            for lab, (a, b) in zip(labels, scaled):
                fh.write(f"{lab},{a},{b}\n")
        paths.append(str(path))
    return paths[0], paths[1]
