"""Regenerates the bundled 16-image corpus in data/corpus/.

Photographic sources are the public-domain / CC0 sample images shipped with
scikit-image; synthetic images are drawn with a fixed seed.
"""
import os

import numpy as np
from skimage import data
from skimage.transform import resize

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "corpus")

TRAIN = ["astronaut", "rocket", "hubble_deep_field", "immunohistochemistry",
         "retina", "brick", "grass", "gravel", "coins", "moon"]
VAL = ["coffee", "chelsea", "camera"]


def square(img, size):
    h, w = img.shape[:2]
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    img = img[y0:y0 + s, x0:x0 + s].astype(np.float64) / 255.0
    out = resize(img, (size, size) + img.shape[2:], order=1, anti_aliasing=True)
    return np.clip(np.round(out * 255.0), 0, 255).astype(np.uint8)


def write(name, img):
    if img.ndim == 2:
        path = os.path.join(OUT, name + ".pgm")
        header = b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0])
    else:
        path = os.path.join(OUT, name + ".ppm")
        header = b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0])
    with open(path, "wb") as f:
        f.write(header + img.tobytes())
    return os.path.basename(path)


def rings(size, rng):
    y, x = np.mgrid[0:size, 0:size] / size
    r = np.hypot(x - 0.45, y - 0.55)
    chans = [0.5 + 0.5 * np.sin(2 * np.pi * (f * r + p))
             for f, p in zip(rng.uniform(3, 9, 3), rng.uniform(0, 1, 3))]
    return np.stack(chans, axis=-1)


def blocks(size, rng):
    img = np.zeros((size, size, 3)) + rng.uniform(0.2, 0.8, 3)
    y, x = np.mgrid[0:size, 0:size] / size
    for _ in range(24):
        x0, y0 = rng.integers(0, size - 16, 2)
        w, h = rng.integers(12, size // 2, 2)
        base = rng.uniform(0, 1, 3)
        grad = rng.uniform(-0.4, 0.4, 3)
        patch = base + grad * x[y0:y0 + h, x0:x0 + w, None]
        img[y0:y0 + h, x0:x0 + w] = patch[: img[y0:y0 + h, x0:x0 + w].shape[0], : img[y0:y0 + h, x0:x0 + w].shape[1]]
    return img


def shapes(size, rng):
    y, x = np.mgrid[0:size, 0:size] / size
    img = np.stack([0.3 + 0.4 * x, 0.5 + 0.2 * y, 0.6 - 0.3 * x * y], axis=-1)
    for _ in range(10):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        rad = rng.uniform(0.05, 0.25)
        mask = 1.0 / (1.0 + np.exp((np.hypot(x - cx, y - cy) - rad) * size / 1.5))
        img = img * (1 - mask[..., None]) + rng.uniform(0, 1, 3) * mask[..., None]
    return img


def to_u8(img):
    return np.clip(np.round(np.clip(img, 0, 1) * 255.0), 0, 255).astype(np.uint8)


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(20240917)
    rows = []
    for name in TRAIN:
        rows.append((write(name, square(getattr(data, name)(), 192)), "train"))
    rows.append((write("synth_rings", to_u8(rings(192, rng))), "train"))
    rows.append((write("synth_blocks", to_u8(blocks(192, rng))), "train"))
    for name in VAL:
        rows.append((write(name, square(getattr(data, name)(), 128)), "val"))
    rows.append((write("synth_shapes", to_u8(shapes(128, rng))), "val"))
    with open(os.path.join(OUT, "manifest.csv"), "w") as f:
        f.write("path,split\n")
        for path, split in rows:
            f.write(f"{path},{split}\n")


if __name__ == "__main__":
    main()
