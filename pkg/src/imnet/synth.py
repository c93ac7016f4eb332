"""Procedural copy-move forgeries with exact ground truth.

A sample is built in three steps: a seeded procedural background, a random
source region (ellipse or star polygon), and a copy of that region pasted
at a non-overlapping location after an optional rotation / scale / blur.
JPEG re-compression, when enabled, hits the whole composite.

Coordinates are continuous (x, y) with pixel (row r, col c) covering
[c, c+1) x [r, r+1).  Masks are rasterised by 4x4 supersampling and kept
where coverage >= 0.5.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DatasetError, PlacementError, ValidationError

SUPERSAMPLE = 4
BASE_STREAM, FORGE_STREAM = 0, 1
ELLIPSE_POINTS = 128


@dataclass
class AttackConfig:
    """Sampling ranges for one forgery.  Degenerate ranges disable an attack."""

    area_range: tuple = (0.05, 0.20)
    rotation_range: tuple = (0.0, 0.0)
    scale_range: tuple = (1.0, 1.0)
    blur_range: tuple = (0.0, 0.0)
    jpeg_range: tuple | None = None
    max_retries: int = 20
    max_regenerations: int = 10

    @classmethod
    def with_attacks(cls, rotate=False, scale=False, blur=False, jpeg=False) -> "AttackConfig":
        return cls(
            rotation_range=(-30.0, 30.0) if rotate else (0.0, 0.0),
            scale_range=(0.8, 1.2) if scale else (1.0, 1.0),
            blur_range=(0.0, 1.5) if blur else (0.0, 0.0),
            jpeg_range=(70, 95) if jpeg else None,
        )

    def validate(self) -> "AttackConfig":
        def within(name, rng, lo, hi):
            a, b = rng
            if not lo <= a <= b <= hi:
                raise ValidationError(f"{name} {rng} must lie within [{lo}, {hi}]")

        within("area_range", self.area_range, 0.05, 0.20)
        within("rotation_range", self.rotation_range, -30.0, 30.0)
        within("scale_range", self.scale_range, 0.8, 1.2)
        within("blur_range", self.blur_range, 0.0, 1.5)
        if self.jpeg_range is not None:
            within("jpeg_range", self.jpeg_range, 70, 95)
        return self


@dataclass
class ForgerySample:
    image: np.ndarray  # S x S x 3 uint8
    truth: np.ndarray  # S x S uint8, 0 background / 1 source / 2 tampered
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# geometry


def _pixel_samples(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Supersample coordinates, shape (size, size, n*n) each."""
    off = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    base = np.arange(size)[:, None] + off[None, :]  # size x n
    xs = np.broadcast_to(base[None, :, None, :], (size, size, SUPERSAMPLE, SUPERSAMPLE))
    ys = np.broadcast_to(base[:, None, :, None], (size, size, SUPERSAMPLE, SUPERSAMPLE))
    n = SUPERSAMPLE * SUPERSAMPLE
    return xs.reshape(size, size, n), ys.reshape(size, size, n)


def _inside(shape: dict, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if shape["kind"] == "ellipse":
        ct, st = math.cos(math.radians(shape["angle"])), math.sin(math.radians(shape["angle"]))
        dx, dy = x - shape["cx"], y - shape["cy"]
        u = (dx * ct + dy * st) / shape["rx"]
        v = (-dx * st + dy * ct) / shape["ry"]
        return u * u + v * v <= 1.0
    if shape["kind"] in ("polygon", "triangle"):
        pts = np.asarray(shape["vertices"], dtype=np.float64)
        inside = np.zeros(x.shape, dtype=bool)
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xi)
        return inside
    if shape["kind"] == "rect":
        return (x >= shape["x0"]) & (x < shape["x1"]) & (y >= shape["y0"]) & (y < shape["y1"])
    raise ValueError(f"unknown shape kind {shape['kind']!r}")


def _boundary(shape: dict) -> np.ndarray:
    if shape["kind"] == "ellipse":
        t = np.linspace(0, 2 * np.pi, ELLIPSE_POINTS, endpoint=False)
        a = math.radians(shape["angle"])
        ex, ey = shape["rx"] * np.cos(t), shape["ry"] * np.sin(t)
        return np.stack([shape["cx"] + ex * math.cos(a) - ey * math.sin(a),
                         shape["cy"] + ex * math.sin(a) + ey * math.cos(a)], axis=1)
    return np.asarray(shape["vertices"], dtype=np.float64)


def shape_center(shape: dict) -> tuple[float, float]:
    if shape["kind"] == "ellipse":
        return shape["cx"], shape["cy"]
    c = np.asarray(shape["vertices"], dtype=np.float64).mean(axis=0)
    return float(c[0]), float(c[1])


class Transform:
    """Rotation + scale about ``center`` followed by a translation."""

    def __init__(self, center, rotation_degrees=0.0, scale=1.0, offset=(0, 0)):
        self.cx, self.cy = center
        self.a = math.radians(rotation_degrees)
        self.s = scale
        self.ox, self.oy = offset

    def forward(self, x, y):
        c, s = math.cos(self.a), math.sin(self.a)
        dx, dy = x - self.cx, y - self.cy
        return (self.cx + self.s * (c * dx - s * dy) + self.ox,
                self.cy + self.s * (s * dx + c * dy) + self.oy)

    def inverse(self, x, y):
        c, s = math.cos(self.a), math.sin(self.a)
        dx, dy = x - self.ox - self.cx, y - self.oy - self.cy
        return (self.cx + (c * dx + s * dy) / self.s,
                self.cy + (-s * dx + c * dy) / self.s)


def _coverage(inside: np.ndarray) -> np.ndarray:
    return inside.mean(axis=-1) >= 0.5


def render_region(shape: dict, size: int, transform: Transform | None = None) -> np.ndarray:
    xs, ys = _pixel_samples(size)
    if transform is not None:
        xs, ys = transform.inverse(xs, ys)
    return _coverage(_inside(shape, xs, ys))


def render_truth(provenance: dict, size: int) -> np.ndarray:
    """Re-rasterise the ground truth from a provenance record."""
    shape = provenance["source_shape"]
    t = Transform(shape_center(shape), provenance["rotation_degrees"], provenance["scale_factor"],
                  provenance["paste_offset"])
    truth = np.zeros((size, size), dtype=np.uint8)
    truth[render_region(shape, size)] = 1
    truth[render_region(shape, size, t)] = 2
    return truth


# ---------------------------------------------------------------------------
# backgrounds


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    grid = rng.uniform(0, 1, (cells + 1, cells + 1, 3))
    t = (np.arange(size) + 0.5) / size * cells
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    f = f * f * (3 - 2 * f)  # smoothstep
    gy0, gy1 = grid[i], grid[i + 1]
    rows = gy0 * (1 - f)[:, None, None] + gy1 * f[:, None, None]
    left, right = rows[:, i], rows[:, i + 1]
    return left * (1 - f)[None, :, None] + right * f[None, :, None]


def generate_base(seed: int, size: int) -> np.ndarray:
    """Seeded background: multi-octave value noise plus 3-8 solid shapes."""
    if not 32 <= size <= 256:
        raise ValidationError(f"image size must be in 32..256, got {size}")
    rng = np.random.default_rng([seed, BASE_STREAM])
    field_ = np.zeros((size, size, 3))
    amp, total = 1.0, 0.0
    for cells in (3, 6, 12, max(16, size // 4)):
        field_ += amp * _value_noise(rng, size, cells)
        total += amp
        amp *= 0.6
    img = field_ / total * 255

    xs, ys = _pixel_samples(size)
    for _ in range(int(rng.integers(3, 9))):
        kind = ("ellipse", "rect", "triangle")[int(rng.integers(3))]
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(0.06, 0.25) * size
        if kind == "ellipse":
            shape = {"kind": "ellipse", "cx": cx, "cy": cy, "rx": r, "ry": r * rng.uniform(0.4, 1.0),
                     "angle": rng.uniform(0, 180)}
        elif kind == "rect":
            w, h = r, r * rng.uniform(0.4, 1.6)
            shape = {"kind": "rect", "x0": cx - w, "x1": cx + w, "y0": cy - h, "y1": cy + h}
        else:
            ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2.1, 4.2]) + rng.uniform(-0.4, 0.4, 3)
            shape = {"kind": "triangle", "vertices": np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], 1)}
        color = rng.uniform(0, 255, 3)
        mask = _coverage(_inside(shape, xs, ys))
        img[mask] = color
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# forging


def _random_region(rng: np.random.Generator, size: int, area_range) -> dict:
    area = rng.uniform(*area_range) * size * size
    if rng.uniform() < 0.5:
        aspect = rng.uniform(0.5, 1.0)
        rx = math.sqrt(area / (math.pi * aspect))
        ry = rx * aspect
        shape = {"kind": "ellipse", "cx": 0.0, "cy": 0.0, "rx": rx, "ry": ry, "angle": float(rng.uniform(0, 180))}
    else:
        n = int(rng.integers(3, 8))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(0.6, 1.0, n)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], 1)
        x, y = pts[:, 0], pts[:, 1]
        unit_area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if unit_area < 0.2:
            # angles bunched together; fall back to a regular polygon
            ang = np.arange(n) * 2 * np.pi / n
            pts = np.stack([np.cos(ang), np.sin(ang)], 1)
            unit_area = 0.5 * n * math.sin(2 * math.pi / n)
        pts = pts * math.sqrt(area / unit_area)
        shape = {"kind": "polygon", "vertices": pts}
    # place fully inside the image
    b = _boundary(shape)
    lo, hi = b.min(axis=0), b.max(axis=0)
    if (hi - lo).max() >= size:
        return _random_region(rng, size, area_range)
    cx = rng.uniform(-lo[0], size - hi[0])
    cy = rng.uniform(-lo[1], size - hi[1])
    if shape["kind"] == "ellipse":
        shape["cx"], shape["cy"] = float(cx), float(cy)
    else:
        shape["vertices"] = [[float(px + cx), float(py + cy)] for px, py in shape["vertices"]]
    return shape


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at continuous coordinates (pixel centres at +0.5)."""
    H, W = img.shape[:2]
    u = np.clip(x - 0.5, 0, W - 1)
    v = np.clip(y - 0.5, 0, H - 1)
    x0 = np.minimum(np.floor(u).astype(int), W - 2)
    y0 = np.minimum(np.floor(v).astype(int), H - 2)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    src = img.astype(np.float64)
    return ((1 - fx) * (1 - fy) * src[y0, x0] + fx * (1 - fy) * src[y0, x0 + 1]
            + (1 - fx) * fy * src[y0 + 1, x0] + fx * fy * src[y0 + 1, x0 + 1])


def _jpeg(img: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


def forge(base: np.ndarray, attack: AttackConfig, seed: int) -> ForgerySample:
    """Copy a random region of ``base`` and paste a transformed copy elsewhere."""
    attack.validate()
    size = base.shape[0]
    if base.shape != (size, size, 3):
        raise ValidationError(f"base image must be square RGB, got {base.shape}")
    rng = np.random.default_rng([seed, FORGE_STREAM])
    rotation = float(rng.uniform(*attack.rotation_range))
    scale = float(rng.uniform(*attack.scale_range))
    blur = float(rng.uniform(*attack.blur_range))
    quality = None if attack.jpeg_range is None else int(rng.integers(attack.jpeg_range[0], attack.jpeg_range[1] + 1))

    for _ in range(attack.max_regenerations + 1):
        shape = _random_region(rng, size, attack.area_range)
        src_mask = render_region(shape, size)
        if not src_mask.any():
            continue
        center = shape_center(shape)
        moved = np.stack(Transform(center, rotation, scale).forward(*_boundary(shape).T), 1)
        lo, hi = moved.min(axis=0), moved.max(axis=0)
        dx_lo, dx_hi = math.ceil(-lo[0]), math.floor(size - hi[0])
        dy_lo, dy_hi = math.ceil(-lo[1]), math.floor(size - hi[1])
        if dx_lo > dx_hi or dy_lo > dy_hi:
            continue
        for _ in range(attack.max_retries):
            offset = (int(rng.integers(dx_lo, dx_hi + 1)), int(rng.integers(dy_lo, dy_hi + 1)))
            t = Transform(center, rotation, scale, offset)
            dst_mask = render_region(shape, size, t)
            if dst_mask.any() and not (dst_mask & src_mask).any():
                break
        else:
            continue
        break
    else:
        raise PlacementError(f"seed {seed}: no non-overlapping placement after "
                             f"{attack.max_regenerations} regenerations x {attack.max_retries} retries")

    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    warped = _bilinear(base, *t.inverse(xs, ys))
    if blur > 0:
        warped = gaussian_filter(warped, sigma=(blur, blur, 0), mode="nearest")
    image = base.copy()
    image[dst_mask] = np.clip(np.rint(warped[dst_mask]), 0, 255).astype(np.uint8)
    if quality is not None:
        image = _jpeg(image, quality)

    truth = np.zeros((size, size), dtype=np.uint8)
    truth[src_mask] = 1
    truth[dst_mask] = 2
    provenance = {
        "seed": int(seed),
        "source_shape": _plain(shape),
        "paste_offset": [int(offset[0]), int(offset[1])],
        "rotation_degrees": rotation,
        "scale_factor": scale,
        "blur_sigma": blur,
        "jpeg_quality": quality,
    }
    return ForgerySample(image, truth, provenance)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def make_sample(seed: int, size: int = 64, attack: AttackConfig | None = None) -> ForgerySample:
    return forge(generate_base(seed, size), attack or AttackConfig(), seed)


def sample_seed(dataset_seed: int, index: int) -> int:
    return dataset_seed * 1_000_003 + index


def generate(count: int, size: int = 64, seed: int = 0, attack: AttackConfig | None = None) -> list[ForgerySample]:
    return [make_sample(sample_seed(seed, i), size, attack) for i in range(count)]


def forged_fraction(sample: ForgerySample) -> float:
    return float((sample.truth > 0).mean())


# ---------------------------------------------------------------------------
# dataset directory layout


def write_dataset(out_dir, samples) -> None:
    from .head import labels_to_gray

    root = Path(out_dir)
    for sub in ("images", "masks", "provenance"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        stem = f"{i:05d}"
        Image.fromarray(s.image, mode="RGB").save(root / "images" / f"{stem}.png")
        Image.fromarray(labels_to_gray(s.truth), mode="L").save(root / "masks" / f"{stem}.png")
        (root / "provenance" / f"{stem}.json").write_text(
            json.dumps(s.provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from None


def read_dataset(data_dir) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Load ``(id, image, labels)`` triples; masks are required."""
    from .head import gray_to_labels

    root = Path(data_dir)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"{root}: expected images/ and masks/ subdirectories")
    items = []
    for img_path in sorted(img_dir.glob("*.png")):
        mask_path = mask_dir / img_path.name
        if not mask_path.exists():
            raise DatasetError(f"{img_path}: missing mask {mask_path}")
        image = read_image(img_path)
        try:
            with Image.open(mask_path) as im:
                gray = np.asarray(im.convert("L"))
            labels = gray_to_labels(gray)
        except (OSError, ValidationError) as exc:
            raise DatasetError(f"{mask_path}: {exc}") from None
        if labels.shape != image.shape[:2]:
            raise DatasetError(f"{mask_path}: mask {labels.shape} does not match image {image.shape[:2]}")
        items.append((img_path.stem, image, labels))
    if not items:
        raise DatasetError(f"{img_dir}: no PNG images found")
    return items
