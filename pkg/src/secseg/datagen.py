"""Seeded synthetic shapes dataset with simulated localization heat maps.

Each image shows one to three coloured shapes (square, circle, triangle) on
a textured gray background.  Every sample has its label set, a ground-truth
mask for evaluation, one Gaussian heat bump per present class placed on the
shape, and a saliency map measuring colour distance from the background.
"""

import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .cues import UNLABELED
from .formats import (FormatError, image_to_bytes, read_json, read_pgm, read_ppm,
                      read_tensor, write_json, write_pgm, write_ppm, write_tensor)

log = logging.getLogger(__name__)

SHAPES = ("square", "circle", "triangle")
MAX_REGENERATIONS = 100


def _default_palette():
    return (
        (0.5, 0.5, 0.5),     # background gray
        (0.85, 0.25, 0.2),   # square, reddish
        (0.2, 0.75, 0.25),   # circle, greenish
        (0.2, 0.3, 0.85),    # triangle, bluish
    )


@dataclass(frozen=True)
class SynthConfig:
    size: int = 32
    palette: tuple = field(default_factory=_default_palette)
    min_shapes: int = 1
    max_shapes: int = 3
    min_radius: float = 5.0
    max_radius: float = 9.0
    color_jitter: float = 0.05
    noise: float = 0.05
    texture: float = 0.1
    texture_sigma: float = 2.0
    heatmap_sigma: float = 1.5
    min_visible: float = 0.3
    max_retries: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.palette) < 2 or len(self.palette) - 1 > len(SHAPES):
            raise ValueError(f"palette needs background plus 1..{len(SHAPES)} classes")
        if not 1 <= self.min_shapes <= self.max_shapes <= len(self.palette) - 1:
            raise ValueError("shape counts out of range")
        if 2 * self.max_radius + 2 > self.size:
            raise ValueError("shapes do not fit inside the image")
        colors = [np.asarray(c) for c in self.palette]
        if self.texture < 0 or self.texture_sigma <= 0:
            raise ValueError("texture amplitude must be >= 0 and texture_sigma > 0")
        # worst-case deviation: background gets texture, shapes get jitter, both get noise
        spread = [self.noise + self.texture] + [self.noise + self.color_jitter] * (len(colors) - 1)
        for i in range(len(colors)):
            for j in range(i + 1, len(colors)):
                if np.max(np.abs(colors[i] - colors[j])) <= spread[i] + spread[j]:
                    raise ValueError(f"palette colours {i} and {j} are not separable under "
                                     f"jitter, noise and texture")

    @property
    def classes(self):
        return len(self.palette)

    def to_dict(self):
        d = asdict(self)
        d["palette"] = [list(c) for c in self.palette]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "palette" in d:
            d["palette"] = tuple(tuple(c) for c in d["palette"])
        return cls(**d)


@dataclass
class SynthSample:
    image: np.ndarray
    labels: frozenset
    gt_mask: np.ndarray
    heatmaps: dict
    saliency: np.ndarray


def shape_mask(kind, cy, cx, r, size):
    """Boolean raster of a square, circle or triangle of radius ``r``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "circle":
        return dy ** 2 + dx ** 2 <= r ** 2
    if kind == "triangle":
        # upward equilateral triangle inscribed in radius r (edge offset r/2 from centre)
        inside = np.ones_like(dy, dtype=bool)
        for ang in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3):
            # outward normal of the edge opposite the vertex at `ang`
            nx, ny = -np.cos(ang), np.sin(ang)
            inside &= nx * dx + ny * dy <= r / 2
        return inside
    raise ValueError(f"unknown shape {kind!r}")


def _heat_peak(region):
    ys, xs = np.nonzero(region)
    cy, cx = ys.mean(), xs.mean()
    # snap the visible centroid onto the nearest visible pixel
    j = np.argmin((ys - cy) ** 2 + (xs - cx) ** 2)
    return ys[j], xs[j]


def _gaussian_bump(size, cy, cx, sigma):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))


def _texture(config, rng):
    """Smooth luminance field with peak amplitude ``config.texture``."""
    field = rng.standard_normal((config.size, config.size))
    if config.texture == 0:
        return np.zeros_like(field)
    field = gaussian_filter(field, config.texture_sigma, mode="wrap")
    return config.texture * field / np.max(np.abs(field))


def _place(config, rng):
    size = config.size
    n_shapes = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    classes = rng.choice(np.arange(1, config.classes), size=n_shapes, replace=False)
    mask = np.zeros((size, size), dtype=np.int64)
    drawn = []
    for c in classes:
        r = rng.uniform(config.min_radius, config.max_radius)
        lo, hi = r + 1, size - 2 - r
        cy, cx = rng.uniform(lo, hi), rng.uniform(lo, hi)
        region = shape_mask(SHAPES[c - 1], cy, cx, r, size)
        mask[region] = c
        drawn.append((int(c), region))
    for c, region in drawn:
        if (mask == c).sum() < config.min_visible * region.sum():
            return None
    return mask, drawn


def generate_one(config, rng):
    size = config.size
    for attempt in range(config.max_retries):
        placed = _place(config, rng)
        if placed is not None:
            break
    else:
        return None, config.max_retries
    mask, drawn = placed
    palette = np.asarray(config.palette, dtype=np.float64)
    image = np.empty((size, size, 3))
    image[:] = palette[0] + _texture(config, rng)[..., None]
    for c, _ in drawn:
        color = np.clip(palette[c] + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0, 1)
        image[mask == c] = color
    image += rng.uniform(-config.noise, config.noise, image.shape)
    image = np.clip(image, 0.0, 1.0)

    heatmaps = {}
    for c, _ in drawn:
        py, px = _heat_peak(mask == c)
        heatmaps[c] = _gaussian_bump(size, py, px, config.heatmap_sigma)
    saliency = np.linalg.norm(image - palette[0], axis=-1)
    labels = frozenset(int(c) for c in np.unique(mask) if c != 0)
    return SynthSample(image, labels, mask, heatmaps, saliency), attempt


def generate(config, count):
    """``count`` samples, deterministic in ``config.rng_seed``.

    Sample ``i`` draws from its own stream keyed by ``(rng_seed, i)``, so
    samples can be produced in any order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    samples = []
    regenerated = 0
    for i in range(count):
        ss = np.random.SeedSequence([config.rng_seed, i])
        sample = None
        for _ in range(MAX_REGENERATIONS):
            sample, _ = generate_one(config, np.random.default_rng(ss))
            if sample is not None:
                break
            regenerated += 1
            ss = ss.spawn(1)[0]
        else:
            raise ValueError(f"could not place shapes for sample {i}; the config looks unsatisfiable")
        samples.append(sample)
    if regenerated:
        log.info("regenerated %d samples after failed placement", regenerated)
    return samples


def export(samples, directory):
    """Write samples to ``directory`` and return the manifest dict."""
    root = Path(directory)
    for sub in ("images", "masks", "heat", "sal"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        stem = f"{i:04d}"
        entry = {
            "id": stem,
            "labels": sorted(s.labels),
            "image": f"images/{stem}.ppm",
            "mask": f"masks/{stem}.pgm",
            "saliency": f"sal/{stem}.sect",
            "heatmaps": {},
        }
        write_ppm(root / entry["image"], s.image)
        write_pgm(root / entry["mask"], s.gt_mask)
        write_tensor(root / entry["saliency"], s.saliency)
        for c in sorted(s.heatmaps):
            rel = f"heat/{stem}_c{c}.sect"
            write_tensor(root / rel, s.heatmaps[c])
            entry["heatmaps"][str(c)] = rel
        entries.append(entry)
    classes = int(max((max(s.labels) for s in samples if s.labels), default=0)) + 1
    manifest = {"format": "secseg-dataset", "version": 1, "count": len(entries),
                "classes": classes, "samples": entries}
    write_json(root / "manifest.json", manifest)
    return manifest


def load(directory):
    """Read an exported dataset back into ``SynthSample`` objects.

    Raises ``FormatError`` naming the offending file on any inconsistency.
    """
    root = Path(directory)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FormatError(mpath, "manifest not found")
    manifest = read_json(mpath)
    try:
        entries = manifest["samples"]
    except (KeyError, TypeError):
        raise FormatError(mpath, "manifest lacks a samples list") from None
    if manifest.get("count") != len(entries):
        raise FormatError(mpath, "sample count does not match the listed samples")
    samples = []
    for entry in entries:
        try:
            paths = [entry["image"], entry["mask"], entry["saliency"], *entry["heatmaps"].values()]
            labels = frozenset(int(c) for c in entry["labels"])
        except (KeyError, TypeError, ValueError, AttributeError):
            raise FormatError(mpath, f"malformed entry {entry!r}") from None
        for p in paths:
            if not (root / p).is_file():
                raise FormatError(root / p, "listed file is missing")
        image = read_ppm(root / entry["image"])
        mask = read_pgm(root / entry["mask"]).astype(np.int64)
        saliency = read_tensor(root / entry["saliency"]).astype(np.float64)
        heat = {int(c): read_tensor(root / p).astype(np.float64) for c, p in entry["heatmaps"].items()}
        if set(heat) != labels:
            raise FormatError(root / entry["image"], "heatmaps do not cover exactly the labelled classes")
        for p, arr in [(entry["mask"], mask), (entry["saliency"], saliency),
                       *((entry["heatmaps"][str(c)], h) for c, h in heat.items())]:
            if arr.shape != image.shape[:2]:
                raise FormatError(root / p, f"shape {arr.shape} does not match image {image.shape[:2]}")
        samples.append(SynthSample(image, labels, mask, heat, saliency))
    return samples


def quantize(image):
    """The image as it survives an 8-bit PPM round trip."""
    return image_to_bytes(image).astype(np.float64) / 255.0


def foreground_fraction(samples):
    total = sum(s.gt_mask.size for s in samples)
    return sum(int((s.gt_mask != 0).sum()) for s in samples) / total


def check_cue_labels(cues, labels):
    allowed = {0, UNLABELED, *labels}
    return set(np.unique(cues).tolist()) <= allowed
