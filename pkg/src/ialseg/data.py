"""Procedural street scenes with a built-in importance structure.

Scenes are layered horizontal bands (sky, building, vegetation, fence,
sidewalk, road) with a handful of small rare objects (signs, cars,
pedestrians) painted on top.  Band classes dominate the pixel count and
the object classes stay rare, so the group frequencies fall off from the
least to the most important group, which is exactly the imbalance the
importance-aware loss is aimed at.

Every sample is a pure function of (config.seed, config.stream, index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .hierarchy import ClassDef, ImportanceHierarchy, hierarchy_from_dict, hierarchy_to_dict
from .netpbm import image_to_unit, load_pgm, load_ppm, save_pgm, save_ppm

__all__ = [
    "SCENE_CLASSES",
    "scene_hierarchy",
    "SceneConfig",
    "Sample",
    "Dataset",
    "generate_scene",
    "make_dataset",
    "write_dataset",
    "load_dataset",
    "batch_indices",
    "batches",
]

SCENE_CLASSES = (
    "sky", "building", "vegetation",
    "road", "sidewalk", "fence",
    "sign", "car", "pedestrian",
)

# mean color per class, RGB in [0,1]
_CLASS_COLORS = np.array([
    [0.53, 0.77, 0.92],   # sky
    [0.55, 0.50, 0.47],   # building
    [0.18, 0.45, 0.20],   # vegetation
    [0.25, 0.25, 0.27],   # road
    [0.62, 0.60, 0.58],   # sidewalk
    [0.50, 0.35, 0.20],   # fence
    [0.95, 0.80, 0.10],   # sign
    [0.70, 0.10, 0.12],   # car
    [0.15, 0.20, 0.70],   # pedestrian
])

SKY, BUILDING, VEGETATION, ROAD, SIDEWALK, FENCE, SIGN, CAR, PEDESTRIAN = range(9)


def scene_hierarchy() -> ImportanceHierarchy:
    """Nine classes in three importance groups of three."""
    classes = tuple(ClassDef(i, name) for i, name in enumerate(SCENE_CLASSES))
    return ImportanceHierarchy(
        classes=classes,
        groups=(
            (SKY, BUILDING, VEGETATION),
            (ROAD, SIDEWALK, FENCE),
            (SIGN, CAR, PEDESTRIAN),
        ),
    )


@dataclass(frozen=True)
class SceneConfig:
    """Scene layout knobs.

    ``band_fractions`` are target row fractions for (sky, building,
    vegetation, fence, sidewalk); the road takes the remaining rows.
    Each boundary is jittered by up to ``band_jitter`` per scene.
    """

    height: int = 64
    width: int = 128
    band_fractions: tuple[float, ...] = (0.30, 0.22, 0.10, 0.04, 0.12)
    band_jitter: float = 0.03
    objects_min: int = 2
    objects_max: int = 6
    object_min_size: int = 3
    object_max_size: int = 10
    noise: float = 0.04
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("scenes must be at least 16x16")
        if len(self.band_fractions) != 5:
            raise ValueError("band_fractions must give 5 values (road is the remainder)")
        total = sum(self.band_fractions)
        if not 0 < total < 0.95:
            raise ValueError("band fractions must leave room for the road band")
        if any(f <= 0 for f in self.band_fractions):
            raise ValueError("band fractions must be positive")
        if self.objects_min < 0 or self.objects_max < self.objects_min:
            raise ValueError("invalid object count range")
        if self.object_min_size < 1 or self.object_max_size < self.object_min_size:
            raise ValueError("invalid object size range")
        if self.object_max_size >= min(self.height, self.width) // 2:
            raise ValueError("objects must stay smaller than half the scene")
        if self.noise < 0:
            raise ValueError("noise amplitude must be non-negative")

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "band_fractions": list(self.band_fractions),
            "band_jitter": self.band_jitter,
            "objects_min": self.objects_min,
            "objects_max": self.objects_max,
            "object_min_size": self.object_min_size,
            "object_max_size": self.object_max_size,
            "noise": self.noise,
            "seed": self.seed,
            "stream": self.stream,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        kw = dict(d)
        if "band_fractions" in kw:
            kw["band_fractions"] = tuple(kw["band_fractions"])
        return cls(**kw)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray   # HxWx3 float32 in [0,1]
    labels: np.ndarray  # HxW int32


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # NxHxWx3 float32
    labels: np.ndarray  # NxHxW int32
    hierarchy: ImportanceHierarchy
    meta: dict

    def __len__(self) -> int:
        return self.images.shape[0]


def _band_rows(config: SceneConfig, rng) -> list[tuple[int, int, int]]:
    """(class, row_start, row_end) for the six horizontal bands."""
    H = config.height
    jitter = rng.uniform(-config.band_jitter, config.band_jitter, size=5)
    fracs = np.asarray(config.band_fractions) + jitter
    fracs = np.clip(fracs, 0.01, None)
    edges = np.concatenate([[0.0], np.cumsum(fracs)])
    rows = np.minimum((edges * H).astype(int), H - 1)
    order = (SKY, BUILDING, VEGETATION, FENCE, SIDEWALK)
    bands = []
    for cls, r0, r1 in zip(order, rows[:-1], rows[1:]):
        bands.append((cls, int(r0), int(r1)))
    bands.append((ROAD, int(rows[-1]), H))
    return bands


def _paint_object(labels, rng, cls, r0, r1, size_lo, size_hi):
    """Place one rectangle or ellipse of class cls with its center row
    inside [r0, r1)."""
    H, W = labels.shape
    h = int(rng.integers(size_lo, size_hi + 1))
    w = int(rng.integers(size_lo, size_hi + 1))
    if cls == PEDESTRIAN:
        w = max(2, w // 2)  # taller than wide
    cy = int(rng.integers(r0, max(r0 + 1, r1)))
    cx = int(rng.integers(0, W))
    use_ellipse = bool(rng.integers(0, 2))
    y0, y1 = max(0, cy - h // 2), min(H, cy + (h + 1) // 2)
    x0, x1 = max(0, cx - w // 2), min(W, cx + (w + 1) // 2)
    if y0 >= y1 or x0 >= x1:
        return
    if use_ellipse:
        yy, xx = np.mgrid[y0:y1, x0:x1]
        ry = max((y1 - y0) / 2.0, 0.5)
        rx = max((x1 - x0) / 2.0, 0.5)
        mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0
        region = labels[y0:y1, x0:x1]
        region[mask] = cls
    else:
        labels[y0:y1, x0:x1] = cls


def generate_scene(config: SceneConfig, index: int) -> Sample:
    """Deterministic scene number ``index`` of the configured stream."""
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, config.stream, index])
    )
    H, W = config.height, config.width
    labels = np.empty((H, W), dtype=np.int32)
    bands = _band_rows(config, rng)
    for cls, r0, r1 in bands:
        labels[r0:r1] = cls
    band_rows = {cls: (r0, r1) for cls, r0, r1 in bands}

    shade = np.zeros((H, W, 3))
    n_objects = int(rng.integers(config.objects_min, config.objects_max + 1))
    for _ in range(n_objects):
        cls = int(rng.choice((SIGN, CAR, PEDESTRIAN)))
        if cls == CAR:
            r0, r1 = band_rows[ROAD]
        elif cls == PEDESTRIAN:
            r0, r1 = band_rows[SIDEWALK]
        else:
            r0, r1 = band_rows[BUILDING]
        before = labels.copy()
        _paint_object(labels, rng, cls, r0, r1,
                      config.object_min_size, config.object_max_size)
        tint = rng.uniform(-0.08, 0.08, size=3)
        shade[labels != before] = tint

    image = _CLASS_COLORS[labels] + shade
    if config.noise > 0:
        image = image + rng.normal(0.0, config.noise, size=(H, W, 3))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image=image, labels=labels)


def make_dataset(config: SceneConfig, count: int) -> Dataset:
    """Generate ``count`` scenes directly into memory."""
    if count < 1:
        raise ValueError("dataset needs at least one sample")
    samples = [generate_scene(config, k) for k in range(count)]
    return Dataset(
        images=np.stack([s.image for s in samples]),
        labels=np.stack([s.labels for s in samples]),
        hierarchy=scene_hierarchy(),
        meta={"count": count, "config": config.to_dict()},
    )


def write_dataset(out_dir, config: SceneConfig, count: int) -> Path:
    """Generate ``count`` scenes into out_dir/{images,labels} plus meta.json."""
    if count < 1:
        raise ValueError("dataset needs at least one sample")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    hier = scene_hierarchy()
    for k in range(count):
        sample = generate_scene(config, k)
        save_ppm(out / "images" / f"{k:05d}.ppm", sample.image)
        save_pgm(out / "labels" / f"{k:05d}.pgm", sample.labels)
    meta = {
        "count": count,
        "height": config.height,
        "width": config.width,
        "seed": config.seed,
        "hierarchy": hierarchy_to_dict(hier),
        "config": config.to_dict(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by write_dataset (or hand-laid-out
    PPM/PGM pairs with a compatible meta.json)."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{root}: no meta.json")
    meta = json.loads(meta_path.read_text())
    hier = hierarchy_from_dict(meta["hierarchy"])
    image_files = sorted((root / "images").glob("*.ppm"))
    label_files = sorted((root / "labels").glob("*.pgm"))
    if not image_files:
        raise FileNotFoundError(f"{root}: no images")
    if [p.stem for p in image_files] != [p.stem for p in label_files]:
        raise ValueError(f"{root}: image/label file names do not pair up")
    if "count" in meta and meta["count"] != len(image_files):
        raise ValueError(
            f"{root}: meta.json says {meta['count']} samples, found {len(image_files)}"
        )
    images = np.stack([image_to_unit(load_ppm(p)) for p in image_files])
    labels = np.stack([load_pgm(p).astype(np.int32) for p in label_files])
    valid = {c.id for c in hier.classes}
    if hier.ignore_id is not None:
        valid.add(hier.ignore_id)
    present = set(np.unique(labels).tolist())
    unknown = present - valid
    if unknown:
        raise ValueError(f"{root}: label ids {sorted(unknown)} not in the class table")
    return Dataset(images=images, labels=labels, hierarchy=hier, meta=meta)


def batch_indices(count: int, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Shuffled index batches; the permutation is a pure function of
    epoch_seed.  The final short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(epoch_seed))
    perm = rng.permutation(count)
    return [perm[i : i + batch_size] for i in range(0, count, batch_size)]


def batches(dataset: Dataset, batch_size: int, epoch_seed):
    """Yield (images, labels) arrays per shuffled batch."""
    for idx in batch_indices(len(dataset), batch_size, epoch_seed):
        yield dataset.images[idx], dataset.labels[idx]
