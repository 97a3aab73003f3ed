"""Importance hierarchies over semantic classes and their tri-state matrices.

Classes are partitioned into ordered importance groups, rank 1 (least
important) through rank G (most important).  For a G-group hierarchy there
are G-1 tri-state matrices; matrix ``t`` assigns, per group rank ``r``:

    r < t  ->  DONT_CARE       (excluded from the dynamic weight)
    r = t  ->  ZERO
    r > t  ->  ONE

Label maps, rank maps and tri-state maps are plain integer numpy arrays of
identical shape.  Rank maps use 1-based ranks with 0 reserved for ignored
pixels; tri-state maps hold ``CellValue`` codes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "CellValue",
    "ClassDef",
    "HierarchyError",
    "ImportanceHierarchy",
    "MatrixSpec",
    "build_matrix_specs",
    "rasterize_matrix",
    "group_rank_map",
    "parse_hierarchy",
    "serialize_hierarchy",
    "hierarchy_to_dict",
    "hierarchy_from_dict",
    "camvid_hierarchy",
    "cityscapes_hierarchy",
]


class CellValue(IntEnum):
    """Tri-state cell of an importance matrix."""

    ZERO = 0
    ONE = 1
    DONT_CARE = 2


@dataclass(frozen=True)
class ClassDef:
    """A semantic class: dense integer id plus a human-readable name."""

    id: int
    name: str


class HierarchyError(ValueError):
    """Raised for invalid hierarchy definitions or label maps."""


@dataclass(frozen=True)
class ImportanceHierarchy:
    """Ordered partition of class ids into importance groups.

    ``groups[0]`` is the least important group (rank 1), ``groups[-1]`` the
    most important (rank G).  Immutable after construction; validation
    happens up front so downstream code can index without checks.
    """

    classes: tuple[ClassDef, ...]
    groups: tuple[tuple[int, ...], ...]
    ignore_id: int | None = None

    def __post_init__(self) -> None:
        ids = [c.id for c in self.classes]
        if not ids:
            raise HierarchyError("class table is empty")
        seen: set[int] = set()
        for i in ids:
            if i in seen:
                raise HierarchyError(f"duplicate class id {i}")
            seen.add(i)
        if seen != set(range(len(ids))):
            raise HierarchyError(
                f"class ids must be exactly 0..{len(ids) - 1}, got {sorted(seen)}"
            )
        if not self.groups:
            raise HierarchyError("at least one group required")
        assigned: dict[int, int] = {}
        for g, members in enumerate(self.groups):
            if not members:
                raise HierarchyError(f"group {g + 1} is empty")
            for i in members:
                if i not in seen:
                    raise HierarchyError(f"group {g + 1} references unknown class id {i}")
                if i in assigned:
                    raise HierarchyError(f"class {i} assigned to more than one group")
                assigned[i] = g
        for i in sorted(seen - set(assigned)):
            raise HierarchyError(f"class {i} unassigned")
        if self.ignore_id is not None and self.ignore_id in seen:
            raise HierarchyError(f"ignore id {self.ignore_id} collides with a class id")
        # normalize group member order so equality and serialization are stable
        object.__setattr__(
            self, "groups", tuple(tuple(sorted(g)) for g in self.groups)
        )
        object.__setattr__(self, "classes", tuple(sorted(self.classes, key=lambda c: c.id)))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @cached_property
    def class_ranks(self) -> np.ndarray:
        """1-based group rank per class id, shape (num_classes,)."""
        ranks = np.zeros(self.num_classes, dtype=np.int8)
        for g, members in enumerate(self.groups):
            for i in members:
                ranks[i] = g + 1
        return ranks

    def rank_of(self, class_id: int) -> int:
        return int(self.class_ranks[class_id])

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id].name


@dataclass(frozen=True)
class MatrixSpec:
    """Group-level cell assignment of importance matrix ``t`` (1-based)."""

    index: int
    cells: Mapping[int, CellValue] = field(hash=False)

    def cell(self, rank: int) -> CellValue:
        return self.cells[rank]


def build_matrix_specs(hierarchy: ImportanceHierarchy) -> list[MatrixSpec]:
    """Construct matrix specs M_1 .. M_{G-1} by the rank rule.

    Raises:
        HierarchyError: for a single-group hierarchy, which has no matrices
            (plain weighted cross-entropy applies there).
    """
    G = hierarchy.num_groups
    if G < 2:
        raise HierarchyError("no matrices for single-group hierarchy")
    specs = []
    for t in range(1, G):
        cells = {}
        for r in range(1, G + 1):
            if r < t:
                cells[r] = CellValue.DONT_CARE
            elif r == t:
                cells[r] = CellValue.ZERO
            else:
                cells[r] = CellValue.ONE
        specs.append(MatrixSpec(index=t, cells=cells))
    return specs


def group_rank_map(hierarchy: ImportanceHierarchy, labels: np.ndarray) -> np.ndarray:
    """Per-pixel group rank (1-based) of the ground-truth class.

    Ignored pixels map to rank 0.  Any other id outside the class table is
    rejected with its position.
    """
    labels = np.asarray(labels)
    C = hierarchy.num_classes
    valid = (labels >= 0) & (labels < C)
    if hierarchy.ignore_id is not None:
        ignored = labels == hierarchy.ignore_id
    else:
        ignored = np.zeros_like(valid)
    bad = ~(valid | ignored)
    if bad.any():
        pos = tuple(int(k) for k in np.argwhere(bad)[0])
        raise HierarchyError(f"unknown class id {int(labels[pos])} at {pos}")
    safe = np.where(valid, labels, 0)
    ranks = hierarchy.class_ranks[safe]
    return np.where(ignored, np.int8(0), ranks)


def rasterize_matrix(
    spec: MatrixSpec, hierarchy: ImportanceHierarchy, labels: np.ndarray
) -> np.ndarray:
    """Per-pixel ``CellValue`` codes of matrix ``spec`` under a label map.

    Pixel (i, j) carries the spec cell of the rank of the class at (i, j).
    Ignored pixels rasterize to DONT_CARE, which keeps them out of every
    dynamic-weight sum.
    """
    ranks = group_rank_map(hierarchy, labels)
    G = hierarchy.num_groups
    lut = np.empty(G + 1, dtype=np.int8)
    lut[0] = CellValue.DONT_CARE
    for r in range(1, G + 1):
        lut[r] = spec.cell(r)
    return lut[ranks]


def hierarchy_to_dict(hierarchy: ImportanceHierarchy) -> dict:
    """JSON-ready form: classes, groups (least important first), ignore id."""
    return {
        "classes": [{"id": c.id, "name": c.name} for c in hierarchy.classes],
        "groups": [list(g) for g in hierarchy.groups],
        "ignore_id": hierarchy.ignore_id,
    }


def serialize_hierarchy(hierarchy: ImportanceHierarchy) -> str:
    """JSON text for a hierarchy; least important group first."""
    return json.dumps(hierarchy_to_dict(hierarchy), indent=2) + "\n"


def hierarchy_from_dict(doc: dict) -> ImportanceHierarchy:
    try:
        classes = tuple(
            ClassDef(id=int(c["id"]), name=str(c["name"])) for c in doc["classes"]
        )
        groups = tuple(tuple(int(i) for i in g) for g in doc["groups"])
    except (KeyError, TypeError) as exc:
        raise HierarchyError(f"malformed hierarchy config: {exc}") from exc
    ignore = doc.get("ignore_id")
    return ImportanceHierarchy(
        classes=classes,
        groups=groups,
        ignore_id=None if ignore is None else int(ignore),
    )


def parse_hierarchy(config_text: str) -> ImportanceHierarchy:
    """Parse the JSON hierarchy config; inverse of :func:`serialize_hierarchy`."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise HierarchyError(f"hierarchy config is not valid JSON: {exc}") from exc
    return hierarchy_from_dict(doc)


def camvid_hierarchy() -> ImportanceHierarchy:
    """The 11-class street-scene hierarchy used throughout the demos."""
    names = [
        "sky", "building", "pole", "road", "sidewalk", "tree",
        "sign", "fence", "car", "pedestrian", "bicyclist",
    ]
    classes = tuple(ClassDef(i, n) for i, n in enumerate(names))
    groups = (
        (0, 1, 5),          # sky, building, tree
        (2, 3, 4, 7),       # pole, road, sidewalk, fence
        (6, 8, 9, 10),      # sign, car, pedestrian, bicyclist
    )
    return ImportanceHierarchy(classes=classes, groups=groups)


def cityscapes_hierarchy() -> ImportanceHierarchy:
    """The 19-class urban hierarchy with a void label excluded from scoring."""
    names = [
        "road", "sidewalk", "building", "wall", "fence", "pole",
        "traffic_light", "traffic_sign", "vegetation", "terrain", "sky",
        "pedestrian", "rider", "car", "truck", "bus", "train",
        "motorcycle", "bicycle",
    ]
    classes = tuple(ClassDef(i, n) for i, n in enumerate(names))
    groups = (
        (0, 2, 3, 8, 9, 10),            # road, building, wall, vegetation, terrain, sky
        (1, 4, 5, 11, 13),              # sidewalk, fence, pole, pedestrian, car
        (6, 7, 12, 14, 15, 16, 17, 18), # lights, signs, riders, heavy and two-wheeled traffic
    )
    return ImportanceHierarchy(classes=classes, groups=groups, ignore_id=255)
