"""Shared value types: keypoints, poses, limbs, instances and augmentation config.

Joint order is the 17-keypoint COCO convention::

    0 nose        5 l_shoulder   9 l_wrist    13 l_knee
    1 l_eye       6 r_shoulder  10 r_wrist    14 r_knee
    2 r_eye       7 l_elbow     11 l_hip      15 l_ankle
    3 l_ear       8 r_elbow     12 r_hip      16 r_ankle
    4 r_ear

All array-backed types freeze their buffers, so instances can be shared
between workers without copying defensively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

NUM_JOINTS = 17

JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# COCO skeleton, 1-based as in the annotation files.
COCO_SKELETON = (
    (16, 14), (14, 12), (17, 15), (15, 13), (12, 13), (6, 12), (7, 13),
    (6, 7), (6, 8), (7, 9), (8, 10), (9, 11), (2, 3), (1, 2), (1, 3),
    (2, 4), (3, 5), (4, 6), (5, 7),
)

COCO_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)


class Visibility(IntEnum):
    NOT_LABELED = 0
    LABELED_OCCLUDED = 1
    LABELED_VISIBLE = 2


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    vis: Visibility = Visibility.LABELED_VISIBLE

    def __post_init__(self):
        object.__setattr__(self, "vis", Visibility(int(self.vis)))
        if self.vis != Visibility.NOT_LABELED and not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError("labeled keypoint must have finite coordinates")


@dataclass(frozen=True, eq=False)
class Pose:
    """J keypoints in image pixels.

    ``coords`` has shape (J, 2); ``vis`` has shape (J,) with COCO flags.
    Unlabeled joints are stored as (0, 0).
    """

    coords: np.ndarray
    vis: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        vis = np.asarray(self.vis, dtype=np.int64)
        if coords.shape != (NUM_JOINTS, 2) or vis.shape != (NUM_JOINTS,):
            raise ValidationError(f"pose needs exactly {NUM_JOINTS} joints, got coords {coords.shape}, vis {vis.shape}")
        if np.any((vis < 0) | (vis > 2)):
            raise ValidationError("visibility flags must be in {0, 1, 2}")
        coords = np.where((vis == 0)[:, None], 0.0, coords)
        if not np.all(np.isfinite(coords)):
            raise ValidationError("labeled keypoints must have finite coordinates")
        object.__setattr__(self, "coords", _frozen(coords, np.float64))
        object.__setattr__(self, "vis", _frozen(vis, np.int8))

    @classmethod
    def from_keypoints(cls, keypoints: Sequence[Keypoint]) -> Pose:
        return cls([(k.x, k.y) for k in keypoints], [int(k.vis) for k in keypoints])

    @classmethod
    def from_coco(cls, flat: Sequence[float]) -> Pose:
        arr = np.asarray(flat, dtype=np.float64)
        if arr.shape != (3 * NUM_JOINTS,):
            raise ValidationError(f"expected {3 * NUM_JOINTS} keypoint numbers, got {arr.size}")
        arr = arr.reshape(NUM_JOINTS, 3)
        return cls(arr[:, :2], arr[:, 2].round().astype(np.int64))

    def to_coco(self) -> list:
        out = []
        for (x, y), v in zip(self.coords.tolist(), self.vis.tolist()):
            out.extend((x, y, int(v)))
        return out

    @property
    def labeled(self) -> np.ndarray:
        return self.vis > 0

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.vis))

    def keypoint(self, j: int) -> Keypoint:
        x, y = self.coords[j]
        return Keypoint(float(x), float(y), Visibility(int(self.vis[j])))

    def __iter__(self):
        return (self.keypoint(j) for j in range(NUM_JOINTS))

    def __len__(self):
        return NUM_JOINTS

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.coords, other.coords) and np.array_equal(self.vis, other.vis)

    def __hash__(self):
        return hash((self.coords.tobytes(), self.vis.tobytes()))


@dataclass(frozen=True, eq=False)
class NormalizedPose:
    """Pose in unit crop space; every coordinate lies in [0, 1]."""

    coords: np.ndarray
    vis: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        vis = np.asarray(self.vis, dtype=np.int64)
        if coords.shape != (NUM_JOINTS, 2) or vis.shape != (NUM_JOINTS,):
            raise ValidationError("normalized pose needs (J, 2) coords and (J,) flags")
        if not np.all(np.isfinite(coords)) or coords.min() < 0.0 or coords.max() > 1.0:
            raise ValidationError("normalized coordinates must lie in [0, 1]")
        object.__setattr__(self, "coords", _frozen(coords, np.float64))
        object.__setattr__(self, "vis", _frozen(vis, np.int8))

    def as_vector(self) -> np.ndarray:
        """Flat (x0, y0, x1, y1, ...) feature vector of length 2J."""
        return self.coords.reshape(-1).copy()

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.vis))

    def __eq__(self, other):
        if not isinstance(other, NormalizedPose):
            return NotImplemented
        return np.array_equal(self.coords, other.coords) and np.array_equal(self.vis, other.vis)

    def __hash__(self):
        return hash((self.coords.tobytes(), self.vis.tobytes()))


@dataclass(frozen=True)
class Limb:
    id: int
    name: str
    src_joint: int
    dst_joint: int
    parent: int | None
    part_labels: frozenset = frozenset()


# Ids double as the fixed draw order and the overdraw order:
# upper segments before lower ones, left before right.
_LIMB_ROWS = (
    (0, "left_upper_arm", 5, 7, None),
    (1, "right_upper_arm", 6, 8, None),
    (2, "left_upper_leg", 11, 13, None),
    (3, "right_upper_leg", 12, 14, None),
    (4, "left_lower_arm", 7, 9, 0),
    (5, "right_lower_arm", 8, 10, 1),
    (6, "left_lower_leg", 13, 15, 2),
    (7, "right_lower_leg", 14, 16, 3),
)
NUM_LIMBS = len(_LIMB_ROWS)

# Parsing label per limb (hands/feet travel with the lower segment).
# 13 and 14 are torso and head; they never move.
DEFAULT_LIMB_LABELS: dict[int, frozenset] = {
    0: frozenset({9}),
    1: frozenset({10}),
    2: frozenset({6}),
    3: frozenset({5}),
    4: frozenset({11, 2}),
    5: frozenset({12, 1}),
    6: frozenset({8, 3}),
    7: frozenset({7, 4}),
}
TORSO_LABEL = 13
HEAD_LABEL = 14
MAX_PART_LABEL = 14


def make_limbs(mapping: Mapping[int, Sequence[int]] | None = None) -> tuple[Limb, ...]:
    """Build the limb table, attaching parsing labels from ``mapping``."""
    mapping = DEFAULT_LIMB_LABELS if mapping is None else mapping
    limbs = []
    for lid, name, src, dst, parent in _LIMB_ROWS:
        if lid not in mapping:
            raise ValidationError(f"limb label mapping has no entry for limb {lid} ({name})")
        labels = frozenset(int(v) for v in mapping[lid])
        if not labels:
            raise ValidationError(f"limb {lid} ({name}) maps to an empty label set")
        if any(v < 1 or v > MAX_PART_LABEL for v in labels):
            raise ValidationError(f"limb {lid} labels must be in 1..{MAX_PART_LABEL}")
        limbs.append(Limb(lid, name, src, dst, parent, labels))
    return tuple(limbs)


LIMBS = make_limbs()


@dataclass(frozen=True)
class LimbTransform:
    scale: float = 1.0
    rotation: float = 0.0  # radians

    def __post_init__(self):
        if not (math.isfinite(self.scale) and math.isfinite(self.rotation)):
            raise ValidationError("limb transform parameters must be finite")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "rotation": self.rotation}

    @classmethod
    def from_dict(cls, d: Mapping) -> LimbTransform:
        return cls(float(d["scale"]), float(d["rotation"]))


@dataclass(frozen=True)
class PersonInstance:
    image_id: int
    instance_id: int
    bbox: tuple  # (x, y, w, h)
    pose: Pose
    area: float
    mask_ref: str | None = None

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4:
            raise ValidationError("bbox must be (x, y, w, h)")
        object.__setattr__(self, "bbox", bbox)


@dataclass(frozen=True)
class AugConfig:
    """Knobs of the limb transformation and candidate pool.

    Angles are radians here; ``from_dict`` also accepts ``*_deg`` keys.
    ``scale_std``/``rotation_std`` of ``None`` mean a quarter of the range.
    """

    per_limb_prob: float = 0.5
    scale_range: tuple = (0.75, 1.25)
    rotation_range: tuple = (math.radians(-35.0), math.radians(35.0))
    scale_std: float | None = None
    rotation_std: float | None = None
    pool_size: int = 5
    plausibility_threshold: float = 0.7
    n_components: int = 20
    rng_seed: int = 0
    max_pool_attempts: int = 50

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        object.__setattr__(self, "rotation_range", tuple(float(v) for v in self.rotation_range))
        if not 0.0 <= self.per_limb_prob <= 1.0:
            raise ValidationError("per_limb_prob must be in [0, 1]")
        s_lo, s_hi = self.scale_range
        r_lo, r_hi = self.rotation_range
        if not (0.0 < s_lo <= s_hi):
            raise ValidationError("scale_range must be positive and ordered")
        if not r_lo <= r_hi:
            raise ValidationError("rotation_range must be ordered")
        if self.pool_size < 1:
            raise ValidationError("pool_size must be >= 1")
        if not 0.0 <= self.plausibility_threshold <= 1.0:
            raise ValidationError("plausibility_threshold must be in [0, 1]")
        if self.n_components < 1:
            raise ValidationError("n_components must be >= 1")
        if self.max_pool_attempts < 1:
            raise ValidationError("max_pool_attempts must be >= 1")
        for name in ("scale_std", "rotation_std"):
            v = getattr(self, name)
            if v is not None and (v < 0 or not math.isfinite(v)):
                raise ValidationError(f"{name} must be a finite non-negative number")

    @property
    def sigma_scale(self) -> float:
        lo, hi = self.scale_range
        return (hi - lo) / 4.0 if self.scale_std is None else float(self.scale_std)

    @property
    def sigma_rotation(self) -> float:
        lo, hi = self.rotation_range
        return (hi - lo) / 4.0 if self.rotation_std is None else float(self.rotation_std)

    def widened(self, scale_range=(0.4, 1.8), rotation_range_deg=(-120.0, 120.0)) -> AugConfig:
        """Copy with wide ranges and default stds, used to synthesize implausible poses."""
        return replace(
            self,
            scale_range=scale_range,
            rotation_range=tuple(math.radians(v) for v in rotation_range_deg),
            scale_std=None,
            rotation_std=None,
        )

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["scale_range"] = list(self.scale_range)
        out["rotation_range"] = list(self.rotation_range)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> AugConfig:
        d = dict(d)
        if "rotation_range_deg" in d:
            d["rotation_range"] = tuple(math.radians(v) for v in d.pop("rotation_range_deg"))
        if "rotation_std_deg" in d:
            v = d.pop("rotation_std_deg")
            d["rotation_std"] = None if v is None else math.radians(v)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown augmentation config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    width: int
    height: int


@dataclass
class CategoryInfo:
    keypoints: tuple = JOINT_NAMES
    skeleton: tuple = COCO_SKELETON
    sigmas: tuple = COCO_SIGMAS
    id: int = 1
    name: str = "person"
    extra: dict = field(default_factory=dict)
