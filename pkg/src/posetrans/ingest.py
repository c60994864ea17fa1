"""COCO keypoint annotations, parsing masks, and pose normalization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DegenerateBox,
    DimensionMismatch,
    LabelOutOfRange,
    MalformedFile,
    SchemaError,
    ValidationError,
)
from .types import (
    COCO_SIGMAS,
    DEFAULT_LIMB_LABELS,
    LIMBS,
    MAX_PART_LABEL,
    NUM_JOINTS,
    CategoryInfo,
    ImageInfo,
    Limb,
    NormalizedPose,
    PersonInstance,
    Pose,
)

log = logging.getLogger(__name__)

# Crop-center fill for unlabeled joints in the clustering feature vector.
MISSING_FILL = 0.5
# Poses with fewer labeled joints do not enter GMM fitting.
MIN_LABELED_FOR_FIT = 6


@dataclass
class Dataset:
    images: list[ImageInfo]
    instances: list[PersonInstance]
    category: CategoryInfo = field(default_factory=CategoryInfo)
    dropped: list[int] = field(default_factory=list)

    @property
    def drop_count(self) -> int:
        return len(self.dropped)

    @property
    def sigmas(self) -> np.ndarray:
        return np.asarray(self.category.sigmas, dtype=np.float64)

    def image(self, image_id: int) -> ImageInfo:
        return self._image_index[image_id]

    def __post_init__(self):
        self._image_index = {im.id: im for im in self.images}
        for inst in self.instances:
            if inst.image_id not in self._image_index:
                raise SchemaError(f"image id {inst.image_id} is not listed", inst.instance_id)
        if len(self.category.sigmas) != NUM_JOINTS:
            raise SchemaError(f"need {NUM_JOINTS} OKS sigmas, got {len(self.category.sigmas)}")


def _num(v, what, ann_id):
    try:
        return float(v)
    except (TypeError, ValueError):
        raise SchemaError(f"non-numeric {what}", ann_id) from None


def parse_coco(doc: Mapping) -> Dataset:
    if not isinstance(doc, Mapping):
        raise MalformedFile("COCO document must be a JSON object")
    for key in ("images", "annotations"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(f"missing '{key}' list")

    images = []
    for im in doc["images"]:
        try:
            images.append(ImageInfo(int(im["id"]), str(im.get("file_name", "")),
                                    int(im.get("width", 0)), int(im.get("height", 0))))
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"bad image record {im!r}") from None

    category = CategoryInfo()
    cats = doc.get("categories") or []
    if cats:
        c0 = cats[0]
        sigmas = c0.get("sigmas", COCO_SIGMAS)
        category = CategoryInfo(
            keypoints=tuple(c0.get("keypoints", category.keypoints)),
            skeleton=tuple(tuple(e) for e in c0.get("skeleton", category.skeleton)),
            sigmas=tuple(float(s) for s in sigmas),
            id=int(c0.get("id", 1)),
            name=str(c0.get("name", "person")),
        )

    instances, dropped = [], []
    for ann in doc["annotations"]:
        ann_id = ann.get("id")
        if ann_id is None:
            raise SchemaError("annotation without id")
        for key in ("keypoints", "bbox", "image_id"):
            if key not in ann:
                raise SchemaError(f"missing '{key}'", ann_id)
        kps = ann["keypoints"]
        if not isinstance(kps, list) or len(kps) != 3 * NUM_JOINTS:
            raise SchemaError(f"'keypoints' must hold {3 * NUM_JOINTS} numbers", ann_id)
        bbox = ann["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise SchemaError("'bbox' must be [x, y, w, h]", ann_id)
        bbox = tuple(_num(v, "bbox", ann_id) for v in bbox)
        try:
            pose = Pose.from_coco([_num(v, "keypoint", ann_id) for v in kps])
        except ValidationError as e:
            raise SchemaError(str(e), ann_id) from None
        if pose.num_labeled == 0:
            dropped.append(int(ann_id))
            continue
        area = _num(ann["area"], "area", ann_id) if "area" in ann else bbox[2] * bbox[3]
        instances.append(PersonInstance(int(ann["image_id"]), int(ann_id), bbox, pose, area))

    instances.sort(key=lambda inst: inst.instance_id)
    dropped.sort()
    if dropped:
        log.info("dropped %d annotations without labeled keypoints", len(dropped))
    return Dataset(images, instances, category, dropped)


def load_coco_annotations(path) -> Dataset:
    """Load a COCO keypoint file, dropping annotations with no labeled joints."""
    path = Path(path)
    try:
        with path.open() as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: {e}") from None
    return parse_coco(doc)


def dataset_to_coco(dataset: Dataset, annotations: Sequence[Mapping] | None = None) -> dict:
    """Serialize back to a COCO document (instances are re-emitted as annotations)."""
    if annotations is None:
        annotations = [instance_to_annotation(inst) for inst in dataset.instances]
    cat = dataset.category
    return {
        "images": [
            {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}
            for im in dataset.images
        ],
        "annotations": list(annotations),
        "categories": [{
            "id": cat.id,
            "name": cat.name,
            "supercategory": "person",
            "keypoints": list(cat.keypoints),
            "skeleton": [list(e) for e in cat.skeleton],
            "sigmas": list(cat.sigmas),
        }],
    }


def instance_to_annotation(inst: PersonInstance, category_id: int = 1) -> dict:
    return {
        "id": inst.instance_id,
        "image_id": inst.image_id,
        "category_id": category_id,
        "bbox": list(inst.bbox),
        "area": inst.area,
        "iscrowd": 0,
        "num_keypoints": inst.pose.num_labeled,
        "keypoints": inst.pose.to_coco(),
    }


@dataclass(frozen=True, eq=False)
class ParsingMask:
    """Per-pixel part labels: 0 background, 1..14 body parts."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionMismatch(f"parsing mask must be 2-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > MAX_PART_LABEL):
            raise LabelOutOfRange(f"labels must be in [0, {MAX_PART_LABEL}], max is {labels.max()}")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def part_region(self, label: int) -> np.ndarray:
        return self.labels == label


def mask_filename(image_id: int, instance_id: int) -> str:
    return f"{image_id}_{instance_id}.png"


def load_parsing_mask(path, expected_dims: tuple[int, int] | None = None) -> ParsingMask:
    """Read an 8-bit single-channel PNG of part labels.

    ``expected_dims`` is (height, width).
    """
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise MalformedFile(f"{path}: parsing mask must be 8-bit single channel, got mode {im.mode}")
            labels = np.array(im, dtype=np.uint8)
    except OSError as e:
        raise MalformedFile(f"{path}: {e}") from None
    if expected_dims is not None and labels.shape != tuple(expected_dims):
        raise DimensionMismatch(f"{path}: mask is {labels.shape}, expected {tuple(expected_dims)}")
    if labels.size and labels.max() > MAX_PART_LABEL:
        raise LabelOutOfRange(f"{path}: label {labels.max()} > {MAX_PART_LABEL}")
    return ParsingMask(labels)


def save_parsing_mask(path, mask: ParsingMask | np.ndarray) -> None:
    labels = mask.labels if isinstance(mask, ParsingMask) else np.asarray(mask, dtype=np.uint8)
    Image.fromarray(labels, mode="L").save(path)


def load_limb_mapping(path) -> dict[int, frozenset]:
    """Read ``{"<limb id>": [labels...], ...}`` (limb names are accepted as keys too)."""
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, Mapping):
        raise MalformedFile(f"{path}: limb mapping must be a JSON object")
    by_name = {limb.name: limb.id for limb in LIMBS}
    out = {}
    for key, labels in raw.items():
        lid = by_name[key] if key in by_name else int(key)
        out[lid] = frozenset(int(v) for v in labels)
    missing = set(DEFAULT_LIMB_LABELS) - set(out)
    if missing:
        raise SchemaError(f"limb mapping lacks limbs {sorted(missing)}")
    return out


def crop_and_normalize(instance: PersonInstance) -> NormalizedPose:
    """Map keypoints into the unit square spanned by the annotation bbox.

    Labeled joints become ((x - bx) / bw, (y - by) / bh) clamped to [0, 1];
    unlabeled joints are filled with the crop center.
    """
    return normalize_pose(instance.pose, instance.bbox)


def normalize_pose(pose: Pose, bbox) -> NormalizedPose:
    bx, by, bw, bh = bbox
    if not (bw > 0 and bh > 0):
        raise DegenerateBox(f"bbox {tuple(bbox)} has non-positive size")
    xy = (pose.coords - np.array([bx, by])) / np.array([bw, bh])
    xy = np.clip(xy, 0.0, 1.0)
    xy[~pose.labeled] = MISSING_FILL
    return NormalizedPose(xy, pose.vis)


def limb_region(mask: ParsingMask, limb: Limb, mapping: Mapping[int, Sequence[int]] | None = None) -> np.ndarray:
    """Boolean pixels whose label belongs to ``limb`` (possibly empty)."""
    labels = limb.part_labels if mapping is None else mapping[limb.id]
    if not labels:
        raise ValidationError(f"limb {limb.id} has no parsing labels")
    return np.isin(mask.labels, sorted(labels))
