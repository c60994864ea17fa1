"""Stick-figure datasets with parsing masks, for experiments and tests.

Figures come from a few pose archetypes with continuous joint-angle
variation; each is rendered on a smooth random background together with a
parsing mask using the default limb label table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .ingest import load_coco_annotations, mask_filename, normalize_pose, save_parsing_mask
from .pcm import predict_labels
from .types import COCO_SIGMAS, COCO_SKELETON, HEAD_LABEL, JOINT_NAMES, NUM_JOINTS, TORSO_LABEL, Pose

# Angles in degrees, measured from "straight down", positive = away from the body midline.
# Each entry: (upper arm, elbow bend, upper leg, knee bend, hip drop as fraction of leg length)
ARCHETYPES = {
    "stand": dict(arm=(5, 20), elbow=(0, 20), leg=(2, 10), knee=(0, 10), drop=(0.0, 0.05)),
    "squat": dict(arm=(60, 90), elbow=(0, 25), leg=(65, 85), knee=(-95, -75), drop=(0.35, 0.45)),
    "arms_up": dict(arm=(150, 170), elbow=(0, 25), leg=(5, 20), knee=(0, 10), drop=(0.0, 0.05)),
}
ARCHETYPE_NAMES = tuple(ARCHETYPES)

LIMB_DRAW = (
    # (src joint, dst joint, label, radius)
    (5, 7, 9, 2.0), (6, 8, 10, 2.0), (11, 13, 6, 2.5), (12, 14, 5, 2.5),
    (7, 9, 11, 1.8), (8, 10, 12, 1.8), (13, 15, 8, 2.0), (14, 16, 7, 2.0),
)
HAND_FOOT = ((9, 2), (10, 1), (15, 3), (16, 4))


def _u(rng, lo_hi):
    return float(rng.uniform(*lo_hi))


def _dir(deg: float, side: int) -> np.ndarray:
    # down is +y; side=-1 mirrors to the figure's right (image left)
    t = math.radians(deg)
    return np.array([side * math.sin(t), math.cos(t)])


def stick_figure(archetype: str, rng: np.random.Generator, size: int = 64, jitter: float = 0.6) -> np.ndarray:
    """(17, 2) joint coordinates for one figure centred in a ``size`` square."""
    p = ARCHETYPES[archetype]
    s = size / 64.0 * float(rng.uniform(0.9, 1.05))
    torso, shoulder_w, hip_w = 14 * s, 6 * s, 4 * s
    upper_arm, lower_arm, upper_leg, lower_leg = 8 * s, 7 * s, 10 * s, 9 * s
    drop = _u(rng, p["drop"]) * (upper_leg + lower_leg)
    hip_c = np.array([size / 2 + rng.normal(0, 1.0), size * 0.56 + drop + rng.normal(0, 1.0)])
    neck = hip_c + np.array([rng.normal(0, 0.8), -torso])
    j = np.zeros((NUM_JOINTS, 2))
    # left side of the person is image right (+x)
    for side, sh, hp in ((+1, 5, 11), (-1, 6, 12)):
        j[sh] = neck + np.array([side * shoulder_w, 0.0])
        j[hp] = hip_c + np.array([side * hip_w, 0.0])
    j[0] = neck + np.array([0.0, -5 * s])
    j[1], j[2] = j[0] + np.array([1.5 * s, -1.2 * s]), j[0] + np.array([-1.5 * s, -1.2 * s])
    j[3], j[4] = j[0] + np.array([3.0 * s, -0.5 * s]), j[0] + np.array([-3.0 * s, -0.5 * s])
    for side, (sh, el, wr, hp, kn, an) in ((+1, (5, 7, 9, 11, 13, 15)), (-1, (6, 8, 10, 12, 14, 16))):
        a = _u(rng, p["arm"])
        j[el] = j[sh] + upper_arm * _dir(a, side)
        j[wr] = j[el] + lower_arm * _dir(a + _u(rng, p["elbow"]), side)
        leg = _u(rng, p["leg"])
        j[kn] = j[hp] + upper_leg * _dir(leg, side)
        j[an] = j[kn] + lower_leg * _dir(leg + _u(rng, p["knee"]), side)
    j += rng.normal(0.0, jitter, size=j.shape)
    return np.clip(j, 1.0, size - 2.0)


def _capsule(gx, gy, a, b, r):
    ab = b - a
    denom = float(ab @ ab) or 1.0
    t = np.clip(((gx - a[0]) * ab[0] + (gy - a[1]) * ab[1]) / denom, 0.0, 1.0)
    dx = gx - (a[0] + t * ab[0])
    dy = gy - (a[1] + t * ab[1])
    return dx * dx + dy * dy <= r * r


def render_figure(joints: np.ndarray, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a figure; returns (RGB uint8 image, uint8 parsing labels)."""
    gy, gx = np.mgrid[0:size, 0:size].astype(np.float64)
    c0, c1 = rng.uniform(40, 215, size=3), rng.uniform(40, 215, size=3)
    t = (gx / size)[..., None]
    img = (1 - t) * c0 + t * c1 + rng.normal(0, 2.0, size=(size, size, 3))
    labels = np.zeros((size, size), dtype=np.uint8)
    skin = rng.uniform(120, 230, size=3)
    cloth = rng.uniform(20, 200, size=3)

    torso_poly = [joints[5], joints[6], joints[12], joints[11]]
    mid_top = 0.5 * (joints[5] + joints[6])
    mid_bot = 0.5 * (joints[11] + joints[12])
    width = 0.5 * max(np.linalg.norm(joints[5] - joints[6]), np.linalg.norm(joints[11] - joints[12]))
    torso = _capsule(gx, gy, mid_top, mid_bot, width)
    for a, b in zip(torso_poly, torso_poly[1:] + torso_poly[:1]):
        torso |= _capsule(gx, gy, a, b, 1.5)
    labels[torso] = TORSO_LABEL
    img[torso] = cloth
    head = _capsule(gx, gy, joints[0], joints[0], 3.5 * size / 64)
    labels[head] = HEAD_LABEL
    img[head] = skin

    for k, (a, b, lab, r) in enumerate(LIMB_DRAW):
        region = _capsule(gx, gy, joints[a], joints[b], r * size / 64)
        labels[region] = lab
        shade = cloth * (0.8 + 0.1 * (k % 4)) if k < 4 else skin * (0.85 + 0.05 * (k % 4))
        img[region] = shade
    for jt, lab in HAND_FOOT:
        region = _capsule(gx, gy, joints[jt], joints[jt], 1.8 * size / 64)
        labels[region] = lab
        img[region] = skin * 0.9
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels


@dataclass
class SyntheticSpec:
    n: int = 2000
    proportions: tuple = (0.90, 0.07, 0.03)
    archetypes: tuple = ARCHETYPE_NAMES
    size: int = 64
    seed: int = 0
    occlusion_rate: float = 0.0


def archetype_sequence(spec: SyntheticSpec) -> list[str]:
    """Exact-count archetype list (largest-remainder rounding), shuffled by seed."""
    raw = np.asarray(spec.proportions, dtype=np.float64) * spec.n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: spec.n - counts.sum()]:
        counts[i] += 1
    seq = [a for a, c in zip(spec.archetypes, counts) for _ in range(c)]
    order = np.random.default_rng([spec.seed, 1]).permutation(len(seq))
    return [seq[i] for i in order]


def write_synthetic_dataset(out_dir, spec: SyntheticSpec | None = None) -> Path:
    """Write ``annotations.json``, ``images/`` and ``masks/`` under ``out_dir``.

    Every image holds one figure; annotation ids equal image ids. The source
    archetype is stored in a non-standard ``archetype`` field.
    """
    spec = spec or SyntheticSpec()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    images, anns = [], []
    for i, arch in enumerate(archetype_sequence(spec)):
        rng = np.random.default_rng([spec.seed, 2, i])
        joints = stick_figure(arch, rng, spec.size)
        img, labels = render_figure(joints, spec.size, rng)
        vis = np.full(NUM_JOINTS, 2)
        if spec.occlusion_rate and rng.random() < spec.occlusion_rate:
            vis[int(rng.choice([9, 10, 15, 16]))] = 1
        pose = Pose(joints, vis)
        image_id = ann_id = i + 1
        name = f"{image_id:06d}.png"
        Image.fromarray(img).save(out / "images" / name)
        save_parsing_mask(out / "masks" / mask_filename(image_id, ann_id), labels)
        fg = labels > 0
        ys, xs = np.nonzero(fg)
        x0, y0 = float(xs.min()), float(ys.min())
        bbox = [x0, y0, float(xs.max()) - x0 + 1.0, float(ys.max()) - y0 + 1.0]
        images.append({"id": image_id, "file_name": name, "width": spec.size, "height": spec.size})
        anns.append({
            "id": ann_id, "image_id": image_id, "category_id": 1, "iscrowd": 0,
            "bbox": bbox, "area": float(fg.sum()), "num_keypoints": pose.num_labeled,
            "keypoints": pose.to_coco(), "archetype": arch,
        })
    doc = {
        "images": images,
        "annotations": anns,
        "categories": [{
            "id": 1, "name": "person", "supercategory": "person",
            "keypoints": list(JOINT_NAMES), "skeleton": [list(e) for e in COCO_SKELETON],
            "sigmas": list(COCO_SIGMAS),
        }],
    }
    (out / "annotations.json").write_text(json.dumps(doc))
    return out / "annotations.json"


def archetypes_of(annotations_path) -> dict[int, str]:
    doc = json.loads(Path(annotations_path).read_text())
    return {a["id"]: a.get("archetype") for a in doc["annotations"]}


def normalized_entropy(labels: Sequence[int], n_categories: int) -> float:
    """Shannon entropy of the label histogram divided by log(n_categories)."""
    if n_categories <= 1 or len(labels) == 0:
        return 0.0
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_categories).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(n_categories))


def minority_components(model) -> np.ndarray:
    """Components whose mixture weight is below the uniform share 1/N."""
    return np.flatnonzero(model.weights < 1.0 / model.n_components)


def annotation_cluster_labels(annotations_path, model) -> np.ndarray:
    """Hard PCM label of every annotation, normalized by its own bbox."""
    ds = load_coco_annotations(annotations_path)
    if not ds.instances:
        return np.zeros(0, dtype=int)
    return predict_labels(model, [normalize_pose(i.pose, i.bbox) for i in ds.instances])
