"""Limb-level affine pose transformation.

Each of the 8 limbs pivots around its proximal joint (shoulder, elbow, hip,
knee) by a similarity transform. Lower segments inherit the motion of their
upper segment through matrix composition, so moving an upper arm rigidly
carries the forearm and keeps the skeleton connected.

Pixel convention: array element ``[row, col]`` sits at image point
``(x=col, y=row)``; keypoints use the same frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidScale, NonConvergent, NoTransformableLimb, SingularMatrix
from .ingest import ParsingMask, limb_region
from .inpaint import inpaint
from .types import LIMBS, NUM_LIMBS, AugConfig, Limb, LimbTransform, PersonInstance, Pose, Visibility

MAX_REJECTION_DRAWS = 1000


def sample_limb_transform(config: AugConfig, rng: np.random.Generator) -> LimbTransform:
    """Draw (scale, rotation) from normals centred on the identity, truncated by rejection."""
    s_lo, s_hi = config.scale_range
    r_lo, r_hi = config.rotation_range
    if not (s_lo <= 1.0 <= s_hi and r_lo <= 0.0 <= r_hi):
        raise NonConvergent("configured ranges must contain the identity transform (1, 0)")
    sd_s, sd_r = config.sigma_scale, config.sigma_rotation
    for _ in range(MAX_REJECTION_DRAWS):
        s = rng.normal(1.0, sd_s)
        r = rng.normal(0.0, sd_r)
        if s_lo <= s <= s_hi and r_lo <= r <= r_hi:
            return LimbTransform(float(s), float(r))
    raise NonConvergent(f"no in-range limb transform after {MAX_REJECTION_DRAWS} draws; check std/range")


def affine_matrix(t: LimbTransform, center) -> np.ndarray:
    """Homogeneous 3x3 similarity that scales by ``t.scale`` and rotates by
    ``t.rotation`` about ``center``: T(c) R(r) S(s) T(-c).

    With ``scale == 1`` this is the pure rotation about ``center``.
    """
    s, r = t.scale, t.rotation
    if not s > 0:
        raise InvalidScale(f"scale must be positive, got {s}")
    cx, cy = float(center[0]), float(center[1])
    sc, ss = s * math.cos(r), s * math.sin(r)
    return np.array([
        [sc, -ss, (1.0 - sc) * cx + ss * cy],
        [ss, sc, (1.0 - sc) * cy - ss * cx],
        [0.0, 0.0, 1.0],
    ])


def compose_hierarchy(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Total motion of a lower segment: ``upper @ lower`` (lower applied first)."""
    return upper @ lower


def apply_matrix(h: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ h[:2, :2].T + h[:2, 2]


@dataclass(frozen=True)
class LimbPlan:
    """Per-limb sampled transforms plus the composed (effective) matrices.

    ``effective[i]`` is ``None`` when limb ``i`` does not move at all. A lower
    limb whose parent moved is carried by the parent matrix even if it was not
    sampled itself.
    """

    transforms: tuple
    centers: tuple
    effective: tuple = field(init=False)

    def __post_init__(self):
        if len(self.transforms) != NUM_LIMBS or len(self.centers) != NUM_LIMBS:
            raise ValueError("limb plan needs one slot per limb")
        own = [
            None if t is None else affine_matrix(t, c)
            for t, c in zip(self.transforms, self.centers)
        ]
        eff: list = [None] * NUM_LIMBS
        for limb in LIMBS:
            h = own[limb.id]
            if limb.parent is not None and eff[limb.parent] is not None:
                h = eff[limb.parent] if h is None else compose_hierarchy(eff[limb.parent], h)
            eff[limb.id] = h
        object.__setattr__(self, "effective", tuple(eff))

    @classmethod
    def empty(cls) -> LimbPlan:
        return cls((None,) * NUM_LIMBS, ((0.0, 0.0),) * NUM_LIMBS)

    @classmethod
    def from_transforms(cls, pose: Pose, transforms: Sequence[LimbTransform | None]) -> LimbPlan:
        centers = tuple(tuple(pose.coords[limb.src_joint].tolist()) for limb in LIMBS)
        return cls(tuple(transforms), centers)

    @property
    def is_empty(self) -> bool:
        return all(t is None for t in self.transforms)

    @property
    def moved(self) -> list[int]:
        return [i for i, h in enumerate(self.effective) if h is not None]

    def to_list(self) -> list:
        return [
            None if t is None else {"scale": t.scale, "rotation": t.rotation, "center": list(c)}
            for t, c in zip(self.transforms, self.centers)
        ]


def eligible_limbs(pose: Pose, regions: Sequence[np.ndarray] | None = None) -> list[bool]:
    """A limb may move iff both endpoints are visible and (if given) its pixel region is non-empty."""
    out = []
    for limb in LIMBS:
        ok = (pose.vis[limb.src_joint] == Visibility.LABELED_VISIBLE
              and pose.vis[limb.dst_joint] == Visibility.LABELED_VISIBLE)
        if ok and regions is not None:
            ok = bool(regions[limb.id].any())
        out.append(bool(ok))
    return out


def sample_plan(pose: Pose, eligible: Sequence[bool], config: AugConfig, rng: np.random.Generator) -> LimbPlan:
    # One gate draw per limb regardless of eligibility, so the stream layout is fixed.
    transforms = []
    for limb in LIMBS:
        gate = rng.random() < config.per_limb_prob
        transforms.append(sample_limb_transform(config, rng) if gate and eligible[limb.id] else None)
    return LimbPlan.from_transforms(pose, transforms)


def transform_pose(pose: Pose, plan: LimbPlan) -> Pose:
    """Move each moved limb's distal joint by its effective matrix.

    The elbow/knee is the distal joint of the upper segment, so it is mapped by
    the parent matrix and the chain stays connected. Unlabeled joints and all
    visibility flags are left alone.
    """
    coords = pose.coords.copy()
    for limb in LIMBS:
        h = plan.effective[limb.id]
        if h is None or not pose.vis[limb.dst_joint]:
            continue
        coords[limb.dst_joint] = apply_matrix(h, pose.coords[limb.dst_joint])
    return Pose(coords, pose.vis)


def dilate(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Binary dilation with a 3x3 square."""
    out = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        p = np.pad(out, 1)
        h, w = out.shape
        grown = np.zeros_like(out)
        for dy in range(3):
            for dx in range(3):
                grown |= p[dy:dy + h, dx:dx + w]
        out = grown
    return out


def erase_limbs(image: np.ndarray, regions: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Return (image copy, hole) where hole is the 1-pixel dilated union of ``regions``.

    Pixels under the hole are zeroed; they are only meaningful after inpainting.
    """
    image = np.asarray(image)
    hole = np.zeros(image.shape[:2], dtype=bool)
    for r in regions:
        if r.shape != hole.shape:
            raise DimensionMismatch(f"region {r.shape} vs image {hole.shape}")
        hole |= r
    out = image.copy()
    if hole.any():
        hole = dilate(hole)
        out[hole] = 0
    return out, hole


def bilinear_sample(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``arr`` (H, W[, C]) at float points; outside the frame reads as 0."""
    h, w = arr.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = None
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
            wgt = np.where(ok, wx * wy, 0.0)
            if vals.ndim > wgt.ndim:
                wgt = wgt[..., None]
            term = vals * wgt
            out = term if out is None else out + term
    return out


def warp_patch(
    src: np.ndarray, region: np.ndarray, h: np.ndarray, out_shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int, int]] | None:
    """Inverse-warp the pixels of ``src`` under ``region`` through ``h``.

    Returns (colors, coverage, window) where ``window = (y0, y1, x0, x1)`` is
    the destination box the arrays cover, or ``None`` if nothing lands in frame.
    """
    lin = h[:2, :2]
    det = float(np.linalg.det(lin))
    if not math.isfinite(det) or abs(det) < 1e-12:
        raise SingularMatrix(f"effective matrix is not invertible (det={det})")
    ys, xs = np.nonzero(region)
    if ys.size == 0:
        return None
    H, W = out_shape
    corners = np.array([
        [xs.min() - 1, ys.min() - 1], [xs.max() + 1, ys.min() - 1],
        [xs.min() - 1, ys.max() + 1], [xs.max() + 1, ys.max() + 1],
    ], dtype=np.float64)
    dst = apply_matrix(h, corners)
    x0 = max(int(math.floor(dst[:, 0].min())), 0)
    x1 = min(int(math.ceil(dst[:, 0].max())) + 1, W)
    y0 = max(int(math.floor(dst[:, 1].min())), 0)
    y1 = min(int(math.ceil(dst[:, 1].max())) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return None
    gy, gx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    inv = np.linalg.inv(h)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    m = region.astype(np.float64)
    coverage = bilinear_sample(m, sx, sy)
    src = np.asarray(src, dtype=np.float64)
    if src.ndim == 2:
        src = src[..., None]
    premult = bilinear_sample(src * m[..., None], sx, sy)
    with np.errstate(invalid="ignore", divide="ignore"):
        colors = np.where(coverage[..., None] > 0, premult / coverage[..., None], 0.0)
    return colors, coverage, (y0, y1, x0, x1)


def composite(base: np.ndarray, patches: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> np.ndarray:
    """Paste warped limb patches onto ``base``.

    Each patch is ``(source image, source region, effective matrix)``. A
    destination pixel takes the patch colour where the bilinear coverage of
    the warped region is at least one half; later patches overdraw earlier ones.
    """
    base = np.asarray(base)
    out = base.astype(np.float64)
    squeeze = out.ndim == 2
    if squeeze:
        out = out[..., None]
    for src, region, h in patches:
        warped = warp_patch(src, region, h, base.shape[:2])
        if warped is None:
            continue
        colors, coverage, (y0, y1, x0, x1) = warped
        sel = coverage >= 0.5
        win = out[y0:y1, x0:x1]
        win[sel] = colors[sel]
    if squeeze:
        out = out[..., 0]
    if np.issubdtype(base.dtype, np.integer):
        info = np.iinfo(base.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(base.dtype)
    return out.astype(base.dtype)


def warped_extent(region: np.ndarray, h: np.ndarray, shape: tuple[int, int]):
    """(x0, y0, x1, y1) of the warped region pixels clipped to the frame, or None."""
    ys, xs = np.nonzero(region)
    if ys.size == 0:
        return None
    pts = apply_matrix(h, np.stack([xs, ys], axis=1).astype(np.float64))
    H, W = shape
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    x0, x1 = max(x0, 0.0), min(x1, W - 1.0)
    y0, y1 = max(y0, 0.0), min(y1, H - 1.0)
    if x0 > x1 or y0 > y1:
        return None
    return float(x0), float(y0), float(x1), float(y1)


@dataclass
class AugmentedSample:
    image: np.ndarray | None
    pose: Pose
    plan: LimbPlan
    plausibility: float | None = None
    source_id: int | None = None
    seed: object = None
    extents: list = field(default_factory=list)

    @property
    def provenance(self) -> dict:
        return {"source_id": self.source_id, "plan": self.plan.to_list(), "seed": self.seed}


def limb_regions(mask: ParsingMask, limbs: Sequence[Limb] = LIMBS) -> list[np.ndarray]:
    return [limb_region(mask, limb) for limb in limbs]


def render_plan(
    image: np.ndarray,
    regions: Sequence[np.ndarray],
    plan: LimbPlan,
    inpaint_kwargs: dict | None = None,
) -> tuple[np.ndarray, list]:
    """Erase moved limbs, inpaint the hole, paste the warped limbs back.

    Returns the new image and the warped extents of the moved limbs.
    """
    moved = plan.moved
    if not moved:
        return np.array(image, copy=True), []
    erased, hole = erase_limbs(image, [regions[i] for i in moved])
    base = inpaint(erased, hole, **(inpaint_kwargs or {})) if hole.any() else erased
    patches = [(image, regions[i], plan.effective[i]) for i in moved]
    extents = [warped_extent(regions[i], plan.effective[i], image.shape[:2]) for i in moved]
    return composite(base, patches), [e for e in extents if e is not None]


def apply_ptm(
    instance: PersonInstance,
    image: np.ndarray,
    mask: ParsingMask,
    config: AugConfig,
    rng: np.random.Generator,
    seed=None,
) -> AugmentedSample:
    """Sample a limb plan for ``instance`` and render it.

    Raises ``NoTransformableLimb`` when no limb has visible endpoints and a
    non-empty parsing region.
    """
    if image.shape[:2] != mask.shape:
        raise DimensionMismatch(f"image {image.shape[:2]} vs mask {mask.shape}")
    regions = limb_regions(mask)
    eligible = eligible_limbs(instance.pose, regions)
    if not any(eligible):
        raise NoTransformableLimb(f"instance {instance.instance_id} has no transformable limb")
    plan = sample_plan(instance.pose, eligible, config, rng)
    pose = transform_pose(instance.pose, plan)
    out, extents = render_plan(image, regions, plan)
    return AugmentedSample(out, pose, plan, source_id=instance.instance_id, seed=seed, extents=extents)


def warp_labels(labels: np.ndarray, plan: LimbPlan, limbs: Sequence[Limb] = LIMBS) -> np.ndarray:
    """Parsing mask of the augmented image: moved limb labels are cleared and
    re-stamped wherever their warped coverage reaches one half."""
    out = np.array(labels, dtype=np.uint8, copy=True)
    moved = plan.moved
    for i in moved:
        out[np.isin(labels, sorted(limbs[i].part_labels))] = 0
    for i in moved:
        for lab in sorted(limbs[i].part_labels):
            region = labels == lab
            warped = warp_patch(region.astype(np.float64), region, plan.effective[i], labels.shape)
            if warped is None:
                continue
            _, coverage, (y0, y1, x0, x1) = warped
            win = out[y0:y1, x0:x1]
            win[coverage >= 0.5] = lab
    return out


def sample_bbox(pose: Pose, labels: np.ndarray, regions: Sequence[np.ndarray], plan: LimbPlan) -> tuple:
    """Tight (x, y, w, h) box of an augmented person: labeled keypoints, warped
    extents of the moved limbs and the parsing pixels that stayed put.

    Pixel extents are inclusive, so a box spanning columns x0..x1 has width
    x1 - x0 + 1 (clipped to the frame).
    """
    H, W = labels.shape
    still = labels > 0
    for i in plan.moved:
        still &= ~regions[i]
    xs, ys = [], []
    xy = pose.coords[pose.labeled]
    xs.extend(xy[:, 0].tolist())
    ys.extend(xy[:, 1].tolist())
    fy, fx = np.nonzero(still)
    if fy.size:
        xs.extend((float(fx.min()), float(fx.max())))
        ys.extend((float(fy.min()), float(fy.max())))
    for i in plan.moved:
        ext = warped_extent(regions[i], plan.effective[i], (H, W))
        if ext is not None:
            xs.extend((ext[0], ext[2]))
            ys.extend((ext[1], ext[3]))
    x0, y0 = max(min(xs), 0.0), max(min(ys), 0.0)
    x1, y1 = min(max(xs), W - 1.0), min(max(ys), H - 1.0)
    return (x0, y0, min(x1 - x0 + 1.0, W - x0), min(y1 - y0 + 1.0, H - y0))
