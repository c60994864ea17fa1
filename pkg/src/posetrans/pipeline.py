"""End-to-end commands: fit the clustering model, train the plausibility
scorer, build augmented datasets, evaluate, and the clustering baselines.

Every command takes a ``PipelineConfig``; paths are checked before any
expensive stage starts. File layout under ``out_dir``::

    pcm.json                     fitted mixture (unless ``pcm_model`` is set)
    cluster_report/              report.json, posterior_pca.csv/.svg, skeleton_<k>.svg
    discriminator.json           checkpoint (unless ``discriminator`` is set)
    discriminator_curve.csv
    augment/augmented.json       COCO file with the selected samples only
    augment/images/, masks/      rendered samples and their parsing masks
    augment/pool_ledger.jsonl    one PoolRecord per source instance
    augment/pcm_refit.json       mixture refitted on original + selected poses
    evaluate/report.json, report.txt
    baselines/oversampled.json | weights.json
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import discriminator as disc
from . import pcm
from .errors import PoseTransError, ValidationError
from .geometry import (
    eligible_limbs,
    limb_regions,
    render_plan,
    sample_bbox,
    sample_plan,
    transform_pose,
    warp_labels,
)
from .ingest import (
    MIN_LABELED_FOR_FIT,
    Dataset,
    crop_and_normalize,
    dataset_to_coco,
    instance_to_annotation,
    load_coco_annotations,
    load_limb_mapping,
    load_parsing_mask,
    mask_filename,
    normalize_pose,
    save_parsing_mask,
)
from .metrics import evaluate as evaluate_metrics
from .metrics import ground_truth_from_dataset, load_predictions
from .types import COCO_SKELETON, LIMBS, AugConfig, PersonInstance, make_limbs

log = logging.getLogger(__name__)

SELECTION_MODES = ("pcm", "random")
MAX_DUPLICATION = 10


@dataclass
class PipelineConfig:
    annotations: str = "annotations.json"
    images_dir: str = "images"
    masks_dir: str = "masks"
    limb_mapping: str | None = None
    out_dir: str = "out"
    pcm_model: str | None = None
    discriminator: str | None = None
    seed: int = 0
    workers: int = 1
    selection: str = "pcm"
    refit: bool = True
    aug: AugConfig = field(default_factory=AugConfig)
    pcm: pcm.PcmConfig = field(default_factory=pcm.PcmConfig)
    disc: disc.TrainConfig = field(default_factory=disc.TrainConfig)
    fake_scale_range: tuple = (0.4, 1.8)
    fake_rotation_range_deg: tuple = (-120.0, 120.0)
    fake_per_limb_prob: float = 0.5

    def __post_init__(self):
        if self.selection not in SELECTION_MODES:
            raise ValidationError(f"selection must be one of {SELECTION_MODES}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def pcm_model_path(self) -> Path:
        return Path(self.pcm_model) if self.pcm_model else self.out / "pcm.json"

    @property
    def discriminator_path(self) -> Path:
        return Path(self.discriminator) if self.discriminator else self.out / "discriminator.json"

    @property
    def limbs(self):
        return make_limbs(load_limb_mapping(self.limb_mapping)) if self.limb_mapping else LIMBS

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> PipelineConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if base_dir is not None:
            # relative paths, including unset defaults, resolve against base_dir
            defaults = {f.name: f.default for f in fields(cls)}
            for key in ("annotations", "images_dir", "masks_dir", "limb_mapping", "out_dir",
                        "pcm_model", "discriminator"):
                d.setdefault(key, defaults[key])
                if d.get(key) is not None and not Path(d[key]).is_absolute():
                    d[key] = str(base_dir / d[key])
        aug = d.pop("aug", {})
        d["aug"] = aug if isinstance(aug, AugConfig) else AugConfig.from_dict(aug)
        pc = d.pop("pcm", {})
        d["pcm"] = pc if isinstance(pc, pcm.PcmConfig) else pcm.PcmConfig(**pc)
        tc = d.pop("disc", {})
        if not isinstance(tc, disc.TrainConfig):
            tc = dict(tc)
            if "hidden" in tc:
                tc["hidden"] = tuple(tc["hidden"])
            tc = disc.TrainConfig(**tc)
        d["disc"] = tc
        for key in ("fake_scale_range", "fake_rotation_range_deg"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(str(e)) from None

    @classmethod
    def load(cls, path) -> PipelineConfig:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: {e}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["aug"] = self.aug.to_dict()
        out["pcm"] = asdict(self.pcm)
        out["disc"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.disc).items()}
        out["fake_scale_range"] = list(self.fake_scale_range)
        out["fake_rotation_range_deg"] = list(self.fake_rotation_range_deg)
        return out


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise ValidationError(f"{what} not found: {path}")


def _require_dir(path, what):
    if path is None or not Path(path).is_dir():
        raise ValidationError(f"{what} directory not found: {path}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1))


def fit_poses(dataset: Dataset) -> tuple[list[PersonInstance], list]:
    """Instances (and their normalized poses) usable for fitting the mixture."""
    insts = [i for i in dataset.instances if i.pose.num_labeled >= MIN_LABELED_FOR_FIT]
    return insts, [crop_and_normalize(i) for i in insts]


# ----------------------------------------------------------------------------
# fit-pcm / cluster-report


def cmd_fit_pcm(cfg: PipelineConfig) -> tuple[pcm.GmmModel, dict]:
    _require_file(cfg.annotations, "annotation file")
    dataset = load_coco_annotations(cfg.annotations)
    _, poses = fit_poses(dataset)
    n = cfg.aug.n_components
    model = pcm.fit_gmm(poses, n, cfg.pcm, np.random.default_rng([cfg.seed, 0]))
    cfg.pcm_model_path.parent.mkdir(parents=True, exist_ok=True)
    pcm.save_model(model, cfg.pcm_model_path)
    log.info("fitted %d-component mixture on %d poses (%d iterations)", n, len(poses), model.n_iter)
    report = cluster_report(model, poses, cfg.out / "cluster_report")
    return model, report


def cmd_cluster_report(cfg: PipelineConfig) -> dict:
    _require_file(cfg.annotations, "annotation file")
    _require_file(cfg.pcm_model_path, "PCM model")
    dataset = load_coco_annotations(cfg.annotations)
    model = pcm.load_model(cfg.pcm_model_path)
    _, poses = fit_poses(dataset)
    return cluster_report(model, poses, cfg.out / "cluster_report")


def _pca2(X: np.ndarray) -> tuple[np.ndarray, list[float]]:
    Xc = X - X.mean(axis=0)
    if Xc.shape[0] < 2:
        return np.zeros((Xc.shape[0], 2)), [0.0, 0.0]
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    # fix sign so the output is deterministic
    for k in range(vt.shape[0]):
        if vt[k, np.argmax(np.abs(vt[k]))] < 0:
            vt[k] = -vt[k]
    comps = vt[:2]
    proj = Xc @ comps.T
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    var = s ** 2
    ratio = (var[:2] / var.sum()).tolist() if var.sum() > 0 else [0.0, 0.0]
    return proj, ratio + [0.0] * (2 - len(ratio))


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def skeleton_svg(coords: np.ndarray, size: int = 160, title: str = "") -> str:
    """Mean skeleton in unit crop coordinates drawn with the COCO edges."""
    pad = 10
    scale = size - 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 16}">',
             f'<rect width="{size}" height="{size + 16}" fill="white"/>']
    for a, b in COCO_SKELETON:
        (x0, y0), (x1, y1) = coords[a - 1], coords[b - 1]
        parts.append(f'<line x1="{pad + x0 * scale:.2f}" y1="{pad + y0 * scale:.2f}" '
                     f'x2="{pad + x1 * scale:.2f}" y2="{pad + y1 * scale:.2f}" stroke="#333" stroke-width="2"/>')
    for x, y in coords:
        parts.append(f'<circle cx="{pad + x * scale:.2f}" cy="{pad + y * scale:.2f}" r="2.5" fill="#d62728"/>')
    parts.append(f'<text x="4" y="{size + 12}" font-size="11" font-family="sans-serif">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_svg(points: np.ndarray, labels: np.ndarray, size: int = 400) -> str:
    pad = 20
    if len(points) == 0:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}"></svg>'
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    uv = (points - lo) / span * (size - 2 * pad) + pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for (u, v), lab in zip(uv, labels):
        parts.append(f'<circle cx="{u:.1f}" cy="{size - v:.1f}" r="2" fill="{PALETTE[int(lab) % len(PALETTE)]}" '
                     f'fill-opacity="0.6"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def cluster_report(model: pcm.GmmModel, poses: list, out_dir) -> dict:
    """Cluster sizes (largest first), mixture weights, mean skeletons, and a
    2-D PCA of the posterior vectors."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    post = pcm.predict_proba(model, poses) if poses else np.zeros((0, model.n_components))
    labels = np.argmax(post, axis=1) if len(poses) else np.zeros(0, dtype=int)
    counts = np.bincount(labels, minlength=model.n_components)
    total = max(int(counts.sum()), 1)
    order = sorted(range(model.n_components), key=lambda k: (-counts[k], k))
    clusters = []
    for k in order:
        members = [p for p, lab in zip(poses, labels) if lab == k]
        row = {"cluster": k, "count": int(counts[k]), "fraction": counts[k] / total,
               "weight": float(model.weights[k])}
        if members:
            mean = np.mean([m.coords for m in members], axis=0)
            name = f"skeleton_{k:02d}.svg"
            (out / name).write_text(skeleton_svg(mean, title=f"cluster {k}: n={counts[k]}"))
            row["skeleton_svg"] = name
        clusters.append(row)
    proj, ratio = _pca2(post) if len(poses) else (np.zeros((0, 2)), [0.0, 0.0])
    with (out / "posterior_pca.csv").open("w") as f:
        f.write("index,label,pc1,pc2\n")
        for i, (lab, (a, b)) in enumerate(zip(labels, proj)):
            f.write(f"{i},{int(lab)},{a:.6f},{b:.6f}\n")
    (out / "posterior_pca.svg").write_text(scatter_svg(proj, labels))
    report = {
        "n_components": model.n_components,
        "n_samples": len(poses),
        "clusters": clusters,
        "pca_explained_variance_ratio": ratio,
    }
    _write_json(out / "report.json", report)
    return report


# ----------------------------------------------------------------------------
# train-disc


def fallback_bbox(pose, bbox) -> tuple:
    """Source box grown to cover the transformed keypoints (used when no parsing mask is at hand)."""
    x, y, w, h = bbox
    xy = pose.coords[pose.labeled]
    x0, y0 = min(x, xy[:, 0].min()), min(y, xy[:, 1].min())
    x1, y1 = max(x + w, xy[:, 0].max()), max(y + h, xy[:, 1].max())
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def ptm_fake_generator(instances: list[PersonInstance], aug: AugConfig, masks=None, limbs=LIMBS,
                       max_tries: int = 20):
    """Fake poses: each real instance transformed with the (widened) ``aug``
    ranges, resampled until at least one limb moves.

    Fakes are normalized the same way augmentation candidates are: by the
    tight box of the transformed person when its parsing mask is given.
    """
    masks = masks if masks is not None else [None] * len(instances)

    def generate(real_poses, rng):
        out = []
        for inst, mask in zip(instances, masks):
            regions = limb_regions(mask, limbs) if mask is not None else None
            eligible = eligible_limbs(inst.pose, regions)
            plan = None
            for _ in range(max_tries):
                plan = sample_plan(inst.pose, eligible, aug, rng)
                if not plan.is_empty:
                    break
            pose = transform_pose(inst.pose, plan)
            if mask is not None:
                bbox = sample_bbox(pose, mask.labels, regions, plan)
            else:
                bbox = fallback_bbox(pose, inst.bbox)
            out.append(normalize_pose(pose, bbox))
        return out

    return generate


def _load_masks(cfg: PipelineConfig, instances, dataset: Dataset):
    """Parsing masks for ``instances`` (None where missing); all None without a masks dir."""
    if not cfg.masks_dir or not Path(cfg.masks_dir).is_dir():
        return None
    out = []
    for inst in instances:
        path = Path(cfg.masks_dir) / mask_filename(inst.image_id, inst.instance_id)
        info = dataset.image(inst.image_id)
        dims = (info.height, info.width) if info.height and info.width else None
        out.append(load_parsing_mask(path, dims) if path.is_file() else None)
    return out


def cmd_train_discriminator(cfg: PipelineConfig) -> disc.DiscriminatorModel:
    _require_file(cfg.annotations, "annotation file")
    dataset = load_coco_annotations(cfg.annotations)
    insts, real = fit_poses(dataset)
    widened = cfg.aug.widened(cfg.fake_scale_range, cfg.fake_rotation_range_deg)
    widened = replace(widened, per_limb_prob=cfg.fake_per_limb_prob)
    model = disc.train_discriminator(
        real, ptm_fake_generator(insts, widened, _load_masks(cfg, insts, dataset), cfg.limbs), cfg.disc,
        np.random.default_rng([cfg.seed, 1]), threshold=cfg.aug.plausibility_threshold,
    )
    path = cfg.discriminator_path
    path.parent.mkdir(parents=True, exist_ok=True)
    disc.save_checkpoint(model, path)
    with path.with_name(path.stem + "_curve.csv").open("w") as f:
        f.write("epoch,train_loss,heldout_loss\n")
        for row in model.history:
            f.write(f"{row['epoch']},{row['train_loss']!r},{row['heldout_loss']!r}\n")
    log.info("discriminator trained; best held-out epoch %s", model.best_epoch)
    return model


# ----------------------------------------------------------------------------
# augment


@dataclass
class PoolRecord:
    annotation_id: int
    image_id: int
    status: str
    attempts: int = 0
    accepted: int = 0
    rejected: int = 0
    rejected_out_of_frame: int = 0
    scores: list = field(default_factory=list)
    rarities: list = field(default_factory=list)
    chosen: int | None = None
    plausibility: float | None = None
    reason: str | None = None


@dataclass
class InstanceResult:
    record: PoolRecord
    image: np.ndarray | None = None
    labels: np.ndarray | None = None
    pose: object = None
    normalized: object = None
    plan: object = None
    bbox: tuple | None = None
    area: float | None = None


class Augmenter:
    """Per-instance candidate pool construction and selection.

    Holds the models and config; ``__call__`` is safe to run in worker
    processes because every instance derives its own RNG from
    ``(seed, annotation id)``.
    """

    def __init__(self, cfg: PipelineConfig, model: pcm.GmmModel, scorer: disc.DiscriminatorModel,
                 dataset: Dataset, limbs=LIMBS):
        self.cfg = cfg
        self.model = model
        self.scorer = scorer
        self.images = {im.id: im for im in dataset.images}
        self.limbs = limbs

    def _load(self, inst: PersonInstance):
        info = self.images[inst.image_id]
        mask_path = Path(self.cfg.masks_dir) / mask_filename(inst.image_id, inst.instance_id)
        if not mask_path.is_file():
            return None, None
        with Image.open(Path(self.cfg.images_dir) / info.file_name) as im:
            image = np.array(im.convert("RGB"))
        mask = load_parsing_mask(mask_path, image.shape[:2])
        return image, mask

    def __call__(self, inst: PersonInstance) -> InstanceResult:
        cfg, aug = self.cfg, self.cfg.aug
        rec = PoolRecord(inst.instance_id, inst.image_id, "skipped")
        image, mask = self._load(inst)
        if image is None:
            rec.reason = "no_parsing_mask"
            return InstanceResult(rec)
        regions = limb_regions(mask, self.limbs)
        eligible = eligible_limbs(inst.pose, regions)
        if not any(eligible):
            rec.reason = "no_transformable_limb"
            return InstanceResult(rec)

        rng = np.random.default_rng([cfg.seed, inst.instance_id])
        H, W = image.shape[:2]
        pool = []
        while len(pool) < aug.pool_size and rec.attempts < aug.max_pool_attempts:
            rec.attempts += 1
            plan = sample_plan(inst.pose, eligible, aug, rng)
            pose = transform_pose(inst.pose, plan)
            xy = pose.coords[pose.labeled]
            if np.any((xy < 0) | (xy > np.array([W - 1, H - 1]))):
                rec.rejected += 1
                rec.rejected_out_of_frame += 1
                continue
            bbox = sample_bbox(pose, mask.labels, regions, plan)
            npose = normalize_pose(pose, bbox)
            e = disc.score_pose(self.scorer, npose)
            if e >= aug.plausibility_threshold:
                pool.append((plan, pose, npose, e, bbox))
                rec.scores.append(e)
            else:
                rec.rejected += 1
        rec.accepted = len(pool)
        if len(pool) < aug.pool_size:
            rec.reason = "pool_incomplete"
            return InstanceResult(rec)

        rec.rarities = pcm.pool_rarities(self.model, [c[2] for c in pool])
        if cfg.selection == "pcm":
            t = pcm.select_rarest(self.model, [c[2] for c in pool])
        else:
            t = int(rng.integers(len(pool)))
        plan, pose, npose, e, bbox = pool[t]
        rec.chosen, rec.plausibility, rec.status = t, e, "selected"

        new_image, _ = render_plan(image, regions, plan)
        new_labels = warp_labels(mask.labels, plan, self.limbs)
        area = float(np.count_nonzero(new_labels))
        return InstanceResult(rec, new_image, new_labels, pose, npose, plan, bbox, area)


_WORKER: Augmenter | None = None


def _worker_init(augmenter: Augmenter):
    global _WORKER
    _WORKER = augmenter


def _worker_run(inst):
    return _WORKER(inst)


def _run_instances(augmenter: Augmenter, instances, workers: int):
    if workers <= 1:
        for inst in instances:
            yield augmenter(inst)
        return
    with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(augmenter,)) as ex:
        yield from ex.map(_worker_run, instances, chunksize=16)


def _validate_augment(cfg: PipelineConfig):
    _require_file(cfg.annotations, "annotation file")
    _require_dir(cfg.images_dir, "images")
    _require_dir(cfg.masks_dir, "masks")
    _require_file(cfg.pcm_model_path, "PCM model")
    _require_file(cfg.discriminator_path, "discriminator checkpoint")
    if cfg.limb_mapping:
        _require_file(cfg.limb_mapping, "limb mapping")


def cmd_augment(cfg: PipelineConfig, write_images: bool = True) -> dict:
    """Build one augmented sample per eligible instance.

    Returns a summary dict; the ledger and the COCO file are written under
    ``out_dir/augment``.
    """
    _validate_augment(cfg)
    dataset = load_coco_annotations(cfg.annotations)
    model = pcm.load_model(cfg.pcm_model_path)
    scorer = disc.load_checkpoint(cfg.discriminator_path)
    limbs = cfg.limbs
    out = cfg.out / "augment"
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    next_image_id = max((im.id for im in dataset.images), default=0) + 1
    next_ann_id = max((i.instance_id for i in dataset.instances), default=0) + 1
    new_images, new_anns, selected_norm = [], [], []
    counts = {"instances": len(dataset.instances), "selected": 0, "skipped": 0}
    augmenter = Augmenter(cfg, model, scorer, dataset, limbs)
    with (out / "pool_ledger.jsonl").open("w") as ledger:
        for res in _run_instances(augmenter, dataset.instances, cfg.workers):
            ledger.write(json.dumps(asdict(res.record)) + "\n")
            if res.record.status != "selected":
                counts["skipped"] += 1
                continue
            counts["selected"] += 1
            src = dataset.image(res.record.image_id)
            name = f"{next_image_id:012d}.png"
            if write_images:
                Image.fromarray(res.image).save(out / "images" / name)
                save_parsing_mask(out / "masks" / mask_filename(next_image_id, next_ann_id), res.labels)
            new_images.append({"id": next_image_id, "file_name": name,
                               "width": src.width or res.image.shape[1],
                               "height": src.height or res.image.shape[0]})
            new_anns.append({
                "id": next_ann_id,
                "image_id": next_image_id,
                "category_id": dataset.category.id,
                "iscrowd": 0,
                "bbox": list(res.bbox),
                "area": res.area,
                "num_keypoints": res.pose.num_labeled,
                "keypoints": res.pose.to_coco(),
                "posetrans": {
                    "source_annotation_id": res.record.annotation_id,
                    "source_image_id": res.record.image_id,
                    "seed": [cfg.seed, res.record.annotation_id],
                    "selection": cfg.selection,
                    "plausibility": res.record.plausibility,
                    "rarity": res.record.rarities[res.record.chosen],
                    "plan": res.plan.to_list(),
                },
            })
            if res.pose.num_labeled >= MIN_LABELED_FOR_FIT:
                selected_norm.append(res.normalized)
            next_image_id += 1
            next_ann_id += 1

    doc = dataset_to_coco(Dataset([], [], dataset.category), new_anns)
    doc["images"] = new_images
    (out / "augmented.json").write_text(json.dumps(doc))
    if cfg.refit:
        _, original = fit_poses(dataset)
        refitted = pcm.refit(model, original, selected_norm, cfg.pcm, np.random.default_rng([cfg.seed, 2]))
        pcm.save_model(refitted, out / "pcm_refit.json")
        counts["refit_iterations"] = refitted.n_iter
    log.info("augment: %(selected)d selected, %(skipped)d skipped", counts)
    return counts


def read_ledger(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


# ----------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: PipelineConfig, predictions_path) -> dict:
    _require_file(cfg.annotations, "annotation file")
    _require_file(predictions_path, "predictions file")
    _require_file(cfg.pcm_model_path, "PCM model")
    dataset = load_coco_annotations(cfg.annotations)
    model = pcm.load_model(cfg.pcm_model_path)
    preds = load_predictions(predictions_path)
    known = {im.id for im in dataset.images}
    unknown = [p for p in preds if p.image_id not in known]
    if unknown:
        log.warning("ignoring %d predictions for unknown image ids", len(unknown))
    preds = [p for p in preds if p.image_id in known]
    report = evaluate_metrics(preds, ground_truth_from_dataset(dataset), model, sigmas=dataset.category.sigmas)
    report.counts["ignored_unknown_image"] = len(unknown)
    out = cfg.out / "evaluate"
    _write_json(out / "report.json", report.to_dict())
    (out / "report.txt").write_text(report.table() + "\n")
    return report.to_dict()


# ----------------------------------------------------------------------------
# baselines


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def cluster_counts(labels: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(labels, minlength=n)


def oversample_factors(counts: np.ndarray, cap: int = MAX_DUPLICATION) -> dict[int, int]:
    """Copies per instance of each non-empty cluster: round(max / count), capped."""
    top = counts.max()
    return {c: min(_round_half_up(top / n), cap) for c, n in enumerate(counts.tolist()) if n > 0}


def reweight(labels: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-instance weight max_count / count_c, rescaled to mean 1."""
    raw = counts.max() / counts[labels].astype(np.float64)
    return raw / raw.mean()


def cmd_baselines(cfg: PipelineConfig, mode: str) -> dict:
    if mode not in ("oversample", "reweight"):
        raise ValidationError(f"unknown baseline mode {mode!r}")
    _require_file(cfg.annotations, "annotation file")
    _require_file(cfg.pcm_model_path, "PCM model")
    dataset = load_coco_annotations(cfg.annotations)
    model = pcm.load_model(cfg.pcm_model_path)
    labels = pcm.predict_labels(model, [crop_and_normalize(i) for i in dataset.instances])
    counts = cluster_counts(labels, model.n_components)
    for c in np.flatnonzero(counts == 0):
        log.warning("cluster %d has no instances; skipped", c)
    out = cfg.out / "baselines"
    out.mkdir(parents=True, exist_ok=True)
    summary = {"mode": mode, "cluster_counts": counts.tolist()}
    if mode == "reweight":
        w = reweight(labels, counts)
        weights = {str(i.instance_id): float(x) for i, x in zip(dataset.instances, w)}
        _write_json(out / "weights.json", {"weights": weights, "cluster_counts": counts.tolist(),
                                           "labels": {str(i.instance_id): int(l) for i, l in
                                                      zip(dataset.instances, labels)}})
        summary["n_weights"] = len(weights)
        return summary

    factors = oversample_factors(counts)
    images = {im.id: im for im in dataset.images}
    next_image_id = max(images, default=0) + 1
    next_ann_id = max((i.instance_id for i in dataset.instances), default=0) + 1
    out_images = [{"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}
                  for im in dataset.images]
    anns = [instance_to_annotation(i, dataset.category.id) for i in dataset.instances]
    for inst, lab in zip(dataset.instances, labels.tolist()):
        for _ in range(factors[lab] - 1):
            src = images[inst.image_id]
            out_images.append({"id": next_image_id, "file_name": src.file_name,
                               "width": src.width, "height": src.height})
            a = instance_to_annotation(inst, dataset.category.id)
            a["id"], a["image_id"] = next_ann_id, next_image_id
            a["posetrans"] = {"duplicate_of": inst.instance_id}
            anns.append(a)
            next_image_id += 1
            next_ann_id += 1
    doc = dataset_to_coco(Dataset([], [], dataset.category), anns)
    doc["images"] = out_images
    (out / "oversampled.json").write_text(json.dumps(doc))
    summary["factors"] = {str(k): v for k, v in factors.items()}
    summary["n_annotations"] = len(anns)
    return summary


def run_command(name: str, cfg: PipelineConfig, **kwargs):
    commands = {
        "fit-pcm": lambda: cmd_fit_pcm(cfg)[1],
        "cluster-report": lambda: cmd_cluster_report(cfg),
        "train-disc": lambda: {"best_epoch": cmd_train_discriminator(cfg).best_epoch},
        "augment": lambda: cmd_augment(cfg),
        "evaluate": lambda: cmd_evaluate(cfg, kwargs["predictions"]),
        "baselines": lambda: cmd_baselines(cfg, kwargs["mode"]),
    }
    if name not in commands:
        raise PoseTransError(f"unknown command {name}")
    return commands[name]()
