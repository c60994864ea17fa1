"""OKS-based keypoint AP/AR and the category-balanced variants.

The protocol follows the usual COCO keypoint rules: greedy score-ordered
matching per image, at most 20 detections per image, precision interpolated
to be non-increasing and read at 101 recall points ``j / 100``.

Balanced metrics label every ground-truth pose with its PCM cluster,
compute AP/AR per cluster and average over clusters that have ground truth.
Matching stays label-blind; a detection matched to a ground truth of another
cluster is ignored (neither TP nor FP) for the cluster being scored, while
unmatched detections count as false positives in every cluster.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedFile, NoGroundTruth, NoLabeledKeypoints, SchemaError
from .ingest import normalize_pose
from .types import COCO_SIGMAS, NUM_JOINTS, Pose

OKS_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = tuple(j / 100 for j in range(101))
MAX_DETS = 20
AREA_RANGES = {
    "all": (0.0, math.inf),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, math.inf),
}

TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True, eq=False)
class GroundTruth:
    image_id: int
    pose: Pose
    area: float
    bbox: tuple | None = None
    category: int | None = None
    id: int | None = None


@dataclass(frozen=True, eq=False)
class Prediction:
    image_id: int
    keypoints: np.ndarray  # (J, 2)
    score: float

    @property
    def area(self) -> float:
        kp = np.asarray(self.keypoints)
        span = kp.max(axis=0) - kp.min(axis=0)
        return float(span[0] * span[1])


def oks(pred, gt: Pose, area: float, sigmas: Sequence[float] = COCO_SIGMAS) -> float:
    """Mean over labeled GT joints of exp(-d^2 / (2 * area * (2 sigma)^2))."""
    labeled = gt.vis > 0
    if not labeled.any():
        raise NoLabeledKeypoints("ground truth has no labeled keypoints")
    if not area > 0:
        raise ValueError("ground-truth area must be positive")
    pred = np.asarray(pred, dtype=np.float64).reshape(NUM_JOINTS, 2)
    k2 = (2.0 * np.asarray(sigmas, dtype=np.float64)) ** 2
    d2 = ((pred - gt.coords) ** 2).sum(axis=1)
    e = d2 / (2.0 * area * k2)
    return float(np.exp(-e[labeled]).mean())


def oks_matrix(preds: Sequence[Prediction], gts: Sequence[GroundTruth], sigmas=COCO_SIGMAS) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for g, gt in enumerate(gts):
        if gt.pose.num_labeled == 0:
            continue
        for d, p in enumerate(preds):
            out[d, g] = oks(p.keypoints, gt.pose, gt.area, sigmas)
    return out


def score_order(preds: Sequence[Prediction], max_dets: int = MAX_DETS) -> list[int]:
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    return order[:max_dets]


@dataclass
class Matching:
    order: list            # prediction indices in score order (capped)
    pred_to_gt: list       # per entry of ``order``: matched GT index or -1
    gt_to_pred: list       # per GT: prediction index or -1


def match_detections(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    oks_threshold: float,
    sigmas=COCO_SIGMAS,
    gt_ignore: Sequence[bool] | None = None,
    ious: np.ndarray | None = None,
    max_dets: int = MAX_DETS,
) -> Matching:
    """Greedy matching for one image.

    Predictions are visited by descending score; each takes the still
    unmatched GT with the highest OKS >= threshold (lowest index on ties).
    With ``gt_ignore``, non-ignored GTs are preferred and ignored ones are
    only used when no non-ignored GT qualifies.
    """
    if ious is None:
        ious = oks_matrix(preds, gts, sigmas)
    ignore = [False] * len(gts) if gt_ignore is None else list(gt_ignore)
    order = score_order(preds, max_dets)
    gt_to_pred = [-1] * len(gts)
    pred_to_gt = []
    for d in order:
        best, best_oks = -1, -1.0
        for tier in (False, True):
            for g in range(len(gts)):
                if gt_to_pred[g] >= 0 or ignore[g] != tier:
                    continue
                o = ious[d, g]
                if o >= oks_threshold and o > best_oks:
                    best, best_oks = g, o
            if best >= 0:
                break
        if best >= 0:
            gt_to_pred[best] = d
        pred_to_gt.append(best)
    return Matching(order, pred_to_gt, gt_to_pred)


def _ap_from_records(records: list[tuple[float, int]], npos: int) -> tuple[float, float]:
    """AP (101-point interpolated) and max recall from (score, status) records."""
    # stable sort keeps image order, then per-image rank, on equal scores
    recs = sorted(records, key=lambda r: -r[0])
    statuses = [s for _, s in recs if s != IGNORED]
    if not statuses:
        return 0.0, 0.0
    tp = np.cumsum([s == TP for s in statuses])
    fp = np.cumsum([s == FP for s in statuses])
    recall = tp / npos
    precision = tp / (tp + fp)
    for i in range(len(precision) - 1, 0, -1):
        if precision[i] > precision[i - 1]:
            precision[i - 1] = precision[i]
    q = []
    for r in RECALL_POINTS:
        i = int(np.searchsorted(recall, r, side="left"))
        q.append(float(precision[i]) if i < len(precision) else 0.0)
    return math.fsum(q) / len(RECALL_POINTS), float(recall[-1])


def _group(items, key):
    out: dict = {}
    for it in items:
        out.setdefault(key(it), []).append(it)
    return out


def _per_image(preds, gts, sigmas):
    pred_by = _group(preds, lambda p: p.image_id)
    gt_by = _group(gts, lambda g: g.image_id)
    image_ids = sorted(set(pred_by) | set(gt_by))
    out = []
    for img in image_ids:
        p, g = pred_by.get(img, []), gt_by.get(img, [])
        out.append((p, g, oks_matrix(p, g, sigmas)))
    return out


def _threshold_scores(per_image, thresholds, status_fn, npos):
    aps, ars = [], []
    for t in thresholds:
        records = []
        for preds, gts, ious in per_image:
            records.extend(status_fn(preds, gts, ious, t))
        ap, ar = _ap_from_records(records, npos)
        aps.append(ap)
        ars.append(ar)
    return aps, ars


def _area_status_fn(area_range, sigmas):
    lo, hi = area_range

    def in_range(a):
        return lo < a <= hi if lo > 0 else a <= hi

    def fn(preds, gts, ious, t):
        ignore = [g.pose.num_labeled == 0 or not in_range(g.area) for g in gts]
        m = match_detections(preds, gts, t, sigmas, gt_ignore=ignore, ious=ious)
        out = []
        for d, g in zip(m.order, m.pred_to_gt):
            if g >= 0:
                out.append((preds[d].score, IGNORED if ignore[g] else TP))
            else:
                out.append((preds[d].score, FP if in_range(preds[d].area) else IGNORED))
        return out

    def npos(gts):
        return sum(1 for g in gts if g.pose.num_labeled > 0 and in_range(g.area))

    return fn, npos


@dataclass
class EvalReport:
    ap: float | None = None
    ap50: float | None = None
    ap75: float | None = None
    ap_medium: float | None = None
    ap_large: float | None = None
    ar: float | None = None
    ar50: float | None = None
    ar75: float | None = None
    ar_medium: float | None = None
    ar_large: float | None = None
    ap_per_threshold: list = field(default_factory=list)
    ar_per_threshold: list = field(default_factory=list)
    ap_bal: float | None = None
    ar_bal: float | None = None
    per_category: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["per_category"] = {str(k): v for k, v in self.per_category.items()}
        out["counts"] = {str(k): v for k, v in self.counts.items()}
        return out

    def table(self) -> str:
        def fmt(v):
            return "   -  " if v is None else f"{100 * v:6.2f}"

        lines = [
            "metric      value",
            f"AP        {fmt(self.ap)}",
            f"AP50      {fmt(self.ap50)}",
            f"AP75      {fmt(self.ap75)}",
            f"AP_M      {fmt(self.ap_medium)}",
            f"AP_L      {fmt(self.ap_large)}",
            f"AR        {fmt(self.ar)}",
        ]
        if self.per_category:
            lines += [f"AP_BAL    {fmt(self.ap_bal)}", f"AR_BAL    {fmt(self.ar_bal)}", "",
                      "category   count     AP      AR"]
            for c, row in sorted(self.per_category.items()):
                lines.append(f"{c:>8} {row['count']:>7} {fmt(row['ap'])} {fmt(row['ar'])}")
        return "\n".join(lines)


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _at(thresholds, values, t):
    for th, v in zip(thresholds, values):
        if abs(th - t) < 1e-9:
            return v
    return None


def average_precision(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    thresholds: Sequence[float] = OKS_THRESHOLDS,
    sigmas=COCO_SIGMAS,
) -> EvalReport:
    """Standard AP/AR over OKS thresholds plus the medium/large splits.

    AP is the mean over thresholds of the 101-point interpolated precision;
    AR is the mean over thresholds of the final recall.
    """
    if not any(g.pose.num_labeled > 0 for g in gts):
        raise NoGroundTruth("no ground truth with labeled keypoints")
    per_image = _per_image(preds, gts, sigmas)
    report = EvalReport()
    for name, rng_ in AREA_RANGES.items():
        fn, npos_fn = _area_status_fn(rng_, sigmas)
        npos = npos_fn(gts)
        if npos == 0:
            continue
        aps, ars = _threshold_scores(per_image, thresholds, fn, npos)
        if name == "all":
            report.ap, report.ar = _mean(aps), _mean(ars)
            report.ap_per_threshold, report.ar_per_threshold = aps, ars
            report.ap50, report.ap75 = _at(thresholds, aps, 0.5), _at(thresholds, aps, 0.75)
            report.ar50, report.ar75 = _at(thresholds, ars, 0.5), _at(thresholds, ars, 0.75)
        elif name == "medium":
            report.ap_medium, report.ar_medium = _mean(aps), _mean(ars)
        else:
            report.ap_large, report.ar_large = _mean(aps), _mean(ars)
    report.counts = {"ground_truth": sum(1 for g in gts if g.pose.num_labeled > 0),
                     "predictions": len(preds)}
    return report


def label_ground_truth(gts: Sequence[GroundTruth], model) -> list[GroundTruth]:
    """Attach the PCM hard label of each GT's normalized pose."""
    from .pcm import assign_cluster

    out = []
    for g in gts:
        if g.bbox is None:
            raise SchemaError("ground truth needs a bbox to be normalized", g.id)
        out.append(replace(g, category=assign_cluster(model, normalize_pose(g.pose, g.bbox))))
    return out


def _category_status_fn(category, sigmas):
    def fn(preds, gts, ious, t):
        ignore = [g.pose.num_labeled == 0 for g in gts]
        m = match_detections(preds, gts, t, sigmas, gt_ignore=ignore, ious=ious)
        out = []
        for d, g in zip(m.order, m.pred_to_gt):
            if g < 0:
                out.append((preds[d].score, FP))
            elif ignore[g] or gts[g].category != category:
                out.append((preds[d].score, IGNORED))
            else:
                out.append((preds[d].score, TP))
        return out

    return fn


def balanced_ap(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    model=None,
    n_categories: int | None = None,
    thresholds: Sequence[float] = OKS_THRESHOLDS,
    sigmas=COCO_SIGMAS,
) -> tuple[float, float, dict]:
    """(AP_BAL, AR_BAL, per-category table).

    GTs without a category are labeled with ``model``. Categories with no
    ground truth appear in the table with ``ap``/``ar`` of ``None`` and are
    left out of the means.
    """
    if model is not None and any(g.category is None for g in gts):
        gts = label_ground_truth(gts, model)
    if any(g.category is None for g in gts):
        raise SchemaError("ground truth without a category and no model to assign one")
    valid = [g for g in gts if g.pose.num_labeled > 0]
    if not valid:
        raise NoGroundTruth("no ground truth with labeled keypoints")
    if n_categories is None:
        n_categories = model.n_components if model is not None else max(g.category for g in valid) + 1
    per_image = _per_image(preds, gts, sigmas)
    table = {}
    for c in range(n_categories):
        npos = sum(1 for g in valid if g.category == c)
        if npos == 0:
            table[c] = {"count": 0, "ap": None, "ar": None}
            continue
        aps, ars = _threshold_scores(per_image, thresholds, _category_status_fn(c, sigmas), npos)
        table[c] = {"count": npos, "ap": _mean(aps), "ar": _mean(ars)}
    present = [row for row in table.values() if row["ap"] is not None]
    ap_bal = _mean([r["ap"] for r in present])
    ar_bal = _mean([r["ar"] for r in present])
    return ap_bal, ar_bal, table


def evaluate(preds, gts, model=None, thresholds=OKS_THRESHOLDS, sigmas=COCO_SIGMAS) -> EvalReport:
    report = average_precision(preds, gts, thresholds, sigmas)
    if model is not None or all(g.category is not None for g in gts):
        ap_bal, ar_bal, table = balanced_ap(preds, gts, model, thresholds=thresholds, sigmas=sigmas)
        report.ap_bal, report.ar_bal, report.per_category = ap_bal, ar_bal, table
        report.counts["per_category"] = {c: row["count"] for c, row in table.items()}
    return report


def ground_truth_from_dataset(dataset) -> list[GroundTruth]:
    return [
        GroundTruth(inst.image_id, inst.pose, inst.area, inst.bbox, id=inst.instance_id)
        for inst in dataset.instances
    ]


def predictions_from_results(results: Iterable[dict]) -> list[Prediction]:
    out = []
    for i, r in enumerate(results):
        try:
            kps = np.asarray(r["keypoints"], dtype=np.float64)
            if kps.size != 3 * NUM_JOINTS:
                raise SchemaError(f"prediction {i} has {kps.size} keypoint numbers")
            out.append(Prediction(int(r["image_id"]), kps.reshape(NUM_JOINTS, 3)[:, :2], float(r["score"])))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"prediction {i}: {e}") from None
        if not math.isfinite(out[-1].score):
            raise SchemaError(f"prediction {i} has a non-finite score")
    return out


def load_predictions(path) -> list[Prediction]:
    try:
        results = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: {e}") from None
    if not isinstance(results, list):
        raise MalformedFile(f"{path}: results must be a JSON list")
    return predictions_from_results(results)


def predictions_to_results(preds: Iterable[Prediction], category_id: int = 1) -> list[dict]:
    out = []
    for p in preds:
        kps = []
        for x, y in np.asarray(p.keypoints).tolist():
            kps.extend((x, y, 1.0))
        out.append({"image_id": p.image_id, "category_id": category_id, "keypoints": kps, "score": p.score})
    return out
