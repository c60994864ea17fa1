"""Pose plausibility scorer trained with the least-squares GAN objective.

The scorer looks at pose geometry only. A normalized pose is turned into a
fixed 124-value feature vector (62 geometric values followed by a presence
flag for each) and fed to a small tanh MLP with a sigmoid head. Training
minimises ``E[(D(real) - 1)^2] + E[D(fake)^2]`` with hand-written backprop
and momentum SGD.

Feature layout (offsets into the first 62 values)::

     0..33  normalized x, y per joint
    34..49  (sin, cos) of each limb direction, limbs 0..7
    50..53  lower/upper segment length ratio: l-arm, r-arm, l-leg, r-leg
    54..61  (sin, cos) of the interior elbow/knee angle, same order
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, Diverged, InsufficientData, MalformedFile
from .types import LIMBS, NUM_JOINTS, NormalizedPose

N_GEOM = 2 * NUM_JOINTS + 16 + 4 + 8
FEATURE_DIM = 2 * N_GEOM
# (upper limb, lower limb) per extremity
EXTREMITIES = ((0, 4), (1, 5), (2, 6), (3, 7))
MAX_RATIO = 10.0
CHECKPOINT_FORMAT = "posetrans-discriminator"
CHECKPOINT_VERSION = 1
_OUT_LO = np.nextafter(0.0, 1.0)
_OUT_HI = np.nextafter(1.0, 0.0)


def extract_pose_features(pose: NormalizedPose) -> np.ndarray:
    """Geometric features of ``pose`` followed by their presence flags."""
    xy = pose.coords
    lab = pose.vis > 0
    f = np.zeros(N_GEOM)
    present = np.zeros(N_GEOM)

    f[: 2 * NUM_JOINTS] = np.where(lab[:, None], xy, 0.0).reshape(-1)
    present[: 2 * NUM_JOINTS] = np.repeat(lab, 2)

    lengths = {}
    for limb in LIMBS:
        a, b = limb.src_joint, limb.dst_joint
        if not (lab[a] and lab[b]):
            continue
        v = xy[b] - xy[a]
        n = math.hypot(v[0], v[1])
        if n == 0.0:
            continue
        lengths[limb.id] = n
        o = 34 + 2 * limb.id
        f[o], f[o + 1] = v[1] / n, v[0] / n
        present[o:o + 2] = 1.0

    for e, (up, lo) in enumerate(EXTREMITIES):
        if up not in lengths or lo not in lengths:
            continue
        f[50 + e] = min(lengths[lo] / lengths[up], MAX_RATIO)
        present[50 + e] = 1.0
        mid = LIMBS[up].dst_joint
        a = xy[LIMBS[up].src_joint] - xy[mid]
        b = xy[LIMBS[lo].dst_joint] - xy[mid]
        norm = lengths[up] * lengths[lo]
        c = float(a @ b) / norm
        s = abs(float(a[0] * b[1] - a[1] * b[0])) / norm
        r = math.hypot(s, c)
        o = 54 + 2 * e
        f[o], f[o + 1] = s / r, c / r
        present[o:o + 2] = 1.0

    return np.concatenate([f, present])


def features_matrix(poses: Sequence[NormalizedPose]) -> np.ndarray:
    if len(poses) == 0:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([extract_pose_features(p) for p in poses])


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 32)
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 200
    holdout: float = 0.2
    min_real: int = 100


@dataclass(eq=False)
class DiscriminatorModel:
    weights: list
    biases: list
    threshold: float = 0.7
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> DiscriminatorModel:
        return DiscriminatorModel(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.threshold, self.config, list(self.history), self.best_epoch,
        )


def init_model(layer_sizes: Sequence[int], rng: np.random.Generator, threshold: float = 0.7,
               config: TrainConfig | None = None) -> DiscriminatorModel:
    """Glorot-uniform weights, zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return DiscriminatorModel(ws, bs, threshold, config or TrainConfig())


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(model: DiscriminatorModel, X: np.ndarray):
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = _sigmoid(z) if i == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(model: DiscriminatorModel, feats: np.ndarray) -> np.ndarray | float:
    """Plausibility in the open interval (0, 1); batched if ``feats`` is 2-D."""
    X = np.asarray(feats, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != model.input_dim:
        raise DimensionMismatch(f"features have length {X2.shape[1]}, model expects {model.input_dim}")
    out = np.clip(_forward(model, X2)[-1][:, 0], _OUT_LO, _OUT_HI)
    return float(out[0]) if single else out


def score_pose(model: DiscriminatorModel, pose: NormalizedPose, image=None) -> float:
    # ``image`` is accepted for interface compatibility with image-aware scorers; unused.
    return forward(model, extract_pose_features(pose))


def is_plausible(model: DiscriminatorModel, pose: NormalizedPose, threshold: float | None = None) -> bool:
    e = model.threshold if threshold is None else threshold
    return score_pose(model, pose) >= e


def lsgan_loss(model: DiscriminatorModel, X_real: np.ndarray, X_fake: np.ndarray) -> float:
    loss = 0.0
    if len(X_real):
        loss += float(np.mean((_forward(model, X_real)[-1][:, 0] - 1.0) ** 2))
    if len(X_fake):
        loss += float(np.mean(_forward(model, X_fake)[-1][:, 0] ** 2))
    return loss


def loss_and_grads(model: DiscriminatorModel, X_real: np.ndarray, X_fake: np.ndarray):
    """LS-GAN loss and its gradient w.r.t. every weight and bias (same order as ``params``)."""
    X = np.concatenate([X_real, X_fake], axis=0)
    nr, nf = len(X_real), len(X_fake)
    acts = _forward(model, X)
    d = acts[-1][:, 0]
    target = np.concatenate([np.ones(nr), np.zeros(nf)])
    scale = np.concatenate([np.full(nr, 1.0 / nr if nr else 0.0), np.full(nf, 1.0 / nf if nf else 0.0)])
    resid = d - target
    loss = float(np.sum(scale * resid ** 2))
    # dL/dz at the sigmoid head
    delta = (2.0 * scale * resid * d * (1.0 - d))[:, None]
    grads_w, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    grads_w.reverse()
    grads_b.reverse()
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    return loss, grads


def _split(n: int, holdout: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    k = int(round(n * holdout))
    return perm[k:], perm[:k]


def train_discriminator(
    real_poses: Sequence[NormalizedPose],
    fake_generator: Callable[[Sequence[NormalizedPose], np.random.Generator], Sequence[NormalizedPose]],
    hyper: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    threshold: float = 0.7,
) -> DiscriminatorModel:
    """Train D on real poses against ``fake_generator(real_poses, rng)``.

    Mini-batches hold equal numbers of real and fake samples. After every
    epoch the LS-GAN loss on a held-out split is measured; the parameters with
    the lowest held-out loss are returned, with the per-epoch history attached.
    """
    hyper = hyper or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if len(real_poses) < hyper.min_real:
        raise InsufficientData("too few real poses to train the discriminator",
                               count=len(real_poses), required=hyper.min_real)
    fakes = fake_generator(real_poses, rng)
    if len(fakes) == 0:
        raise InsufficientData("fake generator produced no poses", count=0)
    Xr = features_matrix(real_poses)
    Xf = features_matrix(fakes)
    return train_on_features(Xr, Xf, hyper, rng, threshold)


def train_on_features(Xr: np.ndarray, Xf: np.ndarray, hyper: TrainConfig, rng: np.random.Generator,
                      threshold: float = 0.7) -> DiscriminatorModel:
    tr_r, ho_r = _split(len(Xr), hyper.holdout, rng)
    tr_f, ho_f = _split(len(Xf), hyper.holdout, rng)
    Xr_tr, Xr_ho, Xf_tr, Xf_ho = Xr[tr_r], Xr[ho_r], Xf[tr_f], Xf[ho_f]
    if len(Xr_ho) == 0 or len(Xf_ho) == 0:
        Xr_ho, Xf_ho = Xr_tr, Xf_tr

    sizes = [Xr.shape[1], *hyper.hidden, 1]
    model = init_model(sizes, rng, threshold, hyper)
    velocity = [np.zeros_like(p) for p in model.params]
    half = max(hyper.batch_size // 2, 1)
    best, best_loss, history = model.copy(), math.inf, []
    best.best_epoch = 0

    for epoch in range(1, hyper.epochs + 1):
        pr = rng.permutation(len(Xr_tr))
        pf = rng.permutation(len(Xf_tr))
        steps = max(math.ceil(len(pr) / half), math.ceil(len(pf) / half))
        losses = []
        for s in range(steps):
            br = Xr_tr[pr[np.arange(s * half, (s + 1) * half) % len(pr)]]
            bf = Xf_tr[pf[np.arange(s * half, (s + 1) * half) % len(pf)]]
            loss, grads = loss_and_grads(model, br, bf)
            if not math.isfinite(loss):
                raise Diverged(f"loss became {loss} at epoch {epoch}")
            losses.append(loss)
            for p, v, g in zip(model.params, velocity, grads):
                v *= hyper.momentum
                v -= hyper.lr * g
                p += v
            if not all(np.all(np.isfinite(p)) for p in model.params):
                raise Diverged(f"non-finite weights at epoch {epoch}")
        held = lsgan_loss(model, Xr_ho, Xf_ho)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "heldout_loss": held})
        if held < best_loss:
            best_loss = held
            best = model.copy()
            best.best_epoch = epoch
    best.history = history
    return best


def accuracy(model: DiscriminatorModel, X_real: np.ndarray, X_fake: np.ndarray, cutoff: float = 0.5) -> float:
    correct = np.count_nonzero(forward(model, X_real) >= cutoff) + np.count_nonzero(forward(model, X_fake) < cutoff)
    return correct / (len(X_real) + len(X_fake))


def model_to_dict(model: DiscriminatorModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_dim": model.input_dim,
        "hidden_activation": "tanh",
        "output_activation": "sigmoid",
        "threshold": model.threshold,
        "layers": [
            {"in": w.shape[0], "out": w.shape[1], "weights": w.reshape(-1).tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
        "training": {
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.config).items()},
            "best_epoch": model.best_epoch,
            "history": model.history,
        },
    }


def model_from_dict(d: dict) -> DiscriminatorModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise MalformedFile(f"not a {CHECKPOINT_FORMAT} record")
    if d.get("version") != CHECKPOINT_VERSION:
        raise MalformedFile(f"unsupported checkpoint version {d.get('version')}")
    ws, bs = [], []
    for layer in d["layers"]:
        ws.append(np.asarray(layer["weights"], dtype=np.float64).reshape(layer["in"], layer["out"]))
        bs.append(np.asarray(layer["bias"], dtype=np.float64))
    training = d.get("training", {})
    cfg = training.get("config", {})
    if "hidden" in cfg:
        cfg = dict(cfg, hidden=tuple(cfg["hidden"]))
    return DiscriminatorModel(ws, bs, float(d.get("threshold", 0.7)), TrainConfig(**cfg),
                              list(training.get("history", [])), training.get("best_epoch"))


def save_checkpoint(model: DiscriminatorModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_checkpoint(path) -> DiscriminatorModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: {e}") from None
