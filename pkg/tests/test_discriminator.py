import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import finite_difference, logistic_regression_accuracy
from posetrans import discriminator as D
from posetrans.errors import DimensionMismatch, InsufficientData, MalformedFile
from posetrans.types import NUM_JOINTS, NormalizedPose

BASE = np.array([
    [0.50, 0.10], [0.52, 0.08], [0.48, 0.08], [0.54, 0.09], [0.46, 0.09],
    [0.60, 0.25], [0.40, 0.25], [0.62, 0.40], [0.38, 0.40], [0.63, 0.55], [0.37, 0.55],
    [0.56, 0.55], [0.44, 0.55], [0.57, 0.72], [0.43, 0.72], [0.57, 0.90], [0.43, 0.90],
])


def arm_pose(elbow_deg, rng=None, jitter=0.0):
    """BASE with both forearms bent to the given interior elbow angle."""
    xy = BASE.copy()
    if rng is not None:
        xy = xy + rng.normal(0, jitter, xy.shape)
    for sh, el, wr in ((5, 7, 9), (6, 8, 10)):
        up = xy[sh] - xy[el]
        t = math.radians(elbow_deg) * (1 if sh == 5 else -1)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        xy[wr] = xy[el] + rot @ up * 0.9
    return NormalizedPose(np.clip(xy, 0, 1), np.full(NUM_JOINTS, 2))


def test_feature_examples():
    f = D.extract_pose_features(arm_pose(180.0))
    assert f.shape == (D.FEATURE_DIM,) == (124,)
    assert f[54:56] == pytest.approx([0.0, -1.0], abs=1e-12)
    assert f[50] == pytest.approx(0.9, abs=1e-12)
    bent = D.extract_pose_features(arm_pose(90.0))
    assert bent[54:56] == pytest.approx([1.0, 0.0], abs=1e-12)
    assert bent[56:58] == pytest.approx([1.0, 0.0], abs=1e-12)
    # left upper arm points straight down the image in BASE: (dy, dx) / n
    down = NormalizedPose(np.where(np.arange(17)[:, None] == 7, [0.60, 0.40], BASE), np.full(17, 2))
    assert D.extract_pose_features(down)[34:36] == pytest.approx([1.0, 0.0])
    empty = D.extract_pose_features(NormalizedPose(np.zeros((17, 2)), np.zeros(17)))
    assert not empty.any()
    assert D.extract_pose_features(arm_pose(120.0))[62:].all()


def test_missing_joint_clears_dependent_features():
    vis = np.full(NUM_JOINTS, 2)
    vis[7] = 0
    f = D.extract_pose_features(NormalizedPose(BASE, vis))
    present = f[62:]
    assert present[14] == present[15] == 0
    assert present[34] == present[42] == 0  # left upper and lower arm directions
    assert present[50] == present[54] == present[55] == 0
    assert present[51] == 1


@given(st.integers(0, 2**32 - 1))
def test_features_are_bounded(seed):
    rng = np.random.default_rng(seed)
    pose = NormalizedPose(rng.random((17, 2)), rng.integers(0, 3, 17))
    f = D.extract_pose_features(pose)
    assert np.all(np.isfinite(f)) and f.min() >= -1 and f.max() <= D.MAX_RATIO
    assert set(np.unique(f[62:])) <= {0.0, 1.0}


def test_forward_examples(rng):
    zero = D.DiscriminatorModel([np.zeros((124, 4)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)])
    assert D.forward(zero, rng.random(124)) == 0.5
    w, b = rng.normal(size=(124, 1)), np.array([0.3])
    one = D.DiscriminatorModel([w], [b])
    x = rng.random(124)
    assert D.forward(one, x) == pytest.approx(1 / (1 + math.exp(-(x @ w[:, 0] + 0.3))), rel=1e-12)
    with pytest.raises(DimensionMismatch):
        D.forward(one, np.zeros(10))


def test_threshold_extremes(rng):
    m = D.init_model([124, 8, 1], rng)
    m.biases[-1][:] = 500.0
    pose = arm_pose(120.0)
    assert 0.0 < D.score_pose(m, pose) < 1.0
    assert D.is_plausible(m, pose, threshold=0.0)
    assert not D.is_plausible(m, pose, threshold=1.0)
    m.biases[-1][:] = -500.0
    assert D.score_pose(m, pose) > 0.0 and D.is_plausible(m, pose, threshold=0.0)


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_gradients_match_finite_differences(rng):
    m = D.init_model([124, 64, 32, 1], rng)
    for b in m.biases:
        b += rng.normal(0, 0.1, b.shape)
    Xr, Xf = rng.random((6, 124)), rng.random((5, 124))
    _, grads = D.loss_and_grads(m, Xr, Xf)
    numeric = finite_difference(lambda: D.lsgan_loss(m, Xr, Xf), m.params)
    for g, n in zip(grads, numeric):
        assert rel_error(g, n) <= 1e-4


def elbow_data(rng, n, lo, hi):
    return [arm_pose(float(a), rng, 0.01) for a in rng.uniform(lo, hi, n)]


def test_separable_elbow_task(rng):
    real, fake = elbow_data(rng, 400, 90, 180), elbow_data(rng, 400, 0, 30)
    cfg = D.TrainConfig(epochs=30)
    model = D.train_discriminator(real, lambda r, g: fake, cfg, np.random.default_rng(0))
    tr, te = elbow_data(rng, 300, 90, 180), elbow_data(rng, 300, 0, 30)
    Xr, Xf = D.features_matrix(tr), D.features_matrix(te)
    assert D.accuracy(model, Xr, Xf) >= 0.95
    Xtr = np.vstack([D.features_matrix(real), D.features_matrix(fake)])
    ytr = np.r_[np.ones(len(real)), np.zeros(len(fake))]
    assert logistic_regression_accuracy(Xtr, ytr, np.vstack([Xr, Xf]), np.r_[np.ones(300), np.zeros(300)]) >= 0.95


def test_indistinguishable_data_gives_half_loss(rng):
    poses = elbow_data(rng, 600, 60, 180)
    X = D.features_matrix(poses)
    m = D.train_on_features(X[:300], X[300:], D.TrainConfig(epochs=20), np.random.default_rng(3))
    assert D.lsgan_loss(m, X[:300], X[300:]) == pytest.approx(0.5, abs=0.05)


def test_training_is_deterministic_and_round_trips(tmp_path, rng):
    real, fake = elbow_data(rng, 120, 90, 180), elbow_data(rng, 120, 0, 30)
    cfg = D.TrainConfig(epochs=3)
    a = D.train_discriminator(real, lambda r, g: fake, cfg, np.random.default_rng(9))
    b = D.train_discriminator(real, lambda r, g: fake, cfg, np.random.default_rng(9))
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    assert len(a.history) == 3 and 1 <= a.best_epoch <= 3
    path = tmp_path / "d.json"
    D.save_checkpoint(a, path)
    c = D.load_checkpoint(path)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, c.params))
    assert c.config == cfg and c.threshold == a.threshold
    path.write_text("{")
    with pytest.raises(MalformedFile):
        D.load_checkpoint(path)


def test_too_few_real_poses(rng):
    with pytest.raises(InsufficientData):
        D.train_discriminator(elbow_data(rng, 10, 90, 180), lambda r, g: r)
