import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posetrans.errors import ValidationError
from posetrans.types import (
    COCO_SIGMAS,
    DEFAULT_LIMB_LABELS,
    JOINT_NAMES,
    LIMBS,
    NUM_JOINTS,
    AugConfig,
    Keypoint,
    LimbTransform,
    NormalizedPose,
    Pose,
    Visibility,
    make_limbs,
)

coord = st.floats(-1e4, 1e4, allow_nan=False)
flat_coco = st.lists(st.tuples(coord, coord, st.integers(0, 2)), min_size=NUM_JOINTS, max_size=NUM_JOINTS)


def test_joint_tables_have_coco_length():
    assert len(JOINT_NAMES) == NUM_JOINTS == len(COCO_SIGMAS) == 17


def test_limb_table_is_forest_of_depth_one():
    assert len(LIMBS) == 8
    for limb in LIMBS:
        assert 0 <= limb.src_joint < NUM_JOINTS and 0 <= limb.dst_joint < NUM_JOINTS
        if limb.parent is not None:
            parent = LIMBS[limb.parent]
            assert parent.parent is None
            assert parent.dst_joint == limb.src_joint
    uppers = [limb for limb in LIMBS if limb.parent is None]
    assert len(uppers) == 4


def test_rotation_centres_are_shoulder_elbow_hip_knee():
    names = {limb.name: JOINT_NAMES[limb.src_joint] for limb in LIMBS}
    assert names["left_upper_arm"] == "left_shoulder"
    assert names["left_lower_arm"] == "left_elbow"
    assert names["right_upper_leg"] == "right_hip"
    assert names["right_lower_leg"] == "right_knee"


def test_limb_mapping_validation():
    with pytest.raises(ValidationError):
        make_limbs({k: v for k, v in DEFAULT_LIMB_LABELS.items() if k != 3})
    with pytest.raises(ValidationError):
        make_limbs({**DEFAULT_LIMB_LABELS, 2: []})
    with pytest.raises(ValidationError):
        make_limbs({**DEFAULT_LIMB_LABELS, 2: [15]})
    custom = make_limbs({**DEFAULT_LIMB_LABELS, 0: [3, 4]})
    assert custom[0].part_labels == frozenset({3, 4})


@given(flat_coco)
def test_pose_coco_round_trip(triples):
    flat = [v for t in triples for v in t]
    pose = Pose.from_coco(flat)
    again = Pose.from_coco(pose.to_coco())
    assert again == pose and hash(again) == hash(pose)
    assert np.all(pose.coords[pose.vis == 0] == 0.0)


def test_pose_rejects_wrong_length_and_flags():
    with pytest.raises(ValidationError):
        Pose(np.zeros((16, 2)), np.zeros(16))
    with pytest.raises(ValidationError):
        Pose(np.zeros((17, 2)), np.full(17, 3))
    with pytest.raises(ValidationError):
        Pose(np.full((17, 2), np.nan), np.full(17, 2))


def test_pose_is_immutable():
    pose = Pose(np.zeros((17, 2)), np.full(17, 2))
    with pytest.raises(ValueError):
        pose.coords[0, 0] = 1.0


def test_unlabeled_coordinates_ignored():
    pose = Pose([(5.0, 5.0)] * 17, [0] * 17)
    assert pose == Pose(np.zeros((17, 2)), np.zeros(17))
    assert pose.keypoint(3) == Keypoint(0.0, 0.0, Visibility.NOT_LABELED)


def test_normalized_pose_range_checked():
    with pytest.raises(ValidationError):
        NormalizedPose(np.full((17, 2), 1.5), np.full(17, 2))
    p = NormalizedPose(np.full((17, 2), 0.25), np.full(17, 2))
    assert p.as_vector().shape == (34,)


def test_aug_config_defaults():
    c = AugConfig()
    assert c.per_limb_prob == 0.5
    assert c.scale_range == (0.75, 1.25)
    assert c.rotation_range == pytest.approx((math.radians(-35), math.radians(35)))
    assert (c.pool_size, c.plausibility_threshold, c.n_components) == (5, 0.7, 20)
    assert c.sigma_scale == pytest.approx(0.125)
    assert c.sigma_rotation == pytest.approx(math.radians(17.5))


def test_aug_config_round_trip_and_degree_keys():
    c = AugConfig(per_limb_prob=0.3, pool_size=3)
    assert AugConfig.from_dict(c.to_dict()) == c
    d = AugConfig.from_dict({"rotation_range_deg": [-10, 20], "rotation_std_deg": 5})
    assert d.rotation_range == pytest.approx((math.radians(-10), math.radians(20)))
    assert d.sigma_rotation == pytest.approx(math.radians(5))
    with pytest.raises(ValidationError):
        AugConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("kw", [
    {"per_limb_prob": 1.5}, {"scale_range": (0.0, 1.0)}, {"scale_range": (1.2, 1.0)},
    {"rotation_range": (1.0, -1.0)}, {"pool_size": 0}, {"plausibility_threshold": -0.1},
    {"n_components": 0}, {"max_pool_attempts": 0}, {"scale_std": -1.0},
])
def test_aug_config_rejects_bad_values(kw):
    with pytest.raises(ValidationError):
        AugConfig(**kw)


def test_widened_ranges():
    w = AugConfig().widened()
    assert w.scale_range == (0.4, 1.8)
    assert w.rotation_range == pytest.approx((math.radians(-120), math.radians(120)))


def test_limb_transform_round_trip():
    t = LimbTransform(1.1, -0.2)
    assert LimbTransform.from_dict(t.to_dict()) == t
    with pytest.raises(ValidationError):
        LimbTransform(float("inf"), 0.0)
