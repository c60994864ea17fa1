import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from posetrans.errors import (
    DegenerateBox,
    DimensionMismatch,
    LabelOutOfRange,
    MalformedFile,
    SchemaError,
    ValidationError,
)
from posetrans.ingest import (
    MISSING_FILL,
    Dataset,
    ParsingMask,
    crop_and_normalize,
    dataset_to_coco,
    limb_region,
    load_coco_annotations,
    load_limb_mapping,
    load_parsing_mask,
    mask_filename,
    normalize_pose,
    parse_coco,
    save_parsing_mask,
)
from posetrans.types import LIMBS, PersonInstance, Pose

FIXTURE = Path(__file__).parent / "fixtures" / "five_annotations.json"


def one_annotation(vis=2, **extra):
    kps = []
    for j in range(17):
        kps += [10.0 + j, 20.0 + j, vis]
    ann = {"id": 1, "image_id": 1, "bbox": [0, 0, 50, 50], "area": 2500.0, "keypoints": kps}
    ann.update(extra)
    return {"images": [{"id": 1, "file_name": "a.png", "width": 64, "height": 64}], "annotations": [ann]}


def test_minimal_document():
    ds = parse_coco(one_annotation())
    assert len(ds.instances) == 1 and ds.drop_count == 0


def test_all_invisible_annotation_is_dropped():
    ds = parse_coco(one_annotation(vis=0))
    assert ds.instances == [] and ds.drop_count == 1


def test_fixture_counts_match_independent_json_count():
    doc = json.loads(FIXTURE.read_text())
    expected = sorted(a["id"] for a in doc["annotations"] if any(v > 0 for v in a["keypoints"][2::3]))
    ds = load_coco_annotations(FIXTURE)
    assert [i.instance_id for i in ds.instances] == expected
    assert len(ds.instances) == 4 and ds.drop_count == 1


def test_loading_is_deterministic():
    a, b = load_coco_annotations(FIXTURE), load_coco_annotations(FIXTURE)
    assert [(i.instance_id, i.pose) for i in a.instances] == [(i.instance_id, i.pose) for i in b.instances]


def test_malformed_and_schema_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(MalformedFile):
        load_coco_annotations(bad)
    doc = one_annotation()
    del doc["annotations"][0]["bbox"]
    with pytest.raises(SchemaError) as e:
        parse_coco(doc)
    assert e.value.annotation_id == 1
    doc = one_annotation()
    doc["annotations"][0]["keypoints"] = [1, 2, 2]
    with pytest.raises(SchemaError):
        parse_coco(doc)
    doc = one_annotation()
    doc["annotations"][0]["image_id"] = 99
    with pytest.raises(SchemaError):
        parse_coco(doc)


def test_sigma_length_checked():
    doc = one_annotation()
    doc["categories"] = [{"id": 1, "sigmas": [0.1] * 5}]
    with pytest.raises(SchemaError):
        parse_coco(doc)


def test_coco_round_trip_preserves_instances():
    ds = load_coco_annotations(FIXTURE)
    again = parse_coco(dataset_to_coco(ds))
    assert [(i.instance_id, i.image_id, i.bbox, i.pose, i.area) for i in again.instances] == \
        [(i.instance_id, i.image_id, i.bbox, i.pose, i.area) for i in ds.instances]
    assert again.category.sigmas == ds.category.sigmas


def test_mask_all_zero_gives_empty_regions(tmp_path):
    path = tmp_path / mask_filename(1, 2)
    save_parsing_mask(path, np.zeros((8, 8), np.uint8))
    m = load_parsing_mask(path, (8, 8))
    assert all(not limb_region(m, limb).any() for limb in LIMBS)


def test_mask_block_pixel_count(tmp_path):
    labels = np.zeros((30, 30), np.uint8)
    labels[5:15, 7:17] = 5
    path = tmp_path / "m.png"
    Image.fromarray(labels, mode="L").save(path)
    independent = int((np.asarray(Image.open(path)) == 5).sum())
    m = load_parsing_mask(path)
    assert m.part_region(5).sum() == independent == 100


def test_mask_dimension_and_label_errors(tmp_path):
    path = tmp_path / "m.png"
    save_parsing_mask(path, np.zeros((10, 10), np.uint8))
    with pytest.raises(DimensionMismatch):
        load_parsing_mask(path, (20, 20))
    Image.fromarray(np.full((4, 4), 15, np.uint8), mode="L").save(path)
    with pytest.raises(LabelOutOfRange):
        load_parsing_mask(path)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(path)
    with pytest.raises(MalformedFile):
        load_parsing_mask(path)
    with pytest.raises(LabelOutOfRange):
        ParsingMask(np.full((2, 2), 20))


def test_limb_region_uses_mapping_union():
    labels = np.zeros((6, 6), np.uint8)
    labels[1:3, 1:3] = 5
    m = ParsingMask(labels)
    limb = LIMBS[0]
    assert np.array_equal(limb_region(m, limb, {0: {5, 6}}), labels == 5)
    assert not limb_region(m, limb, {0: {7}}).any()


def test_limb_mapping_file(tmp_path):
    path = tmp_path / "map.json"
    path.write_text(json.dumps({str(i): [i + 1] for i in range(8)}))
    assert load_limb_mapping(path)[3] == frozenset({4})
    path.write_text(json.dumps({"left_upper_arm": [1]}))
    with pytest.raises(SchemaError):
        load_limb_mapping(path)


def _inst(coords, vis, bbox):
    return PersonInstance(1, 1, bbox, Pose(coords, vis), 1.0)


def test_normalize_examples():
    coords = np.zeros((17, 2))
    coords[0] = (10, 20)
    coords[1] = (60, 120)
    coords[2] = (60, 120)
    vis = np.zeros(17, int)
    vis[:2] = 2
    n = crop_and_normalize(_inst(coords, vis, (10, 20, 100, 200)))
    assert tuple(n.coords[0]) == (0.0, 0.0)
    assert tuple(n.coords[1]) == (0.5, 0.5)
    assert tuple(n.coords[2]) == (MISSING_FILL, MISSING_FILL)


def test_degenerate_box():
    with pytest.raises(DegenerateBox):
        normalize_pose(Pose(np.zeros((17, 2)), np.full(17, 2)), (0, 0, 0, 10))
    assert issubclass(DegenerateBox, ValidationError)


finite = st.floats(-500, 500, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=17, max_size=17),
       st.lists(st.integers(0, 2), min_size=17, max_size=17),
       st.tuples(finite, finite, st.floats(1, 300), st.floats(1, 300)),
       st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)))
def test_normalization_in_unit_square_and_translation_invariant(coords, vis, bbox, shift):
    coords = np.asarray(coords)
    a = normalize_pose(Pose(coords, vis), bbox)
    assert a.coords.min() >= 0.0 and a.coords.max() <= 1.0
    dx, dy = shift
    b = normalize_pose(Pose(coords + [dx, dy], vis), (bbox[0] + dx, bbox[1] + dy, bbox[2], bbox[3]))
    assert np.allclose(a.coords, b.coords, atol=1e-12, rtol=0)


def test_dataset_requires_listed_images():
    with pytest.raises(SchemaError):
        Dataset([], [_inst(np.zeros((17, 2)), np.full(17, 2), (0, 0, 1, 1))])
