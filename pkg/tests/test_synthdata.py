import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisebox.numerics import ConfigError
from noisebox.synthdata import (CLASS_NAMES, ParseError, classify_layout, gen_scene, layout,
                                read_boxes, read_dataset, read_grid, write_dataset, write_grid)


def test_same_seed_bit_identical():
    a, b = gen_scene(17), gen_scene(17)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.gt.boxes, b.gt.boxes) and np.array_equal(a.gt.labels, b.gt.labels)
    assert not np.array_equal(a.image, gen_scene(18).image)


def test_generator_depends_on_shape_and_classes():
    assert gen_scene(3, 64, 64).image.shape == (1, 64, 64)
    assert set(gen_scene(5, class_count=1).gt.labels.tolist()) <= {0}
    with pytest.raises(ConfigError):
        gen_scene(0, 100, 128)
    with pytest.raises(ConfigError):
        gen_scene(0, class_count=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_scene_invariants(seed):
    s = gen_scene(seed)
    H, W = s.image.shape[1:]
    assert np.all(s.image >= 0)
    assert 1 <= len(s.gt) <= 6
    b = s.gt.boxes
    assert np.all(b[:, :2] - b[:, 2:] / 2 >= -1e-12) and np.all(b[:, :2] + b[:, 2:] / 2 <= 1 + 1e-12)
    assert np.all(b[:, 2] * W >= 4 - 1e-9) and np.all(b[:, 3] * H >= 4 - 1e-9)
    for box, pts in zip(b, s.scatterers):
        assert len(pts) >= 3
        inside = ((np.abs(pts[:, 1] / W - box[0]) <= box[2] / 2 + 1e-9) &
                  (np.abs(pts[:, 0] / H - box[1]) <= box[3] / 2 + 1e-9))
        assert inside.all()


def test_target_contrast_over_100_seeds():
    inside, outside = [], []
    for seed in range(100):
        s = gen_scene(seed)
        img = s.image[0]
        H, W = img.shape
        mask = np.zeros((H, W), bool)
        for cx, cy, w, h in s.gt.boxes:
            mask[int((cy - h / 2) * H):int(np.ceil((cy + h / 2) * H)),
                 int((cx - w / 2) * W):int(np.ceil((cx + w / 2) * W))] = True
        inside.append(img[mask].mean())
        outside.append(img[~mask].mean())
    assert np.mean(inside) > 3 * np.mean(outside)


@pytest.mark.parametrize("cls", range(len(CLASS_NAMES)))
def test_layouts_classified_perfectly(cls):
    rng = np.random.default_rng(cls)
    for count in range(3, 10):
        for _ in range(5):
            assert classify_layout(layout(cls, count, rng)) == cls


def test_layout_unknown_class():
    with pytest.raises(ConfigError):
        layout(3, 4, np.random.default_rng(0))


def test_dataset_roundtrip(tmp_path):
    scenes = write_dataset(tmp_path, [4, 1, 9])
    back = read_dataset(tmp_path)
    assert [s.seed for s in back] == [1, 4, 9]
    by_seed = {s.seed: s for s in scenes}
    for s in back:
        ref = by_seed[s.seed]
        np.testing.assert_array_equal(s.gt.boxes, ref.gt.boxes)
        np.testing.assert_array_equal(s.gt.labels, ref.gt.labels)
        np.testing.assert_allclose(s.image, ref.image, rtol=2**-23)
    assert (tmp_path / "scene_4.boxes.csv").read_text().splitlines()[0] == "class,cx,cy,w,h"


def test_empty_dataset(tmp_path):
    assert write_dataset(tmp_path / "d", []) == []
    assert read_dataset(tmp_path / "d") == []


def test_grid_header_layout(tmp_path):
    p = tmp_path / "g.grid"
    write_grid(p, np.arange(6.0).reshape(1, 2, 3))
    raw = p.read_bytes()
    assert raw[:4] == b"MDG1" and raw[4:12] == bytes([2, 0, 0, 0, 3, 0, 0, 0])
    np.testing.assert_array_equal(read_grid(p)[0], np.arange(6.0).reshape(2, 3))


def test_truncated_grid_names_offset(tmp_path):
    p = tmp_path / "g.grid"
    write_grid(p, np.ones((1, 4, 4)))
    p.write_bytes(p.read_bytes()[:40])
    with pytest.raises(ParseError, match="byte offset 40"):
        read_grid(p)
    p.write_bytes(b"MDG")
    with pytest.raises(ParseError, match="byte offset 3"):
        read_grid(p)
    p.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ParseError, match="magic"):
        read_grid(p)


def test_box_csv_errors_name_file_and_line(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("class,cx,cy\n")
    with pytest.raises(ParseError, match=r"b\.csv:1"):
        read_boxes(p)
    p.write_text("class,cx,cy,w,h\n0,0.5,0.5,0.1,0.1\n1,0.2,oops,0.1,0.1\n")
    with pytest.raises(ParseError, match=r"b\.csv:3"):
        read_boxes(p)
    p.write_text("class,cx,cy,w,h\n0,0.5,0.5\n")
    with pytest.raises(ParseError, match=r"b\.csv:2"):
        read_boxes(p)


def test_missing_box_file(tmp_path):
    write_dataset(tmp_path, [2])
    (tmp_path / "scene_2.boxes.csv").unlink()
    with pytest.raises(ParseError, match="missing box file"):
        read_dataset(tmp_path)
