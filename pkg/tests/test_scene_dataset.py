import json
import os

import numpy as np
import pytest

from dydet.shapes import DatasetError, SceneConfig, generate_dataset, generate_scene, load_dataset
from dydet.shapes.dataset import MANIFEST_NAME, decode_scene, encode_scene
from dydet.shapes.report import object_stats, report, summarize


def test_forced_empty_scene():
    scene = generate_scene(SceneConfig(num_objects_range=(0, 0)), seed=3)
    assert scene.boxes.shape == (0, 4)
    assert scene.num_objects == 0


def test_same_seed_is_bit_identical():
    cfg = SceneConfig()
    a, b = generate_scene(cfg, 11), generate_scene(cfg, 11)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.boxes.tobytes() == b.boxes.tobytes()
    assert a.classes.tolist() == b.classes.tolist()


def test_forced_geometry():
    cfg = SceneConfig(num_objects_range=(1, 1), size_range=(0.5, 0.5), noise_sigma=0.0)
    scene = generate_scene(cfg, 5)
    assert scene.num_objects == 1
    assert scene.boxes[0, 2] == 32.0 and scene.boxes[0, 3] == 32.0
    assert scene.image.shape == (1, 64, 64)
    assert 0.0 <= scene.image.min() and scene.image.max() <= 1.0


def test_crowded_config_drops_objects_and_flags_them():
    cfg = SceneConfig(num_objects_range=(12, 12), size_range=(0.45, 0.5), max_overlap_iou=0.0)
    scene = generate_scene(cfg, 0)
    assert scene.truncated
    assert scene.num_objects + scene.dropped_objects == 12


def test_invalid_config_names_the_field():
    with pytest.raises(ValueError, match="size_range"):
        SceneConfig(size_range=(0.5, 0.2))
    with pytest.raises(ValueError, match="num_objects_range"):
        SceneConfig(num_objects_range=(3, 1))


def test_manifest_counts_scenes(tmp_path):
    manifest = generate_dataset(SceneConfig(), 10, seed=0, path=str(tmp_path))
    assert manifest["count"] == 10
    with open(tmp_path / MANIFEST_NAME) as f:
        assert len(json.load(f)["scenes"]) == 10


def test_reload_is_lossless(tmp_path):
    cfg = SceneConfig(image_size=32)
    generate_dataset(cfg, 4, seed=20, path=str(tmp_path))
    ds = load_dataset(str(tmp_path), verify=True)
    for i, loaded in enumerate(ds.scenes):
        orig = generate_scene(cfg, 20 + i)
        assert loaded.scene_id == orig.scene_id
        assert loaded.image.tobytes() == orig.image.tobytes()
        assert loaded.boxes.tobytes() == orig.boxes.tobytes()
        assert loaded.classes.tolist() == orig.classes.tolist()
        assert loaded.dropped_objects == orig.dropped_objects


def test_parallel_generation_matches_serial(tmp_path):
    cfg = SceneConfig(image_size=32)
    a = generate_dataset(cfg, 6, seed=1, path=str(tmp_path / "a"))
    b = generate_dataset(cfg, 6, seed=1, path=str(tmp_path / "b"), workers=3)
    assert a["dataset_id"] == b["dataset_id"]


def test_disjoint_seeds_do_not_collide(tmp_path):
    cfg = SceneConfig(image_size=32)
    generate_dataset(cfg, 5, seed=0, path=str(tmp_path / "a"))
    generate_dataset(cfg, 5, seed=5, path=str(tmp_path / "b"))
    a, b = load_dataset(str(tmp_path / "a")), load_dataset(str(tmp_path / "b"))
    assert not {s.scene_id for s in a.scenes} & {s.scene_id for s in b.scenes}
    assert all(x.image.tobytes() != y.image.tobytes() for x in a.scenes for y in b.scenes)


def test_overlapping_seed_ranges_share_scenes(tmp_path):
    cfg = SceneConfig(image_size=32)
    generate_dataset(cfg, 5, seed=0, path=str(tmp_path / "a"))
    generate_dataset(cfg, 5, seed=1, path=str(tmp_path / "b"))
    a, b = load_dataset(str(tmp_path / "a")), load_dataset(str(tmp_path / "b"))
    shared = {s.scene_id for s in a.scenes} & {s.scene_id for s in b.scenes}
    assert shared == {1, 2, 3, 4}
    by_id = {s.scene_id: s for s in b.scenes}
    assert all(s.image.tobytes() == by_id[s.scene_id].image.tobytes() for s in a.scenes if s.scene_id in shared)


def test_tampered_record_fails_verification(tmp_path):
    generate_dataset(SceneConfig(image_size=32), 2, seed=0, path=str(tmp_path))
    path = tmp_path / "scene_000001.bin"
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(DatasetError, match="hash"):
        load_dataset(str(tmp_path), verify=True)


def test_degenerate_box_rejected_at_decode():
    scene = generate_scene(SceneConfig(image_size=32, num_objects_range=(1, 1)), 0)
    scene.boxes[0, 2] = 0.0
    with pytest.raises(DatasetError, match="degenerate"):
        decode_scene(encode_scene(scene))


def test_missing_dataset_points_at_gen_data(tmp_path):
    with pytest.raises(FileNotFoundError, match="gen-data"):
        load_dataset(str(tmp_path / "nowhere"))


def test_mean_object_count_tracks_range():
    cfg = SceneConfig(num_objects_range=(2, 4), size_range=(0.1, 0.15))
    counts = [generate_scene(cfg, s).num_objects for s in range(200)]
    assert 2.7 < np.mean(counts) < 3.3


def test_object_stats_and_summary():
    cfg = SceneConfig(num_objects_range=(1, 1), size_range=(0.5, 0.5), noise_sigma=0.0)
    scene = generate_scene(cfg, 0)
    st = object_stats(scene)
    assert st.num_objects == 1 and st.mean_size == 32.0 and st.max_pair_iou == 0.0
    s = summarize([scene, generate_scene(SceneConfig(num_objects_range=(0, 0)), 1)], 3)
    assert s["scenes"] == 2 and s["empty_scenes"] == 1
    assert sum(s["per_class"].values()) == 1


def test_report_logs_summary(tmp_path):
    generate_dataset(SceneConfig(image_size=32), 3, seed=0, path=str(tmp_path))
    assert report(str(tmp_path))["scenes"] == 3
