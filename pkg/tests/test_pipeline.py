"""Pipeline stage internals not reachable through the command line."""

import numpy as np
import pytest

from lfdnet.errors import ConfigError, ManifestError
from lfdnet.manifest import RenderEntry, write_render_manifest
from lfdnet.pipeline import _model_groups, load_view_dataset, resolve_arch
from lfdnet.render import ViewImage, write_pgm


def make_images_dir(tmp_path, entries_spec):
    """entries_spec: (path_stem, label, split, resolution) tuples."""
    entries = []
    for stem, label, split, res in entries_spec:
        images = tuple(f"{stem}_v{v:02d}.pgm" for v in range(20))
        pixels = np.zeros((res, res), dtype=np.uint8)
        for img in images:
            target = tmp_path / img
            target.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(ViewImage(res, res, pixels), target)
        entries.append(
            RenderEntry(f"{stem}.stl", label, split, "0" * 64, res, 0.9, images)
        )
    write_render_manifest(tmp_path, entries)
    return tmp_path


class TestLoadViewDataset:
    def test_loads_all_views(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "train", 16), ("b/y", "b", "test", 16)])
        ds = load_view_dataset(tmp_path)
        assert len(ds) == 40
        assert ds.images.shape == (40, 16, 16)
        assert ds.class_names == ["a", "b"]
        assert ds.model_paths == ["a/x.stl", "b/y.stl"]
        assert ds.view_ids.tolist() == list(range(20)) * 2

    def test_split_filter(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "train", 16), ("b/y", "b", "test", 16)])
        ds = load_view_dataset(tmp_path, "test")
        assert ds.model_paths == ["b/y.stl"]
        # class list still covers both labels when passed explicitly
        ds = load_view_dataset(tmp_path, "test", class_names=["a", "b"])
        assert ds.labels[0] == 1

    def test_bad_split_filter(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "train", 16)])
        with pytest.raises(ValueError, match="split filter must be train or test"):
            load_view_dataset(tmp_path, "validation")

    def test_untagged_manifest_rejected_for_split(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "", 16)])
        with pytest.raises(ManifestError, match="no split tags"):
            load_view_dataset(tmp_path, "train")

    def test_unknown_label_with_explicit_classes(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "train", 16)])
        with pytest.raises(ManifestError, match="labels not in the class list: a"):
            load_view_dataset(tmp_path, class_names=["b", "c"])

    def test_mixed_resolutions_rejected(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "", 16), ("b/y", "b", "", 32)])
        with pytest.raises(ManifestError, match="mixed render resolutions"):
            load_view_dataset(tmp_path)

    def test_image_size_mismatch(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "", 16)])
        write_pgm(ViewImage(8, 8, np.zeros((8, 8), dtype=np.uint8)), tmp_path / "a/x_v03.pgm")
        with pytest.raises(ManifestError, match="size 8x8, expected 16"):
            load_view_dataset(tmp_path)

    def test_threaded_load_matches_serial(self, tmp_path):
        make_images_dir(tmp_path, [("a/x", "a", "", 16), ("b/y", "b", "", 16)])
        serial = load_view_dataset(tmp_path, jobs=1)
        threaded = load_view_dataset(tmp_path, jobs=4)
        assert np.array_equal(serial.images, threaded.images)


class TestResolveArch:
    def test_geometry_defaults_from_dataset(self):
        arch = resolve_arch({}, 256, 43)
        assert arch.input_size == 256
        assert arch.classes == 43

    def test_overrides_win_when_consistent(self):
        arch = resolve_arch({"input_size": 128, "stem_filters": 16}, 128, 8)
        assert arch.stem_filters == 16

    def test_resolution_conflict(self):
        with pytest.raises(ConfigError, match="input size 128 != render resolution 64"):
            resolve_arch({"input_size": 128}, 64, 8)

    def test_class_conflict(self):
        with pytest.raises(ConfigError, match="classes 9 != dataset classes 8"):
            resolve_arch({"classes": 9}, 256, 8)

    def test_invalid_field_value(self):
        with pytest.raises(ConfigError, match="invalid architecture"):
            resolve_arch({"dropout": 1.5}, 256, 8)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="invalid architecture"):
            resolve_arch({"widths": (1, 2)}, 256, 8)


class TestModelGroups:
    def test_groups_by_first_seen_model(self):
        models = ["m1"] * 20 + ["m0"] * 20
        views = list(range(20)) * 2
        groups = _model_groups(models, views)
        assert list(groups) == ["m1", "m0"]
        assert groups["m1"] == list(range(20))

    def test_wrong_view_count(self):
        with pytest.raises(ManifestError, match="expected 20 views, got 19"):
            _model_groups(["m"] * 19, list(range(19)))
