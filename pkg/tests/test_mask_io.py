import math

import numpy as np
import pytest
from hypothesis import given, settings
from PIL import Image

from segcurate.mask_io import (
    DatasetManifest,
    ManifestError,
    MaskError,
    SampleRecord,
    dataset_stats,
    load_manifest,
    load_mask,
    sample_training_mask,
    save_manifest,
    save_mask,
    split_dataset,
)

from .conftest import masks


def _synthetic_manifest(n, counts=None):
    counts = counts or [1] * n
    recs = [
        SampleRecord.from_masks(f"s{i:05d}", [np.zeros((2, 2), bool)] * k)
        for i, k in enumerate(counts)
    ]
    return DatasetManifest("synthetic", recs)


class TestLoadSave:
    def test_saturated_image_is_all_foreground(self, tmp_path):
        Image.fromarray(np.full((4, 4), 255, np.uint8)).save(tmp_path / "a.png")
        m = load_mask(tmp_path / "a.png")
        assert m.shape == (4, 4) and m.all()

    def test_threshold_is_strictly_above_127(self, tmp_path):
        img = np.full((3, 3), 128, np.uint8)
        img[1, 2] = 127
        Image.fromarray(img).save(tmp_path / "t.png")
        m = load_mask(tmp_path / "t.png")
        expected = np.ones((3, 3), bool)
        expected[1, 2] = False
        np.testing.assert_array_equal(m, expected)

    def test_color_goes_through_luminance(self, tmp_path):
        rgb = np.zeros((1, 3, 3), np.uint8)
        rgb[0, 0] = (255, 255, 255)
        rgb[0, 1] = (255, 0, 0)  # luma 76
        rgb[0, 2] = (0, 255, 0)  # luma 150
        Image.fromarray(rgb, "RGB").save(tmp_path / "c.png")
        np.testing.assert_array_equal(load_mask(tmp_path / "c.png"), [[True, False, True]])

    @pytest.mark.parametrize(
        "mask, value",
        [
            (np.zeros((2, 2), bool), 0),
            (np.ones((2, 2), bool), 255),
        ],
    )
    def test_saved_pixel_values(self, tmp_path, mask, value):
        save_mask(mask, tmp_path / "m.png")
        with Image.open(tmp_path / "m.png") as img:
            assert img.mode == "L"
            assert (np.asarray(img) == value).all()

    def test_checkerboard_file(self, tmp_path):
        save_mask(np.array([[1, 0], [0, 1]], bool), tmp_path / "m.png")
        with Image.open(tmp_path / "m.png") as img:
            np.testing.assert_array_equal(np.asarray(img), [[255, 0], [0, 255]])

    @settings(max_examples=50, deadline=None)
    @given(masks(max_side=12))
    def test_round_trip(self, tmp_path_factory, mask):
        path = tmp_path_factory.mktemp("rt") / "m.png"
        save_mask(mask, path)
        np.testing.assert_array_equal(load_mask(path), mask)

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(MaskError):
            load_mask(tmp_path / "bad.png")
        with pytest.raises(MaskError):
            load_mask(tmp_path / "missing.png")

    def test_save_into_missing_directory(self, tmp_path):
        with pytest.raises(MaskError):
            save_mask(np.zeros((2, 2), bool), tmp_path / "nope" / "m.png")

    def test_zero_dimension_rejected(self, tmp_path):
        with pytest.raises(MaskError):
            save_mask(np.zeros((0, 3), bool), tmp_path / "m.png")


class TestManifest:
    def test_rows_grouped_by_sample(self, write_dataset):
        z = np.zeros((3, 3), bool)
        path = write_dataset({"a": [z, z], "b": [z]})
        man = load_manifest(path)
        assert [r.sample_id for r in man] == ["a", "b"]
        assert [r.n_masks for r in man] == [2, 1]
        assert man.records[0].mask_refs[1].name == "a_1.png"
        assert man.records[0].image_ref.name == "a.jpg"

    def test_masks_load_lazily_and_check_shape(self, tmp_path):
        save_mask(np.zeros((3, 3), bool), tmp_path / "x.png")
        save_mask(np.zeros((4, 3), bool), tmp_path / "y.png")
        (tmp_path / "m.csv").write_text("sample_id,image_path,mask_path\ns,,x.png\ns,,y.png\n")
        rec = load_manifest(tmp_path / "m.csv").records[0]
        with pytest.raises(MaskError):
            rec.masks

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "sample_id,image_path,mask_path\n",
            "id,img,mask\na,b,c\n",
            "sample_id,image_path,mask_path\na,,\n",
            "sample_id,image_path,mask_path\na,i.png\n",
            "sample_id,image_path,mask_path\na,i.png,m.png\na,i.png,m.png\n",
            "sample_id,image_path,mask_path\na,i.png,m.png\na,j.png,n.png\n",
        ],
        ids=["empty", "header-only", "bad-header", "no-mask", "short-row", "duplicate", "two-images"],
    )
    def test_malformed(self, tmp_path, text):
        (tmp_path / "m.csv").write_text(text)
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.csv")

    def test_duplicate_ids_in_constructed_manifest(self):
        z = [np.zeros((1, 1), bool)]
        with pytest.raises(ManifestError):
            DatasetManifest("d", [SampleRecord.from_masks("a", z), SampleRecord.from_masks("a", z)])

    def test_save_rebases_relative_paths(self, write_dataset, tmp_path):
        z = np.zeros((2, 2), bool)
        man = load_manifest(write_dataset({"a": [z, z], "b": [z]}))
        out_dir = tmp_path / "sub" / "dir"
        out_dir.mkdir(parents=True)
        save_manifest(man, out_dir / "copy.csv")
        again = load_manifest(out_dir / "copy.csv")
        for a, b in zip(again, man):
            assert [p.resolve() for p in a.mask_refs] == [p.resolve() for p in b.mask_refs]
        assert again.records[0].masks[0].shape == (2, 2)


class TestStats:
    def test_counts(self):
        hist, total = dataset_stats(_synthetic_manifest(5, [1, 1, 2, 2, 3]))
        assert hist == {1: 2, 2: 2, 3: 1}
        assert total == 5

    def test_single_mask_samples(self):
        assert dataset_stats(_synthetic_manifest(2)) == ({1: 2}, 2)


class TestSplit:
    def test_table2_sizes(self):
        train, val = split_dataset(_synthetic_manifest(2233), 0.8, seed=2019)
        assert (len(train), len(val)) == (1786, 447)

    @pytest.mark.parametrize("n, fraction", [(10, 0.5), (7, 0.3), (1, 0.8), (100, 0.99)])
    def test_exact_partition(self, n, fraction):
        man = _synthetic_manifest(n)
        train, val = split_dataset(man, fraction, seed=1)
        a, b = set(train.sample_ids), set(val.sample_ids)
        assert not a & b
        assert a | b == set(man.sample_ids)
        assert len(a) == math.floor(fraction * n)

    def test_deterministic_and_order_free(self):
        man = _synthetic_manifest(10)
        first = split_dataset(man, 0.5, seed=7)
        second = split_dataset(man, 0.5, seed=7)
        shuffled = DatasetManifest("x", list(reversed(man.records)))
        third = split_dataset(shuffled, 0.5, seed=7)
        for part in range(2):
            assert first[part].sample_ids == second[part].sample_ids == third[part].sample_ids

    def test_seed_matters(self):
        man = _synthetic_manifest(50)
        assert split_dataset(man, 0.5, 1)[0].sample_ids != split_dataset(man, 0.5, 2)[0].sample_ids

    def test_single_sample_goes_to_validation(self):
        train, val = split_dataset(_synthetic_manifest(1), 0.8, seed=0)
        assert len(train) == 0 and len(val) == 1

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_bounds(self, fraction):
        with pytest.raises(ValueError):
            split_dataset(_synthetic_manifest(3), fraction, 0)


class TestTrainingMaskSampler:
    def test_single_mask(self, rng):
        m = np.eye(3, dtype=bool)
        rec = SampleRecord.from_masks("a", [m])
        for _ in range(20):
            assert sample_training_mask(rec, rng) is rec.masks[0]

    def test_two_masks_uniform(self, rng):
        rec = SampleRecord.from_masks("a", [np.zeros((2, 2), bool), np.ones((2, 2), bool)])
        draws = 10_000
        hits = sum(sample_training_mask(rec, rng) is rec.masks[1] for _ in range(draws))
        # binomial(10000, 0.5): sigma = 50
        assert abs(hits - draws * 0.5) < 5 * math.sqrt(draws * 0.25)

    def test_only_own_masks(self, rng):
        rec = SampleRecord.from_masks("a", [np.full((2, 2), i % 2 == 0) for i in range(3)])
        ids = {id(m) for m in rec.masks}
        assert all(id(sample_training_mask(rec, rng)) in ids for _ in range(200))
