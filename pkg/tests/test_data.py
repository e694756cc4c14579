import numpy as np
import pytest

from promptforge.data import (
    PATTERNS,
    Dataset,
    generate_synthetic,
    load_directory,
    read_ppm,
    save_dataset,
    write_ppm,
)


class TestGenerateSynthetic:
    def test_deterministic_bitwise(self):
        a = generate_synthetic(4, 5, seed=3)
        b = generate_synthetic(4, 5, seed=3)
        assert a.class_names == b.class_names
        assert a.labels == b.labels
        for x, y in zip(a.images, b.images):
            assert np.array_equal(x, y)

    def test_seed_changes_images(self):
        a = generate_synthetic(4, 2, seed=0)
        b = generate_synthetic(4, 2, seed=1)
        assert any(not np.array_equal(x, y) for x, y in zip(a.images, b.images))

    def test_zero_per_class_keeps_names(self):
        ds = generate_synthetic(5, 0, seed=0)
        assert len(ds) == 0
        assert len(ds.class_names) == 5

    def test_shapes_and_dtype(self):
        ds = generate_synthetic(3, 2, seed=1)
        for img in ds.images:
            assert img.shape == (32, 32, 3)
            assert img.dtype == np.uint8

    def test_counts_and_labels(self):
        ds = generate_synthetic(6, 7, seed=2)
        assert len(ds) == 42
        for c in range(6):
            assert len(ds.class_indices(c)) == 7

    def test_class_count_bounds(self):
        with pytest.raises(ValueError):
            generate_synthetic(1, 4, seed=0)
        with pytest.raises(ValueError):
            generate_synthetic(len(PATTERNS) + 1, 4, seed=0)

    def test_pixel_space_nearest_centroid_oracle(self):
        # classes must be separable even for a trivial classifier
        ds = generate_synthetic(8, 64, seed=0)
        X = np.stack([img.reshape(-1).astype(np.float64) for img in ds.images])
        y = np.array(ds.labels)
        centroids = np.stack([X[y == c].mean(axis=0) for c in range(8)])
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        accuracy = (d2.argmin(axis=1) == y).mean()
        assert accuracy > 0.80


class TestDatasetValidation:
    def test_label_range_checked(self):
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="label"):
            Dataset(images=[img], labels=[2], class_names=["a", "b"])

    def test_dtype_checked(self):
        img = np.zeros((8, 8, 3), dtype=np.float64)
        with pytest.raises(ValueError, match="uint8"):
            Dataset(images=[img], labels=[0], class_names=["a"])

    def test_mixed_dimensions_rejected(self):
        a = np.zeros((8, 8, 3), dtype=np.uint8)
        b = np.zeros((16, 16, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="differ"):
            Dataset(images=[a, b], labels=[0, 0], class_names=["a"])

    def test_subset(self):
        ds = generate_synthetic(3, 4, seed=0)
        sub = ds.subset([0, 5, 9])
        assert len(sub) == 3
        assert sub.labels == [ds.labels[0], ds.labels[5], ds.labels[9]]
        assert np.array_equal(sub.images[1], ds.images[5])


class TestPpm:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(12, 20, 3), dtype=np.uint8)
        path = tmp_path / "x.ppm"
        write_ppm(path, img)
        assert np.array_equal(read_ppm(path), img)

    def test_header_comments_skipped(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        path = tmp_path / "c.ppm"
        raw = b"P6\n# a comment\n2 2\n# another\n255\n" + img.tobytes()
        path.write_bytes(raw)
        assert np.array_equal(read_ppm(path), img)

    def test_bad_magic_names_file(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
        with pytest.raises(ValueError, match="bad.ppm"):
            read_ppm(path)

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(5))
        with pytest.raises(ValueError, match="truncated"):
            read_ppm(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            read_ppm(tmp_path / "absent.ppm")


class TestDirectoryFormat:
    def test_write_then_load_preserves_every_pixel(self, tmp_path):
        ds = generate_synthetic(4, 3, seed=7)
        root = save_dataset(ds, tmp_path / "data")
        loaded = load_directory(root)
        assert sorted(loaded.class_names) == sorted(ds.class_names)
        assert len(loaded) == len(ds)
        # class order may permute (sorted on load); compare per class name
        for name in ds.class_names:
            orig_c = ds.class_names.index(name)
            load_c = loaded.class_names.index(name)
            orig = [ds.images[i] for i in ds.class_indices(orig_c)]
            got = [loaded.images[i] for i in loaded.class_indices(load_c)]
            assert len(orig) == len(got)
            for x, y in zip(orig, got):
                assert np.array_equal(x, y)

    def test_empty_root_gives_empty_dataset(self, tmp_path):
        root = tmp_path / "empty"
        root.mkdir()
        ds = load_directory(root)
        assert len(ds) == 0 and ds.class_names == []

    def test_single_class_single_image(self, tmp_path):
        root = tmp_path / "one"
        (root / "lone class").mkdir(parents=True)
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        write_ppm(root / "lone class" / "0.ppm", img)
        ds = load_directory(root)
        assert ds.class_names == ["lone class"]
        assert len(ds) == 1

    def test_class_names_sorted(self, tmp_path):
        root = tmp_path / "s"
        for name in ("zebra", "apple"):
            (root / name).mkdir(parents=True)
            write_ppm(root / name / "0.ppm", np.zeros((4, 4, 3), dtype=np.uint8))
        assert load_directory(root).class_names == ["apple", "zebra"]

    def test_mixed_dimensions_rejected(self, tmp_path):
        root = tmp_path / "m"
        (root / "a").mkdir(parents=True)
        write_ppm(root / "a" / "0.ppm", np.zeros((4, 4, 3), dtype=np.uint8))
        write_ppm(root / "a" / "1.ppm", np.zeros((8, 8, 3), dtype=np.uint8))
        with pytest.raises(ValueError, match="differ"):
            load_directory(root)

    def test_missing_root_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_directory(tmp_path / "nowhere")
