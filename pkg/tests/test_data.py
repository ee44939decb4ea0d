import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacal.data import (ArrayDataset, apply_task, batch_slices, epoch_order, frame_windows, load_dataset,
                        make_batches, n_batches, scan_manifest, synthetic_clips, synthetic_images,
                        synthetic_paired, synthetic_unpaired)
from dacal.errors import DataError, ManifestError
from dacal.image_ops import write_image


def put(path, seed=0, size=(8, 8)):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_image(path, np.random.default_rng(seed).uniform(size=(*size, 3)))


@pytest.fixture
def paired_dir(tmp_path):
    for i in range(10):
        put(tmp_path / "low" / f"{i:02d}.png", i)
        put(tmp_path / "high" / f"{i:02d}.png", 100 + i)
    return tmp_path


class TestScan:
    def test_empty_directory(self, tmp_path):
        (tmp_path / "low").mkdir()
        (tmp_path / "high").mkdir()
        with pytest.raises(ManifestError, match="empty"):
            scan_manifest("paired", tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ManifestError):
            scan_manifest("paired", tmp_path / "nope")

    def test_orphan_named(self, tmp_path):
        put(tmp_path / "low" / "a.png")
        put(tmp_path / "low" / "b.png")
        put(tmp_path / "high" / "a.png")
        with pytest.raises(ManifestError, match=r"b\.png"):
            scan_manifest("paired", tmp_path)

    def test_video_clip(self, tmp_path):
        for t in range(5):
            put(tmp_path / "clips" / "c0" / f"frame_{t:04d}.png", t)
        m = scan_manifest("video", tmp_path)
        assert len(m) == 1 and len(m.x_items[0]) == 5
        assert m.x_items[0] == sorted(m.x_items[0])

    def test_unpaired(self, tmp_path):
        for i in range(3):
            put(tmp_path / "domain_x" / f"{i}.png", i)
        put(tmp_path / "domain_y" / "z.png")
        m = scan_manifest("unpaired", tmp_path)
        assert len(m.x_items) == 3 and len(m.y_items) == 1

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(ManifestError):
            scan_manifest("stereo", tmp_path)


class TestBatches:
    def test_sizes(self, paired_dir):
        m = scan_manifest("paired", paired_dir)
        assert [len(x) for x, _ in make_batches(m, 4, seed=0)] == [4, 4, 2]

    def test_deterministic(self, paired_dir):
        m = scan_manifest("paired", paired_dir)
        a = [x for x, _ in make_batches(m, 4, seed=3, epoch=2)]
        b = [x for x, _ in make_batches(m, 4, seed=3, epoch=2)]
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
        c = [x for x, _ in make_batches(m, 4, seed=3, epoch=3)]
        assert not all(np.array_equal(u, v) for u, v in zip(a, c))

    def test_pairs_stay_aligned(self, paired_dir):
        m = scan_manifest("paired", paired_dir)
        full = load_dataset(m)
        for x, y in make_batches(m, 3, seed=1):
            for xi, yi in zip(x, y):
                i = next(k for k in range(len(full.x)) if np.array_equal(full.x[k], xi))
                assert np.array_equal(full.y[i], yi)

    def test_resize(self, paired_dir):
        m = scan_manifest("paired", paired_dir, target_resolution=(4, 6))
        x, y = next(iter(make_batches(m, 4, seed=0)))
        assert x.shape == (4, 4, 6, 3) and y.shape == (4, 4, 6, 3)
        assert x.min() >= 0 and x.max() <= 1

    def test_decode_failure_skipped(self, paired_dir, caplog):
        (paired_dir / "low" / "03.png").write_bytes(b"garbage")
        m = scan_manifest("paired", paired_dir)
        with caplog.at_level(logging.WARNING, logger="dacal.data"):
            sizes = [len(x) for x, _ in make_batches(m, 4, seed=0)]
        assert sum(sizes) == 9
        assert "03.png" in caplog.text

    def test_video_windows(self, tmp_path):
        for t in range(5):
            put(tmp_path / "clips" / "c0" / f"frame_{t:04d}.png", t)
        m = scan_manifest("video", tmp_path)
        batches = list(make_batches(m, 8, seed=0))
        assert len(batches) == 1 and batches[0].shape == (5, 3, 8, 8, 3)

    def test_unpaired_independent(self, tmp_path):
        for i in range(6):
            put(tmp_path / "domain_x" / f"{i}.png", i)
            put(tmp_path / "domain_y" / f"{i}.png", i)
        m = scan_manifest("unpaired", tmp_path)
        pairs = [(x, y) for x, y in make_batches(m, 6, seed=0)]
        x, y = pairs[0]
        assert x.shape == y.shape
        assert not np.array_equal(x, y)  # same files, independent orders


def test_frame_windows():
    assert frame_windows(5, 3) == [[0, 0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4, 4]]
    assert frame_windows(1, 3) == [[0, 0, 0]]
    assert frame_windows(3, 1) == [[0], [1], [2]]


@given(st.integers(0, 200), st.integers(1, 17))
def test_batch_slices_cover(n, b):
    sl = batch_slices(n, b)
    assert len(sl) == n_batches(n, b)
    assert [i for s in sl for i in range(s.start, s.stop)] == list(range(n))
    assert all(s.stop - s.start == b for s in sl[:-1])


@given(st.integers(1, 100), st.integers(0, 2 ** 31), st.integers(0, 50))
def test_epoch_order_permutation(n, seed, epoch):
    o = epoch_order(n, seed, epoch)
    assert sorted(o.tolist()) == list(range(n))
    assert np.array_equal(o, epoch_order(n, seed, epoch))


def test_batch_size_invalid():
    with pytest.raises(ValueError):
        batch_slices(3, 0)


class TestArrayDataset:
    def test_paired_count_mismatch(self):
        with pytest.raises(DataError):
            ArrayDataset("paired", np.zeros((3, 4, 4, 3)), np.zeros((2, 4, 4, 3)))

    def test_short_clip(self):
        with pytest.raises(DataError):
            ArrayDataset("video", [np.zeros((2, 4, 4, 3))], [np.zeros((5, 4, 4, 3))])


class TestSynthetic:
    def test_images_valid(self):
        imgs = synthetic_images(4, 16, 24, seed=0)
        assert imgs.shape == (4, 16, 24, 3) and imgs.dtype == np.float32
        assert imgs.min() >= 0 and imgs.max() <= 1
        np.testing.assert_allclose(imgs * 255.0, np.round(imgs * 255.0), atol=1e-3)
        np.testing.assert_array_equal(imgs, synthetic_images(4, 16, 24, seed=0))

    def test_tasks(self):
        x = synthetic_images(2, 8, 8, seed=1)
        assert np.array_equal(apply_task("identity", x), x)
        g = apply_task("gamma", x)
        assert np.all(g >= x - 1e-6)
        with pytest.raises(DataError):
            apply_task("sepia", x)

    def test_paired_and_unpaired(self):
        p = synthetic_paired("gamma", 4, 2, 8, 8)
        assert p.x.shape == p.y.shape == (4, 8, 8, 3) and p.val_x.shape == (2, 8, 8, 3)
        u = synthetic_unpaired("gamma", 4, 2, 8, 8)
        assert not np.array_equal(apply_task("gamma", u.x), u.y)

    def test_clips(self):
        static = synthetic_clips(2, 5, 8, 8, static=True)
        assert all(np.array_equal(c[0], c[t]) for c in static for t in range(5))
        pal = synthetic_clips(2, 5, 8, 8, palindromic=True)
        assert all(np.array_equal(c, c[::-1]) for c in pal)
        moving = synthetic_clips(1, 5, 8, 8)
        assert not np.array_equal(moving[0][0], moving[0][1])
