import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from vmbeauty.data import (IMAGENET_MEAN, IMAGENET_STD, AugmentConfig, DataError, DatasetManifest,
                           ManifestError, Record, augment, color_jitter, decode_image, epoch_order, fold_split,
                           hflip, iter_batches, load_manifest, load_sample, manifest_from_split_lists, normalize,
                           rotate, synth_dataset, synth_score, write_manifest)


def write(tmp_path, text, name="manifest.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def small_manifest(n=10, k=5):
    return DatasetManifest(tuple(Record(f"{i}.png", 1 + 4 * i / n, i % k + 1) for i in range(n)), k)


def dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestManifest:
    def test_single_row(self, tmp_path):
        man = load_manifest(write(tmp_path, "image_path,score,fold\nimg/a.jpg,3.2,1\n"))
        assert man.records == (Record("img/a.jpg", 3.2, 1),)
        assert man.k == 1
        assert man.resolve(man.records[0]) == tmp_path / "img/a.jpg"

    def test_header_only(self, tmp_path):
        with pytest.raises(ManifestError, match="no records"):
            load_manifest(write(tmp_path, "image_path,score,fold\n"))

    def test_score_out_of_range_names_row(self, tmp_path):
        with pytest.raises(ManifestError, match=":3:.*6.0"):
            load_manifest(write(tmp_path, "image_path,score,fold\na.png,2.0,1\nb.png,6.0,1\n"))

    def test_parse_error_has_line_number(self, tmp_path):
        with pytest.raises(ManifestError, match=":2:"):
            load_manifest(write(tmp_path, "image_path,score,fold\na.png,high,1\n"))

    def test_bad_header(self, tmp_path):
        with pytest.raises(ManifestError, match="header"):
            load_manifest(write(tmp_path, "path,score\na.png,2.0\n"))

    def test_empty_fold(self, tmp_path):
        with pytest.raises(ManifestError, match=r"\[2\]"):
            load_manifest(write(tmp_path, "image_path,score,fold\na.png,2.0,1\nb.png,2.0,3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "absent.csv")

    def test_write_read_round_trip(self, tmp_path):
        recs = [Record("a.png", 1.0 / 3.0 + 2, 1), Record("b.png", 4.25, 2)]
        write_manifest(tmp_path / "m.csv", recs)
        assert load_manifest(tmp_path / "m.csv").records == tuple(recs)
        assert (tmp_path / "m.csv").read_bytes().count(b"\r") == 0

    def test_split_lists(self, tmp_path):
        a = write(tmp_path, "x1.jpg 2.5\nx2.jpg 3.0\n", "test_1.txt")
        b = write(tmp_path, "x3.jpg 4.75\n", "test_2.txt")
        recs = manifest_from_split_lists([a, b], "Images")
        assert [(Path(r.image_path).name, r.score, r.fold) for r in recs] == [
            ("x1.jpg", 2.5, 1), ("x2.jpg", 3.0, 1), ("x3.jpg", 4.75, 2)]

    def test_split_lists_reject_duplicates(self, tmp_path):
        a = write(tmp_path, "x1.jpg 2.5\n", "test_1.txt")
        with pytest.raises(ManifestError, match="already assigned"):
            manifest_from_split_lists([a, a], "Images")


class TestFoldSplit:
    def test_partition_arithmetic(self):
        train, test = fold_split(small_manifest(), 3)
        assert len(train) == 8 and len(test) == 2
        assert all(r.fold == 3 for r in test)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=4, max_size=40), st.integers(1, 4))
    def test_union_and_disjoint(self, folds, test_fold):
        folds = list(folds) + [1, 2, 3, 4]
        man = DatasetManifest(tuple(Record(f"{i}", 3.0, f) for i, f in enumerate(folds)), 4)
        train, test = fold_split(man, test_fold)
        assert set(train).isdisjoint(test)
        assert sorted(train + test, key=lambda r: int(r.image_path)) == list(man.records)

    def test_single_fold_cannot_train(self):
        with pytest.raises(DataError, match="no training"):
            fold_split(small_manifest(4, 1), 1)

    def test_invalid_fold(self):
        with pytest.raises(ValueError):
            fold_split(small_manifest(), 6)


@pytest.fixture
def image_file(tmp_path, rng):
    pixels = (rng.uniform(size=(20, 20, 3)) * 255).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(tmp_path / "img.png")
    return tmp_path / "img.png"


class TestSamples:
    def test_eval_path_ignores_rng(self, image_file):
        man = DatasetManifest((Record(image_file.name, 3.0, 1),), 1, str(image_file.parent))
        a = load_sample(man, man.records[0], 16, False, AugmentConfig(), np.random.default_rng(0))
        b = load_sample(man, man.records[0], 16, False, AugmentConfig(), np.random.default_rng(1))
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert a.pixels.shape == (3, 16, 16)

    def test_normalization_constants(self):
        img = np.broadcast_to(IMAGENET_MEAN, (4, 4, 3))
        np.testing.assert_allclose(normalize(img), 0.0, atol=1e-15)
        one = normalize(np.ones((2, 2, 3)))
        np.testing.assert_allclose(one[:, 0, 0], (1 - IMAGENET_MEAN) / IMAGENET_STD)

    def test_flip_involution(self, image_file):
        img = decode_image(image_file, 16)
        aug = AugmentConfig(flip_prob=1.0, rotation_degrees=0, brightness=0, contrast=0, saturation=0)
        twice = augment(augment(img, aug, np.random.default_rng(0)), aug, np.random.default_rng(1))
        np.testing.assert_array_equal(normalize(twice), normalize(img))
        assert not np.array_equal(hflip(img), img)

    def test_disabled_augmentation_matches_eval(self, image_file):
        man = DatasetManifest((Record(image_file.name, 3.0, 1),), 1, str(image_file.parent))
        off = AugmentConfig(flip_prob=0.0, rotation_degrees=0, brightness=0, contrast=0, saturation=0)
        a = load_sample(man, man.records[0], 16, True, off, np.random.default_rng(5))
        b = load_sample(man, man.records[0], 16, False)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_augmentation_keeps_label_and_finiteness(self, image_file):
        man = DatasetManifest((Record(image_file.name, 4.2, 1),), 1, str(image_file.parent))
        s = load_sample(man, man.records[0], 16, True, AugmentConfig(), np.random.default_rng(3))
        assert s.score == 4.2
        assert np.isfinite(s.pixels).all()

    def test_rotation_replicates_edges(self):
        img = np.ones((9, 9, 3))
        np.testing.assert_allclose(rotate(img, 10.0), 1.0)

    def test_unit_jitter_is_identity(self, rng):
        img = rng.uniform(size=(5, 5, 3))
        np.testing.assert_allclose(color_jitter(img, 1.0, 1.0, 1.0), img, atol=1e-12)

    def test_grayscale_promoted(self, tmp_path):
        Image.fromarray(np.full((6, 6), 128, np.uint8), "L").save(tmp_path / "g.png")
        assert decode_image(tmp_path / "g.png", 6).shape == (6, 6, 3)

    def test_missing_image_names_path(self, tmp_path):
        man = DatasetManifest((Record("nope.png", 3.0, 1),), 1, str(tmp_path))
        with pytest.raises(DataError, match="nope.png"):
            load_sample(man, man.records[0], 8)

    def test_undecodable_image(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"garbage")
        with pytest.raises(DataError, match="bad.png"):
            decode_image(tmp_path / "bad.png", 8)


class TestBatches:
    def test_order_depends_on_epoch_only_through_seed(self):
        np.testing.assert_array_equal(epoch_order(10, 3, 1), epoch_order(10, 3, 1))
        assert not np.array_equal(epoch_order(50, 3, 1), epoch_order(50, 3, 2))

    def test_workers_do_not_change_batches(self, tmp_path):
        man = synth_dataset(tmp_path, 10, 8, seed=0, k=2)
        kw = dict(shuffle_seed=1, epoch=2, train_mode=True, aug=AugmentConfig(), aug_seed=9)
        serial = list(iter_batches(man, man.records, 8, 4, **kw))
        threaded = list(iter_batches(man, man.records, 8, 4, workers=3, **kw))
        assert [b[0].shape[0] for b in serial] == [4, 4, 2]
        for (xa, ya, ia), (xb, yb, ib) in zip(serial, threaded):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)
            np.testing.assert_array_equal(ia, ib)


class TestSynth:
    def test_deterministic(self, tmp_path):
        synth_dataset(tmp_path / "a", 12, 16, seed=42)
        synth_dataset(tmp_path / "b", 12, 16, seed=42)
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_round_robin_folds_and_range(self, tmp_path):
        man = synth_dataset(tmp_path, 23, 8, seed=1)
        assert [r.fold for r in man.records[:7]] == [1, 2, 3, 4, 5, 1, 2]
        assert all(1.0 <= r.score <= 5.0 for r in man.records)
        again = load_manifest(tmp_path / "manifest.csv")
        assert again.records == man.records and again.k == 5

    def test_too_few_samples(self, tmp_path):
        with pytest.raises(DataError):
            synth_dataset(tmp_path, 3, 8, seed=0, k=5)

    def test_score_function(self):
        assert synth_score(0.0, 0.0) == 3.0
        assert 1.0 < synth_score(-1.0, -1.0) < synth_score(1.0, 1.0) < 5.0

    def test_brightness_probe(self, tmp_path):
        # a one-feature linear fit on mean pixel brightness must already track the score
        man = synth_dataset(tmp_path, 100, 16, seed=7)
        feats = np.array([decode_image(man.resolve(r), 16).mean() for r in man.records])
        scores = np.array([r.score for r in man.records])
        slope, icept = np.polyfit(feats, scores, 1)
        pc = np.corrcoef(slope * feats + icept, scores)[0, 1]
        assert pc > 0.5
