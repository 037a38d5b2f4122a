import hashlib

import numpy as np
import pytest
import torch

from hw2mp.data import (ALPHABET, CANVAS, CorpusStats, DoesNotFit, FontSpec, UnsupportedCharacter,
                        decode_label, encode_label, make_synthetic_corpus, make_synthetic_handwriting,
                        preprocess, read_manifest, render_machine_print, resize, split_dataset,
                        to_tensors, write_manifest)

VOCAB = ["apple", "river", "stone"]


class TestLabels:
    def test_round_trip(self):
        assert decode_label(encode_label("Ab9")) == "Ab9"
        assert encode_label("a") == [0]
        assert len(ALPHABET) == 62

    def test_unsupported(self):
        with pytest.raises(UnsupportedCharacter):
            encode_label("a-b")


class TestRender:
    def test_shape_and_boxes(self):
        img, boxes = render_machine_print("river")
        assert img.shape == CANVAS and img.dtype == np.uint8
        assert len(boxes) == 5
        assert all(b1 - b0 == FontSpec().advance for b0, b1 in boxes)
        assert all(a[1] <= b[0] for a, b in zip(boxes, boxes[1:]))

    def test_ink_inside_boxes_only(self):
        img, boxes = render_machine_print("stone")
        ink = img < 128
        assert ink.any()
        mask = np.zeros(CANVAS[1], bool)
        for x0, x1 in boxes:
            mask[x0:x1] = True
            assert ink[:, x0:x1].any()
        assert not ink[:, ~mask].any()

    def test_empty(self):
        with pytest.raises(DoesNotFit):
            render_machine_print("")
        img, boxes = render_machine_print("", allow_empty=True)
        assert boxes == [] and np.all(img == 255)

    def test_too_long(self):
        with pytest.raises(DoesNotFit):
            render_machine_print("a" * 13)

    def test_deterministic(self):
        a, _ = render_machine_print("cloud")
        b, _ = render_machine_print("cloud")
        assert hashlib.sha256(a.tobytes()).hexdigest() == hashlib.sha256(b.tobytes()).hexdigest()


class TestDistortion:
    def test_zero_strength_identity(self):
        mp, _ = render_machine_print("music")
        np.testing.assert_array_equal(make_synthetic_handwriting(mp, 3, strength=0), mp)

    def test_seeded(self):
        mp, _ = render_machine_print("music")
        np.testing.assert_array_equal(make_synthetic_handwriting(mp, 3), make_synthetic_handwriting(mp, 3))
        assert not np.array_equal(make_synthetic_handwriting(mp, 3), make_synthetic_handwriting(mp, 4))

    def test_changes_image_but_keeps_ink(self):
        mp, _ = render_machine_print("music")
        hw = make_synthetic_handwriting(mp, 5)
        assert hw.shape == mp.shape and hw.dtype == np.uint8
        assert not np.array_equal(hw, mp)
        ink_mp, ink_hw = (255 - mp.astype(float)).sum(), (255 - hw.astype(float)).sum()
        assert 0.3 < ink_hw / ink_mp < 3


class TestCorpus:
    def test_cycles_vocab(self):
        samples = make_synthetic_corpus(VOCAB, 7, seed=1)
        assert [s.label for s in samples] == [VOCAB[i % 3] for i in range(7)]
        assert not np.array_equal(samples[0].hw_image, samples[3].hw_image)
        np.testing.assert_array_equal(samples[0].mp_image, samples[3].mp_image)

    def test_split(self):
        samples = make_synthetic_corpus(VOCAB, 200, seed=0, strength=0)
        train, test = split_dataset(samples, 0.95, seed=2)
        assert len(train) == 190 and len(test) == 10
        ids = {id(s) for s in train} | {id(s) for s in test}
        assert len(ids) == 200
        again = split_dataset(samples, 0.95, seed=2)
        assert [id(s) for s in again[1]] == [id(s) for s in test]
        with pytest.raises(ValueError):
            split_dataset(samples, 1.0)


class TestPreprocess:
    def test_standardized_statistics(self):
        samples = make_synthetic_corpus(VOCAB, 12, seed=0)
        images = [s.hw_image for s in samples]
        stats = CorpusStats.fit(images)
        pix = np.concatenate([preprocess(im, stats).ravel() for im in images])
        assert abs(pix.mean()) <= 1e-6
        assert abs(pix.std() - 1) <= 1e-3

    def test_resize_shape(self):
        raw = np.random.default_rng(0).integers(0, 256, size=(50, 300)).astype(np.uint8)
        assert resize(raw).shape == CANVAS
        with pytest.raises(ValueError):
            resize(np.zeros((3, 4, 5)))

    def test_constant_image_guarded(self):
        stats = CorpusStats.fit([np.full(CANVAS, 7)])
        assert np.all(preprocess(np.full(CANVAS, 7), stats) == 0)

    def test_stats_json(self, tmp_path):
        stats = CorpusStats(12.5, 3.25)
        stats.to_json(tmp_path / "s.json")
        assert CorpusStats.from_json(tmp_path / "s.json") == stats


class TestManifest:
    def test_round_trip(self, tmp_path):
        samples = make_synthetic_corpus(VOCAB, 4, seed=3)
        path = write_manifest(samples, str(tmp_path))
        back = read_manifest(path)
        assert len(back) == 4
        for a, b in zip(samples, back):
            np.testing.assert_array_equal(a.hw_image, b.hw_image)
            np.testing.assert_array_equal(a.mp_image, b.mp_image)
            assert a.label == b.label and list(a.char_boxes) == list(b.char_boxes)

    def test_bad_record(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"label": "a"}\n')
        with pytest.raises(ValueError, match="m.jsonl:1"):
            read_manifest(str(p))


def test_to_tensors():
    samples = make_synthetic_corpus(VOCAB, 3, seed=0)
    stats = CorpusStats.fit([s.hw_image for s in samples])
    hw, mp, labels, boxes = to_tensors(samples, stats)
    assert hw.shape == mp.shape == (3, 1, 32, 128) and hw.dtype == torch.float32
    assert labels == VOCAB and boxes[1] == samples[1].char_boxes
