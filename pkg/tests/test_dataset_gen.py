import json
import struct

import numpy as np
import pytest

from equisearch import dataset_gen as dg
from equisearch import transforms as tf
from equisearch.transforms import ImageGrid


@pytest.fixture
def tiny():
    rng = np.random.default_rng(0)
    return dg.LabeledDataset(rng.integers(0, 256, size=(50, 16)), rng.integers(0, 10, size=50), 4)


def test_idx_hand_built_file(tmp_path):
    images = struct.pack(">IIII", 0x803, 2, 2, 2) + bytes([0, 1, 2, 3, 250, 251, 252, 253])
    labels = struct.pack(">II", 0x801, 2) + bytes([7, 3])
    (tmp_path / "i").write_bytes(images)
    (tmp_path / "l").write_bytes(labels)
    d = dg.read_idx(tmp_path / "i", tmp_path / "l")
    assert d.side == 2 and d.pixels.tolist() == [[0, 1, 2, 3], [250, 251, 252, 253]]
    assert d.labels.tolist() == [7, 3]
    assert np.isclose(d.images.max(), 253 / 255)
    dg.write_idx(d, tmp_path / "i2", tmp_path / "l2")
    assert (tmp_path / "i2").read_bytes() == images
    assert (tmp_path / "l2").read_bytes() == labels


def test_idx_roundtrip_is_byte_identical(tmp_path, tiny):
    dg.write_idx(tiny, tmp_path / "a", tmp_path / "b")
    back = dg.read_idx(tmp_path / "a", tmp_path / "b")
    dg.write_idx(back, tmp_path / "c", tmp_path / "d")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "c").read_bytes()
    assert (tmp_path / "b").read_bytes() == (tmp_path / "d").read_bytes()


def test_idx_errors():
    labels = struct.pack(">II", 0x801, 2) + bytes([7, 3])
    with pytest.raises(dg.IdxFormatError, match="wrong magic for images") as exc:
        dg.parse_idx_images(labels)
    assert exc.value.offset == 0
    with pytest.raises(dg.IdxFormatError, match="wrong magic for labels"):
        dg.parse_idx_labels(struct.pack(">IIII", 0x803, 0, 2, 2))
    with pytest.raises(dg.IdxFormatError, match="body"):
        dg.parse_idx_labels(labels[:-1])
    with pytest.raises(dg.IdxFormatError, match="truncated"):
        dg.parse_idx_images(b"\x00\x00")
    with pytest.raises(dg.IdxFormatError, match="overflow"):
        dg.parse_idx_images(struct.pack(">IIII", 0x803, 0xFFFFFFFF, 0xFFFF, 0xFFFF))


def test_read_idx_count_mismatch(tmp_path):
    (tmp_path / "i").write_bytes(dg.idx_images_bytes(np.zeros((2, 4), np.uint8), 2))
    (tmp_path / "l").write_bytes(dg.idx_labels_bytes(np.zeros(3, np.uint8)))
    with pytest.raises(dg.IdxFormatError, match="labels"):
        dg.read_idx(tmp_path / "i", tmp_path / "l")


def test_identity_augmentation_is_exact(tiny):
    out = dg.augment(tiny, dg.parse_aug_spec("identity", tiny.grid), seed=3)
    assert out.pixels.tobytes() == tiny.pixels.tobytes()
    assert out.labels.tobytes() == tiny.labels.tobytes()


def test_augment_preserves_labels_and_pixel_multisets(tiny):
    aug = dg.parse_aug_spec("rot90+hflip", tiny.grid)
    out = dg.augment(tiny, aug, seed=1)
    assert np.array_equal(out.labels, tiny.labels)
    assert np.array_equal(np.sort(out.pixels, axis=1), np.sort(tiny.pixels, axis=1))


def test_augment_undo_and_log(tmp_path, tiny):
    aug = dg.parse_aug_spec("rot90+vflip", tiny.grid)
    log = []
    out = dg.augment(tiny, aug, seed=5, log=log)
    assert len(log) == len(tiny)
    for e in log:
        g = aug.groups[e.group]
        assert np.array_equal(out.pixels[e.index], tf.apply(g.element(e.element), tiny.pixels[e.index]))
    assert np.array_equal(dg.undo_augment(out, aug, log).pixels, tiny.pixels)
    dg.write_log(log, aug, tmp_path / "log.jsonl")
    first = json.loads((tmp_path / "log.jsonl").read_text().splitlines()[0])
    assert set(first) == {"index", "group", "element", "group_name"}


def test_augment_is_seeded_and_worker_independent(tiny):
    aug = dg.parse_aug_spec("rot90+hflip", tiny.grid)
    a = dg.augment(tiny, aug, seed=9)
    b = dg.augment(tiny, aug, seed=9, workers=4)
    c = dg.augment(tiny, aug, seed=10)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.pixels.tobytes() != c.pixels.tobytes()


def test_augment_draws_groups_uniformly():
    data = dg.LabeledDataset(np.tile(np.arange(16), (4000, 1)), np.zeros(4000), 4)
    aug = dg.parse_aug_spec("rot90+hflip", data.grid)
    log = []
    dg.augment(data, aug, seed=0, log=log)
    groups = np.bincount([e.group for e in log])
    assert abs(groups[0] / 4000 - 0.5) < 0.03
    rot = np.bincount([e.element for e in log if e.group == 0], minlength=4)
    assert (np.abs(rot / rot.sum() - 0.25) < 0.04).all()


def test_augment_grid_mismatch(tiny):
    aug = dg.AugmentationArray((tf.builtin("rot90", ImageGrid(3)),))
    with pytest.raises(ValueError):
        dg.augment(tiny, aug, seed=0)


def test_subsample_and_split(tiny):
    s = dg.subsample(tiny, 20, seed=1)
    assert len(s) == 20
    assert dg.subsample(tiny, 20, seed=1).pixels.tobytes() == s.pixels.tobytes()
    with pytest.raises(ValueError):
        dg.subsample(tiny, 51, seed=0)
    a, b = dg.split(tiny, 30, seed=2)
    assert len(a) == 30 and len(b) == 20
    rows = {r.tobytes() for r in tiny.pixels}
    assert {r.tobytes() for r in a.pixels} | {r.tobytes() for r in b.pixels} <= rows


def test_planted_dataset_is_invariant_in_distribution():
    g = tf.builtin("rot90", ImageGrid(8))
    d = dg.planted_dataset(400, 8, n_classes=3, group=g, noise=0.0, seed=0)
    assert d.pixels.shape == (400, 64) and set(np.unique(d.labels)) <= {0, 1, 2}
    # without noise each image is a rotated copy of its class template
    for c in range(3):
        imgs = d.pixels[d.labels == c]
        base = imgs[0]
        orbit = {tf.apply(p, base).tobytes() for p in g.group.elements}
        assert all(img.tobytes() in orbit for img in imgs)
