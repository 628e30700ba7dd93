import numpy as np
import pytest

from equisearch import transforms as tf
from equisearch.group_core import GroupError, GroupTooLargeError, Perm, format_perm_lines
from equisearch.transforms import ImageGrid

G4 = ImageGrid(4)


def as_image(vec, grid):
    return np.asarray(vec).reshape(grid.side, grid.side)


def test_builtin_orders():
    assert tf.builtin("rot90", G4).order == 4
    assert tf.builtin("hflip", G4).order == 2
    assert tf.builtin("vflip", G4).order == 2
    assert tf.builtin("htrans1", G4).order == 4
    assert tf.builtin("htrans2", G4).order == 2
    assert tf.builtin("vtrans", G4).order == 4
    assert tf.builtin("identity", G4).order == 1
    assert tf.builtin("rot90", ImageGrid(28)).order == 4


def test_pixel_maps_against_numpy():
    img = np.arange(16).reshape(4, 4)
    x = img.reshape(-1)
    # a clockwise quarter turn moves pixel (r, c) to (c, side-1-r)
    assert np.array_equal(as_image(tf.apply(tf.rot90_perm(G4), x), G4), np.rot90(img, -1))
    assert np.array_equal(as_image(tf.apply(tf.hflip_perm(G4), x), G4), img[:, ::-1])
    assert np.array_equal(as_image(tf.apply(tf.vflip_perm(G4), x), G4), img[::-1, :])
    assert np.array_equal(as_image(tf.apply(tf.htrans_perm(G4, 1), x), G4), np.roll(img, 1, axis=1))
    assert np.array_equal(as_image(tf.apply(tf.vtrans_perm(G4, 3), x), G4), np.roll(img, 3, axis=0))


def test_hflip_on_2x2():
    assert tf.builtin("hflip", ImageGrid(2)).group.generators[0].map.tolist() == [1, 0, 3, 2]


def test_transforms_preserve_pixel_multiset():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(3, 49))
    for name in ("rot90", "hflip", "vflip", "htrans2", "vtrans3"):
        g = tf.builtin(name, ImageGrid(7))
        for p in g.group.elements:
            out = tf.apply(p, img)
            assert np.array_equal(np.sort(out, axis=1), np.sort(img, axis=1))


def test_apply_is_an_action():
    g = tf.builtin("rot90", G4)
    x = np.arange(16.0)
    t = g.group.table()
    for i in range(4):
        for j in range(4):
            lhs = tf.apply(g.element(i), tf.apply(g.element(j), x))
            assert np.array_equal(lhs, tf.apply(g.element(t[i, j]), x))


def test_unknown_and_misused_specs():
    with pytest.raises(GroupError):
        tf.builtin("rot45", G4)
    with pytest.raises(GroupError):
        tf.builtin("cyc3", G4)
    with pytest.raises(GroupError):
        tf.node_generators("rot90", 10)
    with pytest.raises(GroupError):
        tf.node_generators("cyc3", 10)
    with pytest.raises(GroupTooLargeError):
        tf.resolve("rot90", G4, cap=2)


def test_node_set_specs():
    assert tf.node_generators("cyc3", 6)[0].map.tolist() == [4, 5, 0, 1, 2, 3]
    assert tf.node_generators("swap2", 4)[0].map.tolist() == [3, 2, 1, 0]
    assert tf.node_generators("identity", 5) == []


def test_file_groups(tmp_path):
    path = tmp_path / "swap_rows.perm"
    p = Perm(np.concatenate([np.arange(4, 8), np.arange(4), np.arange(8, 16)]))
    path.write_text(format_perm_lines([p], header="swap the first two rows"))
    g = tf.resolve(f"file:{path}", G4)
    assert g.order == 2 and g.provenance == "loaded-from-file"
    with pytest.raises(GroupError, match="degree"):
        tf.load_group(path, ImageGrid(3))
    tf.save_group(g, tmp_path / "copy.perm")
    assert tf.load_group(tmp_path / "copy.perm", G4).group.elements == g.group.elements


def test_shipped_example_file():
    g = tf.load_group(tf.example_file(), ImageGrid(28))
    assert g.order == 14
    moved = np.flatnonzero(g.group.generators[0].map != np.arange(784))
    assert moved.max() < 14 * 28  # only the top half moves


def test_apply_size_mismatch():
    with pytest.raises(ValueError):
        tf.apply(tf.rot90_perm(G4), np.zeros(9))
