"""Pixel-permutation groups on square grayscale images.

Pixels are indexed row-major, ``i = row * side + col``. Every transform is a
permutation of pixel positions, so applying one never changes the multiset of
pixel values.

Group spec strings (shared with the CLI):

``rot90``            Z4, quarter turns clockwise
``hflip``/``vflip``  Z2, mirror left-right / top-bottom
``htrans<k>``        cyclic horizontal shift by ``k`` columns (wrap-around)
``vtrans<k>``        cyclic vertical shift by ``k`` rows
``cyc<k>``           Z_k shifting a node set of size ``n`` by ``n/k``
``flip``/``swap2``   Z2 reversing a node set (``i -> n-1-i``)
``identity``         trivial group
``file:<path>``      generators loaded from a permutation text file
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .group_core import (
    DEFAULT_GROUP_CAP,
    GroupAction,
    GroupError,
    Perm,
    PermGroup,
    act_on_vector,
    close_generators,
    format_perm_lines,
    natural_action,
    parse_perm_lines,
)

IMAGE_SPECS = ("rot90", "hflip", "vflip", "htrans<k>", "vtrans<k>")
_SPEC_RE = re.compile(r"^(rot90|hflip|vflip|identity|flip|swap2|htrans(\d*)|vtrans(\d*)|cyc(\d+))$")


@dataclass(frozen=True)
class ImageGrid:
    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ValueError(f"grid side must be >= 1, got {self.side}")

    @property
    def size(self) -> int:
        return self.side * self.side

    @classmethod
    def for_pixels(cls, n: int) -> "ImageGrid":
        s = math.isqrt(n)
        if s * s != n:
            raise GroupError(f"{n} pixels do not form a square grid")
        return cls(s)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        r, c = np.divmod(np.arange(self.size), self.side)
        return r, c


@dataclass(frozen=True)
class TransformGroup:
    name: str
    grid: ImageGrid
    group: PermGroup
    provenance: str = "builtin"

    @property
    def action(self) -> GroupAction:
        return natural_action(self.group)

    @property
    def order(self) -> int:
        return self.group.order

    def element(self, k: int) -> Perm:
        return self.group.elements[k]


def _grid_perm(grid: ImageGrid, rows: np.ndarray, cols: np.ndarray) -> Perm:
    return Perm(rows * grid.side + cols)


def rot90_perm(grid: ImageGrid) -> Perm:
    r, c = grid.coords()
    return _grid_perm(grid, c, grid.side - 1 - r)


def hflip_perm(grid: ImageGrid) -> Perm:
    r, c = grid.coords()
    return _grid_perm(grid, r, grid.side - 1 - c)


def vflip_perm(grid: ImageGrid) -> Perm:
    r, c = grid.coords()
    return _grid_perm(grid, grid.side - 1 - r, c)


def htrans_perm(grid: ImageGrid, k: int = 1) -> Perm:
    r, c = grid.coords()
    return _grid_perm(grid, r, (c + k) % grid.side)


def vtrans_perm(grid: ImageGrid, k: int = 1) -> Perm:
    r, c = grid.coords()
    return _grid_perm(grid, (r + k) % grid.side, c)


def half_grid_row_cycle_perm(grid: ImageGrid) -> Perm:
    """Cycle the rows of the top half of the grid downwards; the bottom half is fixed."""
    half = grid.side // 2
    r, c = grid.coords()
    rows = np.where(r < half, (r + 1) % max(half, 1), r)
    return _grid_perm(grid, rows, c)


def _parse(spec: str) -> re.Match:
    m = _SPEC_RE.match(spec.strip().lower())
    if m is None:
        raise GroupError(f"unknown group spec {spec!r}")
    return m


def node_generators(spec: str, size: int) -> list[Perm]:
    """Generators of the group named by ``spec``, realized on ``size`` nodes.

    Image specs need ``size`` to be a perfect square.
    """
    if spec.startswith("file:"):
        path = Path(spec[5:])
        gens = parse_perm_lines(path.read_text(), source=str(path))
        if gens and gens[0].degree != size:
            raise GroupError(f"{path}: permutations have degree {gens[0].degree}, expected {size}")
        return gens
    m = _parse(spec)
    name = m.group(1)
    if name == "identity":
        return []
    if name in ("flip", "swap2"):
        return [Perm(np.arange(size)[::-1])]
    if m.group(4) is not None:
        k = int(m.group(4))
        if k < 1 or size % k:
            raise GroupError(f"cyc{k} needs a node count divisible by {k}, got {size}")
        return [Perm(np.roll(np.arange(size), size // k))] if k > 1 else []
    grid = ImageGrid.for_pixels(size)
    if name == "rot90":
        return [rot90_perm(grid)]
    if name == "hflip":
        return [hflip_perm(grid)]
    if name == "vflip":
        return [vflip_perm(grid)]
    if name.startswith("htrans"):
        return [htrans_perm(grid, int(m.group(2) or 1))]
    return [vtrans_perm(grid, int(m.group(3) or 1))]


def builtin(name: str, grid: ImageGrid, *, cap: int = DEFAULT_GROUP_CAP) -> TransformGroup:
    """One of the named image groups, closed into a pixel-permutation group."""
    m = _parse(name)
    if m.group(1) in ("flip", "swap2") or m.group(4) is not None:
        raise GroupError(f"{name!r} is a node-set group, not an image transform")
    group = close_generators(node_generators(name, grid.size), degree=grid.size, cap=cap)
    return TransformGroup(name, grid, group, "builtin")


def load_group(path: str | Path, grid: ImageGrid, *, cap: int = DEFAULT_GROUP_CAP) -> TransformGroup:
    """Close the generator lines of a permutation file into a pixel group."""
    path = Path(path)
    gens = parse_perm_lines(path.read_text(), source=str(path))
    for g in gens:
        if g.degree != grid.size:
            raise GroupError(f"{path}: permutation degree {g.degree} does not match {grid.side}x{grid.side} grid")
    group = close_generators(gens, degree=grid.size, cap=cap)
    return TransformGroup(f"file:{path}", grid, group, "loaded-from-file")


def save_group(tg: TransformGroup, path: str | Path, header: str | None = None) -> None:
    Path(path).write_text(format_perm_lines(list(tg.group.generators), header))


def resolve(spec: str, grid: ImageGrid, *, cap: int = DEFAULT_GROUP_CAP) -> TransformGroup:
    """Builtin name or ``file:<path>``."""
    if spec.startswith("file:"):
        return load_group(spec[5:], grid, cap=cap)
    return builtin(spec, grid, cap=cap)


def example_file(name: str = "half_grid_row_cycle_28.perm") -> Path:
    """Path of a generator file shipped with the package."""
    return Path(str(resources.files("equisearch") / "data" / name))


def apply(g: Perm, image: np.ndarray) -> np.ndarray:
    """Move pixel ``i`` to position ``g(i)``; works on a batch along the last axis."""
    image = np.asarray(image)
    if image.shape[-1] != g.degree:
        raise ValueError(f"image has {image.shape[-1]} pixels, transform acts on {g.degree}")
    return act_on_vector(g, image)
