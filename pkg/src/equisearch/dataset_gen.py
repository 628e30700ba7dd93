"""IDX datasets and group-augmented copies of them.

An augmented dataset replaces every image by one random group transform of
it: a group is drawn uniformly from the augmentation array, then an element
uniformly from that group.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import transforms
from .transforms import ImageGrid, TransformGroup

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    """Images as raw ``uint8`` pixel rows plus integer labels."""

    pixels: np.ndarray  # (n, side*side) uint8
    labels: np.ndarray  # (n,) uint8
    side: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).reshape(len(self.pixels), -1)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if len(self.pixels) != len(self.labels):
            raise ValueError(f"{len(self.pixels)} images but {len(self.labels)} labels")
        if self.pixels.shape[1] != self.side * self.side:
            raise ValueError(f"images have {self.pixels.shape[1]} pixels, expected {self.side}x{self.side}")

    @property
    def images(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float64."""
        return self.pixels / 255.0

    @property
    def grid(self) -> ImageGrid:
        return ImageGrid(self.side)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.pixels[idx], self.labels[idx], self.side)


# -- IDX -----------------------------------------------------------------------


def _read_header(data: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    if len(data) < 4:
        raise IdxFormatError(f"truncated {what} file: no magic number", len(data))
    (got,) = struct.unpack_from(">I", data, 0)
    if got != magic:
        raise IdxFormatError(f"wrong magic for {what}: 0x{got:08x}, expected 0x{magic:08x}", 0)
    if len(data) < 4 + 4 * ndim:
        raise IdxFormatError(f"truncated {what} header", len(data))
    dims = struct.unpack_from(">" + "I" * ndim, data, 4)
    count = 1
    for d in dims:
        count *= d
    if count > (1 << 40):
        raise IdxFormatError(f"{what} dimensions {dims} overflow", 4)
    body = 4 + 4 * ndim
    if len(data) != body + count:
        raise IdxFormatError(f"{what} body has {len(data) - body} bytes, dimensions need {count}", body)
    return dims


def parse_idx_images(data: bytes) -> np.ndarray:
    n, rows, cols = _read_header(data, IMAGES_MAGIC, 3, "images")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    (n,) = _read_header(data, LABELS_MAGIC, 1, "labels")
    return np.frombuffer(data, dtype=np.uint8, offset=8).copy()


def idx_images_bytes(pixels: np.ndarray, side: int) -> bytes:
    return struct.pack(">IIII", IMAGES_MAGIC, len(pixels), side, side) + np.ascontiguousarray(pixels, np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + np.ascontiguousarray(labels, np.uint8).tobytes()


def read_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    imgs = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    n, rows, cols = imgs.shape
    if rows != cols:
        raise IdxFormatError(f"images are {rows}x{cols}, only square images are supported", 8)
    if len(labels) != n:
        raise IdxFormatError(f"{n} images but {len(labels)} labels", 4)
    return LabeledDataset(imgs.reshape(n, -1).copy(), labels, rows)


def write_idx(data: LabeledDataset, images_path: str | Path, labels_path: str | Path) -> None:
    Path(images_path).write_bytes(idx_images_bytes(data.pixels, data.side))
    Path(labels_path).write_bytes(idx_labels_bytes(data.labels))


# -- augmentation --------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationArray:
    """Groups to draw from; an empty tuple is the identity augmentation."""

    groups: tuple[TransformGroup, ...] = ()

    @property
    def is_identity(self) -> bool:
        return not self.groups

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]


def parse_aug_spec(spec: str, grid: ImageGrid) -> AugmentationArray:
    """Parse ``"rot90+hflip+file:scramble.perm"``; ``"identity"`` (or empty) is no augmentation."""
    parts = [p.strip() for p in spec.split("+") if p.strip()]
    if not parts or parts == ["identity"]:
        return AugmentationArray()
    return AugmentationArray(tuple(transforms.resolve(p, grid) for p in parts))


@dataclass(frozen=True)
class AugmentLogEntry:
    index: int
    group: int
    element: int

    def to_dict(self) -> dict:
        return {"index": self.index, "group": self.group, "element": self.element}


def augment(
    data: LabeledDataset, aug: AugmentationArray, seed: int, *, workers: int = 1, log: list | None = None
) -> LabeledDataset:
    """Replace each image by a random group transform of itself; labels unchanged.

    The draws come from one seeded generator up front, so the output does not
    depend on ``workers``. When ``log`` is a list it receives one
    :class:`AugmentLogEntry` per sample.
    """
    if aug.is_identity:
        if log is not None:
            log.extend(AugmentLogEntry(i, -1, 0) for i in range(len(data)))
        return LabeledDataset(data.pixels.copy(), data.labels.copy(), data.side)
    for g in aug.groups:
        if g.grid.side != data.side:
            raise ValueError(f"group {g.name} is for {g.grid.side}x{g.grid.side} images, data is {data.side}x{data.side}")
    rng = np.random.default_rng(seed)
    n = len(data)
    gsel = rng.integers(0, len(aug.groups), size=n)
    esel = np.empty(n, dtype=np.int64)
    for gi, g in enumerate(aug.groups):
        mask = gsel == gi
        esel[mask] = rng.integers(0, g.order, size=int(mask.sum()))
    out = np.empty_like(data.pixels)

    def work(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            perm = aug.groups[gsel[i]].group.as_array()[esel[i]]
            out[i, perm] = data.pixels[i]

    chunks = np.linspace(0, n, max(1, workers) + 1, dtype=int)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(lambda ab: work(*ab), zip(chunks[:-1], chunks[1:])))
    else:
        work(0, n)
    if log is not None:
        log.extend(AugmentLogEntry(i, int(gsel[i]), int(esel[i])) for i in range(n))
    return LabeledDataset(out, data.labels.copy(), data.side)


def undo_augment(data: LabeledDataset, aug: AugmentationArray, log: Sequence[AugmentLogEntry]) -> LabeledDataset:
    """Invert :func:`augment` using its log."""
    out = data.pixels.copy()
    for e in log:
        if e.group < 0:
            continue
        perm = aug.groups[e.group].group.as_array()[e.element]
        out[e.index] = data.pixels[e.index, perm]
    return LabeledDataset(out, data.labels.copy(), data.side)


def write_log(log: Sequence[AugmentLogEntry], aug: AugmentationArray, path: str | Path) -> None:
    names = aug.names
    with open(path, "w") as fh:
        for e in log:
            rec = e.to_dict()
            rec["group_name"] = names[e.group] if e.group >= 0 else "identity"
            fh.write(json.dumps(rec) + "\n")


def subsample(data: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Seeded uniform sample of ``n`` items without replacement."""
    if n > len(data):
        raise ValueError(f"cannot sample {n} items from a dataset of {len(data)}")
    idx = np.random.default_rng(seed).choice(len(data), size=n, replace=False)
    return data.subset(idx)


def split(data: LabeledDataset, n_first: int, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded disjoint split into ``n_first`` items and the rest."""
    idx = np.random.default_rng(seed).permutation(len(data))
    return data.subset(idx[:n_first]), data.subset(idx[n_first:])


def planted_dataset(
    n: int, side: int, *, n_classes: int = 4, group: TransformGroup | None = None, noise: float = 0.15, seed: int = 0
) -> LabeledDataset:
    """Synthetic images whose class distribution is invariant under ``group``.

    Each class has a random template; a sample is its class template moved by
    a uniformly random group element, plus independent pixel noise.
    """
    rng = np.random.default_rng(seed)
    templates = rng.random((n_classes, side * side))
    labels = rng.integers(0, n_classes, size=n)
    imgs = templates[labels]
    if group is not None:
        if group.grid.side != side:
            raise ValueError(f"group {group.name} is for {group.grid.side}x{group.grid.side} images")
        perms = group.group.as_array()
        moved = np.empty_like(imgs)
        rows = np.arange(n)[:, None]
        moved[rows, perms[rng.integers(0, group.order, size=n)]] = imgs
        imgs = moved
    imgs = np.clip(imgs + noise * rng.standard_normal(imgs.shape), 0.0, 1.0)
    return LabeledDataset(np.round(imgs * 255).astype(np.uint8), labels.astype(np.uint8), side)
