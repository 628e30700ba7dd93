"""Edge actions of fully connected layers and their orbit partitions.

Edges are flattened row-major by input node: edge ``(n, m)`` has index
``n * n_out + m``. Two constructions are provided:

* :func:`orbits_fast` -- breadth-first search that applies only the elements
  of each component group, ``O((|G_1| + ... + |G_m|) N)`` work.
* :func:`orbits_basic` -- stamps the whole group orbit of every edge,
  ``O(|G| N)`` work for the full group ``G``.

Both return a canonically labelled :class:`OrbitPartition`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .group_core import GroupAction, GroupError, PermGroup, Perm, trivial_action

PARTITION_MAGIC = b"ORB1"
_HEADER = struct.Struct("<4sQQ")


class PartitionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LayerShape:
    n_in: int
    n_out: int

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise ValueError(f"layer shape must be positive, got {self.n_in}x{self.n_out}")

    @property
    def edge_count(self) -> int:
        return self.n_in * self.n_out

    @classmethod
    def parse(cls, text: str) -> "LayerShape":
        """Parse ``"NxM"``."""
        try:
            a, b = text.lower().split("x")
            return cls(int(a), int(b))
        except ValueError:
            raise ValueError(f"bad layer shape {text!r}; expected NxM") from None

    def edge_index(self, n: int, m: int) -> int:
        return n * self.n_out + m

    def __str__(self) -> str:
        return f"{self.n_in}x{self.n_out}"


@dataclass(frozen=True)
class EdgeAction:
    """The pairing of an input-node action and an output-node action of one group."""

    shape: LayerShape
    in_action: GroupAction
    out_action: GroupAction

    @property
    def group(self) -> PermGroup:
        return self.in_action.group

    def node_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.in_action.as_array(), self.out_action.as_array()

    def edge_perm_array(self) -> np.ndarray:
        """Materialized ``(|G|, edge_count)`` edge permutations."""
        ins, outs = self.node_arrays()
        return (ins[:, :, None] * self.shape.n_out + outs[:, None, :]).reshape(ins.shape[0], -1)

    def edge_perms(self) -> list[Perm]:
        return [Perm(row, check=False) for row in self.edge_perm_array()]


def build_edge_action(shape: LayerShape, in_action: GroupAction, out_action: GroupAction) -> EdgeAction:
    if in_action.group is not out_action.group:
        raise GroupError("input and output actions must be over the same group")
    if in_action.domain_size != shape.n_in or out_action.domain_size != shape.n_out:
        raise GroupError(
            f"action sizes {in_action.domain_size}x{out_action.domain_size} do not match layer {shape}"
        )
    return EdgeAction(shape, in_action, out_action)


@dataclass(frozen=True)
class OrbitRun:
    """What one algorithm run did, before canonical relabelling."""

    algorithm: str
    applications: int
    raw_assignment: np.ndarray
    raw_count: int
    group_orders: tuple[int, ...]


@dataclass(frozen=True)
class OrbitPartition:
    """Orbit id ``assignment[i]`` of every edge, ids ``0..orbit_count-1``."""

    assignment: np.ndarray
    orbit_count: int
    run: OrbitRun | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)

    @classmethod
    def from_labels(cls, labels: np.ndarray, run: OrbitRun | None = None) -> "OrbitPartition":
        canon, count = kernels.canonical_labels(labels)
        return cls(canon, count, run)

    @classmethod
    def singletons(cls, size: int) -> "OrbitPartition":
        return cls(np.arange(size), size)

    @property
    def edge_count(self) -> int:
        return int(self.assignment.size)

    def validate(self) -> None:
        a = self.assignment
        if a.size == 0:
            if self.orbit_count != 0:
                raise PartitionFormatError("empty partition with nonzero orbit count")
            return
        if a.min() < 0 or a.max() >= self.orbit_count:
            raise PartitionFormatError("orbit id out of range")
        if np.unique(a).size != self.orbit_count:
            raise PartitionFormatError("orbit ids are not contiguous")
        canon, _ = kernels.canonical_labels(a)
        if not np.array_equal(canon, a):
            raise PartitionFormatError("partition is not canonically labelled")

    def orbit_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.orbit_count)

    def blocks(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        return np.split(order, np.cumsum(self.orbit_sizes())[:-1])

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, OrbitPartition)
            and self.orbit_count == other.orbit_count
            and np.array_equal(self.assignment, other.assignment)
        )

    def __hash__(self) -> int:
        return hash((self.orbit_count, self.assignment.tobytes()))


def _check_actions(shape: LayerShape, actions: Sequence[EdgeAction]) -> None:
    if not actions:
        raise ValueError("need at least one edge action")
    for a in actions:
        if a.shape != shape:
            raise GroupError(f"edge action for layer {a.shape} used on layer {shape}")


def orbits_fast(shape: LayerShape, actions: Sequence[EdgeAction]) -> OrbitPartition:
    """Orbits of the group generated by all component edge actions.

    Each popped edge is mapped by every element of every component group;
    unvisited images join the current orbit's queue.
    """
    _check_actions(shape, actions)
    ins = np.concatenate([a.node_arrays()[0] for a in actions])
    outs = np.concatenate([a.node_arrays()[1] for a in actions])
    raw, count, apps = kernels.fast_orbits(ins, outs)
    run = OrbitRun("fast", int(apps), raw, int(count), tuple(a.group.order for a in actions))
    return OrbitPartition.from_labels(raw, run)


def orbits_basic(shape: LayerShape, action: EdgeAction, *, mark_visited: bool = False) -> OrbitPartition:
    """Orbits of one group by stamping the full orbit of each edge index.

    By default no edge is ever marked visited, so the whole orbit of every
    edge is stamped (``|G| * N`` applications) and the last stamp wins. With
    ``mark_visited=True`` only orbit representatives are expanded.
    """
    _check_actions(shape, [action])
    ins, outs = action.node_arrays()
    raw, count, apps = kernels.basic_orbits(ins, outs, mark_visited)
    run = OrbitRun("basic", int(apps), raw, int(count), (action.group.order,))
    return OrbitPartition.from_labels(raw, run)


def count_group_applications(partition: OrbitPartition) -> int:
    """Exact number of edge-image evaluations the producing run performed."""
    if partition.run is None:
        raise ValueError("partition was not produced by an instrumented orbit run")
    return partition.run.applications


def refine_merge(p: OrbitPartition, q: OrbitPartition) -> OrbitPartition:
    """Finest common coarsening of two partitions of the same index set."""
    if p.edge_count != q.edge_count:
        raise ValueError(f"length mismatch: {p.edge_count} vs {q.edge_count}")
    labels = kernels.merge_labels(p.assignment, q.assignment)
    return OrbitPartition.from_labels(labels)


def node_orbits(actions: Sequence[GroupAction]) -> OrbitPartition:
    """Orbits of nodes under the group generated by several node actions."""
    if not actions:
        raise ValueError("need at least one node action")
    size = actions[0].domain_size
    edge_actions = []
    for a in actions:
        if a.domain_size != size:
            raise GroupError("node actions have different domain sizes")
        edge_actions.append(EdgeAction(LayerShape(1, size), trivial_action(a.group, 1), a))
    return orbits_fast(LayerShape(1, size), edge_actions)


def same_partition(a: np.ndarray | OrbitPartition, b: np.ndarray | OrbitPartition) -> bool:
    """Equality as set partitions, whatever the labelling."""
    la = a.assignment if isinstance(a, OrbitPartition) else np.asarray(a)
    lb = b.assignment if isinstance(b, OrbitPartition) else np.asarray(b)
    return la.shape == lb.shape and np.array_equal(kernels.canonical_labels(la)[0], kernels.canonical_labels(lb)[0])


# -- serialization -------------------------------------------------------------


def partition_to_bytes(p: OrbitPartition) -> bytes:
    if p.orbit_count > 0xFFFFFFFF:
        raise ValueError("too many orbits for u32 ids")
    return _HEADER.pack(PARTITION_MAGIC, p.edge_count, p.orbit_count) + p.assignment.astype("<u4").tobytes()


def partition_from_bytes(data: bytes) -> OrbitPartition:
    if len(data) < _HEADER.size:
        raise PartitionFormatError(f"truncated header: {len(data)} bytes")
    magic, edge_count, count = _HEADER.unpack_from(data)
    if magic != PARTITION_MAGIC:
        raise PartitionFormatError(f"bad magic {magic!r}, expected {PARTITION_MAGIC!r}")
    expected = _HEADER.size + 4 * edge_count
    if len(data) != expected:
        raise PartitionFormatError(f"expected {expected} bytes for {edge_count} edges, got {len(data)}")
    ids = np.frombuffer(data, dtype="<u4", offset=_HEADER.size).astype(np.int64)
    p = OrbitPartition(ids, int(count))
    p.validate()
    return p


def partition_to_json(p: OrbitPartition) -> str:
    return json.dumps({"edge_count": p.edge_count, "orbit_count": p.orbit_count,
                       "assignment": p.assignment.tolist()})


def partition_from_json(text: str) -> OrbitPartition:
    obj = json.loads(text)
    ids = np.asarray(obj["assignment"], dtype=np.int64)
    if ids.size != obj["edge_count"]:
        raise PartitionFormatError(f"assignment has {ids.size} entries, header says {obj['edge_count']}")
    p = OrbitPartition(ids, int(obj["orbit_count"]))
    p.validate()
    return p


def save_partition(p: OrbitPartition, path: str | Path, *, as_json: bool = False) -> None:
    path = Path(path)
    if as_json:
        path.write_text(partition_to_json(p))
    else:
        path.write_bytes(partition_to_bytes(p))


def load_partition(path: str | Path) -> OrbitPartition:
    data = Path(path).read_bytes()
    if data[:4] == PARTITION_MAGIC:
        return partition_from_bytes(data)
    return partition_from_json(data.decode())
