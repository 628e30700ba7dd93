"""Tied-weight MLPs whose layers share parameters along edge orbits.

A :class:`TiedLayer` stores one free weight per edge orbit and one free bias
per output-node orbit; the dense ``(n_in, n_out)`` matrix is expanded on the
fly as ``W.flat[i] = free_weights[I[i]]``. Gradients of the free parameters
are the per-orbit sums of the dense gradients.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import transforms
from .group_core import (
    DEFAULT_GROUP_CAP,
    GroupAction,
    GroupError,
    Perm,
    PermGroup,
    act_on_vector,
    close_generators,
    concat_actions,
    natural_action,
    regular_block_action,
    split_action,
    trivial_action,
    trivial_group,
)
from .orbit_engine import (
    LayerShape,
    OrbitPartition,
    build_edge_action,
    load_partition,
    node_orbits,
    orbits_fast,
    save_partition,
)

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity", "softmax")
CHECKPOINT_FORMAT = "equisearch-checkpoint/1"


class TrainingDiverged(FloatingPointError):
    pass


# -- node action plans ---------------------------------------------------------


@dataclass(frozen=True)
class NodeActionPlan:
    """One group acting on every layer boundary of a network (input, hidden..., output)."""

    group: PermGroup
    boundaries: tuple[GroupAction, ...]

    def __post_init__(self):
        for a in self.boundaries:
            if a.group is not self.group:
                raise GroupError("all boundary actions of a plan must share its group")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(a.domain_size for a in self.boundaries)


def _boundary_action(group: PermGroup, width: int, mode: str, natural: GroupAction) -> GroupAction:
    if mode == "trivial":
        return trivial_action(group, width)
    if mode == "regular":
        return regular_block_action(group, width)
    if mode == "same":
        if width != natural.domain_size:
            raise GroupError(f"'same' action needs width {natural.domain_size}, got {width}")
        return natural
    raise ValueError(f"unknown boundary action mode {mode!r}")


def make_plan(widths: Sequence[int], group: PermGroup, *, hidden: str = "regular", output: str = "trivial") -> NodeActionPlan:
    """Plan for a group given by its natural action on the input nodes.

    Hidden boundaries use ``width/|G|`` blocks of the regular action by default;
    the output boundary is trivial by default (class logits are invariant).
    """
    if group.degree != widths[0]:
        raise GroupError(f"group acts on {group.degree} points but the input width is {widths[0]}")
    nat = natural_action(group)
    bounds = [nat]
    bounds += [_boundary_action(group, w, hidden, nat) for w in widths[1:-1]]
    if len(widths) > 1:
        bounds.append(_boundary_action(group, widths[-1], output, nat))
    return NodeActionPlan(group, tuple(bounds))


def plan_from_spec(
    spec: str, widths: Sequence[int], *, hidden: str = "regular", output: str = "trivial", cap: int = DEFAULT_GROUP_CAP
) -> NodeActionPlan:
    """Realize a group spec string on the boundaries of a network.

    Boundaries in ``same`` mode (always the input) get the group string's own
    generators realized at their width; the group is the joint closure of
    those generators on the disjoint union of those boundaries.
    """
    modes = ["same"] + [hidden] * (len(widths) - 2) + ([output] if len(widths) > 1 else [])
    same_idx = [i for i, m in enumerate(modes) if m == "same"]
    per_boundary = [transforms.node_generators(spec, widths[i]) for i in same_idx]
    n_gens = {len(g) for g in per_boundary}
    if len(n_gens) != 1:
        raise GroupError(f"spec {spec!r} does not realize consistently on widths {list(widths)}")
    sizes = [widths[i] for i in same_idx]
    joint = [Perm(np.concatenate([gens[j].map + off for gens, off in zip(per_boundary, np.cumsum([0] + sizes[:-1]))]))
             for j in range(n_gens.pop())]
    group = close_generators(joint, degree=sum(sizes), cap=cap)
    same_actions = dict(zip(same_idx, split_action(group, sizes)))
    bounds = []
    for i, (w, mode) in enumerate(zip(widths, modes)):
        if mode == "same":
            bounds.append(same_actions[i])
        elif mode == "trivial":
            bounds.append(trivial_action(group, w))
        elif mode == "regular":
            bounds.append(regular_block_action(group, w))
        else:
            raise ValueError(f"unknown boundary action mode {mode!r}")
    return NodeActionPlan(group, tuple(bounds))


def trivial_plan(widths: Sequence[int]) -> NodeActionPlan:
    g = trivial_group(widths[0])
    return NodeActionPlan(g, tuple(trivial_action(g, w) for w in widths))


def joint_plan(plans: Sequence[NodeActionPlan], *, cap: int = DEFAULT_GROUP_CAP) -> NodeActionPlan:
    """The group generated by several plans, acting on all boundaries at once."""
    if not plans:
        raise ValueError("need at least one plan")
    widths = plans[0].widths
    for p in plans:
        if p.widths != widths:
            raise GroupError(f"plans have different widths: {p.widths} vs {widths}")
    gens = []
    for p in plans:
        union = concat_actions(list(p.boundaries))
        gens += [union[p.group.index_of(g)] for g in p.group.generators]
    group = close_generators(gens, degree=sum(widths), cap=cap)
    return NodeActionPlan(group, tuple(split_action(group, list(widths))))


# -- layers and networks -------------------------------------------------------


@dataclass
class TiedLayer:
    shape: LayerShape
    partition: OrbitPartition
    free_weights: np.ndarray
    bias_partition: OrbitPartition
    free_biases: np.ndarray

    def __post_init__(self):
        if self.partition.edge_count != self.shape.edge_count:
            raise ValueError(f"partition covers {self.partition.edge_count} edges, layer has {self.shape.edge_count}")
        if self.bias_partition.edge_count != self.shape.n_out:
            raise ValueError("bias partition must cover the output nodes")
        if len(self.free_weights) != self.partition.orbit_count:
            raise ValueError("need one free weight per edge orbit")
        if len(self.free_biases) != self.bias_partition.orbit_count:
            raise ValueError("need one free bias per output-node orbit")

    @property
    def untied(self) -> bool:
        # canonical labelling makes the all-singletons partition exactly arange
        return self.partition.orbit_count == self.shape.edge_count

    def weight_matrix(self, free: np.ndarray | None = None) -> np.ndarray:
        free = self.free_weights if free is None else free
        if self.untied:
            return free.reshape(self.shape.n_in, self.shape.n_out)
        return free[self.partition.assignment].reshape(self.shape.n_in, self.shape.n_out)

    def bias_vector(self, free: np.ndarray | None = None) -> np.ndarray:
        free = self.free_biases if free is None else free
        return free[self.bias_partition.assignment]

    def reduce_weight_grad(self, dense: np.ndarray) -> np.ndarray:
        if self.untied:
            return dense.reshape(-1).copy()
        return np.bincount(self.partition.assignment, dense.reshape(-1), minlength=self.partition.orbit_count)

    def reduce_bias_grad(self, dense: np.ndarray) -> np.ndarray:
        return np.bincount(self.bias_partition.assignment, dense, minlength=self.bias_partition.orbit_count)


@dataclass
class TiedMlp:
    layers: list[TiedLayer]
    activations: list[str]

    def __post_init__(self):
        if len(self.activations) != len(self.layers):
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if "softmax" in self.activations[:-1]:
            raise ValueError("softmax is only allowed on the last layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape.n_out != b.shape.n_in:
                raise ValueError(f"layer shapes do not chain: {a.shape} then {b.shape}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].shape.n_in,) + tuple(l.shape.n_out for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.free_weights, layer.free_biases]
        return out

    def copy(self) -> "TiedMlp":
        layers = [TiedLayer(l.shape, l.partition, l.free_weights.copy(), l.bias_partition, l.free_biases.copy())
                  for l in self.layers]
        return TiedMlp(layers, list(self.activations))


def _layer_partitions(shape: LayerShape, plans: Sequence[NodeActionPlan], k: int) -> tuple[OrbitPartition, OrbitPartition]:
    if not plans:
        return OrbitPartition.singletons(shape.edge_count), OrbitPartition.singletons(shape.n_out)
    actions = [build_edge_action(shape, p.boundaries[k], p.boundaries[k + 1]) for p in plans]
    return orbits_fast(shape, actions), node_orbits([p.boundaries[k + 1] for p in plans])


def build_tied_mlp(
    widths: Sequence[int],
    plans: Sequence[NodeActionPlan] = (),
    *,
    seed: int = 0,
    hidden_activation: str = "relu",
    head: str = "softmax",
) -> TiedMlp:
    """Network equivariant to every plan's group (and so to the group they generate).

    Each layer's edge partition comes from :func:`orbits_fast` over the plans'
    edge actions. Free weights are drawn uniformly from
    ``+-sqrt(6 / (n_in + n_out))``; biases start at zero.
    """
    widths = list(widths)
    for p in plans:
        if list(p.widths) != widths:
            raise GroupError(f"plan widths {p.widths} do not match network widths {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(widths) - 1):
        shape = LayerShape(widths[k], widths[k + 1])
        part, bias_part = _layer_partitions(shape, plans, k)
        bound = np.sqrt(6.0 / (shape.n_in + shape.n_out))
        w = rng.uniform(-bound, bound, size=part.orbit_count)
        layers.append(TiedLayer(shape, part, w, bias_part, np.zeros(bias_part.orbit_count)))
    acts = [hidden_activation] * (len(layers) - 1) + [head]
    return TiedMlp(layers, acts)


def single_layer(layer: TiedLayer, activation: str = "identity") -> TiedMlp:
    return TiedMlp([layer], [activation])


# -- forward and backward ------------------------------------------------------


def _relu(z):
    if z.dtype == object:
        return np.where(z > 0, z, 0)
    return np.maximum(z, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _to_fraction(a: np.ndarray) -> np.ndarray:
    return np.array([Fraction(v) for v in np.asarray(a).reshape(-1).tolist()], dtype=object).reshape(np.shape(a))


def forward(net: TiedMlp | TiedLayer, x: np.ndarray, *, return_logits: bool = False, exact: bool = False) -> np.ndarray:
    """Apply the network to one input vector or a batch of row vectors.

    ``exact=True`` converts inputs and parameters to :class:`fractions.Fraction`
    and evaluates without rounding (softmax heads then return logits).
    """
    if isinstance(net, TiedLayer):
        net = single_layer(net)
    a = np.asarray(x)
    if a.shape[-1] != net.layers[0].shape.n_in:
        raise ValueError(f"input has {a.shape[-1]} features, network expects {net.layers[0].shape.n_in}")
    if exact:
        a = a if a.dtype == object else _to_fraction(a)
    else:
        a = a.astype(np.float64, copy=False)
    for layer, act in zip(net.layers, net.activations):
        w, b = layer.free_weights, layer.free_biases
        if exact:
            w, b = _to_fraction(w), _to_fraction(b)
        a = a @ layer.weight_matrix(w) + layer.bias_vector(b)
        if act == "relu":
            a = _relu(a)
        elif act == "softmax" and not (return_logits or exact):
            a = softmax(a)
    return a


def _forward_cache(net: TiedMlp, x: np.ndarray):
    acts = [x]
    pre = []
    a = x
    for layer, act in zip(net.layers, net.activations):
        z = a @ layer.weight_matrix() + layer.bias_vector()
        pre.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
        acts.append(a)
    return acts, pre


def backward(net: TiedMlp, x: np.ndarray, grad_out: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass to logits plus free-parameter gradients of ``sum(grad_out * logits)``."""
    acts, pre = _forward_cache(net, x)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    delta = grad_out
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if net.activations[k] == "relu":
            delta = delta * (pre[k] > 0)
        gw = layer.reduce_weight_grad(acts[k].T @ delta)
        gb = layer.reduce_bias_grad(delta.sum(axis=0))
        grads[k] = (gw, gb)
        if k:
            delta = delta @ layer.weight_matrix().T
    return acts[-1], grads


def cross_entropy_grads(net: TiedMlp, x: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy, its free-parameter gradients, and the logits."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    acts, pre = _forward_cache(net, x)
    logits = acts[-1]
    probs = softmax(logits)
    n = x.shape[0]
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), labels], 1e-300, None)))
    g = probs
    g[np.arange(n), labels] -= 1.0
    _, grads = backward(net, x, g / n)
    return float(loss), grads, logits


# -- equivariance --------------------------------------------------------------


@dataclass
class EquivarianceReport:
    passed: bool
    max_deviation: float
    failing_elements: list[int]
    elements_checked: int
    exhaustive: bool
    exact: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "failing_elements": self.failing_elements,
            "elements_checked": self.elements_checked,
            "exhaustive": self.exhaustive,
            "exact": self.exact,
            "tolerance": self.tolerance,
        }


def check_equivariance(
    model: TiedMlp | TiedLayer,
    plan: NodeActionPlan,
    *,
    tolerance: float = 1e-6,
    probes: int | np.ndarray = 10,
    exact: bool = False,
    cap: int = 2048,
    samples: int = 500,
    seed: int = 0,
) -> EquivarianceReport:
    """Test ``f(g . x) == g . f(x)`` for group elements of ``plan``.

    Every element is tried when the group has at most ``cap`` elements,
    otherwise ``samples`` seeded random ones. Float runs compare the largest
    absolute difference against ``tolerance`` times the largest output
    magnitude; exact runs require zero difference.
    """
    net = single_layer(model) if isinstance(model, TiedLayer) else model
    widths = net.widths
    if plan.boundaries[0].domain_size != widths[0] or plan.boundaries[-1].domain_size != widths[-1]:
        raise GroupError(f"plan boundaries {plan.widths} do not match network widths {widths}")
    rng = np.random.default_rng(seed)
    if isinstance(probes, int):
        x = rng.standard_normal((probes, widths[0]))
    else:
        x = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    order = plan.group.order
    exhaustive = order <= cap
    elements = range(order) if exhaustive else sorted(set(rng.integers(0, order, size=samples).tolist()) | {0})
    in_act, out_act = plan.boundaries[0], plan.boundaries[-1]
    fx = forward(net, x, exact=exact, return_logits=exact)
    scale = 1.0
    if not exact:
        scale = max(float(np.max(np.abs(fx))), np.finfo(float).tiny)
    worst = 0.0
    failing = []
    for k in elements:
        lhs = forward(net, act_on_vector(in_act.perms[k], x), exact=exact, return_logits=exact)
        rhs = act_on_vector(out_act.perms[k], fx)
        diff = lhs - rhs
        if exact:
            dev = float(max(abs(d) for d in diff.reshape(-1))) if diff.size else 0.0
            bad = dev != 0.0
        else:
            dev = float(np.max(np.abs(diff))) / scale if diff.size else 0.0
            bad = not dev <= tolerance
        worst = max(worst, dev)
        if bad:
            failing.append(int(k))
    return EquivarianceReport(not failing, worst, failing, len(elements), exhaustive, exact, 0.0 if exact else tolerance)


def tied_on_orbits(weights: np.ndarray, partition: OrbitPartition) -> bool:
    """True when a dense weight array is constant on every orbit of ``partition``."""
    w = np.asarray(weights).reshape(-1)
    first = np.zeros(partition.orbit_count, dtype=np.int64)
    first[partition.assignment[::-1]] = np.arange(w.size)[::-1]
    return bool(np.array_equal(w, w[first][partition.assignment]))


# -- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 4
    seed: int = 0


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    @property
    def best_val_accuracy(self) -> float:
        return max(self.val_accuracy) if self.val_accuracy else float("nan")


def accuracy(net: TiedMlp, x: np.ndarray, labels: np.ndarray, batch: int = 4096) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(x), batch):
        logits = forward(net, x[s:s + batch], return_logits=True)
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[s:s + batch]))
    return hits / len(x)


def train(net: TiedMlp, data, cfg: TrainConfig = TrainConfig(), val=None) -> TrainReport:
    """Minibatch SGD with momentum on mean softmax cross-entropy.

    ``data`` and ``val`` need ``images`` (rows of features) and ``labels``.
    The network is updated in place.
    """
    x = np.asarray(data.images, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    if x.shape[1] != net.widths[0]:
        raise ValueError(f"data has {x.shape[1]} features, network expects {net.widths[0]}")
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total, seen, hits = 0.0, 0, 0
        for b, start in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads, logits = cross_entropy_grads(net, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            flat = [g for pair in grads for g in pair]
            for p, v, g in zip(params, velocity, flat):
                v *= cfg.momentum
                v += g
                p -= cfg.lr * v
            total += loss * len(idx)
            seen += len(idx)
            hits += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        report.train_loss.append(total / max(seen, 1))
        report.train_accuracy.append(hits / max(seen, 1))
        if val is not None:
            report.val_accuracy.append(accuracy(net, val.images, np.asarray(val.labels)))
        log.debug("epoch %d loss %.4f", epoch, report.train_loss[-1])
    return report


def count_free_parameters(net: TiedMlp, *, weights_only: bool = False) -> int:
    total = sum(l.partition.orbit_count for l in net.layers)
    if not weights_only:
        total += sum(l.bias_partition.orbit_count for l in net.layers)
    return total


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(net: TiedMlp, path: str | Path, *, hyperparameters: dict | None = None, seed: int | None = None) -> Path:
    """Write ``<path>`` (JSON manifest) plus partition files and a little-endian f64 parameter blob."""
    path = Path(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    layers = []
    for k, layer in enumerate(net.layers):
        wname, bname = f"{stem}.layer{k}.orb", f"{stem}.layer{k}.bias.orb"
        save_partition(layer.partition, path.parent / wname)
        save_partition(layer.bias_partition, path.parent / bname)
        layers.append({"n_in": layer.shape.n_in, "n_out": layer.shape.n_out, "partition": wname,
                       "bias_partition": bname, "weights": layer.partition.orbit_count,
                       "biases": layer.bias_partition.orbit_count})
    blob = f"{stem}.params.bin"
    (path.parent / blob).write_bytes(np.concatenate([p.astype("<f8") for p in net.parameters()]).tobytes())
    manifest = {"format": CHECKPOINT_FORMAT, "widths": list(net.widths), "activations": net.activations,
                "layers": layers, "params": blob, "hyperparameters": hyperparameters or {}, "seed": seed}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[TiedMlp, dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an equisearch checkpoint")
    params = np.frombuffer((path.parent / manifest["params"]).read_bytes(), dtype="<f8")
    expected = sum(l["weights"] + l["biases"] for l in manifest["layers"])
    if params.size != expected:
        raise ValueError(f"{path}: parameter blob has {params.size} values, manifest expects {expected}")
    layers, pos = [], 0
    for spec in manifest["layers"]:
        part = load_partition(path.parent / spec["partition"])
        bias_part = load_partition(path.parent / spec["bias_partition"])
        w = params[pos:pos + spec["weights"]].astype(np.float64)
        pos += spec["weights"]
        b = params[pos:pos + spec["biases"]].astype(np.float64)
        pos += spec["biases"]
        layers.append(TiedLayer(LayerShape(spec["n_in"], spec["n_out"]), part, w, bias_part, b))
    return TiedMlp(layers, list(manifest["activations"])), manifest
