"""Deep Q-learning search over which equivariances to induce.

A state is a bit vector over a menu of groups; an action toggles one bit.
Every step evaluates the child network of the next state (memoized), turns
its validation accuracy into a reward, stores the transition in a replay
memory and takes one TD step on a replay minibatch.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset_gen import LabeledDataset
from .tied_mlp import TrainConfig, TiedMlp, backward, build_tied_mlp, forward, make_plan, train
from .transforms import TransformGroup

log = logging.getLogger(__name__)

GEMLP_SCHEDULE: tuple[tuple[float, int], ...] = (
    (1.0, 200), (0.9, 100), (0.8, 100), (0.7, 100), (0.6, 100), (0.5, 100), (0.4, 100),
    (0.3, 50), (0.2, 50), (0.1, 50), (0.05, 50),
)
GCNN_SCHEDULE: tuple[tuple[float, int], ...] = tuple(
    (e, 50) for e in (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01)
)

State = tuple[int, ...]


def reward(acc: float, acc0: float) -> float:
    """``x * exp(|x|)`` with ``x = acc - acc0``."""
    x = acc - acc0
    return x * math.exp(abs(x))


def toggle(state: State, action: int) -> State:
    s = list(state)
    s[action] = 1 - s[action]
    return tuple(s)


@dataclass(frozen=True)
class Transition:
    state: State
    action: int
    reward: float
    next_state: State


class RewardOracle(Protocol):
    acc0: float

    def evaluate(self, state: State, seed: int) -> float: ...


class MemoizedOracle:
    """Evaluates each ``(state, seed)`` at most once and counts real evaluations."""

    def __init__(self, oracle: RewardOracle):
        self.oracle = oracle
        self.cache: dict[tuple[State, int], float] = {}
        self.calls = 0

    @property
    def acc0(self) -> float:
        return self.oracle.acc0

    def evaluate(self, state: State, seed: int) -> float:
        key = (tuple(int(b) for b in state), seed)
        if key not in self.cache:
            self.calls += 1
            self.cache[key] = float(self.oracle.evaluate(key[0], seed))
        return self.cache[key]


@dataclass
class PlantedOracle:
    """Synthetic accuracy ``acc0 + step * (bits agreeing with mask)``."""

    mask: State
    acc0: float = 0.5
    step: float = 0.02

    def evaluate(self, state: State, seed: int) -> float:
        return self.acc0 + self.step * sum(int(a == b) for a, b in zip(state, self.mask))


# -- Q network -----------------------------------------------------------------


class QNet:
    """Untied ReLU MLP from a state bit vector to one Q-value per toggle action, trained with Adam."""

    def __init__(self, g_size: int, hidden: Sequence[int] = (400, 400, 400), *, lr: float = 1e-3, seed: int = 0):
        self.net: TiedMlp = build_tied_mlp([g_size, *hidden, g_size], seed=seed, head="identity")
        self.lr = lr
        self._m = [np.zeros_like(p) for p in self.net.parameters()]
        self._v = [np.zeros_like(p) for p in self.net.parameters()]
        self._t = 0

    @property
    def g_size(self) -> int:
        return self.net.widths[0]

    def q_values(self, states) -> np.ndarray:
        return forward(self.net, np.asarray(states, dtype=np.float64))

    def loss_and_grads(self, states, actions, targets):
        """Half mean squared TD error on the taken actions, with gradients."""
        s = np.asarray(states, dtype=np.float64)
        a = np.asarray(actions)
        rows = np.arange(len(s))
        q = forward(self.net, s)
        err = q[rows, a] - np.asarray(targets, dtype=np.float64)
        g = np.zeros_like(q)
        g[rows, a] = err / len(s)
        _, grads = backward(self.net, s, g)
        return 0.5 * float(np.mean(err ** 2)), [x for pair in grads for x in pair]

    def step(self, grads, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self._t += 1
        for p, m, v, g in zip(self.net.parameters(), self._m, self._v, grads):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** self._t)
            vhat = v / (1 - beta2 ** self._t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)

    def td_update(self, batch: Sequence[Transition], gamma: float) -> float:
        """One step toward ``r + gamma * max_a' Q(s', a')`` (targets held fixed)."""
        s = np.array([t.state for t in batch], dtype=np.float64)
        s2 = np.array([t.next_state for t in batch], dtype=np.float64)
        r = np.array([t.reward for t in batch])
        targets = r + gamma * self.q_values(s2).max(axis=1)
        loss, grads = self.loss_and_grads(s, [t.action for t in batch], targets)
        self.step(grads)
        return loss


class ReplayMemory:
    def __init__(self, capacity: int):
        self.buffer: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def append(self, t: Transition) -> None:
        self.buffer.append(t)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        n = len(self.buffer)
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        return [self.buffer[i] for i in idx]


# -- search loop ---------------------------------------------------------------


@dataclass
class SearchConfig:
    g_size: int
    epsilon_schedule: list[tuple[float, int]] = field(default_factory=lambda: list(GEMLP_SCHEDULE))
    gamma: float = 0.5
    replay_capacity: int = 10_000
    batch_size: int = 512
    horizon: int | None = None  # steps per episode; defaults to g_size
    q_hidden: tuple[int, ...] = (400, 400, 400)
    q_lr: float = 1e-3
    updates_per_step: int = 1
    failure_reward: float = -1.0
    top_k: int = 5

    @property
    def total_models(self) -> int:
        return sum(n for _, n in self.epsilon_schedule)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        if "epsilon_schedule" in d:
            d["epsilon_schedule"] = [tuple(x) for x in d["epsilon_schedule"]]
        if "q_hidden" in d:
            d["q_hidden"] = tuple(d["q_hidden"])
        return cls(**d)


@dataclass
class SearchRecord:
    step: int
    epsilon: float
    state: State
    accuracy: float
    reward: float
    failed: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state"] = list(self.state)
        return d


@dataclass
class SearchReport:
    records: list[SearchRecord]
    acc0: float
    oracle_calls: int
    top_k: int = 5

    def epsilon_means(self) -> dict[float, float]:
        """Mean child accuracy per epsilon value, failures excluded."""
        out: dict[float, list[float]] = {}
        for r in self.records:
            if not r.failed:
                out.setdefault(r.epsilon, []).append(r.accuracy)
        return {e: float(np.mean(v)) for e, v in out.items()}

    def top_states(self, k: int | None = None) -> list[tuple[State, float, float]]:
        """Distinct states with the highest rewards as ``(state, accuracy, reward)``."""
        best: dict[State, SearchRecord] = {}
        for r in self.records:
            if not r.failed and r.state not in best:
                best[r.state] = r
        ranked = sorted(best.values(), key=lambda r: -r.reward)
        return [(r.state, r.accuracy, r.reward) for r in ranked[: (k or self.top_k)]]

    def summary(self) -> dict:
        return {
            "acc0": self.acc0,
            "models_trained": len(self.records),
            "distinct_states": len({r.state for r in self.records}),
            "oracle_calls": self.oracle_calls,
            "epsilon_means": [{"epsilon": e, "mean_accuracy": m} for e, m in self.epsilon_means().items()],
            "top_states": [{"state": list(s), "accuracy": a, "reward": r} for s, a, r in self.top_states()],
        }

    def write(self, jsonl_path: str | Path, summary_path: str | Path) -> None:
        with open(jsonl_path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict()) + "\n")
        Path(summary_path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def run_search(cfg: SearchConfig, oracle: RewardOracle, seed: int = 0, *, qnet: QNet | None = None) -> SearchReport:
    """Epsilon-greedy deep Q-learning with experience replay.

    Episodes start at the all-zeros state and last ``cfg.horizon`` steps; each
    step trains (or recalls) one child model.
    """
    rng = np.random.default_rng(seed)
    memo = oracle if isinstance(oracle, MemoizedOracle) else MemoizedOracle(oracle)
    qnet = qnet or QNet(cfg.g_size, cfg.q_hidden, lr=cfg.q_lr, seed=seed)
    replay = ReplayMemory(cfg.replay_capacity)
    horizon = cfg.horizon or cfg.g_size
    acc0 = memo.acc0
    zeros: State = (0,) * cfg.g_size
    state, t_episode, step = zeros, 0, 0
    records: list[SearchRecord] = []
    for eps, n_models in cfg.epsilon_schedule:
        for _ in range(n_models):
            if t_episode == horizon:
                state, t_episode = zeros, 0
            if rng.random() < eps:
                action = int(rng.integers(cfg.g_size))
            else:
                q = qnet.q_values([state])[0]
                action = int(rng.choice(np.flatnonzero(q == q.max())))
            nxt = toggle(state, action)
            try:
                acc = memo.evaluate(nxt, seed)
                r, failed = reward(acc, acc0), False
            except Exception as exc:  # a broken child must not stop the search
                log.warning("evaluation of state %s failed: %s", nxt, exc)
                acc, r, failed = float("nan"), cfg.failure_reward, True
            replay.append(Transition(state, action, r, nxt))
            for _ in range(cfg.updates_per_step):
                qnet.td_update(replay.sample(cfg.batch_size, rng), cfg.gamma)
            records.append(SearchRecord(step, eps, nxt, acc, r, failed))
            state, t_episode, step = nxt, t_episode + 1, step + 1
    return SearchReport(records, acc0, memo.calls, cfg.top_k)


# -- MLP child networks ----------------------------------------------------------


class MlpRewardOracle:
    """Trains a tied MLP equivariant to the selected menu groups; returns its best validation accuracy.

    Hidden widths must be divisible by every menu group's order, since hidden
    layers carry blocks of the regular action.
    """

    def __init__(
        self,
        train_data: LabeledDataset,
        val_data: LabeledDataset,
        group_menu: Sequence[TransformGroup],
        hidden: Sequence[int] = (400, 400),
        train_cfg: TrainConfig = TrainConfig(lr=1e-3, momentum=0.9, batch_size=64, epochs=4),
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.train_data, self.val_data = train_data, val_data
        self.menu = list(group_menu)
        self.hidden = list(hidden)
        self.train_cfg = train_cfg
        self.seed = seed
        n_classes = n_classes or int(max(train_data.labels.max(), val_data.labels.max())) + 1
        self.widths = [train_data.side ** 2, *self.hidden, n_classes]
        for g in self.menu:
            if g.grid.side != train_data.side:
                raise ValueError(f"group {g.name} is for {g.grid.side}x{g.grid.side} images, data is {train_data.side}")
            for w in self.hidden:
                if w % g.order:
                    raise ValueError(f"hidden width {w} is not divisible by the order {g.order} of group {g.name}")
        self._plans = [make_plan(self.widths, g.group) for g in self.menu]
        self._acc0: float | None = None

    @property
    def g_size(self) -> int:
        return len(self.menu)

    def build(self, state: State, seed: int | None = None) -> TiedMlp:
        plans = [p for p, bit in zip(self._plans, state) if bit]
        return build_tied_mlp(self.widths, plans, seed=self.seed if seed is None else seed)

    def evaluate(self, state: State, seed: int | None = None) -> float:
        seed = self.seed if seed is None else seed
        net = self.build(state, seed)
        cfg = TrainConfig(**{**asdict(self.train_cfg), "seed": seed})
        return train(net, self.train_data, cfg, self.val_data).best_val_accuracy

    @property
    def acc0(self) -> float:
        if self._acc0 is None:
            self._acc0 = self.evaluate((0,) * self.g_size)
        return self._acc0


def mlp_reward_oracle(train_data, val_data, group_menu, arch=(400, 400), train_cfg=None, seed: int = 0) -> MlpRewardOracle:
    cfg = train_cfg or TrainConfig(lr=1e-3, momentum=0.9, batch_size=64, epochs=4)
    return MlpRewardOracle(train_data, val_data, group_menu, arch, cfg, seed=seed)
