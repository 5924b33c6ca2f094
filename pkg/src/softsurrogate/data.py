"""Trajectory prefixes, labeled datasets, and cross-fitting fold plans.

Datasets are array-backed: a dataset of ``n`` prefixes stores a padded
``states`` array of shape ``(n, h + 1, d)``, a ``rewards`` array of shape
``(n, h)`` (or ``(n, 0)`` for domains without per-step rewards) and the
number of recorded steps per item in ``lengths``.  Steps past ``lengths[i]``
repeat the last recorded state and carry zero reward, so terminated
trajectories are padded with their absorbing state.

Serialized form is one CSV record per item::

    traj_id, fold_id, h, s_0[0..d-1], ..., s_h[0..d-1], r_0, ..., r_{h-1}, G

``fold_id`` is ``-1`` when no fold plan is attached and ``G`` is empty for a
:class:`TargetDataset`.  After ``G`` come ``length`` (recorded steps),
``done`` (1 if the episode ended within the prefix), then the optional
``a_0..a_{h-1}`` and ``a_h`` action columns.  A leading ``#`` header line
records ``d``, the reward width and which optional columns are present.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class HorizonConfig:
    short_h: int
    full_h: int
    discount: float = 1.0

    def __post_init__(self):
        if self.short_h < 1 or self.full_h < self.short_h:
            raise ValueError(
                f"need 1 <= short_h <= full_h, got short_h={self.short_h}, full_h={self.full_h}"
            )
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A single prefix ``(s_0, r_0, ..., s_h)``.

    ``states`` has shape ``(k + 1, d)`` with ``k <= horizon_h`` recorded
    steps; ``rewards`` has ``k`` entries, or none for domains whose return
    is not a sum of per-step rewards.
    """

    states: np.ndarray
    rewards: np.ndarray
    horizon_h: int
    actions: Optional[np.ndarray] = None
    next_action: Optional[int] = None
    terminated: bool = False

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rewards", rewards)
        steps = states.shape[0] - 1
        if steps > self.horizon_h:
            raise ValueError(f"{steps} recorded steps exceed horizon_h={self.horizon_h}")
        if rewards.size not in (0, steps):
            raise ValueError(f"{rewards.size} rewards do not align with {steps} steps")

    @property
    def length(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True, eq=False)
class LabeledTrajectory:
    prefix: Trajectory
    full_return: float

    def __post_init__(self):
        if not np.isfinite(self.full_return):
            raise ValueError("full_return must be finite")


@dataclass(frozen=True, eq=False)
class TargetDataset:
    """Short-horizon prefixes collected under the target policy."""

    states: np.ndarray
    rewards: np.ndarray
    lengths: Optional[np.ndarray] = None
    actions: Optional[np.ndarray] = None
    next_actions: Optional[np.ndarray] = None
    done: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        if states.ndim != 3 or states.shape[0] < 1:
            raise ValueError("states must have shape (n, h + 1, d) with n >= 1")
        n, hp1, _ = states.shape
        rewards = np.asarray(self.rewards, dtype=float)
        if rewards.size == 0:
            rewards = np.zeros((n, 0))
        if rewards.shape not in ((n, 0), (n, hp1 - 1)):
            raise ValueError(f"rewards shape {rewards.shape} does not match states {states.shape}")
        lengths = (
            np.full(n, hp1 - 1, dtype=int)
            if self.lengths is None
            else np.asarray(self.lengths, dtype=int)
        )
        if lengths.shape != (n,) or np.any(lengths < 0) or np.any(lengths > hp1 - 1):
            raise ValueError("lengths must lie in [0, h] for every item")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "lengths", lengths)
        if self.actions is not None:
            object.__setattr__(self, "actions", np.asarray(self.actions, dtype=int))
        if self.next_actions is not None:
            object.__setattr__(self, "next_actions", np.asarray(self.next_actions, dtype=int))
        done = lengths < hp1 - 1 if self.done is None else np.asarray(self.done, dtype=bool)
        if done.shape != (n,) or np.any(~done & (lengths < hp1 - 1)):
            raise ValueError("done must flag every prefix that stops before the horizon")
        object.__setattr__(self, "done", done)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    size_m = size

    @property
    def horizon_h(self) -> int:
        return self.states.shape[1] - 1

    @property
    def terminated(self) -> np.ndarray:
        """Whether each episode ended within its recorded prefix."""
        return self.done

    def __len__(self) -> int:
        return self.size

    def prefix(self, i: int) -> Trajectory:
        k = int(self.lengths[i])
        rewards = self.rewards[i, :k] if self.rewards.shape[1] else np.zeros(0)
        return Trajectory(
            states=self.states[i, : k + 1],
            rewards=rewards,
            horizon_h=self.horizon_h,
            actions=None if self.actions is None else self.actions[i, :k],
            next_action=None if self.next_actions is None else int(self.next_actions[i]),
            terminated=bool(self.terminated[i]),
        )

    def __getitem__(self, i: int) -> Trajectory:
        return self.prefix(i)

    def __iter__(self) -> Iterator[Trajectory]:
        return (self.prefix(i) for i in range(self.size))

    @property
    def items(self) -> list[Trajectory]:
        return list(self)

    def subset(self, index) -> "TargetDataset":
        index = np.asarray(index)
        return TargetDataset(
            states=self.states[index],
            rewards=self.rewards[index],
            lengths=self.lengths[index],
            actions=None if self.actions is None else self.actions[index],
            next_actions=None if self.next_actions is None else self.next_actions[index],
            done=self.done[index],
        )


@dataclass(frozen=True, eq=False)
class BehaviorDataset(TargetDataset):
    """Prefixes labeled with the full-horizon return ``G``."""

    returns: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        if self.returns is None:
            raise ValueError("a BehaviorDataset needs returns")
        returns = np.asarray(self.returns, dtype=float).reshape(-1)
        if returns.shape != (self.size,):
            raise ValueError(f"{returns.size} returns for {self.size} items")
        if not np.all(np.isfinite(returns)):
            raise ValueError("returns must be finite")
        object.__setattr__(self, "returns", returns)

    size_n = TargetDataset.size

    def __getitem__(self, i: int) -> LabeledTrajectory:
        return LabeledTrajectory(self.prefix(i), float(self.returns[i]))

    def __iter__(self) -> Iterator[LabeledTrajectory]:
        return (self[i] for i in range(self.size))

    @property
    def items(self) -> list[LabeledTrajectory]:
        return list(self)

    def subset(self, index) -> "BehaviorDataset":
        index = np.asarray(index)
        base = TargetDataset.subset(self, index)
        return BehaviorDataset(
            states=base.states,
            rewards=base.rewards,
            lengths=base.lengths,
            actions=base.actions,
            next_actions=base.next_actions,
            done=base.done,
            returns=self.returns[index],
        )

    def unlabeled(self) -> TargetDataset:
        return TargetDataset.subset(self, np.arange(self.size))

    @classmethod
    def from_items(cls, items: Sequence[LabeledTrajectory]) -> "BehaviorDataset":
        base = _stack([it.prefix for it in items])
        return cls(
            states=base.states,
            rewards=base.rewards,
            lengths=base.lengths,
            actions=base.actions,
            next_actions=base.next_actions,
            done=base.done,
            returns=[it.full_return for it in items],
        )


def _stack(prefixes: Sequence[Trajectory]) -> TargetDataset:
    if not prefixes:
        raise ValueError("need at least one trajectory")
    h = max(p.horizon_h for p in prefixes)
    d = prefixes[0].states.shape[1]
    n = len(prefixes)
    has_rewards = any(p.rewards.size for p in prefixes)
    states = np.empty((n, h + 1, d))
    rewards = np.zeros((n, h if has_rewards else 0))
    lengths = np.empty(n, dtype=int)
    with_actions = all(p.actions is not None for p in prefixes)
    actions = np.zeros((n, h), dtype=int) if with_actions else None
    with_next = all(p.next_action is not None for p in prefixes)
    next_actions = np.array([p.next_action for p in prefixes]) if with_next else None
    for i, p in enumerate(prefixes):
        k = p.length
        states[i, : k + 1] = p.states
        states[i, k + 1 :] = p.states[-1]
        if has_rewards:
            rewards[i, :k] = p.rewards
        if with_actions:
            actions[i, :k] = p.actions
        lengths[i] = k
    done = np.array([p.terminated or p.length < h for p in prefixes])
    return TargetDataset(states, rewards, lengths, actions, next_actions, done)


def target_from_items(items: Sequence[Trajectory]) -> TargetDataset:
    return _stack(items)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    behavior_fold_of: np.ndarray
    target_fold_of: np.ndarray

    def behavior_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.behavior_fold_of == fold)

    def target_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.target_fold_of == fold)


def _balanced_assignment(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # Shuffle, then deal round-robin so sizes differ by at most one.
    fold_of = np.empty(n, dtype=int)
    fold_of[rng.permutation(n)] = np.arange(n) % k
    return fold_of


def make_fold_plan(n: int, m: int, k: int, seed: int) -> FoldPlan:
    """Randomly partition ``n`` behavior and ``m`` target items into ``k`` folds.

    Raises
    ------
    ValueError
        If ``k < 2`` or either dataset has fewer than ``k`` items, in which
        case cross-fitting has insufficient data.
    """
    if k < 2:
        raise ValueError(f"cross-fitting needs k >= 2 folds, got {k}")
    if n < k or m < k:
        raise ValueError(f"insufficient data for {k}-fold cross-fitting (n={n}, m={m})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    return FoldPlan(k, _balanced_assignment(n, k, rng), _balanced_assignment(m, k, rng))


def truncate(labeled: LabeledTrajectory, h: int) -> LabeledTrajectory:
    prefix = labeled.prefix
    if h < 0 or h > prefix.horizon_h:
        raise ValueError(f"cannot truncate a horizon-{prefix.horizon_h} trajectory at h={h}")
    k = min(h, prefix.length)
    cut = Trajectory(
        states=prefix.states[: k + 1],
        rewards=prefix.rewards[:k] if prefix.rewards.size else prefix.rewards,
        horizon_h=h,
        actions=None if prefix.actions is None else prefix.actions[:k],
        next_action=prefix.next_action if k == prefix.length else None,
        terminated=prefix.terminated and k == prefix.length,
    )
    return LabeledTrajectory(cut, labeled.full_return)


def truncate_dataset(data: TargetDataset, h: int):
    """Truncate every prefix in ``data`` to ``h`` steps, keeping labels."""
    if h < 0 or h > data.horizon_h:
        raise ValueError(f"cannot truncate a horizon-{data.horizon_h} dataset at h={h}")
    rewards = data.rewards[:, :h] if data.rewards.shape[1] else data.rewards
    lengths = np.minimum(data.lengths, h)
    actions = None if data.actions is None else data.actions[:, :h]
    next_actions = None
    if data.actions is not None and h < data.horizon_h:
        next_actions = data.actions[:, h]
    elif data.next_actions is not None:
        next_actions = data.next_actions
    kwargs = dict(
        states=data.states[:, : h + 1],
        rewards=rewards,
        lengths=lengths,
        actions=actions,
        next_actions=next_actions,
        done=data.done & (data.lengths <= h),
    )
    if isinstance(data, BehaviorDataset):
        return BehaviorDataset(returns=data.returns, **kwargs)
    return TargetDataset(**kwargs)


def discounted_return(rewards: Sequence[float], discount: float) -> float:
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        return 0.0
    return float(np.sum(rewards * discount ** np.arange(rewards.size)))


def write_dataset(data: TargetDataset, fold_of: Optional[np.ndarray] = None) -> str:
    """Serialize ``data`` to CSV text (see module docstring for columns)."""
    n, hp1, d = data.states.shape
    h = hp1 - 1
    r_width = data.rewards.shape[1]
    labeled = isinstance(data, BehaviorDataset)
    out = io.StringIO()
    out.write(
        f"# d={d} reward_width={r_width} labeled={int(labeled)} "
        f"actions={int(data.actions is not None)} next_actions={int(data.next_actions is not None)}\n"
    )
    writer = csv.writer(out, lineterminator="\n")
    for i in range(n):
        row = [i, -1 if fold_of is None else int(fold_of[i]), h]
        row += [repr(float(x)) for x in data.states[i].reshape(-1)]
        row += [repr(float(x)) for x in data.rewards[i]]
        row.append(repr(float(data.returns[i])) if labeled else "")
        row.append(int(data.lengths[i]))
        row.append(int(data.done[i]))
        if data.actions is not None:
            row += [int(a) for a in data.actions[i]]
        if data.next_actions is not None:
            row.append(int(data.next_actions[i]))
        writer.writerow(row)
    return out.getvalue()


def read_dataset(text: str):
    """Parse CSV text from :func:`write_dataset`.

    Returns
    -------
    (dataset, fold_of)
        A :class:`BehaviorDataset` if the ``G`` column is filled, otherwise a
        :class:`TargetDataset`; ``fold_of`` is ``None`` when every fold id is -1.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing dataset header line")
    meta = dict(tok.split("=") for tok in lines[0][1:].split())
    d, r_width = int(meta["d"]), int(meta["reward_width"])
    has_actions, has_next = meta["actions"] == "1", meta["next_actions"] == "1"
    rows = list(csv.reader(lines[1:]))
    if not rows:
        raise ValueError("dataset has no records")
    h = int(rows[0][2])
    states, rewards, returns, folds, lengths, done, actions, nexts = [], [], [], [], [], [], [], []
    for row in rows:
        pos = 3
        states.append([float(x) for x in row[pos : pos + (h + 1) * d]])
        pos += (h + 1) * d
        rewards.append([float(x) for x in row[pos : pos + r_width]])
        pos += r_width
        returns.append(row[pos])
        pos += 1
        lengths.append(int(row[pos]))
        done.append(row[pos + 1] == "1")
        pos += 2
        folds.append(int(row[1]))
        if has_actions:
            actions.append([int(x) for x in row[pos : pos + h]])
            pos += h
        if has_next:
            nexts.append(int(row[pos]))
    kwargs = dict(
        states=np.array(states).reshape(len(rows), h + 1, d),
        rewards=np.array(rewards).reshape(len(rows), r_width),
        lengths=np.array(lengths),
        actions=np.array(actions).reshape(len(rows), h) if has_actions else None,
        next_actions=np.array(nexts) if has_next else None,
        done=np.array(done),
    )
    fold_of = np.array(folds)
    fold_of = None if np.all(fold_of == -1) else fold_of
    if all(g != "" for g in returns):
        return BehaviorDataset(returns=[float(g) for g in returns], **kwargs), fold_of
    return TargetDataset(**kwargs), fold_of
