"""A discrete sepsis-like MDP with exact dynamic-programming oracles.

State layout
------------
A state is the tuple ``(diabetic, heart_rate, blood_pressure, oxygen,
glucose, antibiotics, ventilation, vasopressors)`` with level counts
``(2, 3, 3, 2, 5, 2, 2, 2)``, giving 1440 states.  Ids are the row-major
(C-order) index of the tuple, so the diabetic flag is the most significant
digit, followed by the vitals in the listed order and then the treatment
flags.  Vital levels are ordinal: heart rate and blood pressure use
``low, normal, high``; oxygen uses ``low, normal``; glucose uses
``very_low, low, normal, high, very_high``.

Actions are ``4 * vasopressors + 2 * antibiotics + ventilation``; the
behavior policy uses ids 0-3 and the target policy ids 0-7.  The treatment
flags of a state record the action that led to it.

Rewards are collected on entering a state: -1 when at least three vitals are
abnormal (death), +1 when all vitals are normal and no treatment is active
(discharge), else 0.  Death and discharge states are absorbing and pay
nothing further.  Returns use ``r_t = R(s_{t+1})`` and
``G = sum_t gamma^t r_t`` over ``horizon`` steps.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401  (registers sp.linalg)

from .data import BehaviorDataset, TargetDataset, truncate_dataset
from .regression import FeatureMap

LEVELS = (2, 3, 3, 2, 5, 2, 2, 2)
N_STATES = int(np.prod(LEVELS))
COMPONENTS = ("diabetic", "heart_rate", "blood_pressure", "oxygen", "glucose", "antibiotics", "ventilation", "vasopressors")
VITALS = ("heart_rate", "blood_pressure", "oxygen", "glucose")
NORMAL_LEVEL = {"heart_rate": 1, "blood_pressure": 1, "oxygen": 1, "glucose": 2}
LEVEL_NAMES = {
    "heart_rate": ("low", "normal", "high"),
    "blood_pressure": ("low", "normal", "high"),
    "oxygen": ("low", "normal"),
    "glucose": ("very_low", "low", "normal", "high", "very_high"),
}
BEHAVIOR_ACTIONS = 4
TARGET_ACTIONS = 8
HORIZON = 20
DISCOUNT = 0.99


@dataclass(frozen=True)
class SepsisState:
    diabetic: bool
    heart_rate: int
    blood_pressure: int
    oxygen: int
    glucose: int
    antibiotics: bool = False
    ventilation: bool = False
    vasopressors: bool = False

    def __post_init__(self):
        for name, n in zip(COMPONENTS, LEVELS):
            value = int(getattr(self, name))
            if not 0 <= value < n:
                raise ValueError(f"{name} level {value} outside [0, {n})")

    def encode(self) -> int:
        return encode(self)

    @property
    def abnormal_count(self) -> int:
        return sum(int(getattr(self, v) != NORMAL_LEVEL[v]) for v in VITALS)

    @property
    def treated(self) -> bool:
        return bool(self.antibiotics or self.ventilation or self.vasopressors)

    @property
    def dead(self) -> bool:
        return self.abnormal_count >= 3

    @property
    def discharged(self) -> bool:
        return self.abnormal_count == 0 and not self.treated


def encode(state: SepsisState) -> int:
    return int(np.ravel_multi_index([int(getattr(state, c)) for c in COMPONENTS], LEVELS))


def decode(state_id: int) -> SepsisState:
    if not 0 <= state_id < N_STATES:
        raise ValueError(f"state id {state_id} outside [0, {N_STATES})")
    digits = np.unravel_index(int(state_id), LEVELS)
    values = [int(d) for d in digits]
    for i in (0, 5, 6, 7):
        values[i] = bool(values[i])
    return SepsisState(*values)


def action_flags(action: int) -> tuple[bool, bool, bool]:
    """``(antibiotics, ventilation, vasopressors)`` for an action id."""
    return bool(action & 2), bool(action & 1), bool(action & 4)


def component_table() -> np.ndarray:
    """``(N_STATES, 8)`` integer table of each state's components."""
    return np.array(np.unravel_index(np.arange(N_STATES), LEVELS)).T


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """A finite MDP with rewards on entering states.

    ``transition[a]`` is a sparse ``(n_states, n_states)`` row-stochastic
    matrix.  Terminal states self-loop and their reward is collected once,
    on entry.
    """

    n_states: int
    transition: tuple
    reward: np.ndarray
    terminal: np.ndarray
    behavior_actions: int = BEHAVIOR_ACTIONS
    target_actions: int = TARGET_ACTIONS
    horizon: int = HORIZON
    discount: float = DISCOUNT
    kernel_params: Optional["KernelParams"] = None
    _sampler: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mats = tuple(sp.csr_matrix(m, dtype=float) for m in self.transition)
        object.__setattr__(self, "transition", mats)
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=bool))
        if len(mats) < self.target_actions or self.behavior_actions > self.target_actions:
            raise ValueError("need transitions for every target action")
        for a, m in enumerate(mats):
            if m.shape != (self.n_states, self.n_states):
                raise ValueError(f"action {a} transition has shape {m.shape}")
            sums = np.asarray(m.sum(axis=1)).ravel()
            if np.any(np.abs(sums - 1.0) > 1e-9) or (m.data < 0).any():
                raise ValueError(f"action {a} has rows that are not probability vectors")
        if self.reward.shape != (self.n_states,) or self.terminal.shape != (self.n_states,):
            raise ValueError("reward and terminal need one entry per state")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")

    @property
    def n_actions(self) -> int:
        return len(self.transition)

    def row(self, state: int, action: int) -> np.ndarray:
        return self.transition[action].getrow(state).toarray().ravel()

    def sampler(self):
        """Padded per-(state, action) next-state ids and cumulative probabilities."""
        if "tables" not in self._sampler:
            width = max(int(np.diff(m.indptr).max()) for m in self.transition)
            nxt = np.zeros((self.n_states, self.n_actions, width), dtype=np.int64)
            cum = np.ones((self.n_states, self.n_actions, width))
            for a, m in enumerate(self.transition):
                for s in range(self.n_states):
                    lo, hi = m.indptr[s], m.indptr[s + 1]
                    nxt[s, a, : hi - lo] = m.indices[lo:hi]
                    nxt[s, a, hi - lo :] = m.indices[hi - 1]
                    cum[s, a, : hi - lo] = np.cumsum(m.data[lo:hi])
            cum[:, :, -1] = 1.0
            self._sampler["tables"] = (nxt, cum)
        return self._sampler["tables"]


@dataclass(frozen=True)
class KernelParams:
    """Per-step probabilities of the default kernel.

    A treated vital moves one level toward normal with probability
    ``treat_fix``; an untreated abnormal vital does so with ``spont_fix``.
    A normal vital drifts one level away with ``drift`` (``glucose_drift``
    for glucose, scaled by ``diabetic_glucose_factor`` for diabetics).
    Blood pressure is treated by vasopressors (``vaso_fix``), heart rate by
    antibiotics and oxygen by ventilation.  Any active treatment other than
    the one for a vital makes that vital drift with ``side_effect`` extra
    probability.
    """

    treat_fix: float = 0.5
    vaso_fix: float = 0.9
    spont_fix: float = 0.05
    drift: float = 0.05
    bp_drift: float = 0.01
    glucose_drift: float = 0.05
    diabetic_glucose_factor: float = 3.0
    side_effect: float = 0.0
    abnormal_worsen: float = 0.1


def _vital_step(level: int, normal: int, n_levels: int, fix: float, drift: float, worsen: float):
    """Distribution over next levels of one vital as ``{level: prob}``."""
    out: dict = {}

    def add(lv, p):
        if p > 0:
            out[lv] = out.get(lv, 0.0) + p

    if level == normal:
        down, up = level - 1, level + 1
        moves = [lv for lv in (down, up) if 0 <= lv < n_levels]
        for lv in moves:
            add(lv, drift / len(moves))
        add(level, 1.0 - drift)
        return out
    toward = level + (1 if level < normal else -1)
    away = level + (1 if level > normal else -1)
    add(toward, fix)
    if 0 <= away < n_levels:
        add(away, (1.0 - fix) * worsen)
        add(level, (1.0 - fix) * (1.0 - worsen))
    else:
        add(level, 1.0 - fix)
    return out


def _sepsis_reward_terminal(comp: np.ndarray):
    normal = np.array([NORMAL_LEVEL[v] for v in VITALS])
    abnormal = (comp[:, 1:5] != normal).sum(axis=1)
    treated = comp[:, 5:8].any(axis=1)
    dead = abnormal >= 3
    discharged = (abnormal == 0) & ~treated
    reward = np.where(dead, -1.0, np.where(discharged, 1.0, 0.0))
    return reward, dead | discharged


def build_default_spec(seed: int = 0, params: Optional[KernelParams] = None) -> MdpSpec:
    """The default sepsis-like MDP.

    The kernel is fully determined by ``params``; ``seed`` is accepted for
    interface stability and mixed into nothing, so every seed yields the
    same documented kernel.
    """
    del seed
    params = params or KernelParams()
    comp = component_table()
    reward, terminal = _sepsis_reward_terminal(comp)
    mats = []
    for action in range(TARGET_ACTIONS):
        abx, vent, vaso = action_flags(action)
        rows, cols, vals = [], [], []
        for s in range(N_STATES):
            if terminal[s]:
                rows.append(s), cols.append(s), vals.append(1.0)
                continue
            diabetic = bool(comp[s, 0])
            n_active = abx + vent + vaso
            per_vital = []
            for i, name in enumerate(VITALS):
                treated = {"heart_rate": abx, "blood_pressure": vaso, "oxygen": vent}.get(name, False)
                fix = (params.vaso_fix if name == "blood_pressure" else params.treat_fix) if treated else params.spont_fix
                if name == "glucose":
                    drift = params.glucose_drift * (params.diabetic_glucose_factor if diabetic else 1.0)
                elif name == "blood_pressure":
                    drift = params.bp_drift
                else:
                    drift = params.drift
                drift = min(1.0, drift + params.side_effect * (n_active - int(treated)))
                per_vital.append(
                    _vital_step(int(comp[s, 1 + i]), NORMAL_LEVEL[name], LEVELS[1 + i], fix, drift, params.abnormal_worsen)
                )
            for combo in itertools.product(*(d.items() for d in per_vital)):
                p = float(np.prod([c[1] for c in combo]))
                digits = [comp[s, 0]] + [c[0] for c in combo] + [int(abx), int(vent), int(vaso)]
                rows.append(s)
                cols.append(int(np.ravel_multi_index(digits, LEVELS)))
                vals.append(p)
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(N_STATES, N_STATES)))
    return MdpSpec(N_STATES, tuple(mats), reward, terminal, kernel_params=params)


# --------------------------------------------------------------------------
# Policies and dynamic programming


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary stochastic policy as an ``(n_states, n_actions)`` table."""

    probs: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-9):
            raise ValueError("policy rows must be probability vectors")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, 0.0)


def soften(policy: Policy, epsilon: float) -> Policy:
    """``(1 - epsilon) * greedy + epsilon * uniform`` over the policy's actions."""
    greedy = Policy.deterministic(policy.greedy_actions(), policy.n_actions).probs
    return Policy((1.0 - epsilon) * greedy + epsilon / policy.n_actions, epsilon)


def _q_values(spec: MdpSpec, n_actions: int, v_next: np.ndarray) -> np.ndarray:
    target = spec.reward + spec.discount * v_next
    return np.column_stack([spec.transition[a] @ target for a in range(n_actions)])


def _check_action_count(spec: MdpSpec, n_actions: int) -> None:
    if not 1 <= n_actions <= spec.n_actions:
        raise ValueError(f"action count {n_actions} outside [1, {spec.n_actions}]")


def value_iteration(spec: MdpSpec, policy_actions: int, horizon: Optional[int] = None) -> np.ndarray:
    """Finite-horizon optimal values by backward induction.

    Returns
    -------
    ndarray, shape (horizon + 1, n_states)
        Row ``t`` holds the optimal value with ``horizon - t`` steps left,
        so row 0 is the full-horizon value and the last row is zero.
    """
    _check_action_count(spec, policy_actions)
    horizon = spec.horizon if horizon is None else horizon
    values = np.zeros((horizon + 1, spec.n_states))
    for t in range(horizon - 1, -1, -1):
        q = _q_values(spec, policy_actions, values[t + 1])
        values[t] = np.where(spec.terminal, 0.0, q.max(axis=1))
    return values


def discounted_value_iteration(spec: MdpSpec, policy_actions: int, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Optimal infinite-horizon discounted values by successive approximation.

    Iterates until the sup-norm change times ``gamma / (1 - gamma)`` falls
    below ``tol``, which bounds the distance to the fixed point.
    """
    _check_action_count(spec, policy_actions)
    if spec.discount >= 1:
        raise ValueError("infinite-horizon iteration needs discount < 1")
    v = np.zeros(spec.n_states)
    factor = spec.discount / (1.0 - spec.discount)
    for _ in range(max_iter):
        new = np.where(spec.terminal, 0.0, _q_values(spec, policy_actions, v).max(axis=1))
        change = np.max(np.abs(new - v))
        v = new
        if change * factor < tol:
            return v
    raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")


def greedy_from_values(spec: MdpSpec, policy_actions: int, values: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    """Greedy actions for ``values``; near-ties go to the lowest action id."""
    q = _q_values(spec, policy_actions, values)
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1)


def evaluate_policy_discounted(spec: MdpSpec, policy: Policy) -> np.ndarray:
    """Exact infinite-horizon discounted values by a sparse linear solve."""
    n_actions = policy.n_actions
    p = sum(sp.diags(policy.probs[:, a]) @ spec.transition[a] for a in range(n_actions))
    live = sp.diags((~spec.terminal).astype(float))
    p = live @ p
    r = p @ spec.reward
    system = sp.identity(spec.n_states, format="csc") - spec.discount * (p @ sp.diags((~spec.terminal).astype(float)))
    return sp.linalg.spsolve(system.tocsc(), r)


def policy_iteration(spec: MdpSpec, action_count: int, max_iter: int = 1000) -> Policy:
    """Howard policy iteration on the infinite-horizon discounted problem.

    Starts from action 0 everywhere, evaluates exactly, and switches a
    state's action only on a strict improvement beyond ``1e-12``; among
    maximizers the lowest action id wins.
    """
    _check_action_count(spec, action_count)
    if spec.discount >= 1:
        raise ValueError("policy iteration needs discount < 1")
    actions = np.zeros(spec.n_states, dtype=int)
    for _ in range(max_iter):
        policy = Policy.deterministic(actions, action_count)
        v = evaluate_policy_discounted(spec, policy)
        q = _q_values(spec, action_count, v)
        current = q[np.arange(spec.n_states), actions]
        candidate = greedy_from_values(spec, action_count, v)
        improve = q[np.arange(spec.n_states), candidate] > current + 1e-12
        if not improve.any():
            return policy
        actions = np.where(improve, candidate, actions)
    raise RuntimeError(f"policy iteration did not converge in {max_iter} rounds")


def exact_policy_value(
    spec: MdpSpec,
    policy: Policy,
    initial_distribution: Optional[np.ndarray] = None,
    horizon: Optional[int] = None,
) -> float:
    """Expected discounted ``horizon``-step return by backward induction."""
    horizon = spec.horizon if horizon is None else horizon
    init = default_initial_distribution(spec) if initial_distribution is None else np.asarray(initial_distribution, dtype=float)
    if init.shape != (spec.n_states,) or abs(init.sum() - 1) > 1e-9 or np.any(init < 0):
        raise ValueError("initial distribution must be a probability vector over states")
    v = np.zeros(spec.n_states)
    for _ in range(horizon):
        q = _q_values(spec, policy.n_actions, v)
        v = np.where(spec.terminal, 0.0, np.sum(policy.probs * q, axis=1))
    return float(init @ v)


def default_initial_distribution(spec: MdpSpec) -> np.ndarray:
    """Uniform over non-terminal states."""
    live = (~spec.terminal).astype(float)
    return live / live.sum()


# --------------------------------------------------------------------------
# Sampling


def rollout(
    spec: MdpSpec,
    policy: Policy,
    n: int,
    h_record: Optional[int] = None,
    seed: int = 0,
    labeled: bool = True,
    initial_distribution: Optional[np.ndarray] = None,
):
    """Simulate ``n`` episodes of ``spec.horizon`` steps.

    Parameters
    ----------
    h_record : int, optional
        Keep only the first ``h_record`` steps of each episode (default: all).
    labeled : bool
        Return a :class:`BehaviorDataset` labeled with full-horizon
        discounted returns; otherwise a :class:`TargetDataset`.

    States are stored as 1-dimensional vectors holding the state id.  After
    termination the absorbing state is repeated and no rewards accrue.
    """
    horizon = spec.horizon
    h_record = horizon if h_record is None else h_record
    if not 0 <= h_record <= horizon:
        raise ValueError(f"h_record must lie in [0, {horizon}]")
    init = default_initial_distribution(spec) if initial_distribution is None else np.asarray(initial_distribution, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E951]))
    nxt, cum = spec.sampler()
    cum_pi = np.cumsum(policy.probs, axis=1)
    cum_pi[:, -1] = 1.0
    states = np.empty((n, horizon + 1), dtype=np.int64)
    actions = np.zeros((n, horizon), dtype=np.int64)
    rewards = np.zeros((n, horizon))
    states[:, 0] = rng.choice(spec.n_states, size=n, p=init)
    alive = ~spec.terminal[states[:, 0]]
    lengths = np.full(n, horizon)
    lengths[~alive] = 0
    for t in range(horizon):
        s = states[:, t]
        a = (cum_pi[s] < rng.random(n)[:, None]).sum(axis=1)
        a = np.minimum(a, policy.n_actions - 1)
        idx = (cum[s, a] < rng.random(n)[:, None]).sum(axis=1)
        idx = np.minimum(idx, cum.shape[2] - 1)
        s_next = np.where(alive, nxt[s, a, idx], s)
        actions[:, t] = np.where(alive, a, 0)
        rewards[:, t] = np.where(alive, spec.reward[s_next], 0.0)
        states[:, t + 1] = s_next
        ended = alive & spec.terminal[s_next]
        lengths[ended] = t + 1
        alive = alive & ~ended
    returns = rewards @ (spec.discount ** np.arange(horizon))
    full = BehaviorDataset(
        states=states[:, :, None].astype(float),
        rewards=rewards,
        lengths=lengths,
        actions=actions,
        done=spec.terminal[states[:, -1]],
        returns=returns,
    )
    data = full if h_record == horizon else truncate_dataset(full, h_record)
    return data if labeled else data.unlabeled()


# --------------------------------------------------------------------------
# Export / import


def export_spec(spec: MdpSpec) -> str:
    """Plain-text dump: a header, ``state,action,next_state,prob`` triples,
    then ``state,reward,terminal`` rows."""
    out = io.StringIO()
    out.write(
        f"# n_states={spec.n_states} n_actions={spec.n_actions} behavior_actions={spec.behavior_actions} "
        f"target_actions={spec.target_actions} horizon={spec.horizon} discount={float(spec.discount)!r}\n"
    )
    out.write("state,action,next_state,prob\n")
    for a, m in enumerate(spec.transition):
        coo = m.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            out.write(f"{r},{a},{c},{float(v)!r}\n")
    out.write("state,reward,terminal\n")
    for s in range(spec.n_states):
        out.write(f"{s},{float(spec.reward[s])!r},{int(spec.terminal[s])}\n")
    return out.getvalue()


def import_spec(text: str) -> MdpSpec:
    lines = text.splitlines()
    meta = dict(tok.split("=") for tok in lines[0][1:].split())
    n, n_actions = int(meta["n_states"]), int(meta["n_actions"])
    split = lines.index("state,reward,terminal")
    triples = np.array([[float(x) for x in line.split(",")] for line in lines[2:split]]).reshape(-1, 4)
    mats = []
    for a in range(n_actions):
        sel = triples[:, 1] == a
        mats.append(
            sp.csr_matrix((triples[sel, 3], (triples[sel, 0].astype(int), triples[sel, 2].astype(int))), shape=(n, n))
        )
    table = np.array([[float(x) for x in line.split(",")] for line in lines[split + 1 :]])
    return MdpSpec(
        n,
        tuple(mats),
        table[:, 1],
        table[:, 2].astype(bool),
        behavior_actions=int(meta["behavior_actions"]),
        target_actions=int(meta["target_actions"]),
        horizon=int(meta["horizon"]),
        discount=float(meta["discount"]),
    )


# --------------------------------------------------------------------------
# Prefix summaries used by the nuisance models


def surrogate_keys(data: TargetDataset) -> list:
    """Discrete summary of each prefix used as the regression/ratio key.

    Prefixes whose episode has ended map to ``("done", realized return)``;
    the rest map to the diabetic flag and vital levels of the last state.
    Treatment flags are left out because the kernel ignores them.
    """
    comp = component_table()
    last = np.rint(data.states[np.arange(data.size), data.lengths, 0]).astype(int)
    keys = []
    for i in range(data.size):
        if data.done[i]:
            k = data.lengths[i]
            realized = float(np.sum(data.rewards[i, :k] * DISCOUNT ** np.arange(k)))
            keys.append(("done", round(realized, 9)))
        else:
            keys.append(tuple(int(x) for x in comp[last[i], :5]))
    return keys


def exact_keys(data: TargetDataset) -> list:
    """The full state-id sequence of each prefix."""
    ids = np.rint(data.states[:, :, 0]).astype(int)
    return [tuple(ids[i, : data.lengths[i] + 1]) for i in range(data.size)]


def policy_action_probs(policy: Policy):
    """Callable mapping a prefix dataset to the policy's action probabilities at its last state."""

    def fn(data: TargetDataset) -> np.ndarray:
        last = np.rint(data.states[np.arange(data.size), data.lengths, 0]).astype(int)
        return policy.probs[last]

    return fn


def default_policies(spec: MdpSpec, eps_b: float = 0.15, eps_e: float = 0.15):
    """ε-soft optimal behavior (4 actions) and target (8 actions) policies."""
    behavior = soften(policy_iteration(spec, spec.behavior_actions), eps_b)
    target = soften(policy_iteration(spec, spec.target_actions), eps_e)
    return behavior, target


def _surrogate_design(data: TargetDataset) -> np.ndarray:
    comp = component_table()
    last = np.rint(data.states[np.arange(data.size), data.lengths, 0]).astype(int)
    done = data.done.astype(float)
    realized = np.array(
        [np.sum(data.rewards[i, : data.lengths[i]] * DISCOUNT ** np.arange(data.lengths[i])) for i in range(data.size)]
    )
    cols = [done * realized, done, 1.0 - done]
    # Indicators of every non-reference level of the diabetic flag and vitals.
    for j, n_levels in enumerate(LEVELS[:5]):
        for level in range(1, n_levels):
            cols.append((1.0 - done) * (comp[last, j] == level))
    return np.column_stack(cols)


SURROGATE_FEATURES = FeatureMap("sepsis-surrogate", None, 3 + sum(n - 1 for n in LEVELS[:5]), _surrogate_design)
"""Linear design over the same summary as :func:`surrogate_keys`: the realized
return and a done flag for ended episodes, and an additive level encoding of
the last state's diabetic flag and vitals otherwise."""
