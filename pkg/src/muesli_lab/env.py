"""Exact finite MDPs and trajectory sampling.

States and observations are integer ids.  Function approximators only ever see
observation ids; ``obs_map`` is the (surjective) aliasing map from states to
observations.  Terminal states self-loop with zero reward, and every transition
into a terminal state is recorded with discount 0, so episodic (discount 1) and
discounted MDPs share one code path.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import ValidationError, check_policy_table

UP, DOWN = 0, 1

DEFAULT_MAX_LENGTH = 1000


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Immutable finite MDP.

    Attributes:
        transition: ``[s, a, s']`` transition probabilities.
        reward: ``[s, a, s']`` expected rewards.
        initial_dist: start-state distribution.
        discount: per-step discount in ``[0, 1]``; 1 requires absorption.
        terminal: boolean flag per state.
        obs_map: observation id of every state.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float
    terminal: np.ndarray
    obs_map: np.ndarray
    name: str = field(default="mdp", compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        term = np.array(self.terminal, dtype=bool)
        obs = np.array(self.obs_map, dtype=np.int64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValidationError(f"transition must be [S, A, S], got shape {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ValidationError("need at least one state and one action")
        if R.shape != P.shape:
            raise ValidationError(f"reward shape {R.shape} != transition shape {P.shape}")
        if mu.shape != (S,) or term.shape != (S,) or obs.shape != (S,):
            raise ValidationError("initial_dist, terminal and obs_map need one entry per state")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise ValidationError("every transition row must be a distribution (tol 1e-12)")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValidationError("initial_dist must sum to 1 (tol 1e-12)")
        if not 0.0 <= self.discount <= 1.0:
            raise ValidationError(f"discount must lie in [0, 1], got {self.discount}")
        if not np.all(np.isfinite(R)):
            raise ValidationError("rewards must be finite")
        for s in np.flatnonzero(term):
            if np.any(np.abs(P[s, :, s] - 1.0) > 1e-12) or np.any(R[s] != 0.0):
                raise ValidationError(f"terminal state {s} must self-loop with reward 0")
        if obs.min() < 0:
            raise ValidationError("observation ids must be non-negative")
        if np.unique(obs).size != obs.max() + 1:
            raise ValidationError("obs_map must be onto 0..num_obs-1")
        for name, arr in (("transition", P), ("reward", R), ("initial_dist", mu),
                          ("terminal", term), ("obs_map", obs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def num_obs(self):
        return int(self.obs_map.max()) + 1

    def expected_reward(self):
        """``r(s, a) = sum_s' P(s'|s,a) R(s,a,s')``."""
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)

    def state_policy(self, obs_policy):
        """Expand a per-observation policy table into a per-state table."""
        table = check_policy_table(obs_policy, self.num_obs, self.num_actions)
        return table[self.obs_map]

    def with_reward_scale(self, scale):
        return TabularMDP(self.transition, self.reward * float(scale), self.initial_dist,
                          self.discount, self.terminal, self.obs_map,
                          name=f"{self.name}*{scale:g}")

    def to_dict(self):
        S, A, _ = self.transition.shape
        triples = [
            [int(s), int(a), int(s2), float(self.transition[s, a, s2]), float(self.reward[s, a, s2])]
            for s in range(S) for a in range(A) for s2 in range(S)
            if self.transition[s, a, s2] > 0 and not self.terminal[s]
        ]
        return {
            "name": self.name,
            "num_states": S,
            "num_actions": A,
            "discount": self.discount,
            "initial": {str(s): float(p) for s, p in enumerate(self.initial_dist) if p > 0},
            "terminal": [int(s) for s in np.flatnonzero(self.terminal)],
            "obs_map": [int(o) for o in self.obs_map],
            "transitions": triples,
        }

    @classmethod
    def from_dict(cls, doc):
        """Build from the sparse document produced by :meth:`to_dict`.

        ``transitions`` holds ``[state, action, next_state, prob, reward]``
        rows.  Terminal self-loops are filled in automatically.
        """
        known = {"name", "num_states", "num_actions", "discount", "initial",
                 "terminal", "obs_map", "transitions"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown MDP keys: {sorted(unknown)}")
        try:
            S, A = int(doc["num_states"]), int(doc["num_actions"])
            P = np.zeros((S, A, S))
            R = np.zeros((S, A, S))
            for s, a, s2, prob, rew in doc["transitions"]:
                P[int(s), int(a), int(s2)] += float(prob)
                R[int(s), int(a), int(s2)] = float(rew)
            terminal = np.zeros(S, dtype=bool)
            terminal[[int(s) for s in doc.get("terminal", [])]] = True
            for s in np.flatnonzero(terminal):
                P[s] = 0.0
                P[s, :, s] = 1.0
                R[s] = 0.0
            init = doc["initial"]
            mu = np.zeros(S)
            if isinstance(init, dict):
                for s, p in init.items():
                    mu[int(s)] = float(p)
            else:
                mu[:] = np.asarray(init, dtype=float)
            obs_map = doc.get("obs_map", list(range(S)))
            return cls(P, R, mu, float(doc["discount"]), terminal, obs_map,
                       name=doc.get("name", "mdp"))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed MDP document: {exc!r}") from exc


def load_mdp(path):
    with open(path) as fh:
        return TabularMDP.from_dict(json.load(fh))


def save_mdp(mdp, path):
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh, indent=1)


def aliased_mdp():
    """The 4-state, 2-action episodic MDP where all states look identical.

    State 0 is the start; state 3 is terminal.  ``up`` from the start pays +1
    and leads to state 1, ``down`` pays 0 and leads to state 2.  From state 1,
    up pays -1 and down pays +1; from state 2 the signs flip.  Every state
    maps to observation 0, so the best memory-less policy is stochastic with
    ``pi(up) = 5/8``.
    """
    S, A = 4, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    P[0, UP, 1], R[0, UP, 1] = 1.0, 1.0
    # reward for "down" at the start is not drawn in the figure; v1(p) implies 0
    P[0, DOWN, 2], R[0, DOWN, 2] = 1.0, 0.0
    P[1, UP, 3], R[1, UP, 3] = 1.0, -1.0
    P[1, DOWN, 3], R[1, DOWN, 3] = 1.0, 1.0
    P[2, UP, 3], R[2, UP, 3] = 1.0, 1.0
    P[2, DOWN, 3], R[2, DOWN, 3] = 1.0, -1.0
    P[3, :, 3] = 1.0
    return TabularMDP(P, R, np.array([1.0, 0, 0, 0]), 1.0,
                      np.array([False, False, False, True]), np.zeros(S, dtype=int),
                      name="aliased")


def chain_mdp(length, reward=1.0, discount=1.0):
    """Deterministic single-action chain ``0 -> 1 -> ... -> length`` (terminal)."""
    S = length + 1
    P = np.zeros((S, 1, S))
    R = np.zeros((S, 1, S))
    for s in range(length):
        P[s, 0, s + 1] = 1.0
        R[s, 0, s + 1] = reward
    P[length, 0, length] = 1.0
    mu = np.zeros(S)
    mu[0] = 1.0
    term = np.zeros(S, dtype=bool)
    term[length] = True
    return TabularMDP(P, R, mu, discount, term, np.arange(S), name=f"chain{length}")


def random_mdp(num_states, num_actions, seed=0, discount=0.9, terminal=True,
               concentration=1.0):
    """Random MDP with Dirichlet transition rows and rewards in ``[-1, 1]``.

    With ``terminal=True`` (and at least two states) the last state is an
    absorbing terminal.  Dirichlet rows are strictly positive, so every state
    reaches it with positive probability.
    """
    if num_states < 1 or num_actions < 1:
        raise ValidationError("num_states and num_actions must be >= 1")
    rng = np.random.default_rng(seed)
    S, A = num_states, num_actions
    P = rng.dirichlet(np.full(S, concentration), size=(S, A))
    R = rng.uniform(-1.0, 1.0, size=(S, A, S))
    term = np.zeros(S, dtype=bool)
    starts = np.arange(S)
    if terminal and S >= 2:
        term[-1] = True
        P[-1] = 0.0
        P[-1, :, -1] = 1.0
        R[-1] = 0.0
        starts = np.arange(S - 1)
    P /= P.sum(axis=2, keepdims=True)
    mu = np.zeros(S)
    mu[starts] = rng.dirichlet(np.ones(starts.size))
    mu /= mu.sum()
    return TabularMDP(P, R, mu, discount, term, np.arange(S),
                      name=f"random{S}x{A}s{seed}")


class Step(NamedTuple):
    obs_id: int
    state_id: int
    action: int
    reward: float
    discount: float
    behavior_probs: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """One episode (or a truncated prefix of one) in struct-of-arrays form.

    ``discounts[t]`` multiplies the value of the state reached by step ``t``;
    it is 0 exactly when ``dones[t]`` (the step entered a terminal state).
    ``final_obs``/``final_state`` describe the state after the last step and
    are used for bootstrapping when ``truncated`` is set.
    """

    obs: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    dones: np.ndarray
    behavior_probs: np.ndarray
    final_obs: int
    final_state: int
    truncated: bool = False

    def __len__(self):
        return len(self.actions)

    @property
    def steps(self):
        return [
            Step(int(o), int(s), int(a), float(r), float(d), b)
            for o, s, a, r, d, b in zip(self.obs, self.states, self.actions,
                                         self.rewards, self.discounts, self.behavior_probs)
        ]

    @property
    def next_obs(self):
        """Observation after each step (length ``len(self)``)."""
        return np.append(self.obs[1:], self.final_obs).astype(np.int64)

    @property
    def episode_return(self):
        """Discounted return from the first step (ignores any bootstrap)."""
        g = 0.0
        for r, d in zip(self.rewards[::-1], self.discounts[::-1]):
            g = r + d * g
        return float(g)


def sample_episode(mdp, policy, rng=None, max_length=DEFAULT_MAX_LENGTH):
    """Roll out one episode under a per-observation policy table.

    Args:
        mdp: the environment.
        policy: ``(num_obs, num_actions)`` action probabilities.
        rng: ``numpy.random.Generator`` or seed.
        max_length: truncation cap; a truncated episode has ``truncated=True``.
    """
    table = check_policy_table(policy, mdp.num_obs, mdp.num_actions, name="policy")
    rng = _as_rng(rng)
    S, A = mdp.num_states, mdp.num_actions
    cum_policy = np.cumsum(table, axis=1)
    cum_trans = np.cumsum(mdp.transition, axis=2)
    s = int(min(np.searchsorted(np.cumsum(mdp.initial_dist), rng.random(), side="right"), S - 1))
    obs, states, actions, rewards, discounts, dones = [], [], [], [], [], []
    truncated = False
    while not mdp.terminal[s]:
        if len(actions) >= max_length:
            truncated = True
            break
        o = int(mdp.obs_map[s])
        a = int(min(np.searchsorted(cum_policy[o], rng.random(), side="right"), A - 1))
        if table[o, a] <= 0.0:
            # guard against cumulative round-off picking a zero-probability action
            a = int(np.flatnonzero(table[o] > 0)[-1])
        s2 = int(min(np.searchsorted(cum_trans[s, a], rng.random(), side="right"), S - 1))
        done = bool(mdp.terminal[s2])
        obs.append(o)
        states.append(s)
        actions.append(a)
        rewards.append(mdp.reward[s, a, s2])
        discounts.append(0.0 if done else mdp.discount)
        dones.append(done)
        s = s2
    idx = np.asarray(obs, dtype=np.int64)
    return Trajectory(
        obs=idx,
        states=np.asarray(states, dtype=np.int64),
        actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=float),
        discounts=np.asarray(discounts, dtype=float),
        dones=np.asarray(dones, dtype=bool),
        behavior_probs=table[idx].copy() if len(idx) else np.zeros((0, A)),
        final_obs=int(mdp.obs_map[s]),
        final_state=s,
        truncated=truncated,
    )
