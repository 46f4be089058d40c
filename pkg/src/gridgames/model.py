"""Explicit-state model container shared by MCs, MDPs, games, and POMDPs.

States are dense integer ids. Choices and transitions are stored CSR-style:
state s owns choices [choice_start[s], choice_start[s+1]), choice c owns
transitions [trans_start[c], trans_start[c+1]). This keeps million-transition
models compact and lets the solver kernels run over flat arrays.
"""

from __future__ import annotations

import sys
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

PROB_TOL = 1e-12

KINDS = ("mc", "mdp", "pg", "pomdp")


class ModelError(ValueError):
    """An explicit model violates a structural requirement."""

    module = "worldmodel"


@dataclass(frozen=True)
class Distribution:
    """A finite probability distribution as (item, probability) pairs."""

    support: tuple[tuple[object, float], ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ModelError("a distribution needs non-empty support")
        total = 0.0
        for item, p in self.support:
            if p <= 0.0:
                raise ModelError(f"non-positive probability {p} for {item!r}")
            total += p
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def dirac(cls, item) -> "Distribution":
        return cls(((item, 1.0),))

    def items(self):
        return self.support


@dataclass(eq=False)
class ExplicitModel:
    kind: str
    initial: int
    player: np.ndarray          # int8 per state, 1 or 2
    choice_start: np.ndarray    # int64, len n+1
    choice_action: list[str]    # per choice
    trans_start: np.ndarray     # int64, len C+1
    trans_target: np.ndarray    # int64, len T
    trans_prob: np.ndarray      # float64, len T
    goal: np.ndarray            # bool per state
    bad: np.ndarray             # bool per state
    state_name: list[str]
    obs_id: Optional[np.ndarray] = None     # int64 per state
    obs_name: Optional[list[str]] = None
    meta: Optional[object] = field(default=None, repr=False, compare=False)

    @property
    def num_states(self) -> int:
        return len(self.player)

    @property
    def num_choices(self) -> int:
        return len(self.choice_action)

    @property
    def num_transitions(self) -> int:
        return len(self.trans_target)

    def actions(self, s: int) -> tuple[str, ...]:
        lo, hi = self.choice_start[s], self.choice_start[s + 1]
        return tuple(self.choice_action[lo:hi])

    def choice_of(self, s: int, action: str) -> int:
        lo, hi = self.choice_start[s], self.choice_start[s + 1]
        for c in range(lo, hi):
            if self.choice_action[c] == action:
                return c
        raise ModelError(f"state {s} ({self.state_name[s]}) has no action {action!r}")

    def distribution(self, s: int, action_index: int) -> Distribution:
        c = self.choice_start[s] + action_index
        if c >= self.choice_start[s + 1]:
            raise ModelError(f"state {s} has no action index {action_index}")
        lo, hi = self.trans_start[c], self.trans_start[c + 1]
        return Distribution(
            tuple((int(t), float(p)) for t, p in zip(self.trans_target[lo:hi], self.trans_prob[lo:hi]))
        )

    def choice_transitions(self, c: int):
        lo, hi = self.trans_start[c], self.trans_start[c + 1]
        return zip(self.trans_target[lo:hi].tolist(), self.trans_prob[lo:hi].tolist())

    def is_absorbing(self, s: int) -> bool:
        lo, hi = self.choice_start[s], self.choice_start[s + 1]
        if hi - lo != 1:
            return False
        tlo, thi = self.trans_start[lo], self.trans_start[lo + 1]
        return thi - tlo == 1 and int(self.trans_target[tlo]) == s

    def targets_absorbing(self) -> bool:
        return all(self.is_absorbing(int(s)) for s in np.flatnonzero(self.goal | self.bad))

    def validate(self) -> None:
        """Check structural invariants: no deadlocks, rows normalized, POMDP action consistency."""
        n = self.num_states
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if not 0 <= self.initial < n:
            raise ModelError(f"initial state {self.initial} out of range")
        widths = np.diff(self.choice_start)
        if (widths < 1).any():
            s = int(np.argmax(widths < 1))
            raise ModelError(f"deadlock: state {s} ({self.state_name[s]}) has no action")
        if self.kind == "mc" and (widths != 1).any():
            s = int(np.argmax(widths != 1))
            raise ModelError(f"MC state {s} has {int(widths[s])} actions")
        if self.kind in ("mdp", "mc", "pomdp") and (self.player != 1).any():
            raise ModelError(f"{self.kind} must have all states owned by player 1")
        row_sums = np.add.reduceat(self.trans_prob, self.trans_start[:-1])
        offending = np.flatnonzero(np.abs(row_sums - 1.0) > PROB_TOL)
        if offending.size:
            c = int(offending[0])
            raise ModelError(f"choice {c} ({self.choice_action[c]}) has probability mass {row_sums[c]!r}")
        if (self.trans_prob <= 0).any():
            raise ModelError("transition probabilities must be positive")
        if self.kind == "pomdp":
            if self.obs_id is None:
                raise ModelError("POMDP requires observations")
            seen: dict[int, tuple[str, ...]] = {}
            for s in range(n):
                o = int(self.obs_id[s])
                acts = self.actions(s)
                if o in seen and seen[o] != acts:
                    raise ModelError(
                        f"states with observation {self.obs_name[o] if self.obs_name else o} "
                        f"disagree on action sets: {seen[o]} vs {acts}"
                    )
                seen.setdefault(o, acts)

    def structurally_equal(self, other: "ExplicitModel") -> bool:
        return (
            self.kind == other.kind
            and self.initial == other.initial
            and np.array_equal(self.player, other.player)
            and np.array_equal(self.choice_start, other.choice_start)
            and self.choice_action == other.choice_action
            and np.array_equal(self.trans_start, other.trans_start)
            and np.array_equal(self.trans_target, other.trans_target)
            and np.array_equal(self.trans_prob, other.trans_prob)
            and np.array_equal(self.goal, other.goal)
            and np.array_equal(self.bad, other.bad)
            and self.state_name == other.state_name
            and ((self.obs_id is None) == (other.obs_id is None))
            and (self.obs_id is None or np.array_equal(self.obs_id, other.obs_id))
            and self.obs_name == other.obs_name
        )

    def with_labels(self, goal: np.ndarray, bad: np.ndarray) -> "ExplicitModel":
        return ExplicitModel(
            kind=self.kind,
            initial=self.initial,
            player=self.player,
            choice_start=self.choice_start,
            choice_action=self.choice_action,
            trans_start=self.trans_start,
            trans_target=self.trans_target,
            trans_prob=self.trans_prob,
            goal=np.asarray(goal, dtype=bool),
            bad=np.asarray(bad, dtype=bool),
            state_name=self.state_name,
            obs_id=self.obs_id,
            obs_name=self.obs_name,
            meta=self.meta,
        )

    def take_choices(self, chosen: np.ndarray, kind: Optional[str] = None) -> "ExplicitModel":
        """New model keeping exactly one choice per state (e.g. an induced MC)."""
        chosen = np.asarray(chosen, dtype=np.int64)
        if len(chosen) != self.num_states:
            raise ModelError("need exactly one chosen choice per state")
        lo = self.trans_start[chosen]
        hi = self.trans_start[chosen + 1]
        lengths = hi - lo
        new_trans_start = np.zeros(len(chosen) + 1, dtype=np.int64)
        np.cumsum(lengths, out=new_trans_start[1:])
        flat = _gather_ranges(lo, lengths)
        return ExplicitModel(
            kind=kind or "mc",
            initial=self.initial,
            player=np.ones(self.num_states, dtype=np.int8),
            choice_start=np.arange(self.num_states + 1, dtype=np.int64),
            choice_action=[self.choice_action[c] for c in chosen.tolist()],
            trans_start=new_trans_start,
            trans_target=self.trans_target[flat],
            trans_prob=self.trans_prob[flat],
            goal=self.goal,
            bad=self.bad,
            state_name=self.state_name,
            obs_id=self.obs_id,
            obs_name=self.obs_name,
            meta=self.meta,
        )


def _gather_ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Flat indices for concatenated ranges [starts[i], starts[i]+lengths[i])."""
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(lengths)
    base = np.repeat(starts, lengths)
    offset = np.arange(total, dtype=np.int64) - np.repeat(ends - lengths, lengths)
    return base + offset


class ModelBuilder:
    """Accumulates states and choices in exploration order, then freezes to arrays."""

    def __init__(self, kind: str):
        if kind not in KINDS:
            raise ModelError(f"unknown model kind {kind!r}")
        self.kind = kind
        self._player = array("b")
        self._goal = array("b")
        self._bad = array("b")
        self._state_name: list[str] = []
        self._obs_of_state = array("q")
        self._obs_key_to_id: dict = {}
        self._obs_name: list[str] = []
        self._choice_state = array("q")
        self._choice_action: list[str] = []
        self._trans_count = array("q")
        self._targets = array("q")
        self._probs = array("d")

    @property
    def num_states(self) -> int:
        return len(self._player)

    def add_state(
        self,
        name: str,
        player: int = 1,
        goal: bool = False,
        bad: bool = False,
        obs=None,
        obs_name: Optional[str] = None,
    ) -> int:
        sid = len(self._player)
        self._player.append(player)
        self._goal.append(1 if goal else 0)
        self._bad.append(1 if bad else 0)
        self._state_name.append(name)
        if obs is None:
            self._obs_of_state.append(-1)
        else:
            oid = self._obs_key_to_id.get(obs)
            if oid is None:
                oid = len(self._obs_name)
                self._obs_key_to_id[obs] = oid
                self._obs_name.append(obs_name if obs_name is not None else str(obs))
            self._obs_of_state.append(oid)
        return sid

    def add_choice(self, state: int, action: str, transitions: Iterable[tuple[int, float]]) -> None:
        self._choice_state.append(state)
        self._choice_action.append(sys.intern(action))
        count = 0
        for target, prob in transitions:
            self._targets.append(target)
            self._probs.append(prob)
            count += 1
        if count == 0:
            raise ModelError(f"choice {action!r} of state {state} has no transitions")
        self._trans_count.append(count)

    def finish(self, initial: int, meta=None) -> ExplicitModel:
        """Freeze to arrays; choices may have been added in any order and are regrouped by state."""
        n = self.num_states
        choice_state = np.frombuffer(self._choice_state, dtype=np.int64) if self._choice_state else np.zeros(0, np.int64)
        trans_count = np.frombuffer(self._trans_count, dtype=np.int64) if self._trans_count else np.zeros(0, np.int64)
        targets = np.frombuffer(self._targets, dtype=np.int64).copy() if self._targets else np.zeros(0, np.int64)
        probs = np.frombuffer(self._probs, dtype=np.float64).copy() if self._probs else np.zeros(0, np.float64)
        actions = self._choice_action
        if len(choice_state) and (np.diff(choice_state) < 0).any():
            order = np.argsort(choice_state, kind="stable")
            old_start = np.zeros(len(trans_count) + 1, dtype=np.int64)
            np.cumsum(trans_count, out=old_start[1:])
            flat = _gather_ranges(old_start[order], trans_count[order])
            targets = targets[flat]
            probs = probs[flat]
            trans_count = trans_count[order]
            actions = [actions[i] for i in order.tolist()]
            choice_state = choice_state[order]
        counts = np.bincount(choice_state, minlength=n) if len(choice_state) else np.zeros(n, np.int64)
        choice_start = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=choice_start[1:])
        trans_start = np.zeros(len(trans_count) + 1, dtype=np.int64)
        np.cumsum(trans_count, out=trans_start[1:])
        has_obs = self.kind == "pomdp"
        model = ExplicitModel(
            kind=self.kind,
            initial=initial,
            player=np.frombuffer(self._player, dtype=np.int8).copy(),
            choice_start=choice_start,
            choice_action=actions,
            trans_start=trans_start,
            trans_target=targets,
            trans_prob=probs,
            goal=np.frombuffer(self._goal, dtype=np.int8).astype(bool),
            bad=np.frombuffer(self._bad, dtype=np.int8).astype(bool),
            state_name=self._state_name,
            obs_id=np.frombuffer(self._obs_of_state, dtype=np.int64).copy() if has_obs else None,
            obs_name=self._obs_name if has_obs else None,
            meta=meta,
        )
        model.validate()
        return model


def make_absorbing(model: ExplicitModel) -> ExplicitModel:
    """Replace all choices of goal/bad states by a single `done` self-loop.

    Leaves until-probabilities unchanged: paths are scored by the first
    goal/bad state they hit.
    """
    absorbing = model.goal | model.bad
    if not absorbing.any():
        return model
    n = model.num_states
    done = sys.intern("done")
    new_actions: list[str] = []
    choice_state = array("q")
    keep_choices = array("q")
    for s in range(n):
        if absorbing[s]:
            choice_state.append(s)
            keep_choices.append(-1)
            new_actions.append(done)
        else:
            for c in range(int(model.choice_start[s]), int(model.choice_start[s + 1])):
                choice_state.append(s)
                keep_choices.append(c)
                new_actions.append(model.choice_action[c])
    keep = np.frombuffer(keep_choices, dtype=np.int64)
    lengths = np.where(keep >= 0, model.trans_start[keep + 1] - model.trans_start[keep], 1)
    starts = np.where(keep >= 0, model.trans_start[keep], 0)
    flat = _gather_ranges(starts, lengths)
    targets = model.trans_target[flat]
    probs = model.trans_prob[flat].copy()
    # overwrite the self-loop rows
    loop_rows = np.flatnonzero(keep < 0)
    trans_start = np.zeros(len(keep) + 1, dtype=np.int64)
    np.cumsum(lengths, out=trans_start[1:])
    loop_pos = trans_start[loop_rows]
    cs = np.frombuffer(choice_state, dtype=np.int64)
    targets[loop_pos] = cs[loop_rows]
    probs[loop_pos] = 1.0
    counts = np.bincount(cs, minlength=n)
    choice_start = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=choice_start[1:])
    return ExplicitModel(
        kind=model.kind,
        initial=model.initial,
        player=model.player,
        choice_start=choice_start,
        choice_action=new_actions,
        trans_start=trans_start,
        trans_target=targets,
        trans_prob=probs,
        goal=model.goal,
        bad=model.bad,
        state_name=model.state_name,
        obs_id=model.obs_id,
        obs_name=model.obs_name,
        meta=model.meta,
    )


def reachable_from_initial(model: ExplicitModel) -> np.ndarray:
    """Boolean mask of states reachable from the initial state (positive probability)."""
    n = model.num_states
    seen = np.zeros(n, dtype=bool)
    stack = [model.initial]
    seen[model.initial] = True
    cs, ts = model.choice_start, model.trans_start
    tgt = model.trans_target
    while stack:
        s = stack.pop()
        for c in range(int(cs[s]), int(cs[s + 1])):
            for k in range(int(ts[c]), int(ts[c + 1])):
                t = int(tgt[k])
                if not seen[t]:
                    seen[t] = True
                    stack.append(t)
    return seen
