"""Sequential fragment-assembly MDP: actions, transitions, and target
decomposition into trajectories.

States form a pointed DAG from the empty molecule to terminal (stopped)
molecules. Backward transitions enumerate one entry per (parent, forward
action that rebuilds the state); counting realizations rather than raw
leaves is what makes uniform-backward trajectory balance sample exactly
proportionally to the reward on symmetric states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chemgraph
from .chemgraph import FragmentVocab, PartialMol, attach, canonical_hash, leaf_parents
from .errors import (
    IncompleteTrajectory,
    InitialState,
    InvalidAction,
    NotDecomposable,
    TerminalState,
)

STOP = "stop"
ADD_ROOT = "root"
ATTACH = "attach"


@dataclass(frozen=True)
class Action:
    """AddRoot(frag) | Attach(stem index into open_stems, frag) | Stop."""

    kind: str
    frag: int = -1
    stem: int = -1

    @classmethod
    def stop(cls) -> "Action":
        return cls(STOP)

    @classmethod
    def add_root(cls, frag: int) -> "Action":
        return cls(ADD_ROOT, frag=frag)

    @classmethod
    def attach(cls, stem: int, frag: int) -> "Action":
        return cls(ATTACH, frag=frag, stem=stem)


@dataclass(frozen=True, eq=False)
class EnvState:
    mol: PartialMol
    terminal: bool = False

    def key(self) -> tuple[int, bool]:
        return (canonical_hash(self.mol), self.terminal)

    def is_initial(self) -> bool:
        return self.mol.is_empty() and not self.terminal

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.terminal == other.terminal and self.mol == other.mol

    def __hash__(self):
        return hash((self.mol, self.terminal))


@dataclass(frozen=True)
class EnvConfig:
    vocab: FragmentVocab
    max_nodes: int = 8
    min_nodes: int = 1

    def __post_init__(self):
        if not self.max_nodes >= self.min_nodes >= 1:
            raise InvalidAction(
                f"need max_nodes >= min_nodes >= 1, got {self.max_nodes}, {self.min_nodes}"
            )

    def initial_state(self) -> EnvState:
        return EnvState(PartialMol.empty(self.vocab), False)


def valid_actions(state: EnvState, config: EnvConfig) -> list[Action]:
    """Outgoing actions in canonical order (attaches by stem then fragment)."""
    if state.terminal:
        raise TerminalState("terminal states have no actions")
    vocab_size = len(config.vocab)
    mol = state.mol
    if mol.is_empty():
        return [Action.add_root(f) for f in range(vocab_size)]
    actions = []
    if mol.n_nodes < config.max_nodes:
        for i in range(len(mol.open_stems)):
            for f in range(vocab_size):
                actions.append(Action.attach(i, f))
    if mol.n_nodes >= config.min_nodes:
        actions.append(Action.stop())
    return actions


def step(state: EnvState, action: Action, config: EnvConfig) -> EnvState:
    if state.terminal:
        raise InvalidAction("cannot act in a terminal state")
    mol = state.mol
    if action.kind == STOP:
        if mol.n_nodes < config.min_nodes:
            raise InvalidAction(f"stop requires at least {config.min_nodes} nodes")
        return EnvState(mol, True)
    if action.kind == ADD_ROOT:
        if not mol.is_empty():
            raise InvalidAction("root insertion only from the empty state")
        if not 0 <= action.frag < len(config.vocab):
            raise InvalidAction(f"unknown fragment {action.frag}")
        return EnvState(attach(mol, None, action.frag), False)
    if action.kind == ATTACH:
        if mol.is_empty():
            raise InvalidAction("cannot attach to the empty state")
        if mol.n_nodes >= config.max_nodes:
            raise InvalidAction("size cap reached")
        stems = mol.open_stems
        if not 0 <= action.stem < len(stems):
            raise InvalidAction(f"stem index {action.stem} out of range")
        if not 0 <= action.frag < len(config.vocab):
            raise InvalidAction(f"unknown fragment {action.frag}")
        return EnvState(attach(mol, stems[action.stem], action.frag), False)
    raise InvalidAction(f"unknown action kind {action.kind!r}")


def backward_transitions(state: EnvState) -> list[tuple[EnvState, Action]]:
    """Incoming edges as (parent state, forward action from that parent).

    For a terminal state the unique entry inverts Stop. For assembly states,
    entries are enumerated per distinct canonical parent and per forward
    action on that parent that rebuilds this state, so symmetric attachments
    contribute one entry per realization.
    """
    if state.is_initial():
        raise InitialState("the empty state has no parents")
    if state.terminal:
        return [(EnvState(state.mol, False), Action.stop())]
    mol = state.mol
    if mol.n_nodes == 1:
        return [(EnvState(PartialMol.empty(mol.vocab), False), Action.add_root(mol.nodes[0]))]

    target = canonical_hash(mol)
    # group removable leaves by the canonical parent they produce
    by_parent: dict[int, tuple[PartialMol, set[tuple[int, int, int]]]] = {}
    degree = [0] * mol.n_nodes
    incident = {}
    for a, sa, b, sb in mol.edges:
        degree[a] += 1
        degree[b] += 1
        incident[a] = (a, sa, b, sb)
        incident[b] = (a, sa, b, sb)
    for parent, removed in leaf_parents(mol):
        a, sa, b, sb = incident[removed]
        if a == removed:
            neighbor, neighbor_stem, leaf_frag = b, sb, mol.nodes[a]
        else:
            neighbor, neighbor_stem, leaf_frag = a, sa, mol.nodes[b]
        key = canonical_hash(parent)
        hint = (neighbor_stem, mol.nodes[neighbor], leaf_frag)
        if key in by_parent:
            by_parent[key][1].add(hint)
        else:
            by_parent[key] = (parent, {hint})

    entries: list[tuple[EnvState, Action]] = []
    for parent, hints in by_parent.values():
        stems = parent.open_stems
        seen: set[tuple[int, int]] = set()
        for stem_index, (node, stem) in enumerate(stems):
            node_frag = parent.nodes[node]
            for neighbor_stem, neighbor_frag, leaf_frag in hints:
                if stem != neighbor_stem or node_frag != neighbor_frag:
                    continue
                if (stem_index, leaf_frag) in seen:
                    continue
                if canonical_hash(attach(parent, (node, stem), leaf_frag)) == target:
                    seen.add((stem_index, leaf_frag))
                    entries.append(
                        (EnvState(parent, False), Action.attach(stem_index, leaf_frag))
                    )
    return entries


@dataclass(frozen=True)
class Trajectory:
    """States and actions from the empty state to (usually) a stopped molecule."""

    states: tuple[EnvState, ...]
    actions: tuple[Action, ...]
    log_reward: float | None = None

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise IncompleteTrajectory("need one more state than actions")

    @property
    def terminal(self) -> bool:
        return self.states[-1].terminal

    @property
    def final_mol(self) -> PartialMol:
        return self.states[-1].mol

    def with_log_reward(self, value: float) -> "Trajectory":
        return Trajectory(self.states, self.actions, float(value))

    def verify(self, config: EnvConfig) -> None:
        """Replay the actions and demand canonical-hash agreement throughout."""
        if not self.states[0].is_initial():
            raise IncompleteTrajectory("trajectory must start at the empty state")
        current = self.states[0]
        for i, action in enumerate(self.actions):
            current = step(current, action, config)
            stored = self.states[i + 1]
            if current.terminal != stored.terminal or current.key() != stored.key():
                raise IncompleteTrajectory(f"replay diverges at step {i}")
        if self.terminal and (not self.actions or self.actions[-1].kind != STOP):
            raise IncompleteTrajectory("terminal trajectory must end with Stop")


def decompose_target(
    target_mol: PartialMol,
    config: EnvConfig,
    rng: np.random.Generator,
    count: int,
) -> list[Trajectory]:
    """Random backward walks from the target, reversed into forward trajectories."""
    if target_mol.is_empty():
        raise NotDecomposable("cannot decompose the empty molecule")
    if target_mol.n_nodes > config.max_nodes:
        raise NotDecomposable(
            f"target has {target_mol.n_nodes} nodes, cap is {config.max_nodes}"
        )
    if target_mol.n_nodes < config.min_nodes:
        raise NotDecomposable("target is below the minimum size")
    if target_mol.vocab.version != config.vocab.version:
        raise NotDecomposable("target vocabulary does not match the environment")

    out = []
    for _ in range(count):
        # walk to the empty state, remembering canonical hashes of the chain
        chain = [canonical_hash(target_mol)]
        state = EnvState(target_mol, False)
        while not state.is_initial():
            entries = backward_transitions(state)
            parent, _ = entries[int(rng.integers(len(entries)))]
            state = parent
            chain.append(canonical_hash(parent.mol))
        chain.reverse()  # empty ... target

        # rebuild forward, matching each intermediate canonical hash
        states = [config.initial_state()]
        actions: list[Action] = []
        for next_hash in chain[1:]:
            current = states[-1]
            chosen = None
            for action in valid_actions(current, config):
                if action.kind == STOP:
                    continue
                candidate = step(current, action, config)
                if canonical_hash(candidate.mol) == next_hash:
                    chosen = (action, candidate)
                    break
            if chosen is None:
                raise NotDecomposable("backward walk produced an unreachable state")
            actions.append(chosen[0])
            states.append(chosen[1])
        actions.append(Action.stop())
        states.append(step(states[-1], Action.stop(), config))
        traj = Trajectory(tuple(states), tuple(actions))
        traj.verify(config)
        out.append(traj)
    return out


class BackwardCountCache:
    """Memoized number of incoming realizations per canonical state."""

    def __init__(self):
        self._counts: dict[tuple[int, bool], int] = {}

    def count(self, state: EnvState) -> int:
        key = state.key()
        hit = self._counts.get(key)
        if hit is None:
            hit = len(backward_transitions(state))
            self._counts[key] = hit
        return hit
