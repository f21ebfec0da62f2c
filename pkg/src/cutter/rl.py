"""Residual-graph MDP, epsilon-greedy DQN agents and trajectory replay."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .graph import CompressionSpec, Graph, GraphError, connectivity_profile, remove_nodes
from .models import ModelBundle, PolicySnapshot, build_batch, batch_for
from .shaping import PenaltyWeights, connectivity_drop, embedding_penalty, rda_score


# --- environment ------------------------------------------------------------


@dataclass(frozen=True)
class EnvState:
    graph: Graph
    removed: tuple[int, ...] = ()
    step: int = 0
    budget: int = 0

    def __post_init__(self) -> None:
        if len(self.removed) != self.step or self.step > self.budget:
            raise GraphError("inconsistent environment state")


def env_step(state: EnvState, action: int) -> EnvState:
    if state.step >= state.budget:
        raise GraphError(f"removal budget {state.budget} exhausted")
    if not (0 <= action < state.graph.node_count and state.graph.alive[action]):
        raise GraphError(f"action {action} is not an alive node")
    return EnvState(remove_nodes(state.graph, [action]), state.removed + (action,), state.step + 1, state.budget)


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_episodes: int = 90

    def __post_init__(self) -> None:
        if not (0 <= self.eps_end <= self.eps_start <= 1) or self.decay_episodes < 1:
            raise ValueError("invalid epsilon schedule")

    def value(self, episode: int) -> float:
        frac = min(1.0, episode / self.decay_episodes)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def select_action(
    alive_nodes: Sequence[int] | np.ndarray, q_scores: Sequence[float] | np.ndarray, eps: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy choice over alive nodes; greedy ties go to the lowest id.

    ``q_scores`` is row-aligned with ``alive_nodes``.
    """
    alive_nodes = np.asarray(alive_nodes)
    if len(alive_nodes) == 0:
        raise GraphError("no alive nodes to act on")
    if eps > 0 and rng.random() < eps:
        return int(alive_nodes[rng.integers(len(alive_nodes))])
    q = np.asarray(q_scores, dtype=float)
    best = np.flatnonzero(q == q.max())
    return int(alive_nodes[best].min())


# --- trajectories and replay ------------------------------------------------


@dataclass
class TrajectoryRecord:
    """One episode: start graph, removal sequence and what the owner saw along the way.

    ``graph_embeds``/``action_embeds`` hold the owner's pre-removal embeddings
    for every step, computed when the record was created.
    """

    start: Graph
    actions: tuple[int, ...]
    true_return: float
    agent: str
    source: str
    connectivity: tuple[int, ...]
    graph_embeds: np.ndarray
    action_embeds: np.ndarray
    conditioning: frozenset[int] | None = None
    vital: frozenset[int] | None = None
    q_taken: tuple[float, ...] = ()
    _masks: np.ndarray | None = field(default=None, repr=False)
    # (prototype version, (steps, values)); valid until the prototypes change
    proto_targets: tuple[int, tuple] | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.actions)

    def masks(self) -> np.ndarray:
        """Alive masks of states 0..T (row t is the state before action t)."""
        if self._masks is None:
            m = np.tile(self.start.alive, (len(self.actions) + 1, 1))
            for t, a in enumerate(self.actions):
                m[t + 1:, a] = False
            self._masks = m
        return self._masks

    def state(self, t: int) -> Graph:
        return self.start.with_alive(self.masks()[t])

    @property
    def final(self) -> Graph:
        return self.state(len(self.actions))

    def transitions(self) -> list[Transition]:
        return [Transition(self, t) for t in range(len(self.actions))]


@dataclass(frozen=True)
class Transition:
    traj: TrajectoryRecord
    t: int

    @property
    def action(self) -> int:
        return self.traj.actions[self.t]

    @property
    def done(self) -> bool:
        return self.t == len(self.traj.actions) - 1 or not self.traj.masks()[self.t + 1].any()

    def state_mask(self) -> np.ndarray:
        return self.traj.masks()[self.t]

    def next_mask(self) -> np.ndarray:
        return self.traj.masks()[self.t + 1]


class ReplayBuffer:
    """Ring buffer of trajectories with uniform transition sampling."""

    def __init__(self, capacity: int = 200) -> None:
        self.items: deque[TrajectoryRecord] = deque(maxlen=capacity)

    def add(self, traj: TrajectoryRecord) -> None:
        self.items.append(traj)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def sample_transitions(self, size: int, rng: np.random.Generator) -> list[Transition]:
        lengths = np.array([len(t) for t in self.items])
        total = int(lengths.sum())
        if total == 0:
            return []
        picks = np.sort(rng.integers(total, size=min(size, total)))
        bounds = np.cumsum(lengths)
        out = []
        for p in picks:
            i = int(np.searchsorted(bounds, p, side="right"))
            start = bounds[i] - lengths[i]
            out.append(Transition(self.items[i], int(p - start)))
        return out

    def sample_trajectories(self, size: int, rng: np.random.Generator) -> list[TrajectoryRecord]:
        if not self.items:
            return []
        idx = rng.choice(len(self.items), size=min(size, len(self.items)), replace=False)
        return [self.items[int(i)] for i in sorted(idx)]


# --- agents -----------------------------------------------------------------


class Agent:
    """A model bundle with its target network and replay buffer."""

    def __init__(self, bundle: ModelBundle, buffer_size: int = 200, sync_every: int = 50) -> None:
        self.bundle = bundle
        self.kind = bundle.kind
        self.target: PolicySnapshot = bundle.policy_snapshot()
        self.buffer = ReplayBuffer(buffer_size)
        self.sync_every = sync_every
        self.updates = 0

    def channel_for(self, conditioning: Iterable[int] | None) -> Iterable[int] | None:
        if self.kind != "rda":
            return None
        return conditioning if conditioning is not None else ()


def _channels(agent: Agent, transitions: Sequence[Transition], n: int) -> np.ndarray | None:
    if agent.kind != "rda":
        return None
    ch = np.zeros((len(transitions), n))
    for i, tr in enumerate(transitions):
        if tr.traj.conditioning:
            ch[i, list(tr.traj.conditioning)] = 1.0
    return ch


def _batch(base: Graph, masks: np.ndarray, channels: np.ndarray | None):
    batch = build_batch(base, masks)
    if channels is not None:
        batch.channel = channels[masks].reshape(-1, 1)
    return batch


def dqn_update(
    agent: Agent,
    batch: Sequence[Transition],
    gamma: float,
    shaped_rewards: Sequence[float],
    optimizer: nn.Adam,
) -> float:
    """One Adam step on the mean squared TD error; returns the pre-step loss.

    Targets use the frozen target network, y = r + gamma * max_a' Q_target(s', a'),
    and y = r on terminal transitions. All transitions must share a base graph.
    """
    if not batch:
        raise ValueError("empty transition batch")
    if len(shaped_rewards) != len(batch):
        raise ValueError("one shaped reward per transition required")
    base = batch[0].traj.start
    n = base.node_count
    channels = _channels(agent, batch, n)
    rewards = np.asarray(shaped_rewards, dtype=float)
    y = rewards.copy()
    live = [i for i, tr in enumerate(batch) if not tr.done]
    if live and gamma != 0.0:
        next_masks = np.array([batch[i].next_mask() for i in live])
        nb = _batch(base, next_masks, channels[live] if channels is not None else None)
        q_next = agent.target.q_values(nb)
        best = np.maximum.reduceat(q_next, nb.offsets[:-1])
        y[live] += gamma * best
    masks = np.array([tr.state_mask() for tr in batch])
    sb = _batch(base, masks, channels)
    enc = agent.bundle.encode(sb)
    rows = np.array([sb.row_index(i, tr.action) for i, tr in enumerate(batch)])
    q_sa = nn.gather_rows(enc.q, rows)
    loss = nn.mse(q_sa, y.reshape(-1, 1))
    nn.backward(loss)
    optimizer.step(agent.bundle.policy_params())
    agent.updates += 1
    if agent.updates % agent.sync_every == 0:
        agent.target.sync(agent.bundle)
    return loss.item()


# --- episodes ---------------------------------------------------------------


@dataclass
class ReturnContext:
    """Inputs for scoring a finished removal sequence under an agent's objective."""

    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    vital: frozenset[int] | None = None


def encode_states(agent: Agent, traj_start: Graph, masks: np.ndarray, conditioning: Iterable[int] | None):
    """Forward-only encoding of many states; returns the Encoded batch."""
    channels = None
    if agent.kind == "rda":
        channels = np.zeros(masks.shape)
        if conditioning:
            channels[:, list(conditioning)] = 1.0
    with nn.no_grad():
        return agent.bundle.encode(_batch(traj_start, masks, channels), with_q=False)


def node_embeddings(agent: Agent, g: Graph, conditioning: Iterable[int] | None) -> tuple[np.ndarray, np.ndarray]:
    enc = encode_states(agent, g, g.alive[None, :], conditioning)
    return enc.batch.node_ids, enc.h.value


def score_sequence(
    agent: Agent,
    start: Graph,
    masks: np.ndarray,
    actions: Sequence[int],
    connectivity: Sequence[int],
    ctx: ReturnContext,
    conditioning: Iterable[int] | None,
) -> float:
    """True return of a removal sequence under ``agent``'s objective."""
    if connectivity[0] == 0:
        return 0.0
    p_conn = connectivity_drop(connectivity[0], connectivity[-1])
    if agent.kind == "vda":
        return p_conn
    vital = set(ctx.vital or ())
    if not vital:
        # warmup: no vital set yet, so only the connectivity penalty applies
        return rda_score(p_conn, 0.0, 0.0, ctx.weights)
    p_delete = len(vital & set(actions)) / len(vital)
    if masks[-1].any():
        before = node_embeddings(agent, start, conditioning)
        after = node_embeddings(agent, start.with_alive(masks[-1]), conditioning)
        p_embed = embedding_penalty(before, after, vital)
    else:
        p_embed = 1.0
    return rda_score(p_conn, p_delete, p_embed, ctx.weights)


def run_episode(
    agent: Agent,
    start_graph: Graph,
    budget: int,
    eps: float,
    rng: np.random.Generator,
    conditioning: Iterable[int] | None = None,
    ctx: ReturnContext | None = None,
    source: str = "active",
) -> TrajectoryRecord:
    """Roll the agent's epsilon-greedy policy for ``budget`` removals (or until the graph empties)."""
    if budget > start_graph.alive_count:
        raise GraphError(f"budget {budget} exceeds {start_graph.alive_count} alive nodes")
    ctx = ctx or ReturnContext()
    cond = frozenset(conditioning) if conditioning is not None else None
    channel = agent.channel_for(cond)
    state = EnvState(start_graph, (), 0, budget)
    g_rows, a_rows, q_taken = [], [], []
    while state.step < budget and state.graph.alive_count > 0:
        with nn.no_grad():
            enc = agent.bundle.encode(batch_for(state.graph, channel))
        ids = enc.batch.node_ids
        q = enc.q.value[:, 0]
        action = select_action(ids, q, eps, rng)
        row = int(np.searchsorted(ids, action))
        g_rows.append(enc.z.value[0])
        a_rows.append(enc.h.value[row])
        q_taken.append(float(q[row]))
        state = env_step(state, action)
    conn = connectivity_profile(start_graph, state.removed)
    width = agent.bundle.width
    traj = TrajectoryRecord(
        start=start_graph,
        actions=state.removed,
        true_return=0.0,
        agent=agent.kind,
        source=source,
        connectivity=tuple(conn),
        graph_embeds=np.array(g_rows).reshape(-1, width),
        action_embeds=np.array(a_rows).reshape(-1, width),
        conditioning=cond,
        vital=ctx.vital,
        q_taken=tuple(q_taken),
    )
    traj.true_return = score_sequence(agent, start_graph, traj.masks(), traj.actions, traj.connectivity, ctx, cond)
    return traj


def replay_actions(
    agent: Agent,
    start_graph: Graph,
    actions: Sequence[int],
    conditioning: Iterable[int] | None = None,
    ctx: ReturnContext | None = None,
    source: str = "follow",
) -> TrajectoryRecord:
    """Re-run someone else's removal sequence, encoding states with ``agent``'s own networks."""
    ctx = ctx or ReturnContext()
    cond = frozenset(conditioning) if conditioning is not None else None
    try:
        conn = connectivity_profile(start_graph, actions)
    except GraphError as exc:
        raise GraphError(f"cannot replay actions: {exc}") from None
    traj = TrajectoryRecord(
        start=start_graph,
        actions=tuple(actions),
        true_return=0.0,
        agent=agent.kind,
        source=source,
        connectivity=tuple(conn),
        graph_embeds=np.zeros((0, agent.bundle.width)),
        action_embeds=np.zeros((0, agent.bundle.width)),
        conditioning=cond,
        vital=ctx.vital,
    )
    masks = traj.masks()
    if actions:
        enc = encode_states(agent, start_graph, masks[:-1], agent.channel_for(cond))
        rows = [enc.batch.row_index(t, a) for t, a in enumerate(actions)]
        traj.graph_embeds = enc.z.value.copy()
        traj.action_embeds = enc.h.value[rows].copy()
    traj.true_return = score_sequence(agent, start_graph, masks, traj.actions, conn, ctx, cond)
    return traj


def compression_budget(rho: float, node_count: int) -> int:
    return CompressionSpec.budget(rho, node_count)
