"""Active-follow exploration: one agent leads a rollout, the other replays it.

Phase I lets VDA lead; the actions it valued most become the importance set
that conditions RDA and defines RDA's vital nodes. Phase II lets RDA lead
under that conditioning while VDA replays and scores the same removals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .rl import Agent, ReturnContext, TrajectoryRecord, replay_actions, run_episode
from .shaping import PenaltyWeights

IMPORTANCE_FRACTION = 0.15


@dataclass(frozen=True)
class ImportanceSet:
    nodes: frozenset[int]
    source_episode: int = -1


def importance_set(traj: TrajectoryRecord, source_episode: int = -1, fraction: float = IMPORTANCE_FRACTION) -> ImportanceSet:
    """Actions with the highest recorded Q-values; ties go to the earliest step."""
    if not traj.actions:
        raise ValueError("importance set of an empty trajectory")
    if len(traj.q_taken) != len(traj.actions):
        raise ValueError("trajectory lacks per-step Q-values of its actions")
    count = math.ceil(fraction * len(traj.actions) - 1e-9)
    order = sorted(range(len(traj.actions)), key=lambda t: (-traj.q_taken[t], t))
    return ImportanceSet(frozenset(traj.actions[t] for t in order[:count]), source_episode)


def phase_vda_lead(
    graph: Graph,
    vda: Agent,
    rda: Agent,
    budget: int,
    eps: float,
    rng: np.random.Generator,
    weights: PenaltyWeights = PenaltyWeights(),
    episode: int = -1,
) -> tuple[TrajectoryRecord, ImportanceSet | None, TrajectoryRecord]:
    lead = run_episode(vda, graph, budget, eps, rng, source="active")
    iset = importance_set(lead, episode) if lead.actions else None
    vital = iset.nodes if iset is not None else None
    follow = replay_actions(rda, graph, lead.actions, conditioning=vital, ctx=ReturnContext(weights, vital))
    vda.buffer.add(lead)
    rda.buffer.add(follow)
    return lead, iset, follow


def phase_rda_lead(
    graph: Graph,
    rda: Agent,
    vda: Agent,
    iset: ImportanceSet | None,
    budget: int,
    eps: float,
    rng: np.random.Generator,
    weights: PenaltyWeights = PenaltyWeights(),
) -> tuple[TrajectoryRecord, TrajectoryRecord]:
    vital = iset.nodes if iset is not None else None
    lead = run_episode(rda, graph, budget, eps, rng, conditioning=vital, ctx=ReturnContext(weights, vital))
    follow = replay_actions(vda, graph, lead.actions)
    rda.buffer.add(lead)
    vda.buffer.add(follow)
    return lead, follow
