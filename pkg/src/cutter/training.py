"""End-to-end training loop and greedy compression."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .coexplore import ImportanceSet, importance_set, phase_rda_lead, phase_vda_lead
from .config import RunConfig
from .graph import Graph, GraphError
from .models import ModelBundle, SharedEncoderParams, all_named_params
from .rl import (
    Agent,
    EpsilonSchedule,
    ReturnContext,
    TrajectoryRecord,
    Transition,
    compression_budget,
    dqn_update,
    encode_states,
    run_episode,
)
from .shaping import (
    AffineCalibrator,
    PenaltyWeights,
    PrototypePair,
    ShapingConfig,
    embedding_penalty,
    extract_prototypes,
    predicted_returns,
    prototype_targets,
    rda_score,
    total_reward_loss,
)

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = "episode,agent,true_return,loss,epsilon"
SHAPING_LOG_HEADER = "episode,pred_return,true_return,affine_pred,proto_loss"


@dataclass
class AgentShaping:
    calibrator: AffineCalibrator
    prototypes: PrototypePair | None = None
    version: int = 0


class Trainer:
    """Owns both agents and applies every learning signal once per episode.

    An episode is one active-follow round: VDA leads then RDA leads, after
    which each agent trains its reward network (when shaping is on) and
    its Q-network from replay.
    """

    def __init__(self, graph: Graph, cfg: RunConfig) -> None:
        if graph.alive_count < 2:
            raise GraphError("training needs at least two nodes")
        self.graph = graph
        self.cfg = cfg
        init_ss, explore_ss, replay_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        hidden = (cfg.q_hidden1, cfg.q_hidden2)
        self.shared = SharedEncoderParams(init_rng, 1, cfg.width)
        self.vda = Agent(ModelBundle("vda", self.shared, init_rng, cfg.width, cfg.depth, hidden), cfg.buffer_size, cfg.target_sync)
        self.rda = Agent(ModelBundle("rda", self.shared, init_rng, cfg.width, cfg.depth, hidden), cfg.buffer_size, cfg.target_sync)
        self.policy_opt = nn.Adam(cfg.lr)
        self.reward_opt = nn.Adam(cfg.reward_lr)
        self.shaping = {"vda": AgentShaping(AffineCalibrator()), "rda": AgentShaping(AffineCalibrator())}
        self.shaping_cfg = ShapingConfig(cfg.lambda_proto, cfg.proto_k, cfg.proto_window, cfg.proto_refresh)
        self.weights = PenaltyWeights(cfg.w_conn, cfg.w_delete, cfg.w_embed)
        self.budget = cfg.budget or compression_budget(cfg.rho, graph.alive_count)
        if self.budget > graph.alive_count:
            raise GraphError(f"budget {self.budget} exceeds graph size")
        decay = max(1, int(round(cfg.eps_decay_fraction * cfg.episodes)))
        self.epsilon = EpsilonSchedule(cfg.eps_start, cfg.eps_end, decay)
        self.iset: ImportanceSet | None = None
        self.episode = 0
        self.train_log: list[str] = [TRAIN_LOG_HEADER]
        self.shaping_logs: dict[str, list[str]] = {k: [SHAPING_LOG_HEADER] for k in ("vda", "rda")}
        self.history: dict[str, list[float]] = {"vda": [], "rda": []}

    # -- main loop -----------------------------------------------------------

    def train(self, episodes: int | None = None, progress: Callable[[int], None] | None = None) -> None:
        for _ in range(self.cfg.episodes if episodes is None else episodes):
            self.run_round()
            if progress is not None:
                progress(self.episode)

    def run_round(self) -> None:
        ep = self.episode
        eps = self.epsilon.value(ep)
        lead_v, iset, _ = phase_vda_lead(self.graph, self.vda, self.rda, self.budget, eps, self.explore_rng, self.weights, ep)
        if iset is not None:
            self.iset = iset
        lead_r, _ = phase_rda_lead(self.graph, self.rda, self.vda, self.iset, self.budget, eps, self.explore_rng, self.weights)
        for agent, lead in ((self.vda, lead_v), (self.rda, lead_r)):
            if self.cfg.shaping:
                self.train_reward(agent, lead)
            loss = self.train_policy(agent)
            self.history[agent.kind].append(lead.true_return)
            self.train_log.append(f"{ep},{agent.kind},{lead.true_return!r},{loss!r},{eps!r}")
        log.debug("episode %d: vda %.4f rda %.4f eps %.3f", ep, lead_v.true_return, lead_r.true_return, eps)
        self.episode += 1

    # -- reward network ------------------------------------------------------

    def step_returns(self, agent: Agent, traj: TrajectoryRecord) -> np.ndarray:
        """Per-step true return: the one-step change of the agent's objective along the trajectory."""
        conn = np.asarray(traj.connectivity, dtype=float)
        if conn[0] == 0 or not traj.actions:
            return np.zeros(len(traj.actions))
        if agent.kind == "vda":
            return (conn[:-1] - conn[1:]) / conn[0]
        p_conn = (conn[0] - conn) / conn[0]
        vital = set(traj.vital or ())
        if not vital:
            scores = np.array([rda_score(p, 0.0, 0.0, self.weights) for p in p_conn])
            return np.diff(scores)
        masks = traj.masks()
        hit = np.cumsum([0] + [a in vital for a in traj.actions]) / len(vital)
        live = np.flatnonzero(masks.any(axis=1))
        enc = encode_states(agent, traj.start, masks[live], traj.conditioning)
        b = enc.batch
        first = (b.node_ids[b.rows_of(0)], enc.h.value[b.rows_of(0)])
        scores = np.zeros(len(masks))
        for j, k in enumerate(live):
            rows = b.rows_of(j)
            p_embed = embedding_penalty(first, (b.node_ids[rows], enc.h.value[rows]), vital)
            scores[k] = rda_score(p_conn[k], hit[k], p_embed, self.weights)
        # an emptied graph keeps no vital embedding at all
        for k in sorted(set(range(len(masks))) - set(live.tolist())):
            scores[k] = rda_score(p_conn[k], hit[k], 1.0, self.weights)
        return np.diff(scores)

    def refresh_prototypes(self, agent: Agent) -> None:
        k = self.shaping_cfg.k
        items = [t for t in agent.buffer if t.actions]
        if len(items) < 2 * k:
            return
        state = self.shaping[agent.kind]
        state.prototypes = extract_prototypes(
            items, k, self.shaping_cfg.window, agent.bundle.proto,
            self.shaping_cfg.refresh_interval, step_returns=lambda t: self.step_returns(agent, t),
        )
        state.version += 1

    def proto_targets(self, agent: Agent, traj: TrajectoryRecord) -> tuple:
        # embeddings and the GRU never change after creation, so targets only
        # move when the prototypes are refreshed
        state = self.shaping[agent.kind]
        cached = traj.proto_targets
        if cached is None or cached[0] != state.version:
            cached = (state.version, prototype_targets(traj.graph_embeds, traj.action_embeds, state.prototypes, agent.bundle.proto))
            traj.proto_targets = cached
        return cached[1]

    def train_reward(self, agent: Agent, lead: TrajectoryRecord) -> None:
        state = self.shaping[agent.kind]
        rn = agent.bundle.reward
        if self.episode % self.shaping_cfg.refresh_interval == 0 or state.prototypes is None:
            self.refresh_prototypes(agent)
        trajs = list(agent.buffer)
        with nn.no_grad():
            preds, _ = predicted_returns([t.graph_embeds for t in trajs], [t.action_embeds for t in trajs], rn)
        state.calibrator.refit(list(zip(preds.value[:, 0].tolist(), [t.true_return for t in trajs])))
        proto_loss = 0.0
        for _ in range(self.cfg.reward_updates):
            batch = agent.buffer.sample_trajectories(self.cfg.reward_batch, self.replay_rng)
            ge = [t.graph_embeds for t in batch]
            ae = [t.action_embeds for t in batch]
            targets = None
            if state.prototypes is not None:
                targets = [self.proto_targets(agent, t) for t in batch]
            parts: dict[str, float] = {}
            loss = total_reward_loss(ge, ae, [t.true_return for t in batch], state.calibrator, rn,
                                     state.prototypes, self.shaping_cfg, targets=targets, parts=parts)
            nn.backward(loss)
            self.reward_opt.step(rn.params())
            proto_loss = parts["proto"]
        with nn.no_grad():
            pred, _ = predicted_returns([lead.graph_embeds], [lead.action_embeds], rn)
        p = pred.item()
        self.shaping_logs[agent.kind].append(
            f"{self.episode},{p!r},{lead.true_return!r},{float(state.calibrator(p))!r},{proto_loss!r}"
        )

    # -- Q-network -----------------------------------------------------------

    def transition_rewards(self, agent: Agent, batch: list[Transition]) -> np.ndarray:
        if not self.cfg.shaping:
            return np.array([tr.traj.true_return if tr.t == len(tr.traj) - 1 else 0.0 for tr in batch])
        cal = self.shaping[agent.kind].calibrator
        ge = np.array([tr.traj.graph_embeds[tr.t] for tr in batch])
        ae = np.array([tr.traj.action_embeds[tr.t] for tr in batch])
        with nn.no_grad():
            _, steps = predicted_returns([ge], [ae], agent.bundle.reward)
        lengths = np.array([len(tr.traj) for tr in batch], dtype=float)
        return cal.alpha * steps.value[:, 0] + cal.beta / lengths

    def train_policy(self, agent: Agent) -> float:
        losses = []
        for _ in range(self.cfg.dqn_updates):
            batch = agent.buffer.sample_transitions(self.cfg.batch_size, self.replay_rng)
            if not batch:
                break
            rewards = self.transition_rewards(agent, batch)
            losses.append(dqn_update(agent, batch, self.cfg.gamma, rewards, self.policy_opt))
        return float(np.mean(losses)) if losses else 0.0

    # -- persistence ---------------------------------------------------------

    def named_params(self) -> list[nn.Param]:
        return all_named_params(self.shared, self.vda.bundle, self.rda.bundle)


def build_agents(cfg: RunConfig) -> tuple[SharedEncoderParams, Agent, Agent]:
    """Freshly initialised agents matching ``cfg`` (for loading checkpoints)."""
    init_ss = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    rng = np.random.default_rng(init_ss)
    hidden = (cfg.q_hidden1, cfg.q_hidden2)
    shared = SharedEncoderParams(rng, 1, cfg.width)
    vda = Agent(ModelBundle("vda", shared, rng, cfg.width, cfg.depth, hidden), cfg.buffer_size, cfg.target_sync)
    rda = Agent(ModelBundle("rda", shared, rng, cfg.width, cfg.depth, hidden), cfg.buffer_size, cfg.target_sync)
    return shared, vda, rda


def compress(graph: Graph, vda: Agent, rda: Agent, rho: float, weights: PenaltyWeights = PenaltyWeights()) -> tuple[int, ...]:
    """Greedy inference: VDA proposes the importance set, RDA removes ceil((1-rho)N) nodes."""
    budget = compression_budget(rho, graph.alive_count)
    if budget == 0:
        return ()
    rng = np.random.default_rng(0)  # unused at eps = 0
    lead = run_episode(vda, graph, budget, 0.0, rng)
    vital = importance_set(lead).nodes if lead.actions else None
    traj = run_episode(rda, graph, budget, 0.0, rng, conditioning=vital, ctx=ReturnContext(weights, vital))
    return traj.actions
