"""Learning signals: true returns, the dense reward network and prototype shaping.

The reward network predicts a per-step reward; its summed prediction over a
trajectory is mapped through a monotone affine calibration and regressed on
the trajectory's true return. Prototype shaping adds a per-step target built
from GRU summaries of the context preceding critical steps in the best and
worst trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .graph import Graph, GraphError, pairwise_connectivity
from .models import PrototypeEncoderParams, RewardNetParams, encode_windows, reward_step


class CalibrationError(ValueError):
    """Raised when the affine fit is degenerate; calibration is deferred."""


@dataclass(frozen=True)
class PenaltyWeights:
    w_conn: float = 1.0 / 3.0
    w_delete: float = 1.0 / 3.0
    w_embed: float = 1.0 / 3.0

    def __post_init__(self) -> None:
        ws = (self.w_conn, self.w_delete, self.w_embed)
        if min(ws) < 0 or not math.isclose(sum(ws), 1.0, abs_tol=1e-9):
            raise ValueError(f"penalty weights must be >= 0 and sum to 1, got {ws}")


@dataclass(frozen=True)
class ShapingConfig:
    lambda_proto: float = 0.5
    k: int = 5
    window: int = 5
    refresh_interval: int = 20

    def __post_init__(self) -> None:
        if self.lambda_proto < 0:
            raise ValueError("lambda_proto must be >= 0")


# --- true returns -----------------------------------------------------------


def connectivity_drop(f_start: int, f_final: int) -> float:
    if f_start <= 0:
        raise GraphError("start graph has no connected pairs")
    return (f_start - f_final) / f_start


def vda_true_return(start: Graph, final: Graph) -> float:
    return connectivity_drop(pairwise_connectivity(start), pairwise_connectivity(final))


EmbedFn = Callable[[Graph], tuple[np.ndarray, np.ndarray]]
"""Maps a graph state to (alive node ids, final node embeddings row-aligned)."""


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def embedding_penalty(before: tuple[np.ndarray, np.ndarray], after: tuple[np.ndarray, np.ndarray], vital: set[int]) -> float:
    """1 - cos of mean embeddings over vital nodes alive in both states, clamped to [0, 1]."""
    ids_b, h_b = before
    ids_a, h_a = after
    survivors = sorted(vital.intersection(ids_a.tolist()).intersection(ids_b.tolist()))
    if not survivors:
        return 1.0
    rows_b = np.searchsorted(ids_b, survivors)
    rows_a = np.searchsorted(ids_a, survivors)
    cos = _cosine(h_b[rows_b].mean(axis=0), h_a[rows_a].mean(axis=0))
    return min(1.0, max(0.0, 1.0 - cos))


def rda_score(p_conn: float, p_delete: float, p_embed: float, weights: PenaltyWeights) -> float:
    value = 1.0 - (weights.w_conn * p_conn + weights.w_delete * p_delete + weights.w_embed * p_embed)
    return min(1.0, max(0.0, value))


def rda_true_return(
    start: Graph,
    final: Graph,
    vital: set[int] | frozenset[int],
    removed: set[int] | frozenset[int],
    weights: PenaltyWeights,
    embed: EmbedFn,
) -> float:
    """1 - (w1 * P_conn + w2 * P_delete + w3 * P_embed), clamped to [0, 1]."""
    vital = set(vital)
    if not vital:
        raise ValueError("RDA return needs a non-empty vital node set")
    p_conn = vda_true_return(start, final)
    p_delete = len(vital & set(removed)) / len(vital)
    p_embed = embedding_penalty(embed(start), embed(final), vital) if final.alive_count else 1.0
    return rda_score(p_conn, p_delete, p_embed, weights)


# --- predicted returns and affine alignment ---------------------------------


def _segment_sum_matrix(lengths: Sequence[int]) -> sp.csr_matrix:
    total = int(sum(lengths))
    owner = np.repeat(np.arange(len(lengths)), lengths)
    return sp.csr_matrix((np.ones(total), (owner, np.arange(total))), shape=(len(lengths), total))


def predicted_returns(
    graph_embeds: Sequence[np.ndarray], action_embeds: Sequence[np.ndarray], rn: RewardNetParams
) -> tuple[nn.Tensor, nn.Tensor]:
    """Per-trajectory summed step rewards (B x 1) and the stacked step rewards.

    Each entry of ``graph_embeds``/``action_embeds`` is a ``T_i x d`` array of
    pre-removal embeddings for one trajectory.
    """
    lengths = [len(g) for g in graph_embeds]
    width = rn.w2r.shape[0]
    if sum(lengths) == 0:
        return nn.const(np.zeros((len(lengths), 1))), nn.const(np.zeros((0, 1)))
    ge = np.vstack([np.asarray(g).reshape(-1, width) for g in graph_embeds])
    ae = np.vstack([np.asarray(a).reshape(-1, width) for a in action_embeds])
    steps = reward_step(nn.const(ge), nn.const(ae), rn)
    return nn.spmm(_segment_sum_matrix(lengths), steps), steps


def predicted_return(graph_embeds: np.ndarray, action_embeds: np.ndarray, rn: RewardNetParams) -> float:
    with nn.no_grad():
        totals, _ = predicted_returns([graph_embeds], [action_embeds], rn)
    return totals.item()


@dataclass
class AffineCalibrator:
    alpha: float = 1.0
    beta: float = 0.0
    frozen: bool = False
    fit_pairs: list[tuple[float, float]] = field(default_factory=list)
    fits: int = 0
    fitted_trajectories: int = 0
    freeze_tolerance: float = 0.01
    freeze_after: int = 100
    # fits on fewer pairs than this never count as settled
    settle_min_pairs: int = 10

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        return self.alpha * x + self.beta

    def refit(self, pairs: Sequence[tuple[float, float]]) -> bool:
        """Refit on fresh pairs unless frozen; freeze once the slope settles.

        Returns whether a fit happened.
        """
        if self.frozen:
            return False
        self.fit_pairs = list(pairs)
        previous = self.alpha if self.fits else None
        try:
            fit_affine(self)
        except CalibrationError:
            return False
        self.fits += 1
        self.fitted_trajectories = max(self.fitted_trajectories, len(pairs))
        settled = len(pairs) >= self.settle_min_pairs and previous is not None and abs(self.alpha - previous) < self.freeze_tolerance * abs(previous)
        if settled or self.fitted_trajectories >= self.freeze_after:
            self.frozen = True
        return True


def range_matching(pred: np.ndarray, true: np.ndarray) -> tuple[float, float]:
    """Map [min pred, max pred] onto [min true, max true]."""
    lo_p, hi_p = float(np.min(pred)), float(np.max(pred))
    lo_t, hi_t = float(np.min(true)), float(np.max(true))
    if hi_p == lo_p:
        raise CalibrationError("predicted returns are constant")
    alpha = max((hi_t - lo_t) / (hi_p - lo_p), 1e-6)
    return alpha, lo_t - alpha * lo_p


def fit_affine(cal: AffineCalibrator) -> tuple[float, float]:
    """Least-squares fit of true on predicted returns, kept strictly increasing.

    A frozen calibrator is returned untouched. A non-positive OLS slope falls
    back to range matching with the slope clamped to at least 1e-6.
    """
    if cal.frozen:
        return cal.alpha, cal.beta
    if not cal.fit_pairs:
        raise CalibrationError("no calibration pairs")
    pred = np.array([p for p, _ in cal.fit_pairs], dtype=float)
    true = np.array([t for _, t in cal.fit_pairs], dtype=float)
    if len(np.unique(pred)) < 2:
        raise CalibrationError("need at least two distinct predicted returns")
    pc = pred - pred.mean()
    spread = float(np.dot(pc, pc))
    if not spread > 0.0:
        raise CalibrationError("predicted returns have no spread")
    slope = float(np.dot(pc, true - true.mean()) / spread)
    if slope > 0:
        alpha, beta = slope, float(true.mean() - slope * pred.mean())
    else:
        alpha, beta = range_matching(pred, true)
    cal.alpha, cal.beta = alpha, beta
    return alpha, beta


def reward_net_loss(
    graph_embeds: Sequence[np.ndarray],
    action_embeds: Sequence[np.ndarray],
    true_returns: Sequence[float],
    cal: AffineCalibrator,
    rn: RewardNetParams,
) -> nn.Tensor:
    """Mean of (R_true - (alpha * R_pred + beta))^2; alpha and beta are constants."""
    if len(true_returns) == 0:
        raise ValueError("empty trajectory batch")
    totals, _ = predicted_returns(graph_embeds, action_embeds, rn)
    aligned = nn.affine(totals, cal.alpha, cal.beta)
    return nn.mse(aligned, np.asarray(true_returns, dtype=float).reshape(-1, 1))


# --- prototypes -------------------------------------------------------------


@dataclass
class PrototypePair:
    h_pos: np.ndarray
    h_neg: np.ndarray
    k: int
    window: int
    refresh_interval: int = 20


def critical_window(k_star: int, n: int) -> tuple[int, int]:
    """The ``[start, stop)`` pairs preceding the critical step.

    Short prefixes are used as-is; when the critical step is the first one
    the window holds just that pair.
    """
    if k_star <= 0:
        return 0, 1
    return max(0, k_star - n), k_star


@dataclass
class PrototypeSource:
    """What prototype mining needs from one trajectory."""

    true_return: float
    step_returns: np.ndarray  # length T
    graph_embeds: np.ndarray  # T x d
    action_embeds: np.ndarray  # T x d


def extract_prototypes(
    buffer: Sequence[PrototypeSource],
    k: int,
    n: int,
    proto: PrototypeEncoderParams,
    refresh_interval: int = 20,
    step_returns: Callable[[Any], np.ndarray] | None = None,
) -> PrototypePair:
    """Mean GRU window encodings for the top-k and bottom-k trajectories by true return.

    ``step_returns`` computes per-step true returns for an item; it is only
    called for the selected trajectories. By default the item's own
    ``step_returns`` attribute is used.
    """
    if step_returns is None:
        step_returns = lambda s: s.step_returns  # noqa: E731
    usable = [s for s in buffer if len(s.graph_embeds) > 0]
    if k < 1 or len(usable) < 2 * k:
        raise ValueError(f"need at least {2 * k} non-empty trajectories, have {len(usable)}")
    # stable sorts so ties keep buffer order
    order = sorted(range(len(usable)), key=lambda i: -usable[i].true_return)
    top = [usable[i] for i in order[:k]]
    bottom = [usable[i] for i in order[::-1][:k]]

    def encode(src: Any, positive: bool) -> np.ndarray:
        per_step = np.asarray(step_returns(src))
        k_star = int(np.argmax(per_step) if positive else np.argmin(per_step))
        return encode_windows(src.graph_embeds, src.action_embeds, [critical_window(k_star, n)], proto)[0]

    h_pos = np.mean([encode(s, True) for s in top], axis=0)
    h_neg = np.mean([encode(s, False) for s in bottom], axis=0)
    return PrototypePair(h_pos, h_neg, k, n, refresh_interval)


def prototype_target(window_embed: np.ndarray, protos: PrototypePair) -> float:
    diff = _cosine(window_embed, protos.h_pos) - _cosine(window_embed, protos.h_neg)
    return float(np.clip(diff, -1.0, 1.0))


def shaping_steps(length: int, n: int) -> list[int]:
    """Steps that receive a prototype target: those with at least n-1 preceding pairs."""
    return [t for t in range(max(1, n - 1), length)]


def prototype_targets(
    graph_embeds: np.ndarray, action_embeds: np.ndarray, protos: PrototypePair, proto: PrototypeEncoderParams
) -> tuple[list[int], np.ndarray]:
    steps = shaping_steps(len(graph_embeds), protos.window)
    if not steps:
        return [], np.zeros(0)
    windows = [(max(0, t - protos.window), t) for t in steps]
    encoded = encode_windows(graph_embeds, action_embeds, windows, proto)
    return steps, np.array([prototype_target(h, protos) for h in encoded])


def total_reward_loss(
    graph_embeds: Sequence[np.ndarray],
    action_embeds: Sequence[np.ndarray],
    true_returns: Sequence[float],
    cal: AffineCalibrator,
    rn: RewardNetParams,
    protos: PrototypePair | None,
    cfg: ShapingConfig,
    proto: PrototypeEncoderParams | None = None,
    targets: Sequence[tuple[list[int], np.ndarray]] | None = None,
    parts: dict[str, float] | None = None,
) -> nn.Tensor:
    """Trajectory regression loss plus ``lambda_proto`` times the prototype MSE.

    ``targets`` may carry precomputed ``(steps, values)`` per trajectory;
    otherwise they are derived from ``protos`` and the prototype encoder.
    If ``parts`` is given it receives the unweighted ``traj`` and ``proto``
    loss values.
    """
    if parts is None:
        parts = {}
    parts["proto"] = 0.0
    if len(true_returns) == 0:
        raise ValueError("empty trajectory batch")
    totals, steps = predicted_returns(graph_embeds, action_embeds, rn)
    loss = nn.mse(nn.affine(totals, cal.alpha, cal.beta), np.asarray(true_returns, dtype=float).reshape(-1, 1))
    parts["traj"] = loss.item()
    if protos is None or cfg.lambda_proto == 0.0:
        return loss
    if targets is None:
        if proto is None:
            raise ValueError("prototype encoder required to derive targets")
        targets = [prototype_targets(g, a, protos, proto) for g, a in zip(graph_embeds, action_embeds)]
    rows: list[int] = []
    values: list[float] = []
    offset = 0
    for g, (idx, vals) in zip(graph_embeds, targets):
        rows.extend(offset + t for t in idx)
        values.extend(np.asarray(vals).tolist())
        offset += len(g)
    if not rows:
        return loss
    proto_loss = nn.mse(nn.gather_rows(steps, np.array(rows)), np.array(values))
    parts["proto"] = proto_loss.item()
    return nn.add(loss, nn.affine(proto_loss, cfg.lambda_proto))
