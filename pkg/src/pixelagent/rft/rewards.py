"""Trajectory reward assembly: answer sign, curiosity, coherence, penalty.

R = w1*R_final + w2*R_cur + w3*R_coh - w4*Pen with R_final in {+1, -1}.
Curiosity sums are z-scored across the update batch (per-trajectory sums by
default; a config switch z-scores per step instead).  Coherence is already
standardized by frozen dev stats and enters as-is.  The penalty charges
alpha_inv per invalid action and alpha_len per decisive step beyond L0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..percept.dynamics import DynamicsConfig, DynamicsHead, curiosity_batch
from ..percept.embed import Projector, embed_trajectory, tool_features, visual_summary
from ..percept.zstats import ZStats, coherence_reward
from ..policy.features import FeatureSpec
from ..policy.model import Trajectory
from ..world.clip import Clip
from ..world.tools import TEMP


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 1.0
    w2: float = 0.3
    w3: float = 0.3
    w4: float = 1.0
    L0: int = 6
    alpha_len: float = 0.02
    alpha_inv: float = 0.30

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.alpha_len < 0 or self.alpha_inv < 0:
            raise ValueError("penalty rates must be non-negative")


def pen(traj: Trajectory, alpha_inv: float = 0.30, alpha_len: float = 0.02,
        L0: int = 6) -> float:
    """alpha_inv * #invalid actions + alpha_len * max(0, |tau| - L0), where
    |tau| counts decisive steps."""
    return (alpha_inv * traj.n_invalid
            + alpha_len * max(0, traj.decisive_count - L0))


def trajectory_reward(correct: bool, r_cur: float, r_coh: float,
                      penalty: float, w: RewardWeights) -> float:
    r_final = 1.0 if correct else -1.0
    return w.w1 * r_final + w.w2 * r_cur + w.w3 * r_coh - w.w4 * penalty


def argument_vector(call, cfg) -> np.ndarray:
    """Normalized 2-vector of a call's argument, for the smoothness prior."""
    if call.op == TEMP:
        return np.array([call.arg / cfg.frames, 0.0])
    bx, by, bw, bh = cfg.bin_rect(call.arg)
    return np.array([(bx + bw / 2) / cfg.width, (by + bh / 2) / cfg.height])


def l2_smoothness(traj: Trajectory, cfg) -> float:
    """Baseline structure prior: negative mean squared jump between
    consecutive argument vectors (ablation alternative to coherence)."""
    if len(traj.steps) < 2:
        return 0.0
    args = [argument_vector(s.call, cfg) for s in traj.steps]
    diffs = [float(((a - b) ** 2).sum()) for a, b in zip(args[1:], args[:-1])]
    return -float(np.mean(diffs))


@dataclass
class RewardContext:
    """Everything needed to turn rollouts into scalar rewards."""

    spec: FeatureSpec
    projector: Projector
    dyn_head: DynamicsHead | None
    dyn_cfg: DynamicsConfig
    zstats: ZStats
    weights: RewardWeights
    coherence_mode: str = "adjacency"   # "adjacency" | "l2" | "off"
    curiosity_on: bool = True
    zscore_per_step: bool = False

    def coherence(self, traj: Trajectory, clip: Clip) -> float:
        if self.coherence_mode == "off":
            return 0.0
        if self.coherence_mode == "l2":
            return l2_smoothness(traj, clip.config)
        embs = embed_trajectory(traj, clip, self.projector, self.spec)
        return coherence_reward(embs, self.zstats, traj.query.kind)

    def step_curiosities(self, trajs: list[Trajectory],
                         clips: dict[int, Clip],
                         rng: np.random.Generator) -> list[np.ndarray]:
        """Gated per-step curiosity for every trajectory, one shared batch
        percentile clip."""
        if not self.curiosity_on or self.dyn_head is None:
            return [np.zeros(max(0, len(t.steps) - 1)) for t in trajs]
        X, V, owners = [], [], []
        A = self.spec.alphabet.size
        for ti, traj in enumerate(trajs):
            clip = clips[traj.clip_seed]
            vs = [visual_summary(clip, s.obs.footprint) for s in traj.steps]
            for t in range(len(traj.steps) - 1):
                step = traj.steps[t]
                onehot = np.zeros(A)
                onehot[step.action_index] = 1.0
                xt = self.projector.project_tool(
                    tool_features(step.obs, clip.config))
                X.append(np.concatenate([vs[t], xt, onehot]))
                V.append(vs[t + 1])
                owners.append(ti)
        if not X:
            return [np.zeros(0) for _ in trajs]
        rewards = curiosity_batch(self.dyn_head, np.stack(X), np.stack(V), rng,
                                  self.dyn_cfg)
        out = [np.zeros(0)] * len(trajs)
        owners = np.asarray(owners)
        for ti in range(len(trajs)):
            out[ti] = rewards[owners == ti]
        return out


def assemble_rewards(trajs: list[Trajectory], clips: dict[int, Clip],
                     ctx: RewardContext, rng: np.random.Generator
                     ) -> tuple[np.ndarray, dict]:
    """Batch rewards for an update; returns (rewards, component log)."""
    cur_steps = ctx.step_curiosities(trajs, clips, rng)
    if ctx.zscore_per_step:
        flat = np.concatenate([c for c in cur_steps]) if cur_steps else np.zeros(0)
        mu = float(flat.mean()) if flat.size else 0.0
        sd = float(flat.std()) if flat.size else 0.0
        z = [(c - mu) / sd if sd > 0 else np.zeros_like(c) for c in cur_steps]
        cur = np.array([float(c.sum()) for c in z])
    else:
        sums = np.array([float(c.sum()) for c in cur_steps])
        sd = float(sums.std())
        cur = (sums - sums.mean()) / sd if sd > 0 else np.zeros_like(sums)

    coh = np.array([ctx.coherence(t, clips[t.clip_seed]) for t in trajs])
    pens = np.array([pen(t, ctx.weights.alpha_inv, ctx.weights.alpha_len,
                         ctx.weights.L0) for t in trajs])
    correct = np.array([t.answer == t.query.answer for t in trajs])
    rewards = np.array([
        trajectory_reward(c, rc, rh, pv, ctx.weights)
        for c, rc, rh, pv in zip(correct, cur, coh, pens)
    ])
    parts = {
        "correct": correct, "cur": cur, "coh": coh, "pen": pens,
        "cur_raw_sums": np.array([float(c.sum()) for c in cur_steps]),
    }
    return rewards, parts
