"""Group-relative policy updates with a PID-controlled KL anchor.

Per prompt we sample a group of K rollouts, normalize rewards within the
group (zero-std groups contribute zero advantage), normalize advantages
again across the batch, then ascend

    sum_i A_i * grad log pi(tau_i)  -  beta * grad KL_step(pi || anchor)

under a global gradient-norm cap.  The measured post-update step KL feeds
the PID controller that retunes beta toward the corridor target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..policy.model import (EmaPolicy, PolicyParams, RolloutCaps, Trajectory,
                            sample_trajectory, softmax, step_kl, token_kl)
from ..policy.sft import clip_gradients
from ..world.clip import Clip
from ..world.teacher import Query
from .pid import PidState, pid_step
from .rewards import RewardContext, assemble_rewards

log = logging.getLogger(__name__)

ADV_EPS = 1e-8


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    lr: float = 0.15
    kl_target: float = 0.15
    grad_clip: float = 1.0
    caps: RolloutCaps = field(default_factory=RolloutCaps)
    batch_normalize_adv: bool = True


@dataclass
class GrpoStats:
    """Structured per-update log record."""

    step: int
    mean_reward: float
    group_means: list[float]
    group_stds: list[float]
    kl_measured: float
    beta: float
    grad_norm: float
    zero_std_groups: int
    accuracy: float


def logprob_grads(policy: PolicyParams, traj: Trajectory,
                  scale: float = 1.0) -> dict[str, np.ndarray]:
    """scale * grad_theta log pi(tau): every step factor, the terminal
    ANSWER factor and the answer-class factor."""
    ga = np.zeros_like(policy.action_w)
    gu = np.zeros_like(policy.answer_w)
    t = policy.temperature
    answer_idx = policy.action_w.shape[0] - 1
    for step in traj.steps:
        p = policy.action_dist(step.features)
        p[step.action_index] -= 1.0
        ga -= scale * np.outer(p, step.features) / t   # (onehot - p) outer phi
    p = policy.action_dist(traj.terminal_features)
    p[answer_idx] -= 1.0
    ga -= scale * np.outer(p, traj.terminal_features) / t
    q = policy.answer_dist(traj.answer_features)
    q[traj.answer] -= 1.0
    gu -= scale * np.outer(q, traj.answer_features) / t
    return {"action_w": ga, "answer_w": gu}


def kl_grad(policy: PolicyParams, anchor: PolicyParams,
            states: np.ndarray) -> np.ndarray:
    """grad wrt policy.action_w of mean_s KL(pi_s || anchor_s)."""
    states = np.atleast_2d(states)
    dz = _kl_dz(policy.action_w, anchor.action_w, states,
                policy.temperature, anchor.temperature)
    return dz.T @ states / (policy.temperature * states.shape[0])


def _kl_dz(wp: np.ndarray, wq: np.ndarray, states: np.ndarray,
           temp_p: float, temp_q: float) -> np.ndarray:
    zp = states @ wp.T / temp_p
    zq = states @ wq.T / temp_q
    lp = zp - _lse(zp)
    lq = zq - _lse(zq)
    p = np.exp(lp)
    diff = lp - lq
    kl_per = (p * diff).sum(axis=1, keepdims=True)
    return p * (diff - kl_per)


def token_kl_grads(policy: PolicyParams, anchor: PolicyParams,
                   action_states: np.ndarray,
                   answer_states: np.ndarray | None = None
                   ) -> dict[str, np.ndarray]:
    """Gradients of the token-level KL (actions plus answer tokens) wrt both
    policy heads."""
    action_states = np.atleast_2d(action_states)
    n = action_states.shape[0]
    have_answers = answer_states is not None and len(answer_states)
    if have_answers:
        answer_states = np.atleast_2d(answer_states)
        n += answer_states.shape[0]
    dz = _kl_dz(policy.action_w, anchor.action_w, action_states,
                policy.temperature, anchor.temperature)
    out = {"action_w": dz.T @ action_states / (policy.temperature * n),
           "answer_w": np.zeros_like(policy.answer_w)}
    if have_answers:
        dzy = _kl_dz(policy.answer_w, anchor.answer_w, answer_states,
                     policy.temperature, anchor.temperature)
        out["answer_w"] = dzy.T @ answer_states / (policy.temperature * n)
    return out


def _lse(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def group_advantages(rewards: np.ndarray, groups: np.ndarray,
                     eps: float = ADV_EPS) -> tuple[np.ndarray, list, list, int]:
    """Group-relative advantages (R - mean)/(std + eps) per prompt group;
    zero-std groups get zero advantages."""
    adv = np.zeros_like(rewards, dtype=float)
    means, stds, zero = [], [], 0
    for g in np.unique(groups):
        m = groups == g
        mu, sd = float(rewards[m].mean()), float(rewards[m].std())
        means.append(mu)
        stds.append(sd)
        if sd == 0.0:
            zero += 1
            log.info("grpo group %s has zero reward std; advantages zeroed", g)
            continue
        adv[m] = (rewards[m] - mu) / (sd + eps)
    return adv, means, stds, zero


def apply_policy_gradient(policy: PolicyParams, trajs: list[Trajectory],
                          advantages: np.ndarray, anchor: PolicyParams,
                          beta: float, lr: float, grad_clip: float,
                          kl_states: np.ndarray,
                          answer_states: np.ndarray | None = None) -> float:
    """One ascent step on the advantage-weighted log-prob minus the KL
    penalty; returns the pre-clip norm of the combined gradient.

    The advantage term is clipped on its own before the KL term joins, so
    the penalty weight keeps authority over the update direction no matter
    how large the raw policy-gradient estimate is.
    """
    n = max(1, len(trajs))
    adv_grads = {"action_w": np.zeros_like(policy.action_w),
                 "answer_w": np.zeros_like(policy.answer_w)}
    for traj, a in zip(trajs, advantages):
        if a == 0.0:
            continue
        g = logprob_grads(policy, traj, scale=a / n)
        adv_grads["action_w"] += g["action_w"]
        adv_grads["answer_w"] += g["answer_w"]
    # loss = -objective: descend on -(advantage term) + beta * KL
    adv_grads["action_w"] *= -1.0
    adv_grads["answer_w"] *= -1.0
    clip_gradients(adv_grads, grad_clip)
    grads = adv_grads
    if beta > 0:
        kg = token_kl_grads(policy, anchor, kl_states, answer_states)
        clip_gradients(kg, grad_clip)
        grads["action_w"] = grads["action_w"] + beta * kg["action_w"]
        grads["answer_w"] = grads["answer_w"] + beta * kg["answer_w"]
    norm = clip_gradients(grads, grad_clip)
    policy.action_w -= lr * grads["action_w"]
    policy.answer_w -= lr * grads["answer_w"]
    return norm


def grpo_update(policy: PolicyParams, anchor: PolicyParams,
                prompts: list[tuple[Clip, Query]], K: int, pid: PidState,
                cfg: GrpoConfig, ctx: RewardContext,
                rng: np.random.Generator, step: int = 0
                ) -> tuple[PolicyParams, PidState, GrpoStats]:
    """Sample K rollouts per prompt, update in place, retune beta.

    Returns the (mutated) policy, the advanced PID state and a structured
    stats record for corridor logging.
    """
    if K < 2:
        raise ValueError("group size K must be >= 2")
    trajs: list[Trajectory] = []
    groups: list[int] = []
    clips: dict[int, Clip] = {}
    for gi, (clip, query) in enumerate(prompts):
        clips[clip.seed] = clip
        for _ in range(K):
            trajs.append(sample_trajectory(policy, clip, query, cfg.caps, rng,
                                           ctx.spec))
            groups.append(gi)
    groups = np.asarray(groups)

    rewards, parts = assemble_rewards(trajs, clips, ctx, rng)
    adv, means, stds, zero = group_advantages(rewards, groups)
    if cfg.batch_normalize_adv and adv.std() > 0:
        adv = (adv - adv.mean()) / adv.std()

    states = np.concatenate([t.state_matrix() for t in trajs])
    answer_states = np.stack([t.answer_features for t in trajs])
    beta = pid.beta
    norm = apply_policy_gradient(policy, trajs, adv, anchor, beta, cfg.lr,
                                 cfg.grad_clip, states, answer_states)
    kl_measured = token_kl(policy, anchor, states, answer_states)
    pid, _ = pid_step(pid, kl_measured, cfg.kl_target)

    stats = GrpoStats(step=step, mean_reward=float(rewards.mean()),
                      group_means=means, group_stds=stds,
                      kl_measured=float(kl_measured), beta=float(pid.beta),
                      grad_norm=float(norm), zero_std_groups=zero,
                      accuracy=float(parts["correct"].mean()))
    return policy, pid, stats
