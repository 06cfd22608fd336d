"""Safe test-time reinforcement learning over a query stream.

Each step: retrieve a neighborhood, sample N rollouts, drop near-duplicate
rollouts (stepwise footprint IoU above 0.85), weight ballots by entropy,
calibrated confidence, visual fidelity and annotator reliability, vote
with conformal abstention, pick a short high-fidelity exemplar, and apply
the masked advantage update

    grad = -m(q) * mean_j  v_bar * (r_j - b) * grad log pi(tau_j)
           + beta * grad KL_step(pi || pi_EMA)

with r_j = 1{ans = consensus} + kappa * Sim_behav - lambda_pen * Pen.
Neighborhood values and the baseline are EMAs outside the gradient path;
abstained queries exercise only the KL/EMA terms.  The PID controller
keeps the measured step KL inside the corridor.

Variants: "weighted" (full machinery), "hard_majority" (uniform weights,
never abstains) and "no_safety" (beta identically 0 and a frozen anchor).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from ..consensus.calibrate import Calibrator
from ..consensus.dawid_skene import ds_em
from ..consensus.voting import (ConformalConfig, ConsensusResult,
                                RolloutBallot, hard_majority, select_exemplar,
                                weighted_consensus)
from ..index.ivfpq import IvfPqIndex
from ..index.keys import KeyBuilder
from ..metrics.align import sim_behav
from ..metrics.fidelity import ReferenceStep, reference_steps, visfid
from ..percept.dynamics import DynamicsConfig, DynamicsHead
from ..percept.embed import Projector, embed_trajectory
from ..percept.zstats import ZStats, coherence_reward
from ..policy.features import FeatureSpec
from ..policy.model import (EmaPolicy, PolicyParams, RolloutCaps, Trajectory,
                            sample_trajectory, token_kl)
from ..policy.sft import clip_gradients
from ..rft.grpo import logprob_grads, token_kl_grads
from ..rft.pid import PidState, pid_step
from ..rft.rewards import RewardContext, pen
from ..world.clip import Clip
from ..world.teacher import Query, TeacherTrace
from ..world.tools import footprint_iou

log = logging.getLogger(__name__)

VARIANTS = ("weighted", "hard_majority", "no_safety")


@dataclass(frozen=True)
class TtrlConfig:
    n_rollouts: int = 8
    neighborhood_k: int = 8
    kappa: float = 0.5
    lambda_pen: float = 1.0
    delta: float = 0.08
    corridor: tuple[float, float] = (0.10, 0.20)
    kl_target: float = 0.15
    rho: float = 0.99
    dedup_iou: float = 0.85
    grad_clip: float = 1.0
    lr: float = 0.8
    rollout_temp: float = 0.7
    eta: float = 1.0
    xi: float = 1.0
    value_decay: float = 0.9
    lambda_pix: float = 0.5
    variant: str = "weighted"
    advantage_form: str = "baseline"     # "baseline" (r - b) or "plain" (r)
    adversarial_flip: float = 0.0
    ds_refit_every: int = 16
    ds_window: int = 64
    alpha_inv: float = 0.30
    alpha_len: float = 0.02
    L0: int = 6
    caps: RolloutCaps = field(default_factory=RolloutCaps)

    def __post_init__(self):
        lo, hi = self.corridor
        if not lo < self.kl_target < hi:
            raise ValueError("corridor must bracket the KL target")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class Neighborhood:
    query_key: np.ndarray
    ids: list[int]
    similarities: list[float]
    values: list[float]
    baseline: float

    @property
    def mean_value(self) -> float:
        return float(np.mean(self.values)) if self.values else 1.0


@dataclass
class CorpusItem:
    """One retrievable exemplar: clip, query, an accepted trace, its key."""

    item_id: int
    clip: Clip
    query: Query
    references: list[ReferenceStep]
    value: float = 1.0


@dataclass
class TtrlRuntime:
    """Mutable state shared across the online run (the index handle)."""

    spec: FeatureSpec
    index: IvfPqIndex | None
    corpus: dict[int, CorpusItem]
    key_builder: KeyBuilder
    calibrator: Calibrator
    projector: Projector          # coherence embeddings
    dyn_head: DynamicsHead | None
    dyn_cfg: DynamicsConfig
    zstats: ZStats
    conformal: ConformalConfig = field(default_factory=ConformalConfig)
    encoder: Projector | None = None        # frozen external evaluation encoder
    zstats_ext: ZStats | None = None
    probe_states: np.ndarray | None = None  # fixed batch for drift measurement
    probe_answer_states: np.ndarray | None = None
    baseline: float = 1.0
    reliabilities: np.ndarray | None = None
    ballot_history: list[list[int]] = field(default_factory=list)
    value_mu: float = 0.0
    value_var: float = 1.0
    value_count: int = 0

    def reward_ctx(self, cfg: TtrlConfig) -> RewardContext:
        from ..rft.rewards import RewardWeights
        return RewardContext(
            spec=self.spec, projector=self.projector, dyn_head=self.dyn_head,
            dyn_cfg=self.dyn_cfg, zstats=self.zstats,
            weights=RewardWeights(alpha_inv=cfg.alpha_inv,
                                  alpha_len=cfg.alpha_len, L0=cfg.L0))


@dataclass
class StepReport:
    step: int
    query_digest: str
    clip_seed: int
    seed: int
    neighbor_ids: list[int]
    retained_slots: list[int]
    answers: list[int]
    entropies: list[float]
    calibrated: list[float]
    visfids: list[float]
    reliabilities: list[float]
    weights: list[float]
    consensus_answer: int
    margin: float
    conformal_size: int
    mask: int
    exemplar_slot: int | None
    rewards: list[float]
    mean_value: float
    baseline: float
    kl_measured: float
    beta: float
    grad_norm: float
    correct: bool
    decisive_len: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def query_digest(clip_seed: int, query: Query) -> str:
    payload = json.dumps({"clip": clip_seed, **asdict(query)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def rollout_similarity(a: Trajectory, b: Trajectory) -> float:
    """Mean stepwise footprint IoU over aligned step indices."""
    n = min(len(a.steps), len(b.steps))
    if n == 0:
        return 1.0 if len(a.steps) == len(b.steps) else 0.0
    ious = [footprint_iou(a.steps[t].obs.footprint, b.steps[t].obs.footprint)
            for t in range(n)]
    return float(np.mean(ious))


def dedup_rollouts(trajs: list[Trajectory], iou_max: float
                   ) -> list[int]:
    """Greedy keep-first filter; no retained pair exceeds the IoU bound."""
    retained: list[int] = []
    for j, traj in enumerate(trajs):
        if all(rollout_similarity(traj, trajs[r]) <= iou_max for r in retained):
            retained.append(j)
    return retained


def retrieve(runtime: TtrlRuntime, clip: Clip, query: Query,
             cfg: TtrlConfig) -> Neighborhood:
    key = runtime.key_builder.build(clip, query, [], source_id=-1)
    if runtime.index is None or runtime.index.size == 0:
        log.info("empty index; neighborhood value defaults to neutral 1.0")
        return Neighborhood(query_key=key.vector, ids=[], similarities=[],
                            values=[], baseline=runtime.baseline)
    hits = runtime.index.search(key.vector, cfg.lambda_pix,
                                k=cfg.neighborhood_k)
    ids = [h[0] for h in hits]
    return Neighborhood(
        query_key=key.vector, ids=ids, similarities=[h[1] for h in hits],
        values=[runtime.corpus[i].value for i in ids if i in runtime.corpus],
        baseline=runtime.baseline)


def _flip_answer(answer: int, n_classes: int, rng: np.random.Generator) -> int:
    alt = int(rng.integers(0, n_classes - 1))
    return alt if alt < answer else alt + 1


def ttrl_step(policy: PolicyParams, ema: EmaPolicy, clip: Clip, query: Query,
              runtime: TtrlRuntime, cfg: TtrlConfig, pid: PidState,
              rng: np.random.Generator, step: int = 0
              ) -> tuple[PolicyParams, EmaPolicy, PidState, StepReport]:
    """One online adaptation step; returns updated policy/EMA/PID plus a
    replayable report."""
    seed_draw = int(rng.integers(0, 2**31 - 1))
    local = np.random.default_rng(seed_draw)

    hood = retrieve(runtime, clip, query, cfg)
    sampler = PolicyParams(action_w=policy.action_w, answer_w=policy.answer_w,
                           temperature=cfg.rollout_temp)
    trajs = [sample_trajectory(sampler, clip, query, cfg.caps, local,
                               runtime.spec) for _ in range(cfg.n_rollouts)]
    # every ballot votes; the near-duplicate filter applies to the gradient
    # batch so repeated trajectories are not double-counted in the update
    retained = dedup_rollouts(trajs, cfg.dedup_iou)

    n_classes = policy.answer_w.shape[0]
    answers_all = [t.answer for t in trajs]
    if cfg.adversarial_flip > 0:
        answers_all = [
            _flip_answer(a, n_classes, local) if local.random() < cfg.adversarial_flip else a
            for a in answers_all]

    # slot reliabilities from recent history (rollout slot = annotator)
    runtime.ballot_history.append(list(answers_all))
    if len(runtime.ballot_history) > cfg.ds_window:
        runtime.ballot_history = runtime.ballot_history[-cfg.ds_window:]
    if (len(runtime.ballot_history) >= 8
            and step % cfg.ds_refit_every == 0
            and cfg.variant == "weighted"):
        try:
            _, rel = ds_em(np.asarray(runtime.ballot_history, dtype=int),
                           n_classes)
            runtime.reliabilities = np.clip(rel, 1e-3, 1.0)
        except ValueError as exc:
            log.warning("ds refit skipped: %s", exc)
    rel = (runtime.reliabilities if runtime.reliabilities is not None
           else np.ones(cfg.n_rollouts))

    ctx = runtime.reward_ctx(cfg)
    neighbor_refs = [r for nid in hood.ids if nid in runtime.corpus
                     for r in runtime.corpus[nid].references]
    cur_steps = ctx.step_curiosities(trajs, {clip.seed: clip}, local)
    embs = [embed_trajectory(t, clip, runtime.projector, runtime.spec)
            for t in trajs]
    cohs = [coherence_reward(e, runtime.zstats, query.kind) for e in embs]
    cur_coh = [float(c.sum()) + h for c, h in zip(cur_steps, cohs)]

    visfids = []
    for i, traj in enumerate(trajs):
        refs = neighbor_refs + [r for k, other in enumerate(trajs) if k != i
                                for r in reference_steps([other])]
        visfids.append(visfid(traj, refs))

    ballots = []
    for j, traj in enumerate(trajs):
        cal = runtime.calibrator.confidence(
            policy.answer_logits(traj.answer_features), traj.answer)
        ballots.append(RolloutBallot(
            answer=answers_all[j], entropy=traj.decisive_entropy,
            calibrated=cal, visfid=visfids[j],
            reliability=float(rel[j]) if j < len(rel) else 1.0))

    if cfg.variant == "hard_majority":
        result = hard_majority(ballots)
    else:
        result = weighted_consensus(ballots, cfg.delta, runtime.conformal,
                                    n_classes=n_classes)

    success_idx = [j for j, b in enumerate(ballots) if b.answer == result.answer]
    exemplar_local = select_exemplar(
        [trajs[j].decisive_count for j in success_idx],
        [cur_coh[j] for j in success_idx],
        [visfids[j] for j in success_idx],
        eta=cfg.eta, xi=cfg.xi)
    if exemplar_local is None:
        result.abstain = True  # empty successful set forces abstention
        exemplar_idx = None
    else:
        exemplar_idx = success_idx[exemplar_local]
    result.exemplar_index = exemplar_idx

    mask = result.mask
    v_bar = hood.mean_value if hood.ids else 1.0
    b_q = runtime.baseline

    kept = [trajs[j] for j in retained]
    rewards = []
    if exemplar_idx is not None:
        star = trajs[exemplar_idx]
        for j in retained:
            traj = trajs[j]
            agree = 1.0 if ballots[j].answer == result.answer else 0.0
            sim = sim_behav(traj, star) if traj.steps and star.steps else \
                (1.0 if not traj.steps and not star.steps else 0.0)
            penalty = pen(traj, cfg.alpha_inv, cfg.alpha_len, cfg.L0)
            rewards.append(agree + cfg.kappa * sim - cfg.lambda_pen * penalty)
    else:
        rewards = [0.0] * len(kept)

    states = np.concatenate([t.state_matrix() for t in kept])
    answer_states = np.stack([t.answer_features for t in kept])
    grads = {"action_w": np.zeros_like(policy.action_w),
             "answer_w": np.zeros_like(policy.answer_w)}
    if mask == 1:
        advs = np.array([
            v_bar * ((r - b_q) if cfg.advantage_form == "baseline" else r)
            for r in rewards])
        # within-batch scale normalization: shrink oversized batches, never
        # amplify near-zero ones (that would blow noise up to full-strength
        # sign-flipping updates)
        scale = float(np.abs(advs).mean())
        if scale > 1.0:
            advs = advs / scale
        n = len(kept)
        for traj, adv in zip(kept, advs):
            if adv == 0.0:
                continue
            g = logprob_grads(policy, traj, scale=adv / n)
            grads["action_w"] -= g["action_w"]
            grads["answer_w"] -= g["answer_w"]
        clip_gradients(grads, cfg.grad_clip)
    pull_states, pull_answers = states, answer_states
    if runtime.probe_states is not None:
        pull_states = np.concatenate([states, runtime.probe_states])
        pull_answers = np.concatenate([answer_states,
                                       runtime.probe_answer_states])
    beta = 0.0 if cfg.variant == "no_safety" else pid.beta
    if beta > 0:
        # the pull term is clipped on its own before beta scales it, so the
        # controller mixes push and pull smoothly over beta's whole range
        kg = token_kl_grads(policy, ema.shadow, pull_states, pull_answers)
        clip_gradients(kg, cfg.grad_clip)
        grads["action_w"] = grads["action_w"] + beta * kg["action_w"]
        grads["answer_w"] = grads["answer_w"] + beta * kg["answer_w"]
    norm = clip_gradients(grads, cfg.grad_clip)
    policy.action_w -= cfg.lr * grads["action_w"]
    policy.answer_w -= cfg.lr * grads["answer_w"]

    # drift is measured on a frozen probe batch so the corridor tracks the
    # policy's distance to the anchor, not per-query state variation
    if runtime.probe_states is not None:
        kl_measured = token_kl(policy, ema.shadow, runtime.probe_states,
                               runtime.probe_answer_states)
    else:
        kl_measured = token_kl(policy, ema.shadow, states, answer_states)
    if cfg.variant != "no_safety":
        ema.update(policy)
        pid, _ = pid_step(pid, kl_measured, cfg.kl_target)

    if mask == 1 and exemplar_idx is not None:
        _update_values(runtime, hood, cur_coh[exemplar_idx], cfg)

    report = StepReport(
        step=step, query_digest=query_digest(clip.seed, query),
        clip_seed=clip.seed, seed=seed_draw, neighbor_ids=hood.ids,
        retained_slots=retained, answers=[b.answer for b in ballots],
        entropies=[b.entropy for b in ballots],
        calibrated=[b.calibrated for b in ballots], visfids=visfids,
        reliabilities=[b.reliability for b in ballots],
        weights=[b.weight for b in ballots],
        consensus_answer=result.answer, margin=result.margin,
        conformal_size=len(result.conformal_set), mask=mask,
        exemplar_slot=exemplar_idx,
        rewards=rewards, mean_value=v_bar, baseline=b_q,
        kl_measured=float(kl_measured), beta=float(beta),
        grad_norm=float(norm), correct=result.answer == query.answer,
        decisive_len=float(np.mean([t.decisive_count for t in kept])))
    return policy, ema, pid, report


def neighborhood_value_update(values: dict[int, float], ids: list[int],
                              summary: float, decay: float) -> dict[int, float]:
    """v(h) <- decay * v(h) + (1 - decay) * summary for each neighbor."""
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must lie in (0, 1]")
    for h in ids:
        values[h] = decay * values.get(h, 1.0) + (1.0 - decay) * summary
    return values


def _update_values(runtime: TtrlRuntime, hood: Neighborhood,
                   raw_summary: float, cfg: TtrlConfig) -> None:
    # standardize the curiosity+coherence summary online, center at the
    # multiplicative identity so empty neighborhoods stay neutral
    runtime.value_count += 1
    delta = raw_summary - runtime.value_mu
    runtime.value_mu += delta / runtime.value_count
    runtime.value_var += delta * (raw_summary - runtime.value_mu)
    sd = np.sqrt(runtime.value_var / max(1, runtime.value_count - 1)) \
        if runtime.value_count > 1 else 1.0
    z = (raw_summary - runtime.value_mu) / max(sd, 1e-6)
    summary = 1.0 + 0.5 * float(np.tanh(z))
    values = {h: runtime.corpus[h].value for h in hood.ids
              if h in runtime.corpus}
    neighborhood_value_update(values, list(values), summary, cfg.value_decay)
    for h, v in values.items():
        runtime.corpus[h].value = v
    runtime.baseline = (cfg.value_decay * runtime.baseline
                        + (1.0 - cfg.value_decay) * hood.mean_value)
