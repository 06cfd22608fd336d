"""Online-run driver: runtime assembly, budgeted adaptation, reporting.

``build_runtime`` wires the retrieval index, calibrator, conformal
threshold, dev-fit standardization stats and the frozen curiosity head from
the imitation phase's outputs.  ``run_online`` drives the per-query step
under an update budget and reports pre/post probe accuracy, acceptance and
abstention rates, KL percentiles and process metrics, writing a replayable
JSONL step log.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..consensus.calibrate import Calibrator, fit_temperature
from ..consensus.voting import ConformalConfig, RolloutBallot, fit_conformal, normalize_weights
from ..index.ivfpq import IndexConfig, IvfPqIndex
from ..index.keys import KeyBuilder, KeyConfig
from ..metrics.fidelity import reference_steps, visfid
from ..metrics.process import RcprConfig, racpr_from_trajectory, rapr
from ..percept.dynamics import (DynamicsConfig, DynamicsHead,
                                dynamics_transitions, train_dynamics)
from ..percept.embed import Projector, adjacent_cosines, embed_trajectory
from ..percept.zstats import ZStats
from ..policy.features import FeatureSpec
from ..policy.model import (EmaPolicy, PolicyParams, RolloutCaps,
                            sample_trajectory, step_kl, token_kl)
from ..rft.pid import PidState
from ..world.clip import Clip, generate_clip
from ..world.config import WorldConfig
from ..world.teacher import Query, TeacherTrace, make_queries
from ..world.tools import Observation
from ..world.verify import verify_step
from .loop import (CorpusItem, StepReport, TtrlConfig, TtrlRuntime, ttrl_step)

log = logging.getLogger(__name__)

COHERENCE_SEED = 0xC0
EXTERNAL_SEED = 0xE7


@dataclass
class RunReport:
    variant: str
    budget: int
    processed: int
    accepted: int
    abstained: int
    pre_accuracy: float
    post_accuracy: float
    kl_p50: float
    kl_p95: float
    corridor_frac: float
    terminal_kl_to_init: float
    pre_rapr: float
    post_rapr: float
    pre_racpr: float
    post_racpr: float
    mean_decisive_len: float
    wall_seconds: float
    step_log: str | None = None

    @property
    def accepted_per_1k(self) -> float:
        return 1000.0 * self.accepted / max(1, self.processed)

    def to_json(self) -> str:
        d = asdict(self)
        d["accepted_per_1k"] = self.accepted_per_1k
        return json.dumps(d, sort_keys=True)


def trace_references(trace: TeacherTrace) -> list:
    from ..metrics.fidelity import ReferenceStep
    refs = []
    for (call, obs), dec in zip(trace.steps, trace.decisive):
        if obs.success and dec:
            payload = obs.payload if isinstance(obs.payload, dict) else None
            refs.append(ReferenceStep(op=call.op, footprint=obs.footprint,
                                      payload=payload))
    return refs


def build_runtime(pool: list[tuple[Clip, TeacherTrace]], policy: PolicyParams,
                  spec: FeatureSpec, caps: RolloutCaps,
                  index_cfg: IndexConfig | None = None,
                  dyn_cfg: DynamicsConfig | None = None,
                  whitelist_seeds: set[int] | None = None,
                  seed: int = 0, dev_queries: int = 32,
                  rollout_temp: float = 0.7,
                  train_dyn: bool = True) -> TtrlRuntime:
    """Assemble the online runtime from an accepted pool and a trained
    policy.

    Fits the temperature calibrator and conformal threshold on dev rollouts,
    fits per-family cosine stats, trains the dynamics head on policy
    rollouts, ingests corpus keys into the quantized index, and installs
    the evaluation whitelist.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x77)))
    index_cfg = index_cfg or IndexConfig()
    dyn_cfg = dyn_cfg or DynamicsConfig(seed=seed)
    whitelist_seeds = whitelist_seeds or set()

    projector = Projector.create(spec, COHERENCE_SEED)
    encoder = Projector.create(spec, EXTERNAL_SEED)
    key_builder = KeyBuilder(encoder, KeyConfig(d_txt=index_cfg.d_txt,
                                                d_pix=index_cfg.d_pix,
                                                seed=index_cfg.seed))

    # dev rollouts under the trained policy feed every fitted statistic
    clips = {}
    for clip, _ in pool:
        clips.setdefault(clip.seed, clip)
    dev_items = []
    clip_list = list(clips.values())
    for i in range(dev_queries):
        clip = clip_list[i % len(clip_list)]
        qs = make_queries(clip, rng, 1)
        dev_items.append((clip, qs[0]))

    sampler = PolicyParams(action_w=policy.action_w, answer_w=policy.answer_w,
                           temperature=rollout_temp)
    dev_trajs = []
    for clip, query in dev_items:
        for _ in range(4):
            dev_trajs.append(sample_trajectory(sampler, clip, query, caps, rng,
                                               spec))

    # calibrate on raw answer logits against ground truth
    raw_logits = np.stack([policy.answer_logits(t.answer_features)
                           for t in dev_trajs])
    labels = np.asarray([t.query.answer for t in dev_trajs])
    try:
        calibrator = fit_temperature(raw_logits, labels)
    except Exception as exc:
        log.warning("temperature fit failed (%s); using identity", exc)
        calibrator = Calibrator()

    cos_by_family: dict[str, list] = {}
    cos_by_family_ext: dict[str, list] = {}
    for traj in dev_trajs:
        clip = clips[traj.clip_seed]
        for proj, store in ((projector, cos_by_family),
                            (encoder, cos_by_family_ext)):
            embs = embed_trajectory(traj, clip, proj, spec)
            cos = adjacent_cosines(embs)
            if cos.size:
                store.setdefault(traj.query.kind, []).extend(cos)
    def _fit(store):
        usable = {k: np.asarray(v) for k, v in store.items() if len(v) >= 2}
        if not usable:
            return ZStats()
        return ZStats.fit(usable)
    zstats = _fit(cos_by_family)
    zstats_ext = _fit(cos_by_family_ext)

    dyn_head = None
    if train_dyn:
        X, V, R = dynamics_transitions(dev_trajs, clips, projector, spec)
        if len(X) >= 8:
            dyn_head = train_dynamics((X, V, R), dyn_cfg)
        else:
            log.warning("too few transitions (%d) to train dynamics head", len(X))

    # conformal threshold from dev-cal voting score vectors
    score_pairs = []
    n_classes = policy.answer_w.shape[0]
    for clip, query in dev_items:
        group = [sample_trajectory(sampler, clip, query, caps, rng, spec)
                 for _ in range(8)]
        ballots = []
        for traj in group:
            cal = calibrator.confidence(policy.answer_logits(traj.answer_features),
                                        traj.answer)
            refs = [r for other in group if other is not traj
                    for r in reference_steps([other])]
            ballots.append(RolloutBallot(answer=traj.answer,
                                         entropy=traj.decisive_entropy,
                                         calibrated=cal,
                                         visfid=visfid(traj, refs)))
        normalize_weights(ballots)
        scores = np.zeros(n_classes)
        for b in ballots:
            scores[b.answer] += b.weight
        score_pairs.append((scores, query.answer))
    conformal = fit_conformal(score_pairs)

    # corpus + index over accepted traces; whitelist masks eval media
    corpus: dict[int, CorpusItem] = {}
    keys = []
    whitelisted_ids = set()
    for item_id, (clip, trace) in enumerate(pool):
        outputs = [obs for _, obs in trace.steps]
        key = key_builder.build(clip, trace.query, outputs, source_id=item_id)
        if clip.seed in whitelist_seeds:
            whitelisted_ids.add(item_id)
        keys.append(key)
        corpus[item_id] = CorpusItem(item_id=item_id, clip=clip,
                                     query=trace.query,
                                     references=trace_references(trace))
    index = IvfPqIndex.build(keys, index_cfg, whitelist=whitelisted_ids) \
        if keys else None
    for wid in whitelisted_ids:
        corpus.pop(wid, None)

    probe_rows = np.concatenate([t.state_matrix() for t in dev_trajs[:24]])
    probe_answers = np.stack([t.answer_features for t in dev_trajs[:24]])
    return TtrlRuntime(spec=spec, index=index, corpus=corpus,
                       key_builder=key_builder, calibrator=calibrator,
                       projector=projector, dyn_head=dyn_head,
                       dyn_cfg=dyn_cfg, zstats=zstats, conformal=conformal,
                       encoder=encoder, zstats_ext=zstats_ext,
                       probe_states=probe_rows,
                       probe_answer_states=probe_answers)


def make_shifted_stream(base_cfg: WorldConfig, n: int, seed: int,
                        brightness_shift: int = 2,
                        velocity_shift: float = 1.5,
                        clip_seed_base: int = 10_000
                        ) -> list[tuple[Clip, Query]]:
    """Query stream over distribution-shifted clips (lighting and motion
    knobs), disjoint from training clip seeds."""
    from dataclasses import replace

    cfg = replace(base_cfg, brightness_shift=brightness_shift,
                  velocity_shift=velocity_shift)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5F)))
    items = []
    i = 0
    while len(items) < n:
        clip = generate_clip(cfg, clip_seed_base + seed * 1_000_000 + i)
        i += 1
        try:
            queries = make_queries(clip, rng, min(4, n - len(items)))
        except Exception:
            continue
        items.extend((clip, q) for q in queries)
    return items[:n]


def probe_accuracy(policy: PolicyParams, probe: list[tuple[Clip, Query]],
                   caps: RolloutCaps, spec: FeatureSpec, seed: int = 0
                   ) -> tuple[float, list]:
    """Greedy-decoding accuracy on a frozen probe set; the seeded rng only
    drives tool noise so pre/post evaluations see identical draws."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xAC)))
    trajs = []
    correct = 0
    for clip, query in probe:
        traj = sample_trajectory(policy, clip, query, caps, rng, spec,
                                 greedy=True)
        trajs.append(traj)
        correct += int(traj.answer == query.answer)
    return correct / max(1, len(probe)), trajs


def _process_metrics(trajs, clips: dict[int, Clip], runtime: TtrlRuntime,
                     rcpr_cfg: RcprConfig) -> tuple[float, float]:
    raprs, racprs = [], []
    encoder = runtime.encoder or runtime.projector
    zstats_ext = runtime.zstats_ext or runtime.zstats
    for traj in trajs:
        clip = clips[traj.clip_seed]
        bits = [1.0 if verify_step(s.obs, clip)[0] else 0.0 for s in traj.steps]
        raprs.append(rapr(np.asarray(bits)))
        racprs.append(racpr_from_trajectory(traj, clip, encoder, zstats_ext,
                                            runtime.spec, rcpr_cfg))
    return float(np.mean(raprs)), float(np.mean(racprs))


def run_online(policy: PolicyParams, stream: list[tuple[Clip, Query]],
               cfg: TtrlConfig, budget: int, runtime: TtrlRuntime,
               probe: list[tuple[Clip, Query]], seed: int = 0,
               step_log_path: str | Path | None = None,
               rcpr_cfg: RcprConfig | None = None) -> RunReport:
    """Drive the online loop for up to ``budget`` queries.

    Budget 0 leaves the policy untouched, so post metrics equal pre metrics
    exactly.  The step log (JSONL with a schema header) suffices to replay
    and byte-compare every update decision.
    """
    rcpr_cfg = rcpr_cfg or RcprConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x7A)))
    init = policy.copy()
    ema = EmaPolicy.from_policy(policy, rho=cfg.rho)
    pid = PidState()

    probe_clips = {c.seed: c for c, _ in probe}
    pre_acc, pre_trajs = probe_accuracy(policy, probe, cfg.caps, runtime.spec,
                                        seed=seed)
    pre_rapr, pre_racpr = _process_metrics(pre_trajs, probe_clips, runtime,
                                           rcpr_cfg)

    reports: list[StepReport] = []
    fh = open(step_log_path, "w") if step_log_path else None
    if fh:
        fh.write(json.dumps({"schema": "pixelagent.ttrl-step/1",
                             "variant": cfg.variant, "seed": seed}) + "\n")
    accepted = abstained = 0
    for step, (clip, query) in enumerate(stream[:budget]):
        policy, ema, pid, rep = ttrl_step(policy, ema, clip, query, runtime,
                                          cfg, pid, rng, step=step)
        reports.append(rep)
        accepted += rep.mask
        abstained += 1 - rep.mask
        if fh:
            fh.write(rep.to_json() + "\n")
    if fh:
        fh.close()

    post_acc, post_trajs = probe_accuracy(policy, probe, cfg.caps,
                                          runtime.spec, seed=seed)
    post_rapr, post_racpr = _process_metrics(post_trajs, probe_clips, runtime,
                                             rcpr_cfg)

    kls = np.asarray([r.kl_measured for r in reports]) if reports else np.zeros(1)
    lo, hi = cfg.corridor
    warm = min(len(kls), max(pid.warmup_steps, len(kls) // 4))
    post_warm = kls[warm:] if len(kls) > warm else kls
    corridor_frac = float(np.mean((post_warm >= lo) & (post_warm <= hi))) \
        if len(post_warm) else 0.0

    probe_states = np.concatenate([t.state_matrix() for t in pre_trajs[:32]])
    probe_answers = np.stack([t.answer_features for t in pre_trajs[:32]])
    terminal_kl = token_kl(policy, init, probe_states, probe_answers)

    return RunReport(
        variant=cfg.variant, budget=budget, processed=len(reports),
        accepted=accepted, abstained=abstained,
        pre_accuracy=pre_acc, post_accuracy=post_acc,
        kl_p50=float(np.percentile(kls, 50)) if reports else 0.0,
        kl_p95=float(np.percentile(kls, 95)) if reports else 0.0,
        corridor_frac=corridor_frac,
        terminal_kl_to_init=float(terminal_kl),
        pre_rapr=pre_rapr, post_rapr=post_rapr,
        pre_racpr=pre_racpr, post_racpr=post_racpr,
        mean_decisive_len=float(np.mean([r.decisive_len for r in reports]))
        if reports else 0.0,
        wall_seconds=time.perf_counter() - t0,
        step_log=str(step_log_path) if step_log_path else None)
