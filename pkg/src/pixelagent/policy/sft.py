"""Weighted imitation training over accepted teacher traces.

The loss is a position-weighted cross-entropy (tool-call positions carry
w_act, the answer-class position carries 1) plus a small auxiliary term on
decisive steps with four linear heads: box regression (Smooth-L1 on
normalized coordinates), glyph classification, coarse-mask Dice and
temporal binary cross-entropy.  Regularization follows fixed knobs: label
smoothing 0.05, gradient-norm cap 1.0, 5% feedback dropout on evidence
features and 2% dropout on early-action inputs (t <= 3).

Training is plain minibatch gradient descent with a fixed step so runs are
exactly reproducible.  A curriculum runs one warm-up epoch on the full
pool, bins traces into hardness tertiles by warm-up loss, then samples
medium:hard at 2:1; an epoch is accepted while the EMA-smoothed dev loss
satisfies L_next <= 1.05 * L_prev.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..world.clip import Clip
from ..world.teacher import TeacherTrace
from ..world.tools import OCR, SEG, TEMP, TRK, ViewState, apply_zoom, intersect_rect
from .features import ActionAlphabet, EvidenceState, FeatureSpec, answer_features, featurize_state
from .model import PolicyParams, _logsumexp_rows

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss diverges; carries diagnostics in args."""


@dataclass(frozen=True)
class SftConfig:
    lr: float = 0.5
    epochs: int = 6
    batch_size: int = 32
    w_act: float = 2.0
    alpha_tool: float = 0.2
    label_smoothing: float = 0.05
    grad_clip: float = 1.0
    feedback_dropout: float = 0.05
    early_dropout: float = 0.02
    early_steps: int = 3
    dev_frac: float = 0.15
    dev_ema: float = 0.5
    advance_ratio: float = 1.05
    max_epoch_retries: int = 2
    max_steps: int = 8
    seed: int = 0


@dataclass
class AuxHeads:
    """Linear heads used only by the auxiliary loss (never at inference)."""

    box_w: np.ndarray     # (4, state_dim)
    glyph_w: np.ndarray   # (alphabet, state_dim)
    mask_w: np.ndarray    # (region_bins, state_dim)
    temp_w: np.ndarray    # (frames, state_dim)

    @classmethod
    def zeros(cls, spec: FeatureSpec) -> "AuxHeads":
        d = spec.state_dim
        cfg = spec.cfg
        return cls(box_w=np.zeros((4, d)), glyph_w=np.zeros((cfg.alphabet, d)),
                   mask_w=np.zeros((cfg.n_region_bins, d)),
                   temp_w=np.zeros((cfg.frames, d)))


@dataclass
class SftExample:
    """Teacher-forced tensors for one accepted trace."""

    phi: np.ndarray            # (T+1, state_dim); last row is the ANSWER state
    actions: np.ndarray        # (T+1,) alphabet indices; last is ANSWER
    psi: np.ndarray            # (answer_dim,)
    answer: int
    decisive: np.ndarray       # (T+1,) bool; terminal is False
    box_targets: list          # per position: (4,) normalized box or None
    glyph_targets: list        # per position: int or None
    mask_targets: list         # per position: (region_bins,) bits or None
    temp_targets: list         # per position: (frames,) bits or None


def build_example(clip: Clip, trace: TeacherTrace, spec: FeatureSpec,
                  max_steps: int = 8) -> SftExample:
    cfg = clip.config
    view = ViewState.full(clip)
    evidence = EvidenceState()
    history = []
    rows, actions, decisive = [], [], []
    box_t, glyph_t, mask_t, temp_t = [], [], [], []

    for t, ((call, obs), dec) in enumerate(zip(trace.steps, trace.decisive)):
        rows.append(featurize_state(clip, view, history, trace.query, spec,
                                    evidence=evidence, step_index=t,
                                    max_steps=max_steps))
        actions.append(spec.alphabet.encode(call))
        decisive.append(dec)
        box_t.append(_box_target(clip, obs, cfg))
        glyph_t.append(_glyph_target(clip, obs))
        mask_t.append(_mask_target(clip, obs, cfg))
        temp_t.append(_temp_target(clip, obs, cfg))
        view = apply_zoom(view, obs)
        history.append((call, obs))
        evidence.update(obs, clip)

    t = len(trace.steps)
    rows.append(featurize_state(clip, view, history, trace.query, spec,
                                evidence=evidence, step_index=t,
                                max_steps=max_steps))
    actions.append(spec.alphabet.answer_index)
    decisive.append(False)
    box_t.append(None); glyph_t.append(None); mask_t.append(None); temp_t.append(None)

    return SftExample(
        phi=np.stack(rows), actions=np.asarray(actions, dtype=np.int64),
        psi=answer_features(spec, evidence, trace.query), answer=trace.answer,
        decisive=np.asarray(decisive, dtype=bool),
        box_targets=box_t, glyph_targets=glyph_t, mask_targets=mask_t,
        temp_targets=temp_t)


def _box_target(clip, obs, cfg):
    if obs.op not in (SEG, TRK) or not obs.success or obs.object_id is None:
        return None
    frame = obs.footprint.f0
    x, y, w, h = clip.objects[obs.object_id].box_at(frame)
    return np.array([x / cfg.width, y / cfg.height, w / cfg.width, h / cfg.height])


def _glyph_target(clip, obs):
    if obs.op != OCR or not obs.success or obs.object_id is None:
        return None
    text = clip.objects[obs.object_id].text
    return int(text[0]) if text else None


def _mask_target(clip, obs, cfg):
    if obs.op != SEG or not obs.success or obs.object_id is None:
        return None
    frame = obs.footprint.f0
    box = clip.objects[obs.object_id].box_at(frame)
    bits = np.zeros(cfg.n_region_bins)
    for b in range(cfg.n_region_bins):
        _, _, w, h = intersect_rect(cfg.bin_rect(b), box)
        if w > 0 and h > 0:
            bits[b] = 1.0
    return bits


def _temp_target(clip, obs, cfg):
    if obs.op != TEMP or not obs.success:
        return None
    true_iv = next((t0, t1) for label, t0, t1 in clip.events
                   if label == obs.payload["label"])
    bits = np.zeros(cfg.frames)
    bits[true_iv[0]:true_iv[1] + 1] = 1.0
    return bits


# --- loss and analytic gradient ----------------------------------------------

def _smoothed_onehot(idx: np.ndarray, k: int, ls: float) -> np.ndarray:
    out = np.full((len(idx), k), ls / k)
    out[np.arange(len(idx)), idx] += 1.0 - ls
    return out


def _ce_forward_backward(w: np.ndarray, X: np.ndarray, targets: np.ndarray,
                         temperature: float):
    """Cross-entropy of softmax(w X / T) rows against smoothed targets.

    Returns per-row losses and the gradient dL_row/dw summed over rows.
    """
    z = X @ w.T / temperature
    logp = z - _logsumexp_rows(z)
    losses = -(targets * logp).sum(axis=1)
    dz = np.exp(logp) - targets
    grad = dz.T @ X / temperature
    return losses, grad


def _smooth_l1(pred: np.ndarray, target: np.ndarray):
    r = pred - target
    a = np.abs(r)
    loss = np.where(a < 1.0, 0.5 * r * r, a - 0.5).mean()
    dloss = np.clip(r, -1.0, 1.0) / r.size
    return loss, dloss


def _dice_loss(logits: np.ndarray, target: np.ndarray, eps: float = 1e-6):
    p = 1.0 / (1.0 + np.exp(-logits))
    num = 2.0 * (p * target).sum()
    den = p.sum() + target.sum() + eps
    dice = num / den
    # d(1-dice)/dlogits through the sigmoid
    dnum = 2.0 * target
    dden = np.ones_like(p)
    ddice_dp = (dnum * den - num * dden) / (den * den)
    dloss = -ddice_dp * p * (1.0 - p)
    return 1.0 - dice, dloss


def _bce_logits(logits: np.ndarray, target: np.ndarray):
    loss = (np.maximum(logits, 0) - logits * target
            + np.log1p(np.exp(-np.abs(logits)))).mean()
    sig = 1.0 / (1.0 + np.exp(-logits))
    return loss, (sig - target) / logits.size


def sft_loss_and_grad(params: PolicyParams, heads: AuxHeads,
                      examples: list[SftExample], cfg: SftConfig,
                      spec: FeatureSpec,
                      dropout_rng: np.random.Generator | None = None):
    """Weighted imitation loss with auxiliary heads, plus analytic gradients.

    With ``dropout_rng`` set, feedback dropout hides the evidence block and
    early-action dropout hides the last-action block for steps t <= 3;
    without it the loss is deterministic (used for dev eval and gradient
    checks).
    """
    phi_rows, act_idx = [], []
    aux_rows = {"box": [], "glyph": [], "mask": [], "temp": []}
    aux_tgt = {"box": [], "glyph": [], "mask": [], "temp": []}
    psi_rows, ans_idx = [], []
    per_trace_pos = []

    ev_sl = spec.evidence_slice
    la_sl = spec.last_action_slice
    ev_ans_sl = spec.answer_evidence_slice

    for ex in examples:
        phi = ex.phi
        psi = ex.psi
        if dropout_rng is not None:
            phi = phi.copy()
            drop = dropout_rng.random(len(phi)) < cfg.feedback_dropout
            if drop.any():
                phi[drop, ev_sl] = 0.0
            early = np.arange(len(phi)) <= cfg.early_steps
            drop_a = early & (dropout_rng.random(len(phi)) < cfg.early_dropout)
            if drop_a.any():
                phi[drop_a, la_sl] = 0.0
            if dropout_rng.random() < cfg.feedback_dropout:
                psi = psi.copy()
                psi[ev_ans_sl] = 0.0
        start = len(phi_rows)
        phi_rows.extend(phi)
        act_idx.extend(ex.actions)
        per_trace_pos.append((start, len(phi_rows)))
        psi_rows.append(psi)
        ans_idx.append(ex.answer)
        for t in np.flatnonzero(ex.decisive):
            row = phi[t]
            if ex.box_targets[t] is not None:
                aux_rows["box"].append(row); aux_tgt["box"].append(ex.box_targets[t])
            if ex.glyph_targets[t] is not None:
                aux_rows["glyph"].append(row); aux_tgt["glyph"].append(ex.glyph_targets[t])
            if ex.mask_targets[t] is not None:
                aux_rows["mask"].append(row); aux_tgt["mask"].append(ex.mask_targets[t])
            if ex.temp_targets[t] is not None:
                aux_rows["temp"].append(row); aux_tgt["temp"].append(ex.temp_targets[t])

    Phi = np.stack(phi_rows)
    A = np.asarray(act_idx)
    Psi = np.stack(psi_rows)
    Y = np.asarray(ans_idx)

    n_act_classes = params.action_w.shape[0]
    n_ans_classes = params.answer_w.shape[0]
    act_targets = _smoothed_onehot(A, n_act_classes, cfg.label_smoothing)
    ans_targets = _smoothed_onehot(Y, n_ans_classes, cfg.label_smoothing)

    act_losses, g_act = _ce_forward_backward(params.action_w, Phi, act_targets,
                                             params.temperature)
    ans_losses, g_ans = _ce_forward_backward(params.answer_w, Psi, ans_targets,
                                             params.temperature)
    weight_total = cfg.w_act * len(act_losses) + len(ans_losses)
    loss = (cfg.w_act * act_losses.sum() + ans_losses.sum()) / weight_total
    grads = {
        "action_w": cfg.w_act * g_act / weight_total,
        "answer_w": g_ans / weight_total,
        "box_w": np.zeros_like(heads.box_w),
        "glyph_w": np.zeros_like(heads.glyph_w),
        "mask_w": np.zeros_like(heads.mask_w),
        "temp_w": np.zeros_like(heads.temp_w),
    }

    n_dec = sum(len(v) for v in aux_rows.values())
    n_dec_steps = sum(int(ex.decisive.sum()) for ex in examples)
    if n_dec_steps > 0 and cfg.alpha_tool > 0:
        aux_total = 0.0
        scale = cfg.alpha_tool / n_dec_steps
        if aux_rows["box"]:
            X = np.stack(aux_rows["box"])
            preds = X @ heads.box_w.T
            for i, tgt in enumerate(aux_tgt["box"]):
                l, dl = _smooth_l1(preds[i], tgt)
                aux_total += l
                grads["box_w"] += scale * np.outer(dl, X[i])
        if aux_rows["glyph"]:
            X = np.stack(aux_rows["glyph"])
            tgts = _smoothed_onehot(np.asarray(aux_tgt["glyph"]),
                                    heads.glyph_w.shape[0], 0.0)
            losses, g = _ce_forward_backward(heads.glyph_w, X, tgts, 1.0)
            aux_total += losses.sum()
            grads["glyph_w"] += scale * g
        if aux_rows["mask"]:
            X = np.stack(aux_rows["mask"])
            logits = X @ heads.mask_w.T
            for i, tgt in enumerate(aux_tgt["mask"]):
                l, dl = _dice_loss(logits[i], tgt)
                aux_total += l
                grads["mask_w"] += scale * np.outer(dl, X[i])
        if aux_rows["temp"]:
            X = np.stack(aux_rows["temp"])
            logits = X @ heads.temp_w.T
            for i, tgt in enumerate(aux_tgt["temp"]):
                l, dl = _bce_logits(logits[i], tgt)
                aux_total += l
                grads["temp_w"] += scale * np.outer(dl, X[i])
        loss += cfg.alpha_tool * aux_total / n_dec_steps

    per_trace = np.array([
        (cfg.w_act * act_losses[s:e].sum() + ans_losses[i])
        / (cfg.w_act * (e - s) + 1)
        for i, (s, e) in enumerate(per_trace_pos)
    ])
    return float(loss), grads, per_trace


def clip_gradients(grads: dict, cap: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if cap > 0 and total > cap:
        scale = cap / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TokenStats:
    """Running mean/variance of per-step log-probs and entropies, with
    identity per-tool scalers as downstream hooks."""

    logp_mean: float = 0.0
    logp_var: float = 1.0
    entropy_mean: float = 0.0
    entropy_var: float = 1.0
    tool_scalers: dict = field(default_factory=dict)

    def scaler(self, op: str) -> float:
        return self.tool_scalers.get(op, 1.0)


@dataclass
class SftResult:
    params: PolicyParams
    heads: AuxHeads
    train_losses: list[float]
    dev_losses: list[float]
    hardness_bins: dict
    token_stats: TokenStats


def sft_train(pool: list[tuple[Clip, TeacherTrace]], cfg: SftConfig,
              spec: FeatureSpec) -> SftResult:
    """Train the policy on an accepted teacher pool.

    Raises TrainingError (with epoch/batch diagnostics) when the loss goes
    non-finite.
    """
    if not pool:
        raise TrainingError("empty teacher pool")
    rng = np.random.default_rng(cfg.seed)
    examples = [build_example(clip, tr, spec, cfg.max_steps) for clip, tr in pool]

    n_dev = max(1, int(len(examples) * cfg.dev_frac)) if len(examples) > 3 else 0
    order = rng.permutation(len(examples))
    dev = [examples[i] for i in order[:n_dev]]
    train = [examples[i] for i in order[n_dev:]]

    params = PolicyParams.zeros(spec)
    heads = AuxHeads.zeros(spec)
    train_losses: list[float] = []
    dev_losses: list[float] = []

    def run_epoch(pool_idx: np.ndarray) -> None:
        for b0 in range(0, len(pool_idx), cfg.batch_size):
            batch = [train[i] for i in pool_idx[b0:b0 + cfg.batch_size]]
            loss, grads, _ = sft_loss_and_grad(params, heads, batch, cfg, spec,
                                               dropout_rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite SFT loss at batch {b0 // cfg.batch_size}",
                    {"loss": loss, "epoch": len(train_losses)})
            clip_gradients(grads, cfg.grad_clip)
            params.action_w -= cfg.lr * grads["action_w"]
            params.answer_w -= cfg.lr * grads["answer_w"]
            heads.box_w -= cfg.lr * grads["box_w"]
            heads.glyph_w -= cfg.lr * grads["glyph_w"]
            heads.mask_w -= cfg.lr * grads["mask_w"]
            heads.temp_w -= cfg.lr * grads["temp_w"]
            train_losses.append(loss)

    def dev_loss() -> float:
        src = dev if dev else train
        loss, _, _ = sft_loss_and_grad(params, heads, src, cfg, spec)
        return loss

    def hardness_bins() -> tuple[np.ndarray, np.ndarray, dict]:
        """Tertile bins of per-trace loss under the live model.

        Re-binned every epoch: traces the model starts forgetting climb back
        into the sampled bins instead of being starved forever.
        """
        _, _, per_trace = sft_loss_and_grad(params, heads, train, cfg, spec)
        if len(train) < 3:
            idx = np.arange(len(train))
            return idx, idx, {"tertiles": None, "n_medium": len(train),
                              "n_hard": len(train)}
        tertiles = np.quantile(per_trace, [1 / 3, 2 / 3])
        medium = np.flatnonzero((per_trace > tertiles[0]) & (per_trace <= tertiles[1]))
        hard = np.flatnonzero(per_trace > tertiles[1])
        if medium.size == 0:
            medium = np.arange(len(train))
        if hard.size == 0:
            hard = medium
        return medium, hard, {"tertiles": tertiles.tolist(),
                              "n_medium": int(medium.size),
                              "n_hard": int(hard.size)}

    # warm-up on the full pool
    run_epoch(rng.permutation(len(train)))
    medium, hard, hardness = hardness_bins()

    ema = dev_loss()
    dev_losses.append(ema)

    for epoch in range(1, cfg.epochs):
        snapshot = (params.copy(), AuxHeads(heads.box_w.copy(), heads.glyph_w.copy(),
                                            heads.mask_w.copy(), heads.temp_w.copy()))
        retries = 0
        while True:
            n = len(train)
            pick = rng.random(n)
            idx = np.where(pick < 2 / 3, rng.choice(medium, size=n),
                           rng.choice(hard, size=n))
            run_epoch(idx)
            new_ema = cfg.dev_ema * ema + (1 - cfg.dev_ema) * dev_loss()
            if new_ema <= cfg.advance_ratio * ema or retries >= cfg.max_epoch_retries:
                if new_ema > cfg.advance_ratio * ema:
                    log.warning("sft epoch %d accepted after %d retries "
                                "despite dev loss %.4f > %.4f", epoch, retries,
                                new_ema, cfg.advance_ratio * ema)
                ema = new_ema
                dev_losses.append(ema)
                medium, hard, hardness = hardness_bins()
                break
            params.action_w[:] = snapshot[0].action_w
            params.answer_w[:] = snapshot[0].answer_w
            heads.box_w[:] = snapshot[1].box_w
            heads.glyph_w[:] = snapshot[1].glyph_w
            heads.mask_w[:] = snapshot[1].mask_w
            heads.temp_w[:] = snapshot[1].temp_w
            retries += 1
            log.info("sft epoch %d retry %d (dev ema %.4f)", epoch, retries, ema)

    stats = _token_stats(params, train, spec)
    return SftResult(params=params, heads=heads, train_losses=train_losses,
                     dev_losses=dev_losses, hardness_bins=hardness,
                     token_stats=stats)


def _token_stats(params: PolicyParams, examples: list[SftExample],
                 spec: FeatureSpec) -> TokenStats:
    logps, ents = [], []
    for ex in examples:
        z = ex.phi @ params.action_w.T / params.temperature
        logp = z - _logsumexp_rows(z)
        p = np.exp(logp)
        logps.extend(logp[np.arange(len(ex.actions)), ex.actions])
        ents.extend(-(p * logp).sum(axis=1))
    logps = np.asarray(logps)
    ents = np.asarray(ents)
    return TokenStats(logp_mean=float(logps.mean()), logp_var=float(logps.var()),
                      entropy_mean=float(ents.mean()), entropy_var=float(ents.var()),
                      tool_scalers={})
